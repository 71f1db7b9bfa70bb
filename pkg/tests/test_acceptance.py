"""Acceptance criteria 1-9, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; criteria 5-7 share one
desk-scale training run (about 20 minutes on one CPU core).
"""

import time

import numpy as np
import pytest

from deskstereo import autograd as ag
from deskstereo.aif import AffineStats, fuse, normalize_affine, project, warp_right
from deskstereo.cli import main
from deskstereo.config import Config
from deskstereo.cost_volume import build_allpair_corr, build_group_corr, build_pyramid, lookup, regress_init
from deskstereo.evaluation import evaluate
from deskstereo.features import oracle_relative_depth
from deskstereo.fileio import parse_pfm, read_pfm, write_pfm
from deskstereo.model import StereoModel
from deskstereo.pru import PromptRecurrentUnit, convex_upsample, gate_blend, upsample_full
from deskstereo.synthetic import generate
from deskstereo.training import (
    held_out_samples,
    load_model,
    save_checkpoint,
    sequence_loss,
    training_pool,
    valid_mask,
)

import oracles
from conftest import OVERFIT, rand64, t64, tiny_config


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    worst_interp = 0.0
    exact = True
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        h, w = rng.integers(2, 9, 2)
        c, groups, dmax = 8, int(rng.choice([1, 2, 4, 8])), int(rng.integers(1, w + 1))
        fl = rng.integers(-3, 4, (1, c, h, w)).astype(np.float64)
        fr = rng.integers(-3, 4, (1, c, h, w)).astype(np.float64)
        v_g = build_group_corr(t64(fl, False), t64(fr, False), groups, dmax).data[0]
        exact &= np.array_equal(v_g, oracles.group_corr(fl[0], fr[0], groups, dmax))
        v_a = build_allpair_corr(t64(fl, False), t64(fr, False)).data[0]
        exact &= np.array_equal(v_a, oracles.allpair_corr(fl[0], fr[0]))

        geo = rng.integers(-4, 5, (1, 8, h, w)).astype(np.float64)
        allp = rng.integers(-4, 5, (1, 8, h, w)).astype(np.float64)
        geo_pyr, allp_pyr = build_pyramid(t64(geo, False), 3), build_pyramid(t64(allp, False), 3)
        for got, ref in zip(geo_pyr, oracles.pyramid(geo[0], 3)):
            exact &= np.array_equal(got.data[0], ref)
        # integer disparities at level 0 read table entries exactly
        d_int = rng.integers(-2, 10, (h, w)).astype(np.float64)
        out = lookup(geo_pyr[:1], allp_pyr[:1], t64(d_int[None, None], False), 1).data[0]
        exact &= np.array_equal(out, oracles.lookup([geo[0]], [allp[0]], d_int, 1))
        d = rng.uniform(-2, 10, (h, w))
        out = lookup(geo_pyr, allp_pyr, t64(d[None, None], False), 2).data[0]
        ref = oracles.lookup([p.data[0] for p in geo_pyr], [p.data[0] for p in allp_pyr], d, 2)
        worst_interp = max(worst_interp, float(np.abs(out - ref).max()))
    seconds = time.perf_counter() - t0
    ok = exact and worst_interp <= 1e-6 and seconds < 10
    verdict(1, ok, f"integer cases exact={exact}, interpolated max err={worst_interp:.2e}, {seconds:.1f}s")


# -- 2 ---------------------------------------------------------------------


def test_criterion_2_affine_invariance(verdict):
    worst_inv = worst_post = worst_trip = 0.0
    for i in range(20):
        rng = np.random.default_rng(2000 + i)
        d = rng.uniform(0, 30, (1, 1, 8, 12)) + rng.normal(0, 3, (1, 1, 8, 12))
        base, _ = normalize_affine(t64(d, False))
        flat = base.data.ravel()
        worst_post = max(worst_post, abs(float(np.median(flat))), abs(float(np.abs(flat).mean()) - 1.0))
        for a in (0.5, 2.0, 10.0):
            for b in (-5.0, 0.0, 7.0):
                moved, _ = normalize_affine(t64(a * d + b, False))
                worst_inv = max(worst_inv, float(np.abs(moved.data - base.data).max()))
        stats = AffineStats(t64(np.array([[rng.uniform(-5, 5), rng.uniform(0.5, 5)]]), False))
        back, _ = normalize_affine(project(base, stats))
        worst_trip = max(worst_trip, float(np.abs(back.data - base.data).max()))
    ok = max(worst_inv, worst_post, worst_trip) <= 1e-5
    verdict(2, ok, f"invariance {worst_inv:.1e}, post-conditions {worst_post:.1e}, round trip {worst_trip:.1e}")


# -- 3 ---------------------------------------------------------------------


def _op_cases(rng):
    def r(*shape, scale=1.0):
        return rand64(rng, *shape, scale=scale)

    w4 = rng.standard_normal((1, 2, 4, 6))
    pos = lambda *s: t64(rng.uniform(0.5, 2.0, s))  # noqa: E731
    off_int = lambda *s: t64(np.floor(rng.uniform(0, 4, s)) + rng.uniform(0.2, 0.8, s))  # noqa: E731

    def weighted(fn, shape):
        w = rng.standard_normal(shape)
        return lambda *xs: ag.sum(ag.mul(fn(*xs), w))

    cases = {
        "add": (weighted(ag.add, (2, 3)), [r(2, 3), r(2, 3)]),
        "sub": (weighted(ag.sub, (2, 3)), [r(2, 3), r(2, 3)]),
        "mul": (weighted(ag.mul, (2, 3)), [r(2, 3), r(2, 3)]),
        "mul_scalar": (weighted(ag.mul, (2, 3)), [r(2, 3), t64(rng.standard_normal())]),
        "div": (weighted(ag.div, (2, 3)), [r(2, 3), pos(2, 3)]),
        "scale": (weighted(lambda x: ag.scale(x, -1.7), (2, 3)), [r(2, 3)]),
        "neg": (weighted(ag.neg, (2, 3)), [r(2, 3)]),
        "sigmoid": (weighted(ag.sigmoid, (2, 3)), [r(2, 3)]),
        "relu": (weighted(ag.relu, (2, 3)), [t64(rng.choice([-1, 1], (2, 3)) * rng.uniform(0.1, 1, (2, 3)))]),
        "abs": (weighted(ag.abs, (2, 3)), [t64(rng.choice([-1, 1], (2, 3)) * rng.uniform(0.1, 1, (2, 3)))]),
        "exp": (weighted(ag.exp, (2, 3)), [r(2, 3)]),
        "smooth_l1": (weighted(lambda x: ag.smooth_l1(x, 1.0), (6,)),
                      [t64([-2.5, -0.4, 0.3, 0.9, 1.6, 3.0])]),
        "sum_axis": (weighted(lambda x: ag.sum(x, axis=1), (2, 4)), [r(2, 3, 4)]),
        "mean": (weighted(lambda x: ag.mean(x, axis=0, keepdims=True), (1, 3)), [r(4, 3)]),
        "softmax": (weighted(lambda x: ag.softmax(x, 1), (2, 5)), [r(2, 5)]),
        "concat": (weighted(lambda a, b: ag.concat([a, b], 1), (2, 5)), [r(2, 2), r(2, 3)]),
        "slice_axis": (weighted(lambda x: ag.slice_axis(x, 1, 1, 3), (2, 2)), [r(2, 4)]),
        "reshape": (weighted(lambda x: ag.reshape(x, (3, 2)), (3, 2)), [r(2, 3)]),
        "conv2d": (weighted(lambda x, k, b: ag.conv2d(x, k, b, 2, 1), (1, 2, 3, 3)), [r(1, 3, 5, 6), r(2, 3, 3, 3), r(2)]),
        "conv3d": (weighted(lambda x, k, b: ag.conv3d(x, k, b, 1, 1), (1, 2, 3, 4, 4)),
                   [r(1, 2, 3, 4, 4), r(2, 2, 3, 3, 3), r(2)]),
        "avgpool_down2": (weighted(lambda x: ag.resample(x, "avgpool_down2"), (1, 2, 2, 3)), [r(1, 2, 4, 6)]),
        "bilinear_up2": (weighted(lambda x: ag.resample(x, "bilinear_up2"), (1, 2, 4, 6)), [r(1, 2, 2, 3)]),
        "bilinear_up4": (weighted(lambda x: ag.resample(x, "bilinear_up4"), (1, 1, 8, 12)), [r(1, 1, 2, 3)]),
        "avgpool_axis": (weighted(lambda x: ag.avgpool_axis(x, 1), (1, 3, 2, 2)), [r(1, 6, 2, 2)]),
        "gather_horizontal": (lambda x, c: ag.sum(ag.mul(ag.gather_horizontal(x, c), w4)),
                              [r(1, 2, 4, 6), off_int(1, 4, 6)]),
        "linear_sample": (weighted(lambda v, c: ag.linear_sample(v, c, [-1.0, 0.0, 1.0]), (1, 3, 3, 4)),
                          [r(1, 6, 3, 4), off_int(1, 1, 3, 4)]),
        "group_corr": (weighted(lambda a, b: build_group_corr(a, b, 2, 3), (1, 2, 3, 3, 5)), [r(1, 4, 3, 5), r(1, 4, 3, 5)]),
        "allpair_corr": (weighted(build_allpair_corr, (1, 5, 3, 5)), [r(1, 4, 3, 5), r(1, 4, 3, 5)]),
        "pyramid_lookup": (weighted(lambda g, a, d: lookup(build_pyramid(g, 2), build_pyramid(a, 2), d, 1), (1, 12, 3, 8)),
                           [r(1, 8, 3, 8), r(1, 8, 3, 8), off_int(1, 1, 3, 8)]),
        "soft_argmax": (weighted(regress_init, (1, 1, 3, 4)), [r(1, 2, 5, 3, 4)]),
        "normalize_affine": (weighted(lambda d: normalize_affine(d)[0], (2, 1, 3, 3)), [r(2, 1, 3, 3, scale=3)]),
        "project": (weighted(lambda d, s: project(d, AffineStats(s)), (2, 1, 2, 2)),
                    [r(2, 1, 2, 2), t64(rng.uniform(0.5, 2, (2, 2)))]),
        "warp_right": (weighted(warp_right, (1, 2, 3, 8)), [r(1, 2, 3, 8), off_int(1, 1, 3, 8)]),
        "fuse": (weighted(fuse, (1, 1, 2, 3)), [r(1, 1, 2, 3), r(1, 1, 2, 3), t64(rng.uniform(0, 1, (1, 1, 2, 3)))]),
        "gate_blend": (weighted(gate_blend, (2, 3)), [t64(rng.uniform(0, 1, (2, 3))), r(2, 3), r(2, 3)]),
        "upsample_full": (weighted(upsample_full, (1, 1, 8, 12)), [r(1, 1, 2, 3)]),
        "convex_upsample": (weighted(convex_upsample, (1, 1, 8, 12)), [r(1, 1, 2, 3), r(1, 144, 2, 3)]),
    }
    gt = rng.uniform(0, 4, (1, 1, 2, 3))
    cases["sequence_loss"] = (
        lambda a, b, c: sequence_loss(a, [b, c], gt, np.ones_like(gt, bool), 0.9),
        [t64(gt + rng.choice([-1, 1], gt.shape) * rng.uniform(0.2, 3, gt.shape)),
         t64(gt + rng.choice([-1, 1], gt.shape) * rng.uniform(0.2, 3, gt.shape)),
         t64(gt + rng.choice([-1, 1], gt.shape) * rng.uniform(0.2, 3, gt.shape))],
    )
    return cases


def _end_to_end_error():
    s = generate(32, 32, 2, 6.0, 11)
    model = StereoModel(tiny_config()).to(np.float64)
    rng = np.random.default_rng(1)
    # zero-initialized biases put ReLUs exactly on their kink in the zero-padded volume region
    for name, p in model.trainable():
        if name.endswith("bias"):
            p.data += rng.normal(0, 0.01, p.shape)
    left, right = ag.Tensor(s.left[None].astype(np.float64)), ag.Tensor(s.right[None].astype(np.float64))
    gt = s.disparity[None].astype(np.float64)
    mask = valid_mask(gt)

    def loss(*params):
        p = model(left, right, 1)
        return sequence_loss(p.d0_full(), p.iterates_full(), gt, mask, 0.9)

    params = [p for _, p in model.trainable()]
    rep = ag.check_gradients(loss, params, epsilon=1e-6, max_entries=3, rng=np.random.default_rng(0))
    return rep


def test_criterion_3_gradient_suite(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    errors = {}
    for name, (fn, inputs) in _op_cases(rng).items():
        errors[name] = ag.check_gradients(fn, inputs, epsilon=1e-3 if name != "normalize_affine" else 1e-5).max_rel_error
    worst_op = max(errors, key=errors.get)
    e2e = _end_to_end_error()
    seconds = time.perf_counter() - t0
    ok = errors[worst_op] < 1e-3 and e2e.max_rel_error < 1e-2 and seconds < 300
    verdict(3, ok, f"{len(errors)} ops, worst {worst_op}={errors[worst_op]:.1e}; end-to-end "
                   f"{e2e.max_rel_error:.1e} over {e2e.checked} entries; {seconds:.0f}s")


# -- 4 ---------------------------------------------------------------------


def _pru_fixture(seed):
    rng = np.random.default_rng(seed)
    feat = (4, 6, 8, 10)
    pru = PromptRecurrentUnit(feat, 12, 5, rng, hidden=6, prompt=4).to(np.float64)
    fl = [rand64(rng, 1, c, 8 >> i, 16 >> i, grad=False) for i, c in enumerate(feat)]
    fr = [rand64(rng, 1, c, 8 >> i, 16 >> i, grad=False) for i, c in enumerate(feat)]
    d = t64(rng.uniform(0, 4, (1, 1, 8, 16)), False)
    state = pru.init_hidden(fl, fr, d)
    return pru, state, rand64(rng, 1, 4, 8, 16, grad=False), rand64(rng, 1, 4, 8, 16, grad=False), d


def test_criterion_4_structural_checks(verdict):
    results = {}
    for bias, name in ((-1000.0, "z=0 preserve"), (1000.0, "z=1 replace")):
        pru, state, p_s, p_m, d = _pru_fixture(4)
        for g in pru.gates:
            g.weight.data[...] = 0
            g.bias.data[...] = bias
        trace = {}
        new, _ = pru.update(state, p_s, p_m, d, trace)
        ref = state.hidden if bias < 0 else [trace[f"candidate_{i}"] for i in range(4)]
        results[name] = all(np.array_equal(a.data, b.data) for a, b in zip(new.hidden, ref))

    pru, state, p_s, p_m, d = _pru_fixture(5)
    zero = t64(np.zeros(p_s.shape), False)
    ta, tb = {}, {}
    pru.update(state, p_s, p_m, d, ta)
    pru.update(state, zero, zero, d, tb)
    results["prompt locality"] = all(
        np.array_equal(ta[f"candidate_pre_prompt_{i}"].data, tb[f"candidate_pre_prompt_{i}"].data) for i in (1, 2, 3)
    )

    rng = np.random.default_rng(6)
    left = ag.Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
    right = ag.Tensor(rng.random((1, 3, 32, 32)).astype(np.float32))
    with ag.no_grad():
        a = StereoModel(tiny_config(zero_init_prompt_conv=True))(left, right, 2)
        b = StereoModel(tiny_config(zero_init_prompt_conv=True, prompt_injection=False))(left, right, 2)
    results["zero-init toggle"] = all(
        x.data.tobytes() == y.data.tobytes() for x, y in zip(a.iterates_full(), b.iterates_full())
    )
    verdict(4, all(results.values()), ", ".join(f"{k}: {'ok' if v else 'BROKEN'}" for k, v in results.items()))


# -- 5-7 -------------------------------------------------------------------


def test_criterion_5_desk_scale_overfit(verdict, overfit_run):
    trainer, records, _, seconds = overfit_run
    cfg = trainer.config
    report = evaluate(trainer.model, training_pool(cfg), cfg.iterations_train, [1.0])
    ok = len(records) <= 600 and report.epe_all < 0.5 and report.bad_all[0] < 5.0 and seconds < 1800
    verdict(5, ok, f"{len(records)} steps in {seconds:.0f}s; train EPE {report.epe_all:.3f} px, "
                   f"Bad1.0 {report.bad_all[0]:.2f}% at {cfg.iterations_train} iterations")


def test_criterion_6_iteration_count(verdict, overfit_run):
    trainer = overfit_run[0]
    pool = training_pool(trainer.config)
    e = {k: evaluate(trainer.model, pool, k, [1.0]).epe_all for k in (4, 8, 16, 32)}
    ok = e[16] <= e[4] and e[32] <= e[8] * 1.05
    verdict(6, ok, "EPE by iterations: " + ", ".join(f"{k}: {v:.3f}" for k, v in e.items()))


def test_criterion_7_aif_utility(verdict, overfit_run):
    trainer = overfit_run[0]
    cfg = trainer.config
    wins = 0
    samples = held_out_samples(cfg, 20)
    for s in samples:
        rel = oracle_relative_depth(s.disparity, s.seed, 0.1)[None]
        with ag.no_grad():
            p = trainer.model(ag.Tensor(s.left[None]), ag.Tensor(s.right[None]), 1, rel)
        gt = s.disparity[None]
        mask = valid_mask(gt)
        e0 = np.abs(p.d0_full().data - gt)[mask].mean()
        ef = np.abs(p.fused_full().data - gt)[mask].mean()
        wins += bool(ef <= e0)
    verdict(7, wins >= 16, f"fused init no worse than soft-argmax init on {wins}/20 held-out samples")


# -- 8 ---------------------------------------------------------------------


def test_criterion_8_loss_arithmetic(verdict):
    gt = np.zeros((1, 1, 2, 2))
    loss = sequence_loss(t64(gt), [t64(gt + 1.0), t64(gt - 1.0)], gt, np.ones_like(gt, bool), 0.9).item()
    ratios = []
    for k in (2, 4, 8, 16):
        iterates = [t64(gt + 0.5) for _ in range(k)]
        ag.backward(sequence_loss(t64(gt), iterates, gt, np.ones_like(gt, bool), 0.9))
        ratios.append(abs(iterates[0].grad.sum() / iterates[-1].grad.sum() - 0.9 ** (k - 1)))
    ok = loss == 1.9 and max(ratios) <= 1e-6
    verdict(8, ok, f"hand case {loss!r}, worst weight-ratio deviation {max(ratios):.1e}")


# -- 9 ---------------------------------------------------------------------


def test_criterion_9_io_round_trips(verdict, tmp_path):
    rng = np.random.default_rng(9)
    pfm_ok = True
    for shape in [(1, 5, 7), (1, 4, 4), (1, 1, 1)]:
        field = rng.standard_normal(shape).astype(np.float32) * 100
        field.ravel()[0] = -0.0
        write_pfm(field, tmp_path / "f.pfm")
        back = read_pfm(tmp_path / "f.pfm")
        pfm_ok &= back.dtype == np.float32 and back.tobytes() == field.tobytes()
        pfm_ok &= parse_pfm((tmp_path / "f.pfm").read_bytes()).tobytes() == field.tobytes()

    model = StereoModel(tiny_config(model_seed=9))
    save_checkpoint(tmp_path / "a.ckpt", model, model.config, 7)
    loaded, ckpt = load_model(tmp_path / "a.ckpt")
    ckpt_ok = ckpt.step == 7 and ckpt.config == model.config and all(
        a.data.tobytes() == b.data.tobytes()
        for (_, a), (_, b) in zip(model.named_parameters(), loaded.named_parameters()))
    save_checkpoint(tmp_path / "b.ckpt", loaded, ckpt.config, 7)
    ckpt_ok &= (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    outputs = []
    for run in ("r1", "r2"):
        d = tmp_path / run
        main(["gen", "--out", str(d / "data"), "--count", "1", "--width", "64", "--height", "32", "--seed", "3"])
        main(["train", "--set", "crop_h=32", "--set", "crop_w=64", "--set", "hidden_channels=8",
              "--set", "prompt_channels=8", "--set", "max_disp=16", "--set", "groups=4", "--set", "steps=3",
              "--set", "batch=1", "--set", "iterations_train=2", "--out", str(d / "m.ckpt")])
        main(["infer", "--ckpt", str(d / "m.ckpt"), "--left", str(d / "data/00000_left.ppm"),
              "--right", str(d / "data/00000_right.ppm"), "--out", str(d / "out.pfm"), "--iters", "2"])
        outputs.append([(d / n).read_bytes() for n in ("data/00000_left.ppm", "data/00000_disp.pfm", "m.ckpt", "out.pfm")])
    cli_ok = outputs[0] == outputs[1]
    verdict(9, pfm_ok and ckpt_ok and cli_ok, f"PFM bit-exact={pfm_ok}, checkpoint bit-exact={ckpt_ok}, "
                                              f"CLI gen/train/infer deterministic={cli_ok}")


def test_overfit_settings_are_the_documented_ones():
    cfg = Config(**OVERFIT)
    assert cfg.train_samples == 8 and cfg.steps <= 600 and (cfg.crop_h, cfg.crop_w) == (64, 128)
