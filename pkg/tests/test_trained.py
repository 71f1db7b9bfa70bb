"""Properties of the desk-scale overfit model (shared session fixture)."""

import json

import numpy as np

from deskstereo import autograd as ag
from deskstereo.cli import main, write_dataset
from deskstereo.evaluation import evaluate
from deskstereo.fileio import read_pfm, write_ppm
from deskstereo.training import held_out_samples, training_pool


def test_hidden_state_exceeds_unit_range(overfit_model):
    s = held_out_samples(overfit_model.config, 1)[0]
    with ag.no_grad():
        pred = overfit_model(ag.Tensor(s.left[None]), ag.Tensor(s.right[None]), 4)
    assert np.abs(pred.refined.state.hidden[0].data).max() > 1.0


def test_refinement_improves_on_held_out_samples(overfit_model):
    samples = held_out_samples(overfit_model.config, 6)
    first = evaluate(overfit_model, samples, 1, [1.0]).epe_all
    last = evaluate(overfit_model, samples, overfit_model.config.iterations_train, [1.0]).epe_all
    assert last <= first


def test_doubling_iterations_costs_at_most_five_percent(overfit_model):
    pool = training_pool(overfit_model.config)
    e = {k: evaluate(overfit_model, pool, k, [1.0]).epe_all for k in (4, 8, 16, 32)}
    for k in (4, 8, 16):
        assert e[2 * k] <= e[k] * 1.05, e


def test_cli_eval_more_iterations_not_worse(overfit_run, tmp_path, capsys):
    trainer, _, ckpt, _ = overfit_run
    write_dataset(tmp_path / "d", training_pool(trainer.config))
    aggs = {}
    for k in (1, 16):
        report = tmp_path / f"r{k}.jsonl"
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(tmp_path / "d"), "--iters", str(k),
                     "--report", str(report)]) == 0
        aggs[k] = json.loads(report.read_text().splitlines()[-1])
    assert aggs[16]["epe_all"] <= aggs[1]["epe_all"]


def test_cli_infer_identical_images_gives_near_zero_disparity(overfit_run, tmp_path):
    trainer, _, ckpt, _ = overfit_run
    s = held_out_samples(trainer.config, 1)[0]
    write_ppm(s.left, tmp_path / "same.ppm")
    assert main(["infer", "--ckpt", str(ckpt), "--left", str(tmp_path / "same.ppm"),
                 "--right", str(tmp_path / "same.ppm"), "--out", str(tmp_path / "d.pfm")]) == 0
    disp = read_pfm(tmp_path / "d.pfm")
    assert disp.shape == (1,) + s.left.shape[1:]
    assert np.median(np.abs(disp)) < 1.0
