"""Sequence loss, AdamW, one-cycle schedule, the training loop and checkpoints."""

from __future__ import annotations

import json
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import Config
from .errors import ConfigError, ContractError, DataError, FormatError, TrainingError
from .features import oracle_relative_depth
from .model import StereoModel
from .synthetic import StereoSample, generate

CHECKPOINT_MAGIC = b"DSCK"
CHECKPOINT_VERSION = 1


# -- loss ------------------------------------------------------------------


def valid_mask(d_gt: np.ndarray) -> np.ndarray:
    """0 <= d < W, per pixel."""
    return (d_gt >= 0) & (d_gt < d_gt.shape[-1]) & np.isfinite(d_gt)


def _masked_mean(x: Tensor, mask: np.ndarray, count: int) -> Tensor:
    return ag.scale(ag.sum(ag.mul(x, mask.astype(x.dtype))), 1.0 / count)


def sequence_loss(d0_full: Tensor, iterates_full: list[Tensor], d_gt: np.ndarray, mask: np.ndarray,
                  gamma: float = 0.9) -> Tensor:
    """smoothL1(d0) + sum_k gamma^(K-k) * L1(d_k), each a mean over ``mask``."""
    mask = np.broadcast_to(mask, d0_full.shape)
    count = int(mask.sum())
    if count == 0:
        raise DataError("loss: valid mask is empty")
    gt = np.broadcast_to(np.asarray(d_gt, dtype=d0_full.dtype), d0_full.shape)
    total = _masked_mean(ag.smooth_l1(ag.sub(d0_full, gt), 1.0), mask, count)
    k_total = len(iterates_full)
    for k, d in enumerate(iterates_full, 1):
        term = _masked_mean(ag.abs(ag.sub(d, gt)), mask, count)
        total = ag.add(total, ag.scale(term, gamma ** (k_total - k)))
    return total


# -- optimizer -------------------------------------------------------------


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params, state: AdamWState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 1e-5) -> None:
    """In-place decoupled-weight-decay Adam update of ``(name, Tensor)`` pairs."""
    b1, b2 = betas
    grads = []
    for name, p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name}")
        grads.append(g)
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for (name, p), g in zip(params, grads):
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if weight_decay:
            p.data *= p.dtype.type(1.0 - lr * weight_decay)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)


def one_cycle_lr(step: int, total_steps: int, lr_max: float) -> float:
    """Linear warmup over 30% of steps from lr_max/25, cosine down to lr_max/1e4 at the last step."""
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps})")
    lo, floor = lr_max / 25.0, lr_max / 1e4
    warm = 0.3 * total_steps
    if step <= warm:
        return lo + (lr_max - lo) * step / warm
    span = total_steps - 1 - warm
    if span <= 0:
        return floor
    p = min((step - warm) / span, 1.0)
    return floor + (lr_max - floor) * 0.5 * (1.0 + math.cos(math.pi * p))


def clip_gradients(params, max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    sq = sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / (norm + 1e-12)
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(s)
    return norm


# -- data ------------------------------------------------------------------


def sample_seed(seed: int, *path: int) -> int:
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0] & 0x7FFFFFFF)


def make_sample(cfg: Config, seed: int) -> StereoSample:
    return generate(cfg.crop_w, cfg.crop_h, cfg.num_layers, cfg.data_max_disp, seed, texture_sigma=cfg.texture_sigma)


def training_pool(cfg: Config) -> list[StereoSample]:
    return [make_sample(cfg, sample_seed(cfg.seed, 0, i)) for i in range(cfg.train_samples)]


def held_out_samples(cfg: Config, count: int) -> list[StereoSample]:
    """Samples drawn from a seed stream disjoint from training."""
    return [make_sample(cfg, sample_seed(cfg.seed, 2, i)) for i in range(count)]


@dataclass
class Batch:
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray
    relative_depth: np.ndarray | None


def collate(samples: list[StereoSample], cfg: Config) -> Batch:
    rel = None
    if cfg.mono_mode == "oracle":
        rel = np.stack([oracle_relative_depth(s.disparity, s.seed, cfg.oracle_noise) for s in samples])
    return Batch(
        np.stack([s.left for s in samples]),
        np.stack([s.right for s in samples]),
        np.stack([s.disparity for s in samples]),
        rel,
    )


# -- training loop ---------------------------------------------------------


class Trainer:
    """Owns the model, optimizer state and step counter; batches depend only on (seed, step)."""

    def __init__(self, config: Config, model: StereoModel | None = None):
        self.config = config
        self.model = model if model is not None else StereoModel(config)
        self.optim = AdamWState()
        self.step = 0
        self._pool = training_pool(config) if config.train_samples > 0 else None

    def batch_at(self, step: int) -> Batch:
        cfg = self.config
        if self._pool is not None:
            rng = np.random.default_rng(sample_seed(cfg.seed, 1, step))
            k = min(cfg.batch, len(self._pool))
            idx = rng.choice(len(self._pool), size=k, replace=False)
            samples = [self._pool[i] for i in sorted(idx)]
        else:
            samples = [make_sample(cfg, sample_seed(cfg.seed, 3, step, j)) for j in range(cfg.batch)]
        return collate(samples, cfg)

    def warm_at(self, step: int) -> int:
        """Ungraded warm-start iterations for ``step``: 1..warm_start_max with probability warm_start_prob, else 0."""
        top = self.config.warm_start_max
        if top == 0:
            return 0
        rng = np.random.default_rng(sample_seed(self.config.seed, 4, step))
        return int(rng.integers(1, top + 1)) if rng.random() < self.config.warm_start_prob else 0

    def train_step(self) -> dict:
        cfg = self.config
        batch = self.batch_at(self.step)
        lr = one_cycle_lr(self.step, cfg.steps, cfg.lr_max)
        params = self.model.trainable()
        self.model.zero_grad()
        try:
            pred = self.model(Tensor(batch.left), Tensor(batch.right), cfg.iterations_train, batch.relative_depth,
                              self.warm_at(self.step))
        except DataError as exc:
            # inputs are generated and finite, so a non-finite intermediate means the weights diverged
            ag.current_tape().clear()
            raise TrainingError(f"non-finite activations at step {self.step}: {exc}") from exc
        iterates = pred.iterates_full()
        mask = valid_mask(batch.disparity)
        loss = sequence_loss(pred.d0_full(), iterates, batch.disparity, mask, cfg.gamma)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            ag.current_tape().clear()
            raise TrainingError(f"non-finite loss at step {self.step}")
        ag.backward(loss)
        grad_norm = clip_gradients(params, cfg.grad_clip)
        adamw_step(params, self.optim, lr, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
        err = np.abs(iterates[-1].data - batch.disparity)[mask]
        record = {
            "step": self.step,
            "lr": lr,
            "loss": loss_value,
            "train_epe": float(err.mean()),
            "grad_norm": grad_norm,
        }
        self.step += 1
        return record

    def run(self, until: int | None = None, log_path: str | os.PathLike | None = None, echo=None) -> list[dict]:
        """Train up to step ``until`` (default: config.steps); appends one JSON record per step to ``log_path``."""
        until = self.config.steps if until is None else min(until, self.config.steps)
        records = []
        fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
        try:
            t0 = time.perf_counter()
            while self.step < until:
                rec = self.train_step()
                records.append(rec)
                if fh is not None:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                every = self.config.log_every
                if echo is not None and every and (rec["step"] % every == 0 or self.step == until):
                    echo(f"step {rec['step']:5d}  lr {rec['lr']:.2e}  loss {rec['loss']:.4f}  "
                         f"epe {rec['train_epe']:.3f}  {time.perf_counter() - t0:.0f}s")
        finally:
            if fh is not None:
                fh.close()
        return records

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(path, self.model, self.config, self.step, self.optim)

    @classmethod
    def resume(cls, path: str | os.PathLike) -> "Trainer":
        ckpt = load_checkpoint(path)
        trainer = cls(ckpt.config)
        trainer.model.load_state_dict(ckpt.tensors)
        trainer.step = ckpt.step
        trainer.optim = ckpt.optimizer_state(trainer.model)
        return trainer


def train(config: Config, log_path=None, checkpoint_path=None, echo=None) -> tuple[Trainer, list[dict]]:
    trainer = Trainer(config)
    records = trainer.run(log_path=log_path, echo=echo)
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return trainer, records


# -- checkpoints -----------------------------------------------------------
#
# layout (little-endian):
#   magic "DSCK" | u8 version | u32 meta length | meta JSON (utf-8)
#   u32 entry count | entries: u16 key length | key | u8 ndim | u32 dims... | f32 data


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: Config
    step: int
    adam_step: int

    def optimizer_state(self, model: StereoModel) -> AdamWState:
        state = AdamWState(step=self.adam_step)
        for name, _ in model.trainable():
            if f"optim.m.{name}" in self.tensors:
                state.m[name] = self.tensors[f"optim.m.{name}"].copy()
                state.v[name] = self.tensors[f"optim.v.{name}"].copy()
        return state


def _entries(model: StereoModel, optim: AdamWState | None):
    yield from model.named_parameters()
    if optim is not None:
        for name in sorted(optim.m):
            yield f"optim.m.{name}", optim.m[name]
            yield f"optim.v.{name}", optim.v[name]


def save_checkpoint(path, model: StereoModel, config: Config, step: int = 0, optim: AdamWState | None = None) -> None:
    meta = json.dumps({"config": config.to_dict(), "step": step,
                       "adam_step": 0 if optim is None else optim.step}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<BI", CHECKPOINT_VERSION, len(meta)), meta]
    entries = list(_entries(model, optim))
    parts.append(struct.pack("<I", len(entries)))
    for key, value in entries:
        arr = value.data if isinstance(value, Tensor) else value
        kb = key.encode("utf-8")
        parts.append(struct.pack("<H", len(kb)) + kb)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", 0)
    version, meta_len = r.unpack("<BI", "header")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("checkpoint metadata is not valid JSON", 9) from None
    (count,) = r.unpack("<I", "entry count")
    tensors = {}
    for _ in range(count):
        (klen,) = r.unpack("<H", "key length")
        key = r.take(klen, "key").decode("utf-8", errors="replace")
        (ndim,) = r.unpack("<B", f"rank of {key}")
        dims = r.unpack(f"<{ndim}I", f"shape of {key}")
        n = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * n, f"data of {key}"), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[key] = data
    if r.pos != len(buf):
        raise FormatError("trailing bytes after checkpoint entries", r.pos)
    try:
        config = Config.from_dict(meta["config"])
    except (KeyError, TypeError):
        raise ConfigError("checkpoint metadata lacks a config") from None
    return Checkpoint(tensors, config, int(meta.get("step", 0)), int(meta.get("adam_step", 0)))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def load_model(path, **overrides) -> tuple[StereoModel, Checkpoint]:
    """Rebuild the model from a checkpoint's config echo (plus overrides) and load its weights."""
    ckpt = load_checkpoint(path)
    cfg = ckpt.config.replace(**overrides) if overrides else ckpt.config
    model = StereoModel(cfg)
    model.load_state_dict(ckpt.tensors)
    return model, ckpt
