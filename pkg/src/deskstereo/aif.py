"""Affine-invariant fusion of the initial disparity with the mono relative depth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DataError
from .nn import Conv2d, Module

EPS = 1e-6


@dataclass
class AffineStats:
    """Per-sample shift (median) and spread (mean absolute deviation), as [N, 2]."""

    values: Tensor

    @property
    def t(self) -> np.ndarray:
        return self.values.data[:, 0]

    @property
    def s(self) -> np.ndarray:
        return self.values.data[:, 1]


@dataclass
class FusionResult:
    d_fused: Tensor
    confidence: Tensor
    d_mono_proj: Tensor
    stats_d0: AffineStats
    stats_mono: AffineStats


def _median_selector(flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row medians of [N, M] plus the 0 / 1 / 0.5 weights that pick them out."""
    n, m = flat.shape
    order = np.argsort(flat, axis=1, kind="stable")
    sel = np.zeros_like(flat)
    rows = np.arange(n)
    if m % 2:
        sel[rows, order[:, m // 2]] = 1.0
    else:
        sel[rows, order[:, m // 2 - 1]] = 0.5
        sel[rows, order[:, m // 2]] = 0.5
    sorted_ = np.take_along_axis(flat, order, axis=1)
    med = sorted_[:, m // 2] if m % 2 else (sorted_[:, m // 2 - 1] + sorted_[:, m // 2]) / 2
    return med, sel


def affine_stats(d: Tensor, eps: float = EPS) -> AffineStats:
    """t = median, s = max(mean|d - t|, eps), per leading-axis sample."""
    if not np.all(np.isfinite(d.data)):
        raise DataError("affine_stats: input contains NaN or Inf")
    if d.size == 0:
        raise DataError("affine_stats: empty input")
    n = d.shape[0]
    flat = d.data.reshape(n, -1)
    m = flat.shape[1]
    t, sel = _median_selector(flat)
    sgn = np.sign(flat - t[:, None])
    s_raw = np.abs(flat - t[:, None]).mean(axis=1)
    clamped = s_raw < eps
    s = np.where(clamped, eps, s_raw)
    out = np.stack([t, s], axis=1).astype(d.dtype)

    def bw(g):
        gt, gs = g[:, 0], np.where(clamped, 0.0, g[:, 1])
        # s depends on d directly and through t
        dt_total = gt - gs * sgn.sum(axis=1) / m
        grad = gs[:, None] * sgn / m + dt_total[:, None] * sel
        return (grad.astype(d.dtype).reshape(d.shape),)

    return AffineStats(ag.custom_op(out, (d,), bw, "affine_stats"))


def _affine(x: Tensor, stats: AffineStats, inverse: bool) -> Tensor:
    st = stats.values
    n = x.shape[0]
    shape = (n,) + (1,) * (x.ndim - 1)
    t = st.data[:, 0].reshape(shape)
    s = st.data[:, 1].reshape(shape)
    axes = tuple(range(1, x.ndim))
    if inverse:
        out = (x.data - t) / s

        def bw(g):
            gx = g / s
            gs = -(g * out).sum(axis=axes) / s.reshape(-1)
            gt = -g.sum(axis=axes) / s.reshape(-1)
            return gx, np.stack([gt, gs], axis=1)
    else:
        out = x.data * s + t

        def bw(g):
            return g * s, np.stack([g.sum(axis=axes), (g * x.data).sum(axis=axes)], axis=1)

    return ag.custom_op(out.astype(x.dtype), (x, st), bw, "affine_unnormalize" if not inverse else "affine_normalize")


def normalize_affine(d: Tensor, eps: float = EPS) -> tuple[Tensor, AffineStats]:
    """(d - median) / mean-abs-deviation, per sample along the leading axis."""
    stats = affine_stats(d, eps)
    return _affine(d, stats, inverse=True), stats


def project(d_hat_mono: Tensor, stats_d0: AffineStats) -> Tensor:
    """Map normalized mono depth into the disparity frame: s(d0) * d_hat + t(d0)."""
    return _affine(d_hat_mono, stats_d0, inverse=False)


def warp_right(f_right: Tensor, disp: Tensor) -> Tensor:
    """Sample right features at columns w - disp (disp is [N, 1, H, W])."""
    n, _, h, w = disp.shape
    cols = np.broadcast_to(np.arange(w, dtype=disp.dtype).reshape(1, 1, w), (n, h, w))
    x = ag.add(ag.neg(ag.reshape(disp, (n, h, w))), np.ascontiguousarray(cols))
    return ag.gather_horizontal(f_right, x)


class ConfidenceHead(Module):
    """3x3 conv (hidden 32) + ReLU, 1x1 conv, sigmoid over [F_L, warped F_R]."""

    def __init__(self, feat_ch: int, rng: np.random.Generator, hidden: int = 32):
        self.conv1 = Conv2d(2 * feat_ch, hidden, 3, rng)
        self.conv2 = Conv2d(hidden, 1, 1, rng, gain=0.1)

    def forward(self, d0: Tensor, f_left: Tensor, f_right: Tensor) -> Tensor:
        warped = warp_right(f_right, d0)
        x = ag.relu(self.conv1(ag.concat([f_left, warped], axis=1)))
        return ag.sigmoid(self.conv2(x))


def fuse(d0: Tensor, d_mono_proj: Tensor, c: Tensor) -> Tensor:
    """c * d0 + (1 - c) * d_mono_proj."""
    return ag.add(ag.mul(c, d0), ag.mul(ag.add(ag.neg(c), 1.0), d_mono_proj))


class AffineInvariantFusion(Module):
    def __init__(self, feat_ch: int, rng: np.random.Generator):
        self.confidence = ConfidenceHead(feat_ch, rng)

    def forward(self, d0: Tensor, d_mono_q: Tensor, f_left: Tensor, f_right: Tensor) -> FusionResult:
        """``d_mono_q`` is the relative depth at the resolution of ``d0``."""
        d_hat_mono, stats_mono = normalize_affine(d_mono_q)
        stats_d0 = affine_stats(d0)
        d_proj = project(d_hat_mono, stats_d0)
        c = self.confidence(d0, f_left, f_right)
        return FusionResult(fuse(d0, d_proj, c), c, d_proj, stats_d0, stats_mono)
