"""Correlation volumes, their aggregation and pyramids, and local lookup."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError, DimensionError
from .nn import Conv3d, Module


@dataclass
class CostVolumeSet:
    v_g: Tensor  # [N, G, D/4, H/4, W/4]
    v_e: Tensor  # [N, G, D/4, H/4, W/4]
    v_a: Tensor  # [N, W/4, H/4, W/4], matching column on axis 1
    geo_pyramid: list[Tensor]  # group-mean of v_e, disparity axis pooled per level
    allpair_pyramid: list[Tensor]  # v_a, matching-column axis pooled per level


def build_group_corr(f_left: Tensor, f_right: Tensor, groups: int, max_disp: int) -> Tensor:
    """V_G(g, d, h, w) = (G / C) <F_L,g(h, w), F_R,g(h, w - d)>; zero where w - d < 0."""
    if f_left.shape != f_right.shape:
        raise DimensionError(f"feature shapes differ: {f_left.shape} vs {f_right.shape}")
    n, c, h, w = f_left.shape
    if groups < 1 or c % groups:
        raise ContractError(f"groups={groups} must divide channel count {c}")
    if max_disp < 1:
        raise ContractError(f"max_disp must be >= 1, got {max_disp}")
    cg = c // groups
    k = f_left.dtype.type(groups / c)
    fl = f_left.data.reshape(n, groups, cg, h, w)
    fr = f_right.data.reshape(n, groups, cg, h, w)
    out = np.zeros((n, groups, max_disp, h, w), dtype=f_left.dtype)
    for d in range(min(max_disp, w)):
        out[:, :, d, :, d:] = (fl[..., d:] * fr[..., : w - d]).sum(axis=2) * k

    def bw(g):
        gl = np.zeros_like(fl) if f_left.requires_grad else None
        gr = np.zeros_like(fr) if f_right.requires_grad else None
        for d in range(min(max_disp, w)):
            gd = g[:, :, d, None, :, d:] * k
            if gl is not None:
                gl[..., d:] += gd * fr[..., : w - d]
            if gr is not None:
                gr[..., : w - d] += gd * fl[..., d:]
        return (None if gl is None else gl.reshape(f_left.shape),
                None if gr is None else gr.reshape(f_right.shape))

    return ag.custom_op(out, (f_left, f_right), bw, "group_corr")


def build_allpair_corr(f_left: Tensor, f_right: Tensor) -> Tensor:
    """V_A(w', h, w) = <F_L(h, w), F_R(h, w')>, unnormalized; result [N, W', H, W]."""
    if f_left.shape != f_right.shape:
        raise DimensionError(f"feature shapes differ: {f_left.shape} vs {f_right.shape}")
    fl = np.moveaxis(f_left.data, 1, -1)  # N, H, W, C
    fr = np.moveaxis(f_right.data, 1, 2)  # N, H, C, W'
    prod = fl @ fr  # N, H, W, W'
    out = np.ascontiguousarray(prod.transpose(0, 3, 1, 2))

    def bw(g):
        gt = g.transpose(0, 2, 3, 1)  # N, H, W, W'
        gl = gr = None
        if f_left.requires_grad:
            gl = np.moveaxis(gt @ np.swapaxes(fr, 2, 3), -1, 1)
        if f_right.requires_grad:
            gr = np.moveaxis(np.swapaxes(fl, 2, 3) @ gt, 2, 1)
        return gl, gr

    return ag.custom_op(out, (f_left, f_right), bw, "allpair_corr")


class Aggregation3D(Module):
    """Two residual 3x3x3 convolutions over (disparity, height, width)."""

    def __init__(self, groups: int, rng: np.random.Generator):
        self.conv_a = Conv3d(groups, groups, 3, rng, gain=0.3)
        self.conv_b = Conv3d(groups, groups, 3, rng, gain=0.3)

    def forward(self, v_g: Tensor) -> Tensor:
        h = v_g + self.conv_a(v_g)
        return h + self.conv_b(ag.relu(h))


def group_mean(v: Tensor) -> Tensor:
    """Collapse the group axis of a [N, G, D, H, W] volume -> [N, D, H, W]."""
    return ag.mean(v, axis=1)


def regress_init(v_e: Tensor) -> Tensor:
    """Soft-argmax over the disparity axis of the group-mean volume -> [N, 1, H, W]."""
    cost = group_mean(v_e)
    num = cost.shape[1]
    if num < 2:
        raise ContractError(f"need at least 2 disparity candidates, got {num}")
    prob = ag.softmax(cost, axis=1)
    idx = np.arange(num, dtype=v_e.dtype).reshape(1, num, 1, 1)
    return ag.sum(ag.mul(prob, np.broadcast_to(idx, prob.shape)), axis=1, keepdims=True)


def build_pyramid(volume: Tensor, levels: int) -> list[Tensor]:
    """Repeated stride-2 mean pooling along axis 1 of a [N, M, H, W] volume."""
    if levels < 1:
        raise ContractError(f"levels must be >= 1, got {levels}")
    m = volume.shape[1]
    if m % (2 ** (levels - 1)):
        raise ContractError(f"candidate axis of size {m} is not divisible by 2^{levels - 1}")
    pyr = [volume]
    for _ in range(levels - 1):
        pyr.append(ag.avgpool_axis(pyr[-1], axis=1))
    return pyr


def build_volumes(
    f_left: Tensor, f_right: Tensor, aggregation: Aggregation3D, groups: int, max_disp_q: int, levels: int
) -> CostVolumeSet:
    v_g = build_group_corr(f_left, f_right, groups, max_disp_q)
    v_e = aggregation(v_g)
    v_a = build_allpair_corr(f_left, f_right)
    return CostVolumeSet(
        v_g=v_g,
        v_e=v_e,
        v_a=v_a,
        geo_pyramid=build_pyramid(group_mean(v_e), levels),
        allpair_pyramid=build_pyramid(v_a, levels),
    )


def lookup(geo_pyramid: list[Tensor], allpair_pyramid: list[Tensor], disp: Tensor, radius: int) -> Tensor:
    """Sample both pyramids around the current disparity.

    Level ``l`` of the geometry volume is read at ``disp / 2^l + o`` and level
    ``l`` of the all-pair volume at matching column ``(w - disp) / 2^l + o``,
    for offsets ``o = -r..r``. Output channels: ``2 * L * (2r + 1)``, ordered
    geometry levels first, then all-pair levels.
    """
    if radius < 0:
        raise ContractError(f"radius must be >= 0, got {radius}")
    n, _, h, w = disp.shape
    offsets = np.arange(-radius, radius + 1)
    cols = np.broadcast_to(np.arange(w, dtype=disp.dtype).reshape(1, 1, 1, w), disp.shape)
    geo = []
    allp = []
    for lvl, (ve, va) in enumerate(zip(geo_pyramid, allpair_pyramid)):
        s = 1.0 / 2**lvl
        geo.append(ag.linear_sample(ve, ag.scale(disp, s), offsets))
        col = ag.add(ag.scale(disp, -s), cols * disp.dtype.type(s))
        allp.append(ag.linear_sample(va, col, offsets))
    return ag.concat(geo + allp, axis=1)
