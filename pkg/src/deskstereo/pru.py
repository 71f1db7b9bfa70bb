"""Prompt Recurrent Unit: multi-resolution hidden states refined coarse-to-fine.

Per iteration and level i (3 -> 0):

    cand = ResBlock(h^i)                                   i = 3
    cand = ResBlock(h^i + up2(ResBlock(h^{i+1}_new)))      i < 3
    cand += Prompt(P_S); cand += Prompt(P_M)               i = 0
    cand = Conv1x1(cand)
    z = sigmoid(Conv([h^i, down2(h^{i-1})]))               i > 0
    z = sigmoid(Conv([h^0, P_S, P_M]))                     i = 0
    h^i_new = (1 - z) * h^i + z * cand
    d_new = d + Head(h^0_new)

Hidden states are never squashed; only the gate passes through a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .aif import normalize_affine, warp_right
from .autograd import Tensor
from .cost_volume import CostVolumeSet, lookup
from .errors import ContractError, DimensionError
from .nn import Conv2d, ConvBlock, Module, ResBlock

LEVELS = 4


@dataclass
class PRUState:
    hidden: list[Tensor]  # h^i, [N, C_h, H / 2^(i+2), W / 2^(i+2)]
    structure_feature: Tensor | None = None  # F_M part of the structure encoder, cached


@dataclass
class PromptPair:
    p_s: Tensor
    p_m: Tensor


@dataclass
class RefineOutput:
    disparities: list[Tensor]  # d_1..d_K at 1/4 resolution
    masks: list[Tensor]  # convex-upsampling logits per iterate
    state: PRUState


class PromptBlock(Module):
    """ConvBlock followed by a 1x1 projection; the projection may start at zero."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, zero_init: bool = False):
        self.conv = Conv2d(in_ch, out_ch, 3, rng)
        self.proj = Conv2d(out_ch, out_ch, 1, rng, gain=0.5, zero=zero_init)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(ag.relu(self.conv(x)))


class StructureEncoder(Module):
    """Two conv layers over [F_M, D]; the F_M half of the first layer is cached."""

    def __init__(self, mono_ch: int, prompt_ch: int, rng: np.random.Generator):
        self.conv_feature = Conv2d(mono_ch, prompt_ch, 3, rng)
        self.conv_diff = Conv2d(1, prompt_ch, 3, rng, bias=False)
        self.conv2 = Conv2d(prompt_ch, prompt_ch, 3, rng)

    def encode_feature(self, f_mono: Tensor) -> Tensor:
        return self.conv_feature(f_mono)

    def forward(self, feature_part: Tensor, diff: Tensor) -> Tensor:
        x = ag.relu(ag.add(feature_part, self.conv_diff(diff)))
        return ag.relu(self.conv2(x))


class MotionEncoder(Module):
    """Cost branch (1x1) and disparity branch (3x3), fused by a 3x3 conv."""

    def __init__(self, cost_ch: int, prompt_ch: int, rng: np.random.Generator):
        self.conv_cost = Conv2d(cost_ch, 48, 1, rng)
        self.conv_disp = Conv2d(1, 16, 3, rng)
        self.conv_out = Conv2d(64, prompt_ch, 3, rng)

    def forward(self, v_k: Tensor, d_k: Tensor) -> Tensor:
        c = ag.relu(self.conv_cost(v_k))
        d = ag.relu(self.conv_disp(d_k))
        return ag.relu(self.conv_out(ag.concat([c, d], axis=1)))


def difference_map(d_k: Tensor, d_hat_mono: Tensor) -> Tensor:
    """|normalize(d_k) - normalize(d_M)|, both at 1/4 resolution."""
    d_hat_k, _ = normalize_affine(d_k)
    return ag.abs(ag.sub(d_hat_k, d_hat_mono))


def gate_blend(z: Tensor, h: Tensor, cand: Tensor) -> Tensor:
    return ag.add(ag.mul(ag.add(ag.neg(z), 1.0), h), ag.mul(z, cand))


class PromptRecurrentUnit(Module):
    def __init__(
        self,
        feat_channels,
        cost_channels: int,
        mono_channels: int,
        rng: np.random.Generator,
        hidden: int = 64,
        prompt: int = 64,
        zero_init_prompt_conv: bool = False,
        merged_hidden_prompt_conv: bool = False,
        prompt_injection: bool = True,
        upsample_factor: int = 4,
    ):
        self.init_convs = [Conv2d(2 * c, hidden, 3, rng) for c in feat_channels]
        self.structure = StructureEncoder(mono_channels, prompt, rng)
        self.motion = MotionEncoder(cost_channels, prompt, rng)
        self.coarse_res = [ResBlock(hidden, rng) for _ in range(LEVELS - 1)]
        self.main_res = [ResBlock(hidden, rng) for _ in range(LEVELS)]
        self.out_proj = [Conv2d(hidden, hidden, 1, rng, gain=0.5) for _ in range(LEVELS)]
        self.gates = [Conv2d(hidden + 2 * prompt, hidden, 3, rng, gain=0.5)] + [
            Conv2d(2 * hidden, hidden, 3, rng, gain=0.5) for _ in range(LEVELS - 1)
        ]
        if merged_hidden_prompt_conv:
            self.merged_prompt = PromptBlock(hidden + 2 * prompt, hidden, rng, zero_init_prompt_conv)
        else:
            self.structure_prompt = PromptBlock(prompt, hidden, rng, zero_init_prompt_conv)
            self.motion_prompt = PromptBlock(prompt, hidden, rng, zero_init_prompt_conv)
        self.disp_head = ConvBlock(hidden, 64, rng)
        self.disp_out = Conv2d(64, 1, 3, rng, gain=0.1)
        self.mask_head = ConvBlock(hidden, 64, rng)
        self.mask_out = Conv2d(64, 9 * upsample_factor**2, 1, rng, gain=0.1)
        self._merged = merged_hidden_prompt_conv
        self._inject = prompt_injection
        self._factor = upsample_factor

    # -- state -------------------------------------------------------------

    def init_hidden(self, f_left: list[Tensor], f_right: list[Tensor], d0: Tensor) -> PRUState:
        hidden = []
        d = d0
        for i, (fl, fr) in enumerate(zip(f_left, f_right)):
            if i > 0:
                d = ag.scale(ag.resample(d, "avgpool_down2"), 0.5)
            if d.shape[2:] != fl.shape[2:]:
                raise DimensionError(f"level {i}: disparity {d.shape} does not match features {fl.shape}")
            warped = warp_right(fr, d)
            hidden.append(ag.relu(self.init_convs[i](ag.concat([fl, warped], axis=1))))
        return PRUState(hidden)

    # -- prompts -----------------------------------------------------------

    def structure_prompt_from(self, state: PRUState, f_mono: Tensor, d_hat_mono: Tensor, d_k: Tensor) -> Tensor:
        if state.structure_feature is None:
            state.structure_feature = self.structure.encode_feature(f_mono)
        return self.structure(state.structure_feature, difference_map(d_k, d_hat_mono))

    def motion_prompt_from(self, v_k: Tensor, d_k: Tensor) -> Tensor:
        return self.motion(v_k, d_k)

    # -- update ------------------------------------------------------------

    def update(self, state: PRUState, p_s: Tensor, p_m: Tensor, d_k: Tensor, trace: dict | None = None):
        old = state.hidden
        new: list[Tensor | None] = [None] * LEVELS
        for i in reversed(range(LEVELS)):
            h = old[i]
            if i == LEVELS - 1:
                cand = self.main_res[i](h)
            else:
                coarse = ag.resample(self.coarse_res[i](new[i + 1]), "bilinear_up2")
                cand = self.main_res[i](ag.add(h, coarse))
            if trace is not None:
                trace[f"candidate_pre_prompt_{i}"] = cand
            if i == 0 and self._inject:
                if self._merged:
                    cand = self.merged_prompt(ag.concat([cand, p_s, p_m], axis=1))
                else:
                    cand = ag.add(cand, self.structure_prompt(p_s))
                    cand = ag.add(cand, self.motion_prompt(p_m))
            cand = self.out_proj[i](cand)
            if i > 0:
                gate_in = ag.concat([h, ag.resample(old[i - 1], "avgpool_down2")], axis=1)
            else:
                gate_in = ag.concat([h, p_s, p_m], axis=1)
            z = ag.sigmoid(self.gates[i](gate_in))
            if trace is not None:
                trace[f"candidate_{i}"] = cand
                trace[f"gate_{i}"] = z
            new[i] = gate_blend(z, h, cand)
        d_next = ag.add(d_k, self.disp_out(self.disp_head(new[0])))
        return PRUState(new, state.structure_feature), d_next

    def upsample_mask(self, state: PRUState) -> Tensor:
        return self.mask_out(self.mask_head(state.hidden[0]))

    # -- loop --------------------------------------------------------------

    def refine(
        self,
        f_left: list[Tensor],
        f_right: list[Tensor],
        f_mono: Tensor,
        d_hat_mono: Tensor,
        volumes: CostVolumeSet,
        d0: Tensor,
        d_start: Tensor,
        iterations: int,
        radius: int,
        detach: bool = True,
        warm: int = 0,
    ) -> RefineOutput:
        """Run ``iterations`` recorded updates from ``d_start``.

        ``warm`` extra updates run first without recording gradients and are not
        returned (truncated backprop for training past the graded horizon).
        """
        if iterations < 1:
            raise ContractError(f"iterations must be >= 1, got {iterations}")
        if warm < 0:
            raise ContractError(f"warm must be >= 0, got {warm}")
        state = self.init_hidden(f_left, f_right, d0)
        d = d_start
        if warm:
            with ag.no_grad():
                for _ in range(warm):
                    state, d = self._iterate(state, d, f_mono, d_hat_mono, volumes, radius)
            # the cached structure feature was built without a graph
            state = PRUState(state.hidden)
        disps, masks = [], []
        for k in range(iterations):
            # the fused start keeps its graph so the fusion stage is trained through d_1
            if detach and k > 0:
                d = d.detach()
            state, d = self._iterate(state, d, f_mono, d_hat_mono, volumes, radius)
            disps.append(d)
            masks.append(self.upsample_mask(state))
        return RefineOutput(disps, masks, state)

    def _iterate(self, state, d, f_mono, d_hat_mono, volumes, radius):
        v_k = lookup(volumes.geo_pyramid, volumes.allpair_pyramid, d, radius)
        p_m = self.motion_prompt_from(v_k, d)
        p_s = self.structure_prompt_from(state, f_mono, d_hat_mono, d)
        return self.update(state, p_s, p_m, d)


def upsample_full(d: Tensor) -> Tensor:
    """Bilinear x4 upsampling; values scale by 4 with the width."""
    return ag.scale(ag.resample(d, "bilinear_up4"), 4.0)


def _neighbour_index(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of the 3x3 replicate-padded neighbourhood: [9, H*W]."""
    ys, xs = np.mgrid[0:h, 0:w]
    idx = []
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            idx.append((np.clip(ys + dy, 0, h - 1) * w + np.clip(xs + dx, 0, w - 1)).ravel())
    return np.stack(idx), np.arange(h * w)


def convex_upsample(d: Tensor, mask_logits: Tensor, factor: int = 4) -> Tensor:
    """Each full-resolution pixel is a convex combination of the 3x3 coarse
    neighbourhood of ``factor * d`` (replicate padding), weighted by a softmax
    over 9 logits per sub-pixel position."""
    n, _, h, w = d.shape
    f2 = factor * factor
    if mask_logits.shape != (n, 9 * f2, h, w):
        raise DimensionError(f"mask shape {mask_logits.shape} != {(n, 9 * f2, h, w)}")
    weights = ag.softmax(ag.reshape(mask_logits, (n, 9, f2, h, w)), axis=1)
    idx, _ = _neighbour_index(h, w)
    scaled = d.data.reshape(n, h * w) * d.dtype.type(factor)
    nb = scaled[:, idx].reshape(n, 9, h, w)
    wt = weights.data
    out16 = np.einsum("nkshw,nkhw->nshw", wt, nb)
    out = out16.reshape(n, factor, factor, h, w).transpose(0, 3, 1, 4, 2).reshape(n, 1, h * factor, w * factor)

    def bw(g):
        g16 = g.reshape(n, h, factor, w, factor).transpose(0, 2, 4, 1, 3).reshape(n, f2, h, w)
        gw = gd = None
        if weights.requires_grad:
            gw = g16[:, None] * nb[:, :, None]
        if d.requires_grad:
            gnb = np.einsum("nkshw,nshw->nkhw", wt, g16).reshape(n, 9 * h * w) * d.dtype.type(factor)
            flat_idx = (np.arange(n)[:, None] * (h * w) + idx.reshape(1, -1)).ravel()
            gd = np.bincount(flat_idx, gnb.ravel(), minlength=n * h * w).astype(d.dtype).reshape(d.shape)
        return gd, gw

    return ag.custom_op(out.astype(d.dtype), (d, weights), bw, "convex_upsample")
