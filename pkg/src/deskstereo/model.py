"""End-to-end stereo model: features -> volumes -> initial regression -> fusion -> refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .aif import AffineInvariantFusion, FusionResult, normalize_affine
from .autograd import Tensor
from .config import Config
from .cost_volume import Aggregation3D, CostVolumeSet, build_volumes, regress_init
from .errors import ConfigError, ContractError
from .features import MONO_CHANNELS, STEREO_CHANNELS, MonoBranch, StereoEncoder, extract_mono, extract_stereo
from .nn import Module
from .pru import PromptRecurrentUnit, RefineOutput, convex_upsample, upsample_full


@dataclass
class Prediction:
    d0: Tensor  # soft-argmax initialization, 1/4 resolution
    fusion: FusionResult
    refined: RefineOutput
    volumes: CostVolumeSet
    upsample_mode: str

    @property
    def iterates(self) -> list[Tensor]:
        return self.refined.disparities

    def d0_full(self) -> Tensor:
        return upsample_full(self.d0)

    def fused_full(self) -> Tensor:
        return upsample_full(self.fusion.d_fused)

    def iterate_full(self, k: int) -> Tensor:
        d = self.refined.disparities[k]
        if self.upsample_mode == "convex":
            return convex_upsample(d, self.refined.masks[k])
        return upsample_full(d)

    def iterates_full(self) -> list[Tensor]:
        return [self.iterate_full(k) for k in range(len(self.iterates))]

    def final_full(self) -> Tensor:
        return self.iterate_full(len(self.iterates) - 1)


class StereoModel(Module):
    def __init__(self, config: Config):
        self._config = config
        if config.max_disp % 4:
            raise ConfigError(f"max_disp must be a multiple of 4, got {config.max_disp}")
        if config.upsample_mode not in ("convex", "bilinear"):
            raise ConfigError(f"upsample_mode must be 'convex' or 'bilinear', got {config.upsample_mode!r}")
        rng = np.random.default_rng(config.model_seed)
        self.stereo_encoder = StereoEncoder(rng)
        self.mono_branch = MonoBranch(config.mono_seed)
        self.cost_volume = Aggregation3D(config.groups, rng)
        self.aif = AffineInvariantFusion(STEREO_CHANNELS[0], rng)
        cost_ch = 2 * config.levels * (2 * config.radius + 1)
        self.pru = PromptRecurrentUnit(
            STEREO_CHANNELS,
            cost_ch,
            MONO_CHANNELS,
            rng,
            hidden=config.hidden_channels,
            prompt=config.prompt_channels,
            zero_init_prompt_conv=config.zero_init_prompt_conv,
            merged_hidden_prompt_conv=config.merged_hidden_prompt_conv,
            prompt_injection=config.prompt_injection,
        )

    @property
    def config(self) -> Config:
        return self._config

    def forward(self, left: Tensor, right: Tensor, iterations: int, relative_depth: Tensor | np.ndarray | None = None,
                warm_iterations: int = 0) -> Prediction:
        cfg = self._config
        if left.shape != right.shape:
            raise ContractError(f"left and right shapes differ: {left.shape} vs {right.shape}")
        f_left, f_right = extract_stereo(self.stereo_encoder, left, right)
        rel_depth, f_mono = extract_mono(self.mono_branch, left)
        if relative_depth is not None:
            rd = relative_depth.data if isinstance(relative_depth, Tensor) else np.asarray(relative_depth)
            if rd.shape != rel_depth.shape:
                raise ContractError(f"relative depth shape {rd.shape} != {rel_depth.shape}")
            rel_depth = Tensor(rd.astype(left.dtype))
        d_mono_q = ag.resample(ag.resample(rel_depth, "avgpool_down2"), "avgpool_down2").detach()

        volumes = build_volumes(f_left[0], f_right[0], self.cost_volume, cfg.groups, cfg.max_disp // 4, cfg.levels)
        d0 = regress_init(volumes.v_e)
        fusion = self.aif(d0, d_mono_q, f_left[0], f_right[0])
        d_hat_mono, _ = normalize_affine(d_mono_q)
        refined = self.pru.refine(
            f_left, f_right, f_mono, d_hat_mono, volumes, d0, fusion.d_fused,
            iterations, cfg.radius, detach=cfg.detach_iterates, warm=warm_iterations,
        )
        return Prediction(d0, fusion, refined, volumes, cfg.upsample_mode)

    def predict(self, left: np.ndarray, right: np.ndarray, iterations: int | None = None,
                relative_depth: np.ndarray | None = None) -> np.ndarray:
        """Inference on [N, 3, H, W] arrays; returns full-resolution disparity [N, 1, H, W]."""
        iters = self._config.iterations_eval if iterations is None else iterations
        with ag.no_grad():
            pred = self.forward(Tensor(np.asarray(left, np.float32)), Tensor(np.asarray(right, np.float32)),
                                iters, relative_depth)
            return pred.final_full().data
