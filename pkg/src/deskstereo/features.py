"""Stereo feature pyramid (trainable, shared by both views) and the frozen mono branch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ContractError
from .nn import Conv2d, Module

STEREO_CHANNELS = (48, 64, 96, 128)
MONO_CHANNELS = 48


@dataclass
class FeatureBundle:
    stereo_left: list[Tensor]  # level i: [N, C_i, H / 2^(i+2), W / 2^(i+2)]
    stereo_right: list[Tensor]
    mono_feature: Tensor  # [N, C_M, H/4, W/4], detached
    relative_depth: Tensor  # [N, 1, H, W], detached


def _check_image(image: Tensor) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ContractError(f"expected images [N, 3, H, W], got {image.shape}")
    h, w = image.shape[2:]
    if h % 32 or w % 32:
        raise ContractError(f"image height and width must be multiples of 32, got {h}x{w}")


class StereoEncoder(Module):
    """Strided conv pyramid producing features at 1/4, 1/8, 1/16 and 1/32."""

    def __init__(self, rng: np.random.Generator, channels=STEREO_CHANNELS):
        c0, c1, c2, c3 = channels
        self.stem1 = Conv2d(3, 32, 3, rng, stride=2)
        self.stem2 = Conv2d(32, c0, 3, rng, stride=2)
        self.stem3 = Conv2d(c0, c0, 3, rng)
        self.level0 = Conv2d(c0, c0, 3, rng, gain=0.5)
        self.down1 = Conv2d(c0, c1, 3, rng, stride=2, gain=0.5)
        self.down2 = Conv2d(c1, c2, 3, rng, stride=2, gain=0.5)
        self.down3 = Conv2d(c2, c3, 3, rng, stride=2, gain=0.5)

    def forward(self, image: Tensor) -> list[Tensor]:
        _check_image(image)
        x = ag.scale(ag.add(image, -0.5), 2.0)
        x = ag.relu(self.stem1(x))
        x = ag.relu(self.stem2(x))
        x = ag.relu(self.stem3(x))
        f0 = self.level0(x)
        f1 = self.down1(ag.relu(f0))
        f2 = self.down2(ag.relu(f1))
        f3 = self.down3(ag.relu(f2))
        return [f0, f1, f2, f3]


def extract_stereo(encoder: StereoEncoder, left: Tensor, right: Tensor) -> tuple[list[Tensor], list[Tensor]]:
    """Run the shared encoder on both views in one batch (Siamese by construction)."""
    n = left.shape[0]
    feats = encoder(ag.concat([left, right], axis=0))
    lefts = [ag.slice_axis(f, 0, 0, n) for f in feats]
    rights = [ag.slice_axis(f, 0, n, 2 * n) for f in feats]
    return lefts, rights


class MonoBranch(Module):
    """Fixed random network standing in for a frozen monocular depth model.

    Its parameters never require gradients and its outputs are detached.
    """

    def __init__(self, seed: int = 1234, channels: int = MONO_CHANNELS):
        rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(3, 24, 3, rng, stride=2, trainable=False)
        self.conv2 = Conv2d(24, channels, 3, rng, stride=2, trainable=False)
        self.conv3 = Conv2d(channels, channels, 3, rng, trainable=False)
        self.head = Conv2d(channels, 1, 1, rng, trainable=False)
        self.head.bias.data[:] = 1.0

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        _check_image(image)
        with ag.no_grad():
            x = ag.scale(ag.add(image.detach(), -0.5), 2.0)
            x = ag.relu(self.conv1(x))
            x = ag.relu(self.conv2(x))
            feat = self.conv3(x)
            depth = ag.resample(self.head(ag.relu(feat)), "bilinear_up4")
        return depth.detach(), feat.detach()


def extract_mono(branch: MonoBranch, image: Tensor) -> tuple[Tensor, Tensor]:
    """(relative_depth [N,1,H,W], mono_feature [N,C_M,H/4,W/4]), both detached."""
    return branch(image)


def oracle_relative_depth(disparity: np.ndarray, seed: int, noise: float = 0.1) -> np.ndarray:
    """Positive-affine transform of the true disparity plus Gaussian noise.

    Replaces the mono branch's depth when a test needs a mono prior that is
    informative up to scale and shift.
    """
    rng = np.random.default_rng(seed + 7919)
    a = rng.uniform(0.5, 2.0)
    b = rng.uniform(-5.0, 5.0)
    return (a * disparity + b + noise * rng.standard_normal(disparity.shape)).astype(np.float32)
