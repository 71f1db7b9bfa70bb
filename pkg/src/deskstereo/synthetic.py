"""Synthetic rectified stereo pairs with exact disparity and occlusion.

A scene is a background plane plus ``num_layers`` slanted rectangles, each
carrying its own random-dot texture pinned to left-image coordinates. The left
view shows, per pixel, the surface with the largest disparity. The right view
is rendered by inverting each plane's column mapping ``x' = x - d(x, y)`` and
z-buffering on disparity, so every visible left pixel has an exact match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ContractError
from .fileio import read_pfm, write_pfm  # noqa: F401  (re-exported)


@dataclass
class StereoSample:
    left: np.ndarray  # [3, H, W] in [0, 1]
    right: np.ndarray  # [3, H, W]
    disparity: np.ndarray  # [1, H, W], pixels
    occlusion: np.ndarray  # [1, H, W] bool, True = no match in the right view
    seed: int

    @property
    def height(self) -> int:
        return self.left.shape[1]

    @property
    def width(self) -> int:
        return self.left.shape[2]

    def valid_mask(self) -> np.ndarray:
        d = self.disparity
        return (d >= 0) & (d < self.width)


@dataclass
class _Plane:
    alpha: float  # d = alpha + bx * x + by * y
    bx: float
    by: float
    rect: tuple[int, int, int, int] | None  # x0, x1, y0, y1 (half-open); None = everywhere

    def at(self, x, y):
        return self.alpha + self.bx * x + self.by * y


def _random_plane(rng, lo, hi, cx, cy, half_w, half_h, max_slope, rect):
    # keep the whole patch inside [lo, hi] by bounding the slope contribution
    span = hi - lo
    center = rng.uniform(lo + 0.25 * span, hi - 0.25 * span)
    budget = min(0.25 * span, center - lo, hi - center)
    bx = rng.uniform(-max_slope, max_slope)
    by = rng.uniform(-max_slope, max_slope)
    reach = abs(bx) * half_w + abs(by) * half_h
    if reach > budget and reach > 0:
        bx *= budget / reach
        by *= budget / reach
    return _Plane(center - bx * cx - by * cy, bx, by, rect)


def _texture(rng, height, width, sigma):
    dots = (rng.random((3, height, width)) < 0.5).astype(np.float64)
    tex = gaussian_filter(dots, sigma=(0, sigma, sigma), mode="wrap")
    lo = tex.min(axis=(1, 2), keepdims=True)
    hi = tex.max(axis=(1, 2), keepdims=True)
    return 0.05 + 0.9 * (tex - lo) / np.maximum(hi - lo, 1e-9)


def _interp_columns(tex, cols):
    """tex [3, H, Wt]; cols [H, W] fractional texture columns -> [3, H, W]."""
    i0 = np.clip(np.floor(cols).astype(int), 0, tex.shape[2] - 2)
    f = cols - i0
    rows = np.arange(tex.shape[1])[:, None]
    return (1 - f) * tex[:, rows, i0] + f * tex[:, rows, i0 + 1]


def generate(
    width: int,
    height: int,
    num_layers: int,
    max_disparity: float,
    seed: int,
    background_disparity: float | None = None,
    max_slope: float = 0.05,
    texture_sigma: float = 1.0,
) -> StereoSample:
    """Render one piecewise-planar random-dot stereo pair.

    ``background_disparity`` pins the background to a fronto-parallel plane of
    that constant disparity; otherwise it is a random slanted plane.
    """
    if width % 32 or height % 32 or width <= 0 or height <= 0:
        raise ContractError(f"width and height must be positive multiples of 32, got {width}x{height}")
    if not 1 <= max_disparity < width / 2:
        raise ContractError(f"max_disparity must lie in [1, width/2), got {max_disparity}")
    if num_layers < 0:
        raise ContractError(f"num_layers must be >= 0, got {num_layers}")
    rng = np.random.default_rng(seed)
    maxd = float(max_disparity)

    if background_disparity is not None:
        if not 0 <= background_disparity < maxd:
            raise ContractError(f"background_disparity must lie in [0, max_disparity), got {background_disparity}")
        planes = [_Plane(float(background_disparity), 0.0, 0.0, None)]
    else:
        planes = [_random_plane(rng, 0.05 * maxd, 0.45 * maxd, width / 2, height / 2,
                                width / 2, height / 2, max_slope, None)]
    for _ in range(num_layers):
        rw = int(rng.integers(width // 6, width // 2 + 1))
        rh = int(rng.integers(height // 6, height // 2 + 1))
        x0 = int(rng.integers(0, width - rw + 1))
        y0 = int(rng.integers(0, height - rh + 1))
        planes.append(_random_plane(rng, 0.3 * maxd, 0.97 * maxd, x0 + rw / 2, y0 + rh / 2,
                                    rw / 2, rh / 2, max_slope, (x0, x0 + rw, y0, y0 + rh)))

    pad = int(np.ceil(maxd)) + 4
    textures = [_texture(rng, height, width + 2 * pad, texture_sigma) for _ in planes]

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)

    def covers(plane, x, y):
        if plane.rect is None:
            return np.ones(x.shape, dtype=bool)
        x0, x1, y0, y1 = plane.rect
        return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)

    # left view: largest disparity wins
    disp = np.full((height, width), -np.inf)
    layer = np.zeros((height, width), dtype=int)
    for k, p in enumerate(planes):
        d = np.where(covers(p, xs, ys), p.at(xs, ys), -np.inf)
        win = d > disp
        disp = np.where(win, d, disp)
        layer = np.where(win, k, layer)
    left = np.zeros((3, height, width))
    for k, tex in enumerate(textures):
        sel = layer == k
        left[:, sel] = tex[:, ys[sel].astype(int), xs[sel].astype(int) + pad]

    # right view: invert x' = x - d(x, y) per plane, z-buffer on disparity
    rdisp = np.full((height, width), -np.inf)
    rlayer = np.zeros((height, width), dtype=int)
    rsrc = np.zeros((height, width))
    for k, p in enumerate(planes):
        xsrc = (xs + p.alpha + p.by * ys) / (1.0 - p.bx)
        d = np.where(covers(p, xsrc, ys), p.at(xsrc, ys), -np.inf)
        win = d > rdisp
        rdisp = np.where(win, d, rdisp)
        rlayer = np.where(win, k, rlayer)
        rsrc = np.where(win, xsrc, rsrc)
    right = np.zeros((3, height, width))
    for k, tex in enumerate(textures):
        sel = rlayer == k
        if sel.any():
            vals = _interp_columns(tex, np.where(sel, rsrc + pad, pad))
            right[:, sel] = vals[:, sel]

    occlusion = occlusion_mask(disp, layer, rdisp_at=(planes, covers))
    return StereoSample(
        left=left.astype(np.float32),
        right=right.astype(np.float32),
        disparity=disp[None].astype(np.float32),
        occlusion=occlusion[None],
        seed=seed,
    )


def zbuffer_occlusion(disp: np.ndarray, layer: np.ndarray) -> np.ndarray:
    """Forward z-buffer on the right-view pixel grid.

    A left pixel is occluded when a pixel of a different surface with strictly
    larger disparity lands on the same rounded target column, or when its
    target falls left of the image.
    """
    h, w = disp.shape
    xs = np.arange(w)[None, :].repeat(h, 0)
    target = np.rint(xs - disp).astype(int)
    occluded = (xs - disp) < 0
    for y in range(h):
        row_t, row_d, row_l = target[y], disp[y], layer[y]
        for col in np.unique(row_t):
            if col < 0:
                continue
            idx = np.nonzero(row_t == col)[0]
            if len(idx) < 2:
                continue
            for i in idx:
                rivals = idx[(row_l[idx] != row_l[i]) & (row_d[idx] > row_d[i])]
                if len(rivals):
                    occluded[y, i] = True
    return occluded


def occlusion_mask(disp, layer, rdisp_at=None) -> np.ndarray:
    occluded = zbuffer_occlusion(disp, layer)
    if rdisp_at is not None:
        # continuous visibility: the surface seen at x - d in the right view must be our own
        planes, covers = rdisp_at
        h, w = disp.shape
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        xr = xs - disp
        best = disp.copy()
        for k, p in enumerate(planes):
            xsrc = (xr + p.alpha + p.by * ys) / (1.0 - p.bx)
            d = np.where(covers(p, xsrc, ys) & (layer != k), p.at(xsrc, ys), -np.inf)
            best = np.maximum(best, d)
        occluded |= best > disp + 1e-6
    return occluded


def photometric_error(sample: StereoSample) -> float:
    """Mean |left - right(x - d)| over non-occluded pixels (linear interpolation)."""
    from . import autograd as ag

    _, h, w = sample.left.shape
    cols = np.arange(w, dtype=np.float32)[None, None, :] - sample.disparity
    warped = ag.gather_horizontal(ag.Tensor(sample.right[None]), ag.Tensor(cols)).data[0]
    keep = ~sample.occlusion[0]
    return float(np.abs(warped - sample.left)[:, keep].mean())


def generate_batch(count: int, width: int, height: int, num_layers: int, max_disparity: float,
                   seed: int, **kwargs) -> list[StereoSample]:
    return [generate(width, height, num_layers, max_disparity, seed + i, **kwargs) for i in range(count)]
