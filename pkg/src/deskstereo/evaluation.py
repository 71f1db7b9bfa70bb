"""EPE and Bad-tau over All / Noc pixel sets, and evaluation reports."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import Config
from .errors import ContractError, DataError
from .features import oracle_relative_depth
from .synthetic import StereoSample
from .training import valid_mask


def _masked_error(d_pred, d_gt, mask) -> np.ndarray:
    d_pred = np.asarray(d_pred, dtype=np.float64)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if d_pred.shape != d_gt.shape:
        raise ContractError(f"prediction shape {d_pred.shape} != ground truth shape {d_gt.shape}")
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), d_gt.shape)
    if not mask.any():
        raise DataError("metric over an empty mask")
    return np.abs(d_pred - d_gt)[mask]


def epe(d_pred, d_gt, mask) -> float:
    """Mean absolute disparity error over ``mask``."""
    return float(_masked_error(d_pred, d_gt, mask).mean())


def bad_tau(d_pred, d_gt, mask, tau: float) -> float:
    """Percentage of masked pixels whose error is strictly greater than ``tau``."""
    if not tau > 0:
        raise ContractError(f"tau must be positive, got {tau}")
    err = _masked_error(d_pred, d_gt, mask)
    return float(100.0 * np.count_nonzero(err > tau) / err.size)


@dataclass
class SampleMetrics:
    index: int
    epe_all: float
    epe_noc: float
    bad_all: list[float]
    bad_noc: list[float]
    pixels_all: int
    pixels_noc: int


@dataclass
class EvalReport:
    taus: list[float]
    iterations: int
    samples: list[SampleMetrics] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.samples)

    def _mean(self, attr: str):
        if not self.samples:
            raise DataError("empty evaluation report")
        vals = np.array([getattr(s, attr) for s in self.samples], dtype=np.float64)
        return vals.mean(axis=0)

    @property
    def epe_all(self) -> float:
        return float(self._mean("epe_all"))

    @property
    def epe_noc(self) -> float:
        return float(self._mean("epe_noc"))

    @property
    def bad_all(self) -> list[float]:
        return [float(v) for v in self._mean("bad_all")]

    @property
    def bad_noc(self) -> list[float]:
        return [float(v) for v in self._mean("bad_noc")]

    def aggregate(self) -> dict:
        return {
            "kind": "aggregate",
            "iterations": self.iterations,
            "count": self.count,
            "taus": self.taus,
            "epe_all": self.epe_all,
            "epe_noc": self.epe_noc,
            "bad_all": self.bad_all,
            "bad_noc": self.bad_noc,
        }

    def write(self, path: str | os.PathLike) -> None:
        """One JSON record per sample, then the aggregate record."""
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.samples:
                fh.write(json.dumps({"kind": "sample", **asdict(s)}) + "\n")
            fh.write(json.dumps(self.aggregate()) + "\n")

    def table(self) -> str:
        head = ["set", "EPE"] + [f"Bad{t:g}" for t in self.taus]
        rows = [
            ["All", f"{self.epe_all:.3f}"] + [f"{b:.2f}" for b in self.bad_all],
            ["Noc", f"{self.epe_noc:.3f}"] + [f"{b:.2f}" for b in self.bad_noc],
        ]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        lines = [f"samples: {self.count}  iterations: {self.iterations}", fmt.format(*head)]
        lines += [fmt.format(*r) for r in rows]
        return "\n".join(lines)


def sample_metrics(index: int, d_pred: np.ndarray, sample: StereoSample, taus) -> SampleMetrics:
    gt = sample.disparity
    all_mask = valid_mask(gt)
    noc_mask = all_mask & ~sample.occlusion
    if not noc_mask.any():
        noc_mask = all_mask
    return SampleMetrics(
        index=index,
        epe_all=epe(d_pred, gt, all_mask),
        epe_noc=epe(d_pred, gt, noc_mask),
        bad_all=[bad_tau(d_pred, gt, all_mask, t) for t in taus],
        bad_noc=[bad_tau(d_pred, gt, noc_mask, t) for t in taus],
        pixels_all=int(all_mask.sum()),
        pixels_noc=int(noc_mask.sum()),
    )


def evaluate(model, samples: list[StereoSample], iterations: int, taus, config: Config | None = None) -> EvalReport:
    """Run inference per sample (in index order) and collect All / Noc metrics."""
    if not samples:
        raise DataError("no samples to evaluate")
    cfg = config if config is not None else model.config
    report = EvalReport(taus=list(taus), iterations=iterations)
    for i, s in enumerate(samples):
        rel = None
        if cfg.mono_mode == "oracle":
            rel = oracle_relative_depth(s.disparity, s.seed, cfg.oracle_noise)[None]
        pred = model.predict(s.left[None], s.right[None], iterations, rel)[0]
        report.samples.append(sample_metrics(i, pred, s, report.taus))
    return report
