"""Clipping-threshold calibration and the input-dependent scale factor.

The scale factor of a sample is the sum of its per-channel statistic
after element-wise clipping at a threshold c, where c is the p-th
percentile of the pooled ID statistic distribution (one global pool over
all channels and samples, mirroring how single-threshold feature
clipping is calibrated). The entropy statistic is the exception: its
scale factor is the reciprocal of the unclipped sum, because entropy
runs opposite to the other cues (ID maps concentrate, OOD maps spread).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .channel_stats import ChannelStatisticKind, StatVector
from .errors import DegenerateDataError, ValidationError

# The one statistic whose scale factor inverts instead of clipping.
_INVERTED = ChannelStatisticKind.ENTROPY


def percentile(values: Sequence[float] | np.ndarray, p: float) -> float:
    """Linear-interpolation percentile at rank position (N-1) * p / 100.

    Continuous in p, which keeps percentile sweeps stable.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        v = v.ravel()
    if v.size == 0:
        raise ValidationError("percentile of empty input")
    if not np.isfinite(v).all():
        raise ValidationError("percentile input contains non-finite values")
    if not (0.0 <= p <= 100.0):
        raise ValidationError(f"percentile p must be in [0, 100], got {p}")
    s = np.sort(v)
    pos = (s.size - 1) * (p / 100.0)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    frac = pos - lo
    return float(s[lo] + (s[hi] - s[lo]) * frac)


@dataclass(frozen=True)
class CalibrationProfile:
    """A resolved clipping threshold and where it came from."""

    kind: ChannelStatisticKind
    percentile_p: float
    threshold_c: float
    n_calibration_values: int
    source_label: str = ""

    def to_json(self) -> str:
        payload = {
            "kind": self.kind.value,
            "p": self.percentile_p,
            "c": self.threshold_c,
            "n_values": self.n_calibration_values,
            "source_label": self.source_label,
        }
        return json.dumps(payload, indent=2) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        raw = json.loads(text)
        return cls(
            kind=ChannelStatisticKind.parse(raw["kind"]),
            percentile_p=float(raw["p"]),
            threshold_c=float(raw["c"]),
            n_calibration_values=int(raw["n_values"]),
            source_label=raw.get("source_label", ""),
        )

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationProfile":
        return cls.from_json(Path(path).read_text())


def calibrate_threshold(
    id_stats: Sequence[StatVector], p: float, source_label: str = ""
) -> CalibrationProfile:
    """Pool every per-channel value of every ID sample and take its p-th percentile.

    Raises if the pool is empty, the vectors disagree on kind, or the
    resulting threshold is not strictly positive (degenerate ID data; we
    refuse to clamp silently).
    """
    if len(id_stats) == 0:
        raise ValidationError("calibration needs at least one statistic vector")
    kind = id_stats[0].kind
    length = len(id_stats[0])
    for i, s in enumerate(id_stats):
        if s.kind != kind:
            raise ValidationError(f"mixed statistic kinds: vector 0 is {kind.value}, vector {i} is {s.kind.value}")
        if len(s) != length:
            raise ValidationError(f"vector {i} has {len(s)} channels, expected {length}")
    if not (0.0 < p <= 100.0):
        raise ValidationError(f"calibration percentile must be in (0, 100], got {p}")

    pool = np.concatenate([s.values for s in id_stats])
    c = percentile(pool, p)
    if not (c > 0.0):
        raise DegenerateDataError(
            f"calibrated threshold is {c}; the {kind.value} statistic of the calibration "
            f"set is too sparse at p={p}"
        )
    return CalibrationProfile(
        kind=kind,
        percentile_p=float(p),
        threshold_c=c,
        n_calibration_values=int(pool.size),
        source_label=source_label,
    )


def calibrate_threshold_from_matrix(
    stats: np.ndarray, kind: ChannelStatisticKind, p: float, source_label: str = ""
) -> CalibrationProfile:
    """calibrate_threshold for a stacked (n_samples, n_channels) statistic matrix."""
    stats = np.asarray(stats, dtype=np.float64)
    if stats.ndim != 2 or stats.size == 0:
        raise ValidationError(f"expected a non-empty (n_samples, n_channels) matrix, got shape {stats.shape}")
    vectors = [StatVector(values=row, kind=kind) for row in stats]
    return calibrate_threshold(vectors, p, source_label=source_label)


def scale_factor(stat: StatVector, profile: CalibrationProfile) -> float:
    """Scale factor of one sample: sum of the clipped statistic.

    For the entropy statistic the factor is 1 / sum(values) with no
    clipping; a zero sum (an all-concentrated map) is an error so the
    caller can decide its own fallback.
    """
    if stat.kind != profile.kind:
        raise ValidationError(f"statistic kind {stat.kind.value} does not match profile kind {profile.kind.value}")
    if stat.kind is _INVERTED:
        total = float(stat.values.sum())
        if total <= 0.0:
            raise DegenerateDataError("entropy sum is zero; scale factor undefined for this sample")
        return 1.0 / total
    return float(np.minimum(stat.values, profile.threshold_c).sum())


def scale_factors(stats: np.ndarray, kind: ChannelStatisticKind, profile: CalibrationProfile) -> np.ndarray:
    """Vectorized scale_factor over a stacked (n_samples, n_channels) matrix."""
    if kind != profile.kind:
        raise ValidationError(f"statistic kind {kind.value} does not match profile kind {profile.kind.value}")
    stats = np.asarray(stats, dtype=np.float64)
    if kind is _INVERTED:
        totals = stats.sum(axis=1)
        bad = np.nonzero(totals <= 0.0)[0]
        if bad.size:
            raise DegenerateDataError(f"entropy sum is zero for sample {bad[0]}; scale factor undefined")
        return 1.0 / totals
    return np.minimum(stats, profile.threshold_c).sum(axis=1)


@dataclass
class SweepRow:
    percentile_p: float
    fpr95: float
    auroc: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    best_p: float

    def as_table(self) -> list[tuple[float, float, float]]:
        return [(r.percentile_p, r.fpr95, r.auroc) for r in self.rows]


def sweep_percentiles(
    id_stats: Sequence[StatVector],
    proxy_ood_stats: Sequence[StatVector],
    grid: Sequence[float],
    scorer: Callable[[CalibrationProfile, Sequence[StatVector], Sequence[StatVector]], "object"],
) -> SweepResult:
    """Calibrate at every grid percentile, score, and pick the argmin-FPR95 p.

    `scorer(profile, id_stats, proxy_ood_stats)` must return an object
    with `fpr95` and `auroc` attributes (an EvalReport). Ties on FPR95
    resolve to the lowest percentile.
    """
    if len(grid) == 0:
        raise ValidationError("sweep grid is empty")
    if len(id_stats) == 0 or len(proxy_ood_stats) == 0:
        raise ValidationError("sweep needs non-empty ID and proxy splits")

    rows: list[SweepRow] = []
    for p in grid:
        profile = calibrate_threshold(id_stats, p)
        report = scorer(profile, id_stats, proxy_ood_stats)
        rows.append(SweepRow(percentile_p=float(p), fpr95=report.fpr95, auroc=report.auroc))
    best = min(rows, key=lambda r: (r.fpr95, r.percentile_p))
    return SweepResult(rows=rows, best_p=best.percentile_p)
