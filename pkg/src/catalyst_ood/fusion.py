"""Fusing the scale factor with a baseline score.

Four strategies: multiplicative (the score is elastically stretched or
shrunk by the factor), additive (a shift), distance division (for the
inverted-polarity KNN score, whose signal is anti-correlated with the
factor), and standalone (the factor itself is the score). Compatibility
between strategy and baseline polarity is enforced up front: a silent
polarity mismatch would invert the meaning of every downstream metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .baselines import BaselineKind, FittedBaseline, Knn
from .channel_stats import ChannelStatisticKind, compute_stat_batch, gap_features
from .errors import ConfigError, ValidationError
from .feature_store import Dataset
from .scaling import CalibrationProfile, scale_factors


class FusionMode(str, Enum):
    MULTIPLICATIVE = "multiplicative"
    ADDITIVE = "additive"
    KNN_DIVIDE = "knn_divide"
    STANDALONE_SCALE = "standalone_scale"

    @classmethod
    def parse(cls, value: "str | FusionMode") -> "FusionMode":
        if isinstance(value, cls):
            return value
        key = value.lower().replace("-", "_")
        aliases = {"mul": cls.MULTIPLICATIVE, "add": cls.ADDITIVE, "divide": cls.KNN_DIVIDE,
                   "standalone": cls.STANDALONE_SCALE}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError(f"unknown fusion mode {value!r}; expected one of: {names}") from None


def check_compatible(mode: FusionMode, kind: BaselineKind) -> None:
    """Fail fast on strategy/baseline pairs whose polarities do not compose."""
    is_distance = isinstance(kind, Knn)
    if mode is FusionMode.KNN_DIVIDE and not is_distance:
        raise ConfigError(
            f"distance division only applies to the knn baseline, not {kind.label!r}"
        )
    if mode in (FusionMode.MULTIPLICATIVE, FusionMode.ADDITIVE) and is_distance:
        raise ConfigError(
            f"{mode.value} fusion assumes a higher-is-ID score; the knn distance score "
            "is inverted, use knn_divide instead"
        )


def fuse(scale_value: float, base_score: float, mode: FusionMode) -> float:
    """Combine one sample's scale factor with its baseline score."""
    mode = FusionMode.parse(mode)
    if mode is FusionMode.STANDALONE_SCALE:
        return float(scale_value)
    if mode in (FusionMode.MULTIPLICATIVE, FusionMode.KNN_DIVIDE):
        if not (np.isfinite(scale_value) and scale_value > 0):
            raise ValidationError(f"scale factor must be finite and > 0 for {mode.value} fusion, got {scale_value}")
    if mode is FusionMode.MULTIPLICATIVE:
        return float(scale_value * base_score)
    if mode is FusionMode.ADDITIVE:
        return float(scale_value + base_score)
    return float(base_score / scale_value)


def fuse_batch(scale_values: np.ndarray, base_scores: np.ndarray, mode: FusionMode) -> np.ndarray:
    mode = FusionMode.parse(mode)
    g = np.asarray(scale_values, dtype=np.float64)
    s = np.asarray(base_scores, dtype=np.float64)
    if mode is FusionMode.STANDALONE_SCALE:
        return g.copy()
    if g.shape != s.shape:
        raise ValidationError(f"scale factors {g.shape} and scores {s.shape} differ in shape")
    if mode in (FusionMode.MULTIPLICATIVE, FusionMode.KNN_DIVIDE):
        if not np.isfinite(g).all() or (g <= 0).any():
            bad = int(np.nonzero(~np.isfinite(g) | (g <= 0))[0][0])
            raise ValidationError(
                f"scale factor must be finite and > 0 for {mode.value} fusion; sample {bad} has {g[bad]}"
            )
    if mode is FusionMode.MULTIPLICATIVE:
        return g * s
    if mode is FusionMode.ADDITIVE:
        return g + s
    return s / g


def fused_higher_is_id(mode: FusionMode, kind: BaselineKind | None) -> bool:
    """Polarity of the fused score."""
    if mode is FusionMode.STANDALONE_SCALE:
        return True
    if mode is FusionMode.KNN_DIVIDE:
        return False  # still a distance
    return True


@dataclass
class SplitScores:
    """Per-sample scores for one dataset split, with method identity attached."""

    method_label: str
    base: np.ndarray
    scale: np.ndarray
    fused: np.ndarray
    higher_is_id: bool

    def to_csv(self) -> str:
        lines = ["sample_index,raw_base,gamma,fused"]
        for i, (b, g, f) in enumerate(zip(self.base, self.scale, self.fused)):
            lines.append(f"{i},{float(b)!r},{float(g)!r},{float(f)!r}")
        return "\n".join(lines) + "\n"


def method_label(kind: BaselineKind | None, stat: ChannelStatisticKind, mode: FusionMode | None) -> str:
    if mode is None:
        return kind.label
    if mode is FusionMode.STANDALONE_SCALE:
        return f"scale({stat.value})"
    op = {FusionMode.MULTIPLICATIVE: "*", FusionMode.ADDITIVE: "+", FusionMode.KNN_DIVIDE: "/"}[mode]
    return f"{kind.label}{op}scale({stat.value})"


def score_dataset(
    dataset: Dataset,
    kind: BaselineKind,
    stat: ChannelStatisticKind | str,
    profile: CalibrationProfile,
    mode: FusionMode | str | None,
    fitted: FittedBaseline,
    threads: int = 1,
) -> SplitScores:
    """Score every sample of a split: statistic -> scale factor -> baseline -> fusion.

    `mode=None` skips fusion and returns the raw baseline score (used for
    unfused reference rows). Output order is the dataset order regardless
    of `threads`.
    """
    stat = ChannelStatisticKind.parse(stat)
    if mode is not None:
        mode = FusionMode.parse(mode)
        check_compatible(mode, kind)
    if profile.kind != stat:
        raise ValidationError(f"profile was calibrated for {profile.kind.value!r}, not {stat.value!r}")

    features = gap_features(dataset.activations)

    def chunk_scores(lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
        stats = compute_stat_batch(dataset.activations[lo:hi], stat)
        g = scale_factors(stats, stat, profile)
        s = fitted.score_batch(features[lo:hi], dataset.logits[lo:hi])
        return g, s

    n = dataset.n_samples
    if threads > 1 and n > 1:
        from concurrent.futures import ThreadPoolExecutor

        bounds = np.linspace(0, n, threads + 1, dtype=int)
        spans = [(int(bounds[i]), int(bounds[i + 1])) for i in range(threads) if bounds[i] < bounds[i + 1]]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda span: chunk_scores(*span), spans))
        scale = np.concatenate([p[0] for p in parts])
        base = np.concatenate([p[1] for p in parts])
    else:
        scale, base = chunk_scores(0, n)

    if mode is None:
        fused = base.copy()
        polarity = kind.higher_is_id
        label = method_label(kind, stat, None)
    else:
        fused = fuse_batch(scale, base, mode)
        polarity = fused_higher_is_id(mode, kind)
        label = method_label(kind, stat, mode)
    return SplitScores(method_label=label, base=base, scale=scale, fused=fused, higher_is_id=polarity)
