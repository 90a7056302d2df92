"""Per-channel statistical cues from a pre-pooling activation map.

Five cues are supported: mean (the GAP feature vector), population
standard deviation, maximum, median, and Shannon entropy of the
normalized spatial distribution. All statistics are invariant to
permutations of a channel's spatial cells, and all are computed in
float64 from the raw (unclipped) map.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .feature_store import ActivationMap


class ChannelStatisticKind(str, Enum):
    MEAN = "mean"
    STD = "std"
    MAX = "max"
    MEDIAN = "median"
    ENTROPY = "entropy"

    @classmethod
    def parse(cls, value: "str | ChannelStatisticKind") -> "ChannelStatisticKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValidationError(f"unknown statistic {value!r}; expected one of: {names}") from None


@dataclass
class StatVector:
    """One statistic evaluated on every channel of a map."""

    values: np.ndarray  # (n_channels,) float64
    kind: ChannelStatisticKind

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValidationError(f"stat vector must be non-empty 1-D, got shape {self.values.shape}")

    def __len__(self) -> int:
        return self.values.size


def compute_stat_batch(activations: np.ndarray, kind: ChannelStatisticKind | str) -> np.ndarray:
    """Compute one statistic for every (sample, channel) of a stacked batch.

    `activations` has shape (n_samples, n_channels, k, k); the result has
    shape (n_samples, n_channels) in float64.
    """
    kind = ChannelStatisticKind.parse(kind)
    arr = np.asarray(activations, dtype=np.float64)
    if arr.ndim != 4:
        raise ValidationError(f"expected a 4-D batch, got shape {arr.shape}")

    if kind is ChannelStatisticKind.MEAN:
        return arr.mean(axis=(2, 3))
    if kind is ChannelStatisticKind.STD:
        # Population standard deviation: sigma over the k*k cells.
        return arr.std(axis=(2, 3))
    if kind is ChannelStatisticKind.MAX:
        return arr.max(axis=(2, 3))
    if kind is ChannelStatisticKind.MEDIAN:
        # Even cell count: midpoint of the two middle order statistics.
        return np.median(arr, axis=(2, 3))

    # Shannon entropy of the cell distribution, natural log. Each channel
    # is normalized to a probability vector; 0 * ln 0 = 0, and a channel
    # summing to zero is defined to have entropy 0.
    n_samples, n_channels = arr.shape[:2]
    flat = arr.reshape(n_samples, n_channels, -1)
    if (flat < 0).any():
        raise ValidationError("entropy requires non-negative activations")
    totals = flat.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        probs = flat / totals[:, :, None]
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    entropy = -np.nansum(plogp, axis=2)
    return np.where(totals > 0, entropy, 0.0)


def _single(map_: ActivationMap, kind: ChannelStatisticKind) -> StatVector:
    values = compute_stat_batch(map_.values[None], kind)[0]
    return StatVector(values=values, kind=kind)


def channel_mean(map_: ActivationMap) -> StatVector:
    """Arithmetic mean of each channel's cells; identical to the GAP feature vector."""
    return _single(map_, ChannelStatisticKind.MEAN)


def channel_std(map_: ActivationMap) -> StatVector:
    """Population standard deviation (divisor k*k) of each channel."""
    return _single(map_, ChannelStatisticKind.STD)


def channel_max(map_: ActivationMap) -> StatVector:
    """Peak activation of each channel."""
    return _single(map_, ChannelStatisticKind.MAX)


def channel_median(map_: ActivationMap) -> StatVector:
    """Median of each channel; even counts take the midpoint of the middle pair."""
    return _single(map_, ChannelStatisticKind.MEDIAN)


def channel_entropy(map_: ActivationMap) -> StatVector:
    """Shannon entropy (natural log) of each channel's normalized cell distribution."""
    return _single(map_, ChannelStatisticKind.ENTROPY)


_DISPATCH = {
    ChannelStatisticKind.MEAN: channel_mean,
    ChannelStatisticKind.STD: channel_std,
    ChannelStatisticKind.MAX: channel_max,
    ChannelStatisticKind.MEDIAN: channel_median,
    ChannelStatisticKind.ENTROPY: channel_entropy,
}


def compute_stat(map_: ActivationMap, kind: ChannelStatisticKind | str) -> StatVector:
    """Dispatch to the statistic named by `kind`; the output records the kind."""
    kind = ChannelStatisticKind.parse(kind)
    return _DISPATCH[kind](map_)


def gap_features(activations: np.ndarray) -> np.ndarray:
    """GAP feature matrix (n_samples, n_channels) for a stacked batch.

    This is exactly the MEAN statistic; every baseline that consumes the
    pooled feature vector consumes this output.
    """
    return compute_stat_batch(activations, ChannelStatisticKind.MEAN)
