"""Shipped hyperparameter defaults.

Percentiles for the scale-factor threshold are benchmark-family
defaults: CIFAR-style setups tune one percentile per statistic, large
ImageNet-style setups use a single percentile for energy fusion and a
backbone-dependent shared percentile when fusing with feature clipping.
Baseline hyperparameters carry their standard published operating
points. Resolution order everywhere is CLI flag > config file > these.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .channel_stats import ChannelStatisticKind
from .errors import ConfigError


@lru_cache(maxsize=1)
def shipped_defaults() -> dict:
    text = resources.files("catalyst_ood").joinpath("data/defaults.json").read_text()
    return json.loads(text)


def default_percentile(
    family: str,
    statistic: ChannelStatisticKind | str,
    baseline: str = "energy",
    backbone: str | None = None,
) -> float:
    """Scale-factor percentile for a benchmark family / statistic / baseline combo."""
    stat = ChannelStatisticKind.parse(statistic)
    table = shipped_defaults()["scale_percentiles"]
    family = family.lower()
    if family not in table:
        raise ConfigError(f"unknown benchmark family {family!r}; expected one of: {', '.join(table)}")
    entry = table[family]
    if family == "cifar":
        return float(entry[stat.value])
    # imagenet-style: react fusion shares a backbone-dependent percentile,
    # everything else uses the single default.
    if baseline in ("react", "react_dice") and backbone:
        shared = entry["react_fusion"]
        for prefix, value in shared.items():
            if backbone.lower().startswith(prefix):
                return float(value)
    return float(entry["default"])


def baseline_default(name: str) -> float | int:
    table = shipped_defaults()["baseline_defaults"]
    if name not in table:
        raise ConfigError(f"unknown baseline default {name!r}")
    return table[name]


def default_sweep_grid() -> list[float]:
    lo, hi, step = shipped_defaults()["sweep_grid"]
    out = []
    p = lo
    while p <= hi + 1e-9:
        out.append(round(p, 6))
        p += step
    return out
