"""Parametric synthetic ID/OOD activation benchmarks and separation checks.

Maps are rectified Gaussians (element-wise max(0, normal)): the simplest
non-negative family whose channel mean, spread, and peak are all
directly controllable. Each sample is drawn from its own counter-derived
random stream, so generation is a pure function of the spec and stays
bit-identical under any parallel schedule. Logits come from one fixed
random head shared by both splits, so every logit baseline is nontrivial
on the generated data.

The separation checks quantify how fusion moves the gap between expected
ID and OOD scores:

* the additive identity is exact up to rounding: the shift in the gap
  equals the gap between the mean scale factors (pure linearity);
* the multiplicative bound is statistical and is checked with an
  explicit slack of three standard errors of the product means.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .feature_store import ClassifierHead, Dataset, DatasetManifest
from .validation import check_score_vector

# Counter-stream tags so the head, ID samples, and OOD samples never
# share a random stream regardless of how many samples are drawn.
_STREAM_HEAD = 0
_STREAM_ID = 1
_STREAM_OOD = 2


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a synthetic benchmark, seed included.

    The defaults describe a moderate-overlap benchmark: ID and OOD
    differ mostly in spatial spread, so pooled features (and the energy
    score with them) overlap substantially while spread-sensitive
    channel statistics stay discriminative.
    """

    n_channels: int = 16
    spatial_k: int = 4
    n_samples_id: int = 200
    n_samples_ood: int = 200
    id_channel_mean: float = 0.5
    ood_channel_mean: float = 0.515
    id_spread: float = 0.7
    ood_spread: float = 0.42
    seed: int = 0
    n_classes: int = 10

    def __post_init__(self):
        for name in ("n_channels", "spatial_k", "n_samples_id", "n_samples_ood", "n_classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"synth spec {name} must be positive")
        if self.n_classes < 2:
            raise ValidationError("synth spec needs at least 2 classes")
        for name in ("id_spread", "ood_spread"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"synth spec {name} must be positive")
        for name in ("id_channel_mean", "ood_channel_mean"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"synth spec {name} must be positive")

    def to_json(self) -> str:
        payload = {
            "n_channels": self.n_channels,
            "spatial_k": self.spatial_k,
            "n_samples_id": self.n_samples_id,
            "n_samples_ood": self.n_samples_ood,
            "id_channel_mean": self.id_channel_mean,
            "ood_channel_mean": self.ood_channel_mean,
            "id_spread": self.id_spread,
            "ood_spread": self.ood_spread,
            "seed": self.seed,
            "n_classes": self.n_classes,
        }
        return json.dumps(payload, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        raw = json.loads(text)
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> "SynthSpec":
        return cls.from_json(Path(path).read_text())


def _stream(seed: int, tag: int, index: int) -> np.random.Generator:
    # Philox is counter-based: (tag, index) picks an independent stream
    # under the master key without any sequential state.
    key = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, tag, index]))


def _draw_head(spec: SynthSpec) -> ClassifierHead:
    rng = _stream(spec.seed, _STREAM_HEAD, 0)
    n, c = spec.n_channels, spec.n_classes
    # Weights centered above zero keep energies of non-negative features
    # positive, matching the higher-is-ID convention on synthetic data.
    weights = rng.normal(loc=0.6 / np.sqrt(n), scale=1.0 / np.sqrt(n), size=(n, c))
    bias = rng.normal(loc=0.0, scale=0.1, size=c)
    return ClassifierHead(weights=weights.astype(np.float32), bias=bias.astype(np.float32))


def _draw_split(spec: SynthSpec, stream_tag: int, n_samples: int, mean: float, spread: float,
                head: ClassifierHead, name: str, role: str) -> Dataset:
    n, k = spec.n_channels, spec.spatial_k
    maps = np.empty((n_samples, n, k, k), dtype=np.float32)
    for i in range(n_samples):
        rng = _stream(spec.seed, stream_tag, i)
        raw = rng.normal(loc=mean, scale=spread, size=(n, k, k))
        maps[i] = np.maximum(raw, 0.0).astype(np.float32)
    features = maps.astype(np.float64).mean(axis=(2, 3))
    logits = (features @ head.weights.astype(np.float64) + head.bias.astype(np.float64)).astype(np.float32)
    manifest = DatasetManifest(
        name=name,
        role=role,
        n_samples=n_samples,
        n_channels=n,
        spatial_k=k,
        n_classes=spec.n_classes,
        activations_file=f"{name}.catf",
        logits_file=f"{name}.catl",
        head_file=f"{name}.cath",
    )
    return Dataset(manifest=manifest, activations=maps, logits=logits, head=head)


def generate(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Two labeled in-memory datasets (ID, OOD) sharing one fixed random head."""
    head = _draw_head(spec)
    id_ds = _draw_split(spec, _STREAM_ID, spec.n_samples_id, spec.id_channel_mean,
                        spec.id_spread, head, "synth_id", "id_train")
    ood_ds = _draw_split(spec, _STREAM_OOD, spec.n_samples_ood, spec.ood_channel_mean,
                         spec.ood_spread, head, "synth_ood", "ood")
    return id_ds, ood_ds


def generate_calibration_split(spec: SynthSpec) -> Dataset:
    """An independent ID draw for calibration, derived from the spec's seed."""
    cal_spec = replace(spec, seed=spec.seed + 0x9E3779B9)
    head = _draw_head(spec)  # same head as the evaluation splits
    return _draw_split(cal_spec, _STREAM_ID, cal_spec.n_samples_id, cal_spec.id_channel_mean,
                       cal_spec.id_spread, head, "synth_id_cal", "id_train")


@dataclass
class SeparationReport:
    """Expected-score gaps of the raw, multiplied, and shifted scores.

    `se_delta_scaled` is the standard error of the product-mean gap; it
    feeds the explicit slack of the multiplicative check.
    """

    delta_original: float
    delta_scaled: float
    delta_shift: float
    gamma_bar_in: float
    gamma_bar_out: float
    covariance_in: float
    covariance_out: float
    se_delta_scaled: float
    n_id: int
    n_ood: int


def measure_separations(id_scores, ood_scores, id_scale_factors, ood_scale_factors) -> SeparationReport:
    """Gap statistics between matched-polarity ID and OOD score/factor vectors."""
    s_in = check_score_vector(id_scores, "id_scores")
    s_out = check_score_vector(ood_scores, "ood_scores")
    g_in = check_score_vector(id_scale_factors, "id_scale_factors")
    g_out = check_score_vector(ood_scale_factors, "ood_scale_factors")
    if s_in.shape != g_in.shape or s_out.shape != g_out.shape:
        raise ValidationError("scores and scale factors must pair up per split")
    if not ((g_in > 0).all() and (g_out > 0).all()):
        raise ValidationError("scale factors must be positive")

    prod_in = g_in * s_in
    prod_out = g_out * s_out
    var = lambda v: float(v.var(ddof=1)) if v.size > 1 else 0.0
    cov = lambda a, b: float(np.cov(a, b, ddof=1)[0, 1]) if a.size > 1 else 0.0

    return SeparationReport(
        delta_original=float(s_in.mean() - s_out.mean()),
        delta_scaled=float(prod_in.mean() - prod_out.mean()),
        delta_shift=float((g_in + s_in).mean() - (g_out + s_out).mean()),
        gamma_bar_in=float(g_in.mean()),
        gamma_bar_out=float(g_out.mean()),
        covariance_in=cov(g_in, s_in),
        covariance_out=cov(g_out, s_out),
        se_delta_scaled=float(np.sqrt(var(prod_in) / prod_in.size + var(prod_out) / prod_out.size)),
        n_id=int(s_in.size),
        n_ood=int(s_out.size),
    )


@dataclass
class TheoremVerdict:
    status: str  # "holds" | "assumptions_violated" | "fails"
    detail: str

    def __str__(self) -> str:
        return f"{self.status}: {self.detail}" if self.detail else self.status


# Relative slack for the exact additive identity; it is pure linearity,
# so anything beyond accumulated rounding is a real failure.
_EXACT_RTOL = 1e-9


def verify_theorems(report: SeparationReport, assumption_tolerance: float = 0.05) -> TheoremVerdict:
    """Check the separation guarantees on one measured report.

    Preconditions mirror what the guarantees assume: the mean scale
    factor must be ordered ID >= OOD and bounded below by one, the
    factor/score covariances must be negligible next to the raw gap, and
    the raw gap itself must be positive (the guarantees say nothing about
    a detector that is already inverted). If the preconditions hold, the
    multiplicative gap must reach gamma_bar_out * delta_original minus
    three standard errors, and the additive gap must not shrink.
    """
    r = report
    if r.delta_original <= 0:
        return TheoremVerdict("assumptions_violated", "baseline separation is not positive")
    if not (r.gamma_bar_in >= r.gamma_bar_out):
        return TheoremVerdict(
            "assumptions_violated",
            f"mean-scale ordering: ID mean {r.gamma_bar_in:.6g} < OOD mean {r.gamma_bar_out:.6g}",
        )
    if not (r.gamma_bar_out >= 1.0):
        return TheoremVerdict(
            "assumptions_violated",
            f"scale floor: OOD mean scale {r.gamma_bar_out:.6g} is below one",
        )
    cov_cap = assumption_tolerance * abs(r.delta_original)
    for split, value in (("ID", r.covariance_in), ("OOD", r.covariance_out)):
        if abs(value) > cov_cap:
            return TheoremVerdict(
                "assumptions_violated",
                f"uncorrelatedness: |{split} covariance| {abs(value):.6g} exceeds "
                f"{assumption_tolerance} * |baseline gap| = {cov_cap:.6g}",
            )

    slack = 3.0 * r.se_delta_scaled
    bound = r.gamma_bar_out * r.delta_original
    if r.delta_scaled < bound - slack:
        return TheoremVerdict(
            "fails",
            f"multiplicative gap {r.delta_scaled:.6g} fell below "
            f"{bound:.6g} - 3*SE ({slack:.6g})",
        )
    shift_slack = _EXACT_RTOL * max(abs(r.delta_shift), abs(r.delta_original), 1.0)
    if r.delta_shift < r.delta_original - shift_slack:
        return TheoremVerdict(
            "fails",
            f"additive gap {r.delta_shift:.6g} fell below the baseline gap {r.delta_original:.6g}",
        )
    return TheoremVerdict("holds", "")
