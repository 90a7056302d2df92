"""Post-hoc baseline scores computable from dumped features.

Implements the score families that need nothing beyond an activation
dump: softmax confidence (MSP), the log-sum-exp energy score, feature
clipping (ReAct), class-wise weight sparsification (DICE), prune-and-
rescale feature shaping (ASH-S), global exponential rescaling (SCALE),
and an exact k-nearest-neighbor distance score.

All logit-derived scores follow the higher-is-ID convention. The KNN
distance score is the one inverted family (higher means more OOD);
callers must consult `higher_is_id()` rather than assume.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel_stats import ChannelStatisticKind, StatVector
from .errors import DegenerateDataError, FormatError, ValidationError
from .feature_store import FORMAT_VERSION, ClassifierHead, LogitRecord
from .scaling import percentile

MAGIC_DICE_MASK = b"CATM"
MAGIC_KNN_INDEX = b"CATK"

_HEADER = struct.Struct("<4sI")
_U32 = struct.Struct("<I")
_F32LE = np.dtype("<f4")


# -- baseline kinds --------------------------------------------------------


@dataclass(frozen=True)
class BaselineKind:
    """Marker base for a scoring method plus its hyperparameters."""

    @property
    def label(self) -> str:
        raise NotImplementedError

    @property
    def needs_head(self) -> bool:
        return False

    @property
    def higher_is_id(self) -> bool:
        return True


@dataclass(frozen=True)
class Msp(BaselineKind):
    @property
    def label(self) -> str:
        return "msp"


@dataclass(frozen=True)
class Energy(BaselineKind):
    @property
    def label(self) -> str:
        return "energy"


@dataclass(frozen=True)
class ReAct(BaselineKind):
    """Feature clipping at `clip_c`; if None, fit resolves it from `clip_percentile`."""

    clip_c: float | None = None
    clip_percentile: float = 90.0

    def __post_init__(self):
        if self.clip_c is not None and not self.clip_c > 0:
            raise ValidationError(f"clip threshold must be > 0, got {self.clip_c}")
        if not (0.0 < self.clip_percentile <= 100.0):
            raise ValidationError(f"clip percentile must be in (0, 100], got {self.clip_percentile}")

    @property
    def label(self) -> str:
        return "react"

    @property
    def needs_head(self) -> bool:
        return True


@dataclass(frozen=True)
class Dice(BaselineKind):
    sparsity_p: float = 70.0

    def __post_init__(self):
        if not (0.0 <= self.sparsity_p < 100.0):
            raise ValidationError(f"sparsity must be in [0, 100), got {self.sparsity_p}")

    @property
    def label(self) -> str:
        return "dice"

    @property
    def needs_head(self) -> bool:
        return True


@dataclass(frozen=True)
class ReActDice(BaselineKind):
    """ReAct clipping followed by DICE weight sparsification."""

    clip_c: float | None = None
    clip_percentile: float = 95.0
    sparsity_p: float = 70.0

    def __post_init__(self):
        if self.clip_c is not None and not self.clip_c > 0:
            raise ValidationError(f"clip threshold must be > 0, got {self.clip_c}")
        if not (0.0 < self.clip_percentile <= 100.0):
            raise ValidationError(f"clip percentile must be in (0, 100], got {self.clip_percentile}")
        if not (0.0 <= self.sparsity_p < 100.0):
            raise ValidationError(f"sparsity must be in [0, 100), got {self.sparsity_p}")

    @property
    def label(self) -> str:
        return "react_dice"

    @property
    def needs_head(self) -> bool:
        return True


@dataclass(frozen=True)
class Ash(BaselineKind):
    prune_p: float = 90.0

    def __post_init__(self):
        if not (0.0 < self.prune_p < 100.0):
            raise ValidationError(f"prune percentile must be in (0, 100), got {self.prune_p}")

    @property
    def label(self) -> str:
        return "ash"

    @property
    def needs_head(self) -> bool:
        return True


@dataclass(frozen=True)
class Scale(BaselineKind):
    prune_p: float = 85.0

    def __post_init__(self):
        if not (0.0 < self.prune_p < 100.0):
            raise ValidationError(f"prune percentile must be in (0, 100), got {self.prune_p}")

    @property
    def label(self) -> str:
        return "scale"

    @property
    def needs_head(self) -> bool:
        return True


@dataclass(frozen=True)
class Knn(BaselineKind):
    k: int = 50

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")

    @property
    def label(self) -> str:
        return "knn"

    @property
    def higher_is_id(self) -> bool:
        # Distance score: far from the stored ID features means more OOD.
        return False


def parse_baseline(name: str, **params) -> BaselineKind:
    """Build a BaselineKind from its CLI/config name."""
    registry = {
        "msp": Msp,
        "energy": Energy,
        "react": ReAct,
        "dice": Dice,
        "react_dice": ReActDice,
        "ash": Ash,
        "scale": Scale,
        "knn": Knn,
    }
    key = name.lower().replace("-", "_")
    if key not in registry:
        raise ValidationError(f"unknown baseline {name!r}; expected one of: {', '.join(registry)}")
    return registry[key](**params)


# -- elementary scores -----------------------------------------------------


def _logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def energy(logits: LogitRecord | np.ndarray) -> float:
    """log sum exp of the logits, computed with max subtraction for stability."""
    z = logits.values if isinstance(logits, LogitRecord) else np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise ValidationError(f"energy expects a 1-D logit vector, got shape {z.shape}")
    return float(_logsumexp_rows(z[None])[0])


def msp(logits: LogitRecord | np.ndarray) -> float:
    """Maximum softmax probability; shift-invariant and in (0, 1]."""
    z = logits.values if isinstance(logits, LogitRecord) else np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValidationError(f"msp expects a 1-D logit vector with >= 2 classes, got shape {z.shape}")
    return float(_softmax_rows(z[None]).max())


def apply_head(feature: StatVector | np.ndarray, head: ClassifierHead) -> LogitRecord:
    """Project a pooled feature vector through the final linear layer."""
    h = _as_mean_feature(feature)
    if h.shape[0] != head.n_channels:
        raise ValidationError(f"feature has {h.shape[0]} channels, head expects {head.n_channels}")
    logits = h @ head.weights.astype(np.float64) + head.bias.astype(np.float64)
    return LogitRecord(values=logits)


def _as_mean_feature(feature: StatVector | np.ndarray) -> np.ndarray:
    if isinstance(feature, StatVector):
        if feature.kind is not ChannelStatisticKind.MEAN:
            raise ValidationError(
                f"feature-space baselines consume the mean (GAP) statistic, got {feature.kind.value}"
            )
        return feature.values
    return np.asarray(feature, dtype=np.float64)


def react_clip(feature: StatVector, c_react: float) -> StatVector:
    """Element-wise min(h, c); the downstream score is energy(head(clipped))."""
    if not c_react > 0:
        raise ValidationError(f"clip threshold must be > 0, got {c_react}")
    h = _as_mean_feature(feature)
    return StatVector(values=np.minimum(h, c_react), kind=ChannelStatisticKind.MEAN)


# -- DICE ------------------------------------------------------------------


@dataclass
class DiceMask:
    """Boolean keep-mask over (n_channels, n_classes) head weights."""

    mask: np.ndarray
    sparsity_p: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {self.mask.shape}")


def _kept_per_class(sparsity_p: float, n_channels: int) -> int:
    # round() with half-up ties, for determinism across platforms.
    return int(np.floor((1.0 - sparsity_p / 100.0) * n_channels + 0.5))


def dice_build(head: ClassifierHead, id_features: Sequence[StatVector], sparsity_p: float) -> DiceMask:
    """Keep, per class, the top-(100-p)% channels by mean contribution w_c * h.

    Ties break toward the lower channel index.
    """
    if len(id_features) == 0:
        raise ValidationError("dice calibration needs at least one feature vector")
    if not (0.0 <= sparsity_p < 100.0):
        raise ValidationError(f"sparsity must be in [0, 100), got {sparsity_p}")
    feats = np.stack([_as_mean_feature(f) for f in id_features])
    if feats.shape[1] != head.n_channels:
        raise ValidationError(f"features have {feats.shape[1]} channels, head expects {head.n_channels}")

    mean_h = feats.mean(axis=0)
    contribution = head.weights.astype(np.float64) * mean_h[:, None]  # (n, C)

    n, c = contribution.shape
    keep = _kept_per_class(sparsity_p, n)
    mask = np.zeros((n, c), dtype=bool)
    if keep > 0:
        # Stable sort of -V gives descending value with lower-index ties first.
        order = np.argsort(-contribution, axis=0, kind="stable")
        top = order[:keep]
        mask[top, np.arange(c)[None, :]] = True
    return DiceMask(mask=mask, sparsity_p=float(sparsity_p))


def dice_score(feature: StatVector | np.ndarray, head: ClassifierHead, mask: DiceMask) -> float:
    """Energy of the sparsified head's logits: (M * W)^T h + b."""
    h = _as_mean_feature(feature)
    if mask.mask.shape != head.weights.shape:
        raise ValidationError(f"mask shape {mask.mask.shape} does not match head {head.weights.shape}")
    if h.shape[0] != head.n_channels:
        raise ValidationError(f"feature has {h.shape[0]} channels, head expects {head.n_channels}")
    masked = head.weights.astype(np.float64) * mask.mask
    logits = h @ masked + head.bias.astype(np.float64)
    return float(_logsumexp_rows(logits[None])[0])


# -- ASH-S / SCALE ---------------------------------------------------------


def _shape_prep(feature: StatVector | np.ndarray, prune_p: float) -> tuple[np.ndarray, float, float, np.ndarray]:
    h = _as_mean_feature(feature)
    if (h < 0).any():
        raise ValidationError("feature shaping expects non-negative activations")
    if not (0.0 < prune_p < 100.0):
        raise ValidationError(f"prune percentile must be in (0, 100), got {prune_p}")
    t = percentile(h, prune_p)
    s1 = float(h.sum())
    survivors = h >= t
    s2 = float(h[survivors].sum())
    if s2 == 0.0:
        raise DegenerateDataError(f"all activations pruned at p={prune_p}; prune percentile too high for this sample")
    return h, s1, s2, survivors


def ash_s(feature: StatVector, prune_p: float) -> StatVector:
    """Prune below the sample's p-th percentile, rescale survivors by exp(s1/s2)."""
    h, s1, s2, survivors = _shape_prep(feature, prune_p)
    out = np.where(survivors, h * np.exp(s1 / s2), 0.0)
    return StatVector(values=out, kind=ChannelStatisticKind.MEAN)


def scale_shape(feature: StatVector, prune_p: float) -> StatVector:
    """Rescale the whole feature by exp(s1/s2) computed over the top-p survivors."""
    h, s1, s2, _ = _shape_prep(feature, prune_p)
    return StatVector(values=h * np.exp(s1 / s2), kind=ChannelStatisticKind.MEAN)


# -- KNN ---------------------------------------------------------------------


@dataclass
class KnnIndex:
    """Exact (brute-force) neighbor index over raw, un-normalized features."""

    features: np.ndarray  # (n_train, n_channels) float64
    k: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValidationError(f"index features must be 2-D, got shape {self.features.shape}")

    @property
    def n_train(self) -> int:
        return self.features.shape[0]


def knn_build(id_train_features: Sequence[StatVector] | np.ndarray, k: int) -> KnnIndex:
    """Store the raw ID features for exact neighbor queries."""
    if isinstance(id_train_features, np.ndarray):
        feats = np.asarray(id_train_features, dtype=np.float64)
    else:
        if len(id_train_features) == 0:
            raise ValidationError("knn index needs at least one stored feature")
        feats = np.stack([_as_mean_feature(f) for f in id_train_features])
    if not np.isfinite(feats).all():
        raise ValidationError("knn index features must be finite")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if feats.shape[0] < k:
        raise ValidationError(f"need at least k={k} stored features, got {feats.shape[0]}")
    return KnnIndex(features=feats, k=int(k))


def knn_score(feature: StatVector | np.ndarray, index: KnnIndex) -> float:
    """Mean Euclidean distance to the k nearest stored features. Higher = more OOD."""
    q = _as_mean_feature(feature)
    if q.shape[0] != index.features.shape[1]:
        raise ValidationError(f"query has {q.shape[0]} channels, index stores {index.features.shape[1]}")
    d2 = ((index.features - q) ** 2).sum(axis=1)
    k = index.k
    nearest = np.partition(d2, k - 1)[:k]
    return float(np.sqrt(nearest).mean())


# -- mask / index serialization ---------------------------------------------


def save_dice_mask(mask: DiceMask, path: str | Path) -> Path:
    path = Path(path)
    n, c = mask.mask.shape
    blob = _HEADER.pack(MAGIC_DICE_MASK, FORMAT_VERSION)
    blob += _U32.pack(n) + _U32.pack(c)
    blob += np.float32(mask.sparsity_p).astype(_F32LE).tobytes()
    blob += mask.mask.astype(np.uint8).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return path


def load_dice_mask(path: str | Path) -> DiceMask:
    path = Path(path)
    blob = path.read_bytes()
    fixed = _HEADER.size + 2 * _U32.size + 4
    if len(blob) < fixed:
        raise FormatError(f"truncated header in {path}")
    magic, version = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC_DICE_MASK:
        raise FormatError(f"bad magic in {path}: expected {MAGIC_DICE_MASK!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} in {path}")
    n = _U32.unpack_from(blob, _HEADER.size)[0]
    c = _U32.unpack_from(blob, _HEADER.size + _U32.size)[0]
    sparsity = float(np.frombuffer(blob, dtype=_F32LE, count=1, offset=_HEADER.size + 2 * _U32.size)[0])
    payload = blob[fixed:]
    if len(payload) != n * c:
        raise FormatError(f"truncated payload in {path}: expected {n * c} bytes, got {len(payload)}")
    mask = np.frombuffer(payload, dtype=np.uint8).reshape(n, c).astype(bool)
    return DiceMask(mask=mask, sparsity_p=sparsity)


def save_knn_index(index: KnnIndex, path: str | Path) -> Path:
    path = Path(path)
    n_train, n_channels = index.features.shape
    blob = _HEADER.pack(MAGIC_KNN_INDEX, FORMAT_VERSION)
    blob += _U32.pack(n_train) + _U32.pack(n_channels) + _U32.pack(index.k)
    blob += np.ascontiguousarray(index.features, dtype=_F32LE).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    return path


def load_knn_index(path: str | Path) -> KnnIndex:
    path = Path(path)
    blob = path.read_bytes()
    fixed = _HEADER.size + 3 * _U32.size
    if len(blob) < fixed:
        raise FormatError(f"truncated header in {path}")
    magic, version = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC_KNN_INDEX:
        raise FormatError(f"bad magic in {path}: expected {MAGIC_KNN_INDEX!r}, got {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} in {path}")
    n_train = _U32.unpack_from(blob, _HEADER.size)[0]
    n_channels = _U32.unpack_from(blob, _HEADER.size + _U32.size)[0]
    k = _U32.unpack_from(blob, _HEADER.size + 2 * _U32.size)[0]
    payload = blob[fixed:]
    if len(payload) != n_train * n_channels * 4:
        raise FormatError(f"truncated payload in {path}")
    feats = np.frombuffer(payload, dtype=_F32LE).reshape(n_train, n_channels)
    return KnnIndex(features=feats, k=int(k))


# -- fitted scorer -----------------------------------------------------------


@dataclass
class FittedBaseline:
    """A baseline with its ID-calibrated state, ready to score samples.

    Built once from the ID training split; scoring is pure and
    embarrassingly parallel across samples afterwards.
    """

    kind: BaselineKind
    head: ClassifierHead | None = None
    react_c: float | None = None
    dice_mask: DiceMask | None = None
    knn_index: KnnIndex | None = None

    @property
    def higher_is_id(self) -> bool:
        return self.kind.higher_is_id

    def score_batch(self, features: np.ndarray, logits: np.ndarray | None) -> np.ndarray:
        """Score a batch: features (N, n) GAP vectors, logits (N, C) dumped outputs."""
        features = np.asarray(features, dtype=np.float64)
        kind = self.kind
        if isinstance(kind, Msp):
            return _softmax_rows(_required(logits, "msp")).max(axis=1)
        if isinstance(kind, Energy):
            return _logsumexp_rows(_required(logits, "energy"))
        if isinstance(kind, ReAct):
            clipped = np.minimum(features, self.react_c)
            return _logsumexp_rows(self._project(clipped))
        if isinstance(kind, Dice):
            return _logsumexp_rows(self._project(features, self.dice_mask))
        if isinstance(kind, ReActDice):
            clipped = np.minimum(features, self.react_c)
            return _logsumexp_rows(self._project(clipped, self.dice_mask))
        if isinstance(kind, Ash):
            shaped = _shape_batch(features, kind.prune_p, zero_pruned=True)
            return _logsumexp_rows(self._project(shaped))
        if isinstance(kind, Scale):
            shaped = _shape_batch(features, kind.prune_p, zero_pruned=False)
            return _logsumexp_rows(self._project(shaped))
        if isinstance(kind, Knn):
            return np.array([knn_score(f, self.knn_index) for f in features])
        raise ValidationError(f"unhandled baseline kind {kind!r}")

    def score_one(self, feature: np.ndarray, logits: np.ndarray | None) -> float:
        log = None if logits is None else np.asarray(logits, dtype=np.float64)[None]
        return float(self.score_batch(np.asarray(feature, dtype=np.float64)[None], log)[0])

    def _project(self, features: np.ndarray, mask: DiceMask | None = None) -> np.ndarray:
        if self.head is None:
            raise ValidationError(f"baseline {self.kind.label!r} needs a classifier head")
        w = self.head.weights.astype(np.float64)
        if mask is not None:
            w = w * mask.mask
        return features @ w + self.head.bias.astype(np.float64)


def _required(logits: np.ndarray | None, label: str) -> np.ndarray:
    if logits is None:
        raise ValidationError(f"baseline {label!r} needs dumped logits")
    return np.asarray(logits, dtype=np.float64)


def _shape_batch(features: np.ndarray, prune_p: float, zero_pruned: bool) -> np.ndarray:
    """Row-wise prune/rescale, using the repo's percentile convention per row."""
    if (features < 0).any():
        raise ValidationError("feature shaping expects non-negative activations")
    n = features.shape[1]
    s = np.sort(features, axis=1)
    pos = (n - 1) * (prune_p / 100.0)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    t = s[:, lo] + (s[:, hi] - s[:, lo]) * frac
    survivors = features >= t[:, None]
    s1 = features.sum(axis=1)
    s2 = np.where(survivors, features, 0.0).sum(axis=1)
    dead = np.nonzero(s2 == 0.0)[0]
    if dead.size:
        raise DegenerateDataError(f"all activations pruned at p={prune_p} for sample {dead[0]}")
    factor = np.exp(s1 / s2)[:, None]
    if zero_pruned:
        return np.where(survivors, features * factor, 0.0)
    return features * factor


def fit_baseline(
    kind: BaselineKind,
    id_train_features: np.ndarray | None,
    head: ClassifierHead | None,
) -> FittedBaseline:
    """Resolve a baseline's ID-dependent state (clip threshold, mask, index)."""
    fitted = FittedBaseline(kind=kind, head=head)
    if kind.needs_head and head is None:
        raise ValidationError(f"baseline {kind.label!r} needs a classifier head but none was provided")

    if isinstance(kind, (ReAct, ReActDice)):
        if kind.clip_c is not None:
            fitted.react_c = float(kind.clip_c)
        else:
            if id_train_features is None or len(id_train_features) == 0:
                raise ValidationError("react clip calibration needs ID training features")
            c = percentile(np.asarray(id_train_features, dtype=np.float64).ravel(), kind.clip_percentile)
            if not c > 0:
                raise DegenerateDataError(f"react clip threshold is {c} at p={kind.clip_percentile}")
            fitted.react_c = c
    if isinstance(kind, (Dice, ReActDice)):
        if id_train_features is None or len(id_train_features) == 0:
            raise ValidationError("dice mask calibration needs ID training features")
        vectors = [StatVector(values=row, kind=ChannelStatisticKind.MEAN) for row in id_train_features]
        fitted.dice_mask = dice_build(head, vectors, kind.sparsity_p)
    if isinstance(kind, Knn):
        if id_train_features is None or len(id_train_features) == 0:
            raise ValidationError("knn index needs ID training features")
        fitted.knn_index = knn_build(np.asarray(id_train_features, dtype=np.float64), kind.k)
    return fitted
