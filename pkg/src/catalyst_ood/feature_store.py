"""Bit-exact interchange format for dumped activation maps, logits, and heads.

Binary layout (all integers little-endian u32, all floats little-endian
IEEE-754 f32):

    .catf   magic b"CATF" | version | n_samples | n_channels | spatial_k | payload
    .catl   magic b"CATL" | version | n_samples | n_classes  | payload
    .cath   magic b"CATH" | version | n_channels | n_classes | weights | bias

Activation payloads are dense: sample-major, then channel-major, then
row-major within a channel. Head weights are channel-major (one row of
n_classes weights per channel), followed by the bias vector. A JSON
manifest with stable key order ties the files of one dataset split
together, so dumps diff cleanly and round-trip bit-exactly across hosts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ValidationError

FORMAT_VERSION = 1

MAGIC_ACTIVATIONS = b"CATF"
MAGIC_LOGITS = b"CATL"
MAGIC_HEAD = b"CATH"

ROLES = ("id_train", "id_val", "id_test", "ood")

_HEADER = struct.Struct("<4sI")  # magic, format_version
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")

# Cap per-category coordinates listed by validate_dump; the report stays
# readable while "non-empty iff load fails" is preserved.
_MAX_REPORTED = 10


@dataclass
class ActivationMap:
    """One sample's pre-pooling feature map: n channels x k x k grid."""

    values: np.ndarray  # (n_channels, k, k) float32

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or self.values.shape[1] != self.values.shape[2]:
            raise ValidationError(
                f"activation map must have shape (n_channels, k, k), got {self.values.shape}"
            )
        if min(self.values.shape) < 1:
            raise ValidationError(f"activation map dimensions must be >= 1, got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def spatial(self) -> int:
        return self.values.shape[1]

    def validate(self, allow_negative: bool = False) -> None:
        if not np.isfinite(self.values).all():
            raise ValidationError("activation map contains non-finite values")
        if not allow_negative and (self.values < 0).any():
            raise ValidationError("activation map contains negative values (expected post-ReLU)")


@dataclass
class LogitRecord:
    """One sample's raw classifier outputs over n_classes.

    Dumps store logits as f32; in memory the record keeps whatever float
    precision produced it (head projections stay float64).
    """

    values: np.ndarray  # (n_classes,)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if not np.issubdtype(self.values.dtype, np.floating):
            self.values = self.values.astype(np.float32)
        if self.values.ndim != 1 or self.values.shape[0] < 2:
            raise ValidationError(f"logit record must be 1-D with >= 2 classes, got {self.values.shape}")

    @property
    def classes(self) -> int:
        return self.values.shape[0]


@dataclass
class ClassifierHead:
    """Final linear layer: weights (n_channels, n_classes) and bias (n_classes,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.weights.ndim != 2:
            raise ValidationError(f"head weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ValidationError(
                f"head bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]


@dataclass
class DatasetManifest:
    """Describes one dumped split and the files holding it.

    File paths are stored relative to the manifest's own directory; `root`
    is set on load so they can be resolved without chdir games.
    """

    name: str
    role: str
    n_samples: int
    n_channels: int
    spatial_k: int
    n_classes: int
    activations_file: str
    logits_file: str
    head_file: str | None
    format_version: int = FORMAT_VERSION
    root: Path | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"manifest role must be one of {ROLES}, got {self.role!r}")
        for field_name in ("n_samples", "n_channels", "spatial_k", "n_classes"):
            if getattr(self, field_name) < 1:
                raise ValidationError(f"manifest {field_name} must be positive")

    def resolve(self, filename: str) -> Path:
        base = self.root if self.root is not None else Path(".")
        return Path(base) / filename

    @property
    def activations_path(self) -> Path:
        return self.resolve(self.activations_file)

    @property
    def logits_path(self) -> Path:
        return self.resolve(self.logits_file)

    @property
    def head_path(self) -> Path | None:
        return self.resolve(self.head_file) if self.head_file else None

    def to_json(self) -> str:
        # Explicit key order keeps manifests diffable.
        payload = {
            "name": self.name,
            "role": self.role,
            "n_samples": self.n_samples,
            "n_channels": self.n_channels,
            "spatial_k": self.spatial_k,
            "n_classes": self.n_classes,
            "activations_file": self.activations_file,
            "logits_file": self.logits_file,
            "head_file": self.head_file,
            "format_version": self.format_version,
        }
        return json.dumps(payload, indent=2) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        self.root = path.parent
        return path


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        return DatasetManifest(
            name=raw["name"],
            role=raw["role"],
            n_samples=raw["n_samples"],
            n_channels=raw["n_channels"],
            spatial_k=raw["spatial_k"],
            n_classes=raw["n_classes"],
            activations_file=raw["activations_file"],
            logits_file=raw["logits_file"],
            head_file=raw.get("head_file"),
            format_version=raw.get("format_version", FORMAT_VERSION),
            root=path.parent,
        )
    except KeyError as exc:
        raise FormatError(f"manifest {path} is missing key {exc}") from exc


# -- binary encode/decode ------------------------------------------------


def _encode(magic: bytes, dims: Sequence[int], payload: np.ndarray) -> bytes:
    header = _HEADER.pack(magic, FORMAT_VERSION)
    header += b"".join(_U32.pack(d) for d in dims)
    return header + np.ascontiguousarray(payload, dtype=_F32).tobytes()


def _payload_elements(magic: bytes, dims: Sequence[int]) -> int:
    if magic == MAGIC_ACTIVATIONS:
        n_samples, n_channels, k = dims
        return n_samples * n_channels * k * k
    n_samples, n_classes = dims
    return n_samples * n_classes


def _decode(blob: bytes, magic: bytes, n_dims: int, path: Path) -> tuple[list[int], np.ndarray]:
    fixed = _HEADER.size + n_dims * _U32.size
    if len(blob) < fixed:
        raise FormatError(f"truncated header in {path}: {len(blob)} bytes")
    got_magic, version = _HEADER.unpack_from(blob, 0)
    if got_magic != magic:
        raise FormatError(f"bad magic in {path}: expected {magic!r}, got {got_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} in {path}")
    dims = [_U32.unpack_from(blob, _HEADER.size + i * _U32.size)[0] for i in range(n_dims)]
    expected = _payload_elements(magic, dims)
    payload = blob[fixed:]
    if len(payload) != expected * 4:
        raise FormatError(
            f"truncated payload in {path}: expected {expected * 4} bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=_F32).copy()
    return dims, values


def _read_file(path: Path) -> bytes:
    if not path.exists():
        raise FormatError(f"file not found: {path}")
    return path.read_bytes()


# -- save / load / validate ----------------------------------------------


def save_dump(
    samples: Sequence[ActivationMap],
    logits: Sequence[LogitRecord],
    head: ClassifierHead | None,
    path: str | Path,
    name: str = "dataset",
    role: str = "id_train",
) -> DatasetManifest:
    """Write a dataset split to disk and return its manifest.

    `path` is the manifest location (a `.json` file path, or a directory
    in which `manifest.json` is created); the binary files are written
    alongside it, named after the manifest stem.
    """
    if len(samples) == 0:
        raise ValidationError("empty dataset")
    if len(logits) != len(samples):
        raise ValidationError(f"{len(samples)} samples but {len(logits)} logit records")

    n, k = samples[0].channels, samples[0].spatial
    for i, m in enumerate(samples):
        if (m.channels, m.spatial) != (n, k):
            raise ValidationError(
                f"sample {i} has shape ({m.channels}, {m.spatial}x{m.spatial}), expected ({n}, {k}x{k})"
            )
        m.validate()
    c = logits[0].classes
    for i, rec in enumerate(logits):
        if rec.classes != c:
            raise ValidationError(f"logit record {i} has {rec.classes} classes, expected {c}")
        if not np.isfinite(rec.values).all():
            raise ValidationError(f"logit record {i} contains non-finite values")
    if head is not None and (head.n_channels != n or head.n_classes != c):
        raise ValidationError(
            f"head shape ({head.n_channels}, {head.n_classes}) does not match data ({n}, {c})"
        )

    path = Path(path)
    if path.suffix != ".json":
        path = path / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem if path.stem != "manifest" else name

    act = np.stack([m.values for m in samples])
    log = np.stack([rec.values for rec in logits])

    act_file = f"{stem}.catf"
    log_file = f"{stem}.catl"
    head_file = f"{stem}.cath" if head is not None else None

    (path.parent / act_file).write_bytes(_encode(MAGIC_ACTIVATIONS, (len(samples), n, k), act))
    (path.parent / log_file).write_bytes(_encode(MAGIC_LOGITS, (len(samples), c), log))
    if head is not None:
        blob = _HEADER.pack(MAGIC_HEAD, FORMAT_VERSION)
        blob += _U32.pack(head.n_channels) + _U32.pack(head.n_classes)
        blob += np.ascontiguousarray(head.weights, dtype=_F32).tobytes()
        blob += np.ascontiguousarray(head.bias, dtype=_F32).tobytes()
        (path.parent / head_file).write_bytes(blob)

    manifest = DatasetManifest(
        name=name,
        role=role,
        n_samples=len(samples),
        n_channels=n,
        spatial_k=k,
        n_classes=c,
        activations_file=act_file,
        logits_file=log_file,
        head_file=head_file,
    )
    manifest.save(path)
    return manifest


def _load_head_blob(blob: bytes, path: Path) -> ClassifierHead:
    fixed = _HEADER.size + 2 * _U32.size
    if len(blob) < fixed:
        raise FormatError(f"truncated header in {path}: {len(blob)} bytes")
    got_magic, version = _HEADER.unpack_from(blob, 0)
    if got_magic != MAGIC_HEAD:
        raise FormatError(f"bad magic in {path}: expected {MAGIC_HEAD!r}, got {got_magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} in {path}")
    n = _U32.unpack_from(blob, _HEADER.size)[0]
    c = _U32.unpack_from(blob, _HEADER.size + _U32.size)[0]
    expected = (n * c + c) * 4
    payload = blob[fixed:]
    if len(payload) != expected:
        raise FormatError(f"truncated payload in {path}: expected {expected} bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype=_F32).copy()
    return ClassifierHead(weights=flat[: n * c].reshape(n, c), bias=flat[n * c :])


def load_arrays(
    manifest: DatasetManifest, allow_negative: bool = False
) -> tuple[np.ndarray, np.ndarray, ClassifierHead | None]:
    """Load a split as stacked arrays: activations (N, n, k, k), logits (N, C), head."""
    violations = validate_dump(manifest, allow_negative=allow_negative)
    if violations:
        first = violations[0]
        exc = FormatError if first.code in ("missing", "magic", "truncated", "version", "header") else ValidationError
        raise exc("; ".join(str(v) for v in violations[:3]))

    dims, act_flat = _decode(_read_file(manifest.activations_path), MAGIC_ACTIVATIONS, 3, manifest.activations_path)
    n_samples, n_channels, k = dims
    activations = act_flat.reshape(n_samples, n_channels, k, k)

    dims, log_flat = _decode(_read_file(manifest.logits_path), MAGIC_LOGITS, 2, manifest.logits_path)
    logits = log_flat.reshape(dims[0], dims[1])

    head = None
    if manifest.head_path is not None:
        head = _load_head_blob(_read_file(manifest.head_path), manifest.head_path)
    return activations, logits, head


def load_dump(
    manifest: DatasetManifest, allow_negative: bool = False
) -> tuple[list[ActivationMap], list[LogitRecord], ClassifierHead | None]:
    """Load a split back into per-sample structures (views into one shared buffer)."""
    activations, logits, head = load_arrays(manifest, allow_negative=allow_negative)
    maps = [ActivationMap(activations[i]) for i in range(activations.shape[0])]
    records = [LogitRecord(logits[i]) for i in range(logits.shape[0])]
    return maps, records, head


@dataclass
class Violation:
    """One data-contract breach found by validate_dump; violations are data, not errors."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


def validate_dump(manifest: DatasetManifest, allow_negative: bool = False) -> list[Violation]:
    """Check a dump without raising; the report is empty iff load_dump would succeed."""
    out: list[Violation] = []

    def structural(path: Path, magic: bytes, n_dims: int) -> tuple[list[int], np.ndarray] | None:
        if not path.exists():
            out.append(Violation("missing", f"file not found: {path}"))
            return None
        try:
            return _decode(path.read_bytes(), magic, n_dims, path)
        except FormatError as exc:
            msg = str(exc)
            code = "magic" if "magic" in msg else "version" if "version" in msg else "truncated"
            out.append(Violation(code, msg))
            return None

    act = structural(manifest.activations_path, MAGIC_ACTIVATIONS, 3)
    if act is not None:
        (n_samples, n_channels, k), flat = act
        header = {"n_samples": n_samples, "n_channels": n_channels, "spatial_k": k}
        for field_name, got in header.items():
            want = getattr(manifest, field_name)
            if got != want:
                out.append(
                    Violation("header", f"{field_name} is {got} in header but {want} in manifest")
                )
        if not out:
            values = flat.reshape(n_samples, n_channels, k, k)
            bad = np.argwhere(~np.isfinite(values))
            for sample, channel, row, col in bad[:_MAX_REPORTED]:
                out.append(
                    Violation(
                        "nan",
                        f"non-finite activation at sample {sample}, channel {channel}, "
                        f"cell ({row}, {col})",
                    )
                )
            if len(bad) > _MAX_REPORTED:
                out.append(Violation("nan", f"... {len(bad) - _MAX_REPORTED} more non-finite values"))
            if not allow_negative:
                neg = np.argwhere(values < 0)
                for sample, channel, row, col in neg[:_MAX_REPORTED]:
                    out.append(
                        Violation(
                            "negative",
                            f"negative activation at sample {sample}, channel {channel}, "
                            f"cell ({row}, {col})",
                        )
                    )
                if len(neg) > _MAX_REPORTED:
                    out.append(Violation("negative", f"... {len(neg) - _MAX_REPORTED} more negative values"))

    log = structural(manifest.logits_path, MAGIC_LOGITS, 2)
    if log is not None:
        (n_samples, n_classes), flat = log
        if n_samples != manifest.n_samples:
            out.append(
                Violation("header", f"n_samples is {n_samples} in logit header but {manifest.n_samples} in manifest")
            )
        if n_classes != manifest.n_classes:
            out.append(
                Violation("header", f"n_classes is {n_classes} in logit header but {manifest.n_classes} in manifest")
            )
        bad = np.argwhere(~np.isfinite(flat.reshape(n_samples, n_classes)))
        for sample, cls in bad[:_MAX_REPORTED]:
            out.append(Violation("nan", f"non-finite logit at sample {sample}, class {cls}"))

    if manifest.head_file:
        head_path = manifest.head_path
        if not head_path.exists():
            out.append(Violation("missing", f"file not found: {head_path}"))
        else:
            try:
                head = _load_head_blob(head_path.read_bytes(), head_path)
            except FormatError as exc:
                msg = str(exc)
                code = "magic" if "magic" in msg else "version" if "version" in msg else "truncated"
                out.append(Violation(code, msg))
            else:
                if head.n_channels != manifest.n_channels or head.n_classes != manifest.n_classes:
                    out.append(
                        Violation(
                            "header",
                            f"head is ({head.n_channels}, {head.n_classes}) but manifest says "
                            f"({manifest.n_channels}, {manifest.n_classes})",
                        )
                    )
                if not (np.isfinite(head.weights).all() and np.isfinite(head.bias).all()):
                    out.append(Violation("nan", "head contains non-finite values"))

    return out


@dataclass
class Dataset:
    """A loaded split: stacked arrays plus the manifest that produced them."""

    manifest: DatasetManifest
    activations: np.ndarray  # (N, n, k, k) float32
    logits: np.ndarray  # (N, C) float32
    head: ClassifierHead | None

    @property
    def n_samples(self) -> int:
        return self.activations.shape[0]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest | str | Path, allow_negative: bool = False) -> "Dataset":
        if not isinstance(manifest, DatasetManifest):
            manifest = load_manifest(manifest)
        activations, logits, head = load_arrays(manifest, allow_negative=allow_negative)
        return cls(manifest=manifest, activations=activations, logits=logits, head=head)

    def save(self, path: str | Path) -> DatasetManifest:
        """Write this split through save_dump; returns the on-disk manifest."""
        maps = [ActivationMap(self.activations[i]) for i in range(self.n_samples)]
        records = [LogitRecord(self.logits[i]) for i in range(self.n_samples)]
        manifest = save_dump(
            maps, records, self.head, path, name=self.manifest.name, role=self.manifest.role
        )
        self.manifest = manifest
        return manifest
