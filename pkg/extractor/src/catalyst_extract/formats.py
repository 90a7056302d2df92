"""Writer for the activation-dump interchange formats.

Implemented independently of the consumer toolkit on purpose: the byte
layout is the contract, and an independent writer proves the format
description is complete. Layout (integers little-endian u32, floats
little-endian f32):

    .catf   b"CATF" | version | n_samples | n_channels | spatial_k | payload
    .catl   b"CATL" | version | n_samples | n_classes  | payload
    .cath   b"CATH" | version | n_channels | n_classes | weights | bias

plus a manifest.json with a stable key order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI")
_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


@dataclass
class DumpInfo:
    """What was written and where; mirrors the manifest contents."""

    name: str
    role: str
    n_samples: int
    n_channels: int
    spatial_k: int
    n_classes: int
    manifest_path: Path


def _pack(magic: bytes, dims: tuple[int, ...], payload: np.ndarray) -> bytes:
    blob = _HEADER.pack(magic, FORMAT_VERSION)
    blob += b"".join(_U32.pack(d) for d in dims)
    return blob + np.ascontiguousarray(payload, dtype=_F32).tobytes()


def write_dump(
    activations: np.ndarray,
    logits: np.ndarray,
    head_weights: np.ndarray | None,
    head_bias: np.ndarray | None,
    out_dir: str | Path,
    name: str,
    role: str,
) -> DumpInfo:
    """Write one split's files and manifest into `out_dir`.

    `activations` is (n_samples, n_channels, k, k), `logits` is
    (n_samples, n_classes), head weights are (n_channels, n_classes).
    """
    activations = np.asarray(activations, dtype=np.float32)
    logits = np.asarray(logits, dtype=np.float32)
    if activations.ndim != 4 or activations.shape[2] != activations.shape[3]:
        raise ValueError(f"activations must be (n, c, k, k) with square grids, got {activations.shape}")
    if logits.ndim != 2 or logits.shape[0] != activations.shape[0]:
        raise ValueError(f"logits {logits.shape} do not pair with activations {activations.shape}")
    n_samples, n_channels, k, _ = activations.shape
    n_classes = logits.shape[1]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    act_file = f"{name}.catf"
    log_file = f"{name}.catl"
    head_file = None
    (out_dir / act_file).write_bytes(_pack(b"CATF", (n_samples, n_channels, k), activations))
    (out_dir / log_file).write_bytes(_pack(b"CATL", (n_samples, n_classes), logits))

    if head_weights is not None:
        head_weights = np.asarray(head_weights, dtype=np.float32)
        head_bias = np.asarray(head_bias, dtype=np.float32)
        if head_weights.shape != (n_channels, n_classes):
            raise ValueError(
                f"head weights must be ({n_channels}, {n_classes}), got {head_weights.shape}"
            )
        if head_bias.shape != (n_classes,):
            raise ValueError(f"head bias must be ({n_classes},), got {head_bias.shape}")
        head_file = f"{name}.cath"
        blob = _HEADER.pack(b"CATH", FORMAT_VERSION)
        blob += _U32.pack(n_channels) + _U32.pack(n_classes)
        blob += np.ascontiguousarray(head_weights, dtype=_F32).tobytes()
        blob += np.ascontiguousarray(head_bias, dtype=_F32).tobytes()
        (out_dir / head_file).write_bytes(blob)

    manifest = {
        "name": name,
        "role": role,
        "n_samples": int(n_samples),
        "n_channels": int(n_channels),
        "spatial_k": int(k),
        "n_classes": int(n_classes),
        "activations_file": act_file,
        "logits_file": log_file,
        "head_file": head_file,
        "format_version": FORMAT_VERSION,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return DumpInfo(
        name=name,
        role=role,
        n_samples=n_samples,
        n_channels=n_channels,
        spatial_k=k,
        n_classes=n_classes,
        manifest_path=manifest_path,
    )
