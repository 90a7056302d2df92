"""Extraction jobs: run images through a frozen CNN and dump features.

Input images are float tensors in [0, 1]. Two sources are supported: a
directory of image files, or a `.npy` array of shape (n, 3, h, w) which
skips decoding entirely (and is what the tests use). Standard channel
normalization is applied after any proxy noise, so noise is injected in
pixel space exactly where the images live.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .formats import DumpInfo, write_dump
from .hooks import MapCapture, build_model, extract_head, hook_spec, resolve_module

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}


@dataclass
class ExtractionJob:
    model_name: str
    dataset_path: str | Path
    output_dir: str | Path
    layer_selector: str | None = None  # None: the registry's pre-pooling stage
    batch_size: int = 32
    noise_sigma: float = 0.2
    device: str = "cpu"
    seed: int = 0
    pretrained: bool = False
    limit: int | None = None
    clip_noisy_pixels: bool = True
    name: str = "features"
    role: str = "id_val"

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def load_images(path: str | Path, limit: int | None = None) -> torch.Tensor:
    """Images as a float32 tensor (n, 3, h, w) in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset path not found: {path}")
    if path.suffix == ".npy":
        array = np.load(path)
        if array.ndim != 4 or array.shape[1] != 3:
            raise ValueError(f"expected an (n, 3, h, w) array, got {array.shape}")
        images = torch.from_numpy(np.asarray(array, dtype=np.float32))
    elif path.is_dir():
        from torchvision import transforms
        from PIL import Image

        to_tensor = transforms.Compose([
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
        ])
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"no image files under {path}")
        if limit is not None:
            files = files[:limit]
        images = torch.stack([to_tensor(Image.open(f).convert("RGB")) for f in files])
    else:
        raise ValueError(f"dataset path must be a directory or a .npy file: {path}")
    if limit is not None:
        images = images[:limit]
    return images.clamp(0.0, 1.0)


def add_pixel_noise(images: torch.Tensor, sigma: float, seed: int, clip: bool = True) -> torch.Tensor:
    """Pixel-wise Gaussian corruption of [0, 1] images; clipped back by default."""
    if sigma == 0.0:
        return images.clone()
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn(images.shape, generator=generator) * sigma
    noisy = images + noise
    return noisy.clamp(0.0, 1.0) if clip else noisy


def _normalize(images: torch.Tensor) -> torch.Tensor:
    mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
    return (images - mean) / std


def run_model(job: ExtractionJob, images: torch.Tensor) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Forward all images; returns (maps, logits, head_weights, head_bias)."""
    spec = hook_spec(job.model_name)
    model = build_model(job.model_name, pretrained=job.pretrained, seed=job.seed).to(job.device)
    capture = MapCapture(resolve_module(model, job.layer_selector or spec.module_path),
                         apply_relu=spec.apply_relu if job.layer_selector is None else False)
    maps: list[torch.Tensor] = []
    logits: list[torch.Tensor] = []
    expected_shape: tuple[int, ...] | None = None
    normalized = _normalize(images)
    try:
        with torch.no_grad():
            for start in range(0, normalized.shape[0], job.batch_size):
                batch = normalized[start : start + job.batch_size].to(job.device)
                out = model(batch)
                fmap = capture.take()
                if expected_shape is None:
                    expected_shape = tuple(fmap.shape[1:])
                elif tuple(fmap.shape[1:]) != expected_shape:
                    raise ValueError(
                        f"feature dimensions drifted across batches: {tuple(fmap.shape[1:])} "
                        f"vs {expected_shape} at sample {start}"
                    )
                maps.append(fmap.cpu())
                logits.append(out.detach().cpu())
    finally:
        capture.remove()

    activations = torch.cat(maps).numpy().astype(np.float32)
    if (activations < 0).any():
        raise ValueError(
            "captured maps contain negative values; the selected layer is not post-activation "
            "(pick a post-ReLU hook point)"
        )
    weights, bias = extract_head(model, job.model_name)
    return activations, torch.cat(logits).numpy().astype(np.float32), weights, bias


def extract(job: ExtractionJob) -> DumpInfo:
    """Dump one split (activation maps, logits, classifier head, manifest)."""
    images = load_images(job.dataset_path, job.limit)
    activations, logits, weights, bias = run_model(job, images)
    return write_dump(activations, logits, weights, bias, job.output_dir, job.name, job.role)


def make_proxy(job: ExtractionJob, id_val_path: str | Path | None = None) -> DumpInfo:
    """Build the noise-corrupted proxy split from ID validation images."""
    source = id_val_path if id_val_path is not None else job.dataset_path
    images = load_images(source, job.limit)
    noisy = add_pixel_noise(images, job.noise_sigma, job.seed, clip=job.clip_noisy_pixels)
    proxy_job = replace(job, name=f"{job.name}_proxy", role="ood")
    activations, logits, weights, bias = run_model(proxy_job, noisy)
    out_dir = Path(job.output_dir) / "proxy"
    return write_dump(activations, logits, weights, bias, out_dir, proxy_job.name, "ood")
