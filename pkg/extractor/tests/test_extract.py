"""Extraction tests on seeded random-weight backbones (no downloads)."""

import numpy as np
import pytest
import torch

from catalyst_extract import ExtractionJob, add_pixel_noise, extract, load_images, make_proxy
from catalyst_extract.cli import main as cli_main
from catalyst_extract.hooks import build_model, resolve_module

from catalyst_ood import Dataset, load_manifest, validate_dump


@pytest.fixture(scope="module")
def image_file(tmp_path_factory):
    rng = np.random.default_rng(7)
    images = rng.random((10, 3, 64, 64)).astype(np.float32)
    path = tmp_path_factory.mktemp("data") / "images.npy"
    np.save(path, images)
    return path


def job_for(image_file, tmp_path, **overrides) -> ExtractionJob:
    defaults = dict(
        model_name="resnet18",
        dataset_path=image_file,
        output_dir=tmp_path,
        batch_size=4,
        seed=3,
        pretrained=False,
    )
    defaults.update(overrides)
    return ExtractionJob(**defaults)


def test_dump_passes_validation_with_zero_violations(image_file, tmp_path):
    info = extract(job_for(image_file, tmp_path))
    manifest = load_manifest(info.manifest_path)
    assert validate_dump(manifest) == []
    assert info.n_samples == 10
    assert info.spatial_k == 2  # 64px input through a 32x-downsampling backbone


def test_gap_of_dump_matches_models_pooled_features(image_file, tmp_path):
    """Mean over the dumped map equals the backbone's own pooled vector."""
    job = job_for(image_file, tmp_path)
    info = extract(job)
    ds = Dataset.from_manifest(info.manifest_path)
    gap = ds.activations.astype(np.float64).mean(axis=(2, 3))

    model = build_model(job.model_name, pretrained=False, seed=job.seed)
    pooled: list[torch.Tensor] = []
    handle = resolve_module(model, "avgpool").register_forward_hook(
        lambda module, inputs, output: pooled.append(output.detach())
    )
    images = load_images(image_file)
    mean = torch.tensor((0.485, 0.456, 0.406)).view(1, 3, 1, 1)
    std = torch.tensor((0.229, 0.224, 0.225)).view(1, 3, 1, 1)
    with torch.no_grad():
        model((images - mean) / std)
    handle.remove()
    own_pooled = torch.cat(pooled).flatten(1).numpy()
    np.testing.assert_allclose(gap, own_pooled, atol=1e-5)


def test_logits_match_head_projection_of_gap(image_file, tmp_path):
    # resnet's classifier consumes exactly the pooled map, so the dumped
    # head applied to GAP must reproduce the dumped logits.
    info = extract(job_for(image_file, tmp_path))
    ds = Dataset.from_manifest(info.manifest_path)
    gap = ds.activations.astype(np.float64).mean(axis=(2, 3))
    recomputed = gap @ ds.head.weights.astype(np.float64) + ds.head.bias.astype(np.float64)
    np.testing.assert_allclose(recomputed, ds.logits.astype(np.float64), atol=1e-4)


def test_extraction_deterministic(image_file, tmp_path):
    info_a = extract(job_for(image_file, tmp_path / "a"))
    info_b = extract(job_for(image_file, tmp_path / "b"))
    a = (tmp_path / "a" / "features.catf").read_bytes()
    b = (tmp_path / "b" / "features.catf").read_bytes()
    assert a == b
    assert info_a.manifest_path.read_text() == info_b.manifest_path.read_text()


def test_proxy_sigma_zero_matches_clean_extraction(image_file, tmp_path):
    job = job_for(image_file, tmp_path, noise_sigma=0.0)
    clean = extract(job)
    proxy = make_proxy(job)
    clean_bytes = (tmp_path / "features.catf").read_bytes()[20:]
    proxy_bytes = (proxy.manifest_path.parent / "features_proxy.catf").read_bytes()[20:]
    assert clean_bytes == proxy_bytes  # payloads identical; only names differ
    assert proxy.role == "ood"


def test_proxy_noise_changes_features_and_keeps_role(image_file, tmp_path):
    job = job_for(image_file, tmp_path, noise_sigma=0.2)
    extract(job)
    proxy = make_proxy(job)
    assert proxy.role == "ood"
    clean_ds = Dataset.from_manifest(tmp_path / "manifest.json")
    proxy_ds = Dataset.from_manifest(proxy.manifest_path)
    assert clean_ds.activations.tobytes() != proxy_ds.activations.tobytes()
    assert validate_dump(load_manifest(proxy.manifest_path)) == []


def test_noise_clipping_behaviour():
    images = torch.rand(4, 3, 8, 8)
    noisy = add_pixel_noise(images, sigma=0.5, seed=1, clip=True)
    assert noisy.min() >= 0.0 and noisy.max() <= 1.0
    unclipped = add_pixel_noise(images, sigma=0.5, seed=1, clip=False)
    assert unclipped.min() < 0.0 or unclipped.max() > 1.0


def test_densenet_and_mobilenet_nonnegative(image_file, tmp_path):
    for model_name in ("densenet121", "mobilenet_v2"):
        info = extract(job_for(image_file, tmp_path / model_name, model_name=model_name))
        ds = Dataset.from_manifest(info.manifest_path)
        assert (ds.activations >= 0).all(), model_name
        assert validate_dump(load_manifest(info.manifest_path)) == []


def test_non_spatial_layer_rejected(image_file, tmp_path):
    job = job_for(image_file, tmp_path, layer_selector="fc")
    with pytest.raises(ValueError, match="4-D"):
        extract(job)


def test_bad_model_name(image_file, tmp_path):
    with pytest.raises(ValueError, match="unknown model"):
        extract(job_for(image_file, tmp_path, model_name="vit_b_16"))


def test_cli_end_to_end(image_file, tmp_path, capsys):
    rc = cli_main([
        "--model", "resnet18", "--data", str(image_file), "--out", str(tmp_path / "cli"),
        "--with-proxy", "--proxy-sigma", "0.1", "--seed", "5", "--batch-size", "4",
    ])
    assert rc == 0
    assert validate_dump(load_manifest(tmp_path / "cli" / "manifest.json")) == []
    assert validate_dump(load_manifest(tmp_path / "cli" / "proxy" / "manifest.json")) == []
    out = capsys.readouterr().out
    assert "extracted 10 samples" in out


def test_cli_missing_data_errors(tmp_path, capsys):
    rc = cli_main(["--model", "resnet18", "--data", str(tmp_path / "nope.npy"),
                   "--out", str(tmp_path)])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
