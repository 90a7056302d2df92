import numpy as np
import pytest

from catalyst_extract.formats import write_dump

# The consumer toolkit is the other side of the interchange contract;
# its loader/validator is the ground truth these files must satisfy.
from catalyst_ood import Dataset, load_manifest, validate_dump


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_written_files_validate_cleanly(tmp_path, rng):
    activations = rng.random((6, 5, 3, 3)).astype(np.float32)
    logits = rng.normal(size=(6, 4)).astype(np.float32)
    weights = rng.normal(size=(5, 4)).astype(np.float32)
    bias = rng.normal(size=4).astype(np.float32)
    info = write_dump(activations, logits, weights, bias, tmp_path, "toy", "id_val")
    manifest = load_manifest(info.manifest_path)
    assert validate_dump(manifest) == []


def test_consumer_reads_back_bit_exact(tmp_path, rng):
    activations = rng.random((10, 4, 2, 2)).astype(np.float32)
    logits = rng.normal(size=(10, 3)).astype(np.float32)
    weights = rng.normal(size=(4, 3)).astype(np.float32)
    bias = rng.normal(size=3).astype(np.float32)
    info = write_dump(activations, logits, weights, bias, tmp_path, "bits", "ood")
    ds = Dataset.from_manifest(info.manifest_path)
    assert ds.activations.tobytes() == activations.tobytes()
    assert ds.logits.tobytes() == logits.tobytes()
    assert ds.head.weights.tobytes() == weights.tobytes()
    assert ds.head.bias.tobytes() == bias.tobytes()
    assert ds.manifest.role == "ood"


def test_headless_dump_validates(tmp_path, rng):
    activations = rng.random((3, 2, 2, 2)).astype(np.float32)
    logits = rng.normal(size=(3, 2)).astype(np.float32)
    info = write_dump(activations, logits, None, None, tmp_path, "nohead", "id_test")
    assert validate_dump(load_manifest(info.manifest_path)) == []


def test_shape_errors(tmp_path, rng):
    with pytest.raises(ValueError, match="square"):
        write_dump(rng.random((2, 3, 2, 4)).astype(np.float32),
                   rng.normal(size=(2, 3)), None, None, tmp_path, "bad", "ood")
    with pytest.raises(ValueError, match="pair"):
        write_dump(rng.random((2, 3, 2, 2)).astype(np.float32),
                   rng.normal(size=(5, 3)), None, None, tmp_path, "bad", "ood")
