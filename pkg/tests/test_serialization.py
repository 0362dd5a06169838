import numpy as np
import pytest

from ddit.errors import WeightFormatError
from ddit.model import DynamicPatchModel
from ddit.serialization import MAGIC, load_weights, save_weights


def test_roundtrip_bytes_identical(tmp_path, small_config):
    model = DynamicPatchModel(small_config, seed=9)
    first = tmp_path / "a.ddit"
    second = tmp_path / "b.ddit"
    save_weights(model, first)
    reloaded = load_weights(first)
    save_weights(reloaded, second)
    assert first.read_bytes() == second.read_bytes()


def test_roundtrip_preserves_values_and_config(tmp_path, small_config):
    model = DynamicPatchModel(small_config, seed=2)
    path = tmp_path / "w.ddit"
    save_weights(model, path)
    reloaded = load_weights(path)
    assert reloaded.config == small_config
    a, b = model.named_arrays(), reloaded.named_arrays()
    assert set(a) == set(b)
    for k in a:
        assert (a[k] == b[k]).all(), k


def test_reloaded_model_same_outputs(tmp_path, small_config):
    model = DynamicPatchModel(small_config, seed=2)
    path = tmp_path / "w.ddit"
    save_weights(model, path)
    reloaded = load_weights(path)
    z = np.random.default_rng(0).standard_normal(
        (small_config.latent_h, small_config.latent_w, small_config.channels)
    ).astype(np.float32)
    for m in small_config.multipliers:
        assert (model.forward(z, 500, 1, m) == reloaded.forward(z, 500, 1, m)).all()


def test_magic_starts_file(tmp_path, small_config):
    path = tmp_path / "w.ddit"
    save_weights(DynamicPatchModel(small_config, seed=0), path)
    assert path.read_bytes()[:4] == MAGIC == b"DDIT"


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ddit"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(WeightFormatError, match="magic"):
        load_weights(path)


def test_truncated_file_rejected(tmp_path, small_config):
    path = tmp_path / "w.ddit"
    save_weights(DynamicPatchModel(small_config, seed=0), path)
    clipped = tmp_path / "clipped.ddit"
    clipped.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(WeightFormatError, match="truncated"):
        load_weights(clipped)


def test_trailing_garbage_rejected(tmp_path, small_config):
    path = tmp_path / "w.ddit"
    save_weights(DynamicPatchModel(small_config, seed=0), path)
    bloated = tmp_path / "bloated.ddit"
    bloated.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(WeightFormatError, match="trailing"):
        load_weights(bloated)


def test_unsupported_version_rejected(tmp_path, small_config):
    path = tmp_path / "w.ddit"
    save_weights(DynamicPatchModel(small_config, seed=0), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    versioned = tmp_path / "versioned.ddit"
    versioned.write_bytes(bytes(raw))
    with pytest.raises(WeightFormatError, match="version"):
        load_weights(versioned)
