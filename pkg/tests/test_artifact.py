import json

import numpy as np
import pytest

from chronicle.artifact import artifact_version, crc64, load_model, save_model
from chronicle.errors import ChecksumMismatch, FormatVersionMismatch, IoFailure
from chronicle.model import Model, ModelConfig, TrainConfig, Vocab


def random_model(seed=0):
    vocab = Vocab(
        spellings=["<PAD>", "<UNK>", "C:A", "C:B", "SEP"],
        concept_types={"C:A": "Disorder", "C:B": "Finding"},
    )
    cfg = ModelConfig(n_layers=2, n_heads=2, embedding_dim=8, context_len=12,
                      feedforward_dim=16)
    return Model.init(cfg, vocab, seed=seed)


def test_crc64_known_vector():
    # CRC-64/XZ check value for "123456789"
    assert crc64(b"123456789") == 0x995DC9BBDF1939FA


def test_roundtrip_bit_identical(tmp_path):
    m = random_model(seed=7)
    save_model(m, tmp_path / "art", train_config=TrainConfig(epochs=3, seed=1))
    loaded = load_model(tmp_path / "art")
    assert loaded.config == m.config
    assert loaded.vocab.spellings == m.vocab.spellings
    assert loaded.vocab.concept_types == m.vocab.concept_types
    assert set(loaded.params) == set(m.params)
    for key in m.params:
        assert loaded.params[key].dtype == np.float32
        assert np.array_equal(loaded.params[key], m.params[key])


def test_truncated_weights_fail_checksum(tmp_path):
    m = random_model()
    save_model(m, tmp_path / "art")
    blob = (tmp_path / "art" / "weights.bin").read_bytes()
    (tmp_path / "art" / "weights.bin").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path / "art")


def test_corrupted_byte_fails_checksum(tmp_path):
    m = random_model()
    save_model(m, tmp_path / "art")
    blob = bytearray((tmp_path / "art" / "weights.bin").read_bytes())
    blob[10] ^= 0xFF
    (tmp_path / "art" / "weights.bin").write_bytes(bytes(blob))
    with pytest.raises(ChecksumMismatch):
        load_model(tmp_path / "art")


def test_newer_format_version_rejected(tmp_path):
    m = random_model()
    save_model(m, tmp_path / "art")
    cfg_path = tmp_path / "art" / "config.json"
    config = json.loads(cfg_path.read_text())
    config["format_version"] = 99
    cfg_path.write_text(json.dumps(config))
    with pytest.raises(FormatVersionMismatch):
        load_model(tmp_path / "art")


def test_missing_artifact_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        load_model(tmp_path / "nowhere")


def test_artifact_version_string(tmp_path):
    m = random_model()
    save_model(m, tmp_path / "art")
    v = artifact_version(tmp_path / "art")
    assert v.startswith("1-") and len(v) == 2 + 16


def test_float64_model_saved_as_float32(tmp_path):
    m = random_model().astype(np.float64)
    save_model(m, tmp_path / "art")
    loaded = load_model(tmp_path / "art")
    for key in m.params:
        assert loaded.params[key].dtype == np.float32
        assert np.allclose(loaded.params[key], m.params[key], atol=1e-7)
