"""Model persistence: a directory with config.json, vocab.json, and
weights.bin (little-endian float32 tensors plus a trailing CRC64)."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import nn
from .errors import ChecksumMismatch, FormatVersionMismatch, IoFailure
from .model import Model, ModelConfig, TrainConfig, Vocab

FORMAT_VERSION = 1

_CRC64_POLY = 0xC96C5795D7870F42  # reflected ECMA-182
_CRC64_TABLE: list[int] = []
for _i in range(256):
    _crc = _i
    for _ in range(8):
        _crc = (_crc >> 1) ^ _CRC64_POLY if _crc & 1 else _crc >> 1
    _CRC64_TABLE.append(_crc)


def crc64(data: bytes) -> int:
    crc = 0xFFFFFFFFFFFFFFFF
    for b in data:
        crc = _CRC64_TABLE[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


def save_model(
    model: Model, path: str | Path, train_config: TrainConfig | None = None
) -> None:
    """Write the artifact directory; float64 models are stored as float32."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        order = nn.tensor_names(model.config.n_layers)
        config = {
            "format_version": FORMAT_VERSION,
            "model": asdict(model.config),
            "train": asdict(train_config) if train_config else None,
            "tensors": [[name, list(model.params[name].shape)] for name in order],
        }
        payload = b"".join(
            np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
            for name in order
        )
        checksum = crc64(payload).to_bytes(8, "little")
        (path / "config.json").write_text(
            json.dumps(config, indent=2) + "\n", encoding="utf-8"
        )
        (path / "vocab.json").write_text(
            json.dumps(
                {
                    "spellings": model.vocab.spellings,
                    "concept_types": model.vocab.concept_types,
                    "pad_index": model.vocab.PAD,
                    "unk_index": model.vocab.UNK,
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        (path / "weights.bin").write_bytes(payload + checksum)
    except OSError as exc:
        raise IoFailure(f"cannot write model artifact at {path}: {exc}") from exc


def load_model(path: str | Path) -> Model:
    """Read and verify an artifact directory; raises on version or
    checksum mismatch."""
    path = Path(path)
    try:
        config = json.loads((path / "config.json").read_text(encoding="utf-8"))
        vocab_obj = json.loads((path / "vocab.json").read_text(encoding="utf-8"))
        blob = (path / "weights.bin").read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model artifact at {path}: {exc}") from exc

    version = config.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"artifact format {version!r}; this build reads {FORMAT_VERSION}"
        )

    if len(blob) < 8:
        raise ChecksumMismatch("weights.bin is too short to hold a checksum")
    payload, stored = blob[:-8], int.from_bytes(blob[-8:], "little")
    if crc64(payload) != stored:
        raise ChecksumMismatch("weights.bin failed its CRC64 check")

    expected = sum(
        4 * int(np.prod(shape)) for _, shape in config["tensors"]
    )
    if len(payload) != expected:
        raise ChecksumMismatch(
            f"weights payload holds {len(payload)} bytes; config lists {expected}"
        )

    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in config["tensors"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset)
        params[name] = arr.reshape(shape).copy()
        offset += 4 * n

    vocab = Vocab(
        spellings=list(vocab_obj["spellings"]),
        concept_types=dict(vocab_obj.get("concept_types", {})),
    )
    model_config = ModelConfig(**config["model"])
    return Model(config=model_config, vocab=vocab, params=params)


def artifact_version(path: str | Path) -> str:
    """Short identity string for a stored artifact (format + weight CRC)."""
    blob = (Path(path) / "weights.bin").read_bytes()
    if len(blob) < 8:
        raise ChecksumMismatch("weights.bin is too short to hold a checksum")
    return f"{FORMAT_VERSION}-{blob[-8:].hex()}"
