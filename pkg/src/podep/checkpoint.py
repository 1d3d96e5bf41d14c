"""Model container: a JSON metadata header followed by raw float32 arrays.

Layout::

    b"PODEPCKPT\\n"
    uint64 little-endian header length
    UTF-8 JSON header (format version, seed, model config, lexicon, parameter shapes)
    each parameter as little-endian float32, C order, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .lexicon import Lexicon
from .model import ModelConfig, Parser

MAGIC = b"PODEPCKPT\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Parser, path: str | Path, extra: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "lexicon": model.lexicon.to_dict(),
        "params": [[name, list(t.shape)] for name, t in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, t in model.params.items():
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a model checkpoint")
        (size,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(size).decode("utf-8"))
    return header, len(MAGIC) + 8 + size


def load_checkpoint(path: str | Path) -> Parser:
    header, offset = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format {header.get('format_version')} is not supported (expected {FORMAT_VERSION})")
    config = ModelConfig.from_dict(header["config"])
    lexicon = Lexicon.from_dict(header["lexicon"])
    model = Parser(config, lexicon, seed=header["seed"])
    expected = [[name, list(t.shape)] for name, t in model.params.items()]
    if expected != header["params"]:
        raise CheckpointError(f"{path}: parameter layout does not match its config and lexicon")
    raw = Path(path).read_bytes()[offset:]
    state = {}
    pos = 0
    for name, shape in header["params"]:
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = 4 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated at parameter {name!r}")
        state[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    model.params.load_state(state)
    return model
