"""Character-level word reader: embeddings, filterbank, projection, highway stack."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import engine as E
from .engine import Tensor
from .initializers import init_gaussian
from .lexicon import PAD
from .params import ParamStore


def _default_filters() -> tuple[tuple[int, int], ...]:
    return tuple((k, 50 * k) for k in range(1, 7))


@dataclass
class ReaderConfig:
    char_embed_dim: int = 16
    filter_spec: tuple[tuple[int, int], ...] = field(default_factory=_default_filters)
    projection_dim: int = 512
    highway_layers: int = 3
    gate_bias_init: float = -2.0

    def __post_init__(self):
        self.filter_spec = tuple((int(k), int(c)) for k, c in self.filter_spec)
        if not self.filter_spec:
            raise ValueError("reader needs at least one filter group")
        for k, c in self.filter_spec:
            if k < 1 or c < 1:
                raise ValueError(f"bad filter group (width={k}, count={c})")
        if self.char_embed_dim < 1 or self.projection_dim < 1 or self.highway_layers < 0:
            raise ValueError("reader sizes must be positive")

    @property
    def max_width(self) -> int:
        return max(k for k, _ in self.filter_spec)

    @property
    def total_filters(self) -> int:
        return sum(c for _, c in self.filter_spec)


def pad_words(words: Sequence[Sequence[int]], min_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad fenced char-id sequences with PAD.

    Each word is padded to at least ``min_length``; the returned lengths are
    those per-word padded lengths, so a word's windows never depend on its
    neighbours in the batch.
    """
    lengths = np.array([max(len(w), min_length) for w in words], dtype=np.intp)
    width = int(lengths.max()) if len(words) else min_length
    ids = np.full((len(words), width), PAD, dtype=np.intp)
    for i, w in enumerate(words):
        ids[i, :len(w)] = w
    return ids, lengths


class Reader:
    def __init__(self, config: ReaderConfig, n_chars: int, params: ParamStore,
                 rng: np.random.Generator, prefix: str = "reader"):
        self.config = config
        c = config
        self.embedding = params.add(f"{prefix}.char_embedding", init_gaussian((n_chars, c.char_embed_dim), rng))
        self.filters = []
        for k, count in c.filter_spec:
            w = params.add(f"{prefix}.filter{k}.weight", init_gaussian((k, c.char_embed_dim, count), rng))
            b = params.add(f"{prefix}.filter{k}.bias", np.zeros(count))
            self.filters.append((k, w, b))
        self.proj_w = params.add(f"{prefix}.projection.weight",
                                 init_gaussian((c.total_filters, c.projection_dim), rng))
        self.proj_b = params.add(f"{prefix}.projection.bias", np.zeros(c.projection_dim))
        self.highway = []
        p = c.projection_dim
        for i in range(c.highway_layers):
            self.highway.append((
                params.add(f"{prefix}.highway{i}.weight", init_gaussian((p, p), rng)),
                params.add(f"{prefix}.highway{i}.bias", np.zeros(p)),
                params.add(f"{prefix}.highway{i}.gate_weight", init_gaussian((p, p), rng)),
                params.add(f"{prefix}.highway{i}.gate_bias", np.full(p, c.gate_bias_init)),
            ))

    def embed_chars(self, ids) -> Tensor:
        """Character embedding matrix; rows are positions (``(..., T, D)``)."""
        return E.take(self.embedding, ids, axis=0)

    def filter_responses(self, chars: Tensor, lengths) -> Tensor:
        """Max-over-time of tanh filter activations, ``(B, total_filters)``."""
        lengths = np.asarray(lengths)
        outs = []
        for k, w, b in self.filters:
            act = E.tanh(E.conv_over_time(chars, w, b))
            outs.append(E.max_over_time(act, lengths - k + 1))
        return E.concat(outs, axis=-1)

    def highway_stack(self, x: Tensor) -> Tensor:
        for w, b, gw, gb in self.highway:
            t = E.sigmoid(x @ gw + gb)
            g = E.tanh(x @ w + b)
            x = x + t * (g - x)
        return x

    def forward(self, words: Sequence[Sequence[int]]) -> Tensor:
        """Fenced char-id sequences -> word embeddings ``(B, projection_dim)``."""
        ids, lengths = pad_words(words, self.config.max_width)
        chars = self.embed_chars(ids)
        responses = self.filter_responses(chars, lengths)
        return self.highway_stack(responses @ self.proj_w + self.proj_b)

    def parameters(self) -> list[Tensor]:
        out = [self.embedding]
        for _, w, b in self.filters:
            out += [w, b]
        out += [self.proj_w, self.proj_b]
        for layer in self.highway:
            out += list(layer)
        return out
