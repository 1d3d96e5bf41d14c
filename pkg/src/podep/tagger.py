"""Bidirectional GRU tagger with additive direction fusion and POS attribute heads."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import engine as E
from .engine import Tensor
from .initializers import init_gaussian, init_learned_state, init_orthogonal
from .params import ParamStore


@dataclass
class TaggerConfig:
    layers: int = 2
    hidden: int = 548
    pos_head_enabled: bool = False
    # 0 = reader output, i = output of BiGRU layer i; None = penultimate
    pos_branch_layer: int | None = None

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("tagger needs at least one layer and a positive hidden size")
        if self.pos_branch_layer is not None and not 0 <= self.pos_branch_layer <= self.layers:
            raise ValueError(f"pos_branch_layer must be in [0, {self.layers}]")

    @property
    def branch_layer(self) -> int:
        return self.layers - 1 if self.pos_branch_layer is None else self.pos_branch_layer


def _gru_update(gx: Tensor, h: Tensor, u_zr: Tensor, u_h: Tensor, hidden: int) -> Tensor:
    """One GRU step given the precomputed input projection ``gx = W x + b``."""
    zr = E.sigmoid(gx[:2 * hidden] + h @ u_zr)
    z = zr[:hidden]
    r = zr[hidden:]
    cand = E.tanh(gx[2 * hidden:] + (r * h) @ u_h)
    return h + z * (cand - h)


def gru_step(x: Tensor, h_prev: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Standard GRU update.

    ``w`` is ``(D, 3H)``, ``u`` is ``(H, 3H)`` and ``b`` is ``(3H,)``, with the
    gate blocks ordered update, reset, candidate.
    """
    hidden = h_prev.shape[-1]
    if w.shape[1] != 3 * hidden or u.shape != (hidden, 3 * hidden) or b.shape != (3 * hidden,):
        raise E.ShapeError(f"gru_step: inconsistent shapes w={w.shape} u={u.shape} b={b.shape} h={h_prev.shape}")
    gx = x @ w + b
    return _gru_update(gx, h_prev, u[:, :2 * hidden], u[:, 2 * hidden:], hidden)


class GRU:
    """One direction of a recurrent layer with a learned initial state."""

    def __init__(self, input_dim: int, hidden: int, params: ParamStore, rng: np.random.Generator, prefix: str):
        self.hidden = hidden
        self.w = params.add(f"{prefix}.w", init_gaussian((input_dim, 3 * hidden), rng))
        u = np.concatenate([init_orthogonal((hidden, hidden), rng) for _ in range(3)], axis=1)
        self.u = params.add(f"{prefix}.u", u)
        self.b = params.add(f"{prefix}.b", np.zeros(3 * hidden))
        self.h0 = params.add(f"{prefix}.h0", init_learned_state(hidden))

    def run(self, inputs: Tensor, reverse: bool = False) -> list[Tensor]:
        n = inputs.shape[0]
        gx = inputs @ self.w + self.b
        u_zr = self.u[:, :2 * self.hidden]
        u_h = self.u[:, 2 * self.hidden:]
        h = self.h0
        states: list[Tensor] = [None] * n  # type: ignore[list-item]
        order = range(n - 1, -1, -1) if reverse else range(n)
        for t in order:
            h = _gru_update(gx[t], h, u_zr, u_h, self.hidden)
            states[t] = h
        return states

    def parameters(self) -> list[Tensor]:
        return [self.w, self.u, self.b, self.h0]


class BiGRULayer:
    def __init__(self, input_dim: int, hidden: int, params: ParamStore, rng: np.random.Generator, prefix: str):
        self.forward_gru = GRU(input_dim, hidden, params, rng, f"{prefix}.fwd")
        self.backward_gru = GRU(input_dim, hidden, params, rng, f"{prefix}.bwd")

    def __call__(self, inputs: Tensor) -> Tensor:
        if inputs.shape[0] < 1:
            raise E.ShapeError("bigru_layer: empty sequence")
        fwd = self.forward_gru.run(inputs)
        bwd = self.backward_gru.run(inputs, reverse=True)
        return E.stack(fwd, axis=0) + E.stack(bwd, axis=0)

    def parameters(self) -> list[Tensor]:
        return self.forward_gru.parameters() + self.backward_gru.parameters()


def bigru_layer(layer: BiGRULayer, inputs: Tensor) -> Tensor:
    return layer(inputs)


class Tagger:
    def __init__(self, config: TaggerConfig, input_dim: int, params: ParamStore,
                 rng: np.random.Generator, prefix: str = "tagger"):
        self.config = config
        self.layers = []
        dim = input_dim
        for i in range(config.layers):
            self.layers.append(BiGRULayer(dim, config.hidden, params, rng, f"{prefix}.layer{i + 1}"))
            dim = config.hidden

    def forward(self, embeddings: Tensor, train: bool = False, rng: np.random.Generator | None = None,
                dropout: float = 0.0) -> tuple[Tensor, list[Tensor]]:
        """Returns the annotations and every level's output, level 0 being the input."""
        levels = [embeddings]
        x = embeddings
        for layer in self.layers:
            x = E.dropout(layer(x), dropout, train, rng)
            levels.append(x)
        return x, levels

    def branch(self, levels: Sequence[Tensor]) -> Tensor:
        return levels[self.config.branch_layer]

    def branch_dim(self, input_dim: int) -> int:
        return input_dim if self.config.branch_layer == 0 else self.config.hidden

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class PosHead:
    """One linear softmax classifier per POS attribute."""

    def __init__(self, attrs: Mapping[str, int], input_dim: int, params: ParamStore,
                 rng: np.random.Generator, prefix: str = "pos"):
        self.classifiers = {}
        for name, size in attrs.items():
            w = params.add(f"{prefix}.{name}.weight", init_gaussian((input_dim, size), rng))
            b = params.add(f"{prefix}.{name}.bias", np.zeros(size))
            self.classifiers[name] = (w, b)

    def logits(self, states: Tensor) -> dict[str, Tensor]:
        return {name: states @ w + b for name, (w, b) in self.classifiers.items()}

    def distributions(self, states: Tensor) -> dict[str, np.ndarray]:
        return {name: E.softmax(l, axis=-1).data for name, l in self.logits(states).items()}

    def loss(self, states: Tensor, targets: Mapping[str, Sequence[int | None]]) -> tuple[Tensor | None, int]:
        """Mean NLL over supervised (token, attribute) pairs.

        ``targets[attr][i]`` is None where token ``i`` lacks the attribute;
        those pairs are left out.  Returns ``(loss, pair_count)``; the loss is
        None when nothing is supervised.
        """
        total = None
        count = 0
        for name, (w, b) in self.classifiers.items():
            ids = targets.get(name)
            if ids is None:
                continue
            rows = [i for i, v in enumerate(ids) if v is not None]
            if not rows:
                continue
            logits = E.take(states, rows, axis=0) @ w + b
            nll = E.scale(E.cross_entropy(logits, [ids[i] for i in rows]), len(rows))
            total = nll if total is None else total + nll
            count += len(rows)
        if total is None:
            return None, 0
        return E.scale(total, 1.0 / count), count

    def parameters(self) -> list[Tensor]:
        return [p for pair in self.classifiers.values() for p in pair]
