"""Pointer-style head scorer and maxout dependency labelers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine as E
from .engine import Tensor
from .initializers import init_gaussian, init_learned_state
from .params import ParamStore

ATTENTION_MODES = ("soft", "hard")


@dataclass
class ScorerConfig:
    hidden: int = 384
    label_hidden: int = 256
    maxout_pieces: int = 2
    attention_mode: str = "soft"

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}, got {self.attention_mode!r}")
        if min(self.hidden, self.label_hidden, self.maxout_pieces) < 1:
            raise ValueError("scorer sizes must be positive")


class ParserHead:
    def __init__(self, config: ScorerConfig, annot_dim: int, n_labels: int, params: ParamStore,
                 rng: np.random.Generator, prefix: str = "parser"):
        self.config = config
        d, s = annot_dim, config.hidden
        units = config.label_hidden * config.maxout_pieces
        self.root = params.add(f"{prefix}.root", init_learned_state(d))
        # first layer of the scorer MLP over concat(H_w, H_l), split by operand
        self.dep_w = params.add(f"{prefix}.scorer.dep_weight", init_gaussian((d, s), rng))
        self.head_w = params.add(f"{prefix}.scorer.head_weight", init_gaussian((d, s), rng))
        self.score_b = params.add(f"{prefix}.scorer.bias", np.zeros(s))
        # no output bias: the head softmax is shift-invariant
        self.score_v = params.add(f"{prefix}.scorer.out_weight", init_gaussian((s,), rng))
        self.lab_w = params.add(f"{prefix}.labeler.weight", init_gaussian((2 * d, units), rng))
        self.lab_b = params.add(f"{prefix}.labeler.bias", np.zeros(units))
        self.out_w = params.add(f"{prefix}.labeler.out_weight", init_gaussian((config.label_hidden, n_labels), rng))
        self.out_b = params.add(f"{prefix}.labeler.out_bias", np.zeros(n_labels))

    def scorer_parameters(self) -> list[Tensor]:
        return [self.dep_w, self.head_w, self.score_b, self.score_v]

    def labeler_parameters(self) -> list[Tensor]:
        return [self.lab_w, self.lab_b, self.out_w, self.out_b]

    def parameters(self) -> list[Tensor]:
        return [self.root] + self.scorer_parameters() + self.labeler_parameters()

    def with_root(self, annotations: Tensor) -> Tensor:
        """Prepend the root vector: ``(n, d) -> (n+1, d)``."""
        return E.concat([E.reshape(self.root, (1, -1)), annotations], axis=0)

    def score(self, h_w: Tensor, h_l: Tensor) -> Tensor:
        """Unnormalized head logit of location ``h_l`` for dependent ``h_w``."""
        return E.tanh(h_w @ self.dep_w + h_l @ self.head_w + self.score_b) @ self.score_v

    def head_logits(self, full: Tensor) -> Tensor:
        """All-pairs logits ``(n, n+1)``; row w-1 is dependent w, column l is location l."""
        dep = E.reshape(full[1:] @ self.dep_w, (full.shape[0] - 1, 1, -1))
        head = E.reshape(full @ self.head_w, (1, full.shape[0], -1))
        return E.tanh(dep + head + self.score_b) @ self.score_v

    def head_distribution(self, full: Tensor) -> Tensor:
        return E.softmax(self.head_logits(full), axis=-1)

    def head_log_distribution(self, full: Tensor) -> Tensor:
        return E.log_softmax(self.head_logits(full), axis=-1)

    def label_logits(self, head_annot: Tensor, dep_annot: Tensor, train: bool = False,
                     rng: np.random.Generator | None = None, dropout: float = 0.0) -> Tensor:
        x = E.concat([head_annot, dep_annot], axis=-1)
        hidden = E.maxout(x @ self.lab_w + self.lab_b, self.config.maxout_pieces)
        hidden = E.dropout(hidden, dropout, train, rng)
        return hidden @ self.out_w + self.out_b

    def soft_head_annotations(self, full: Tensor, probs: Tensor) -> Tensor:
        """Expected head annotation under each row of ``probs``."""
        return probs @ full

    def hard_head_annotations(self, full: Tensor, heads: Sequence[int]) -> Tensor:
        # integer head choice: nothing flows back into the scorer from here
        return E.take(full, np.asarray(heads, dtype=np.intp), axis=0)

    def label_soft(self, full: Tensor, probs: Tensor, **kw) -> Tensor:
        logits = self.label_logits(self.soft_head_annotations(full, probs), full[1:], **kw)
        return E.softmax(logits, axis=-1)

    def label_hard(self, full: Tensor, heads: Sequence[int], **kw) -> Tensor:
        logits = self.label_logits(self.hard_head_annotations(full, heads), full[1:], **kw)
        return E.softmax(logits, axis=-1)


def format_score_matrix(probs: np.ndarray, forms: Sequence[str], precision: int = 4) -> str:
    """Tab-separated dump of an ``n x (n+1)`` head-probability matrix."""
    probs = np.asarray(probs)
    n = len(forms)
    if probs.shape != (n, n + 1):
        raise ValueError(f"matrix shape {probs.shape} does not match {n} words")
    lines = ["\t".join(["", "<ROOT>"] + list(forms))]
    for form, row in zip(forms, probs):
        lines.append("\t".join([form] + [f"{v:.{precision}f}" for v in row]))
    return "\n".join(lines) + "\n"


def parse_score_matrix(text: str) -> tuple[list[str], np.ndarray]:
    lines = [l for l in text.splitlines() if l]
    forms = []
    rows = []
    for line in lines[1:]:
        cols = line.split("\t")
        forms.append(cols[0])
        rows.append([float(v) for v in cols[1:]])
    return forms, np.array(rows)
