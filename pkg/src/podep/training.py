"""Loss composition, AdaDelta with adaptive clipping, and the training loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import engine as E
from .conllu import Sentence, tree_problems
from .decoder import find_cycles, root_count
from .engine import Tape, Tensor
from .lexicon import Lexicon, build_lexicon
from .metrics import attachment_scores
from .model import ModelConfig, Parser

log = logging.getLogger(__name__)


class LabeledTree(NamedTuple):
    heads: list[int]
    labels: list[str]


@dataclass
class LossWeights:
    alpha_l: float = 0.4
    alpha_s: float = 0.6
    alpha_t: float = 1.0

    def __post_init__(self):
        if min(self.alpha_l, self.alpha_s, self.alpha_t) < 0:
            raise ValueError("loss weights must be non-negative")


def total_loss(loss_l, loss_s, loss_t=None, weights: LossWeights | None = None):
    """``alpha_l*L_l + alpha_s*L_s (+ alpha_t*L_t)``; works on tensors or floats."""
    w = weights or LossWeights()
    if isinstance(loss_l, Tensor) or isinstance(loss_s, Tensor):
        out = E.scale(loss_l, w.alpha_l) + E.scale(loss_s, w.alpha_s)
        if loss_t is not None:
            out = out + E.scale(loss_t, w.alpha_t)
        return out
    out = w.alpha_l * loss_l + w.alpha_s * loss_s
    if loss_t is not None:
        out += w.alpha_t * loss_t
    return out


class AdaDelta:
    """AdaDelta update with running averages of squared gradients and steps."""

    def __init__(self, params: Sequence[Tensor], rho: float = 0.95, epsilon: float = 1e-8):
        self.params = list(params)
        self.rho = rho
        self.epsilon = epsilon
        self.sq_grad = [np.zeros_like(p.data) for p in self.params]
        self.sq_step = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        rho, eps = self.rho, self.epsilon
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise E.ShapeError(f"adadelta: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"adadelta: non-finite gradient for {p.name or i} "
                    f"(nan={int(np.isnan(g).sum())}, inf={int(np.isinf(g).sum())})")
            eg = self.sq_grad[i]
            eg *= rho
            eg += (1.0 - rho) * g * g
            delta = -np.sqrt(self.sq_step[i] + eps) / np.sqrt(eg + eps) * g
            ed = self.sq_step[i]
            ed *= rho
            ed += (1.0 - rho) * delta * delta
            p.data = p.data + delta.astype(p.dtype, copy=False)


def adadelta_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdaDelta) -> None:
    state.step(grads)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


class AdaptiveClipper:
    """Rescale gradients whose global norm exceeds ``factor`` times its running average.

    The running average starts at the first observed norm and is updated
    with the post-clip norm.
    """

    def __init__(self, factor: float = 2.0, decay: float = 0.99):
        self.factor = factor
        self.decay = decay
        self.average: float | None = None
        self.clipped = 0

    @property
    def threshold(self) -> float | None:
        return None if self.average is None else self.factor * self.average

    def __call__(self, grads: Sequence[np.ndarray]) -> tuple[list[np.ndarray], float]:
        norm = global_norm(grads)
        grads = list(grads)
        clipped_norm = norm
        threshold = self.threshold
        if threshold is not None and norm > threshold > 0:
            scale = threshold / norm
            grads = [g * np.asarray(scale, dtype=g.dtype) for g in grads]
            clipped_norm = threshold
            self.clipped += 1
        if self.average is None:
            self.average = clipped_norm
        else:
            self.average = self.decay * self.average + (1.0 - self.decay) * clipped_norm
        return grads, norm


def clip_gradients(grads: Sequence[np.ndarray], state: AdaptiveClipper) -> list[np.ndarray]:
    return state(grads)[0]


class EarlyStopping:
    """Stop after ``patience`` consecutive evaluations without improvement."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best: float | None = None
        self.bad = 0

    def update(self, score: float) -> tuple[bool, bool]:
        """Returns ``(improved, stop)``."""
        if self.best is None or score > self.best:
            self.best = score
            self.bad = 0
            return True, False
        self.bad += 1
        return False, self.bad > self.patience


@dataclass
class TrainConfig:
    epochs: int = 100
    patience: int = 10
    seed: int = 1
    weights: LossWeights = field(default_factory=LossWeights)
    rho: float = 0.95
    epsilon: float = 1e-8
    clip_factor: float = 2.0
    clip_decay: float = 0.99
    decode_mode: str = "greedy_then_cle"
    shuffle: bool = True
    target_dev_uas: float | None = None  # stop once dev UAS reaches this
    keep_best: bool = True  # False: return the last epoch's parameters


@dataclass
class TrainResult:
    model: Parser
    log: list[dict]
    best_epoch: int
    best_dev_uas: float
    dropped_sentences: int


def usable_sentences(corpus: Sequence[Sentence]) -> tuple[list[Sentence], int]:
    """Drop empty sentences and gold trees that are not trees rooted at 0."""
    kept, dropped = [], 0
    for i, s in enumerate(corpus):
        problems = tree_problems(s) if s.tokens else ["empty sentence"]
        if problems:
            dropped += 1
            log.warning("dropping training sentence %d: %s", i, "; ".join(problems))
        else:
            kept.append(s)
    return kept, dropped


def evaluate(model: Parser, corpus: Sequence[Sentence], mode: str = "greedy_then_cle",
             exclude_punct: bool = False) -> dict:
    preds = []
    cyclic = multi_root = fallback = 0
    for s in corpus:
        r = model.parse(s.forms, mode=mode)
        preds.append(r)
        fallback += r.used_fallback
        # a fallback means greedy decoding produced a cycle
        if r.used_fallback or find_cycles(r.heads):
            cyclic += 1
        if root_count(r.heads) != 1:
            multi_root += 1
    labels = model.lexicon.labels.items
    named = [LabeledTree(r.heads, [labels[i] for i in r.labels]) for r in preds]
    report = attachment_scores(corpus, named, exclude_punct=exclude_punct)
    n = max(len(corpus), 1)
    return {
        "la": report.la, "uas": report.uas, "las": report.las,
        "cycle_rate": cyclic / n, "multi_root_rate": multi_root / n,
        "fallback_rate": fallback / n, "preds": preds,
    }


def train_step(model: Parser, sentence: Sentence, optimizer: AdaDelta, clipper: AdaptiveClipper,
               weights: LossWeights, rng: np.random.Generator) -> dict:
    params = optimizer.params
    with Tape() as tape:
        losses = model.losses(sentence, train=True, rng=rng)
        loss = total_loss(losses.labeler, losses.scorer, losses.tagger, weights)
    grads = E.backward(tape, loss, wrt=params)
    grads, norm = clipper(grads)
    optimizer.step(grads)
    record = {"loss": float(loss.data), "loss_scorer": float(losses.scorer.data),
              "loss_labeler": float(losses.labeler.data), "grad_norm": norm}
    if losses.tagger is not None:
        record["loss_tagger"] = float(losses.tagger.data)
    return record


def train(model_config: ModelConfig, corpus: Sequence[Sentence], dev: Sequence[Sentence],
          config: TrainConfig | None = None, lexicon: Lexicon | None = None,
          log_path: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with per-sentence updates and early stopping on dev UAS.

    The model keeps the parameters of the best dev epoch.
    """
    config = config or TrainConfig()
    train_set, dropped = usable_sentences(corpus)
    if not train_set:
        raise ValueError("training corpus has no usable sentences")
    if not dev:
        raise ValueError("development corpus is empty")
    lexicon = lexicon or build_lexicon(train_set)
    missing = {t.deprel for s in train_set for t in s.tokens} - set(lexicon.labels.items)
    if missing:
        raise ValueError(f"lexicon does not cover training labels {sorted(missing)}")
    model = Parser(model_config, lexicon, seed=config.seed)
    params = model.parameters()
    optimizer = AdaDelta(params, config.rho, config.epsilon)
    clipper = AdaptiveClipper(config.clip_factor, config.clip_decay)
    stopper = EarlyStopping(config.patience)
    rng = np.random.default_rng([config.seed, 1])
    has_pos = model.pos_head is not None

    records: list[dict] = []
    best_state = model.params.state()
    best_epoch, best_uas = 0, -1.0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train_set)) if config.shuffle else np.arange(len(train_set))
            sums: dict[str, float] = {}
            norms = []
            clipped_before = clipper.clipped
            for idx in order:
                step = train_step(model, train_set[idx], optimizer, clipper, config.weights, rng)
                norms.append(step.pop("grad_norm"))
                for k, v in step.items():
                    sums[k] = sums.get(k, 0.0) + v
            n = len(order)
            dev_eval = evaluate(model, dev, config.decode_mode)
            record = {"epoch": epoch}
            for key in ("loss", "loss_scorer", "loss_labeler", "loss_tagger"):
                if key in sums:
                    record[key] = sums[key] / n
            if has_pos and "loss_tagger" not in record:
                record["loss_tagger"] = 0.0
            record.update({
                "dev_la": round(dev_eval["la"], 2), "dev_uas": round(dev_eval["uas"], 2),
                "dev_las": round(dev_eval["las"], 2),
                "grad_norm_mean": float(np.mean(norms)), "grad_norm_max": float(np.max(norms)),
                "clipped_steps": clipper.clipped - clipped_before,
                "cycle_rate": dev_eval["cycle_rate"], "multi_root_rate": dev_eval["multi_root_rate"],
            })
            improved, stop = stopper.update(dev_eval["uas"])
            record["improved"] = improved
            if improved:
                best_state = model.params.state()
                best_epoch, best_uas = epoch, dev_eval["uas"]
            records.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            if on_epoch:
                on_epoch(record)
            log.info("epoch %d loss %.4f dev UAS %.2f LAS %.2f", epoch, record["loss"],
                     record["dev_uas"], record["dev_las"])
            if config.target_dev_uas is not None and dev_eval["uas"] >= config.target_dev_uas:
                break
            if stop:
                break
    finally:
        if sink:
            sink.close()
    if config.keep_best:
        model.params.load_state(best_state)
    return TrainResult(model, records, best_epoch, best_uas, dropped)


def train_config_dict(config: TrainConfig) -> dict:
    return asdict(config)
