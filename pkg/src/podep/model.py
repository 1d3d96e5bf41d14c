"""The full network: reader -> tagger -> parser head (+ optional POS heads)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import engine as E
from .conllu import Sentence
from .decoder import ParseResult, decode
from .engine import Tensor
from .lexicon import Lexicon, token_attributes
from .params import ParamStore
from .parser_head import ParserHead, ScorerConfig
from .reader import Reader, ReaderConfig
from .tagger import PosHead, Tagger, TaggerConfig


@dataclass
class DropoutConfig:
    reader: float = 0.2
    tagger: float = 0.7
    labeler: float = 0.5


@dataclass
class ModelConfig:
    reader: ReaderConfig = field(default_factory=ReaderConfig)
    tagger: TaggerConfig = field(default_factory=TaggerConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    dtype: str = "float32"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reader"]["filter_spec"] = [list(p) for p in self.reader.filter_spec]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            reader=ReaderConfig(**d.get("reader", {})),
            tagger=TaggerConfig(**d.get("tagger", {})),
            scorer=ScorerConfig(**d.get("scorer", {})),
            dropout=DropoutConfig(**d.get("dropout", {})),
            dtype=d.get("dtype", "float32"),
        )

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """64 filters, one highway layer, one 64-unit BiGRU layer."""
        cfg = cls(
            reader=ReaderConfig(char_embed_dim=16, filter_spec=((1, 16), (2, 16), (3, 16), (4, 16)),
                                projection_dim=64, highway_layers=1),
            tagger=TaggerConfig(layers=1, hidden=64),
            scorer=ScorerConfig(hidden=64, label_hidden=32, maxout_pieces=2),
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


@dataclass
class Losses:
    scorer: Tensor
    labeler: Tensor
    tagger: Tensor | None
    pos_pairs: int = 0


@dataclass
class ForwardResult:
    full: Tensor            # (n+1, d) annotations with the root vector first
    levels: list[Tensor]    # tagger levels, 0 = reader output


class Parser:
    def __init__(self, config: ModelConfig, lexicon: Lexicon, seed: int = 0):
        self.config = config
        self.lexicon = lexicon
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = ParamStore(dtype=config.dtype)
        self.reader = Reader(config.reader, lexicon.n_chars, self.params, rng)
        self.tagger = Tagger(config.tagger, config.reader.projection_dim, self.params, rng)
        self.head = ParserHead(config.scorer, config.tagger.hidden, lexicon.n_labels, self.params, rng)
        self.pos_head = None
        if config.tagger.pos_head_enabled:
            dim = self.tagger.branch_dim(config.reader.projection_dim)
            sizes = {name: len(v) for name, v in lexicon.pos_attrs.items()}
            self.pos_head = PosHead(sizes, dim, self.params, rng)

    # -- forward -------------------------------------------------------

    def forward(self, forms: Sequence[str], train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardResult:
        if not forms:
            raise ValueError("cannot run the network on an empty sentence")
        drop = self.config.dropout
        words = [self.lexicon.encode_word(f) for f in forms]
        emb = E.dropout(self.reader.forward(words), drop.reader, train, rng)
        annotations, levels = self.tagger.forward(emb, train, rng, drop.tagger)
        return ForwardResult(self.head.with_root(annotations), levels)

    def head_probabilities(self, forms: Sequence[str]) -> np.ndarray:
        """Eval-mode ``n x (n+1)`` head location probabilities."""
        fwd = self.forward(forms)
        return self.head.head_distribution(fwd.full).data

    # -- training ------------------------------------------------------

    def pos_targets(self, sentence: Sentence) -> dict[str, list[int | None]]:
        targets: dict[str, list[int | None]] = {name: [] for name in self.lexicon.pos_attrs}
        for tok in sentence.tokens:
            attrs = token_attributes(tok)
            for name in targets:
                value = attrs.get(name)
                targets[name].append(None if value is None else self.lexicon.attr_value_id(name, value))
            for name in attrs:
                if name not in targets:
                    raise KeyError(f"POS attribute {name!r} not in lexicon")
        return targets

    def losses(self, sentence: Sentence, train: bool = False,
               rng: np.random.Generator | None = None) -> Losses:
        fwd = self.forward(sentence.forms, train, rng)
        full = fwd.full
        gold_heads = np.array(sentence.heads, dtype=np.intp)
        gold_labels = [self.lexicon.label_id(t.deprel) for t in sentence.tokens]

        logits = self.head.head_logits(full)
        loss_s = E.cross_entropy(logits, gold_heads)

        if self.config.scorer.attention_mode == "soft":
            head_annot = self.head.soft_head_annotations(full, E.softmax(logits, axis=-1))
        else:
            head_annot = self.head.hard_head_annotations(full, gold_heads)
        label_logits = self.head.label_logits(head_annot, full[1:], train, rng, self.config.dropout.labeler)
        loss_l = E.cross_entropy(label_logits, gold_labels)

        loss_t, pairs = None, 0
        if self.pos_head is not None:
            loss_t, pairs = self.pos_head.loss(self.tagger.branch(fwd.levels), self.pos_targets(sentence))
        return Losses(loss_s, loss_l, loss_t, pairs)

    # -- inference -----------------------------------------------------

    def parse(self, forms: Sequence[str], mode: str = "greedy_then_cle", single_root: bool = False) -> ParseResult:
        fwd = self.forward(forms)
        full = fwd.full
        logits = self.head.head_logits(full)
        probs = E.softmax(logits, axis=-1)

        def labeler(heads):
            # both attention modes label from the annotation of the decoded head
            logits_l = self.head.label_logits(self.head.hard_head_annotations(full, heads), full[1:]).data
            return [int(i) for i in np.argmax(logits_l, axis=1)]

        result = decode(probs.data, mode=mode, single_root=single_root, labeler=labeler,
                        log_scores=E.log_softmax(logits, axis=-1).data)
        result.probs = probs.data
        return result

    def parameters(self) -> list[Tensor]:
        return list(self.params)
