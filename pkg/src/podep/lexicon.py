"""Vocabularies for characters, dependency labels and POS attributes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .conllu import Sentence

PAD, UNK, BOW, EOW = 0, 1, 2, 3
RESERVED_CHARS = ("<pad>", "<unk>", "<bow>", "<eow>")
UNK_VALUE = "<unk>"
UPOS_ATTR = "UPOS"


@dataclass
class Vocab:
    """Dense string <-> id mapping; ``items[i]`` is the string with id ``i``."""

    items: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.items)}
        if len(self.index) != len(self.items):
            raise ValueError("vocabulary items must be unique")

    def add(self, item: str) -> int:
        if item not in self.index:
            self.index[item] = len(self.items)
            self.items.append(item)
        return self.index[item]

    def get(self, item: str, default: int | None = None) -> int | None:
        return self.index.get(item, default)

    def __getitem__(self, item: str) -> int:
        return self.index[item]

    def __contains__(self, item: str) -> bool:
        return item in self.index

    def __len__(self) -> int:
        return len(self.items)


def token_attributes(token) -> dict[str, str]:
    """POS attributes used as auxiliary targets: UPOS plus every FEATS pair."""
    attrs = {}
    if token.upos:
        attrs[UPOS_ATTR] = token.upos
    attrs.update(token.feats)
    return attrs


@dataclass
class Lexicon:
    chars: Vocab
    labels: Vocab
    pos_attrs: dict[str, Vocab]

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def encode_word(self, form: str) -> list[int]:
        return [BOW] + [self.chars.get(c, UNK) for c in form] + [EOW]

    def decode_word(self, ids: Iterable[int]) -> str:
        return "".join(self.chars.items[i] for i in ids if i not in (PAD, BOW, EOW))

    def label_id(self, label: str) -> int:
        try:
            return self.labels[label]
        except KeyError:
            raise KeyError(f"dependency label {label!r} not in lexicon") from None

    def attr_value_id(self, attr: str, value: str, strict: bool = False) -> int:
        vocab = self.pos_attrs.get(attr)
        if vocab is None:
            raise KeyError(f"POS attribute {attr!r} not in lexicon")
        idx = vocab.get(value)
        if idx is None:
            if strict:
                raise KeyError(f"value {value!r} of POS attribute {attr!r} not in lexicon")
            return vocab[UNK_VALUE]
        return idx

    def to_dict(self) -> dict:
        return {
            "chars": list(self.chars.items),
            "labels": list(self.labels.items),
            "pos_attrs": {k: list(v.items) for k, v in self.pos_attrs.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Lexicon":
        chars = Vocab(list(d["chars"]))
        if tuple(chars.items[:4]) != RESERVED_CHARS:
            raise ValueError("character vocabulary does not start with the reserved symbols")
        return cls(
            chars=chars,
            labels=Vocab(list(d["labels"])),
            pos_attrs={k: Vocab(list(v)) for k, v in d["pos_attrs"].items()},
        )


def encode_word(form: str, lexicon: Lexicon) -> list[int]:
    return lexicon.encode_word(form)


def build_lexicon(train: Iterable[Sentence]) -> Lexicon:
    """Build vocabularies from the training split.  Insertion order is first occurrence."""
    chars = Vocab(list(RESERVED_CHARS))
    labels = Vocab()
    attrs: dict[str, Vocab] = {}
    n_tokens = 0
    for sent in train:
        for tok in sent.tokens:
            n_tokens += 1
            for c in tok.form:
                chars.add(c)
            labels.add(tok.deprel)
            for name, value in token_attributes(tok).items():
                if name not in attrs:
                    attrs[name] = Vocab([UNK_VALUE])
                attrs[name].add(value)
    if n_tokens == 0:
        raise ValueError("cannot build a lexicon from an empty corpus")
    return Lexicon(chars=chars, labels=labels, pos_attrs=attrs)
