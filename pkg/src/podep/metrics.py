"""Labeled/unlabeled attachment scores."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .conllu import Sentence

PUNCT_UPOS = "PUNCT"


class AlignmentError(ValueError):
    def __init__(self, message: str, sentence_index: int | None = None):
        if sentence_index is not None:
            message = f"sentence {sentence_index}: {message}"
        super().__init__(message)
        self.sentence_index = sentence_index


@dataclass
class EvalReport:
    token_count: int
    head_correct: int
    label_correct: int
    both_correct: int
    per_sentence: list[dict] = field(default_factory=list, repr=False)

    def _pct(self, k: int) -> float:
        return 100.0 * k / self.token_count if self.token_count else 0.0

    @property
    def uas(self) -> float:
        return self._pct(self.head_correct)

    @property
    def la(self) -> float:
        return self._pct(self.label_correct)

    @property
    def las(self) -> float:
        return self._pct(self.both_correct)

    def rounded(self) -> dict[str, float]:
        return {"la": round(self.la, 2), "uas": round(self.uas, 2), "las": round(self.las, 2)}

    def to_table(self) -> str:
        r = self.rounded()
        return (
            f"{'metric':<8}{'score':>8}\n"
            f"{'LA':<8}{r['la']:>8.2f}\n"
            f"{'UAS':<8}{r['uas']:>8.2f}\n"
            f"{'LAS':<8}{r['las']:>8.2f}\n"
            f"{'tokens':<8}{self.token_count:>8d}\n"
        )

    def to_json(self) -> str:
        return json.dumps({**self.rounded(), "tokens": self.token_count})

    def __add__(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(
            self.token_count + other.token_count,
            self.head_correct + other.head_correct,
            self.label_correct + other.label_correct,
            self.both_correct + other.both_correct,
            self.per_sentence + other.per_sentence,
        )


def _pred_fields(pred) -> tuple[list[int], list[str]]:
    if isinstance(pred, Sentence):
        return pred.heads, pred.deprels
    return list(pred.heads), list(pred.labels)


def attachment_scores(gold: Sequence[Sentence], pred: Sequence, exclude_punct: bool = False,
                      per_sentence: bool = False) -> EvalReport:
    """Score predictions against gold trees.

    ``pred`` items are Sentences or objects with ``heads`` and string
    ``labels``.  With ``exclude_punct`` gold PUNCT tokens are not counted.
    """
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    report = EvalReport(0, 0, 0, 0)
    for i, (g, p) in enumerate(zip(gold, pred)):
        heads, labels = _pred_fields(p)
        if len(heads) != len(g.tokens) or len(labels) != len(g.tokens):
            raise AlignmentError(f"{len(g.tokens)} gold tokens vs {len(heads)} predicted", i)
        n = hc = lc = bc = 0
        for tok, h, lab in zip(g.tokens, heads, labels):
            if exclude_punct and tok.upos == PUNCT_UPOS:
                continue
            n += 1
            head_ok = tok.head == h
            label_ok = tok.deprel == lab
            hc += head_ok
            lc += label_ok
            bc += head_ok and label_ok
        report.token_count += n
        report.head_correct += hc
        report.label_correct += lc
        report.both_correct += bc
        if per_sentence:
            report.per_sentence.append({"index": i, "tokens": n, "head_correct": hc,
                                        "label_correct": lc, "both_correct": bc})
    return report
