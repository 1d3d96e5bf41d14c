"""Reading and writing CoNLL-U treebanks."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

log = logging.getLogger(__name__)


class ConlluFormatError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ConlluValidationError(ValueError):
    def __init__(self, message: str, sentence_index: int):
        super().__init__(f"sentence {sentence_index}: {message}")
        self.sentence_index = sentence_index


@dataclass
class Token:
    id: int
    form: str
    lemma: str = ""
    upos: str = ""
    xpos: str = ""
    feats: dict[str, str] = field(default_factory=dict)
    head: int = 0
    deprel: str = ""
    deps: str = ""
    misc: str = ""


@dataclass
class Sentence:
    tokens: list[Token] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int]:
        return [t.head for t in self.tokens]

    @property
    def deprels(self) -> list[str]:
        return [t.deprel for t in self.tokens]


def split_feats(feats_field: str, line_number: int | None = None) -> dict[str, str]:
    """``"Case=Nom|Number=Sing"`` -> ``{"Case": "Nom", "Number": "Sing"}``.

    A repeated attribute keeps its last value and logs a warning.
    """
    if feats_field in ("", "_"):
        return {}
    out: dict[str, str] = {}
    for pair in feats_field.split("|"):
        name, sep, value = pair.partition("=")
        if not sep or not name:
            raise ConlluFormatError(f"malformed feature {pair!r}", line_number)
        if name in out:
            log.warning("duplicate feature %s (keeping %r over %r)", name, value, out[name])
            del out[name]
        out[name] = value
    return out


def join_feats(feats: dict[str, str]) -> str:
    return "|".join(f"{k}={v}" for k, v in feats.items()) if feats else "_"


def _field(value: str) -> str:
    return "" if value == "_" else value


def _parse_token(cols: list[str], line_number: int) -> Token:
    try:
        tid = int(cols[0])
    except ValueError:
        raise ConlluFormatError(f"bad token id {cols[0]!r}", line_number) from None
    try:
        head = int(cols[6])
    except ValueError:
        raise ConlluFormatError(f"non-integer head {cols[6]!r}", line_number) from None
    return Token(
        id=tid,
        form=_field(cols[1]),
        lemma=_field(cols[2]),
        upos=_field(cols[3]),
        xpos=_field(cols[4]),
        feats=split_feats(cols[5], line_number),
        head=head,
        deprel=_field(cols[7]),
        deps=_field(cols[8]),
        misc=_field(cols[9]),
    )


def _finish(sentence: Sentence, index: int) -> Sentence:
    n = len(sentence.tokens)
    for i, tok in enumerate(sentence.tokens, start=1):
        if tok.id != i:
            raise ConlluValidationError(f"token ids are not consecutive (expected {i}, got {tok.id})", index)
        if not 0 <= tok.head <= n:
            raise ConlluValidationError(f"head {tok.head} of token {tok.id} out of range [0, {n}]", index)
    return sentence


def parse_conllu(stream: TextIO | str | Iterable[str], source: str = "<input>") -> list[Sentence]:
    """Parse CoNLL-U text.  Multiword ranges and empty nodes are skipped."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    sentences: list[Sentence] = []
    current = Sentence()
    started = False
    skipped = 0
    for line_number, raw in enumerate(stream, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            if started:
                sentences.append(_finish(current, len(sentences)))
                current, started = Sentence(), False
            continue
        started = True
        if line.startswith("#"):
            current.comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluFormatError(f"expected 10 tab-separated columns, got {len(cols)}", line_number)
        if "-" in cols[0] or "." in cols[0]:
            skipped += 1
            continue
        current.tokens.append(_parse_token(cols, line_number))
    if started:
        sentences.append(_finish(current, len(sentences)))
    if skipped:
        log.info("%s: skipped %d multiword/empty-node lines", source, skipped)
    return sentences


def read_conllu(path: str | Path) -> list[Sentence]:
    if str(path) == "-":
        import sys

        return parse_conllu(sys.stdin, source="<stdin>")
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f, source=str(path))


def _out(value: str) -> str:
    return value if value else "_"


def format_token(tok: Token) -> str:
    cols = [
        str(tok.id), _out(tok.form), _out(tok.lemma), _out(tok.upos), _out(tok.xpos),
        join_feats(tok.feats), str(tok.head), _out(tok.deprel), _out(tok.deps), _out(tok.misc),
    ]
    return "\t".join(cols)


def write_conllu(sentences: Iterable[Sentence]) -> str:
    chunks = []
    for sent in sentences:
        lines = list(sent.comments) + [format_token(t) for t in sent.tokens]
        chunks.append("\n".join(lines) + "\n\n")
    return "".join(chunks)


def tree_problems(sentence: Sentence) -> list[str]:
    """Reasons the gold heads do not form a tree rooted at 0 (empty if fine)."""
    heads = [0] + sentence.heads
    n = len(sentence.tokens)
    problems = []
    for i in range(1, n + 1):
        if heads[i] == i:
            problems.append(f"token {i} is its own head")
    roots = [i for i in range(1, n + 1) if heads[i] == 0]
    if len(roots) != 1:
        problems.append(f"{len(roots)} tokens attached to the root")
    for i in range(1, n + 1):
        seen = set()
        j = i
        while j != 0 and j not in seen:
            seen.add(j)
            j = heads[j]
        if j != 0:
            problems.append(f"token {i} does not reach the root")
            break
    return problems


def dataset_stats(sentences: Iterable[Sentence]) -> dict[str, int]:
    tokens = 0
    count = 0
    for s in sentences:
        count += 1
        tokens += len(s.tokens)
    return {"token_count": tokens, "sentence_count": count}
