"""Tree decoding from head-location probabilities.

Matrices are ``n x (n+1)``: row ``w-1`` holds dependent ``w``'s scores over
head locations ``0..n`` (0 is the root).  Head lists are 1-based-location
valued and indexed by dependent position, i.e. ``heads[w-1]`` is the head of
word ``w``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DECODE_MODES = ("greedy", "greedy_then_cle", "cle")


@dataclass
class ParseResult:
    heads: list[int]
    labels: list[int] = field(default_factory=list)
    used_fallback: bool = False
    probs: np.ndarray | None = field(default=None, repr=False)


def _check_matrix(scores: np.ndarray) -> int:
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[1] != scores.shape[0] + 1:
        raise ValueError(f"score matrix must be n x (n+1), got {scores.shape}")
    return scores.shape[0]


def greedy_decode(p: np.ndarray) -> list[int]:
    """Best head per word, never the word itself; ties go to the lower index."""
    n = _check_matrix(p)
    masked = np.array(p, dtype=np.float64, copy=True)
    masked[np.arange(n), np.arange(1, n + 1)] = -np.inf
    return [int(h) for h in np.argmax(masked, axis=1)]


def find_cycles(heads: Sequence[int]) -> list[set[int]]:
    """Vertex sets of the cycles in a head function (vertices are 1-based)."""
    n = len(heads)
    parent = [0] + list(heads)
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 done
    cycles = []
    for start in range(1, n + 1):
        path = []
        v = start
        while v != 0 and state[v] == 0:
            state[v] = 1
            path.append(v)
            v = parent[v]
        if v != 0 and state[v] == 1:
            cycles.append(set(path[path.index(v):]))
        for u in path:
            state[u] = 2
    return cycles


def is_arborescence(heads: Sequence[int]) -> bool:
    n = len(heads)
    if any(not 0 <= h <= n for h in heads):
        return False
    if any(h == i for i, h in enumerate(heads, start=1)):
        return False
    return not find_cycles(heads)


def root_count(heads: Sequence[int]) -> int:
    return sum(1 for h in heads if h == 0)


def tree_score(scores: np.ndarray, heads: Sequence[int]) -> float:
    scores = np.asarray(scores)
    return float(sum(scores[w, h] for w, h in enumerate(heads)))


def _mst(weights: np.ndarray) -> list[int]:
    """Chu-Liu-Edmonds on a dense ``(N, N)`` matrix, ``weights[h, d]`` = edge h -> d.

    Node 0 is the root.  Missing edges are ``-inf``.  Returns the head of each
    node (the root's entry is -1).
    """
    size = weights.shape[0]
    best = np.full(size, -1, dtype=np.intp)
    w = weights.copy()
    np.fill_diagonal(w, -np.inf)
    w[:, 0] = -np.inf
    for d in range(1, size):
        best[d] = int(np.argmax(w[:, d]))
    cycles = find_cycles(list(best[1:]))
    if not cycles:
        return list(best)
    cycle = sorted(min(cycles, key=min))
    in_cycle = np.zeros(size, dtype=bool)
    in_cycle[cycle] = True
    outside = [v for v in range(size) if not in_cycle[v]]
    c = len(outside)  # index of the contracted node in the smaller graph
    cycle_score = sum(w[best[v], v] for v in cycle)

    sub = np.full((c + 1, c + 1), -np.inf)
    sub[:c, :c] = w[np.ix_(outside, outside)]
    # edges into the cycle: replace the cycle edge into the entry vertex
    into = w[np.ix_(outside, cycle)] - np.array([w[best[v], v] for v in cycle]) + cycle_score
    enter_at = np.argmax(into, axis=1)
    sub[:c, c] = into[np.arange(c), enter_at]
    # edges out of the cycle: best cycle vertex for each outside dependent
    out_of = w[np.ix_(cycle, outside)]
    leave_from = np.argmax(out_of, axis=0)
    sub[c, :c] = out_of[leave_from, np.arange(c)]

    sub_heads = _mst(sub)
    heads = np.full(size, -1, dtype=np.intp)
    for i, v in enumerate(outside):
        if v == 0:
            continue
        h = sub_heads[i]
        heads[v] = cycle[leave_from[i]] if h == c else outside[h]
    entry_from = sub_heads[c]
    entry_vertex = cycle[enter_at[entry_from]]
    for v in cycle:
        heads[v] = best[v]
    heads[entry_vertex] = outside[entry_from]
    return list(heads)


def cle_decode(scores: np.ndarray, single_root: bool = False) -> list[int]:
    """Maximum spanning arborescence rooted at 0 under additive log-scores.

    With ``single_root`` exactly one word attaches to the root; each
    candidate is tried and the best total kept.
    """
    n = _check_matrix(scores)
    if n == 0:
        raise ValueError("cannot decode an empty sentence")
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    weights = np.full((n + 1, n + 1), -np.inf)
    weights[:, 1:] = s.T
    if not single_root:
        return [int(h) for h in _mst(weights)[1:]]
    best_heads, best_total = None, -np.inf
    for r in range(1, n + 1):
        w = weights.copy()
        w[0, :] = -np.inf
        w[0, r] = weights[0, r]
        heads = [int(h) for h in _mst(w)[1:]]
        if root_count(heads) != 1 or not is_arborescence(heads):
            continue
        total = tree_score(s, heads)
        if total > best_total:
            best_heads, best_total = heads, total
    assert best_heads is not None
    return best_heads


def decode(p: np.ndarray, mode: str = "greedy_then_cle", single_root: bool = False,
           labeler: Callable[[list[int]], list[int]] | None = None,
           log_scores: np.ndarray | None = None) -> ParseResult:
    """Decode heads from probabilities, then label them with ``labeler``.

    CLE runs on ``log_scores`` (default ``log p``).
    """
    if mode not in DECODE_MODES:
        raise ValueError(f"decode mode must be one of {DECODE_MODES}, got {mode!r}")
    _check_matrix(p)
    if log_scores is None:
        with np.errstate(divide="ignore"):
            log_scores = np.maximum(np.log(p), np.finfo(np.float64).min / 4)
    used_fallback = False
    if mode == "cle":
        heads = cle_decode(log_scores, single_root)
    else:
        heads = greedy_decode(p)
        if mode == "greedy_then_cle":
            invalid = bool(find_cycles(heads)) or (single_root and root_count(heads) != 1)
            if invalid:
                heads = cle_decode(log_scores, single_root)
                used_fallback = True
    labels = labeler(heads) if labeler is not None else []
    return ParseResult(heads=heads, labels=labels, used_fallback=used_fallback)
