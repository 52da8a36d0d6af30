"""Greedy CTC decoding and token-level word error rate."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionMismatch, EmptyReference

BLANK = 0


def greedy_decode(logits, blank_index: int = BLANK) -> list[int]:
    """Argmax per frame (ties go to the lowest index), merge repeats, drop blanks."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionMismatch(f"logits must be T x C, got shape {logits.shape}")
    if logits.shape[0] and logits.shape[1] < 2:
        raise DimensionMismatch("need at least two classes")
    if logits.shape[0] == 0:
        return []
    path = np.argmax(logits, axis=1)
    keep = np.ones(len(path), dtype=bool)
    keep[1:] = path[1:] != path[:-1]
    return [int(k) for k in path[keep] if k != blank_index]


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(hyp: Sequence[int], ref: Sequence[int]) -> float:
    if len(ref) == 0:
        raise EmptyReference("reference sequence is empty")
    return edit_distance(hyp, ref) / len(ref)


def corpus_wer(hyps: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]) -> float:
    """Total edits over total reference tokens (not the mean of per-utterance rates)."""
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses for {len(refs)} references")
    total = sum(len(r) for r in refs)
    if any(len(r) == 0 for r in refs) or total == 0:
        raise EmptyReference("empty reference in corpus")
    return sum(edit_distance(h, r) for h, r in zip(hyps, refs)) / total


def load_refs(path) -> list[list[int]]:
    """One whitespace-separated token-index sequence per line."""
    refs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        try:
            tokens = [int(t) for t in line.split()]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not tokens:
            raise EmptyReference(f"{path}:{lineno}: empty reference line")
        refs.append(tokens)
    return refs
