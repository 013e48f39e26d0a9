"""Edit-distance alignment of transcriptions to references, score transfer
under deletion/substitution/insertion rules, and word error rate.

Alignment is minimal-cost Levenshtein with unit costs and a deterministic
backtrace (match preferred over substitute over delete over insert), so
identical inputs always yield identical operation sequences. Score transfer
never invents values: matched and substituted tokens inherit the aligned
reference score, insertions score zero, deletions vanish from the output.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class EditKind(Enum):
    MATCH = "match"
    SUBSTITUTE = "substitute"
    DELETE = "delete"
    INSERT = "insert"


@dataclass(frozen=True)
class EditOp:
    kind: EditKind
    ref_idx: int | None
    hyp_idx: int | None


HUMAN_MATCHED = "human-matched"
ZEROED_INSERTION = "zeroed-insertion"


@dataclass(frozen=True)
class ScoredSequence:
    tokens: tuple
    scores: tuple
    provenance: tuple  # HUMAN_MATCHED | ZEROED_INSERTION per token


def align(hyp: Sequence, ref: Sequence) -> list[EditOp]:
    """Minimal-cost alignment of hyp to ref as an ordered edit script."""
    R, H = len(ref), len(hyp)
    cost = [list(range(H + 1))] + [[i] + [0] * H for i in range(1, R + 1)]
    for i in range(1, R + 1):
        ri = ref[i - 1]
        row = cost[i]
        prev = cost[i - 1]
        for j in range(1, H + 1):
            diag = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)

    ops: list[EditOp] = []
    i, j = R, H
    while i > 0 or j > 0:
        c = cost[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and c == cost[i - 1][j - 1]:
            ops.append(EditOp(EditKind.MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and c == cost[i - 1][j - 1] + 1:
            ops.append(EditOp(EditKind.SUBSTITUTE, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and c == cost[i - 1][j] + 1:
            ops.append(EditOp(EditKind.DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(EditKind.INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def alignment_cost(ops: Sequence[EditOp]) -> int:
    return sum(1 for op in ops if op.kind is not EditKind.MATCH)


def error_counts(ops: Sequence[EditOp]) -> tuple[int, int, int]:
    s = sum(1 for op in ops if op.kind is EditKind.SUBSTITUTE)
    d = sum(1 for op in ops if op.kind is EditKind.DELETE)
    i = sum(1 for op in ops if op.kind is EditKind.INSERT)
    return s, d, i


def assign_scores(ops: Sequence[EditOp], ref_scores: Sequence, hyp: Sequence) -> ScoredSequence:
    """Transfer reference scores onto the hypothesis through an alignment.

    Matched and substituted hypothesis tokens inherit the aligned reference
    score; inserted tokens score 0; deleted reference tokens leave nothing.
    """
    n_ref = sum(1 for op in ops if op.kind in (EditKind.MATCH, EditKind.SUBSTITUTE,
                                               EditKind.DELETE))
    if n_ref != len(ref_scores):
        raise ValueError("alignment covers a different reference length than ref_scores")
    scores: list = [None] * len(hyp)
    prov: list = [None] * len(hyp)
    for op in ops:
        if op.kind in (EditKind.MATCH, EditKind.SUBSTITUTE):
            scores[op.hyp_idx] = ref_scores[op.ref_idx]
            prov[op.hyp_idx] = HUMAN_MATCHED
        elif op.kind is EditKind.INSERT:
            scores[op.hyp_idx] = 0
            prov[op.hyp_idx] = ZEROED_INSERTION
    if any(p is None for p in prov):
        raise ValueError("alignment does not cover every hypothesis token")
    return ScoredSequence(tokens=tuple(hyp), scores=tuple(scores), provenance=tuple(prov))


def build_phone_word_map(phones_per_word: Sequence[int]) -> list[int]:
    """Flat non-decreasing phone index -> word index map."""
    out: list[int] = []
    for w, count in enumerate(phones_per_word):
        if count < 1:
            raise ValueError(f"word {w} owns no phones")
        out.extend([w] * count)
    return out


def word_error_rate(hyp: Sequence, ref: Sequence) -> float:
    """(substitutions + deletions + insertions) / len(ref).

    An empty reference against a non-empty hypothesis is scored as
    len(hyp) by convention; two empty sequences score 0.
    """
    if len(ref) == 0:
        return float(len(hyp))
    s, d, i = error_counts(align(hyp, ref))
    return (s + d + i) / len(ref)
