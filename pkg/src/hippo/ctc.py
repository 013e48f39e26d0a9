"""CTC sequence likelihoods and alignment-free pronunciation features.

Likelihoods are exact sums over all blank-augmented monotone paths,
computed with the standard forward recursion in log space. Pronunciation
quality of each canonical phone is expressed as log-likelihood ratios
against single-phone deviations (every substitution plus deletion), with
the scalar score taken against the strongest deviation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")


@dataclass(frozen=True)
class LogPosteriorGrid:
    """Frame-by-symbol log posteriors; the blank symbol is the last column."""

    log_probs: np.ndarray  # (frames, n_phones + 1)

    def __post_init__(self):
        lp = np.asarray(self.log_probs, dtype=np.float64)
        if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 2:
            raise ValueError("posterior grid must be (frames >= 1, symbols >= 2)")
        row_mass = np.exp(lp).sum(axis=1)
        if not np.allclose(row_mass, 1.0, atol=1e-9):
            raise ValueError("posterior rows must sum to 1")
        object.__setattr__(self, "log_probs", lp)

    @property
    def n_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def n_phones(self) -> int:
        return self.log_probs.shape[1] - 1

    @property
    def blank(self) -> int:
        return self.log_probs.shape[1] - 1

    @staticmethod
    def from_probs(probs) -> "LogPosteriorGrid":
        p = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return LogPosteriorGrid(np.log(p))


def ctc_log_likelihood(grid: LogPosteriorGrid, labels) -> float:
    """Log of the total probability of all paths collapsing to `labels`.

    Returns -inf when no path of the grid's length can produce the labels
    (too few frames, or repeats without room for separating blanks).
    """
    lp = grid.log_probs
    T = grid.n_frames
    blank = grid.blank
    labels = list(labels)
    for s in labels:
        if not (0 <= int(s) < grid.n_phones):
            raise ValueError(f"label {s} outside phone inventory")

    # blank-interleaved extension: [b, l0, b, l1, ..., b]
    L = len(labels)
    ext = np.full(2 * L + 1, blank, dtype=np.intp)
    ext[1::2] = labels
    E = ext.size

    # skip transition i-2 -> i allowed where ext[i] is a phone differing
    # from ext[i-2]
    can_skip = np.zeros(E, dtype=bool)
    if E > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full(E, NEG_INF)
    alpha[0] = lp[0, blank]
    if E > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, T):
        stay = alpha
        step = np.full(E, NEG_INF)
        step[1:] = alpha[:-1]
        skip = np.full(E, NEG_INF)
        skip[2:] = np.where(can_skip[2:], alpha[:-2], NEG_INF)
        alpha = np.logaddexp(np.logaddexp(stay, step), skip) + lp[t, ext]

    if E == 1:
        return float(alpha[0])
    return float(np.logaddexp(alpha[-1], alpha[-2]))


SUBSTITUTION_OFFSET = 0  # columns [0, P): substitution against each phone


def gop_feature_dim(n_phones: int) -> int:
    return n_phones + 2


def ctc_log_likelihood_batch(grid: LogPosteriorGrid, label_rows: np.ndarray) -> np.ndarray:
    """Forward recursion over many equal-length label sequences at once.

    label_rows is (n_seqs, L); returns (n_seqs,) log-likelihoods, each
    identical to the scalar recursion on that row.
    """
    lp = grid.log_probs
    T = grid.n_frames
    blank = grid.blank
    label_rows = np.asarray(label_rows, dtype=np.intp)
    n_seqs, L = label_rows.shape
    if np.any(label_rows < 0) or np.any(label_rows >= grid.n_phones):
        raise ValueError("label outside phone inventory")

    ext = np.full((n_seqs, 2 * L + 1), blank, dtype=np.intp)
    ext[:, 1::2] = label_rows
    E = ext.shape[1]
    can_skip = np.zeros((n_seqs, E), dtype=bool)
    if E > 2:
        can_skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])

    alpha = np.full((n_seqs, E), NEG_INF)
    alpha[:, 0] = lp[0, blank]
    if E > 1:
        alpha[:, 1] = lp[0][ext[:, 1]]
    for t in range(1, T):
        step = np.full((n_seqs, E), NEG_INF)
        step[:, 1:] = alpha[:, :-1]
        skip = np.full((n_seqs, E), NEG_INF)
        skip[:, 2:] = np.where(can_skip[:, 2:], alpha[:, :-2], NEG_INF)
        alpha = np.logaddexp(np.logaddexp(alpha, step), skip) + lp[t][ext]

    if E == 1:
        return alpha[:, 0].copy()
    return np.logaddexp(alpha[:, -1], alpha[:, -2])


def gop_features(grid: LogPosteriorGrid, canonical) -> np.ndarray:
    """Per-phone likelihood-ratio features, shape (len(canonical), P + 2).

    Column q < P holds L(canonical) - L(canonical with phone n replaced by
    q); column P the same ratio against deleting phone n; column P + 1 the
    scalar score against the strongest deviation. Self-substitution columns
    are exactly zero.
    """
    canonical = [int(s) for s in canonical]
    if len(canonical) == 0:
        raise ValueError("canonical phone sequence must be non-empty")
    P = grid.n_phones
    N = len(canonical)
    base = ctc_log_likelihood(grid, canonical)
    feats = np.zeros((N, gop_feature_dim(P)))

    arr = np.array(canonical, dtype=np.intp)
    sub_rows, sub_pos, sub_phone = [], [], []
    for n, pn in enumerate(canonical):
        for q in range(P):
            if q == pn:
                continue
            row = arr.copy()
            row[n] = q
            sub_rows.append(row)
            sub_pos.append(n)
            sub_phone.append(q)
    sub_ll = ctc_log_likelihood_batch(grid, np.array(sub_rows))
    for n, q, ll in zip(sub_pos, sub_phone, sub_ll):
        feats[n, q] = base - ll

    if N > 1:
        del_rows = np.array([np.delete(arr, n) for n in range(N)])
        del_ll = ctc_log_likelihood_batch(grid, del_rows)
    else:
        del_ll = np.array([ctc_log_likelihood(grid, [])])
    feats[:, P] = base - del_ll

    for n, pn in enumerate(canonical):
        deviations = [feats[n, q] for q in range(P) if q != pn] + [feats[n, P]]
        feats[n, P + 1] = min(deviations)  # ratio against the max-likelihood deviation
    return feats
