"""Scoring metrics and the score-scale normalization.

Word- and utterance-level human scores live on 0..10 and are divided by 5
to share the phone scale 0..2 during training; the inverse map restores
the original scale for reporting. Pearson correlation is undefined under
zero variance and is reported as absent rather than zero.
"""

from __future__ import annotations

import numpy as np

NORMALIZE_DIVISOR = 5.0


def normalize_score(value, granularity: str):
    """Map a raw human score onto the shared 0..2 scale."""
    arr = np.asarray(value, dtype=np.float64)
    if granularity == "phone":
        if np.any(arr < 0) or np.any(arr > 2):
            raise ValueError("phone scores must lie in [0, 2]")
        return arr
    if granularity in ("word", "utt"):
        if np.any(arr < 0) or np.any(arr > 10):
            raise ValueError(f"{granularity} scores must lie in [0, 10]")
        return arr / NORMALIZE_DIVISOR
    raise ValueError(f"unknown granularity {granularity!r}")


def denormalize_score(value, granularity: str):
    arr = np.asarray(value, dtype=np.float64)
    if granularity == "phone":
        return arr
    if granularity in ("word", "utt"):
        return arr * NORMALIZE_DIVISOR
    raise ValueError(f"unknown granularity {granularity!r}")


def pcc(x, y) -> float | None:
    """Sample Pearson correlation; None when undefined (zero variance)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pcc needs two equal-length series of length >= 2")
    xc = x - x.mean()
    yc = y - y.mean()
    vx, vy = xc @ xc, yc @ yc
    if vx == 0.0 or vy == 0.0:
        return None
    return float((xc @ yc) / np.sqrt(vx * vy))


def mse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("mse needs equal-length series")
    return float(np.mean((x - y) ** 2))
