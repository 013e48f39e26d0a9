"""Training objectives: masked multi-task regression plus an ordinal
embedding regularizer.

The regression term averages per-aspect masked MSE within each granularity
(phone, word, utterance), weights the granularities, and sums. The
regularizer works on the batch of time-averaged phone encodings: a
diversity term pushes score-class centroids apart in proportion to their
score gap, a tightness term pulls each embedding toward its own class
centroid. Gradients flow through both the members and the centroids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import AspectPredictions, GRANULARITY_ASPECTS


@dataclass(frozen=True)
class LossWeights:
    granularity: dict[str, float] = field(
        default_factory=lambda: {"phone": 1.0, "word": 1.0, "utt": 1.0})
    lambda_d: float = 1.0
    lambda_t: float = 1.0
    lambda_cono: float = 0.1

    def __post_init__(self):
        vals = list(self.granularity.values()) + [self.lambda_d, self.lambda_t,
                                                  self.lambda_cono]
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be nonnegative")


@dataclass
class EmbeddingBatch:
    """Stacked per-utterance embeddings with their discrete scores."""

    z: Tensor          # (L, d)
    y: np.ndarray      # (L,)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.z.shape[0] != len(self.y):
            raise ValueError("embedding count must match score count")

    @staticmethod
    def from_predictions(batch: list[AspectPredictions]) -> "EmbeddingBatch":
        z = ad.concat([p.z for p in batch], axis=0)
        y = np.array([p.targets["utt_accuracy"][0] for p in batch])
        return EmbeddingBatch(z=z, y=y)


def _as_batch(pred) -> list[AspectPredictions]:
    return pred if isinstance(pred, list) else [pred]


def apa_loss(pred, weights: LossWeights, flagged: list[str] | None = None) -> Tensor:
    """Weighted multi-granularity masked MSE over a batch of predictions.

    Aspects with no valid position contribute zero and are appended to
    `flagged` when a list is supplied.
    """
    batch = _as_batch(pred)
    total = Tensor(0.0)
    for gran, aspects in GRANULARITY_ASPECTS.items():
        lam = weights.granularity[gran]
        gran_term = Tensor(0.0)
        for name in aspects:
            preds, targets = [], []
            for p in batch:
                if p.targets is None:
                    raise ValueError("predictions carry no targets")
                idx = np.nonzero(p.masks[name])[0]
                if idx.size:
                    preds.append(ad.gather_rows(p.preds[name], idx))
                    targets.append(p.targets[name][idx])
            if not preds:
                if flagged is not None:
                    flagged.append(name)
                continue
            diff = ad.sub(ad.concat(preds, axis=0), Tensor(np.concatenate(targets)))
            gran_term = ad.add(gran_term, ad.mean_(ad.square(diff)))
        total = ad.add(total, ad.scale(gran_term, lam / len(aspects)))
    return total


def _centroids(batch: EmbeddingBatch) -> tuple[np.ndarray, list[Tensor], list[np.ndarray]]:
    values = np.unique(batch.y)
    cents, members = [], []
    for v in values:
        idx = np.nonzero(batch.y == v)[0]
        members.append(idx)
        cents.append(ad.mean_(ad.gather_rows(batch.z, idx), axis=0, keepdims=True))
    return values, cents, members


def cono_diversity(batch: EmbeddingBatch) -> Tensor:
    """Negative mean of score-gap-weighted centroid distances (ordered pairs)."""
    values, cents, _ = _centroids(batch)
    k = len(values)
    if k < 2:
        return Tensor(0.0)
    acc = Tensor(0.0)
    for i in range(k):
        for j in range(i + 1, k):
            dist = ad.row_l2norm(ad.sub(cents[i], cents[j]))
            acc = ad.add(acc, ad.scale(ad.sum_(dist), abs(values[i] - values[j])))
    return ad.scale(acc, -2.0 / (k * (k - 1)))


def cono_tightness(batch: EmbeddingBatch) -> Tensor:
    """Mean distance from each embedding to its own score centroid."""
    _, cents, members = _centroids(batch)
    norms = []
    for c, idx in zip(cents, members):
        diff = ad.sub(ad.gather_rows(batch.z, idx), c)
        norms.append(ad.row_l2norm(diff))
    return ad.mean_(ad.concat(norms, axis=0))


def cono_loss(batch: EmbeddingBatch, weights: LossWeights) -> Tensor:
    return ad.add(ad.scale(cono_diversity(batch), weights.lambda_d),
                  ad.scale(cono_tightness(batch), weights.lambda_t))


def total_loss(pred, weights: LossWeights, cono: bool = True,
               flagged: list[str] | None = None,
               parts: dict[str, float] | None = None) -> Tensor:
    """apa + lambda_cono * (lambda_d * diversity + lambda_t * tightness)."""
    batch = _as_batch(pred)
    apa = apa_loss(batch, weights, flagged)
    loss = apa
    div = tight = None
    if cono and weights.lambda_cono > 0.0:
        emb = EmbeddingBatch.from_predictions(batch)
        div = cono_diversity(emb)
        tight = cono_tightness(emb)
        reg = ad.add(ad.scale(div, weights.lambda_d), ad.scale(tight, weights.lambda_t))
        loss = ad.add(apa, ad.scale(reg, weights.lambda_cono))
    if parts is not None:
        parts["apa"] = float(apa.data)
        parts["diversity"] = float(div.data) if div is not None else 0.0
        parts["tightness"] = float(tight.data) if tight is not None else 0.0
        parts["total"] = float(loss.data)
    return loss
