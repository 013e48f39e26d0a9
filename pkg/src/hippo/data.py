"""Turning corpus records into model-ready views.

Each utterance yields two views: the read-aloud (easy) view computes
likelihood-ratio features against the reference phones and uses the human
scores directly, while the free-speaking (hard) view computes them against
the transcribed phones and uses the alignment-transferred scores. Both
share the utterance's posterior grid and acoustic summary vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import UtteranceRecord, WORD_KEYS
from .ctc import LogPosteriorGrid, gop_features
from .curriculum import TaskView
from .metrics import normalize_score
from .model import ModelInputs, ScoreTargets

_WORD_ASPECT_BY_KEY = {"acc": "word_accuracy", "stress": "word_stress", "total": "word_total"}
_UTT_ASPECT_BY_KEY = {"acc": "utt_accuracy", "flu": "utt_fluency", "comp": "utt_completeness",
                      "pros": "utt_prosody", "total": "utt_total"}


@dataclass
class PreparedUtterance:
    utt_id: str
    easy: tuple[ModelInputs, ScoreTargets] | None
    hard: tuple[ModelInputs, ScoreTargets] | None

    def view(self, task: TaskView):
        return self.easy if task is TaskView.EASY else self.hard


def _targets_from(scores: dict) -> ScoreTargets:
    word = {}
    for key, aspect in _WORD_ASPECT_BY_KEY.items():
        word[aspect] = normalize_score(scores["word"][key], "word")
    utt = {}
    for key, aspect in _UTT_ASPECT_BY_KEY.items():
        utt[aspect] = float(normalize_score(scores["utt"][key], "utt"))
    return ScoreTargets(phone=normalize_score(scores["phone"], "phone"), word=word, utt=utt)


def view_inputs(record: UtteranceRecord, view: TaskView,
                grid: LogPosteriorGrid | None = None) -> tuple[ModelInputs, ScoreTargets]:
    if grid is None:
        grid = LogPosteriorGrid.from_probs(record.posteriors)
    if view is TaskView.EASY:
        phones, words = record.ref_phones, record.ref_words
        p2w, scores = record.phone_to_word, record.scores
    else:
        phones, words = record.hyp_phones, record.hyp_words
        p2w, scores = record.hyp_phone_to_word, record.hyp_scores
    gop = gop_features(grid, phones)
    if not np.all(np.isfinite(gop)):
        raise ValueError(f"{record.utt_id}: non-finite pronunciation features "
                         f"(grid too short for a deviation)")
    inputs = ModelInputs(
        gop=gop,
        phone_ids=np.array(phones, dtype=np.intp),
        word_ids=np.array(words, dtype=np.intp),
        phone_to_word=np.array(p2w, dtype=np.intp),
        ssl=record.ssl,
        n_phones=len(phones),
        n_words=len(words),
    )
    return inputs, _targets_from(scores)


def prepare_utterance(record: UtteranceRecord) -> PreparedUtterance:
    grid = LogPosteriorGrid.from_probs(record.posteriors)
    return PreparedUtterance(
        utt_id=record.utt_id,
        easy=view_inputs(record, TaskView.EASY, grid),
        hard=view_inputs(record, TaskView.HARD, grid),
    )


def prepare_corpus(records) -> list[PreparedUtterance]:
    return [prepare_utterance(r) for r in records]


def infer_vocab(prepared) -> tuple[int, int]:
    """(n_phone_types, n_word_types) spanning both views of a prepared set.

    The phone inventory comes from the feature width (P + 2 columns); the
    word table from the highest word id in use.
    """
    n_phones = 0
    n_words = 0
    for p in prepared:
        for pair in (p.easy, p.hard):
            if pair is None:
                continue
            inputs = pair[0]
            n_phones = max(n_phones, inputs.gop.shape[1] - 2)
            n_words = max(n_words, int(inputs.word_ids.max()) + 1)
    return n_phones, n_words
