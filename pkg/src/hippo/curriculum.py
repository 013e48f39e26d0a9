"""Easy-to-hard task scheduler.

Each training iteration draws between the read-aloud view (features from
the reference text) and the free-speaking view (features from the
transcription) with hard-task probability tau/T, so training starts on the
easy view and ends on the hard one.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class TaskView(Enum):
    EASY = "easy"   # read-aloud: reference text view
    HARD = "hard"   # free-speaking: transcription view


@dataclass
class CurriculumState:
    tau: int
    total: int
    rng: np.random.Generator

    def __post_init__(self):
        if self.total < 1:
            raise ValueError("total iterations must be >= 1")
        if not (0 <= self.tau <= self.total):
            raise ValueError("tau must lie in [0, total]")

    @staticmethod
    def fresh(total: int, seed: int) -> "CurriculumState":
        return CurriculumState(tau=0, total=total,
                               rng=np.random.default_rng(np.random.SeedSequence([seed, 7])))


def schedule_prob(tau: int, total: int) -> float:
    if total == 0:
        raise ValueError("total iterations must be nonzero")
    return tau / total


def sample_task(state: CurriculumState) -> TaskView:
    """Draw the next task view and advance the iteration counter."""
    p = schedule_prob(state.tau, state.total)
    hard = state.rng.random() < p
    state.tau = min(state.tau + 1, state.total)
    return TaskView.HARD if hard else TaskView.EASY


def select_view(prepared, task: TaskView):
    """Pick one view's (inputs, targets) from a prepared utterance."""
    pair = prepared.easy if task is TaskView.EASY else prepared.hard
    if pair is None:
        raise ValueError(f"utterance {getattr(prepared, 'utt_id', '?')} "
                         f"is missing the {task.value} view")
    return pair
