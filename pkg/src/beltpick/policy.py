"""Pick selection, outcome verification and retraining cadence.

Selection is greedy on the forest score with one guard: when even the
best candidate scores below 0.1 the pick is usually skipped, but is
still attempted with probability 0.05 so the learner keeps collecting
labels in regions it currently believes are bad.  Without a model every
candidate is equally likely.

Outcomes are labelled by the gripper itself: if the jaws close to
(nearly) zero opening before the throw finishes, whatever was grabbed
was lost, so the attempt is a failure.  No human labelling enters the
loop anywhere.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .forest import train_forest

SCORE_THRESHOLD = 0.1
EXPLORE_PROB = 0.05
CLOSED_EPS = 0.005


@dataclass
class OpeningTrace:
    """Gripper opening recorded over one attempt; ``throw_time`` marks
    when the throw motion completed."""
    times: np.ndarray
    openings: np.ndarray
    throw_time: float


@dataclass
class AttemptRecord:
    """One attempt in the training log."""
    features: np.ndarray
    label: int                   # 1 success, 0 failure
    sim_time: float
    model_version: int
    x: float
    y: float
    angle: float
    opening: float
    extra: float
    z: float
    weight: float
    score: float                 # nan when picked without a model
    verdict: str = ""


def select_handle(scores: Optional[np.ndarray], n_candidates: int, rng,
                  threshold=SCORE_THRESHOLD,
                  explore_prob=EXPLORE_PROB) -> Optional[int]:
    """Choose which candidate to attempt.

    Returns an index into the candidate list or None for "skip this
    cycle".  ``scores`` is None when no model exists yet (uniform random
    choice).  With scores, the argmax is attempted outright at or above
    ``threshold``; below it, it is attempted with ``explore_prob``.
    """
    if n_candidates == 0:
        return None
    if scores is None:
        return int(rng.integers(n_candidates))
    if len(scores) != n_candidates:
        raise ValueError("scores do not match candidate count")
    best = int(np.argmax(scores))
    if scores[best] >= threshold:
        return best
    if rng.random() < explore_prob:
        return best
    return None


def post_verify(trace: OpeningTrace, closed_eps=CLOSED_EPS) -> bool:
    """Success iff the gripper never closed to ``closed_eps`` or less
    before the throw completed."""
    before = trace.times <= trace.throw_time
    if not before.any():
        return True
    return bool(trace.openings[before].min() > closed_eps)


@dataclass
class EveryNAttempts:
    """Retrain whenever ``n`` attempts accumulated since last training."""
    n: int = 100

    def due(self, attempt_count, sim_time, last_attempt, last_time):
        return attempt_count - last_attempt >= self.n


@dataclass
class EveryTSeconds:
    """Retrain whenever ``t`` seconds of simulation time passed since
    last training (the wall-clock analogue of a background trainer)."""
    t: float = 10.0

    def due(self, attempt_count, sim_time, last_attempt, last_time):
        return sim_time - last_time >= self.t


def retrain(records, n_trees=100, min_leaf=2, seed=0, n_jobs=1):
    """Train a fresh forest on the complete attempt log."""
    if not records:
        raise ValueError("cannot train on an empty log")
    X = np.stack([r.features for r in records])
    y = np.array([r.label for r in records], dtype=np.uint8)
    return train_forest(X, y, n_trees=n_trees, min_leaf=min_leaf,
                        seed=seed, n_jobs=n_jobs)
