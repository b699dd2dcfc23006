"""Scoring a selection against the ground-truth support."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class SelectionScore:
    fdp: float
    tpr: float
    n_selected: int
    n_true_active: int
    # set when there is no true active feature and the TPR is a convention
    empty_support: bool = False


def _index_set(values, p: int) -> set[int]:
    out = set()
    for v in np.asarray(list(values) if not isinstance(values, np.ndarray) else values).ravel():
        iv = int(v)
        if iv != v or not 0 <= iv < p:
            raise ValueError(f"index {v!r} outside [0, {p})")
        out.add(iv)
    return out


def score_selection(selected: Iterable[int], support_true: Iterable[int], p: int) -> SelectionScore:
    """False discovery proportion and true positive rate of one selection.

    FDP uses the ``max(|selected|, 1)`` guard, so an empty selection has
    FDP 0. With an empty true support the TPR is 1 when nothing is selected
    and 0 otherwise.
    """
    sel = _index_set(selected, p)
    s1 = _index_set(support_true, p)
    tp = len(sel & s1)
    fdp = (len(sel) - tp) / max(len(sel), 1)
    if s1:
        tpr = tp / len(s1)
    else:
        tpr = 1.0 if not sel else 0.0
    return SelectionScore(fdp, tpr, len(sel), len(s1), empty_support=not s1)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    median: float
    q1: float
    q3: float
    std: float
    count: int

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def mcse(self) -> float:
        """Monte Carlo standard error of the mean."""
        return self.std / np.sqrt(self.count) if self.count > 1 else 0.0


def summarize(values: Sequence[float]) -> MetricSummary:
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q1, med, q3 = np.quantile(a, [0.25, 0.5, 0.75])
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return MetricSummary(float(a.mean()), float(med), float(q1), float(q3), std, int(a.size))


def aggregate_scores(scores: Sequence[SelectionScore]) -> dict[str, MetricSummary]:
    """Mean, median and quartiles of FDP, TPR and selection size across repetitions."""
    if len(scores) == 0:
        raise ValueError("need at least one score")
    return {
        "fdp": summarize([s.fdp for s in scores]),
        "tpr": summarize([s.tpr for s in scores]),
        "n_selected": summarize([s.n_selected for s in scores]),
    }
