"""Threshold calibration, FPR at fixed TPR, and AUROC for paired score sets.

Conventions pinned here:

* The detection threshold is the most ID-retentive boundary achieving at
  least the target TPR; with N not divisible by the target's denominator
  the achieved TPR is the smallest value >= the target.
* Ties at the threshold count as ID (the decision rule is inclusive), so
  OOD samples exactly at the threshold are false positives.
* AUROC is the Mann-Whitney statistic with ties weighted 0.5, computed
  from rank sums in O((n+m) log(n+m)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import check_score_vector


@dataclass
class ScoreSet:
    """Paired per-sample scores for an ID split and an OOD split."""

    id_scores: np.ndarray
    ood_scores: np.ndarray
    higher_is_id: bool = True
    method_label: str = ""

    def __post_init__(self):
        self.id_scores = check_score_vector(self.id_scores, "id_scores")
        self.ood_scores = check_score_vector(self.ood_scores, "ood_scores")


@dataclass
class EvalReport:
    """One (method, dataset) evaluation cell."""

    fpr95: float
    auroc: float
    threshold: float
    n_id: int
    n_ood: int

    def row(self) -> dict:
        return {
            "fpr95": self.fpr95,
            "auroc": self.auroc,
            "lambda": self.threshold,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
        }


def threshold_lambda(id_scores, tpr_target: float = 0.95, higher_is_id: bool = True) -> float:
    """Boundary retaining at least `tpr_target` of the ID scores on the ID side.

    With higher-is-ID scores this is the largest such value; with
    inverted scores, the smallest. Ties are included on the ID side.
    """
    s = check_score_vector(id_scores, "id_scores")
    if not (0.0 < tpr_target <= 1.0):
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    n = s.size
    # Smallest count whose retained fraction reaches the target. ceil of
    # the float product can land one off when tpr*n sits on an integer
    # (0.9 * 10 rounds above 9), so nudge against the actual comparison.
    need = math.ceil(tpr_target * n)
    if need > 1 and (need - 1) / n >= tpr_target:
        need -= 1
    while need < n and need / n < tpr_target:
        need += 1
    ordered = np.sort(s)
    if higher_is_id:
        return float(ordered[n - need])
    return float(ordered[need - 1])


def fpr_at_tpr(score_set: ScoreSet, tpr_target: float = 0.95) -> float:
    """Fraction of OOD scores on the ID side of the threshold (inclusive)."""
    lam = threshold_lambda(score_set.id_scores, tpr_target, score_set.higher_is_id)
    if score_set.higher_is_id:
        return float(np.count_nonzero(score_set.ood_scores >= lam) / score_set.ood_scores.size)
    return float(np.count_nonzero(score_set.ood_scores <= lam) / score_set.ood_scores.size)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..N with ties assigned the mean rank of their run."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    run_starts = np.concatenate(([True], np.diff(sorted_vals) != 0))
    run_ids = np.cumsum(run_starts) - 1
    counts = np.bincount(run_ids)
    first_position = np.concatenate(([0], np.cumsum(counts)[:-1]))
    mean_rank = first_position + (counts + 1) / 2.0
    ranks = np.empty(values.size, dtype=np.float64)
    ranks[order] = mean_rank[run_ids]
    return ranks


def auroc(score_set: ScoreSet) -> float:
    """Probability a random ID sample outscores a random OOD sample (ties = 0.5)."""
    id_s, ood_s = score_set.id_scores, score_set.ood_scores
    if not score_set.higher_is_id:
        id_s, ood_s = -id_s, -ood_s
    n, m = id_s.size, ood_s.size
    ranks = _average_ranks(np.concatenate([id_s, ood_s]))
    rank_sum = ranks[:n].sum()
    u = rank_sum - n * (n + 1) / 2.0
    return float(u / (n * m))


def evaluate(score_set: ScoreSet, tpr_target: float = 0.95) -> EvalReport:
    """FPR at the target TPR, AUROC, and the threshold, for one score set."""
    lam = threshold_lambda(score_set.id_scores, tpr_target, score_set.higher_is_id)
    if score_set.higher_is_id:
        fpr = float(np.count_nonzero(score_set.ood_scores >= lam) / score_set.ood_scores.size)
    else:
        fpr = float(np.count_nonzero(score_set.ood_scores <= lam) / score_set.ood_scores.size)
    return EvalReport(
        fpr95=fpr,
        auroc=auroc(score_set),
        threshold=lam,
        n_id=int(score_set.id_scores.size),
        n_ood=int(score_set.ood_scores.size),
    )
