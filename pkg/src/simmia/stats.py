"""Distance-distribution statistics: per-anchor member/non-member contrasts,
CDF exports, and scalar separation summaries.

Standard deviations are population (ddof=0) throughout; the summaries make no
claim about the sign of the member/non-member gap in general, only that the
AUCs quantify whatever separation exists.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .evalreport import roc_curve


@dataclass(frozen=True)
class PerReferenceStats:
    ref_index: int
    mean_member: float
    mean_nonmember: float
    std_member: float
    std_nonmember: float


def _check_two_classes(membership: np.ndarray, n_rows: int) -> np.ndarray:
    m = np.asarray(membership).astype(np.uint8)
    if m.shape != (n_rows,):
        raise ValueError(f"membership length {m.shape} does not match {n_rows} targets")
    if not (m == 1).any() or not (m == 0).any():
        raise ValueError("need both member and non-member targets")
    return m


def per_reference_stats(dm: np.ndarray, membership: np.ndarray) -> List[PerReferenceStats]:
    """Mean and population std of each anchor column, split by target class."""
    d = np.asarray(dm, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"distance matrix must be 2-D, got shape {d.shape}")
    m = _check_two_classes(membership, d.shape[0])
    dm_m = d[m == 1]
    dm_n = d[m == 0]
    out = []
    for j in range(d.shape[1]):
        out.append(
            PerReferenceStats(
                ref_index=j,
                mean_member=float(dm_m[:, j].mean()),
                mean_nonmember=float(dm_n[:, j].mean()),
                std_member=float(dm_m[:, j].std()),
                std_nonmember=float(dm_n[:, j].std()),
            )
        )
    return out


def stat_cdf(values: np.ndarray) -> List[Tuple[float, float]]:
    """Step-function support points of the empirical CDF; ends exactly at 1.0."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("stat_cdf needs a non-empty input")
    if not np.isfinite(v).all():
        raise ValueError("stat_cdf needs finite values")
    support, counts = np.unique(v, return_counts=True)
    cum = np.cumsum(counts)
    n = v.size
    points = [(float(s), int(c) / n) for s, c in zip(support, cum)]
    # force the exact endpoint despite any division roundoff
    points[-1] = (points[-1][0], 1.0)
    return points


def _below_auc(member_vals: np.ndarray, nonmember_vals: np.ndarray) -> float:
    # P(member stat < non-member stat) + half ties, via the exact ROC trapezoid
    scores = np.concatenate([-member_vals, -nonmember_vals])
    truth = np.concatenate(
        [np.ones(member_vals.size, dtype=np.uint8), np.zeros(nonmember_vals.size, dtype=np.uint8)]
    )
    _, auc = roc_curve(scores, truth)
    return auc


def gap_summary(dm: np.ndarray, membership: np.ndarray) -> Dict[str, float]:
    """Scalarize the per-target mean/std separation as threshold AUCs.

    Each AUC is the probability that a random member target's statistic lies
    below a random non-member target's statistic (ties count half); 0.5 means
    no separation.
    """
    d = np.asarray(dm, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError(f"distance matrix must be 2-D, got shape {d.shape}")
    m = _check_two_classes(membership, d.shape[0])
    per_target_mean = d.mean(axis=1)
    per_target_std = d.std(axis=1)
    return {
        "mean_gap_auc": _below_auc(per_target_mean[m == 1], per_target_mean[m == 0]),
        "std_gap_auc": _below_auc(per_target_std[m == 1], per_target_std[m == 0]),
    }
