"""Attack success rate, ROC/AUC, and multi-attack comparison tables.

Scores handed to roc_curve are member-evidence scores: larger means more
likely member. AUC is accumulated in integer arithmetic (tie-aware trapezoid)
so it equals the exhaustive pairwise probability P(member score > non-member
score) + half the tie mass, bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np


def asr(decisions: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of positions where decision matches truth."""
    d = np.asarray(decisions)
    t = np.asarray(truth)
    if d.shape != t.shape or d.size == 0:
        raise ValueError(f"decision/truth shapes {d.shape} / {t.shape} are unusable")
    return float((d == t).mean())


def roc_curve(
    scores: np.ndarray, truth: np.ndarray
) -> Tuple[List[Tuple[float, float]], float]:
    """Threshold sweep over distinct scores; ties grouped into single steps."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth)
    if s.shape != t.shape:
        raise ValueError("scores and truth must have equal length")
    n_pos = int((t == 1).sum())
    n_neg = int((t == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs both classes present")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order]

    points = [(0.0, 0.0)]
    numerator = 0  # exact: 2 * area * n_pos * n_neg
    tp = fp = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp_inc = int((t_sorted[i:j] == 1).sum())
        fp_inc = (j - i) - tp_inc
        numerator += fp_inc * (2 * tp + tp_inc)
        tp += tp_inc
        fp += fp_inc
        points.append((fp / n_neg, tp / n_pos))
        i = j
    auc = numerator / (2 * n_pos * n_neg)
    return points, auc


def sweep_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """ASR-maximizing threshold for the rule "score <= threshold means member".

    Candidates are midpoints between adjacent distinct scores plus sentinels
    beyond both extremes; ties resolve toward the smallest candidate.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    uniq = np.unique(s)
    candidates = np.concatenate(
        [[uniq[0] - 1.0], (uniq[1:] + uniq[:-1]) / 2.0, [uniq[-1] + 1.0]]
    )
    best_thr = float(candidates[0])
    best_acc = -1.0
    for thr in candidates:
        acc = float(((s <= thr).astype(np.uint8) == y).mean())
        if acc > best_acc:
            best_acc, best_thr = acc, float(thr)
    return best_thr


@dataclass(frozen=True)
class EvalReport:
    asr: float
    roc: List[Tuple[float, float]]
    auc: float
    confusion: Dict[str, int]
    meta: Dict[str, object] = field(default_factory=dict)


def build_report(
    member_scores: np.ndarray,
    decisions: np.ndarray,
    truth: np.ndarray,
    meta: Optional[Dict[str, object]] = None,
) -> EvalReport:
    d = np.asarray(decisions).astype(np.uint8)
    t = np.asarray(truth).astype(np.uint8)
    points, auc = roc_curve(member_scores, t)
    tp = int(((d == 1) & (t == 1)).sum())
    fp = int(((d == 1) & (t == 0)).sum())
    tn = int(((d == 0) & (t == 0)).sum())
    fn = int(((d == 0) & (t == 1)).sum())
    return EvalReport(
        asr=asr(d, t),
        roc=points,
        auc=auc,
        confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# Comparison tables and sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonRow:
    kind: str
    asr_mean: float
    asr_std: float
    auc_mean: float
    auc_std: float
    n_runs: int


@dataclass(frozen=True)
class ComparisonTable:
    rows: List[ComparisonRow]
    reports: Dict[str, List[EvalReport]]

    def to_text(self) -> str:
        lines = [f"{'attack':<10} {'asr_mean':>9} {'asr_std':>8} {'auc_mean':>9} {'auc_std':>8} {'runs':>5}"]
        for r in self.rows:
            lines.append(
                f"{r.kind:<10} {r.asr_mean:>9.4f} {r.asr_std:>8.4f} "
                f"{r.auc_mean:>9.4f} {r.auc_std:>8.4f} {r.n_runs:>5d}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Union[str, Path]) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["attack", "asr_mean", "asr_std", "auc_mean", "auc_std", "runs"])
            for r in self.rows:
                w.writerow(
                    [r.kind, f"{r.asr_mean:.6f}", f"{r.asr_std:.6f}",
                     f"{r.auc_mean:.6f}", f"{r.auc_std:.6f}", r.n_runs]
                )


def compare_attacks(ds, refs, kinds: Sequence[str], config, seeds: Optional[Sequence[int]] = None) -> ComparisonTable:
    """Train and evaluate each attack kind on the shared splits and anchors.

    ``seeds`` varies the training seed (init, shuffling, sampling); dataset
    and anchors stay fixed so rows are directly comparable.
    """
    from . import attacks as _attacks  # deferred to avoid an import cycle

    if seeds is None:
        seeds = [config.train.seed]
    reports: Dict[str, List[EvalReport]] = {}
    rows: List[ComparisonRow] = []
    for kind in kinds:
        runs = []
        for seed in seeds:
            cfg = config.with_seed(seed)
            model = _attacks.train_attack(kind, ds, refs, cfg)
            runs.append(_attacks.evaluate_attack(model, ds))
        reports[kind] = runs
        asrs = np.array([r.asr for r in runs])
        aucs = np.array([r.auc for r in runs])
        rows.append(
            ComparisonRow(
                kind=kind,
                asr_mean=float(asrs.mean()),
                asr_std=float(asrs.std()),
                auc_mean=float(aucs.mean()),
                auc_std=float(aucs.std()),
                n_runs=len(runs),
            )
        )
    return ComparisonTable(rows=rows, reports=reports)


@dataclass(frozen=True)
class SweepCell:
    fraction: float
    kind: str
    asr_mean: float
    asr_std: float
    n_anchors: int


@dataclass(frozen=True)
class SweepTable:
    cells: List[SweepCell]

    def to_text(self) -> str:
        lines = [f"{'fraction':>8} {'attack':<10} {'anchors':>7} {'asr_mean':>9} {'asr_std':>8}"]
        for c in self.cells:
            lines.append(
                f"{c.fraction:>8.4f} {c.kind:<10} {c.n_anchors:>7d} "
                f"{c.asr_mean:>9.4f} {c.asr_std:>8.4f}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Union[str, Path]) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "attack", "anchors", "asr_mean", "asr_std"])
            for c in self.cells:
                w.writerow(
                    [f"{c.fraction:.6f}", c.kind, c.n_anchors,
                     f"{c.asr_mean:.6f}", f"{c.asr_std:.6f}"]
                )


def fraction_sweep(ds, fractions: Sequence[float], kinds: Sequence[str], config, seeds: Sequence[int]) -> SweepTable:
    """Retrain anchor-dependent attacks at each reference fraction.

    Anchors are resampled per (fraction, seed); the FE control ignores anchors
    entirely, so its retraining at a given seed yields identical rows across
    fractions and is computed once.
    """
    from . import attacks as _attacks
    from .similarity import sample_reference_set

    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction {f} outside (0, 1]")

    fe_cache: Dict[int, float] = {}
    cells: List[SweepCell] = []
    for fraction in fractions:
        per_kind: Dict[str, List[float]] = {k: [] for k in kinds}
        n_anchors = 0
        for seed in seeds:
            refs = sample_reference_set(ds, fraction, seed)
            n_anchors = refs.n
            cfg = config.with_seed(seed)
            for kind in kinds:
                if kind == _attacks.KIND_FE:
                    if seed not in fe_cache:
                        model = _attacks.train_attack(kind, ds, refs, cfg)
                        fe_cache[seed] = _attacks.evaluate_attack(model, ds).asr
                    per_kind[kind].append(fe_cache[seed])
                else:
                    model = _attacks.train_attack(kind, ds, refs, cfg)
                    per_kind[kind].append(_attacks.evaluate_attack(model, ds).asr)
        for kind in kinds:
            vals = np.array(per_kind[kind])
            cells.append(
                SweepCell(
                    fraction=float(fraction),
                    kind=kind,
                    asr_mean=float(vals.mean()),
                    asr_std=float(vals.std()),
                    n_anchors=n_anchors,
                )
            )
    return SweepTable(cells=cells)


def write_roc_csv(report: EvalReport, path: Union[str, Path]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for fpr, tpr in report.roc:
            w.writerow([f"{fpr:.10g}", f"{tpr:.10g}"])
