from __future__ import annotations
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ArgumentError, TabEmbError

logger = logging.getLogger(__name__)


def _check_pairs(predictions: Sequence, golds: Sequence) -> None:
    if len(predictions) != len(golds):
        raise ArgumentError(f"{len(predictions)} predictions for {len(golds)} gold labels")
    if len(golds) == 0:
        raise ArgumentError("cannot score an empty prediction list")


def micro_counts(predictions: Sequence[Hashable], golds: Sequence[Hashable]) -> Tuple[int, int, int]:
    """(TP, FP, FN) pooled over classes."""
    _check_pairs(predictions, golds)
    tp, fp, fn = Counter(), Counter(), Counter()
    for p, g in zip(predictions, golds):
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    return sum(tp.values()), sum(fp.values()), sum(fn.values())


def micro_f1(predictions: Sequence[Hashable], golds: Sequence[Hashable]) -> float:
    """2*TP / (2*TP + FP + FN) pooled over classes; for single-label data this equals accuracy."""
    tp, fp, fn = micro_counts(predictions, golds)
    score = 2.0 * tp / (2.0 * tp + fp + fn)
    accuracy = tp / len(golds)
    if abs(score - accuracy) > 1e-12:
        raise TabEmbError(f"micro-F1 {score} disagrees with accuracy {accuracy} (TP={tp}, FP={fp}, FN={fn})")
    return score


@dataclass
class EvalReport:
    micro_f1: float
    per_class_f1: Dict[str, float]
    support: Dict[str, int]
    precision: Dict[str, float] = field(default_factory=dict)
    recall: Dict[str, float] = field(default_factory=dict)

    @property
    def n_targets(self) -> int:
        return sum(self.support.values())

    def frame(self) -> pd.DataFrame:
        """One row per class in the report; classes without support have f1 = NaN."""
        labels = list(self.support)
        return pd.DataFrame({
            "label": labels,
            "f1": [self.per_class_f1.get(l, np.nan) for l in labels],
            "precision": [self.precision.get(l, np.nan) for l in labels],
            "recall": [self.recall.get(l, np.nan) for l in labels],
            "support": [self.support[l] for l in labels],
        })


def per_class_scores(predictions: Sequence[str], golds: Sequence[str]):
    tp, fp, fn = Counter(), Counter(), Counter()
    for p, g in zip(predictions, golds):
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    return tp, fp, fn


def per_class_report(predictions: Sequence[str], golds: Sequence[str],
                     labels: Optional[Sequence[str]] = None) -> EvalReport:
    """
    Per-class precision / recall / F1 and the micro average. Classes with no gold
    support have no F1: they are left out of per_class_f1 instead of counted as 0.
    """
    _check_pairs(predictions, golds)
    tp, fp, fn = per_class_scores(predictions, golds)
    order = list(labels) if labels is not None else sorted(set(golds) | set(predictions))
    support = {l: tp[l] + fn[l] for l in order}
    f1, precision, recall = {}, {}, {}
    for l in order:
        predicted = tp[l] + fp[l]
        precision[l] = tp[l] / predicted if predicted else 0.0
        if support[l] == 0:
            continue
        recall[l] = tp[l] / support[l]
        f1[l] = 2.0 * tp[l] / (2.0 * tp[l] + fp[l] + fn[l])
    return EvalReport(micro_f1(predictions, golds), f1, support, precision, recall)


@dataclass
class StrataReport:
    high: float
    medium: float
    low: float
    bins: List[List[str]]
    excluded: List[str]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "bin": ["high", "medium", "low"],
            "mean_f1": [self.high, self.medium, self.low],
            "classes": [len(b) for b in self.bins],
            "excluded": [sum(l in self.excluded for l in b) for b in self.bins],
        })


def freq_stratified_f1(predictions: Sequence[str], golds: Sequence[str],
                       train_frequencies: Mapping[str, int]) -> StrataReport:
    """
    Classes sorted by descending training frequency (ties keep the mapping's order,
    i.e. label ordinal) and cut into three bins whose sizes differ by at most one.
    Each bin reports the unweighted mean per-class F1 over classes present in the
    gold labels; a bin with no such class reports NaN.
    """
    missing = sorted(set(golds) - set(train_frequencies))
    if missing:
        raise ArgumentError(f"gold classes without a training frequency: {missing}")
    if len(train_frequencies) < 3:
        raise ArgumentError(f"frequency strata need at least 3 classes, got {len(train_frequencies)}")

    report = per_class_report(predictions, golds, list(train_frequencies))
    position = {l: i for i, l in enumerate(train_frequencies)}
    ranked = sorted(train_frequencies, key=lambda l: (-train_frequencies[l], position[l]))
    bins = [list(b) for b in np.array_split(np.array(ranked, dtype=object), 3)]
    excluded = [l for l in ranked if l not in report.per_class_f1]
    if excluded:
        logger.info(f"{len(excluded)} classes have no test support and are left out of their bin: {excluded}")

    means = []
    for b in bins:
        scores = [report.per_class_f1[l] for l in b if l in report.per_class_f1]
        means.append(float(np.mean(scores)) if scores else float("nan"))
    return StrataReport(means[0], means[1], means[2], bins, excluded)
