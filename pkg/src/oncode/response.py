"""mRECIST response derivation, evaluation metrics, and grouped CV splits.

Best response is the minimum percent volume change relative to baseline
over grid points in [10, 64) days; categories follow the standard
modified-RECIST cuts (CR <= -95 < PR <= -50 < SD <= 35 < PD) and
consolidate to responder (CR/PR/SD) vs non-responder (PD).

Metrics with no defined value (zero variance, single class) are
reported as ``None`` and serialized as JSON null / empty CSV field,
never silently 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import rankdata

BEST_RESPONSE_MIN_DAY = 10.0
BEST_RESPONSE_MAX_DAY = 64.0   # exclusive
GRID_LOOKUP_TOL = 1e-9

CATEGORY_CUTS = {"CR": -95.0, "PR": -50.0, "SD": 35.0}  # right edges, inclusive


class ResponseCategory(Enum):
    CR = "CR"
    PR = "PR"
    SD = "SD"
    PD = "PD"


def _times_volumes(obj) -> tuple[np.ndarray, np.ndarray]:
    times = np.asarray(obj.times, dtype=np.float64)
    if hasattr(obj, "volumes_mm3") and obj.volumes_mm3 is not None:
        vols = np.asarray(obj.volumes_mm3, dtype=np.float64)
    elif hasattr(obj, "volumes"):
        vols = np.asarray(obj.volumes, dtype=np.float64)
    else:
        raise TypeError("object exposes neither volumes_mm3 nor volumes")
    return times, vols


def delta_v(series_or_trajectory, t: float) -> float:
    """Percent volume change at time t relative to the baseline volume."""
    times, vols = _times_volumes(series_or_trajectory)
    v_initial = vols[0]
    if v_initial <= 0:
        raise ValueError("baseline volume must be positive")
    idx = int(np.argmin(np.abs(times - t)))
    if abs(times[idx] - t) > GRID_LOOKUP_TOL:
        raise ValueError(f"time {t} not on the grid (nearest is {times[idx]:g})")
    return 100.0 * (vols[idx] - v_initial) / v_initial


def best_response(series_or_trajectory) -> float:
    """Minimum percent change over grid points with 10 <= t < 64 days."""
    times, vols = _times_volumes(series_or_trajectory)
    mask = (times >= BEST_RESPONSE_MIN_DAY) & (times < BEST_RESPONSE_MAX_DAY)
    if not mask.any():
        raise ValueError(
            f"no grid points in [{BEST_RESPONSE_MIN_DAY:g}, {BEST_RESPONSE_MAX_DAY:g}) days")
    v_initial = vols[0]
    changes = 100.0 * (vols[mask] - v_initial) / v_initial
    return float(changes.min())


def categorize(best_response_percent: float) -> ResponseCategory:
    """Map a best-response percentage to its mRECIST category."""
    x = float(best_response_percent)
    if not np.isfinite(x):
        raise ValueError("best response must be finite")
    if x <= CATEGORY_CUTS["CR"]:
        return ResponseCategory.CR
    if x <= CATEGORY_CUTS["PR"]:
        return ResponseCategory.PR
    if x <= CATEGORY_CUTS["SD"]:
        return ResponseCategory.SD
    return ResponseCategory.PD


def binarize(category: ResponseCategory) -> bool:
    """Consolidate CR/PR/SD into the responder class; PD is non-responder."""
    return category is not ResponseCategory.PD


def response_label(series_or_trajectory) -> bool:
    return binarize(categorize(best_response(series_or_trajectory)))


# -- regression and classification metrics -----------------------------------------


def regression_metrics(y_true, y_pred) -> tuple[float | None, float | None]:
    """(R^2, Spearman) with None sentinels for degenerate inputs."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("inputs must be equal-length nonempty arrays")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot < 1e-300:
        r2 = None
    else:
        r2 = 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot
    spearman = _spearman(y_true, y_pred)
    return r2, spearman


def _spearman(a: np.ndarray, b: np.ndarray) -> float | None:
    if np.all(a == a[0]) or np.all(b == b[0]):
        return None
    ra = rankdata(a)  # average ranks on ties
    rb = rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = np.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom < 1e-300:
        return None
    return float(ra @ rb) / denom


def classification_metrics(labels, scores, threshold: float = 0.5
                           ) -> tuple[float | None, float | None, float]:
    """(balanced accuracy, AUROC, F1) for binary labels and real scores.

    Predicted positive iff score > threshold. AUROC uses the rank
    statistic with half credit for ties; with a single class present it
    is None (balanced accuracy likewise).
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.size == 0:
        raise ValueError("labels and scores must be equal-length nonempty arrays")
    pred = scores > threshold
    tp = int(np.sum(pred & labels))
    tn = int(np.sum(~pred & ~labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    n_pos = tp + fn
    n_neg = tn + fp

    if n_pos == 0 or n_neg == 0:
        bal_acc = None
        auroc = None
    else:
        bal_acc = 0.5 * (tp / n_pos + tn / n_neg)
        ranks = rankdata(scores)
        auroc = (float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    f1 = 0.0 if (2 * tp + fp + fn) == 0 else 2 * tp / (2 * tp + fp + fn)
    return bal_acc, auroc, f1


@dataclass
class MetricsReport:
    """Pooled evaluation metrics plus per-category counts."""

    r2: float | None = None
    spearman: float | None = None
    balanced_accuracy: float | None = None
    auroc: float | None = None
    f1: float | None = None
    counts: dict = field(default_factory=dict)

    CSV_FIELDS = ("r2", "spearman", "bal_acc", "auroc", "f1")

    def to_dict(self) -> dict:
        return {
            "r2": self.r2,
            "spearman": self.spearman,
            "bal_acc": self.balanced_accuracy,
            "auroc": self.auroc,
            "f1": self.f1,
            "counts": dict(sorted(self.counts.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> list[str]:
        vals = (self.r2, self.spearman, self.balanced_accuracy, self.auroc, self.f1)
        return ["" if v is None else repr(v) for v in vals]

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_FIELDS)
            writer.writerow(self.csv_row())


# -- grouped cross-validation --------------------------------------------------------


@dataclass
class FoldSplit:
    """Partition of experiment keys into folds, grouped by tumor-model id."""

    folds: list[list[tuple[str, str]]]
    seed: int

    def train_test(self, fold: int) -> tuple[list, list]:
        if not (0 <= fold < len(self.folds)):
            raise ValueError(f"fold {fold} out of range (k={len(self.folds)})")
        test = list(self.folds[fold])
        train = [key for i, f in enumerate(self.folds) if i != fold for key in f]
        return train, test


def grouped_kfold(experiments, k: int = 5, seed: int = 0) -> FoldSplit:
    """Deal tumor-model ids round-robin after a seeded shuffle; every
    experiment of a tumor lands in that tumor's fold."""
    models = sorted({exp.model_id for exp in experiments})
    if len(models) < k:
        raise ValueError(f"need at least {k} distinct tumor-model ids, got {len(models)}")
    rng = np.random.default_rng(seed)
    order = [models[i] for i in rng.permutation(len(models))]
    fold_of = {m: i % k for i, m in enumerate(order)}
    folds: list[list[tuple[str, str]]] = [[] for _ in range(k)]
    for exp in experiments:
        folds[fold_of[exp.model_id]].append(exp.key)
    return FoldSplit(folds=folds, seed=seed)
