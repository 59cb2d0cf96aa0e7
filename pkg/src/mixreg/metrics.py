"""Regression and threshold-classification metrics, plus one-way ANOVA.

The classification metrics follow the voxel-labelling scheme used for
encoding models: for every test sample, the mean and standard deviation of
its ground-truth vector define a threshold ``mu + k*sigma``; entries above it
are class 1 in both the truth and the prediction.

Zero-denominator precision/recall/F1 are reported as 0, except for a class
with no true and no predicted members, which is vacuously perfect (1, 1, 1).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from .exceptions import ArgumentError

THRESHOLD_SHIFTS = tuple(range(-3, 4))


def _pair(y_true, y_pred):
    a = np.asarray(y_true, dtype=float)
    b = np.asarray(y_pred, dtype=float)
    if a.shape != b.shape:
        raise ArgumentError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    if a.size == 0:
        raise ArgumentError("mae of empty arrays")
    return float(np.mean(np.abs(a - b)))


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination per output column, averaged uniformly.

    A column with zero variance scores 1 if it is predicted exactly and 0
    otherwise.
    """
    a, b = _pair(y_true, y_pred)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape[0] < 2:
        raise ArgumentError("r2_score needs at least two rows")
    ss_res = ((a - b) ** 2).sum(axis=0)
    ss_tot = ((a - a.mean(axis=0)) ** 2).sum(axis=0)
    scores = np.where(ss_res == 0, 1.0, 0.0)
    ok = ss_tot > 0
    scores[ok] = 1.0 - ss_res[ok] / ss_tot[ok]
    return float(scores.mean())


def sigma_threshold_binarize(values, mu, sigma, k) -> np.ndarray:
    """Label 1 where ``value > mu + k*sigma`` (strict), else 0."""
    if sigma < 0:
        raise ArgumentError("sigma must be non-negative")
    return (np.asarray(values, dtype=float) > mu + k * sigma).astype(np.int8)


def _safe_div(num, den):
    return num / den if den > 0 else 0.0


def _prf(tp, fp, fn):
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0
    p = _safe_div(tp, tp + fp)
    r = _safe_div(tp, tp + fn)
    return p, r, _safe_div(2 * p * r, p + r)


@dataclass(frozen=True)
class ClassificationReport:
    k: int
    tp: int
    fp: int
    fn: int
    tn: int
    class1: tuple
    class0: tuple
    macro: tuple
    micro: tuple

    @property
    def accuracy(self) -> float:
        return _safe_div(self.tp + self.tn, self.tp + self.fp + self.fn + self.tn)

    def as_dict(self) -> dict:
        return asdict(self)


def classification_report(true_labels, pred_labels, k: int = 0) -> ClassificationReport:
    """Binary precision/recall/F1 for class 1, class 0, macro and micro averages.

    Each score triple is ``(precision, recall, f1)``.
    """
    t = np.asarray(true_labels).astype(bool)
    p = np.asarray(pred_labels).astype(bool)
    if t.shape != p.shape:
        raise ArgumentError(f"label length mismatch: {t.shape} vs {p.shape}")
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    tn = int(np.sum(~t & ~p))
    class1 = _prf(tp, fp, fn)
    class0 = _prf(tn, fn, fp)
    macro = tuple((a + b) / 2 for a, b in zip(class1, class0))
    # pooled over both classes every error is one FP and one FN, so P = R = F1 = accuracy
    acc = _safe_div(tp + tn, t.size)
    micro = (acc, acc, acc)
    return ClassificationReport(k, tp, fp, fn, tn, class1, class0, macro, micro)


REPORT_COLUMNS = (
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "micro_precision",
    "micro_recall",
    "micro_f1",
    "class1_precision",
    "class1_recall",
    "class1_f1",
)


def _report_row(rep: ClassificationReport) -> np.ndarray:
    return np.array(rep.macro + rep.micro + rep.class1)


def evaluate_methods(y_true, predictions: dict, shifts=THRESHOLD_SHIFTS) -> list:
    """Table of threshold-classification scores per method and threshold shift.

    For every test row, ``mu`` and ``sigma`` (population standard deviation)
    come from the ground-truth row; truth and each method's prediction are
    binarized at ``mu + k*sigma`` for every ``k`` in ``shifts``. Per-row
    scores are averaged over rows.

    Returns a list of dicts with keys ``method``, ``k`` and
    :data:`REPORT_COLUMNS`.
    """
    y_true = np.asarray(y_true, dtype=float)
    if y_true.ndim == 1:
        y_true = y_true[None, :]
    preds = {}
    for name, pred in predictions.items():
        pred = np.asarray(pred, dtype=float)
        if pred.ndim == 1:
            pred = pred[None, :]
        if pred.shape != y_true.shape:
            raise ArgumentError(f"prediction {name!r} has shape {pred.shape}, truth {y_true.shape}")
        preds[name] = pred
    if y_true.shape[0] == 0:
        raise ArgumentError("no test rows")

    mu = y_true.mean(axis=1)
    sigma = y_true.std(axis=1)
    rows = []
    for name, pred in preds.items():
        for k in shifts:
            acc = np.zeros(len(REPORT_COLUMNS))
            for i in range(y_true.shape[0]):
                t = sigma_threshold_binarize(y_true[i], mu[i], sigma[i], k)
                p = sigma_threshold_binarize(pred[i], mu[i], sigma[i], k)
                acc += _report_row(classification_report(t, p, k))
            row = {"method": name, "k": k}
            row.update(zip(REPORT_COLUMNS, (acc / y_true.shape[0]).tolist()))
            rows.append(row)
    return rows


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    df_between: int
    df_within: int
    p_value: float


def anova_oneway(groups) -> AnovaResult:
    """One-way ANOVA F test.

    When every value is identical, ``F = 0`` and ``p = 1``. When groups
    differ but have no spread within them, ``F = inf`` and ``p = 0``.
    """
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    if len(groups) < 2:
        raise ArgumentError("need at least two groups")
    if any(g.size == 0 for g in groups):
        raise ArgumentError("every group needs at least one value")
    total = sum(g.size for g in groups)
    df_between = len(groups) - 1
    df_within = total - len(groups)
    if df_within < 1:
        raise ArgumentError("total sample count must exceed the number of groups")

    grand = np.concatenate(groups).mean()
    ss_between = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    if ss_within == 0:
        if ss_between == 0:
            return AnovaResult(0.0, df_between, df_within, 1.0)
        return AnovaResult(float("inf"), df_between, df_within, 0.0)
    f = (ss_between / df_between) / (ss_within / df_within)
    # survival function of F(d1, d2) via the regularized incomplete beta
    p = float(special.betainc(df_within / 2.0, df_between / 2.0, df_within / (df_within + df_between * f)))
    return AnovaResult(float(f), df_between, df_within, min(max(p, 0.0), 1.0))
