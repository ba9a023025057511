"""Multi-label evaluation: AUC-ROC, F1, precision@K, macro average precision, accuracy.

Conventions: AUC ties get midranks; top-K and argmax ties go to the lower class
index; macro averages skip classes that are undefined on the split (no
positive, or for AUC, missing either polarity) and report how many were
skipped.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, ShapeError

THRESHOLD = 0.5


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} differ")
    if scores.ndim == 1:
        scores, labels = scores[:, None], labels[:, None]
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return scores, labels.astype(bool)


def binary_auc(scores, labels):
    """Rank-based AUC of one score vector; None when a polarity is missing."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = kernels.midranks(np.ascontiguousarray(scores, dtype=np.float64))
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def per_class_auc(scores, labels):
    scores, labels = _check(scores, labels)
    return [binary_auc(scores[:, j], labels[:, j]) for j in range(scores.shape[1])]


def auc_roc(scores, labels, averaging="macro"):
    scores, labels = _check(scores, labels)
    if averaging == "micro":
        value = binary_auc(scores.ravel(), labels.ravel())
        if value is None:
            raise DataError("micro AUC needs at least one positive and one negative")
        return value
    vals = [v for v in per_class_auc(scores, labels) if v is not None]
    if not vals:
        raise DataError("no class has both positive and negative examples")
    return float(np.mean(vals))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def confusion(scores, labels, threshold=THRESHOLD):
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = (pred & labels).sum(axis=0)
    fp = (pred & ~labels).sum(axis=0)
    fn = (~pred & labels).sum(axis=0)
    return tp, fp, fn


def per_class_f1(scores, labels, threshold=THRESHOLD):
    tp, fp, fn = confusion(scores, labels, threshold)
    return [_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]


def f1(scores, labels, threshold=THRESHOLD, averaging="micro"):
    """Micro: pooled TP/FP/FN. Macro: mean per-class F1 over classes with a positive (0/0 -> 0)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must be in (0, 1)")
    tp, fp, fn = confusion(scores, labels, threshold)
    if averaging == "micro":
        return _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    support = tp + fn
    vals = [_f1(int(a), int(b), int(c)) for a, b, c, s in zip(tp, fp, fn, support) if s > 0]
    return float(np.mean(vals)) if vals else 0.0


def precision_at_k(scores, labels, k):
    scores, labels = _check(scores, labels)
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k={k} must be in [1, {scores.shape[1]}]")
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = np.take_along_axis(labels, top, axis=1).sum(axis=1)
    return float(np.mean(hits / k))


def binary_average_precision(scores, labels):
    """Sum over descending distinct thresholds of (R_i - R_{i-1}) * P_i; None without positives."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    s = np.asarray(scores, dtype=np.float64)[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of each run of equal scores = one threshold
    last = np.r_[s[1:] != s[:-1], True]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def per_class_ap(scores, labels):
    scores, labels = _check(scores, labels)
    return [binary_average_precision(scores[:, j], labels[:, j]) for j in range(scores.shape[1])]


def macro_ap(scores, labels):
    vals = [v for v in per_class_ap(scores, labels) if v is not None]
    if not vals:
        raise DataError("no class has a positive example")
    return float(np.mean(vals))


def accuracy(scores, labels):
    scores, labels = _check(scores, labels)
    if not (labels.sum(axis=1) == 1).all():
        raise DataError("accuracy needs exactly one true class per row")
    return float(np.mean(np.argmax(scores, axis=1) == np.argmax(labels, axis=1)))


@dataclass
class MetricReport:
    auc_macro: float
    auc_micro: float
    f1_macro: float
    f1_micro: float
    p_at_k: dict
    ap_macro: float
    accuracy: float = None
    skipped_auc: int = 0
    skipped_ap: int = 0
    per_class: list = field(default_factory=list)

    def summary_rows(self):
        rows = [("auc_macro", self.auc_macro), ("auc_micro", self.auc_micro), ("f1_macro", self.f1_macro),
                ("f1_micro", self.f1_micro)]
        rows += [(f"p_at_{k}", v) for k, v in sorted(self.p_at_k.items())]
        rows.append(("ap_macro", self.ap_macro))
        if self.accuracy is not None:
            rows.append(("accuracy", self.accuracy))
        rows += [("skipped_auc_classes", self.skipped_auc), ("skipped_ap_classes", self.skipped_ap)]
        return rows

    def summary_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, v in self.summary_rows():
            w.writerow([name, "" if v is None or (isinstance(v, float) and np.isnan(v)) else _fmt(v)])
        return buf.getvalue()

    def per_class_csv(self, names=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "auc", "f1", "ap", "support", "skipped"])
        for j, row in enumerate(self.per_class):
            name = names[j] if names else j
            w.writerow([name, _fmt(row["auc"]), _fmt(row["f1"]), _fmt(row["ap"]), row["support"], int(row["skipped"])])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6f}"


def evaluate(scores, labels, ks=(5, 8, 15), threshold=THRESHOLD, single_label=False):
    """Every metric at once; undefined aggregates become NaN instead of raising."""
    scores, labels = _check(scores, labels)
    aucs = per_class_auc(scores, labels)
    aps = per_class_ap(scores, labels)
    f1s = per_class_f1(scores, labels, threshold)
    support = labels.sum(axis=0)

    def guarded(fn):
        try:
            return fn()
        except DataError:
            return float("nan")

    per_class = [
        {"auc": a, "f1": f, "ap": p, "support": int(s), "skipped": a is None or p is None}
        for a, f, p, s in zip(aucs, f1s, aps, support)
    ]
    return MetricReport(
        auc_macro=guarded(lambda: auc_roc(scores, labels, "macro")),
        auc_micro=guarded(lambda: auc_roc(scores, labels, "micro")),
        f1_macro=f1(scores, labels, threshold, "macro"),
        f1_micro=f1(scores, labels, threshold, "micro"),
        p_at_k={k: precision_at_k(scores, labels, k) for k in ks if k <= scores.shape[1]},
        ap_macro=guarded(lambda: macro_ap(scores, labels)),
        accuracy=accuracy(scores, labels) if single_label else None,
        skipped_auc=sum(a is None for a in aucs),
        skipped_ap=sum(p is None for p in aps),
        per_class=per_class,
    )
