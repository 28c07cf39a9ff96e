"""Task metrics, the cross-task global average, paired t-test, uniformity and ARI."""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import UndefinedCorrelationError, UsageError


class DegenerateMetricWarning(UserWarning):
    """A metric fell back to a conventional value (constant differences, single cluster)."""


def _check_pair(gold, pred):
    gold, pred = list(gold), list(pred)
    if not gold:
        raise UsageError("empty input")
    if len(gold) != len(pred):
        raise UsageError(f"gold and pred lengths differ ({len(gold)} vs {len(pred)})")
    return gold, pred


def _class_f1(gold, pred, cls) -> float:
    tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
    fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
    fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_of_class(gold, pred, cls) -> float:
    gold, pred = _check_pair(gold, pred)
    return _class_f1(gold, pred, cls)


def macro_f1(gold, pred, class_subset: Sequence | None = None, labels: Sequence | None = None) -> float:
    """Unweighted mean of per-class F1.

    Classes are ``class_subset`` if given, else the declared ``labels``, else
    every class seen in gold or pred. A declared class absent from both scores 0.
    """
    gold, pred = _check_pair(gold, pred)
    if class_subset is not None:
        classes = list(class_subset)
    elif labels is not None:
        classes = list(labels)
    else:
        classes = sorted(set(gold) | set(pred))
    if not classes:
        raise UsageError("no classes to average over")
    return sum(_class_f1(gold, pred, c) for c in classes) / len(classes)


def macro_recall(gold, pred, labels: Sequence | None = None) -> float:
    gold, pred = _check_pair(gold, pred)
    classes = list(labels) if labels is not None else sorted(set(gold) | set(pred))
    total = 0.0
    for c in classes:
        support = sum(1 for g in gold if g == c)
        hits = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        total += hits / support if support else 0.0
    return total / len(classes)


def accuracy(gold, pred) -> float:
    gold, pred = _check_pair(gold, pred)
    return sum(1 for g, p in zip(gold, pred) if g == p) / len(gold)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise UsageError("pearson needs two equal-length 1-D sequences")
    if len(x) < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 points")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    return pearson(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"))


def global_average(reports) -> float:
    """Mean over tasks of the mean of each task's metrics.

    ``reports`` is a sequence whose items are MetricReports, mappings of metric
    name to value, or plain sequences of values.
    """
    reports = list(reports)
    if not reports:
        raise UsageError("global_average needs at least one task")
    per_task = []
    for r in reports:
        if isinstance(r, MetricReport):
            vals = list(r.headline_values())
        elif isinstance(r, Mapping):
            vals = list(r.values())
        else:
            vals = list(r)
        if not vals:
            raise UsageError("each task must contribute at least one metric")
        per_task.append(sum(vals) / len(vals))
    return sum(per_task) / len(per_task)


@dataclass
class TTestResult:
    p_value: float
    statistic: float
    degenerate: bool = False
    n: int = 0


def paired_t_test(sample_a, sample_b) -> TTestResult:
    """Two-sided paired t-test on per-seed differences a - b."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError("paired samples must be equal-length 1-D sequences")
    n = len(a)
    if n < 2:
        raise UsageError("paired t-test needs at least 2 pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        warnings.warn("zero-variance differences in paired t-test", DegenerateMetricWarning, stacklevel=2)
        if mean == 0.0:
            return TTestResult(1.0, 0.0, True, n)
        return TTestResult(0.0, math.copysign(math.inf, mean), True, n)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), df=n - 1))
    return TTestResult(p, t, False, n)


def uniformity(z, t: float = 2.0) -> float:
    """log mean_{i<j} exp(-t ||z_i - z_j||^2) over unit-normalized rows (lower is more uniform)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise UsageError("uniformity needs at least 2 rows")
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    z = z / np.maximum(norms, 1e-12)
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    iu = np.triu_indices(z.shape[0], k=1)
    vals = -t * d2[iu]
    return float(logsumexp(vals) - math.log(len(vals)))


def _comb2(k):
    return k * (k - 1) / 2.0


def ari(gold_labels, cluster_assignments) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    gold, clus = _check_pair(gold_labels, cluster_assignments)
    n = len(gold)
    cells = Counter(zip(gold, clus))
    rows = Counter(gold)
    cols = Counter(clus)
    index = sum(_comb2(v) for v in cells.values())
    sum_a = sum(_comb2(v) for v in rows.values())
    sum_b = sum(_comb2(v) for v in cols.values())
    total = _comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        warnings.warn("ARI undefined for these partitions; returning 1.0 by convention",
                      DegenerateMetricWarning, stacklevel=2)
        return 1.0
    return (index - expected) / (maximum - expected)


# --- reports ---------------------------------------------------------------

@dataclass
class MetricReport:
    values: dict[str, float] = field(default_factory=dict)
    support: dict[str, int] = field(default_factory=dict)
    seed_stats: dict[str, dict[str, float]] = field(default_factory=dict)
    headline: list[str] = field(default_factory=list)

    def headline_values(self):
        names = self.headline or list(self.values)
        return [self.values[k] for k in names]

    @property
    def score(self) -> float:
        vals = self.headline_values()
        return sum(vals) / len(vals)

    def to_dict(self) -> dict:
        return {"values": dict(self.values), "support": dict(self.support), "seed_stats": dict(self.seed_stats),
                "headline": list(self.headline), "score": self.score if self.values else None}


def _dims(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return arr.reshape(len(arr), -1)


CLASSIFICATION_METRICS = ("macro_f1", "macro_recall", "f1_class", "macro_f1_subset", "accuracy")
REGRESSION_METRICS = ("pearson", "spearman")
METRIC_NAMES = CLASSIFICATION_METRICS + REGRESSION_METRICS


def evaluate_predictions(task_kind: str, metric_names: Sequence[str], gold, pred, *,
                         labels: Sequence | None = None, options: Mapping | None = None) -> MetricReport:
    """Compute the declared metrics; regression metrics with k>1 target dims yield one value per dim."""
    options = dict(options or {})
    report = MetricReport()
    for name in metric_names:
        if name not in METRIC_NAMES:
            raise UsageError(f"unknown metric {name!r}")
        if task_kind == "classification":
            if name == "macro_f1":
                report.values[name] = macro_f1(gold, pred, labels=labels)
            elif name == "macro_recall":
                report.values[name] = macro_recall(gold, pred, labels=labels)
            elif name == "accuracy":
                report.values[name] = accuracy(gold, pred)
            elif name == "f1_class":
                report.values[name] = f1_of_class(gold, pred, options["positive_class"])
            elif name == "macro_f1_subset":
                report.values[name] = macro_f1(gold, pred, class_subset=options["class_subset"])
            else:
                raise UsageError(f"metric {name!r} does not apply to classification")
            report.headline.append(name)
        else:
            fn = {"pearson": pearson, "spearman": spearman}.get(name)
            if fn is None:
                raise UsageError(f"metric {name!r} does not apply to regression")
            g, p = _dims(gold), _dims(pred)
            for k in range(g.shape[1]):
                key = name if g.shape[1] == 1 else f"{name}[{k}]"
                try:
                    report.values[key] = fn(g[:, k], p[:, k])
                except UndefinedCorrelationError:
                    # constant predictions (e.g. an untrained head) carry no correlation
                    warnings.warn(f"{key} undefined for constant input; reporting 0.0", DegenerateMetricWarning,
                                  stacklevel=2)
                    report.values[key] = 0.0
                report.headline.append(key)
    if task_kind == "classification":
        report.support = {str(k): v for k, v in sorted(Counter(gold).items(), key=lambda kv: str(kv[0]))}
    else:
        report.support = {"n": len(gold)}
    return report


def seed_statistics(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=0)), "n": int(len(arr)),
            "min": float(arr.min()), "max": float(arr.max())}
