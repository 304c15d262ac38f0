"""Evaluation metrics and the Mann-Whitney U rank test.

Regression quality is measured against the stored mean judgment; the
classification block thresholds scores (strictly greater than) and compares
against the stored class label. F1 is reported as undefined, never as a
conventional 0, when no positives were predicted or none exist.
"""

import itertools
import json
import math

from dataclasses import dataclass

import numpy as np

from .corpus import CLICKBAIT

DEFAULT_THRESHOLD = 0.5

# largest pooled sample for which the exact Mann-Whitney p is enumerated
EXACT_ENUMERATION_LIMIT = 14

EXACT = "exact"
NORMAL_APPROX = "normal-approx"


@dataclass
class MetricsReport:
    mse: float
    mae: float
    accuracy: float
    precision: float  # None when undefined
    recall: float     # None when undefined
    f1: float         # None when undefined
    n: int
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self):
        """Flat JSON-ready dict; undefined ratios serialize as null."""
        return {
            "mse": self.mse,
            "mae": self.mae,
            "acc": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "n": self.n,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def summary(self):
        """One human-readable line; undefined F1 prints as a dash."""
        def fmt(x):
            return "—" if x is None else "%.4f" % x
        return "mse %s  mae %s  acc %s  precision %s  recall %s  f1 %s  (n=%d)" % (
            fmt(self.mse), fmt(self.mae), fmt(self.accuracy),
            fmt(self.precision), fmt(self.recall), fmt(self.f1), self.n)


def binarize(score, threshold=DEFAULT_THRESHOLD):
    """Class label for a score: clickbait iff strictly above the threshold."""
    return CLICKBAIT if score > threshold else "no-clickbait"


def evaluate(preds, truths, threshold=DEFAULT_THRESHOLD):
    """Score predictions against truth records.

    MSE/MAE are measured against each truth's stored mean; the confusion
    counts treat a prediction as positive iff it exceeds the threshold and
    the gold label as positive iff the class label is clickbait.
    """
    preds = list(preds)
    truths = list(truths)
    if len(preds) != len(truths):
        raise ValueError("evaluate: %d predictions vs %d truths"
                         % (len(preds), len(truths)))
    if not preds:
        raise ValueError("evaluate: empty input")
    for p in preds:
        if not 0.0 <= p <= 1.0:
            raise ValueError("evaluate: prediction %r outside [0, 1]" % p)
    n = len(preds)
    sq_err = math.fsum((p - t.mean) ** 2 for p, t in zip(preds, truths))
    abs_err = math.fsum(abs(p - t.mean) for p, t in zip(preds, truths))
    tp = fp = fn = tn = 0
    for p, t in zip(preds, truths):
        pred_pos = p > threshold
        gold_pos = t.class_label == CLICKBAIT
        if pred_pos and gold_pos:
            tp += 1
        elif pred_pos:
            fp += 1
        elif gold_pos:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricsReport(
        mse=sq_err / n,
        mae=abs_err / n,
        accuracy=(tp + tn) / n,
        precision=precision,
        recall=recall,
        f1=f1,
        n=n,
        tp=tp, fp=fp, fn=fn, tn=tn,
    )


# ---------------------------------------------------------------------------
# Mann-Whitney U


@dataclass
class MannWhitneyResult:
    u_a: float
    u_b: float
    z: float
    p_two_sided: float
    method: str

    def to_dict(self):
        return {
            "u_a": self.u_a,
            "u_b": self.u_b,
            "z": self.z,
            "p_two_sided": self.p_two_sided,
            "method": self.method,
        }


def _midranks(values):
    """1-based ranks with tied values sharing their average rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks, n, u_obs):
    """Tail probability of |U - nm/2| >= observed over all rank assignments.

    `ranks` are the pooled midranks; every choice of n positions for sample
    a is equally likely under the null. Midranks are multiples of 0.5, so
    all comparisons here are exact in floating point.
    """
    total_n = len(ranks)
    center = n * (total_n - n) / 2.0
    dev = abs(u_obs - center)
    rank_offset = n * (n + 1) / 2.0
    hits = 0
    count = 0
    for combo in itertools.combinations(range(total_n), n):
        u = ranks[list(combo)].sum() - rank_offset
        if abs(u - center) >= dev:
            hits += 1
        count += 1
    return hits / count


def _tie_corrected_sigma(values, n, m):
    big_n = n + m
    _, tie_counts = np.unique(values, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n * m / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)))
    return math.sqrt(max(var, 0.0))


def mann_whitney_u(a, b):
    """Two-sided Mann-Whitney U test with the 0.5-per-tie convention.

    u_a counts pairs (x in a, y in b) with x > y plus half the tied pairs.
    The p-value is exact (full enumeration of rank assignments) for pooled
    sizes up to EXACT_ENUMERATION_LIMIT, otherwise a normal approximation
    with tie-corrected variance and continuity correction.
    """
    a = [float(x) for x in a]
    b = [float(x) for x in b]
    if not a or not b:
        raise ValueError("mann_whitney_u: both samples must be non-empty")
    n, m = len(a), len(b)
    pooled = np.array(a + b)
    ranks = _midranks(pooled)
    u_a = float(ranks[:n].sum() - n * (n + 1) / 2.0)
    u_b = float(n * m - u_a)

    sigma = _tie_corrected_sigma(pooled, n, m)
    if sigma > 0.0:
        z = max(abs(u_a - n * m / 2.0) - 0.5, 0.0) / sigma
    else:
        z = 0.0

    if n + m <= EXACT_ENUMERATION_LIMIT:
        p = _exact_two_sided_p(ranks, n, u_obs=u_a)
        method = EXACT
    elif sigma == 0.0:
        p = 1.0  # every pooled value identical
        method = NORMAL_APPROX
    else:
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
        method = NORMAL_APPROX
    return MannWhitneyResult(u_a=u_a, u_b=u_b, z=z, p_two_sided=p, method=method)
