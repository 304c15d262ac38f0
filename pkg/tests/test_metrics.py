import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from whitebait import metrics
from whitebait.corpus import CLICKBAIT, NO_CLICKBAIT, Truth


def make_truth(mean, label):
    return Truth(id="x", judgments=[mean] * 5, mean=mean, median=mean,
                 mode=mean, class_label=label)


def brute_metrics(preds, truths, threshold):
    """Independent reference: per-pair loops, no shared code with evaluate()."""
    n = len(preds)
    mse = sum((p - t.mean) ** 2 for p, t in zip(preds, truths)) / n
    mae = sum(abs(p - t.mean) for p, t in zip(preds, truths)) / n
    tp = sum(1 for p, t in zip(preds, truths)
             if p > threshold and t.class_label == CLICKBAIT)
    fp = sum(1 for p, t in zip(preds, truths)
             if p > threshold and t.class_label != CLICKBAIT)
    fn = sum(1 for p, t in zip(preds, truths)
             if p <= threshold and t.class_label == CLICKBAIT)
    tn = n - tp - fp - fn
    return mse, mae, tp, fp, fn, tn


def brute_mann_whitney(a, b):
    """Independent reference: pairwise counting and combination enumeration."""
    pooled = list(a) + list(b)
    n, big_n = len(a), len(a) + len(b)

    def u_of(selection):
        inside = set(selection)
        xs = [pooled[i] for i in selection]
        ys = [pooled[i] for i in range(big_n) if i not in inside]
        u = 0.0
        for x in xs:
            for y in ys:
                if x > y:
                    u += 1.0
                elif x == y:
                    u += 0.5
        return u

    u_obs = u_of(tuple(range(n)))
    center = n * (big_n - n) / 2.0
    dev = abs(u_obs - center)
    hits = total = 0
    for selection in itertools.combinations(range(big_n), n):
        if abs(u_of(selection) - center) >= dev:
            hits += 1
        total += 1
    return u_obs, hits / total


# ---------------------------------------------------------------------------
# evaluate

def test_perfect_predictions():
    truths = [make_truth(0.0, NO_CLICKBAIT), make_truth(1.0, CLICKBAIT)]
    report = metrics.evaluate([0.0, 1.0], truths)
    assert report.mse == 0.0 and report.mae == 0.0 and report.accuracy == 1.0
    assert report.f1 == 1.0


def test_completely_wrong_predictions():
    truths = [make_truth(0.0, NO_CLICKBAIT), make_truth(1.0, CLICKBAIT)]
    report = metrics.evaluate([1.0, 0.0], truths)
    assert report.mse == 1.0 and report.mae == 1.0 and report.accuracy == 0.0
    assert report.f1 == 0.0  # tp=0 but fp and fn are nonzero: defined, zero


def test_balanced_confusion_counts():
    truths = [make_truth(0.5, CLICKBAIT), make_truth(0.5, NO_CLICKBAIT),
              make_truth(0.5, CLICKBAIT), make_truth(0.5, NO_CLICKBAIT)]
    report = metrics.evaluate([0.9, 0.9, 0.1, 0.1], truths)
    assert (report.tp, report.fp, report.fn, report.tn) == (1, 1, 1, 1)
    assert report.precision == 0.5 and report.recall == 0.5
    assert report.f1 == 0.5 and report.accuracy == 0.5


def test_f1_undefined_when_no_positive_predictions():
    truths = [make_truth(1.0, CLICKBAIT), make_truth(0.0, NO_CLICKBAIT)]
    report = metrics.evaluate([0.1, 0.1], truths)
    assert report.precision is None and report.f1 is None
    assert "—" in report.summary()
    assert '"f1": null' in report.to_json()


def test_f1_undefined_when_no_gold_positives():
    truths = [make_truth(0.0, NO_CLICKBAIT), make_truth(0.0, NO_CLICKBAIT)]
    report = metrics.evaluate([0.9, 0.1], truths)
    assert report.recall is None and report.f1 is None


def test_evaluate_rejects_bad_input():
    with pytest.raises(ValueError):
        metrics.evaluate([0.5], [])
    with pytest.raises(ValueError):
        metrics.evaluate([], [])
    with pytest.raises(ValueError):
        metrics.evaluate([1.5], [make_truth(0.0, NO_CLICKBAIT)])


def test_evaluate_matches_brute_force_on_random_sets():
    rng = random.Random(0)
    for _ in range(300):
        n = rng.randint(1, 40)
        preds = [rng.random() for _ in range(n)]
        truths = [make_truth(rng.choice([0.0, 0.2, 0.46, 0.8, 1.0]),
                             rng.choice([CLICKBAIT, NO_CLICKBAIT]))
                  for _ in range(n)]
        threshold = rng.choice([0.3, 0.5, 0.7])
        report = metrics.evaluate(preds, truths, threshold)
        mse, mae, tp, fp, fn, tn = brute_metrics(preds, truths, threshold)
        assert (report.tp, report.fp, report.fn, report.tn) == (tp, fp, fn, tn)
        assert abs(report.mse - mse) < 1e-12
        assert abs(report.mae - mae) < 1e-12


def test_evaluate_permutation_invariant():
    rng = random.Random(1)
    preds = [rng.random() for _ in range(20)]
    truths = [make_truth(rng.choice([0.0, 1.0]),
                         rng.choice([CLICKBAIT, NO_CLICKBAIT]))
              for _ in range(20)]
    base = metrics.evaluate(preds, truths)
    paired = list(zip(preds, truths))
    rng.shuffle(paired)
    shuffled = metrics.evaluate([p for p, _ in paired], [t for _, t in paired])
    assert base == shuffled


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_mae_squared_never_exceeds_mse(pairs):
    preds = [p for p, _ in pairs]
    truths = [make_truth(m, NO_CLICKBAIT) for _, m in pairs]
    report = metrics.evaluate(preds, truths)
    assert report.mae ** 2 <= report.mse + 1e-12
    assert report.mse <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# binarize

def test_binarize_threshold_is_strict():
    assert metrics.binarize(0.51, 0.5) == CLICKBAIT
    assert metrics.binarize(0.5, 0.5) == NO_CLICKBAIT
    assert metrics.binarize(0.0) == NO_CLICKBAIT


# ---------------------------------------------------------------------------
# mann_whitney_u

def test_complete_separation():
    result = metrics.mann_whitney_u([1, 2], [3, 4])
    assert result.u_a == 0.0 and result.u_b == 4.0


def test_interleaved_samples():
    # pairs (1,2) (1,4) (3,2) (3,4): only 3>2
    result = metrics.mann_whitney_u([1, 3], [2, 4])
    assert result.u_a == 1.0


def test_all_ties():
    result = metrics.mann_whitney_u([1, 1], [1, 1])
    assert result.u_a == 2.0  # four pairs at 0.5 each
    assert result.p_two_sided == 1.0


def test_u_sum_identity_and_exact_p_matches_enumeration():
    rng = random.Random(2)
    for _ in range(60):
        n = rng.randint(1, 7)
        m = rng.randint(1, 7)
        a = [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for _ in range(n)]
        b = [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for _ in range(m)]
        result = metrics.mann_whitney_u(a, b)
        assert result.method == metrics.EXACT
        u_obs, p = brute_mann_whitney(a, b)
        assert result.u_a == u_obs
        assert result.u_a + result.u_b == n * m
        assert abs(result.p_two_sided - p) < 1e-12


@settings(max_examples=60)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12),
       st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_u_values_always_sum_to_nm(a, b):
    result = metrics.mann_whitney_u(a, b)
    assert result.u_a + result.u_b == len(a) * len(b)
    assert 0.0 <= result.p_two_sided <= 1.0


def test_monotone_transform_invariance():
    rng = random.Random(3)
    a = [rng.random() for _ in range(9)]
    b = [rng.random() for _ in range(11)]
    base = metrics.mann_whitney_u(a, b)
    transformed = metrics.mann_whitney_u([math.exp(3 * x) for x in a],
                                         [math.exp(3 * x) for x in b])
    assert base == transformed


def test_normal_approximation_on_large_samples():
    rng = random.Random(4)
    a = [rng.gauss(0.0, 1.0) for _ in range(40)]
    b = [rng.gauss(2.0, 1.0) for _ in range(45)]
    result = metrics.mann_whitney_u(a, b)
    assert result.method == metrics.NORMAL_APPROX
    assert result.p_two_sided < 1e-6  # clearly shifted distributions
    same = metrics.mann_whitney_u(a, a)
    assert same.u_a == same.u_b == len(a) ** 2 / 2
    assert same.p_two_sided > 0.9


def test_matches_scipy_exact_p_without_ties():
    scipy_stats = pytest.importorskip("scipy.stats")
    rng = random.Random(5)
    for _ in range(20):
        n = rng.randint(2, 7)
        m = rng.randint(2, 7)
        a = [rng.random() for _ in range(n)]
        b = [rng.random() for _ in range(m)]
        ours = metrics.mann_whitney_u(a, b)
        ref = scipy_stats.mannwhitneyu(a, b, alternative="two-sided",
                                       method="exact")
        assert abs(ours.p_two_sided - ref.pvalue) < 1e-9


def test_rejects_empty_sample():
    with pytest.raises(ValueError):
        metrics.mann_whitney_u([], [1.0])
