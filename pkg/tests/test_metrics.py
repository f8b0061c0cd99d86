import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threegroups.metrics import (
    ScoredGeneSet,
    auc,
    brier_score,
    log_score,
    median_probability_select,
    metrics_table,
    tpr_at_mean_fpr,
    volcano_data,
)
from threegroups.trace import PosteriorSummary, Trace, summarize


def brute_auc(score, truth):
    pos = [s for s, t in zip(score, truth) if t]
    neg = [s for s, t in zip(score, truth) if not t]
    tot = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return tot / (len(pos) * len(neg))


def S(p_null, truth):
    return ScoredGeneSet(np.asarray(p_null, float), np.asarray(truth, bool))


def test_log_score_hand_case():
    s = S([0.9, 0.2, 0.5], [0, 1, 0])
    assert log_score(s) == pytest.approx(-math.log(0.9) - math.log(0.8) - math.log(0.5), abs=1e-12)


def test_log_score_uniform_and_perfect():
    assert log_score(S([0.5] * 7, [0, 1, 0, 1, 1, 0, 0])) == pytest.approx(7 * math.log(2), abs=1e-12)
    perfect = log_score(S([1.0, 0.0, 1.0], [0, 1, 0]))
    assert perfect == pytest.approx(-3 * math.log1p(-1e-12), abs=1e-15)


def test_brier_hand_cases():
    assert brier_score(S([1.0, 0.0], [0, 1])) == 0.0
    assert brier_score(S([0.5] * 6, [0, 1, 0, 1, 0, 0])) == pytest.approx(1.5, abs=1e-12)
    assert brier_score(S([0.0, 1.0], [1, 1])) == pytest.approx(1.0, abs=1e-12)


def test_auc_cases():
    assert auc(S([0.0, 0.1, 0.9, 1.0], [1, 1, 0, 0])) == 1.0
    assert auc(S([0.3] * 5, [1, 0, 1, 0, 0])) == 0.5
    # scores (0.9,0.8,0.3,0.1) as 1 - p_null with truth (1,0,1,0)
    s = S(1 - np.array([0.9, 0.8, 0.3, 0.1]), [1, 0, 1, 0])
    assert auc(s) == brute_auc(s.score, s.truth_nonnull) == 0.75
    assert auc(S([0.1, 0.2], [1, 1])) is None


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n))))
def test_auc_equals_brute_force(data):
    p, t = data
    s = S(p, t)
    a = auc(s)
    if all(t) or not any(t):
        assert a is None
    else:
        assert a == brute_auc(s.score, s.truth_nonnull)


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=30), st.integers(1, 29))
def test_scores_additive_and_order_invariant(rows, cut):
    p = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows])
    cut = min(cut, len(rows) - 1)
    whole = S(p, t)
    parts = [S(p[:cut], t[:cut]), S(p[cut:], t[cut:])]
    assert log_score(whole) == pytest.approx(sum(map(log_score, parts)), rel=1e-12, abs=1e-12)
    assert brier_score(whole) == pytest.approx(sum(map(brier_score, parts)), rel=1e-12, abs=1e-12)
    perm = np.random.default_rng(0).permutation(len(p))
    shuffled = S(p[perm], t[perm])
    assert log_score(shuffled) == pytest.approx(log_score(whole))
    assert auc(shuffled) == auc(whole)


def test_probabilities_validated():
    with pytest.raises(ValueError):
        S([1.2], [0])
    with pytest.raises(ValueError):
        S([0.2, 0.3], [0])


def test_tpr_perfect_scores():
    sets = [S([1, 1, 0, 0, 1], [0, 0, 1, 1, 0]), S([0, 1, 1], [1, 0, 0])]
    res = tpr_at_mean_fpr(sets, 0.05)
    assert np.all(res.tpr == 1.0)
    assert res.mean_fpr == 0.0


def test_tpr_random_scores_near_target():
    rng = np.random.default_rng(1)
    sets = [S(rng.random(1000), rng.random(1000) < 0.3) for _ in range(100)]
    for target in (0.01, 0.05):
        res = tpr_at_mean_fpr(sets, target)
        assert abs(res.tpr.mean() - target) < 0.02
        assert res.mean_fpr <= target


def test_tpr_monotone_in_target():
    rng = np.random.default_rng(2)
    sets = [S(np.clip(rng.normal(0.6, 0.3, 60) - 0.3 * (np.arange(60) < 10), 0, 1), np.arange(60) < 10)
            for _ in range(10)]
    lo, hi = tpr_at_mean_fpr(sets, 0.01), tpr_at_mean_fpr(sets, 0.05)
    assert np.all(hi.tpr >= lo.tpr)


def test_tpr_single_replicate_is_roc_point():
    s = S([0.9, 0.8, 0.7, 0.2, 0.1, 0.05], [0, 0, 1, 1, 0, 1])
    res = tpr_at_mean_fpr([s], 1 / 3)
    # scores: non-null 0.3, 0.8, 0.95; null 0.1, 0.2, 0.9. The lowest cutoff
    # keeping FPR at 1/3 calls everything above 0.2: TPR 3/3.
    assert res.mean_fpr == pytest.approx(1 / 3)
    assert res.tpr[0] == pytest.approx(1.0)
    assert res.cutoff == pytest.approx(0.2)
    assert res.reached


def test_tpr_unreachable_target_reports():
    res = tpr_at_mean_fpr([S([0.5] * 4, [0, 1, 0, 1])], 0.3)
    assert not res.reached and "not attainable" in res.message
    with pytest.raises(ValueError):
        tpr_at_mean_fpr([S([0.5, 0.5], [1, 1])], 0.05)


def _summary(p_null, p_ben, p_del):
    J = len(p_null)
    return PosteriorSummary([f"g{j}" for j in range(J)], np.array(p_null), np.array(p_del), np.array(p_ben),
                            {}, {}, None, {}, 1)


def test_median_probability_selection():
    s = _summary([0.49, 0.5, 0.26, 0.9], [0.3, 0.25, 0.65, 0.05], [0.21, 0.25, 0.09, 0.05])
    sel = {x.gene_id: x.group for x in median_probability_select(s)}
    assert sel == {"g0": "Beneficial", "g2": "Beneficial"}


def test_volcano_points():
    labels = [[1, 2, 3], [1, 2, 1]]
    eff = [[0.0, 1.0, -1.0], [0.0, 1.0, 0.0]]
    pts = volcano_data(summarize(Trace.from_arrays(["a", "b", "c"], labels, {"gwas": eff})))["gwas"]
    assert pts == [("a", 0.0, 0.0), ("b", 1.0, 1.0), ("c", -0.5, 0.5)]


def test_metrics_table_shape():
    rng = np.random.default_rng(3)
    sets = [ScoredGeneSet(rng.random(20), np.arange(20) < 4, m, f"r{i}") for m in ("joint", "gwas") for i in range(3)]
    rows = metrics_table(sets)
    assert len(rows) == 2 * 3 * 5
    assert {r[0] for r in rows} == {"joint", "gwas"}
