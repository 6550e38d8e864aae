import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relu_unwrap.interpret import (joint_importance, kde_curve, local_profile, parallel_coordinates,
                                   profile_csv)
from relu_unwrap.network import Dataset
from helpers import fake_result


def test_intercept_only_ji():
    t = joint_importance(fake_result([[0.0, 0.0]], [1.0], [5]))
    assert t.ji_intercept == 1.0
    assert np.all(t.ji_features == 0)


def test_symmetric_ji():
    t = joint_importance(fake_result([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], [4, 4]))
    assert t.ji_features[0] == t.ji_features[1]
    assert t.order.tolist() == [0, 1]  # tie broken by index


def test_all_zero_ji_is_uniform():
    t = joint_importance(fake_result([[0.0, 0.0]], [0.0], [3]))
    assert t.ji_intercept == pytest.approx(1 / 3)


def brute_ji(res):
    T = 0.0
    num = np.zeros(res.d + 1)
    for r in res.regions:
        num[0] += r.count * r.llm.b_tilde ** 2
        for j in range(res.d):
            num[j + 1] += r.count * r.llm.w_tilde[j] ** 2
    T = num.sum()
    return num / T


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ji_matches_brute_force_and_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    m, d = int(rng.integers(1, 12)), int(rng.integers(1, 5))
    res = fake_result(rng.normal(size=(m, d)), rng.normal(size=m), rng.integers(1, 20, size=m))
    t = joint_importance(res)
    want = brute_ji(res)
    assert abs(t.ji_intercept - want[0]) <= 1e-12
    assert np.all(np.abs(t.ji_features - want[1:]) <= 1e-12)
    assert abs(t.ji_intercept + t.ji_features.sum() - 1.0) <= 1e-12
    assert t.ji_intercept >= 0 and np.all(t.ji_features >= 0)
    # permuting the region list leaves JI unchanged
    perm = rng.permutation(m)
    res2 = fake_result(res.coef_matrix[perm], res.intercepts[perm], res.counts[perm])
    t2 = joint_importance(res2)
    assert abs(t2.ji_intercept - t.ji_intercept) <= 1e-12
    assert np.all(np.abs(t2.ji_features - t.ji_features) <= 1e-12)


def test_ji_sums_to_one_on_trained_runs(reg_run, clf_run):
    for run in (reg_run, clf_run):
        t = joint_importance(run[3])
        assert abs(t.ji_intercept + t.ji_features.sum() - 1.0) <= 1e-12


def test_single_region_profile_centering():
    X = np.array([[0.0], [1.0]])
    res = fake_result([[2.0]], [0.5], [2], X=X)
    seg = local_profile(res, Dataset(X, np.zeros(2), ["x1"]), 0, 5)[0]
    assert seg.slope == 2.0
    assert seg.value(0.5) == pytest.approx(0.0)
    assert (seg.xmin, seg.xmax) == (0.0, 1.0)


def test_profile_offsets_brute_force(clf_run):
    _, tr, _, res = clf_run
    segs = local_profile(res, tr, 1, 10)
    assert len(segs) == min(10, len(res))
    for s in segs:
        r = res.regions[s.region_id]
        xj = tr.features[r.instance_indices, 1]
        assert abs(s.offset - np.mean(r.llm.w_tilde[1] * xj)) <= 1e-12
        assert s.xmin <= xj.min() and s.xmax >= xj.max()
        assert s.density.max() == pytest.approx(1.0)
        assert len(s.density) == 64


def test_profile_1d_ranges_disjoint(reg_run):
    _, tr, _, res = reg_run
    segs = sorted(local_profile(res, tr, 0, 30), key=lambda s: s.xmin)
    for a, b in zip(segs, segs[1:]):
        assert a.xmax < b.xmin


def test_profile_fewer_regions_than_top_k():
    res = fake_result([[1.0]], [0.0], [3], X=np.arange(3.0)[:, None])
    assert len(local_profile(res, Dataset(np.arange(3.0)[:, None], np.zeros(3), ["x1"]), 0, 30)) == 1


def test_profile_bad_feature(reg_run):
    _, tr, _, res = reg_run
    with pytest.raises(ValueError):
        local_profile(res, tr, 5, 3)


def test_profile_csv_header(reg_run):
    _, tr, _, res = reg_run
    text = profile_csv(local_profile(res, tr, 0, 3))
    assert text.splitlines()[0] == "region_id,feature,slope,offset,xmin,xmax,count"


def test_kde_degenerate():
    assert np.all(kde_curve([0.3], np.linspace(0, 1, 5)) == 1.0)


def test_parallel_filter_and_values():
    res = fake_result([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], [0.1, 0.2, 0.3], [3, 2, 1],
                      singles=[False, True, False])
    pc = parallel_coordinates(res, exclude_single=True, include_intercept=True)
    assert pc.region_ids.tolist() == [0, 2]
    assert pc.values.tolist() == [[0.1, 1.0, 2.0], [0.3, 5.0, 6.0]]
    assert pc.to_csv().splitlines()[0] == "region_id,count,b,x1,x2"
    full = parallel_coordinates(res, exclude_single=False, include_intercept=False)
    assert full.values.shape == (3, 2)


def test_zero_count_region_ignored():
    base = fake_result([[1.0, 2.0], [3.0, 4.0]], [0.1, 0.2], [3, 2])
    extra = fake_result([[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]], [0.1, 0.2, 9.0], [3, 2, 0])
    a, b = joint_importance(base), joint_importance(extra)
    assert a.ji_intercept == b.ji_intercept
    assert np.array_equal(a.ji_features, b.ji_features)
    assert parallel_coordinates(base).to_csv() == parallel_coordinates(extra).to_csv()
