import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from relu_unwrap import simplify as S
from relu_unwrap.glm import fit_glm
from relu_unwrap.metrics import auc, mse
from relu_unwrap.network import Dataset, forward_batch, make_network, predict_batch
from relu_unwrap.unwrapper import unwrap


@pytest.fixture(scope="module")
def clf_merged(clf_run):
    net, tr, te, res = clf_run
    return S.merge(res, tr, S.MergeConfig(seed=2))


@pytest.fixture(scope="module")
def reg_merged(reg_run):
    net, tr, te, res = reg_run
    return S.merge(res, tr, S.MergeConfig(seed=1, tau=10))


def staircase():
    """1-d input (plus a dummy column) with thresholds at x1 = 0, 1, 2."""
    W0 = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    b0 = np.array([0.0, -1.0, -2.0])
    return make_network([W0, np.array([[1.0, -2.0, 3.0]])], [b0, np.zeros(1)])


# -- config ---------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(S.MergeError):
        S.MergeConfig(k_grid=[0, 2])
    with pytest.raises(S.MergeError):
        S.MergeConfig(tau=0)
    with pytest.raises(S.MergeError):
        S.MergeConfig(refit="lasso")
    assert S.MergeConfig(refit="l1_glm").penalty == "l1"
    assert S.MergeConfig().k_grid == [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20]


# -- tree helpers ---------------------------------------------------------------

def test_cut_tree_by_hand():
    # leaves 0..3; merge (0,1)->4, (2,3)->5, (4,5)->6
    children = np.array([[0, 1], [2, 3], [4, 5]])
    assert S.cut_tree(children, 4, 4).tolist() == [0, 1, 2, 3]
    assert S.cut_tree(children, 4, 3).tolist() == [0, 0, 1, 2]
    assert S.cut_tree(children, 4, 2).tolist() == [0, 0, 1, 1]
    assert S.cut_tree(children, 4, 1).tolist() == [0, 0, 0, 0]


def test_absorb_small_nearest_by_weighted_center():
    labels = np.array([0, 1, 2])
    counts = np.array([50.0, 40.0, 5.0])
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [8.0, 0.0]])
    out = S.absorb_small(labels, counts, centers, tau=30)
    assert out.tolist() == [0, 1, 1]


def test_absorb_small_no_large_cluster():
    out = S.absorb_small(np.array([0, 1, 2]), np.array([3.0, 4.0, 5.0]), np.zeros((3, 1)), tau=30)
    assert out.tolist() == [0, 0, 0]


def test_absorb_small_renumbers_by_count():
    out = S.absorb_small(np.array([0, 1, 1]), np.array([40.0, 30.0, 30.0]), np.zeros((3, 1)), tau=30)
    assert out.tolist() == [1, 0, 0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_absorb_small_property(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 15))
    k = int(rng.integers(1, m + 1))
    labels = np.r_[np.arange(k), rng.integers(0, k, m - k)]
    counts = rng.integers(1, 40, m).astype(float)
    tau = int(rng.integers(1, 60))
    out = S.absorb_small(labels, counts, rng.normal(size=(m, 2)), tau)
    tot = np.bincount(out, weights=counts)
    assert sorted(set(out.tolist())) == list(range(out.max() + 1))
    if counts.sum() >= tau:
        assert tot.min() >= tau or len(tot) == 1
    # absorption only ever merges whole clusters
    for c in range(k):
        assert len(set(out[labels == c].tolist())) == 1


def test_absorb_small_only_into_adjacent():
    # chain 0 - 1 - 2: cluster 2 is closest to 0 by centre but only touches 1
    labels = np.array([0, 1, 2])
    counts = np.array([50.0, 40.0, 5.0])
    centers = np.array([[0.0], [10.0], [1.0]])
    A = csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    assert S.absorb_small(labels, counts, centers, 30).tolist() == [0, 1, 0]
    assert S.absorb_small(labels, counts, centers, 30, A).tolist() == [0, 1, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_absorb_small_keeps_clusters_connected(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 25))
    pts = rng.normal(size=(m, 2))
    A, _ = S.connected_knn_graph(pts, 1)
    children, _ = S.kernels.ward_tree(rng.normal(size=(m, 3)), A.indptr.astype(np.int64),
                                      A.indices.astype(np.int64))
    labels = S.cut_tree(children, m, int(rng.integers(1, m + 1)))
    counts = rng.integers(1, 30, m).astype(float)
    out = S.absorb_small(labels, counts, pts, int(rng.integers(1, 60)), A)
    for c in range(out.max() + 1):
        members = np.flatnonzero(out == c)
        assert connected_components(A[members][:, members], directed=False)[0] == 1


def test_knn_graph_symmetric():
    pts = np.array([[0.0], [1.0], [3.0], [7.0]])
    A = S.knn_graph(pts, 1)
    assert (A != A.T).nnz == 0
    assert A.diagonal().sum() == 0
    # 3 is only 2's nearest neighbour's target, but symmetrisation links it
    assert A[3, 2] and A[2, 3]


def test_connected_knn_graph_raises_T():
    pts = np.array([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]])
    A, T = S.connected_knn_graph(pts, 1)
    assert connected_components(A, directed=False)[0] == 1
    assert T == 3


# -- merge ----------------------------------------------------------------------

def test_k1_is_global_glm(clf_run):
    _, tr, _, res = clf_run
    model = S.merge(res, tr, S.MergeConfig(k_grid=[1]))
    assert model.n_clusters == 1
    g = fit_glm("binomial", tr.features, tr.response)
    assert np.allclose(model.clusters[0].refit.beta_hat, g.beta_hat, atol=1e-10)
    assert model.clusters[0].count == tr.n


def test_merge_partitions_regions(clf_run, clf_merged):
    _, tr, _, res = clf_run
    ids = sorted(r for c in clf_merged.clusters for r in c.region_ids)
    assert ids == list(range(len(res)))
    assert sum(c.count for c in clf_merged.clusters) == tr.n
    assert clf_merged.k_selected in clf_merged.config.k_grid
    assert clf_merged.neighbors >= math.ceil(0.01 * len(res))


def test_no_cluster_below_tau(clf_merged, reg_merged):
    for model in (clf_merged, reg_merged):
        counts = [c.count for c in model.clusters]
        assert min(counts) >= model.config.tau or len(counts) == 1


def test_tree_clusters_connectivity_feasible(clf_run):
    _, tr, _, res = clf_run
    pts = np.hstack([res.coef_matrix, res.intercepts[:, None]])
    A, _ = S.connected_knn_graph(res.centers, math.ceil(0.01 * len(res)))
    children, _ = S.kernels.ward_tree(pts, A.indptr.astype(np.int64), A.indices.astype(np.int64))
    assert children.shape[0] == len(res) - 1
    for K in (2, 5, 20):
        labels = S.cut_tree(children, len(res), K)
        for c in range(K):
            members = np.flatnonzero(labels == c)
            sub = A[members][:, members]
            assert connected_components(sub, directed=False)[0] == 1


def test_final_clusters_connectivity_feasible(clf_run, clf_merged):
    res = clf_run[3]
    A, _ = S.connected_knn_graph(res.centers, clf_merged.neighbors)
    for c in clf_merged.clusters:
        sub = A[c.region_ids][:, c.region_ids]
        assert connected_components(sub, directed=False)[0] == 1


def test_refits_use_member_instances_only(clf_run, clf_merged):
    _, tr, _, res = clf_run
    row_cluster = clf_merged.region_cluster[res.instance_region]
    for c in clf_merged.clusters[:3]:
        rows = row_cluster == c.cluster_id
        want = S.refit_cluster(res.task, tr.features[rows], tr.response[rows], "none", None)[0]
        assert np.array_equal(c.refit.beta_hat, want.beta_hat)


def test_merge_deterministic(clf_run, clf_merged):
    _, tr, _, res = clf_run
    again = S.merge(res, tr, S.MergeConfig(seed=2))
    assert again.to_json() == clf_merged.to_json()


def test_merge_rejects_wrong_data(clf_run):
    _, tr, te, res = clf_run
    with pytest.raises(S.MergeError):
        S.merge(res, te)


def test_merged_json_roundtrip(clf_run, clf_merged):
    net, tr, te, _ = clf_run
    back = S.MergedModel.from_json(clf_merged.to_json())
    assert back.to_json() == clf_merged.to_json()
    assert np.array_equal(S.predict_merged_batch(back, net, te.features),
                          S.predict_merged_batch(clf_merged, net, te.features))


def test_standardize_flag_changes_points_only(clf_run):
    _, tr, _, res = clf_run
    m = S.merge(res, tr, S.MergeConfig(k_grid=[3], tau=1, standardize=True))
    assert sorted(r for c in m.clusters for r in c.region_ids) == list(range(len(res)))


def test_penalized_refit(reg_run):
    _, tr, _, res = reg_run
    m = S.merge(res, tr, S.MergeConfig(k_grid=[2], refit="l1_glm", strength=0.01))
    assert all(c.refit.penalty == "l1" for c in m.clusters)


# -- prediction -----------------------------------------------------------------

def test_training_instances_use_own_cluster(clf_run, clf_merged):
    net, tr, _, res = clf_run
    got = S.assign_clusters(clf_merged, net, tr.features)
    assert np.array_equal(got, clf_merged.region_cluster[res.instance_region])
    eta = S.merged_eta(clf_merged, net, tr.features)
    for c in clf_merged.clusters:
        sel = got == c.cluster_id
        assert np.array_equal(eta[sel], c.refit.eta(tr.features[sel]))


def test_unseen_pattern_goes_to_adjacent_cluster():
    net = staircase()
    rng = np.random.default_rng(0)
    X = np.c_[rng.uniform(-1, 1.8, 300), rng.uniform(-1, 1, 300)]
    y = np.where(X[:, 0] < 0, 1.0, np.where(X[:, 0] < 1, -X[:, 0], 2 * X[:, 0]))
    ds = Dataset(X, y + 0.01 * rng.normal(size=300), ["a", "b"], "regression")
    res = unwrap(net, ds)
    assert len(res) == 3
    model = S.merge(res, ds, S.MergeConfig(k_grid=[3], tau=1, neighbors=1))
    assert model.n_clusters == 3
    x = np.array([[2.5, 0.0]])  # all three units on: never seen in training
    assert all(str(p) != "111" for p in model.region_patterns)
    right = int(np.argmax(res.centers[:, 0]))
    c = model.region_cluster[right]
    assert S.assign_clusters(model, net, x)[0] == c
    assert S.predict_merged(model, net, x[0]) == pytest.approx(model.clusters[c].refit.eta(x)[0], abs=0)


def test_unseen_majority_vote():
    net = staircase()
    rng = np.random.default_rng(1)
    X = np.c_[rng.uniform(-1, 1.8, 200), rng.uniform(-1, 1, 200)]
    ds = Dataset(X, X[:, 0] ** 2, ["a", "b"], "regression")
    res = unwrap(net, ds)
    model = S.merge(res, ds, S.MergeConfig(k_grid=[3], tau=1))
    model.neighbors = 3
    # relabel so two of the three regions share a cluster
    model.region_cluster = np.array([0, 0, 1])
    got = S.assign_clusters(model, net, np.array([[2.5, 0.0]]))
    assert got[0] == 0


def test_single_cluster_is_global_glm_everywhere(clf_run):
    net, tr, te, res = clf_run
    m = S.merge(res, tr, S.MergeConfig(k_grid=[1]))
    X = np.r_[te.features, [[40.0, -40.0]]]
    assert np.array_equal(S.merged_eta(m, net, X), m.clusters[0].refit.eta(X))


# -- flatten --------------------------------------------------------------------

def test_flatten_init_hidden_layer_is_refits(clf_run, clf_merged):
    _, tr, _, _ = clf_run
    init = S.flatten_init(clf_merged, tr)
    W0, b0 = init.network.weights[0], init.network.biases[0]
    for k, c in enumerate(clf_merged.clusters):
        assert W0[k].tobytes() == c.refit.beta_hat[1:].tobytes()
        assert b0[k].tobytes() == c.refit.beta_hat[:1].tobytes()
    assert init.network.hidden_sizes == [clf_merged.n_clusters]


def test_flatten_zero_epochs_is_composition(clf_run, clf_merged):
    _, tr, te, _ = clf_run
    init = S.flatten_init(clf_merged, tr)
    net0 = S.flatten(clf_merged, tr, S.flatten_config(max_epochs=0, patience=0))
    W0 = np.array([c.refit.beta_hat[1:] for c in clf_merged.clusters])
    b0 = np.array([c.refit.beta_hat[0] for c in clf_merged.clusters])
    H = np.maximum(te.features @ W0.T + b0, 0.0)
    want = init.output_fit.eta(H)
    got, _ = forward_batch(net0, te.features)
    assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.abs(want).max())


def test_normalize_hidden_preserves_function(rng):
    net = make_network([rng.normal(size=(4, 2)) * 30, rng.normal(size=(1, 4))], [rng.normal(size=4), np.zeros(1)])
    norm = S.normalize_hidden(net)
    X = rng.normal(size=(50, 2))
    a, _ = forward_batch(net, X)
    b, _ = forward_batch(norm, X)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    rows = np.c_[norm.weights[0], norm.biases[0]]
    assert np.allclose(np.linalg.norm(rows, axis=1), 1.0)


def test_flatten_output_fallback_flagged():
    # a hidden unit that is never active makes the output design singular
    X = np.linspace(0.1, 1, 40)[:, None]
    ds = Dataset(X, 2 * X[:, 0] + 0.1 * np.sin(9 * X[:, 0]), ["a"], "regression")
    net = make_network([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])], [np.zeros(2), np.zeros(1)])
    res = unwrap(net, ds)
    model = S.merge(res, ds, S.MergeConfig(k_grid=[1]))
    dead = S.MergedCluster(1, [], 0, fit_glm("gaussian", -X, ds.response), 0.0, 0.0, 0.0, 0.0, np.zeros(1))
    dead.refit.beta_hat[:] = [-1.0, -1.0]  # -x - 1 < 0 on the data
    model.clusters.append(dead)
    init = S.flatten_init(model, ds)
    assert init.fallback
    assert np.all(np.isfinite(init.network.weights[1]))


def test_flatten_single_cluster_shape(reg_run):
    _, tr, _, res = reg_run
    m = S.merge(res, tr, S.MergeConfig(k_grid=[1]))
    init = S.flatten_init(m, tr)
    assert init.network.hidden_sizes == [1]


def test_slfn_shape_and_determinism(clf_run):
    _, tr, _, _ = clf_run
    cfg = S.flatten_config(seed=4, max_epochs=5, patience=5)
    a = S.train_slfn(3, tr, cfg)
    assert a.hidden_sizes == [3]
    assert a == S.train_slfn(3, tr, cfg)


# -- comparison -----------------------------------------------------------------

def test_compare_metrics_recomputed(clf_run, clf_merged):
    net, tr, te, _ = clf_run
    cfg = S.flatten_config(seed=2, max_epochs=10, patience=10)
    fl = S.flatten(clf_merged, tr, cfg)
    sl = S.train_slfn(clf_merged.n_clusters, tr, cfg)
    row = S.compare_models(net, clf_merged, fl, sl, te)
    y = te.response
    assert abs(row["ReLU-Net"] - auc(y, predict_batch(net, te.features))) <= 1e-12
    assert abs(row["Merge-Net"] - auc(y, S.predict_merged_batch(clf_merged, net, te.features))) <= 1e-12
    assert abs(row["FL-Net"] - auc(y, predict_batch(fl, te.features))) <= 1e-12
    assert abs(row["SLFN"] - auc(y, predict_batch(sl, te.features))) <= 1e-12
    assert row["n_cluster"] == clf_merged.n_clusters


def test_compare_identical_models(reg_run):
    net, _, te, _ = reg_run
    row = S.compare_models(net, None, net, net, te)
    assert row["ReLU-Net"] == row["FL-Net"] == row["SLFN"]
    assert row["ReLU-Net"] == pytest.approx(mse(te.response, predict_batch(net, te.features)))
    text = S.compare_csv([row])
    assert text.splitlines()[0] == "ReLU-Net,Merge-Net,FL-Net,SLFN,n_cluster"
    assert text.splitlines()[1].split(",")[1] == ""


def test_merged_inference_csv_header(clf_merged):
    head = S.merged_inference_csv(clf_merged).splitlines()[0]
    assert head == "region,term,coef,std_err,z,p-value,[0.025,0.975]"


def test_merged_reg_quality(reg_run, reg_merged):
    net, _, te, _ = reg_run
    row = S.compare_models(net, reg_merged, None, None, te)
    assert row["Merge-Net"] < 10 * row["ReLU-Net"] + 0.05
