import numpy as np
import pytest

from helpers import unit_rows
from tgembed import evalkit, synth, tgraph
from tgembed.evalkit import EdgeOperator


def perfect_embeddings(g):
    """Rows whose pairwise dot products are the 0/1 adjacency indicator."""
    n = g.n_nodes
    A = np.zeros((n, n))
    A[g.src, g.dst] = 1.0
    A[g.dst, g.src] = 1.0
    vals, vecs = np.linalg.eigh(A)
    shift = 1.0 - vals.min()
    return vecs * np.sqrt(vals + shift)


def er_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return tgraph.from_arrays(n, iu[keep], ju[keep], np.arange(keep.sum()))


# -- operators ----------------------------------------------------------------------


def test_operator_examples():
    assert np.array_equal(evalkit.edge_features([2, 0], [0, 2], EdgeOperator.MEAN), [1, 1])
    assert np.array_equal(evalkit.edge_features([2, 3], [4, 5], EdgeOperator.HADAMARD), [8, 15])
    assert np.array_equal(evalkit.edge_features([1, 4], [3, 1], EdgeOperator.WEIGHTED_L1), [2, 3])
    assert np.array_equal(evalkit.edge_features([1, 4], [3, 1], EdgeOperator.WEIGHTED_L2), [4, 9])


@pytest.mark.parametrize("op", list(EdgeOperator))
def test_operators_symmetric_and_shape_preserving(op):
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 20, 6))
    f = evalkit.edge_features(x, y, op)
    assert f.shape == x.shape
    assert np.array_equal(f, evalkit.edge_features(y, x, op))


def test_operator_dimension_mismatch():
    with pytest.raises(ValueError):
        evalkit.edge_features([1, 2], [1, 2, 3], EdgeOperator.MEAN)


def test_operator_parse():
    assert EdgeOperator.parse("L2") is EdgeOperator.WEIGHTED_L2
    with pytest.raises(ValueError):
        EdgeOperator.parse("cosine")


# -- reconstruction -----------------------------------------------------------------


def test_perfect_ranking_precision_one():
    g = er_graph(40, 0.1, seed=1)
    emb = perfect_embeddings(g)
    n_e = len(g.edge_pair_codes())
    Ps = [1, 10, n_e // 2, n_e]
    rep = evalkit.reconstruction_precision(emb, g, Ps)
    for P in Ps:
        assert rep.mean("precision", None, P) == 1.0


def test_all_pairs_precision_is_density():
    g = er_graph(30, 0.2, seed=2)
    emb = unit_rows(np.random.default_rng(0), 30, 5)
    all_pairs = 30 * 29 // 2
    rep = evalkit.reconstruction_precision(emb, g, [all_pairs])
    assert rep.mean("precision", None, all_pairs) == len(g.edge_pair_codes()) / all_pairs


def test_precision_clamped_with_warning(caplog):
    g = er_graph(10, 0.3, seed=3)
    emb = unit_rows(np.random.default_rng(0), 10, 3)
    rep = evalkit.reconstruction_precision(emb, g, [10_000])
    assert "clamped" in caplog.text
    assert rep.mean("precision", None, 10_000) == len(g.edge_pair_codes()) / 45


def test_precision_non_increasing_after_full_recovery():
    g = er_graph(30, 0.15, seed=4)
    emb = perfect_embeddings(g)
    n_e = len(g.edge_pair_codes())
    Ps = list(range(n_e, 30 * 29 // 2 + 1, 17))
    rep = evalkit.reconstruction_precision(emb, g, Ps)
    vals = [rep.mean("precision", None, P) for P in Ps]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_random_embeddings_null_model():
    g = er_graph(50, 0.1, seed=5)
    density = len(g.edge_pair_codes()) / (50 * 49 // 2)
    emb = unit_rows(np.random.default_rng(6), 50, 8)
    rep = evalkit.reconstruction_precision(emb, g, [100], sample_nodes=40, repeats=20, seed=0)
    vals = rep.per_repeat("precision", None, 100)
    assert len(vals) == 20
    sigma = np.sqrt(density * (1 - density) / 100) / np.sqrt(20)
    assert abs(np.mean(vals) - density) < 3 * sigma


def test_ties_broken_by_pair_index():
    g = tgraph.from_edges(4, [(2, 3, 1)])
    emb = np.ones((4, 2))
    # every pair ties; the first pair in row-major order is (0, 1), a non-edge
    assert evalkit.reconstruction_precision(emb, g, [1]).mean("precision", None, 1) == 0.0


def test_reconstruction_threads_do_not_change_results():
    g = er_graph(60, 0.1, seed=7)
    emb = unit_rows(np.random.default_rng(0), 60, 4)
    a = evalkit.reconstruction_precision(emb, g, [50, 200], sample_nodes=30, repeats=6, seed=3)
    b = evalkit.reconstruction_precision(emb, g, [50, 200], sample_nodes=30, repeats=6, seed=3, threads=3)
    assert a.metrics == b.metrics and a.lines() == b.lines()


def test_reconstruction_rejects_short_embedding():
    g = er_graph(10, 0.3, seed=3)
    with pytest.raises(ValueError):
        evalkit.reconstruction_precision(np.ones((5, 2)), g, [1])


# -- logistic regression ------------------------------------------------------------


def test_logistic_separable_1d():
    w = evalkit.logistic_fit([[-1.0], [1.0]], [0, 1])
    pred = evalkit.logistic_predict(w, [[-1.0], [1.0]]) >= 0.5
    assert list(pred) == [False, True]
    assert w.shape == (2,)


def test_logistic_loss_non_increasing():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 5))
    y = (X[:, 0] + rng.normal(size=200) > 0).astype(float)
    _, hist = evalkit.logistic_fit(X, y, iters=200, return_history=True)
    assert len(hist) == 201
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < hist[0]


def test_logistic_null_majority_fraction():
    rng = np.random.default_rng(1)
    accs, majority = [], []
    for _ in range(20):
        X = rng.normal(size=(400, 3))
        y = (rng.random(400) < 0.7).astype(float)
        w = evalkit.logistic_fit(X[:200], y[:200])
        pred = evalkit.logistic_predict(w, X[200:]) >= 0.5
        accs.append(np.mean(pred == y[200:].astype(bool)))
        majority.append(np.mean(y[200:]))
    assert abs(np.mean(accs) - np.mean(majority)) < 0.03


def test_logistic_single_class_error():
    with pytest.raises(ValueError):
        evalkit.logistic_fit([[0.0], [1.0]], [1, 1])


def test_auc_and_f1_basics():
    assert evalkit.auc_score([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4]) == 1.0
    assert evalkit.auc_score([0, 1], [0.5, 0.5]) == 0.5
    assert evalkit.f1_score([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        evalkit.auc_score([1, 1], [0.1, 0.2])


def test_auc_null_converges_to_half():
    rng = np.random.default_rng(2)
    aucs = [evalkit.auc_score(rng.random(500) < 0.5, rng.random(500)) for _ in range(200)]
    # sd of one AUC at 250/250 is about sqrt(1/12 * (1/250 + 1/250)) ~ 0.026
    assert abs(np.mean(aucs) - 0.5) < 3 * 0.026 / np.sqrt(200)


# -- link prediction ----------------------------------------------------------------


def _split_sbm(seed=0):
    g, block = synth.temporal_sbm(n_nodes=80, n_edges=600, seed=seed)
    train_g, held = tgraph.split_by_time(g, 0.2)
    return g, train_g, held, block


def test_non_edges_never_collide():
    g, train_g, held, _ = _split_sbm()
    n = g.n_nodes
    forbidden = g.edge_pair_codes()
    pairs = evalkit.sample_non_edges(n, 2000, forbidden, np.random.default_rng(0))
    codes = pairs[:, 0] * n + pairs[:, 1]
    assert np.all(pairs[:, 0] < pairs[:, 1])
    assert len(np.unique(codes)) == 2000
    assert not np.isin(codes, forbidden).any()


def test_non_edge_exhaustion_error():
    g = tgraph.from_edges(3, [(0, 1, 1)])
    with pytest.raises(ValueError):
        evalkit.sample_non_edges(3, 3, g.edge_pair_codes(), np.random.default_rng(0))


def test_linkpred_separable_features_f1_one():
    # held-out edges form a clique on S; every negative touches a node outside S,
    # so Hadamard features are all-ones for positives and all-zeros for negatives
    n, S = 30, 10
    train_g = tgraph.from_arrays(n, np.arange(S, n - 1), np.arange(S + 1, n), np.arange(n - 1 - S))
    iu, ju = np.triu_indices(S, 1)
    held = [tgraph.TemporalEdge(int(a), int(b), 100, 1.0) for a, b in zip(iu, ju)]
    emb = np.zeros((n, 3))
    emb[:S] = 1.0
    rep = evalkit.link_prediction_eval(emb, train_g, held, EdgeOperator.HADAMARD, repeats=3, seed=0)
    assert rep.per_repeat("f1", "hadamard") == [1.0, 1.0, 1.0]
    assert rep.mean("accuracy", "hadamard") == 1.0


def test_linkpred_block_embeddings_separate():
    g, train_g, held, block = _split_sbm()
    emb = np.zeros((g.n_nodes, 2))
    emb[np.arange(g.n_nodes), block] = 1.0
    rep = evalkit.link_prediction_eval(emb, train_g, held, EdgeOperator.WEIGHTED_L2, repeats=5, seed=0)
    assert rep.mean("auc", "l2") > 0.6


def test_linkpred_random_embeddings_auc_null():
    g, train_g, held, _ = _split_sbm(seed=1)
    emb = unit_rows(np.random.default_rng(0), g.n_nodes, 8)
    rep = evalkit.link_prediction_eval(emb, train_g, held, EdgeOperator.HADAMARD, repeats=10, seed=1)
    aucs = rep.per_repeat("auc", "hadamard")
    n_test = len(held)  # half of 2 * |held|
    sd_one = np.sqrt((1 / (n_test / 2) + 1 / (n_test / 2)) / 12)
    assert abs(np.mean(aucs) - 0.5) < 3 * sd_one / np.sqrt(10) + 0.02


def test_linkpred_report_bookkeeping():
    g, train_g, held, _ = _split_sbm()
    emb = unit_rows(np.random.default_rng(0), g.n_nodes, 4)
    rep = evalkit.link_prediction_eval(emb, train_g, held, list(EdgeOperator), repeats=10, seed=4)
    for op in EdgeOperator:
        for metric in ("f1", "accuracy", "auc"):
            vals = rep.per_repeat(metric, op.value)
            assert len(vals) == 10 and all(0 <= v <= 1 for v in vals)
    lines = rep.lines()
    assert len(lines) == 12
    task, metric, op, P, mean, std, repeats, seed = lines[0].split(",")
    assert task == "link_prediction" and repeats == "10" and seed == "4" and P == ""
    assert "link_prediction" in rep.table()


def test_linkpred_determinism_and_threads():
    g, train_g, held, _ = _split_sbm()
    emb = unit_rows(np.random.default_rng(0), g.n_nodes, 4)
    a = evalkit.link_prediction_eval(emb, train_g, held, EdgeOperator.MEAN, repeats=4, seed=9)
    b = evalkit.link_prediction_eval(emb, train_g, held, EdgeOperator.MEAN, repeats=4, seed=9, threads=2)
    assert a.metrics == b.metrics


def test_linkpred_empty_held_out():
    g, train_g, _, _ = _split_sbm()
    with pytest.raises(ValueError):
        evalkit.link_prediction_eval(np.ones((g.n_nodes, 2)), train_g, [], EdgeOperator.MEAN)
