import io

import numpy as np
import pytest

from tgembed import model, nn, twalk
from tgembed.model import AggregationInput, ModelParams
from tgembed.twalk import TemporalWalk, WalkBatch

from helpers import finite_difference_errors, gradcheck_instance


# -- attention ---------------------------------------------------------------------


def test_node_attention_degenerate_cases():
    E = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    assert model.node_attention(E[0], TemporalWalk.from_path([0], []), E, 1.0).tolist() == [1.0]
    # equal distances, equal time sums
    w = TemporalWalk.from_path([0, 1, 0, 2], [5, 5, 5])
    a = model.node_attention(E[0], w, E, 1.0)
    assert a[1] == pytest.approx(a[3], abs=1e-15)


def test_node_attention_symmetric_pair():
    E = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    # x=3 is not on the walk, positions 1 and 2 have equal distance and equal time sums
    w = TemporalWalk.from_path([0, 1, 0, 2], [4, 4, 4])
    a = model.node_attention(E[3], w, E, 2.0)
    assert a[1] == pytest.approx(a[3], abs=1e-15)
    two = TemporalWalk(nodes=(1, 2), edge_times=(4,), tsum=(4, 4), visits=(1, 1))
    np.testing.assert_allclose(model.node_attention(E[3], two, E, 2.0), [0.5, 0.5], atol=1e-15)


def test_node_attention_matches_oracle(oracles):
    o = oracles["attention"]["node"]
    E = np.array([o["E"][str(i)] for i in range(3)])
    w = TemporalWalk.from_path(o["nodes"], o["times"])
    np.testing.assert_allclose(model.time_scales(w, o["t_origin"], o["tau_t"]), o["ttilde"], rtol=1e-15)
    np.testing.assert_allclose(model.node_attention(E[0], w, E, o["tau_t"], o["t_origin"]), o["alpha"],
                               rtol=1e-13)


def test_node_attention_rejects_times_before_origin():
    E = np.zeros((2, 2))
    with pytest.raises(ValueError):
        model.node_attention(E[0], TemporalWalk.from_path([0, 1], [3]), E, 1.0, t_origin=10)


def test_walk_attention_degenerate_cases():
    e_x = np.array([0.1, 0.2])
    w = TemporalWalk.from_path([0, 1], [3])
    assert model.walk_attention(e_x, np.array([[1.0, 1.0]]), [w], 2.0).tolist() == [1.0]
    b = model.walk_attention(e_x, np.array([[1.0, 1.0], [1.0, 1.0]]), [w, w], 2.0)
    np.testing.assert_allclose(b, [0.5, 0.5], atol=1e-15)
    with pytest.raises(ValueError):
        model.walk_attention(e_x, np.ones((2, 2)), [w], 2.0)


def test_walk_attention_matches_oracle(oracles):
    o = oracles["attention"]["walk"]
    walks = [TemporalWalk.from_path(n, t) for n, t in o["walks"]]
    np.testing.assert_allclose(model.walk_coefficients(walks, o["tau_t"], o["t_origin"]), o["coef"],
                               rtol=1e-15)
    got = model.walk_attention(np.array(o["e_x"]), np.array(o["reps"]), walks, o["tau_t"], o["t_origin"])
    np.testing.assert_allclose(got, o["beta"], rtol=1e-13)


def test_attention_monotonicity():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(4, 3))
    w = TemporalWalk.from_path([0, 1, 2, 3], [30, 20, 10])
    base = model.node_attention(E[0], w, E, 5.0)
    far = E.copy()
    far[2] = E[0] + 1.5 * (E[2] - E[0])
    assert model.node_attention(E[0], w, far, 5.0)[2] < base[2]
    newer = TemporalWalk.from_path([0, 1, 2, 3], [30, 25, 10])
    assert model.node_attention(E[0], newer, E, 5.0)[2] > base[2]


# -- recurrent encoder ---------------------------------------------------------------


def _zero_lstm(d, layers=2):
    return [{"Wx": np.zeros((d, 4 * d)), "Wh": np.zeros((d, 4 * d)), "b": np.zeros(4 * d)}
            for _ in range(layers)]


def test_encode_sequence_zero_parameters():
    out = model.encode_sequence([np.ones(3), -np.ones(3)], _zero_lstm(3))
    assert np.all(out == 0.0)


def test_encode_sequence_scalar_cell(oracles):
    o = oracles["lstm_cell"]
    params = [{"Wx": np.array([o["Wx"]]), "Wh": np.array([o["Wh"]]), "b": np.array(o["b"])}]
    out = model.encode_sequence([np.array([o["x"]])], params)
    assert out[0] == pytest.approx(o["h"], rel=1e-14)


def test_encode_sequence_is_order_sensitive():
    rng = np.random.default_rng(1)
    params = nn.init_lstm(rng, 3, 3, 2)
    seq = [rng.normal(size=3) for _ in range(4)]
    assert not np.allclose(model.encode_sequence(seq, params), model.encode_sequence(seq[::-1], params))
    with pytest.raises(ValueError):
        model.encode_sequence([], params)


def test_batch_norm_site_wrapper():
    P = ModelParams.init(3, 4, seed=0)
    x = np.random.default_rng(2).normal(size=(5, 4))
    y = model.batch_norm(x, P, "bn1", "train")
    assert np.all(np.abs(y.mean(axis=0)) < 1e-6)
    np.testing.assert_allclose(model.batch_norm(x, P, "bn2", "infer"), x / np.sqrt(1 + nn.BN_EPS))
    with pytest.raises(ValueError):
        model.batch_norm(x[:1], P, "bn1", "train")


# -- full aggregation -----------------------------------------------------------------


def _oracle_instance(oracles):
    o = oracles["forward"]
    P_raw, inst = o["params"], o["instance"]
    d = len(P_raw["E"][0])
    t = {"E": np.array(P_raw["E"]), "W": np.array(P_raw["W"])}
    for site in ("lstm1", "lstm2"):
        for li, layer in enumerate(P_raw[site]):
            for k in ("Wx", "Wh", "b"):
                t[f"{site}.{li}.{k}"] = np.array(layer[k])
    for site in ("bn1", "bn2"):
        for k in ("gamma", "beta", "mean", "var"):
            t[f"{site}.{k}"] = np.array(P_raw[f"{site}.{k}"])
    P = ModelParams(t, d, len(P_raw["lstm1"]))
    walks = [TemporalWalk.from_path(n, ts) for a in inst["aggregations"] for n, ts in a["walks"]]
    wb = WalkBatch.from_walks(walks)
    inp = AggregationInput(np.array([a["x"] for a in inst["aggregations"]]), wb.nodes, wb.lengths,
                           wb.rescaled_time_sums(inst["t_origin"], inst["tau_t"]),
                           np.array([a["perm"] for a in inst["aggregations"]]))
    return P, inp, o["z"]


@pytest.mark.parametrize("mode", ["train", "infer"])
@pytest.mark.parametrize("ablation", ["none", "NA", "SL"])
def test_forward_matches_straight_line_oracle(oracles, mode, ablation):
    P, inp, expected = _oracle_instance(oracles)
    z, _ = model.aggregate_batch(inp, P, mode, ablation)
    np.testing.assert_allclose(z, expected[f"{mode}/{ablation}"], rtol=1e-11, atol=1e-13)


def test_aggregate_unit_norm_and_determinism(random_graph):
    P = ModelParams.init(random_graph.n_nodes, 6, seed=3)
    walks = twalk.sample_neighborhood(random_graph, 5, twalk.WalkContext(800, tau=50.0), 4, 5,
                                      np.random.default_rng(0))
    z1, _ = model.aggregate(5, walks, P, random_graph.t_min, 50.0, np.random.default_rng(1), "train")
    z2, _ = model.aggregate(5, walks, P, random_graph.t_min, 50.0, np.random.default_rng(1), "train")
    assert z1.shape == (6,) and abs(np.linalg.norm(z1) - 1) < 1e-9
    assert np.array_equal(z1, z2)


def test_attention_weights_are_distributions():
    P, inp, dz = gradcheck_instance(seed=4, k=3)
    for abl in ("none", "NA"):
        _, tr = model.aggregate_batch(inp, P, "train", abl)
        mask = np.arange(inp.nodes.shape[1])[None] < inp.lengths[:, None]
        assert np.all(tr.alpha >= 0) and np.all(tr.alpha[~mask] == 0)
        np.testing.assert_allclose(tr.alpha.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(tr.beta.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("mode", ["train", "infer"])
@pytest.mark.parametrize("ablation", ["none", "NA", "SL"])
def test_backward_finite_differences(mode, ablation):
    P, inp, dz = gradcheck_instance(seed=0)
    worst = finite_difference_errors(P, inp, dz, mode, ablation, h=1e-4)
    assert max(worst.values()) < 1e-4, worst


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_backward_finite_differences_more_instances(seed):
    # a smaller step keeps the O(h^2) truncation error out of the comparison
    P, inp, dz = gradcheck_instance(seed=seed, k=3)
    for mode in ("train", "infer"):
        worst = finite_difference_errors(P, inp, dz, mode, "none", h=1e-5)
        assert max(worst.values()) < 1e-4, (mode, worst)


def test_backward_zero_and_radial_upstream():
    P, inp, dz = gradcheck_instance(seed=5)
    z, tr = model.aggregate_batch(inp, P, "train")
    for up in (np.zeros_like(z), 3.0 * z):
        g = model.backward(tr, up, P)
        assert all(np.allclose(v, 0, atol=1e-12) for v in g.dense.values())
        assert np.allclose(g.E_vals, 0, atol=1e-12)


def test_backward_rejects_mismatched_params():
    P, inp, dz = gradcheck_instance(seed=6)
    _, tr = model.aggregate_batch(inp, P, "train")
    with pytest.raises(ValueError):
        model.backward(tr, dz, ModelParams.init(P.n_nodes, P.d + 1, seed=0))
    with pytest.raises(ValueError):
        model.backward(tr, dz[:, :2], P)


def test_trace_replay_is_bit_identical():
    P, inp, _ = gradcheck_instance(seed=7)
    z1, t1 = model.aggregate_batch(inp, P, "train")
    z2, _ = model.aggregate_batch(t1.inp, P, t1.mode, t1.ablation)
    assert np.array_equal(z1, z2) and np.array_equal(z1, t1.z)


def test_forward_does_not_touch_running_statistics():
    P, inp, _ = gradcheck_instance(seed=8, k=3)
    before = {k: v.copy() for k, v in P.tensors.items()}
    _, tr = model.aggregate_batch(inp, P, "train")
    assert all(np.array_equal(before[k], P.tensors[k]) for k in before)
    model.commit_running_stats(P, tr)
    assert not np.array_equal(before["bn1.mean"], P.tensors["bn1.mean"])
    # the walk-level site never has a batch of its own
    assert np.array_equal(before["bn2.var"], P.tensors["bn2.var"])


def test_walk_permutation_variance_is_finite(random_graph):
    P = ModelParams.init(random_graph.n_nodes, 4, seed=1)
    walks = twalk.sample_neighborhood(random_graph, 9, twalk.WalkContext(900, tau=50.0), 5, 6,
                                      np.random.default_rng(2))
    rng = np.random.default_rng(3)
    zs = np.array([model.aggregate(9, walks, P, random_graph.t_min, 50.0, rng, "infer")[0]
                   for _ in range(100)])
    var = zs.var(axis=0)
    assert np.all(np.isfinite(var)) and var.max() > 0


def test_checkpoint_round_trip_is_bit_exact():
    P = ModelParams.init(9, 5, 3, seed=4)
    blob = model.checkpoint_bytes(P, {"note": "x"})
    Q, meta = model.load_checkpoint(io.BytesIO(blob))
    assert meta == {"note": "x"} and Q.layers == 3 and Q.d == 5
    assert all(np.array_equal(P.tensors[k], Q.tensors[k]) for k in P.tensors)
    assert model.checkpoint_bytes(Q, {"note": "x"}) == blob
    with pytest.raises(ValueError):
        model.load_checkpoint(io.BytesIO(b"nonsense" + blob[8:]))
    with pytest.raises(ValueError):
        model.load_checkpoint(io.BytesIO(blob[:-3]))


def test_params_initialisation_ranges():
    P = ModelParams.init(10, 8, seed=0)
    b = 1 / np.sqrt(8)
    assert np.abs(P.tensors["E"]).max() <= b and P.tensors["W"].shape == (8, 16)
    assert np.all(P.tensors["bn1.var"] == 1) and np.all(P.tensors["bn2.mean"] == 0)
    P.tensors["W"][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        P.check_finite()
