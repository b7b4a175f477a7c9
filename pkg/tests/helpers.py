"""Shared test utilities: instance builders and a central-difference checker."""

import numpy as np

from tgembed import model, synth, twalk


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def randomize_params(P: model.ModelParams, rng: np.random.Generator) -> None:
    """Move batch-norm state away from its (0, 1) initial values."""
    d = P.d
    for site in ("bn1", "bn2"):
        P.tensors[f"{site}.gamma"] = rng.uniform(0.5, 1.5, d)
        P.tensors[f"{site}.beta"] = rng.uniform(-0.3, 0.3, d)
        P.tensors[f"{site}.mean"] = rng.uniform(-0.1, 0.1, d)
        P.tensors[f"{site}.var"] = rng.uniform(0.5, 2.0, d)


def gradcheck_instance(seed=0, d=4, k=2, length=3, batch=4, n=12):
    """Random aggregation batch plus random upstream gradient."""
    rng = np.random.default_rng(seed)
    g = synth.random_temporal_graph(n, 60, t_span=100, seed=seed)
    targets = rng.integers(0, n, batch)
    wb = twalk.temporal_walk_batch(g, np.repeat(targets, k), 95, length, rng, p=0.5, q=2.0, tau=20.0)
    P = model.ModelParams.init(n, d, 2, seed=seed + 1)
    randomize_params(P, rng)
    inp = model.AggregationInput.build(targets, wb, k, g.t_min, 20.0, rng)
    dz = rng.normal(size=(batch, d))
    return P, inp, dz


def finite_difference_errors(P, inp, dz, mode, ablation, h=1e-4, floor=1e-8):
    """Worst relative error per trainable tensor of ``sum(dz * z)`` gradients."""
    z, trace = model.aggregate_batch(inp, P, mode, ablation)
    grads = model.backward(trace, dz, P)
    worst = {}
    for name in P.trainable_names():
        analytic = grads.dense_E(P.n_nodes) if name == "E" else grads.dense[name]
        T = P.tensors[name]
        numeric = np.zeros_like(T)
        for idx in np.ndindex(T.shape):
            old = T[idx]
            T[idx] = old + h
            zp, _ = model.aggregate_batch(inp, P, mode, ablation)
            T[idx] = old - h
            zm, _ = model.aggregate_batch(inp, P, mode, ablation)
            T[idx] = old
            numeric[idx] = ((zp - zm) * dz).sum() / (2 * h)
        diff = np.abs(analytic - numeric)
        rel = diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-300)
        rel[diff < floor] = 0.0
        worst[name] = float(rel.max())
    return worst


def loss_gradcheck_instance(seed=0, d=4, k=2, length=3, batch=4, n=12, ablation="none"):
    """One sampled training batch (walks and negatives fixed) on a small random graph."""
    from tgembed import train

    g = synth.random_temporal_graph(n, 60, t_span=100, seed=seed)
    cfg = train.TrainConfig(d=d, k=k, walk_length=length, batch=batch, epochs=1, seed=seed,
                            tau=20.0, p=0.5, q=2.0, ablation=ablation)
    rng = np.random.default_rng(seed)
    P = model.ModelParams.init(n, d, 2, seed=seed + 1)
    randomize_params(P, rng)
    idx = np.arange(g.n_edges - batch, g.n_edges)
    b = train.build_batch(g, cfg, idx, rng, train.NoiseSampler(g))
    return P, b, cfg


def loss_finite_difference_errors(P, b, cfg, mode="train", h=1e-4, floor=1e-8):
    """Worst relative error per trainable tensor of the summed batch loss."""
    from tgembed import train

    _, grads, _ = train.batch_objective(b, P, cfg, mode)
    worst = {}
    for name in P.trainable_names():
        analytic = grads.dense_E(P.n_nodes) if name == "E" else grads.dense[name]
        T = P.tensors[name]
        numeric = np.zeros_like(T)
        for idx in np.ndindex(T.shape):
            old = T[idx]
            T[idx] = old + h
            lp = train.batch_objective(b, P, cfg, mode)[0]
            T[idx] = old - h
            lm = train.batch_objective(b, P, cfg, mode)[0]
            T[idx] = old
            numeric[idx] = (lp - lm) / (2 * h)
        diff = np.abs(analytic - numeric)
        rel = diff / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-300)
        rel[diff < floor] = 0.0
        worst[name] = float(rel.max())
    return worst


# acceptance results, printed by the terminal-summary hook in conftest
ACCEPTANCE: dict[str, str] = {}


def record_criterion(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
