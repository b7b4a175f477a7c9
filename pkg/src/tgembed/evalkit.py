"""Network reconstruction and link prediction protocols."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .tgraph import TemporalEdge, TemporalGraph

log = logging.getLogger(__name__)


class EdgeOperator(enum.Enum):
    MEAN = "mean"
    HADAMARD = "hadamard"
    WEIGHTED_L1 = "l1"
    WEIGHTED_L2 = "l2"

    @classmethod
    def parse(cls, name: str) -> "EdgeOperator":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown operator {name!r}; choose from "
                             f"{[o.value for o in cls]}") from None


def edge_features(e_x: np.ndarray, e_y: np.ndarray, op: EdgeOperator) -> np.ndarray:
    """Elementwise edge representation; works on single vectors or row batches."""
    e_x, e_y = np.asarray(e_x, dtype=np.float64), np.asarray(e_y, dtype=np.float64)
    if e_x.shape != e_y.shape:
        raise ValueError(f"dimension mismatch: {e_x.shape} vs {e_y.shape}")
    if op is EdgeOperator.MEAN:
        return (e_x + e_y) / 2.0
    if op is EdgeOperator.HADAMARD:
        return e_x * e_y
    if op is EdgeOperator.WEIGHTED_L1:
        return np.abs(e_x - e_y)
    if op is EdgeOperator.WEIGHTED_L2:
        return (e_x - e_y) ** 2
    raise ValueError(f"unsupported operator {op!r}")


@dataclass
class EvalReport:
    task: str
    metrics: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        """Machine-readable rows ``task,metric,operator,P,mean,std,repeats,seed``."""
        out = []
        repeats, seed = self.protocol.get("repeats", 1), self.protocol.get("seed", "")
        for (metric, op, P), vals in sorted(self.metrics.items(), key=lambda kv: tuple(map(str, kv[0]))):
            vals = np.asarray(vals, dtype=np.float64)
            out.append(f"{self.task},{metric},{op or ''},{'' if P is None else P},"
                       f"{vals.mean():.6f},{vals.std():.6f},{repeats},{seed}")
        return out

    def table(self) -> str:
        head = f"{self.task}  " + "  ".join(f"{k}={v}" for k, v in sorted(self.protocol.items()))
        rows = [head, f"{'metric':<12}{'operator':<10}{'P':>8}{'mean':>10}{'std':>10}"]
        for (metric, op, P), vals in sorted(self.metrics.items(), key=lambda kv: tuple(map(str, kv[0]))):
            vals = np.asarray(vals, dtype=np.float64)
            rows.append(f"{metric:<12}{op or '-':<10}{'-' if P is None else P:>8}"
                        f"{vals.mean():>10.4f}{vals.std():>10.4f}")
        return "\n".join(rows)

    def mean(self, metric: str, op: str | None = None, P: int | None = None) -> float:
        return float(np.mean(self.metrics[(metric, op, P)]))

    def per_repeat(self, metric: str, op: str | None = None, P: int | None = None) -> list[float]:
        return list(self.metrics[(metric, op, P)])


# -- reconstruction ---------------------------------------------------------------


def precision_curve(emb: np.ndarray, nodes: np.ndarray, edge_codes: np.ndarray, n_total: int,
                    P_values: Sequence[int]) -> dict[int, float]:
    """Precision@P over all pairs among ``nodes`` ranked by descending dot product.

    Ties keep pair-index order (row-major over the upper triangle).
    """
    nodes = np.asarray(nodes)
    sub = emb[nodes]
    iu, ju = np.triu_indices(len(nodes), 1)
    scores = np.einsum("ij,ij->i", sub[iu], sub[ju])
    a, b = nodes[iu], nodes[ju]
    codes = np.minimum(a, b) * n_total + np.maximum(a, b)
    hit = np.isin(codes, edge_codes)
    ranked = hit[np.argsort(-scores, kind="stable")]
    cum = np.cumsum(ranked)
    out = {}
    for P in P_values:
        Pc = min(P, len(ranked))
        out[P] = float(cum[Pc - 1] / Pc) if Pc else 0.0
    return out


def _map_repeats(fn, rngs, threads: int):
    if threads <= 1:
        return [fn(r) for r in rngs]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, rngs))


def reconstruction_precision(emb: np.ndarray, g: TemporalGraph, P_values: Sequence[int],
                             sample_nodes: int | None = None, repeats: int = 1,
                             rng: np.random.Generator | None = None, seed: int | None = None,
                             threads: int = 1) -> EvalReport:
    """Precision@P of dot-product pair ranking against the edges of ``g``.

    With ``sample_nodes < n`` only pairs among a uniform node sample are
    ranked, ``repeats`` times; otherwise all pairs once. Each repeat draws
    from its own child generator, so ``threads`` never changes the result.
    """
    if emb.shape[0] < g.n_nodes:
        raise ValueError("embedding rows do not cover the graph's nodes")
    rng = rng if rng is not None else np.random.default_rng(seed)
    n = g.n_nodes
    full = sample_nodes is None or sample_nodes >= n
    repeats = 1 if full else repeats
    m = n if full else sample_nodes
    n_pairs = m * (m - 1) // 2
    P_values = sorted({int(P) for P in P_values})
    for P in P_values:
        if P > n_pairs:
            log.warning("P=%d exceeds the %d candidate pairs; clamped", P, n_pairs)
    codes = g.edge_pair_codes()

    def one(r):
        nodes = np.arange(n) if full else np.sort(r.choice(n, size=m, replace=False))
        return precision_curve(emb, nodes, codes, n, P_values)

    metrics: dict = {}
    for curve in _map_repeats(one, rng.spawn(repeats), threads):
        for P, v in curve.items():
            metrics.setdefault(("precision", None, P), []).append(v)
    return EvalReport("reconstruction", metrics, {
        "P_values": ",".join(map(str, P_values)), "sample_nodes": m, "repeats": repeats,
        "seed": seed if seed is not None else "", "pairs": "sampled x sampled"})


# -- logistic regression ---------------------------------------------------------------


def _logistic_loss(w, X1, y, l2):
    z = X1 @ w
    # log(1 + exp(z)) - y z, stable
    loss = np.logaddexp(0.0, z) - y * z
    return loss.mean() + 0.5 * l2 * (w[:-1] @ w[:-1])


def logistic_fit(features, labels, l2: float = 1e-4, iters: int = 500,
                 return_history: bool = False):
    """L2-regularised logistic regression by full-batch gradient descent.

    Step size is ``1 / L`` for the loss's gradient Lipschitz constant, which
    makes the loss non-increasing. Returns ``d + 1`` weights (bias last).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) aligned with labels")
    if not (np.any(y == 1) and np.any(y == 0)) or np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be binary with both classes present")
    n = len(X)
    X1 = np.hstack([X, np.ones((n, 1))])
    lip = 0.25 * np.linalg.norm(X1, 2) ** 2 / n + l2
    step = 1.0 / lip
    w = np.zeros(X1.shape[1])
    history = [_logistic_loss(w, X1, y, l2)]
    for _ in range(iters):
        p = 0.5 * np.tanh(0.5 * (X1 @ w)) + 0.5
        grad = X1.T @ (p - y) / n
        grad[:-1] += l2 * w[:-1]
        w = w - step * grad
        if return_history:
            history.append(_logistic_loss(w, X1, y, l2))
    return (w, history) if return_history else w


def logistic_predict(w: np.ndarray, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    return 0.5 * np.tanh(0.5 * (X @ w[:-1] + w[-1])) + 0.5


def auc_score(labels, scores) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    r = rankdata(scores)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_score(labels, pred) -> float:
    y = np.asarray(labels).astype(bool)
    p = np.asarray(pred).astype(bool)
    tp = np.sum(y & p)
    denom = 2 * tp + np.sum(~y & p) + np.sum(y & ~p)
    return float(2 * tp / denom) if denom else 0.0


# -- link prediction ---------------------------------------------------------------


def sample_non_edges(n_nodes: int, count: int, forbidden_codes: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct node pairs (u < v) whose code is not forbidden."""
    max_pairs = n_nodes * (n_nodes - 1) // 2 - len(forbidden_codes)
    if count > max_pairs:
        raise ValueError(f"cannot draw {count} non-edges; only {max_pairs} exist")
    have = np.zeros(0, dtype=np.int64)
    while len(have) < count:
        need = count - len(have)
        u = rng.integers(0, n_nodes, 2 * need + 16)
        v = rng.integers(0, n_nodes, 2 * need + 16)
        keep = u != v
        lo, hi = np.minimum(u, v)[keep], np.maximum(u, v)[keep]
        codes = lo * n_nodes + hi
        codes = codes[~np.isin(codes, forbidden_codes) & ~np.isin(codes, have)]
        _, first = np.unique(codes, return_index=True)
        codes = codes[np.sort(first)][:need]
        have = np.concatenate([have, codes])
    chosen = have[:count]
    return np.stack([chosen // n_nodes, chosen % n_nodes], axis=1)


def link_prediction_eval(emb: np.ndarray, train_g: TemporalGraph, held_out: Sequence[TemporalEdge],
                         op: EdgeOperator | Sequence[EdgeOperator], train_ratio: float = 0.5,
                         repeats: int = 10, rng: np.random.Generator | None = None,
                         seed: int | None = None, l2: float = 1e-4, iters: int = 500,
                         threads: int = 1) -> EvalReport:
    """Future-link classification with held-out edges as positives.

    Negatives are uniformly drawn node pairs that are edges neither in
    ``train_g`` nor in ``held_out``. Each repeat draws fresh negatives and a
    fresh train/test split; features are standardised with training-split
    statistics before fitting.
    """
    if len(held_out) == 0:
        raise ValueError("held_out is empty")
    if not 0 < train_ratio < 1:
        raise ValueError("train_ratio must lie in (0, 1)")
    ops = [op] if isinstance(op, EdgeOperator) else list(op)
    rng = rng if rng is not None else np.random.default_rng(seed)
    n = train_g.n_nodes
    pos = np.array([[e.src, e.dst] for e in held_out], dtype=np.int64)
    held_codes = np.minimum(pos[:, 0], pos[:, 1]) * n + np.maximum(pos[:, 0], pos[:, 1])
    forbidden = np.union1d(train_g.edge_pair_codes(), held_codes)

    def one(r):
        out = {}
        neg = sample_non_edges(n, len(pos), forbidden, r)
        pairs = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
        perm = r.permutation(len(pairs))
        n_train = int(round(train_ratio * len(pairs)))
        tr, te = perm[:n_train], perm[n_train:]
        if len(np.unique(labels[tr])) < 2 or len(np.unique(labels[te])) < 2:
            raise ValueError("split left one side with a single class; use more held-out edges")
        for o in ops:
            feats = edge_features(emb[pairs[:, 0]], emb[pairs[:, 1]], o)
            mu = feats[tr].mean(axis=0)
            sd = feats[tr].std(axis=0)
            sd[sd == 0] = 1.0
            feats = (feats - mu) / sd
            w = logistic_fit(feats[tr], labels[tr], l2=l2, iters=iters)
            prob = logistic_predict(w, feats[te])
            pred = prob >= 0.5
            y = labels[te]
            out[("f1", o.value, None)] = f1_score(y, pred)
            out[("accuracy", o.value, None)] = float(np.mean(pred == y.astype(bool)))
            out[("auc", o.value, None)] = auc_score(y, prob)
        return out

    metrics: dict = {}
    for res in _map_repeats(one, rng.spawn(repeats), threads):
        for key, v in res.items():
            metrics.setdefault(key, []).append(v)
    return EvalReport("link_prediction", metrics, {
        "operators": ",".join(o.value for o in ops), "train_ratio": train_ratio,
        "repeats": repeats, "seed": seed if seed is not None else "",
        "positives": len(pos), "threshold": 0.5})


def mean_pair_distance(emb: np.ndarray, pairs: np.ndarray) -> float:
    return float(np.linalg.norm(emb[pairs[:, 0]] - emb[pairs[:, 1]], axis=1).mean())
