"""Training loop: bidirectional margin loss with degree-based negative sampling."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import model, twalk
from .model import ABLATIONS, AggregationInput, ModelParams
from .tgraph import TemporalGraph, degree_powers

log = logging.getLogger(__name__)

NOISE_EXPONENT = 0.75
MAX_RESAMPLE = 100


@dataclass
class TrainConfig:
    d: int = 128
    k: int = 10
    walk_length: int = 10
    p: float = 1.0
    q: float = 1.0
    margin: float = 5.0
    negatives: int = 5
    lr: float = 2e-5
    batch: int = 512
    epochs: int | None = None
    seed: int = 0
    tau: float | None = None
    tau_t: float | None = None
    ablation: str = "none"
    layers: int = 2
    threads: int = 1

    def validate(self) -> None:
        if self.epochs is None:
            raise ValueError("epochs must be set explicitly")
        for name in ("d", "k", "walk_length", "negatives", "batch", "layers", "threads"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        for name in ("p", "q", "lr", "margin"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and v > 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        for name in ("tau", "tau_t"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive, got {v!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def resolved_tau(self, g: TemporalGraph) -> float:
        return g.tau if self.tau is None else float(self.tau)

    def resolved_tau_t(self, g: TemporalGraph) -> float:
        return self.resolved_tau(g) if self.tau_t is None else float(self.tau_t)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: f.type for f in fields(cls)}


class NoiseSampler:
    """Alias table over nodes with mass proportional to ``degree ** 0.75``."""

    def __init__(self, g: TemporalGraph, exponent: float = NOISE_EXPONENT):
        self._build(degree_powers(g, exponent))

    @classmethod
    def from_degrees(cls, degrees, exponent: float = NOISE_EXPONENT) -> "NoiseSampler":
        deg = np.asarray(degrees, dtype=np.float64)
        if np.any(deg < 0):
            raise ValueError("degrees must be non-negative")
        out = cls.__new__(cls)
        out._build(np.where(deg > 0, deg, 0.0) ** exponent * (deg > 0))
        return out

    def _build(self, weights: np.ndarray) -> None:
        support = np.flatnonzero(weights > 0)
        if len(support) == 0:
            raise ValueError("graph has no edges; cannot build a noise distribution")
        self.support = support
        self.probs = weights / weights.sum()
        self.threshold, self.alias = _alias_table(weights[support])

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        slot = rng.integers(0, len(self.support), size=size)
        keep = rng.random(size) < self.threshold[slot]
        return self.support[np.where(keep, slot, self.alias[slot])]


def _alias_table(weights: np.ndarray):
    """Vose's alias method over strictly positive weights."""
    n = len(weights)
    scaled = weights * (n / weights.sum())
    threshold = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s, l_ = small.pop(), large.pop()
        threshold[s] = scaled[s]
        alias[s] = l_
        scaled[l_] = scaled[l_] + scaled[s] - 1.0
        (small if scaled[l_] < 1.0 else large).append(l_)
    # leftovers are 1 up to rounding
    return threshold, alias


def build_noise_sampler(g: TemporalGraph) -> NoiseSampler:
    return NoiseSampler(g)


def draw_negatives(sampler: NoiseSampler, xs: np.ndarray, ys: np.ndarray, Q: int,
                   rng: np.random.Generator) -> np.ndarray:
    """``(len(xs), Q)`` negatives avoiding each row's ``x`` and ``y``; -1 marks a skipped slot."""
    neg = sampler.draw(rng, (len(xs), Q))
    for _ in range(MAX_RESAMPLE):
        bad = (neg == xs[:, None]) | (neg == ys[:, None])
        if not bad.any():
            return neg
        neg[bad] = sampler.draw(rng, int(bad.sum()))
    bad = (neg == xs[:, None]) | (neg == ys[:, None])
    neg[bad] = -1
    return neg


# -- loss ------------------------------------------------------------------------


def edge_losses(zx, zy, zneg_x, zneg_y, valid_x, valid_y, margin: float):
    """Vectorised bidirectional hinge loss.

    Shapes: ``zx, zy`` (E, d); ``zneg_*`` (E, Q, d); ``valid_*`` (E, Q).
    Returns per-edge losses and gradients w.r.t. each input. The hinge
    contributes a zero subgradient unless its argument is strictly positive.
    """
    dpos = zx - zy
    pos = (dpos * dpos).sum(axis=1)
    dnx = zx[:, None, :] - zneg_x
    dny = zy[:, None, :] - zneg_y
    arg_x = margin + pos[:, None] - (dnx * dnx).sum(axis=2)
    arg_y = margin + pos[:, None] - (dny * dny).sum(axis=2)
    act_x = valid_x & (arg_x > 0)
    act_y = valid_y & (arg_y > 0)
    loss = np.where(act_x, arg_x, 0.0).sum(axis=1) + np.where(act_y, arg_y, 0.0).sum(axis=1)
    n_act = act_x.sum(axis=1) + act_y.sum(axis=1)
    ax, ay = act_x[..., None], act_y[..., None]
    g_pos = 2.0 * dpos * n_act[:, None]
    gzx = g_pos - 2.0 * (ax * dnx).sum(axis=1)
    gzy = -g_pos - 2.0 * (ay * dny).sum(axis=1)
    gnx = 2.0 * ax * dnx
    gny = 2.0 * ay * dny
    return loss, gzx, gzy, gnx, gny


def edge_loss(z_x, z_y, z_negs_x, z_negs_y, m: float):
    """Loss and gradients for one edge with its two lists of negatives."""
    z_x, z_y = np.asarray(z_x, float), np.asarray(z_y, float)
    nx, ny = np.atleast_2d(np.asarray(z_negs_x, float)), np.atleast_2d(np.asarray(z_negs_y, float))
    d = z_x.shape[-1]
    if z_y.shape != (d,) or z_x.shape != (d,) or nx.shape[1] != d or ny.shape[1] != d:
        raise ValueError("dimension mismatch between edge-loss inputs")
    if len(nx) < 1 or len(ny) < 1:
        raise ValueError("need at least one negative per side")
    loss, gx, gy, gnx, gny = edge_losses(z_x[None], z_y[None], nx[None], ny[None],
                                         np.ones((1, len(nx)), bool), np.ones((1, len(ny)), bool), m)
    return float(loss[0]), gx[0], gy[0], gnx[0], gny[0]


# -- fitting ---------------------------------------------------------------------


def _streams(seed: int):
    init_ss, train_ss, embed_ss = np.random.SeedSequence(seed).spawn(3)
    return int(init_ss.generate_state(1)[0]), np.random.default_rng(train_ss), embed_ss


def positive_walks(g: TemporalGraph, targets, t_refs, cfg: TrainConfig, rng) -> twalk.WalkBatch:
    """``k`` walks per target; history-less targets get two-hop fallback walks."""
    starts = np.repeat(targets, cfg.k)
    if cfg.ablation == "RW":
        return twalk.uniform_walk_batch(g, starts, cfg.walk_length, rng, two_hop=False,
                                        threads=cfg.threads)
    wb = twalk.temporal_walk_batch(g, starts, np.repeat(t_refs, cfg.k), cfg.walk_length, rng,
                                   p=cfg.p, q=cfg.q, tau=cfg.resolved_tau(g), threads=cfg.threads)
    # a node with any history always takes at least one step
    empty = wb.steps == 0
    if empty.any():
        fb = twalk.uniform_walk_batch(g, starts[empty], cfg.walk_length, rng, two_hop=True,
                                      threads=cfg.threads)
        wb.nodes[empty], wb.times[empty], wb.steps[empty] = fb.nodes, fb.times, fb.steps
    return wb


@dataclass
class BatchResult:
    loss: float
    n_edges: int


@dataclass
class Batch:
    """A sampled mini-batch: aggregation input plus where each negative sits in it.

    Rows ``[0, n)`` of the aggregation are the edge sources, ``[n, 2n)`` the
    destinations and the rest the distinct negatives. ``slot`` maps every
    ``(edge, negative)`` pair to its row; invalid slots point at row 0.
    """

    inp: AggregationInput
    n_edges: int
    Q: int
    slot: np.ndarray
    valid: np.ndarray


def build_batch(g: TemporalGraph, cfg: TrainConfig, edge_idx: np.ndarray, rng: np.random.Generator,
                sampler: NoiseSampler, negatives: np.ndarray | None = None) -> Batch:
    """Draw negatives and walks for one mini-batch.

    Each distinct negative node is aggregated once per mini-batch and its
    gradient collects every occurrence.
    """
    xs, ys, ts = g.src[edge_idx], g.dst[edge_idx], g.t[edge_idx]
    nE, Q = len(edge_idx), cfg.negatives
    if negatives is None:
        negatives = draw_negatives(sampler, xs, ys, 2 * Q, rng)
    neg = negatives.reshape(nE, 2 * Q)
    valid = neg >= 0
    uniq, inv = np.unique(neg[valid], return_inverse=True)

    pos_targets = np.concatenate([xs, ys])
    wb = positive_walks(g, pos_targets, np.concatenate([ts, ts]), cfg, rng)
    if len(uniq):
        wb = wb.concat(twalk.uniform_walk_batch(g, np.repeat(uniq, cfg.k), cfg.walk_length, rng,
                                                two_hop=True, threads=cfg.threads))
    targets = np.concatenate([pos_targets, uniq])
    inp = AggregationInput.build(targets, wb, cfg.k, g.t_min, cfg.resolved_tau_t(g), rng)
    slot = np.zeros(neg.shape, dtype=np.int64)
    slot[valid] = 2 * nE + inv
    return Batch(inp, nE, Q, slot, valid)


def batch_objective(batch: Batch, params: ModelParams, cfg: TrainConfig, mode: str = "train"):
    """Summed hinge loss of a batch with its gradients; parameters are left untouched.

    Returns ``(loss, grads, trace)``.
    """
    Z, trace = model.aggregate_batch(batch.inp, params, mode, cfg.ablation)
    nE, Q, slot, valid = batch.n_edges, batch.Q, batch.slot, batch.valid
    zn = Z[slot]
    loss, gx, gy, gnx, gny = edge_losses(Z[:nE], Z[nE:2 * nE], zn[:, :Q], zn[:, Q:],
                                         valid[:, :Q], valid[:, Q:], cfg.margin)
    dZ = np.zeros_like(Z)
    dZ[:nE] = gx
    dZ[nE:2 * nE] = gy
    gneg = np.concatenate([gnx, gny], axis=1)
    np.add.at(dZ, slot[valid], gneg[valid])
    return float(loss.sum()), model.backward(trace, dZ, params), trace


def train_step(g: TemporalGraph, params: ModelParams, cfg: TrainConfig, edge_idx: np.ndarray,
               rng: np.random.Generator, sampler: NoiseSampler, lr: float | None = None,
               negatives: np.ndarray | None = None) -> BatchResult:
    """One mini-batch: sample, forward, bidirectional hinge loss, backward, update."""
    batch = build_batch(g, cfg, edge_idx, rng, sampler, negatives)
    loss, grads, trace = batch_objective(batch, params, cfg)
    model.apply_gradients(params, grads, cfg.lr if lr is None else lr)
    model.commit_running_stats(params, trace)
    return BatchResult(loss, batch.n_edges)


def fit(g: TemporalGraph, cfg: TrainConfig,
        on_epoch: Callable[[dict], None] | None = None) -> tuple[ModelParams, list[dict]]:
    """Train on every edge, in chronological mini-batches, for ``cfg.epochs`` epochs."""
    cfg.validate()
    if g.n_edges == 0:
        raise ValueError("cannot train on a graph without edges")
    init_seed, rng, _ = _streams(cfg.seed)
    params = ModelParams.init(g.n_nodes, cfg.d, cfg.layers, init_seed)
    sampler = NoiseSampler(g)
    history = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for start in range(0, g.n_edges, cfg.batch):
            idx = np.arange(start, min(start + cfg.batch, g.n_edges))
            total += train_step(g, params, cfg, idx, rng, sampler).loss
        params.check_finite()
        entry = {"epoch": epoch, "loss": total / g.n_edges, "lr": cfg.lr, "edges": g.n_edges}
        history.append(entry)
        log.info(format_log_line(entry))
        if on_epoch is not None:
            on_epoch(entry)
    return params, history


def format_log_line(entry: dict) -> str:
    return f"epoch={entry['epoch']} loss={entry['loss']:.17g} lr={entry['lr']:g} edges={entry['edges']}"


def materialize_embeddings(g: TemporalGraph, params: ModelParams, cfg: TrainConfig,
                           chunk: int = 2048) -> np.ndarray:
    """Final embeddings: one inference-mode aggregation per node at its latest edge.

    ``t_ref`` is one tick past the node's most recent edge so that edge is
    walkable. Isolated nodes fall back to their normalised table row.
    """
    cfg.validate()
    if params.n_nodes != g.n_nodes:
        raise ValueError(f"parameters cover {params.n_nodes} nodes, graph has {g.n_nodes}")
    _, _, embed_ss = _streams(cfg.seed)
    rng = np.random.default_rng(embed_ss)
    E = params.tensors["E"]
    out = E / np.linalg.norm(E, axis=1, keepdims=True)
    active = np.flatnonzero(g.degree > 0)
    last_t = g.adj_t[g.indptr[active + 1] - 1]
    for a in range(0, len(active), chunk):
        nodes = active[a:a + chunk]
        wb = positive_walks(g, nodes, last_t[a:a + chunk] + 1, cfg, rng)
        inp = AggregationInput.build(nodes, wb, cfg.k, g.t_min, cfg.resolved_tau_t(g), rng)
        z, _ = model.aggregate_batch(inp, params, "infer", cfg.ablation)
        out[nodes] = z
    return out
