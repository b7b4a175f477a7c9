"""Temporal random walks over historical neighbourhoods.

Walks start at a target node and move backwards in time: each traversed
edge is strictly older than the reference time and no newer than the edge
the walk arrived by. Step masses combine edge weight, an exponential decay
in ``(t_ref - t) / tau`` and a node2vec-style return/in-out bias.

The sampling loops live in the compiled ``_kernels`` extension with a
pure-Python twin (``_kernels_py``) picked up when the extension is not
built. Both consume one pre-drawn uniform per step, so walk output depends
only on the generator state and never on the backend or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .tgraph import AdjEntry, TemporalGraph


def kernels(backend: str | None = None):
    return _backend.get(backend)


@dataclass(frozen=True)
class WalkContext:
    t_ref: int
    p: float = 1.0
    q: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.p > 0 and self.q > 0 and self.tau > 0):
            raise ValueError(f"p, q, tau must be positive: {self}")


@dataclass(frozen=True)
class TemporalWalk:
    """One sampled walk.

    ``tsum[j]`` is the sum of timestamps of every traversal into
    ``nodes[j]`` within this walk and ``visits[j]`` the number of such
    traversals; both are per-node totals repeated at each position the node
    occupies.
    """

    nodes: tuple[int, ...]
    edge_times: tuple[int, ...]
    tsum: tuple[int, ...]
    visits: tuple[int, ...]

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_path(cls, nodes: Sequence[int], edge_times: Sequence[int]) -> "TemporalWalk":
        nodes = tuple(int(v) for v in nodes)
        edge_times = tuple(int(t) for t in edge_times)
        if len(edge_times) != len(nodes) - 1:
            raise ValueError("need one edge time per step")
        tot: dict[int, int] = {}
        cnt: dict[int, int] = {}
        for v, t in zip(nodes[1:], edge_times):
            tot[v] = tot.get(v, 0) + t
            cnt[v] = cnt.get(v, 0) + 1
        return cls(nodes, edge_times, tuple(tot.get(v, 0) for v in nodes),
                   tuple(cnt.get(v, 0) for v in nodes))


@dataclass
class WalkBatch:
    """Padded walk arrays: ``nodes`` is ``(N, L)`` with ``-1`` padding."""

    nodes: np.ndarray
    times: np.ndarray
    steps: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return self.steps + 1

    def __len__(self):
        return len(self.steps)

    def walk(self, i: int) -> TemporalWalk:
        s = int(self.steps[i])
        return TemporalWalk.from_path(self.nodes[i, :s + 1], self.times[i, :s])

    def to_walks(self) -> list[TemporalWalk]:
        return [self.walk(i) for i in range(len(self))]

    @classmethod
    def from_walks(cls, walks: Sequence[TemporalWalk], length: int | None = None) -> "WalkBatch":
        L = max(len(w) for w in walks) if length is None else length + 1
        nodes = np.full((len(walks), L), -1, dtype=np.int64)
        times = np.zeros((len(walks), L - 1), dtype=np.int64)
        steps = np.zeros(len(walks), dtype=np.int64)
        for i, w in enumerate(walks):
            nodes[i, :len(w)] = w.nodes
            times[i, :len(w) - 1] = w.edge_times
            steps[i] = len(w) - 1
        return cls(nodes, times, steps)

    def rescaled_time_sums(self, t_origin: int, tau_t: float) -> np.ndarray:
        """Per-position ``(tsum - visits * t_origin) / tau_t + 1`` (1 for pads)."""
        N, L = self.nodes.shape
        shifted = np.zeros((N, L))
        # step j arrives at position j + 1
        valid = np.arange(1, L)[None, :] <= self.steps[:, None]
        shifted[:, 1:] = np.where(valid, (self.times - t_origin) / tau_t, 0.0)
        same = self.nodes[:, :, None] == self.nodes[:, None, :]
        return 1.0 + np.einsum("nij,nj->ni", same, shifted)

    def concat(self, other: "WalkBatch") -> "WalkBatch":
        return WalkBatch(np.concatenate([self.nodes, other.nodes]),
                         np.concatenate([self.times, other.times]),
                         np.concatenate([self.steps, other.steps]))


def next_step_distribution(g: TemporalGraph, prev: int | None, cur: int, t_in: int,
                           ctx: WalkContext) -> list[tuple[AdjEntry, float]]:
    """Exact normalized next-step distribution at ``cur``.

    Evaluated straight from the definition (no shifting or kernel code) so it
    can serve as the reference the samplers are checked against.
    """
    g._check_node(cur)
    if prev is not None:
        g._check_node(prev)
    cands, masses = [], []
    for entry in g.adj(cur):
        if not (entry.t <= t_in and entry.t < ctx.t_ref):
            continue
        if prev is None:
            beta = 1.0
        elif entry.nbr == prev:
            beta = 1.0 / ctx.p
        elif g.are_adjacent(prev, entry.nbr):
            beta = 1.0
        else:
            beta = 1.0 / ctx.q
        cands.append(entry)
        masses.append(beta * entry.w * math.exp(-(ctx.t_ref - entry.t) / ctx.tau))
    total = math.fsum(masses)
    if not total > 0:
        return []
    return [(e, m / total) for e, m in zip(cands, masses)]


def _run_chunked(fn, n: int, threads: int, chunk_args):
    if threads <= 1 or n < 2 * threads:
        return fn(*chunk_args(0, n))
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as ex:
        parts = list(ex.map(lambda ab: fn(*chunk_args(*ab)), zip(bounds[:-1], bounds[1:])))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def temporal_walk_batch(g: TemporalGraph, starts, t_refs, length: int, rng: np.random.Generator,
                        *, p: float = 1.0, q: float = 1.0, tau: float | None = None,
                        threads: int = 1, backend: str | None = None) -> WalkBatch:
    """Sample one temporal walk per ``(start, t_ref)`` pair."""
    if length < 1:
        raise ValueError("walk length must be >= 1")
    tau = g.tau if tau is None else tau
    WalkContext(0, p, q, tau)
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    t_refs = np.ascontiguousarray(np.broadcast_to(t_refs, starts.shape), dtype=np.int64)
    u = rng.random((len(starts), length))
    k = kernels(backend)

    def args(a, b):
        return (g.indptr, g.adj_nbr, g.adj_t, g.adj_w, g.nbr_indptr, g.nbr_set,
                starts[a:b], t_refs[a:b], float(p), float(q), float(tau), int(length), u[a:b])

    return WalkBatch(*_run_chunked(k.temporal_walks, len(starts), threads, args))


def uniform_walk_batch(g: TemporalGraph, starts, length: int, rng: np.random.Generator, *,
                       two_hop: bool = True, threads: int = 1,
                       backend: str | None = None) -> WalkBatch:
    """Time-ignoring uniform walks; ``two_hop`` confines them to the start's 2-hop ball."""
    if length < 1:
        raise ValueError("walk length must be >= 1")
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    u = rng.random((len(starts), length))
    k = kernels(backend)

    def args(a, b):
        return (g.indptr, g.adj_nbr, g.adj_t, g.nbr_indptr, g.nbr_set,
                starts[a:b], int(length), u[a:b], bool(two_hop))

    return WalkBatch(*_run_chunked(k.uniform_walks, len(starts), threads, args))


def sample_walk(g: TemporalGraph, start: int, ctx: WalkContext, length: int,
                rng: np.random.Generator, backend: str | None = None) -> TemporalWalk:
    g._check_node(start)
    return temporal_walk_batch(g, [start], [ctx.t_ref], length, rng, p=ctx.p, q=ctx.q,
                               tau=ctx.tau, backend=backend).walk(0)


def sample_neighborhood(g: TemporalGraph, node: int, ctx: WalkContext, k: int, length: int,
                        rng: np.random.Generator, backend: str | None = None) -> list[TemporalWalk]:
    if k < 1:
        raise ValueError("k must be >= 1")
    g._check_node(node)
    return temporal_walk_batch(g, [node] * k, [ctx.t_ref] * k, length, rng, p=ctx.p, q=ctx.q,
                               tau=ctx.tau, backend=backend).to_walks()


def fallback_neighborhood(g: TemporalGraph, node: int, k: int, length: int,
                          rng: np.random.Generator, backend: str | None = None) -> list[TemporalWalk]:
    """Uniform walks inside the node's static two-hop neighbourhood."""
    if k < 1:
        raise ValueError("k must be >= 1")
    g._check_node(node)
    return uniform_walk_batch(g, [node] * k, length, rng, two_hop=True, backend=backend).to_walks()


def format_walk(g: TemporalGraph, walk: TemporalWalk) -> str:
    """One-line dump ``start(*) node(t) node(t) ...`` using original labels."""
    parts = [f"{g.labels[walk.nodes[0]]}(*)"]
    parts += [f"{g.labels[v]}({t})" for v, t in zip(walk.nodes[1:], walk.edge_times)]
    return " ".join(parts)


def dump_walks(g: TemporalGraph, walks: Sequence[TemporalWalk], fh) -> None:
    for w in walks:
        fh.write(format_walk(g, w) + "\n")
