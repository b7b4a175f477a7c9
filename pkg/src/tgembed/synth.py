"""Synthetic temporal graphs for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .tgraph import TemporalGraph, from_arrays


def temporal_sbm(n_nodes: int = 200, n_edges: int = 2000, blocks: int = 2, ratio: float = 5.0,
                 t_span: int = 10_000, seed: int = 0) -> tuple[TemporalGraph, np.ndarray]:
    """Stochastic block model with uniform random edge timestamps.

    Every intra-block pair is ``ratio`` times as likely as an inter-block
    pair to receive each edge. Pairs are drawn with replacement, so a few
    parallel edges (with distinct times) can appear. Returns the graph and
    the block label of each node.
    """
    rng = np.random.default_rng(seed)
    block = np.arange(n_nodes) % blocks
    iu, ju = np.triu_indices(n_nodes, 1)
    w = np.where(block[iu] == block[ju], ratio, 1.0)
    pick = rng.choice(len(iu), size=n_edges, p=w / w.sum())
    flip = rng.random(n_edges) < 0.5
    src = np.where(flip, ju[pick], iu[pick])
    dst = np.where(flip, iu[pick], ju[pick])
    t = rng.integers(0, t_span, n_edges)
    return from_arrays(n_nodes, src, dst, t), block


def random_temporal_graph(n_nodes: int, n_edges: int, t_span: int = 1000, seed: int = 0,
                          weighted: bool = False) -> TemporalGraph:
    """Uniformly random multigraph without self-loops."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n_nodes, n_edges)
    dst = (src + rng.integers(1, n_nodes, n_edges)) % n_nodes
    t = rng.integers(0, t_span, n_edges)
    w = rng.uniform(0.1, 2.0, n_edges) if weighted else None
    return from_arrays(n_nodes, src, dst, t, w)
