"""Temporal multigraph storage, edge-list I/O and chronological splitting."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)


class GraphParseError(ValueError):
    """Malformed edge-list input."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class GraphValidationError(ValueError):
    pass


class TemporalEdge(NamedTuple):
    src: int
    dst: int
    t: int
    w: float = 1.0


class AdjEntry(NamedTuple):
    nbr: int
    t: int
    w: float


@dataclass(frozen=True, eq=False)
class TemporalGraph:
    """Immutable undirected temporal multigraph.

    Edges are kept in arrays sorted by ``(t, src, dst)``. The adjacency is a
    CSR structure where each node's slice is sorted ascending by timestamp,
    and every edge appears in both endpoints' slices.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    w: np.ndarray
    tau: float
    labels: tuple[str, ...]
    directed: bool = False
    # input line position of each edge; used to reproduce label order on export
    seq: np.ndarray | None = None
    indptr: np.ndarray = field(init=False, repr=False)
    adj_nbr: np.ndarray = field(init=False, repr=False)
    adj_t: np.ndarray = field(init=False, repr=False)
    adj_w: np.ndarray = field(init=False, repr=False)
    nbr_indptr: np.ndarray = field(init=False, repr=False)
    nbr_set: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n, m = self.n_nodes, len(self.src)
        if not self.tau > 0:
            raise GraphValidationError(f"tau must be positive, got {self.tau}")
        if len(self.labels) != n:
            raise GraphValidationError("label count does not match n_nodes")
        if m and (self.src.min() < 0 or self.dst.min() < 0
                  or max(self.src.max(), self.dst.max()) >= n):
            raise GraphValidationError("edge endpoint out of range")
        if np.any(self.w < 0):
            raise GraphValidationError("negative edge weight")
        if np.any(self.src == self.dst):
            raise GraphValidationError("self-loop in edge arrays")
        order = np.lexsort((self.dst, self.src, self.t))
        if not np.array_equal(order, np.arange(m)):
            raise GraphValidationError("edges must be sorted by (t, src, dst)")
        for name in ("src", "dst", "t", "w"):
            getattr(self, name).setflags(write=False)

        # both directions; a stable sort on t keeps edge order for equal times
        owner = np.concatenate([self.src, self.dst])
        other = np.concatenate([self.dst, self.src])
        tt = np.concatenate([self.t, self.t])
        ww = np.concatenate([self.w, self.w])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        perm = np.lexsort((eid, tt, owner))
        counts = np.bincount(owner, minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self._freeze("indptr", indptr)
        self._freeze("adj_nbr", other[perm].astype(np.int64))
        self._freeze("adj_t", tt[perm].astype(np.int64))
        self._freeze("adj_w", ww[perm].astype(np.float64))

        # sorted distinct neighbours per node, for O(log d) adjacency tests
        pairs = np.unique(np.stack([owner, other], axis=1), axis=0) if m else np.zeros((0, 2), np.int64)
        ncount = np.bincount(pairs[:, 0], minlength=n) if m else np.zeros(n, np.int64)
        nptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(ncount, out=nptr[1:])
        self._freeze("nbr_indptr", nptr)
        self._freeze("nbr_set", pairs[:, 1].astype(np.int64))

    def _freeze(self, name, arr):
        arr.setflags(write=False)
        object.__setattr__(self, name, arr)

    # -- basic views -----------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> list[TemporalEdge]:
        return [TemporalEdge(int(a), int(b), int(c), float(d))
                for a, b, c, d in zip(self.src, self.dst, self.t, self.w)]

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def t_min(self) -> int:
        return int(self.t[0]) if self.n_edges else 0

    @property
    def t_max(self) -> int:
        return int(self.t[-1]) if self.n_edges else 0

    def adj(self, v: int) -> list[AdjEntry]:
        self._check_node(v)
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return [AdjEntry(int(a), int(b), float(c))
                for a, b, c in zip(self.adj_nbr[lo:hi], self.adj_t[lo:hi], self.adj_w[lo:hi])]

    def neighbor_ids(self, v: int) -> np.ndarray:
        return self.nbr_set[self.nbr_indptr[v]:self.nbr_indptr[v + 1]]

    def are_adjacent(self, u: int, v: int) -> bool:
        nb = self.neighbor_ids(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def _check_node(self, v) -> None:
        if not (0 <= v < self.n_nodes):
            raise IndexError(f"invalid node id {v} (n_nodes={self.n_nodes})")

    def summary(self) -> str:
        return (f"nodes={self.n_nodes} edges={self.n_edges} "
                f"t=[{self.t_min},{self.t_max}] tau={self.tau:g}")

    def __repr__(self):
        return f"TemporalGraph({self.summary()})"

    def edge_pair_codes(self) -> np.ndarray:
        """Sorted distinct codes ``min*n + max`` of node pairs joined by an edge."""
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        return np.unique(lo * self.n_nodes + hi)

    def to_edge_list(self) -> str:
        """Serialize in original input order so that reloading keeps the id map."""
        order = np.argsort(self.seq, kind="stable") if self.seq is not None else np.arange(self.n_edges)
        out = io.StringIO()
        for i in order:
            out.write(f"{self.labels[self.src[i]]} {self.labels[self.dst[i]]} "
                      f"{int(self.t[i])} {float(self.w[i])!r}\n")
        return out.getvalue()


def default_tau(t_min: int, t_max: int) -> float:
    return max(1.0, (t_max - t_min) / 10.0)


def from_arrays(n_nodes: int, src, dst, t, w=None, *, tau: float | None = None,
                labels: Sequence[str] | None = None, directed: bool = False,
                seq=None) -> TemporalGraph:
    """Build a graph from parallel arrays; edges are sorted here."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    w = np.ones(len(src)) if w is None else np.asarray(w, dtype=np.float64)
    seq = np.arange(len(src)) if seq is None else np.asarray(seq, dtype=np.int64)
    if not (len(src) == len(dst) == len(t) == len(w) == len(seq)):
        raise GraphValidationError("edge arrays differ in length")
    order = np.lexsort((dst, src, t))
    if tau is None:
        tau = default_tau(int(t.min()), int(t.max())) if len(t) else 1.0
    if labels is None:
        labels = [str(i) for i in range(n_nodes)]
    return TemporalGraph(n_nodes, src[order], dst[order], t[order], w[order],
                         float(tau), tuple(labels), directed, seq[order])


def from_edges(n_nodes: int, edges: Iterable[Sequence], **kw) -> TemporalGraph:
    rows = [tuple(e) for e in edges]
    src = [r[0] for r in rows]
    dst = [r[1] for r in rows]
    t = [r[2] for r in rows]
    w = [r[3] if len(r) > 3 else 1.0 for r in rows]
    return from_arrays(n_nodes, src, dst, t, w, **kw)


def load_edge_list(source: IO | str | bytes, *, tau: float | None = None,
                   directed: bool = False) -> TemporalGraph:
    """Parse ``src dst timestamp [weight]`` lines.

    ``source`` may be a path, a text/binary stream, or raw bytes. Node labels
    are mapped to dense ids in first-seen order. Self-loops are skipped with a
    warning; the number skipped is available as ``load_edge_list.last_self_loops``.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    ids: dict[str, int] = {}
    src, dst, ts, ws = [], [], [], []
    self_loops = 0
    data_lines = 0
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        data_lines += 1
        parts = s.split()
        if len(parts) not in (3, 4):
            raise GraphParseError(lineno, f"expected 3 or 4 fields, got {len(parts)}")
        try:
            t = int(parts[2])
        except ValueError:
            raise GraphParseError(lineno, f"non-integer timestamp {parts[2]!r}") from None
        w = 1.0
        if len(parts) == 4:
            try:
                w = float(parts[3])
            except ValueError:
                raise GraphParseError(lineno, f"non-numeric weight {parts[3]!r}") from None
            if not math.isfinite(w):
                raise GraphParseError(lineno, f"non-finite weight {parts[3]!r}")
            if w < 0:
                raise GraphValidationError(f"line {lineno}: negative weight {w}")
        a, b = parts[0], parts[1]
        if a == b:
            self_loops += 1
            continue
        src.append(ids.setdefault(a, len(ids)))
        dst.append(ids.setdefault(b, len(ids)))
        ts.append(t)
        ws.append(w)
    if data_lines == 0:
        raise GraphParseError(0, "empty edge list")
    if self_loops:
        log.warning("skipped %d self-loop line(s)", self_loops)
    load_edge_list.last_self_loops = self_loops
    return from_arrays(len(ids), src, dst, ts, ws, tau=tau, labels=list(ids), directed=directed)


load_edge_list.last_self_loops = 0


def neighbors_before(g: TemporalGraph, v: int, t_ref: int) -> list[AdjEntry]:
    """Adjacency entries of ``v`` with timestamp strictly below ``t_ref``."""
    g._check_node(v)
    lo = g.indptr[v]
    hi = lo + np.searchsorted(g.adj_t[lo:g.indptr[v + 1]], t_ref, side="left")
    return [AdjEntry(int(a), int(b), float(c))
            for a, b, c in zip(g.adj_nbr[lo:hi], g.adj_t[lo:hi], g.adj_w[lo:hi])]


def history_count(g: TemporalGraph, v: int, t_ref: int) -> int:
    lo = g.indptr[v]
    return int(np.searchsorted(g.adj_t[lo:g.indptr[v + 1]], t_ref, side="left"))


def split_by_time(g: TemporalGraph, fraction: float) -> tuple[TemporalGraph, list[TemporalEdge]]:
    """Hold out the ``ceil(fraction * |E|)`` most recent edges.

    Edges are already ordered by ``(t, src, dst)``, so the held-out set is a
    suffix of the edge arrays. The training graph keeps every node.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    m = g.n_edges
    if m < 2:
        raise ValueError("need at least 2 edges to split")
    n_out = math.ceil(fraction * m)
    cut = m - n_out
    train = TemporalGraph(g.n_nodes, g.src[:cut].copy(), g.dst[:cut].copy(), g.t[:cut].copy(),
                          g.w[:cut].copy(), g.tau, g.labels, g.directed,
                          None if g.seq is None else g.seq[:cut].copy())
    held = [TemporalEdge(int(a), int(b), int(c), float(d))
            for a, b, c, d in zip(g.src[cut:], g.dst[cut:], g.t[cut:], g.w[cut:])]
    return train, held


def degree_powers(g: TemporalGraph, exponent: float) -> np.ndarray:
    deg = g.degree.astype(np.float64)
    out = np.zeros_like(deg)
    nz = deg > 0
    out[nz] = deg[nz] ** exponent
    return out
