"""Historical-neighbourhood aggregation: forward pass and exact gradients.

One aggregation turns a target node ``x`` and ``k`` walks sampled for it into
a unit vector ``z_x``:

1. node-level attention over each walk's positions weights the embeddings,
   which a stacked LSTM reads oldest-first; batch norm + ReLU give ``h_r``;
2. walk-level attention weights the ``h_r``, a second stacked LSTM reads them
   in a random order and batch norm gives ``H``;
3. ``z_x = W [H; e_x]`` scaled to unit length.

Everything is batched over many aggregations at once, but no aggregation
sees another: in train mode the first batch norm takes its statistics over
the ``k`` walks of one aggregation, and the second site (one vector per
aggregation) always normalises with its running statistics.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .twalk import TemporalWalk, WalkBatch

ABLATIONS = ("none", "NA", "RW", "SL")


@dataclass
class ModelParams:
    """Named parameter tensors.

    Trainable: ``E`` (n x d), ``lstm1.<layer>.{Wx,Wh,b}``,
    ``lstm2.<layer>.{Wx,Wh,b}``, ``bn{1,2}.{gamma,beta}``, ``W`` (d x 2d).
    Running batch-norm statistics ``bn{1,2}.{mean,var}`` are state, not
    trained.
    """

    tensors: dict[str, np.ndarray]
    d: int
    layers: int

    @classmethod
    def init(cls, n_nodes: int, d: int, layers: int = 2, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d)
        t = {"E": rng.uniform(-bound, bound, (n_nodes, d))}
        for site in ("lstm1", "lstm2"):
            for li, layer in enumerate(nn.init_lstm(rng, d, d, layers)):
                for k, v in layer.items():
                    t[f"{site}.{li}.{k}"] = v
        for site in ("bn1", "bn2"):
            t[f"{site}.gamma"] = np.ones(d)
            t[f"{site}.beta"] = np.zeros(d)
            t[f"{site}.mean"] = np.zeros(d)
            t[f"{site}.var"] = np.ones(d)
        t["W"] = rng.uniform(-1 / np.sqrt(2 * d), 1 / np.sqrt(2 * d), (d, 2 * d))
        return cls(t, d, layers)

    @property
    def n_nodes(self) -> int:
        return self.tensors["E"].shape[0]

    def lstm(self, site: str) -> list[dict]:
        return [{k: self.tensors[f"{site}.{li}.{k}"] for k in ("Wx", "Wh", "b")}
                for li in range(self.layers)]

    def bn(self, site: str):
        t = self.tensors
        return t[f"{site}.gamma"], t[f"{site}.beta"], t[f"{site}.mean"], t[f"{site}.var"]

    def trainable_names(self) -> list[str]:
        return [k for k in self.tensors if not (k.endswith(".mean") or k.endswith(".var"))]

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, self.d, self.layers)

    def check_finite(self) -> None:
        for k, v in self.tensors.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite values in {k}")


# -- attention ---------------------------------------------------------------


def time_scales(walk: TemporalWalk, t_origin: int, tau_t: float) -> np.ndarray:
    """Per-position ``T~ = (tsum - visits * t_origin) / tau_t + 1``.

    Positions never entered by an edge (the start node, unless revisited)
    get exactly 1.
    """
    tt = (np.asarray(walk.tsum, dtype=np.float64)
          - np.asarray(walk.visits, dtype=np.float64) * t_origin) / tau_t + 1.0
    if np.any(tt <= 0):
        raise ValueError("walk timestamps precede the time origin")
    return tt


def node_attention(e_x: np.ndarray, walk: TemporalWalk, E: np.ndarray, tau_t: float,
                   t_origin: int = 0) -> np.ndarray:
    """Attention over the positions of one walk.

    A larger rescaled time sum (more recent or more frequent contact)
    softens that position's distance penalty.
    """
    if len(walk.nodes) == 0:
        raise ValueError("empty walk")
    tt = time_scales(walk, t_origin, tau_t)
    dist = ((E[list(walk.nodes)] - e_x) ** 2).sum(axis=1)
    return nn.masked_softmax(-dist / tt, np.ones(len(tt), dtype=bool))


def walk_coefficients(walks: Sequence[TemporalWalk], tau_t: float, t_origin: int = 0) -> np.ndarray:
    """Per-walk mean reciprocal rescaled time sum over positions."""
    return np.array([np.mean(1.0 / time_scales(w, t_origin, tau_t)) for w in walks])


def walk_attention(e_x: np.ndarray, walk_reps: np.ndarray, walks: Sequence[TemporalWalk], tau_t: float,
                   t_origin: int = 0) -> np.ndarray:
    walk_reps = np.atleast_2d(walk_reps)
    if len(walk_reps) != len(walks) or len(walks) == 0:
        raise ValueError("walk representations and walks must align")
    coef = walk_coefficients(walks, tau_t, t_origin)
    dist = ((walk_reps - e_x) ** 2).sum(axis=1)
    return nn.masked_softmax(-coef * dist, np.ones(len(coef), dtype=bool))


def encode_sequence(inputs: Sequence[np.ndarray], lstm_params: list[dict]) -> np.ndarray:
    """Final top-layer hidden state of a stacked LSTM over ``inputs``."""
    if len(inputs) == 0:
        raise ValueError("empty input sequence")
    x = np.asarray(inputs, dtype=np.float64)[None]
    out, _ = nn.lstm_forward(x, np.array([len(inputs)]), lstm_params)
    return out[0]


def batch_norm(x: np.ndarray, params: ModelParams, site: str, mode: str) -> np.ndarray:
    gamma, beta, rm, rv = params.bn(site)
    y, _ = nn.batchnorm_forward(x, gamma, beta, rm, rv, mode == "train")
    return y


# -- batched aggregation -----------------------------------------------------


@dataclass
class AggregationInput:
    """``B`` aggregations with ``k`` walks each; walk ``i`` belongs to ``i // k``."""

    targets: np.ndarray   # (B,)
    nodes: np.ndarray     # (B*k, L) walk positions, -1 padded
    lengths: np.ndarray   # (B*k,)
    ttilde: np.ndarray    # (B*k, L) rescaled time sums, 1 at pads
    perms: np.ndarray     # (B, k) walk order fed to the second LSTM

    @property
    def k(self) -> int:
        return self.perms.shape[1]

    @classmethod
    def build(cls, targets, walks: WalkBatch, k: int, t_origin: int, tau_t: float,
              rng: np.random.Generator) -> "AggregationInput":
        targets = np.asarray(targets, dtype=np.int64)
        if len(walks) != len(targets) * k:
            raise ValueError("walk count must equal len(targets) * k")
        perms = np.argsort(rng.random((len(targets), k)), axis=1)
        return cls(targets, walks.nodes, walks.lengths, walks.rescaled_time_sums(t_origin, tau_t), perms)


@dataclass
class AggregationTrace:
    inp: AggregationInput
    mode: str
    ablation: str
    alpha: np.ndarray
    emb_walk: np.ndarray
    lstm1: nn.LSTMCache
    bn1: nn.BNCache | None
    pre_relu: np.ndarray
    h: np.ndarray
    coef: np.ndarray
    beta: np.ndarray
    lstm2: nn.LSTMCache | None
    h_raw: np.ndarray
    bn2: nn.BNCache
    H: np.ndarray
    zc: np.ndarray
    z: np.ndarray
    param_shapes: dict = field(default_factory=dict)


def _bn_mode(mode: str, n: int) -> bool:
    # a batch of one cannot supply statistics; fall back to running estimates
    return mode == "train" and n >= 2


def _bn_stats_batch(site: str, k: int) -> int:
    """Batch size each site sees within one aggregation."""
    return k if site == "bn1" else 1


def aggregate_batch(inp: AggregationInput, params: ModelParams, mode: str = "train",
                    ablation: str = "none") -> tuple[np.ndarray, AggregationTrace]:
    """Aggregated unit embeddings ``(B, d)`` plus the trace for :func:`backward`."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be train or infer, got {mode!r}")
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}")
    E = params.tensors["E"]
    B, k = inp.perms.shape
    N, L = inp.nodes.shape
    mask = np.arange(L)[None, :] < inp.lengths[:, None]
    agg = np.repeat(np.arange(B), k)
    e_x = E[inp.targets]
    emb_walk = np.where(mask[..., None], E[np.where(mask, inp.nodes, 0)], 0.0)

    if ablation == "NA":
        alpha = mask / inp.lengths[:, None]
    else:
        dist = ((emb_walk - e_x[agg][:, None, :]) ** 2).sum(axis=2)
        alpha = nn.masked_softmax(-dist / inp.ttilde, mask)

    # oldest node first: reversing the padded row puts pads in front
    seq = (alpha[..., None] * emb_walk)[:, ::-1]
    h1, c1 = nn.lstm_forward(np.ascontiguousarray(seq), inp.lengths, params.lstm("lstm1"))
    g1, b1, m1, v1 = params.bn("bn1")
    pre_relu, bc1 = nn.batchnorm_forward(h1.reshape(B, k, -1), g1, b1, m1, v1,
                                         _bn_mode(mode, _bn_stats_batch("bn1", k)))
    pre_relu = pre_relu.reshape(N, -1)
    h = np.maximum(pre_relu, 0.0)

    coef = np.where(mask, 1.0 / inp.ttilde, 0.0).sum(axis=1) / inp.lengths
    hk = h.reshape(B, k, -1)
    if ablation == "NA":
        beta = np.full((B, k), 1.0 / k)
    else:
        dist2 = ((hk - e_x[:, None, :]) ** 2).sum(axis=2)
        beta = nn.masked_softmax(-coef.reshape(B, k) * dist2, np.ones((B, k), dtype=bool))

    c2 = None
    if ablation == "SL":
        h_raw = hk.mean(axis=1)
    else:
        weighted = beta[..., None] * hk
        seq2 = np.take_along_axis(weighted, inp.perms[..., None], axis=1)
        h_raw, c2 = nn.lstm_forward(seq2, np.full(B, k), params.lstm("lstm2"))
    g2, b2, m2, v2 = params.bn("bn2")
    H, bc2 = nn.batchnorm_forward(h_raw, g2, b2, m2, v2, _bn_mode(mode, _bn_stats_batch("bn2", k)))

    zc = np.concatenate([H, e_x], axis=1) @ params.tensors["W"].T
    z = zc / np.linalg.norm(zc, axis=1, keepdims=True)
    trace = AggregationTrace(inp, mode, ablation, alpha, emb_walk, c1, bc1, pre_relu, h, coef, beta,
                             c2, h_raw, bc2, H, zc, z,
                             {n: v.shape for n, v in params.tensors.items()})
    return z, trace


def aggregate(x: int, walks: Sequence[TemporalWalk], params: ModelParams, t_origin: int, tau_t: float,
              rng: np.random.Generator, mode: str = "infer", ablation: str = "none"):
    """Single-target convenience wrapper around :func:`aggregate_batch`."""
    batch = WalkBatch.from_walks(walks)
    inp = AggregationInput.build([x], batch, len(walks), t_origin, tau_t, rng)
    z, trace = aggregate_batch(inp, params, mode, ablation)
    return z[0], trace


def commit_running_stats(params: ModelParams, trace: AggregationTrace) -> None:
    """Fold a train-mode trace's batch statistics into the running estimates."""
    k = trace.inp.k
    for site, cache in (("bn1", trace.bn1), ("bn2", trace.bn2)):
        if cache is None or not cache.train:
            continue
        _, _, rm, rv = params.bn(site)
        params.tensors[f"{site}.mean"], params.tensors[f"{site}.var"] = \
            nn.updated_running_stats(cache, rm, rv, _bn_stats_batch(site, k))


@dataclass
class Gradients:
    """Dense gradients for every trainable tensor except ``E``.

    The embedding gradient is sparse: ``E_rows`` (unique, sorted) and the
    matching ``E_vals``.
    """

    dense: dict[str, np.ndarray]
    E_rows: np.ndarray
    E_vals: np.ndarray

    def dense_E(self, n_nodes: int) -> np.ndarray:
        out = np.zeros((n_nodes, self.E_vals.shape[1]))
        out[self.E_rows] = self.E_vals
        return out


def backward(trace: AggregationTrace, dz: np.ndarray, params: ModelParams) -> Gradients:
    """Exact reverse-mode gradients of ``sum(dz * z)`` for a matching forward."""
    shapes = {n: v.shape for n, v in params.tensors.items()}
    if shapes != trace.param_shapes:
        raise ValueError("trace was produced with differently shaped parameters")
    dz = np.asarray(dz, dtype=np.float64)
    if dz.shape != trace.z.shape:
        raise ValueError(f"upstream gradient shape {dz.shape} != {trace.z.shape}")
    inp, t = trace.inp, trace
    E, Wt = params.tensors["E"], params.tensors["W"]
    d = params.d
    B, k = inp.perms.shape
    N, L = inp.nodes.shape
    mask = np.arange(L)[None, :] < inp.lengths[:, None]
    agg = np.repeat(np.arange(B), k)
    e_x = E[inp.targets]
    g: dict[str, np.ndarray] = {}

    # unit normalisation and projection
    norm = np.linalg.norm(t.zc, axis=1, keepdims=True)
    dzc = (dz - t.z * (t.z * dz).sum(axis=1, keepdims=True)) / norm
    g["W"] = dzc.T @ np.concatenate([t.H, e_x], axis=1)
    dcat = dzc @ Wt
    dH, de_x = dcat[:, :d], dcat[:, d:].copy()

    dh_raw, g["bn2.gamma"], g["bn2.beta"] = nn.batchnorm_backward(dH, t.bn2, params.tensors["bn2.gamma"])

    hk = t.h.reshape(B, k, d)
    if t.ablation == "SL":
        dhk = np.repeat(dh_raw[:, None, :] / k, k, axis=1)
        for li in range(params.layers):
            for name in ("Wx", "Wh", "b"):
                g[f"lstm2.{li}.{name}"] = np.zeros_like(params.tensors[f"lstm2.{li}.{name}"])
    else:
        dseq2, lg2 = nn.lstm_backward(dh_raw, t.lstm2, params.lstm("lstm2"))
        for li, lg in enumerate(lg2):
            for name, v in lg.items():
                g[f"lstm2.{li}.{name}"] = v
        dweighted = np.zeros_like(dseq2)
        np.put_along_axis(dweighted, inp.perms[..., None], dseq2, axis=1)
        dhk = t.beta[..., None] * dweighted
        if t.ablation != "NA":
            dbeta = (dweighted * hk).sum(axis=2)
            dlogit = nn.softmax_backward(dbeta, t.beta)
            ddist = -t.coef.reshape(B, k) * dlogit
            diff = hk - e_x[:, None, :]
            dhk = dhk + 2.0 * ddist[..., None] * diff
            de_x -= 2.0 * (ddist[..., None] * diff).sum(axis=1)
    dh = dhk.reshape(N, d)

    dpre = dh * (t.pre_relu > 0)
    dh1, g["bn1.gamma"], g["bn1.beta"] = nn.batchnorm_backward(dpre.reshape(B, k, d), t.bn1,
                                                               params.tensors["bn1.gamma"])
    dh1 = dh1.reshape(N, d)
    dseq, lg1 = nn.lstm_backward(dh1, t.lstm1, params.lstm("lstm1"))
    for li, lg in enumerate(lg1):
        for name, v in lg.items():
            g[f"lstm1.{li}.{name}"] = v
    dweighted_walk = dseq[:, ::-1]
    demb = t.alpha[..., None] * dweighted_walk
    if t.ablation != "NA":
        dalpha = (dweighted_walk * t.emb_walk).sum(axis=2)
        dlogit = nn.softmax_backward(dalpha, t.alpha)
        ddist = np.where(mask, -dlogit / inp.ttilde, 0.0)
        diff = t.emb_walk - e_x[agg][:, None, :]
        demb = demb + 2.0 * ddist[..., None] * diff
        np.add.at(de_x, agg, -2.0 * (ddist[..., None] * diff).sum(axis=1))

    rows = np.concatenate([inp.targets, inp.nodes[mask]])
    vals = np.concatenate([de_x, demb[mask]])
    uniq, inv = np.unique(rows, return_inverse=True)
    acc = np.zeros((len(uniq), d))
    np.add.at(acc, inv, vals)
    return Gradients(g, uniq, acc)


def apply_gradients(params: ModelParams, grads: Gradients, lr: float) -> None:
    for name, v in grads.dense.items():
        params.tensors[name] -= lr * v
    params.tensors["E"][grads.E_rows] -= lr * grads.E_vals


# -- checkpoint I/O ------------------------------------------------------------

_MAGIC = b"TGEMBCK1"


def save_checkpoint(params: ModelParams, fh, meta: dict | None = None) -> None:
    """Write a self-describing binary blob.

    Layout: magic, little-endian u64 header length, UTF-8 JSON header
    (format version, d, layers, tensor names/shapes, free-form metadata), then
    each tensor's data as little-endian float64 in header order.
    """
    names = sorted(params.tensors)
    header = {
        "version": 1,
        "d": params.d,
        "layers": params.layers,
        "dtype": "<f8",
        "tensors": [[n, list(params.tensors[n].shape)] for n in names],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    fh.write(_MAGIC)
    fh.write(struct.pack("<Q", len(hb)))
    fh.write(hb)
    for n in names:
        fh.write(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes())


def load_checkpoint(fh) -> tuple[ModelParams, dict]:
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("not a checkpoint file")
    (hlen,) = struct.unpack("<Q", fh.read(8))
    header = json.loads(fh.read(hlen).decode("utf-8"))
    if header.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        buf = fh.read(8 * count)
        if len(buf) != 8 * count:
            raise ValueError(f"truncated checkpoint at tensor {name}")
        tensors[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return ModelParams(tensors, header["d"], header["layers"]), header["meta"]


def checkpoint_bytes(params: ModelParams, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    save_checkpoint(params, buf, meta)
    return buf.getvalue()
