"""Compare the compiled kernels with the pure-Python fallback.

Times temporal walks, uniform fallback walks and the LSTM cell kernels on
each available backend, checks the outputs agree, and prints a speedup table.

    python benchmarks/bench_backends.py [--walks N] [--repeats R]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from tgembed import _backend, nn, synth, twalk


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(n_walks: int):
    g = synth.random_temporal_graph(2000, 40_000, t_span=100_000, seed=0, weighted=True)
    rng = np.random.default_rng(1)
    starts = rng.integers(0, g.n_nodes, n_walks)
    t_refs = rng.integers(50_000, 100_001, n_walks)

    def temporal(name):
        return twalk.temporal_walk_batch(g, starts, t_refs, 10, np.random.default_rng(2),
                                         p=0.5, q=2.0, tau=5000.0, backend=name)

    def uniform(name):
        return twalk.uniform_walk_batch(g, starts, 10, np.random.default_rng(3), backend=name)

    d, rows = 32, 12_000
    pre = rng.normal(size=(rows, 4 * d))
    c_prev = rng.normal(size=(rows, d))
    dh = rng.normal(size=(rows, d))

    def cell_fwd(name):
        g_ = pre.copy()
        c, tc, h = np.empty((rows, d)), np.empty((rows, d)), np.empty((rows, d))
        _backend.get(name).cell_forward(g_, c_prev, c, tc, h)
        return h

    acts = pre.copy()
    c_out, tanh_c = np.empty((rows, d)), np.empty((rows, d))
    _backend.get("python").cell_forward(acts, c_prev, c_out, tanh_c, np.empty((rows, d)))

    def cell_bwd(name):
        dc = np.full((rows, d), 0.1)
        dg = np.empty((rows, 4 * d))
        _backend.get(name).cell_backward(dh, dc, acts, tanh_c, c_prev, dg)
        return dg

    def lstm(name):
        x = np.random.default_rng(4).normal(size=(4000, 10, d))
        lengths = np.random.default_rng(5).integers(1, 11, 4000)
        params = nn.init_lstm(np.random.default_rng(6), d, d, 2)
        out, cache = nn.lstm_forward(x, lengths, params, backend=name)
        dx, _ = nn.lstm_backward(np.ones_like(out), cache, params, backend=name)
        return dx

    return {
        f"temporal walks ({n_walks} x 10 steps)": temporal,
        f"uniform walks ({n_walks} x 10 steps)": uniform,
        f"cell forward ({rows} x d={d})": cell_fwd,
        f"cell backward ({rows} x d={d})": cell_bwd,
        "2-layer LSTM fwd+bwd (4000 seqs, T=10)": lstm,
    }


def same(a, b) -> bool:
    if isinstance(a, twalk.WalkBatch):
        return all(np.array_equal(x, y) for x, y in ((a.nodes, b.nodes), (a.times, b.times),
                                                       (a.steps, b.steps)))
    return np.allclose(a, b, rtol=1e-12, atol=1e-14)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--walks", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    names = sorted(_backend.AVAILABLE)
    if "cython" not in names:
        print("compiled kernels not built; only the python backend is available")
    print(f"{'case':<42}" + "".join(f"{n:>12}" for n in names) + (f"{'speedup':>10}" if len(names) > 1 else ""))
    for label, fn in cases(args.walks).items():
        outs = {n: fn(n) for n in names}
        if len(names) > 1 and not same(outs["python"], outs["cython"]):
            raise SystemExit(f"backends disagree on {label}")
        secs = {n: best_of(lambda n=n: fn(n), args.repeats) for n in names}
        row = f"{label:<42}" + "".join(f"{secs[n] * 1e3:>10.1f}ms" for n in names)
        if len(names) > 1:
            row += f"{secs['python'] / secs['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
