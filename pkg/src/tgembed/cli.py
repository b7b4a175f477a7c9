"""``tgembed`` command line: train, embed, reconstruct, linkpred.

Every command writes a run manifest (resolved configuration, input paths
and their content hashes, output paths) into the header of each artifact it
produces, so any output can be traced back to, and regenerated from, the
exact run that made it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, evalkit, model, train
from .tgraph import GraphParseError, GraphValidationError, TemporalGraph, load_edge_list, split_by_time

log = logging.getLogger("tgembed")

_INT_FIELDS = ("d", "k", "walk_length", "negatives", "batch", "epochs", "seed", "layers", "threads")
_FLOAT_FIELDS = ("p", "q", "margin", "lr", "tau", "tau_t")
_CONFIG_FIELDS = _INT_FIELDS + _FLOAT_FIELDS + ("ablation",)


class UsageError(Exception):
    """Bad flags or configuration; exit status 2."""


def content_hash(path: str | Path) -> str:
    """Git-style blob hash: sha1 over ``b"blob <size>\\0" + content``."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def manifest_lines(manifest: dict) -> list[str]:
    return ["# manifest " + json.dumps(manifest, sort_keys=True)]


def read_config_file(path: str) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CONFIG_FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value):
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    try:
        if key in _INT_FIELDS:
            return int(value)
        if key in _FLOAT_FIELDS:
            return float(value)
    except ValueError:
        raise UsageError(f"invalid value for {key}: {value!r}") from None
    return str(value)


def resolve_config(args: argparse.Namespace) -> train.TrainConfig:
    """Defaults, then the config file, then explicitly given flags."""
    values = read_config_file(args.config) if args.config else {}
    for key in _CONFIG_FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    cfg = train.TrainConfig(**{k: _convert(k, v) for k, v in values.items()})
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _load_graph(path: str, directed: bool, tau: float | None = None) -> TemporalGraph:
    with open(path, "rb") as fh:
        g = load_edge_list(fh, tau=tau, directed=directed)
    log.info("loaded %s: %s", path, g.summary())
    return g


def _training_graph(g: TemporalGraph, holdout: float):
    if holdout <= 0:
        return g, []
    return split_by_time(g, holdout)


def write_embeddings(path: str, labels, emb: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"{emb.shape[0]} {emb.shape[1]}\n")
        for label, row in zip(labels, emb):
            fh.write(label + " " + " ".join(f"{v:.17g}" for v in row) + "\n")


def read_embeddings(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise ValueError(f"{path}: header must be '<n_nodes> <d>'")
        n, d = int(head[0]), int(head[1])
        labels, rows = [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
            labels.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if len(rows) != n:
        raise ValueError(f"{path}: header promises {n} rows, found {len(rows)}")
    return labels, np.array(rows, dtype=np.float64).reshape(n, d)


def align_embeddings(labels: list[str], emb: np.ndarray, g: TemporalGraph) -> np.ndarray:
    """Reorder embedding rows to the graph's dense node ids."""
    index = {lab: i for i, lab in enumerate(labels)}
    missing = [lab for lab in g.labels if lab not in index]
    if missing:
        raise ValueError(f"{len(missing)} graph nodes have no embedding (e.g. {missing[0]!r})")
    return emb[[index[lab] for lab in g.labels]]


# -- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if not 0 <= args.holdout_fraction < 1:
        raise UsageError("--holdout-fraction must lie in [0, 1)")
    g = _load_graph(args.edges, args.directed)
    tr, held = _training_graph(g, args.holdout_fraction)
    checkpoint = args.checkpoint
    log_path = args.log or checkpoint + ".log"
    manifest = {
        "command": "train",
        "version": __version__,
        "config": cfg.as_dict(),
        "inputs": {"edges": args.edges, "edges_hash": content_hash(args.edges)},
        "directed": args.directed,
        "holdout_fraction": args.holdout_fraction,
        "train_edges": tr.n_edges,
        "time_rescale": {"t_origin": int(tr.t_min), "tau": cfg.resolved_tau(tr),
                         "tau_t": cfg.resolved_tau_t(tr)},
        "checkpoint": checkpoint,
        "log": log_path,
    }
    config_line = "# config " + " ".join(f"{k}={v}" for k, v in cfg.as_dict().items())
    with open(log_path, "w") as lf:
        for line in manifest_lines(manifest) + [config_line, "# graph " + tr.summary()]:
            lf.write(line + "\n")
            print(line)

        def on_epoch(entry):
            line = train.format_log_line(entry)
            lf.write(line + "\n")
            lf.flush()
            print(line, flush=True)

        params, _ = train.fit(tr, cfg, on_epoch=on_epoch)
    with open(checkpoint, "wb") as fh:
        model.save_checkpoint(params, fh, meta={"manifest": manifest})
    Path(checkpoint + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_embed(args) -> int:
    with open(args.checkpoint, "rb") as fh:
        params, meta = model.load_checkpoint(fh)
    train_manifest = meta.get("manifest", {})
    cfg_dict = dict(train_manifest.get("config", {}))
    if not cfg_dict:
        raise ValueError("checkpoint carries no training configuration")
    if args.threads is not None:
        cfg_dict["threads"] = args.threads
    cfg = train.TrainConfig(**cfg_dict)
    holdout = train_manifest.get("holdout_fraction", 0.0) if args.holdout_fraction is None \
        else args.holdout_fraction
    directed = train_manifest.get("directed", False)
    g = _load_graph(args.edges, directed)
    tr, _ = _training_graph(g, holdout)
    if params.n_nodes != tr.n_nodes:
        raise ValueError(f"checkpoint has {params.n_nodes} nodes, graph has {tr.n_nodes}")
    edges_hash = content_hash(args.edges)
    if train_manifest.get("inputs", {}).get("edges_hash") not in (None, edges_hash):
        log.warning("edge file differs from the one the checkpoint was trained on")
    emb = train.materialize_embeddings(tr, params, cfg)
    write_embeddings(args.output, tr.labels, emb)
    manifest = {
        "command": "embed",
        "version": __version__,
        "config": cfg.as_dict(),
        "inputs": {"edges": args.edges, "edges_hash": edges_hash,
                   "checkpoint": args.checkpoint, "checkpoint_hash": content_hash(args.checkpoint)},
        "holdout_fraction": holdout,
        "output": args.output,
        "train_manifest": train_manifest,
    }
    Path(args.output + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(manifest_lines(manifest)[0])
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings to {args.output}")
    return 0


def _emit_report(report: evalkit.EvalReport, manifest: dict, path: str | None) -> None:
    text = "\n".join(manifest_lines(manifest) + [report.table(), ""] + report.lines()) + "\n"
    sys.stdout.write(text)
    if path:
        Path(path).write_text(text)


def _eval_inputs(args):
    g = _load_graph(args.edges, args.directed)
    labels, emb = read_embeddings(args.embeddings)
    manifest = {
        "command": args.command,
        "version": __version__,
        "inputs": {"edges": args.edges, "edges_hash": content_hash(args.edges),
                   "embeddings": args.embeddings, "embeddings_hash": content_hash(args.embeddings)},
        "directed": args.directed,
        "seed": args.seed,
        "report": args.report,
    }
    return g, labels, emb, manifest


def cmd_reconstruct(args) -> int:
    g, labels, emb, manifest = _eval_inputs(args)
    g, _ = _training_graph(g, args.holdout_fraction)
    emb = align_embeddings(labels, emb, g)
    P_values = _int_list(args.P)
    report = evalkit.reconstruction_precision(emb, g, P_values, sample_nodes=args.sample_nodes,
                                              repeats=args.repeats, seed=args.seed, threads=args.threads)
    manifest.update({"holdout_fraction": args.holdout_fraction, "P_values": P_values,
                     "sample_nodes": args.sample_nodes, "repeats": args.repeats})
    _emit_report(report, manifest, args.report)
    return 0


def cmd_linkpred(args) -> int:
    g, labels, emb, manifest = _eval_inputs(args)
    if not 0 < args.holdout_fraction < 1:
        raise UsageError("--holdout-fraction must lie in (0, 1)")
    tr, held = split_by_time(g, args.holdout_fraction)
    emb = align_embeddings(labels, emb, tr)
    ops = list(evalkit.EdgeOperator) if args.operator == "all" else [evalkit.EdgeOperator.parse(args.operator)]
    report = evalkit.link_prediction_eval(emb, tr, held, ops, train_ratio=args.train_ratio,
                                          repeats=args.repeats, seed=args.seed, threads=args.threads)
    manifest.update({"holdout_fraction": args.holdout_fraction, "operator": args.operator,
                     "train_ratio": args.train_ratio, "repeats": args.repeats})
    _emit_report(report, manifest, args.report)
    return 0


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise UsageError("P values must be positive integers")
    return values


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    tp = sub.add_parser("train", help="fit a model on an edge list")
    tp.add_argument("--edges", required=True, help="edge list: src dst timestamp [weight]")
    tp.add_argument("--config", help="key=value file of training settings; flags override it")
    tp.add_argument("--checkpoint", default="model.ckpt", help="checkpoint output path")
    tp.add_argument("--log", help="training log path (default: <checkpoint>.log)")
    tp.add_argument("--holdout-fraction", type=float, default=0.0,
                    help="train only on the oldest 1-F of the edges (for link prediction)")
    tp.add_argument("--directed", action="store_true")
    tp.add_argument("--d", type=int)
    tp.add_argument("--k", type=int, help="walks per aggregation")
    tp.add_argument("--walk-length", dest="walk_length", type=int)
    tp.add_argument("--p", type=float, help="return parameter")
    tp.add_argument("--q", type=float, help="in-out parameter")
    tp.add_argument("--margin", type=float)
    tp.add_argument("--negatives", type=int, help="negatives per side of each edge")
    tp.add_argument("--lr", type=float)
    tp.add_argument("--batch", type=int)
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--seed", type=int)
    tp.add_argument("--tau", type=float, help="walk time-decay scale")
    tp.add_argument("--tau-t", dest="tau_t", type=float, help="attention time scale")
    tp.add_argument("--ablation", choices=model.ABLATIONS)
    tp.add_argument("--layers", type=int)
    tp.add_argument("--threads", type=int)
    tp.set_defaults(func=cmd_train)

    ep = sub.add_parser("embed", help="materialise final node embeddings")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--edges", required=True)
    ep.add_argument("--output", required=True)
    ep.add_argument("--holdout-fraction", type=float, help="default: the value used in training")
    ep.add_argument("--threads", type=int)
    ep.set_defaults(func=cmd_embed)

    for name, func, helptext in (("reconstruct", cmd_reconstruct, "precision@P of pair ranking"),
                                 ("linkpred", cmd_linkpred, "future-link classification")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--embeddings", required=True)
        p.add_argument("--edges", required=True)
        p.add_argument("--directed", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--repeats", type=int, default=10 if name == "linkpred" else 1)
        p.add_argument("--report", help="also write the report to this file")
        p.add_argument("--threads", type=int, default=1)
        if name == "reconstruct":
            p.add_argument("--P", default="100,1000,10000", help="comma-separated P values")
            p.add_argument("--sample-nodes", type=int, help="rank pairs among a node sample")
            p.add_argument("--holdout-fraction", type=float, default=0.0)
        else:
            p.add_argument("--holdout-fraction", type=float, default=0.2)
            p.add_argument("--operator", default="all",
                           choices=[o.value for o in evalkit.EdgeOperator] + ["all"])
            p.add_argument("--train-ratio", type=float, default=0.5)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "repeats", 1) is not None and getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be >= 1")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tgembed {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, GraphParseError, GraphValidationError, FloatingPointError) as exc:
        print(f"tgembed {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
