"""Command-line entry point: ``mhqa <subcommand> ...``.

Subcommands: gen-data, build-graph, stats, train, eval, gradcheck, ablate.
Every source of randomness is driven by ``--seed``.  Plain-text results go to
stdout; structured JSON log lines go to stderr (level from ``MHQA_LOG_LEVEL``).
Unknown flags exit 2 with usage text; runtime failures exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import statistics
import sys
from pathlib import Path

from .data import DatasetError, parse_dataset, write_dataset
from .graph import ALL_EDGES, EdgeType, GraphConfig, build_graph, distance_histogram
from .model import KINDS
from .synth import GenConfig, generate
from .training import MODEL_ALIASES, TrainConfig, evaluate, load_model, predictions, save_model, train

log = logging.getLogger("mhqa")

GRAPH_MODELS = ("coref-grn", "mhqa-gcn", "mhqa-grn")

# Table-3 rows: label -> edge types kept
ABLATION_ROWS = (
    ("all", "same,coref,window"),
    ("w/o same", "coref,window"),
    ("w/o coref", "same,window"),
    ("w/o window", "same,coref"),
    ("only same", "same"),
    ("only coref", "coref"),
    ("only window", "window"),
)


class UsageError(Exception):
    pass


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return None if value.lower() in ("", "none") else value


def build_train_config(args) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    defaults = TrainConfig()
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    if getattr(args, "config", None):
        for key, raw in read_config_file(args.config).items():
            if key not in fields:
                raise UsageError(f"{args.config}: unknown key {key!r}")
            try:
                values[key] = _coerce(raw, getattr(defaults, key))
            except ValueError as exc:
                raise UsageError(f"{args.config}: {key}: {exc}") from None
    for key in fields:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    model = MODEL_ALIASES.get(str(values.get("model", defaults.model)).lower())
    if model is None:
        raise UsageError(f"unknown model {values['model']!r}; expected one of {', '.join(KINDS)}")
    if getattr(args, "steps", None) is not None and model not in GRAPH_MODELS:
        raise UsageError(f"--steps applies only to graph models ({', '.join(GRAPH_MODELS)})")
    return TrainConfig(**values)


def graph_config(args) -> GraphConfig:
    d = GraphConfig()
    return GraphConfig(args.tau_long or d.tau_long, args.tau_window or d.tau_window,
                       args.neighbor_cap or d.neighbor_cap)


def _edges(spec: str) -> frozenset:
    try:
        return EdgeType.parse(spec)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad edge list {spec!r}; use names from same,coref,window") from None


def _emit(record: dict) -> None:
    log.info(json.dumps(record, default=str))


def _fmt_dist(d) -> str:
    return "inf" if d == math.inf else str(int(d))


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = GenConfig(seed=args.seed, num_instances=args.n, hops=args.hops, candidates=args.candidates,
                    orphans=args.orphans, min_gap=args.min_gap, distractor_mode=args.distractors)
    ds = generate(cfg, args.split)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} instances to {args.out}")
    _emit({"event": "gen-data", "config": dataclasses.asdict(cfg), "out": str(args.out)})
    return 0


def cmd_build_graph(args) -> int:
    ds = parse_dataset(args.data)
    cfg = graph_config(args)
    counts = {t.value: 0 for t in EdgeType}
    nodes = 0
    with open(args.out, "w") as fh:
        for inst in ds:
            g = build_graph(inst, cfg, args.edges)
            nodes += g.num_nodes
            for t in EdgeType:
                counts[t.value] += g.count(t)
            fh.write(json.dumps({
                "id": inst.id,
                "nodes": [{"index": i, "start": m.span_start, "end": m.span_end, "chain": m.chain_id,
                           "kind": m.kind, "text": inst.mention_text(i)} for i, m in enumerate(inst.mentions)],
                "edges": [[u, v, t.value] for u, v, t in g.edges],
                "adjacency": g.adjacency,
            }) + "\n")
    print(f"{len(ds)} graphs, {nodes} nodes; directed edges: "
          + ", ".join(f"{k} {v}" for k, v in counts.items()))
    _emit({"event": "build-graph", "instances": len(ds), "nodes": nodes, "edges": counts})
    return 0


def cmd_stats(args) -> int:
    ds = parse_dataset(args.data)
    cfg = graph_config(args)
    counts = {t.value: 0 for t in EdgeType}
    for inst in ds:
        g = build_graph(inst, cfg, args.edges, cap=False)
        for t in EdgeType:
            counts[t.value] += g.count(t)
    hist = distance_histogram(ds, cfg, args.edges)
    kinds = ",".join(sorted(t.value for t in args.edges)) or "none"
    print(f"edges: {kinds}")
    print("directed edge counts: " + ", ".join(f"{k} {v}" for k, v in counts.items()))
    print("question-answer distance histogram:")
    for d, frac in hist.items():
        print(f"  {_fmt_dist(d):>4}  {frac:.4f}")
    _emit({"event": "stats", "edges": kinds, "instances": len(ds), "edge_counts": counts,
           "histogram": {_fmt_dist(d): f for d, f in hist.items()}})
    return 0


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    train_set = parse_dataset(args.train, "train")
    dev_set = parse_dataset(args.dev, "dev") if args.dev else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(cfg, checkpoint_dir=str(out))
    reader, report = train(train_set, dev_set, cfg)
    if report.best_checkpoint is None:
        save_model(out / "best.npz", reader, cfg, {"epoch": report.best_epoch})
        report.best_checkpoint = str(out / "best.npz")
    (out / "report.json").write_text(report.to_json() + "\n")
    print(f"trained {cfg.model}: {report.used} instances used, {report.skipped} skipped, "
          f"best dev accuracy {report.best_dev_accuracy:.4f} at epoch {report.best_epoch}")
    print(f"checkpoint: {report.best_checkpoint}")
    _emit({"event": "train", "report": json.loads(report.to_json())})
    return 0


def cmd_eval(args) -> int:
    reader, cfg, _ = load_model(args.checkpoint)
    ds = parse_dataset(args.data, "test")
    acc = evaluate(reader, ds)
    print(f"accuracy {acc:.4f} on {len(ds)} instances ({cfg.model})")
    if args.predictions:
        with open(args.predictions, "w") as fh:
            for rec in predictions(reader, ds):
                fh.write(json.dumps(rec) + "\n")
    _emit({"event": "eval", "accuracy": acc, "instances": len(ds), "model": cfg.model})
    return 0


def cmd_gradcheck(args) -> int:
    from .checks import TOLERANCE, gradient_suite

    failed = 0
    for name, err in gradient_suite(args.seed, args.instances):
        ok = err < TOLERANCE
        failed += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {name:<28} max rel err {err:.3e}")
        _emit({"event": "gradcheck", "check": name, "error": err, "ok": ok})
    print(f"{failed} check(s) at or above {TOLERANCE:g}" if failed else f"all checks below {TOLERANCE:g}")
    return 1 if failed else 0


def ablation(train_set, dev_set, base: TrainConfig, seeds, rows=ABLATION_ROWS) -> list[dict]:
    """Train one model per (edge subset, seed); one result row per subset."""
    results = []
    for label, edges in rows:
        accs = []
        for seed in seeds:
            cfg = dataclasses.replace(base, edges=edges, seed=seed, checkpoint_dir=None)
            _, report = train(train_set, dev_set, cfg)
            accs.append(report.best_dev_accuracy)
        results.append({"row": label, "edges": edges, "accuracy": statistics.median(accs), "per_seed": accs})
    return results


def cmd_ablate(args) -> int:
    cfg = build_train_config(args)
    if cfg.model not in GRAPH_MODELS:
        raise UsageError("ablate needs a graph model")
    train_set = parse_dataset(args.train, "train")
    dev_set = parse_dataset(args.dev, "dev")
    seeds = [args.seed + k for k in range(args.seeds)]
    print(f"{'edges':<14} {'dev acc':>8}  per seed")
    for row in ablation(train_set, dev_set, cfg, seeds):
        print(f"{row['row']:<14} {row['accuracy']:>8.4f}  " + " ".join(f"{a:.4f}" for a in row["per_seed"]))
        _emit({"event": "ablate", **row})
    return 0


# -- parser --------------------------------------------------------------------

def _graph_flags(p) -> None:
    p.add_argument("--tau-long", type=int, help="Same-edge distance threshold within a passage (200)")
    p.add_argument("--tau-window", type=int, help="Window-edge distance threshold (20)")
    p.add_argument("--neighbor-cap", type=int, help="max neighbors per node (200)")


def _train_flags(p) -> None:
    p.add_argument("--config", help="key=value file of training options; flags override it")
    p.add_argument("--model", help=f"one of {', '.join(KINDS)} (default mhqa-grn)")
    p.add_argument("--steps", type=int, help="graph transition steps T (graph models only)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--dropout", dest="dropout_rate", type=float)
    p.add_argument("--l2", dest="l2_weight", type=float)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--edges", help="edge types for graph models, e.g. same,coref")
    p.add_argument("--embeddings", dest="embeddings_path", help="GloVe-format vector file")
    p.add_argument("--trainable-embeddings", dest="trainable_embeddings", action="store_const", const=True)
    p.add_argument("--candidate-update", dest="candidate", choices=("sigmoid", "tanh"),
                   help="activation of the DAG-LSTM/GRN candidate update (default sigmoid)")
    p.add_argument("--self-loop", dest="self_loop", action="store_const", const=True,
                   help="add each node to its own GRN/GCN neighborhood")
    p.add_argument("--per-step-params", dest="shared_steps", action="store_const", const=False,
                   help="separate transition weights per graph step")
    p.add_argument("--tau-long", dest="tau_long", type=int)
    p.add_argument("--tau-window", dest="tau_window", type=int)
    p.add_argument("--neighbor-cap", dest="neighbor_cap", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhqa", description="Graph-based multi-hop reading comprehension.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a synthetic multi-hop dataset")
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--n", type=int, default=2000, help="number of instances")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=("train", "dev", "test"))
    p.add_argument("--candidates", type=int, default=GenConfig.candidates)
    p.add_argument("--orphans", type=int, default=GenConfig.orphans)
    p.add_argument("--min-gap", type=int, default=GenConfig.min_gap)
    p.add_argument("--distractors", default=GenConfig.distractor_mode, choices=("relation", "subject"))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-graph", help="write one evidence graph record per instance")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--edges", type=_edges, default=ALL_EDGES)
    _graph_flags(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("stats", help="edge counts and question-answer distance histogram")
    p.add_argument("--data", required=True)
    p.add_argument("--edges", type=_edges, default=ALL_EDGES, help="edge filter, e.g. coref or same,coref")
    _graph_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a reader with early stopping on dev accuracy")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--out", required=True, help="directory for best.npz and report.json")
    p.add_argument("--seed", type=int)
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", help="write per-instance candidate probabilities (JSON lines)")
    p.add_argument("--seed", type=int, default=0, help="unused; evaluation is deterministic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of primitives and every model variant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=5, help="toy instances per variant")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="dev accuracy per edge-type subset (median over seeds)")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
    _train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MHQA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DatasetError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"mhqa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
