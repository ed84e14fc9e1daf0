"""Batch command-line interface.

Subcommands: preprocess, train, split-lp, eval (lp | nc | attack), aggregate.
Options resolve as builtin defaults < --config file (key=value lines) <
explicit flags, and every run writes the resolved settings next to its
outputs. Exit codes: 0 success, 1 usage error, 2 data/format error,
3 numerical failure during training.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .evaluation import (EvalSplit, attack, auc_link_prediction,
                         node_classification, residual_graph,
                         split_link_prediction)
from .graph import GraphParseError, load_edge_list, load_labels, save_edge_list
from .proximity import ScaleMatrix, dump_ppmi, shifted_ppmi
from .training import (NumericalError, TrainConfig, load_embeddings,
                       save_embeddings, train)
from .walks import WalkConfig, dump_walks, generate_walks
from . import seeding

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

METRICS_HEADER = ["dataset", "method", "task", "ratio_or_eps", "seed", "metric", "value"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_config_file(path):
    vals = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise GraphParseError(f"{path}:{ln}: expected key=value")
            key, _, val = line.partition("=")
            vals[key.strip()] = val.strip()
    return vals


# (name, type, default, help) for options that may come from a config file
TRAIN_SPECS = [
    ("method", str, "dwns", "dwns | rand | advt | iadvt"),
    ("dim", int, 128, "embedding dimension"),
    ("epochs", int, 20, "method-phase epochs"),
    ("pretrain-epochs", int, 10, "clean warmup epochs"),
    ("batch-size", int, 1024, "pairs per SGD step"),
    ("learning-rate", float, 1e-3, "SGD step size"),
    ("eps", float, 1.0, "perturbation norm"),
    ("reg-weight", float, 1.0, "regularizer weight"),
    ("neighbors", int, 5, "direction count for iadvt"),
    ("ppmi-steps", int, 2, "transition steps in the proximity matrix"),
    ("ppmi-shift", float, 0.0, "proximity shift (0 = 1/N)"),
    ("walk-length", int, 40, "nodes per walk"),
    ("walks-per-node", int, 1, "walk passes over the node set"),
    ("window", int, 5, "context window"),
    ("negatives", int, 5, "noise samples per pair"),
    ("seed", int, 0, "master seed"),
]


def _add_spec_options(parser, specs):
    for name, typ, _default, help_ in specs:
        parser.add_argument(f"--{name}", type=typ, default=None, help=help_)


def _resolve(args, specs):
    vals = {name: default for name, _t, default, _h in specs}
    if getattr(args, "config", None):
        file_vals = _parse_config_file(args.config)
        by_name = {name: typ for name, typ, _d, _h in specs}
        for key, raw in file_vals.items():
            if key not in by_name:
                raise GraphParseError(f"{args.config}: unknown config key {key!r}")
            vals[key] = by_name[key](raw)
    for name, _t, _d, _h in specs:
        cli_val = getattr(args, name.replace("-", "_"))
        if cli_val is not None:
            vals[name] = cli_val
    return vals


def _write_resolved(outdir, vals, extra=None):
    merged = dict(vals)
    if extra:
        merged.update(extra)
    with open(os.path.join(outdir, "config.resolved"), "w", encoding="utf-8") as fh:
        for key in sorted(merged):
            fh.write(f"{key}={merged[key]}\n")


def _outdir(args):
    out = args.out or os.environ.get("ADVWALK_OUTDIR")
    if not out:
        raise GraphParseError("no output directory: pass --out or set ADVWALK_OUTDIR")
    os.makedirs(out, exist_ok=True)
    return out


def _load_graph(args):
    return load_edge_list(args.graph, directed=args.directed, weighted=args.weighted)


def _aligned_embeddings(path, graph):
    """Load an embedding file and reorder rows to the graph's node ids."""
    names, matrix = load_embeddings(path)
    row_of = {n: i for i, n in enumerate(names)}
    perm = np.empty(graph.num_nodes, dtype=np.int64)
    for gid, name in enumerate(graph.node_names):
        if name not in row_of:
            raise GraphParseError(f"{path}: no embedding for node {name!r}")
        perm[gid] = row_of[name]
    return matrix[perm]


def _labeled_ids(graph, labels, where=sys.stderr):
    ids = []
    ys = []
    skipped = 0
    for name, lab in labels.items():
        gid = graph.name_to_id.get(name)
        if gid is None:
            skipped += 1
            continue
        ids.append(gid)
        ys.append(lab)
    if skipped:
        print(f"note: {skipped} labeled nodes absent from the graph were ignored", file=where)
    if not ids:
        raise GraphParseError("no labeled node is present in the graph")
    order = np.argsort(np.asarray(ids))
    return np.asarray(ids, dtype=np.int64)[order], np.asarray(ys)[order]


def _append_metrics(path, rows):
    new = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow(row)


def _dataset_name(args):
    if getattr(args, "dataset", None):
        return args.dataset
    stem = os.path.basename(args.graph)
    return stem.rsplit(".", 1)[0] if "." in stem else stem


def _seed_list(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi = part.split(":")
            out.extend(range(int(lo), int(hi)))
        elif part:
            out.append(int(part))
    if not out:
        raise GraphParseError(f"empty seed list {text!r}")
    return out


def cmd_preprocess(args):
    graph = _load_graph(args)
    out = _outdir(args)
    save_edge_list(graph, os.path.join(out, "graph.edges"))
    with open(os.path.join(out, "nodes.tsv"), "w", encoding="utf-8") as fh:
        for i, name in enumerate(graph.node_names):
            fh.write(f"{i}\t{name}\n")
    n_edges = graph.num_arcs if graph.directed else graph.num_arcs // 2
    print(f"nodes={graph.num_nodes} edges={n_edges} arcs={graph.num_arcs} "
          f"directed={graph.directed}")
    return EXIT_OK


def cmd_train(args):
    vals = _resolve(args, TRAIN_SPECS)
    graph = _load_graph(args)
    out = _outdir(args)
    walk_cfg = WalkConfig(walks_per_node=vals["walks-per-node"],
                          walk_length=vals["walk-length"],
                          window=vals["window"],
                          negatives=vals["negatives"])
    cfg = TrainConfig(method=vals["method"], dim=vals["dim"], epochs=vals["epochs"],
                      pretrain_epochs=vals["pretrain-epochs"],
                      batch_size=vals["batch-size"],
                      learning_rate=vals["learning-rate"], eps=vals["eps"],
                      reg_weight=vals["reg-weight"], neighbors=vals["neighbors"],
                      ppmi_steps=vals["ppmi-steps"], ppmi_shift=vals["ppmi-shift"],
                      seed=vals["seed"])
    _write_resolved(out, vals, extra={"graph": args.graph, "directed": args.directed,
                                      "weighted": args.weighted})

    loss_path = os.path.join(out, "loss.csv")
    with open(loss_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "pairs", "clean_loss", "reg_loss", "reg_active",
                         "zero_grad_target", "zero_grad_context", "seconds"])

        def on_epoch(stats):
            writer.writerow([stats.epoch, stats.n_pairs, repr(stats.clean_loss),
                             repr(stats.reg_loss), int(stats.reg_active),
                             stats.zero_grad_target, stats.zero_grad_context,
                             f"{stats.duration_s:.3f}"])
            fh.flush()
            print(f"epoch {stats.epoch}: clean {stats.clean_loss:.2f}"
                  + (f" reg {stats.reg_loss:.2f}" if stats.reg_active else "")
                  + f" ({stats.duration_s:.1f}s)", file=sys.stderr)

        model = train(graph, walk_cfg, cfg, on_epoch=on_epoch)

    save_embeddings(os.path.join(out, "embeddings.txt"), model.target, graph.node_names)
    save_embeddings(os.path.join(out, "context.txt"), model.context, graph.node_names)

    if args.dump_walks:
        walks = generate_walks(graph, walk_cfg, seeding.stream(cfg.seed, seeding.WALKS, 0))
        dump_walks(walks, graph, os.path.join(out, "walks.txt"))
    if args.dump_ppmi:
        m = shifted_ppmi(graph, steps=cfg.ppmi_steps,
                         shift=cfg.ppmi_shift if cfg.ppmi_shift > 0 else None)
        dump_ppmi(m, ScaleMatrix(m), graph, os.path.join(out, "ppmi.tsv"))
    print(f"wrote {out}/embeddings.txt")
    return EXIT_OK


def cmd_split_lp(args):
    graph = _load_graph(args)
    out = _outdir(args)
    split = split_link_prediction(graph, keep_ratio=args.keep_ratio, seed=args.seed)
    save_edge_list(residual_graph(graph, split), os.path.join(out, "residual.edges"))

    def write_pairs(fname, pairs):
        with open(os.path.join(out, fname), "w", encoding="utf-8") as fh:
            for u, v in pairs:
                fh.write(f"{graph.node_names[u]}\t{graph.node_names[v]}\n")

    write_pairs("test_edges.tsv", split.test_edges)
    write_pairs("test_negatives.tsv", split.negative_test_edges)
    _write_resolved(out, {"keep-ratio": args.keep_ratio, "seed": args.seed,
                          "graph": args.graph})
    print(f"kept {len(split.train_edges)} edges, hid {len(split.test_edges)}, "
          f"sampled {len(split.negative_test_edges)} negatives")
    return EXIT_OK


def _read_pairs(path, graph):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphParseError(f"{path}:{ln}: expected 2 fields")
            try:
                u, v = graph.name_to_id[parts[0]], graph.name_to_id[parts[1]]
            except KeyError as exc:
                raise GraphParseError(f"{path}:{ln}: unknown node {exc}") from None
            out.append((min(u, v), max(u, v)))
    return np.asarray(out, dtype=np.int64).reshape(len(out), 2)


def cmd_eval_lp(args):
    graph = _load_graph(args)
    from .training import EmbeddingModel
    target = _aligned_embeddings(args.embeddings, graph)
    model = EmbeddingModel(target, np.zeros_like(target))
    test_edges = _read_pairs(os.path.join(args.split_dir, "test_edges.tsv"), graph)
    test_neg = _read_pairs(os.path.join(args.split_dir, "test_negatives.tsv"), graph)
    deg = np.diff(graph.indptr)
    src = np.repeat(np.arange(graph.num_nodes), deg)
    mask = src < graph.indices
    all_edges = set(zip(src[mask].tolist(), graph.indices[mask].tolist()))
    hidden = set(map(tuple, test_edges.tolist()))
    train_edges = np.asarray(sorted(all_edges - hidden), dtype=np.int64)
    split = EvalSplit(kind="link_prediction", ratio=float("nan"), seed=args.seed,
                      source_graph=graph, train_edges=train_edges,
                      test_edges=test_edges, negative_test_edges=test_neg)
    auc = auc_link_prediction(model, split, seed=args.seed)
    rows = [[_dataset_name(args), args.method_name, "link_prediction", "", args.seed,
             "auc", repr(auc)]]
    _append_metrics(args.metrics, rows)
    print(f"auc={auc:.4f}")
    return EXIT_OK


def cmd_eval_nc(args):
    graph = _load_graph(args)
    from .training import EmbeddingModel
    target = _aligned_embeddings(args.embeddings, graph)
    model = EmbeddingModel(target, np.zeros_like(target))
    ids, ys = _labeled_ids(graph, load_labels(args.labels))
    ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    seeds = _seed_list(args.seeds)
    cells = [(r, s) for r in ratios for s in seeds]

    def run(cell):
        r, s = cell
        return node_classification(model, ids, ys, train_ratio=r, seed=s)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            accs = list(pool.map(run, cells))
    else:
        accs = [run(c) for c in cells]

    rows = []
    for (r, s), acc in zip(cells, accs):
        rows.append([_dataset_name(args), args.method_name, "node_classification",
                     repr(r), s, "accuracy", repr(acc)])
    _append_metrics(args.metrics, rows)
    for r in ratios:
        vals = [a for (rr, _s), a in zip(cells, accs) if rr == r]
        print(f"ratio {r}: accuracy {np.mean(vals):.4f} +- {np.std(vals):.4f} "
              f"over {len(vals)} seeds")
    return EXIT_OK


def cmd_eval_attack(args):
    graph = _load_graph(args)
    from .training import EmbeddingModel
    target = _aligned_embeddings(args.embeddings, graph)
    context = _aligned_embeddings(args.context, graph)
    model = EmbeddingModel(target, context)
    ids, ys = _labeled_ids(graph, load_labels(args.labels))
    eps_grid = [float(e) for e in args.eps_grid.split(",") if e.strip()]
    results = attack(model, graph, ids, ys, eps_grid, mode=args.mode,
                     train_ratio=args.ratio, seed=args.seed)
    rows = []
    for mode, eps, acc in results:
        rows.append([_dataset_name(args), args.method_name, "attack", repr(eps),
                     args.seed, f"accuracy_{mode}", repr(acc)])
        print(f"{mode} eps={eps}: accuracy {acc:.4f}")
    _append_metrics(args.metrics, rows)
    return EXIT_OK


def cmd_aggregate(args):
    groups = {}
    with open(args.metrics, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            key = (row["dataset"], row["method"], row["task"],
                   row["ratio_or_eps"], row["metric"])
            groups.setdefault(key, []).append(float(row["value"]))
    out_rows = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        out_rows.append(list(key) + [repr(float(vals.mean())),
                                     repr(float(vals.std())), len(vals)])
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "method", "task", "ratio_or_eps", "metric",
                         "mean", "std", "n"])
        writer.writerows(out_rows)
    for row in out_rows:
        print(f"{row[0]} {row[1]} {row[2]} {row[3]} {row[4]}: "
              f"{float(row[5]):.4f} +- {float(row[6]):.4f} (n={row[7]})")
    return EXIT_OK


def _add_graph_options(parser):
    parser.add_argument("--graph", required=True, help="edge list path")
    parser.add_argument("--directed", action="store_true")
    parser.add_argument("--weighted", action="store_true")


def _add_metric_options(parser):
    parser.add_argument("--metrics", default="metrics.csv", help="metrics CSV to append to")
    parser.add_argument("--dataset", default=None, help="dataset column value")
    parser.add_argument("--method-name", default="emb", help="method column value")


def build_parser():
    parser = _Parser(prog="advwalk",
                     description="Random-walk embeddings with adversarial regularization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="canonicalize an edge list")
    _add_graph_options(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train embeddings")
    _add_graph_options(p)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="key=value settings file")
    _add_spec_options(p, TRAIN_SPECS)
    p.add_argument("--dump-walks", action="store_true")
    p.add_argument("--dump-ppmi", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("split-lp", help="hide edges for link prediction")
    _add_graph_options(p)
    p.add_argument("--out", default=None)
    p.add_argument("--keep-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split_lp)

    p = sub.add_parser("eval", help="evaluate embeddings")
    esub = p.add_subparsers(dest="task", required=True)

    e = esub.add_parser("lp", help="link prediction AUC")
    _add_graph_options(e)
    e.add_argument("--embeddings", required=True)
    e.add_argument("--split-dir", required=True)
    e.add_argument("--seed", type=int, default=0)
    _add_metric_options(e)
    e.set_defaults(func=cmd_eval_lp)

    e = esub.add_parser("nc", help="node classification accuracy")
    _add_graph_options(e)
    e.add_argument("--embeddings", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--ratios", default="0.5", help="comma list of train ratios")
    e.add_argument("--seeds", default="0", help="comma list and/or lo:hi ranges")
    e.add_argument("--jobs", type=int, default=1)
    _add_metric_options(e)
    e.set_defaults(func=cmd_eval_nc)

    e = esub.add_parser("attack", help="perturbation attacks on embeddings")
    _add_graph_options(e)
    e.add_argument("--embeddings", required=True)
    e.add_argument("--context", required=True, help="context embedding file")
    e.add_argument("--labels", required=True)
    e.add_argument("--eps-grid", default="0.5,1.0,2.0")
    e.add_argument("--mode", choices=["both", "adversarial", "random"], default="both")
    e.add_argument("--ratio", type=float, default=0.8)
    e.add_argument("--seed", type=int, default=0)
    _add_metric_options(e)
    e.set_defaults(func=cmd_eval_attack)

    p = sub.add_parser("aggregate", help="mean/std over metric rows")
    p.add_argument("--metrics", default="metrics.csv")
    p.add_argument("--out", default="aggregate.csv")
    p.set_defaults(func=cmd_aggregate)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphParseError, FileNotFoundError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
