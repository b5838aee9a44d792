"""Command-line front-end: reproducible experiment runs over edge-list files.

Commands: train, linkpred, reconstruct, classify, sweep, stats. Every run
resolves flags with precedence command-line > config file > built-in
defaults and writes a manifest that can be fed back via --config to
reproduce the run.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__, evaluate, model, trainer
from .graph import (
    DirectedGraph,
    load_edge_list,
    load_labels,
    load_pair_set,
    save_pair_set,
    split_link_prediction,
)
from .manifest import RunManifest, parse_config_file, sha256_file
from .seeding import named_stream

logger = logging.getLogger(__name__)

REQUIRED = object()


# --- flag value parsing / unparsing ---------------------------------------

def _p_int(s: str) -> int:
    return int(s)


def _p_nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _p_float(s: str) -> float:
    return float(s)


def _p_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _p_removal(s: str) -> float:
    v = float(s)
    if not 0.0 <= v < 1.0:
        raise ValueError("removal fraction must be in [0, 1)")
    return v


def _p_reversed_list(s: str) -> tuple[float, ...]:
    vals = tuple(float(x) for x in s.split(",") if x.strip() != "")
    if not vals:
        raise ValueError("expected a comma-separated list of fractions")
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ValueError("reversed fractions must be in [0, 1]")
    return vals


def _p_ratio_list(s: str) -> tuple[float, ...]:
    vals = tuple(float(x) for x in s.split(",") if x.strip() != "")
    if not vals:
        raise ValueError("expected a comma-separated list of ratios")
    for v in vals:
        if not 0.0 < v <= 1.0:
            raise ValueError("ratios must be in (0, 1]")
    return vals


def _p_frac_01_closed(s: str) -> float:
    v = float(s)
    if not 0.0 < v <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    return v


def _p_seed_list(s: str) -> tuple[int, ...]:
    s = s.strip()
    if ".." in s:
        lo, _, hi = s.partition("..")
        lo_i, hi_i = int(lo), int(hi)
        if hi_i < lo_i:
            raise ValueError(f"empty seed range {s!r}")
        return tuple(range(lo_i, hi_i + 1))
    return tuple(int(x) for x in s.split(",") if x.strip() != "")


def _p_int_list(s: str) -> tuple[int, ...]:
    vals = tuple(int(x) for x in s.split(",") if x.strip() != "")
    if not vals:
        raise ValueError("expected a comma-separated list of integers")
    return vals


def _p_hidden(s: str) -> tuple[int, ...] | None:
    low = s.strip().lower()
    if low == "auto":
        return None
    if low == "none":
        return ()
    return tuple(int(x) for x in s.split(",") if x.strip() != "")


def _p_opt_str(s: str) -> str | None:
    return s if s else None


def _u_plain(v) -> str:
    return str(v)


def _u_bool(v: bool) -> str:
    return "true" if v else "false"


def _u_list(v) -> str:
    return ",".join(str(x) for x in v)


def _u_hidden(v) -> str:
    if v is None:
        return "auto"
    if v == ():
        return "none"
    return ",".join(str(x) for x in v)


def _u_opt_str(v) -> str:
    return v if v is not None else ""


@dataclass(frozen=True)
class Flag:
    name: str
    default: object
    parse: Callable[[str], object]
    unparse: Callable[[object], str]
    help: str = ""
    is_bool: bool = False
    in_manifest: bool = True

    @property
    def dest(self) -> str:
        return self.name.lstrip("-").replace("-", "_")


def _common_flags(seed_is_list: bool = False) -> list[Flag]:
    seed_parse = _p_seed_list if seed_is_list else _p_int
    seed_unparse = _u_list if seed_is_list else _u_plain
    seed_default = (0,) if seed_is_list else 0
    return [
        Flag("--seed", seed_default, seed_parse, seed_unparse,
             "seed list like 1..10 or 1,2,3" if seed_is_list else "experiment seed"),
        Flag("--deterministic", False, _p_bool, _u_bool,
             "suppress wall-clock in outputs so re-runs are byte-identical", is_bool=True),
        Flag("--threads", 0, _p_nonneg_int, _u_plain, "cap BLAS threads (0 = library default)"),
        Flag("--out", ".", str, _u_plain, "output directory"),
        Flag("--config", None, _p_opt_str, _u_opt_str,
             "key=value config file (a previous run's manifest works)", in_manifest=False),
    ]


_TRAINING_FLAGS = [
    Flag("--delimiter", None, _p_opt_str, _u_opt_str, "edge-list delimiter (default: whitespace)"),
    Flag("--dim", 128, _p_int, _u_plain, "embedding dimension"),
    Flag("--epochs", 100, _p_nonneg_int, _u_plain, "training epochs"),
    Flag("--n-d", 15, _p_int, _u_plain, "discriminator iterations per epoch"),
    Flag("--n-g", 5, _p_int, _u_plain, "generator iterations per epoch"),
    Flag("--n-s", 5, _p_int, _u_plain, "fake draws per anchor node"),
    Flag("--batch-size", 1024, _p_nonneg_int, _u_plain, "mini-batch size; 0 = full coverage"),
    Flag("--lr-d", 1e-3, _p_float, _u_plain, "discriminator learning rate"),
    Flag("--lr-g", 1e-3, _p_float, _u_plain, "generator learning rate"),
    Flag("--sigma", 1.0, _p_float, _u_plain, "latent noise scale"),
    Flag("--optimizer", "adam", str, _u_plain, "adam or sgd"),
    Flag("--single-generator", False, _p_bool, _u_bool,
         "ablation: target-neighbor generator only", is_bool=True),
    Flag("--mlp-s-layers", None, _p_hidden, _u_hidden,
         "source MLP hidden widths, e.g. 128 or 128,64; 'none' = linear, 'auto' = one hidden layer"),
    Flag("--mlp-t-layers", None, _p_hidden, _u_hidden, "target MLP hidden widths"),
    Flag("--mlp-activation", "leaky_relu", str, _u_plain, "hidden activation"),
]

COMMAND_FLAGS: dict[str, list[Flag]] = {
    "train": _common_flags() + _TRAINING_FLAGS + [
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file"),
        Flag("--checkpoint-every", 0, _p_nonneg_int, _u_plain,
             "write the checkpoint every k epochs (0 = only at the end)"),
    ],
    "linkpred": _common_flags(seed_is_list=True) + _TRAINING_FLAGS + [
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file"),
        Flag("--removal", 0.5, _p_removal, _u_plain, "fraction of edges to hold out"),
        Flag("--reversed", (0.0, 0.5, 1.0), _p_reversed_list, _u_list,
             "reversed-positive fractions for the test negatives"),
        Flag("--checkpoint", None, _p_opt_str, _u_opt_str,
             "score an existing checkpoint instead of training"),
        Flag("--split-manifest", None, _p_opt_str, _u_opt_str,
             "saved pair set to score (requires --checkpoint)"),
    ],
    "reconstruct": _common_flags() + [
        Flag("--checkpoint", REQUIRED, str, _u_plain, "trained checkpoint"),
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file (the graph to reconstruct)"),
        Flag("--delimiter", None, _p_opt_str, _u_opt_str, "edge-list delimiter"),
        Flag("--sample-frac", 0.10, _p_frac_01_closed, _u_plain, "fraction of nodes to rank"),
        Flag("--k", None, lambda s: _p_int_list(s), _u_hidden, "explicit k list, e.g. 1,2,5,10"),
        Flag("--k-max", None, lambda s: int(s), lambda v: "" if v is None else str(v),
             "evaluate k = 1..k-max"),
    ],
    "classify": _common_flags() + [
        Flag("--checkpoint", REQUIRED, str, _u_plain, "trained checkpoint (dim 64 halves expected)"),
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file (defines node ids)"),
        Flag("--delimiter", None, _p_opt_str, _u_opt_str, "edge-list delimiter"),
        Flag("--labels", REQUIRED, str, _u_plain, "node class file"),
        Flag("--train-ratios", (0.1, 0.3, 0.5, 0.7, 0.9), _p_ratio_list, _u_list,
             "labeled-node training ratios"),
        Flag("--repeats", 10, _p_int, _u_plain, "random splits per ratio"),
        Flag("--l2", 1e-4, _p_float, _u_plain, "logistic regression L2 strength"),
        Flag("--logreg-iters", 500, _p_int, _u_plain, "gradient-descent iterations"),
        Flag("--logreg-lr", 0.1, _p_float, _u_plain, "gradient-descent step size"),
    ],
    "sweep": _common_flags() + _TRAINING_FLAGS + [
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file"),
        Flag("--ratios", REQUIRED, _p_ratio_list, _u_list, "training edge ratios in (0, 1]"),
        Flag("--removal", 0.5, _p_removal, _u_plain, "held-out fraction for the fixed test set"),
    ],
    "stats": _common_flags() + [
        Flag("--edges", REQUIRED, str, _u_plain, "edge-list file"),
        Flag("--delimiter", None, _p_opt_str, _u_opt_str, "edge-list delimiter"),
        Flag("--labels", None, _p_opt_str, _u_opt_str, "optional node class file"),
    ],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digraphgan",
        description="Adversarial directed-graph embeddings and their evaluation suite.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, flags in COMMAND_FLAGS.items():
        p = sub.add_parser(command)
        for flag in flags:
            if flag.is_bool:
                p.add_argument(flag.name, action=argparse.BooleanOptionalAction,
                               default=None, help=flag.help)
            else:
                p.add_argument(flag.name, type=flag.parse, default=None,
                               help=flag.help, metavar="V")
    return parser


def _resolve(parser, args, flags: list[Flag]) -> dict[str, object]:
    """Layer values: command line over config file over built-in defaults."""
    config_values: dict[str, str] = {}
    if args.config is not None:
        try:
            config_values = parse_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        known = {f.dest for f in flags}
        unknown = set(config_values) - known
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved: dict[str, object] = {}
    for flag in flags:
        value = getattr(args, flag.dest)
        if value is None and flag.dest in config_values:
            try:
                value = flag.parse(config_values[flag.dest])
            except ValueError as exc:
                parser.error(f"config key {flag.dest}: {exc}")
        if value is None:
            if flag.default is REQUIRED:
                parser.error(f"{flag.name} is required")
            value = flag.default
        resolved[flag.dest] = value
    return resolved


class OutputTracker:
    """Registers written files so a failed run can be cleaned up."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            with contextlib.suppress(OSError):
                p.unlink()


def _train_config(parser, res: dict, seed: int) -> trainer.TrainConfig:
    if res["single_generator"] and res["mlp_s_layers"] is not None:
        parser.error("--single-generator conflicts with --mlp-s-layers")
    try:
        return trainer.TrainConfig(
            dim=res["dim"],
            n_epoch=res["epochs"],
            n_d=res["n_d"],
            n_g=res["n_g"],
            n_s=res["n_s"],
            batch_size=None if res["batch_size"] == 0 else res["batch_size"],
            lr_d=res["lr_d"],
            lr_g=res["lr_g"],
            sigma=res["sigma"],
            seed=seed,
            single_generator=res["single_generator"],
            optimizer=res["optimizer"],
            deterministic=res["deterministic"],
            mlp_source_hidden=res["mlp_s_layers"],
            mlp_target_hidden=res["mlp_t_layers"],
            mlp_activation=res["mlp_activation"],
        )
    except ValueError as exc:
        parser.error(str(exc))


def _config_lines(command: str, res: dict) -> dict[str, str]:
    flags = {f.dest: f for f in COMMAND_FLAGS[command] if f.in_manifest}
    return {dest: flag.unparse(res[dest]) for dest, flag in flags.items()}


def _write_csv(path: Path, config_lines: dict[str, str], header: list[str], rows: list[list]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        for key in sorted(config_lines):
            fh.write(f"# {key}={config_lines[key]}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


# --- commands --------------------------------------------------------------

def _cmd_train(parser, res, tracker: OutputTracker) -> None:
    graph, id_map = load_edge_list(res["edges"], res["delimiter"])
    cfg = _train_config(parser, res, res["seed"])
    ckpt_path = tracker.path("checkpoint.bin")
    disc, gen, report = trainer.train(
        graph, cfg, checkpoint_path=ckpt_path, checkpoint_every=res["checkpoint_every"]
    )
    model.save_checkpoint(ckpt_path, disc, gen)
    model.export_embeddings(tracker.path("embeddings.tsv"), disc, id_map)
    report.to_csv(tracker.path("train_report.csv"), deterministic=cfg.deterministic)
    print(f"trained {graph.node_count} nodes / {graph.edge_count} edges "
          f"for {cfg.n_epoch} epochs -> {tracker.out_dir}")


def _cmd_linkpred(parser, res, tracker: OutputTracker) -> None:
    graph, id_map = load_edge_list(res["edges"], res["delimiter"])
    config_lines = _config_lines("linkpred", res)
    rows: list[list] = []
    if res["checkpoint"] is not None or res["split_manifest"] is not None:
        if res["checkpoint"] is None or res["split_manifest"] is None:
            parser.error("--checkpoint and --split-manifest must be given together")
        disc, _ = model.load_checkpoint(res["checkpoint"])
        if disc.node_count != graph.node_count:
            raise RuntimeError(
                f"checkpoint holds {disc.node_count} nodes but the graph has {graph.node_count}"
            )
        meta = _read_metadata(res["split_manifest"])
        pair_set = load_pair_set(res["split_manifest"], id_map)
        scored = evaluate.score_pair_set(disc, pair_set)
        value = evaluate.auc(scored.positive_scores, scored.negative_scores)
        rows.append([meta.get("seed", ""), meta.get("reversed_fraction", ""), _fmt(value)])
    else:
        for seed in res["seed"]:
            cfg = _train_config(parser, res, seed)
            result = evaluate.run_link_prediction(
                graph, cfg, res["removal"], res["reversed"], seed
            )
            for rf in res["reversed"]:
                rf = float(rf)
                pair_path = tracker.path(f"pairs_seed{seed}_rev{rf:g}.tsv")
                save_pair_set(
                    pair_path,
                    result.test_sets[rf],
                    id_map,
                    metadata={
                        "seed": str(seed),
                        "reversed_fraction": f"{rf:g}",
                        "removal_fraction": f"{res['removal']:g}",
                    },
                )
                rows.append([seed, f"{rf:g}", _fmt(result.aucs[rf])])
                logger.info("seed %d reversed %.2f: auc %.4f", seed, rf, result.aucs[rf])
    _write_csv(tracker.path("linkpred_auc.csv"), config_lines,
               ["seed", "reversed_fraction", "auc"], rows)
    print(f"wrote {tracker.out_dir / 'linkpred_auc.csv'} ({len(rows)} rows)")


def _read_metadata(path: str | Path) -> dict[str, str]:
    meta = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("# ") or "=" not in line:
                continue
            key, _, value = line[2:].strip().partition("=")
            meta[key] = value
    return meta


def _cmd_reconstruct(parser, res, tracker: OutputTracker) -> None:
    graph, _ = load_edge_list(res["edges"], res["delimiter"])
    disc, _ = model.load_checkpoint(res["checkpoint"])
    if disc.node_count != graph.node_count:
        raise RuntimeError(
            f"checkpoint holds {disc.node_count} nodes but the graph has {graph.node_count}"
        )
    if res["k"] is not None and res["k_max"] is not None:
        parser.error("--k and --k-max are mutually exclusive")
    if res["k"] is not None:
        k_values = list(res["k"])
    elif res["k_max"] is not None:
        k_values = list(range(1, res["k_max"] + 1))
    else:
        k_values = list(range(1, min(100, graph.node_count - 1) + 1))
    stream = named_stream(res["seed"], "reconstruct-sample")
    n_sample = max(1, int(res["sample_frac"] * graph.node_count))
    sampled = stream.choice(graph.node_count, size=n_sample, replace=False)
    sources = [int(u) for u in sampled if graph.out_degrees[u] > 0]
    if not sources:
        raise RuntimeError("no sampled node has out-degree >= 1")
    precisions = evaluate.precision_at_k(disc, graph, sources, k_values)
    rows = [[k, _fmt(precisions[k])] for k in sorted(precisions)]
    _write_csv(tracker.path("reconstruction.csv"), _config_lines("reconstruct", res),
               ["k", "mean_precision"], rows)
    print(f"wrote {tracker.out_dir / 'reconstruction.csv'} ({len(rows)} rows, "
          f"{len(sources)} sources)")


def _cmd_classify(parser, res, tracker: OutputTracker) -> None:
    graph, id_map = load_edge_list(res["edges"], res["delimiter"])
    disc, _ = model.load_checkpoint(res["checkpoint"])
    if disc.node_count != graph.node_count:
        raise RuntimeError(
            f"checkpoint holds {disc.node_count} nodes but the graph has {graph.node_count}"
        )
    if disc.dim != 64:
        logger.warning("checkpoint dim is %d; the concatenated features are %d-dimensional "
                       "(64 halves expected)", disc.dim, 2 * disc.dim)
    labels = load_labels(res["labels"], id_map)
    if len(set(labels.values())) < 2:
        raise RuntimeError("need at least 2 distinct classes among labeled nodes")
    nodes = sorted(labels)
    features = evaluate.concat_features(disc, nodes)
    classes = [labels[u] for u in nodes]
    rows = []
    for ratio in res["train_ratios"]:
        micros, macros = [], []
        for rep in range(res["repeats"]):
            stream = named_stream(res["seed"], f"classify/{ratio!r}/{rep}")
            micro, macro = _one_classification_run(
                features, classes, ratio, stream,
                l2=res["l2"], iters=res["logreg_iters"], lr=res["logreg_lr"],
            )
            micros.append(micro)
            macros.append(macro)
        rows.append([f"{ratio:g}", _fmt(float(np.mean(micros))), _fmt(float(np.mean(macros)))])
        logger.info("ratio %.2f: micro %.4f macro %.4f", ratio, np.mean(micros), np.mean(macros))
    _write_csv(tracker.path("classification.csv"), _config_lines("classify", res),
               ["train_ratio", "micro_f1", "macro_f1"], rows)
    print(f"wrote {tracker.out_dir / 'classification.csv'} ({len(rows)} rows)")


def _one_classification_run(features, classes, ratio, stream, l2, iters, lr,
                            max_retries: int = 20) -> tuple[float, float]:
    n = len(classes)
    n_train = min(max(1, round(ratio * n)), n - 1)
    for _ in range(max_retries):
        perm = stream.permutation(n)
        train_idx, test_idx = perm[:n_train], perm[n_train:]
        train_classes = [classes[i] for i in train_idx]
        if len(set(train_classes)) >= 2:
            break
    else:
        raise RuntimeError(f"could not sample a training split with 2 classes at ratio {ratio}")
    params = evaluate.train_logreg(features[train_idx], train_classes, l2=l2, iters=iters, lr=lr)
    predicted = evaluate.predict_classes(params, features[test_idx])
    truth = [classes[i] for i in test_idx]
    return evaluate.f1_scores(predicted, truth)


def _cmd_sweep(parser, res, tracker: OutputTracker) -> None:
    graph, _ = load_edge_list(res["edges"], res["delimiter"])
    cfg = _train_config(parser, res, res["seed"])
    results = evaluate.run_sparsity_sweep(
        graph, cfg, res["ratios"], res["seed"], removal_fraction=res["removal"]
    )
    rows = [[f"{r:g}", _fmt(results[float(r)])] for r in res["ratios"]]
    _write_csv(tracker.path("sparsity.csv"), _config_lines("sweep", res),
               ["edge_ratio", "auc"], rows)
    print(f"wrote {tracker.out_dir / 'sparsity.csv'} ({len(rows)} rows)")


def _cmd_stats(parser, res, tracker: OutputTracker) -> None:
    graph, id_map = load_edge_list(res["edges"], res["delimiter"])
    avg_degree = 2.0 * graph.edge_count / graph.node_count
    print(f"nodes {graph.node_count}")
    print(f"edges {graph.edge_count}")
    print(f"avg_degree {avg_degree:.2f}")
    print(f"max_out_degree {int(graph.out_degrees.max())}")
    print(f"max_in_degree {int(graph.in_degrees.max())}")
    print(f"zero_out_degree {int((graph.out_degrees == 0).sum())}")
    print(f"zero_in_degree {int((graph.in_degrees == 0).sum())}")
    if res["labels"] is not None:
        labels = load_labels(res["labels"], id_map)
        print(f"labeled_nodes {len(labels)}")
        print(f"labels {len(set(labels.values()))}")


_RUNNERS = {
    "train": _cmd_train,
    "linkpred": _cmd_linkpred,
    "reconstruct": _cmd_reconstruct,
    "classify": _cmd_classify,
    "sweep": _cmd_sweep,
    "stats": _cmd_stats,
}

_DIGEST_KEYS = ("edges", "labels", "checkpoint", "split_manifest")


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    command = args.command
    res = _resolve(parser, args, COMMAND_FLAGS[command])

    out_dir = Path(res["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    tracker = OutputTracker(out_dir)
    run = RunManifest(
        command=command,
        version=__version__,
        started=datetime.now(timezone.utc).isoformat(),
        config=_config_lines(command, res),
    )
    for key in _DIGEST_KEYS:
        value = res.get(key)
        if value:
            try:
                run.input_digests[key] = sha256_file(value)
            except OSError as exc:
                print(f"error: cannot read {key} file: {exc}", file=sys.stderr)
                return 1

    limiter = contextlib.nullcontext()
    if res["threads"]:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=res["threads"])
    try:
        with limiter:
            _RUNNERS[command](parser, res, tracker)
    except Exception as exc:  # argparse usage errors exit before this
        tracker.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run.finished = datetime.now(timezone.utc).isoformat()
    run.write(out_dir / "manifest.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
