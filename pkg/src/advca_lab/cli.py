"""Command-line entry point tying the laboratory together.

    advca-lab generate  --config cfg --out DIR
    advca-lab train     --config cfg --data DIR --out DIR [--seed N]
    advca-lab gcs       --config cfg --set-a A.jsonl --set-b B.jsonl --out DIR
    advca-lab visualize --config cfg --checkpoint CKPT --data D.jsonl \
                        --indices 0,1,2 --out DIR
    advca-lab ablate    --config cfg --data DIR --out DIR

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime or
numeric error. Every output file is written via temp-then-rename; the only
non-deterministic output field is the manifest timestamp.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np

from . import engine, gcs
from .config import ExperimentConfig, parse_config
from .engine import METRIC_COLUMNS, ModelBundle, TrainConfig
from .errors import ConfigError, DataError, TrainingDivergedError
from .graphs import (
    DatasetSplit,
    Graph,
    GraphView,
    base_shift_config,
    generate_motif_dataset,
    load_jsonl,
    save_jsonl,
    size_shift_config,
    split_covariate,
)
from .models import Backbone, load_checkpoint, save_checkpoint


def _write_atomic(path: str, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, obj):
    _write_atomic(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _dataset_config(cfg: ExperimentConfig):
    d = cfg.dataset
    if d.shift_kind == "base":
        return base_shift_config(
            d.train_per_env_class,
            d.val_per_env_class,
            d.test_per_env_class,
            (d.min_total_nodes, d.max_total_nodes),
            d.feature_dim,
        )
    if d.shift_kind == "size":
        buckets = {
            "small": (d.small_min, d.small_max),
            "middle": (d.middle_min, d.middle_max),
            "large": (d.large_min, d.large_max),
        }
        return size_shift_config(
            d.train_per_env_class, d.val_per_env_class, d.test_per_env_class, buckets, d.feature_dim
        )
    raise ConfigError(f"unknown dataset.shift_kind {d.shift_kind!r}")


def _split_stats(graphs: list[Graph]) -> dict:
    return {
        "graphs": len(graphs),
        "avg_nodes": round(float(np.mean([g.num_nodes for g in graphs])), 4),
        "avg_edges": round(float(np.mean([g.num_edges for g in graphs])), 4),
        "envs": sorted({g.env for g in graphs}),
    }


def cmd_generate(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    ds_cfg = _dataset_config(cfg)
    graphs = generate_motif_dataset(ds_cfg, cfg.dataset.seed)
    split = split_covariate(graphs, ds_cfg.shift_kind)
    for name, part in (("train", split.train), ("val", split.val), ("test", split.test)):
        save_jsonl(part, os.path.join(out_dir, f"{name}.jsonl"))
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(),
        "shift_kind": ds_cfg.shift_kind,
        "seed": cfg.dataset.seed,
        "feature_dim": cfg.dataset.feature_dim,
        "splits": {
            "train": _split_stats(split.train),
            "val": _split_stats(split.val),
            "test": _split_stats(split.test),
        },
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def _load_split(data_dir: str, shift_kind: str) -> DatasetSplit:
    parts = {}
    for name in ("train", "val", "test"):
        path = os.path.join(data_dir, f"{name}.jsonl")
        if not os.path.exists(path):
            raise DataError(f"missing dataset file {path}")
        parts[name] = load_jsonl(path)
    return DatasetSplit(parts["train"], parts["val"], parts["test"], shift_kind)


def _history_csv(history: list[dict]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in history:
        writer.writerow([_fmt_cell(row[c]) for c in METRIC_COLUMNS])
    return buf.getvalue().encode("utf-8")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _run_one_seed(cfg: ExperimentConfig, split: DatasetSplit, method: str, seed: int):
    """Train one seed of one method; returns (state, result, test_accuracy)."""
    train_cfg = TrainConfig(**{**_train_kwargs(cfg.train), "seed": seed})
    feature_dim = split.train[0].features.shape[1]
    if method in ("advca", "rdca", "wo_adv", "wo_cau"):
        bundle = ModelBundle(seed, feature_dim, sizes=cfg.model)
        result = engine.train(bundle, split, train_cfg, variant=method)
        correct = sum(1 for g in split.test if bundle.predict(g) == g.label)
        state = bundle.state()
    elif method in ("erm", "dropedge"):
        rng = np.random.default_rng(seed)
        backbone = Backbone(rng, feature_dim, cfg.model.hidden, cfg.model.layers)
        augment = None
        if method == "dropedge":
            aug_rng = np.random.default_rng(seed + 1)
            augment = lambda g: engine.dropedge_augment(g, train_cfg.dropedge_p, aug_rng)
        result = engine.erm_train(backbone, split, train_cfg, augment=augment)
        correct = sum(1 for g in split.test if backbone.predict_raw(GraphView.of(g)) == g.label)
        state = {name: p.data.copy() for name, p in backbone.named_parameters("backbone")}
    else:
        raise ConfigError(f"unknown method {method!r}")
    test_acc = correct / len(split.test)
    result.test_accuracy = test_acc
    return state, result, test_acc


def _train_kwargs(tc: TrainConfig) -> dict:
    from dataclasses import asdict

    return asdict(tc)


def cmd_train(cfg: ExperimentConfig, data_dir: str, out_dir: str, base_seed: int | None = None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    split = _load_split(data_dir, cfg.dataset.shift_kind)
    start = cfg.train.seed if base_seed is None else base_seed
    per_seed = []
    accs = []
    for seed in range(start, start + cfg.num_seeds):
        try:
            state, result, test_acc = _run_one_seed(cfg, split, cfg.method, seed)
        except TrainingDivergedError as exc:
            per_seed.append({"seed": seed, "error": str(exc)})
            continue
        save_checkpoint(os.path.join(out_dir, f"checkpoint_seed{seed}.bin"), state)
        _write_atomic(os.path.join(out_dir, f"metrics_seed{seed}.csv"), _history_csv(result.history))
        per_seed.append(
            {
                "seed": seed,
                "test_acc": test_acc,
                "best_epoch": result.best_epoch,
                "val_acc": result.best_val_accuracy,
            }
        )
        accs.append(test_acc)
    summary = {
        "method": cfg.method,
        "mean_test_acc": float(np.mean(accs)) if accs else None,
        "std_test_acc": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
        "per_seed": per_seed,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary


def cmd_gcs(cfg: ExperimentConfig, set_a_path: str, set_b_path: str, out_dir: str | None) -> gcs.GcsReport:
    for path in (set_a_path, set_b_path):
        if not os.path.exists(path):
            raise DataError(f"missing dataset file {path}")
    set_a = load_jsonl(set_a_path)
    set_b = load_jsonl(set_b_path)
    report = gcs.estimate_shift(set_a, set_b, cfg.gcs)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_atomic(os.path.join(out_dir, "gcs_report.json"), (report.to_json() + "\n").encode("utf-8"))
    return report


GRAY_LEVELS = 255


def graph_to_dot(graph: Graph, node_values: np.ndarray, edge_values: np.ndarray) -> str:
    """Render soft masks as a DOT document.

    Node fill is a grayscale ramp (value 0 -> white, 1 -> black), edge pen
    width is 0.5 + 3 * value, and ground-truth causal nodes get a double
    border. Output is deterministic.
    """
    lines = [f"graph g{graph.id} {{", "  node [shape=circle, style=filled];"]
    for i in range(graph.num_nodes):
        v = float(min(max(node_values[i], 0.0), 1.0))
        shade = int(round(GRAY_LEVELS * (1.0 - v)))
        color = f"#{shade:02x}{shade:02x}{shade:02x}"
        extra = ", peripheries=2" if graph.causal_nodes[i] else ""
        lines.append(f'  {i} [fillcolor="{color}"{extra}];')
    for k, (i, j) in enumerate(graph.edges):
        width = 0.5 + 3.0 * float(min(max(edge_values[k], 0.0), 1.0))
        lines.append(f"  {i} -- {j} [penwidth={width:.3f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_visualize(cfg: ExperimentConfig, checkpoint: str, data_path: str, indices: list[int], out_dir: str) -> list[str]:
    if not os.path.exists(data_path):
        raise DataError(f"missing dataset file {data_path}")
    graphs = load_jsonl(data_path)
    for idx in indices:
        if not 0 <= idx < len(graphs):
            raise ConfigError(f"graph index {idx} out of range (dataset has {len(graphs)} graphs)")
    feature_dim = graphs[0].features.shape[1]
    bundle = ModelBundle(0, feature_dim, sizes=cfg.model)
    state = load_checkpoint(checkpoint)
    bundle.load_state(state)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for idx in indices:
        g = graphs[idx]
        view = GraphView.of(g)
        node, _, values = bundle.causal_gen.raw_masks(view)
        text = graph_to_dot(g, node[:, 0], values[:, 0])
        path = os.path.join(out_dir, f"graph_{idx}.dot")
        _write_atomic(path, text.encode("utf-8"))
        written.append(path)
    return written


ABLATION_VARIANTS = ("advca", "wo_adv", "wo_cau", "rdca", "erm")


def cmd_ablate(cfg: ExperimentConfig, data_dir: str, out_dir: str) -> list[tuple[str, float, float]]:
    os.makedirs(out_dir, exist_ok=True)
    split = _load_split(data_dir, cfg.dataset.shift_kind)
    rows = []
    for variant in ABLATION_VARIANTS:
        accs = []
        for seed in range(cfg.train.seed, cfg.train.seed + cfg.num_seeds):
            _, _, test_acc = _run_one_seed(cfg, split, variant, seed)
            accs.append(test_acc)
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        rows.append((variant, mean, std))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "mean_acc", "std_acc"])
    for variant, mean, std in rows:
        writer.writerow([variant, f"{mean:.6f}", f"{std:.6f}"])
    _write_atomic(os.path.join(out_dir, "ablation.csv"), buf.getvalue().encode("utf-8"))
    return rows


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advca-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a section.key = value config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")

    p = sub.add_parser("generate", help="generate dataset splits and a manifest")
    common(p)
    p = sub.add_parser("train", help="train one method over the configured seeds")
    common(p)
    p.add_argument("--data", required=True, help="directory produced by generate")
    p = sub.add_parser("gcs", help="estimate the covariate shift between two dataset files")
    common(p)
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p = sub.add_parser("visualize", help="export mask visualizations as DOT files")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset JSONL file")
    p.add_argument("--indices", required=True, help="comma-separated graph indices")
    p = sub.add_parser("ablate", help="compare the training variants")
    common(p)
    p.add_argument("--data", required=True, help="directory produced by generate")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None and args.command == "generate":
            cfg.dataset.seed = args.seed
        out = args.out or "."
        if args.command == "generate":
            manifest = cmd_generate(cfg, out)
            print(json.dumps(manifest["splits"], sort_keys=True))
        elif args.command == "train":
            summary = cmd_train(cfg, args.data, out, base_seed=args.seed)
            print(json.dumps({k: summary[k] for k in ("method", "mean_test_acc", "std_test_acc")}))
        elif args.command == "gcs":
            report = cmd_gcs(cfg, args.set_a, args.set_b, args.out)
            print(report.to_json())
        elif args.command == "visualize":
            try:
                indices = [int(x) for x in args.indices.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"bad --indices value {args.indices!r}") from None
            written = cmd_visualize(cfg, args.checkpoint, args.data, indices, out)
            print("\n".join(written))
        elif args.command == "ablate":
            rows = cmd_ablate(cfg, args.data, out)
            for variant, mean, std in rows:
                print(f"{variant},{mean:.4f},{std:.4f}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (TrainingDivergedError, ValueError, ArithmeticError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
