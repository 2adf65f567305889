# Command-line interface for beamfuse.
#
# This module defines argument parsing and the top-level orchestration of
# the gen -> train -> eval -> map pipeline, plus the ablation and plotting
# helpers. Every command echoes its merged configuration into its output
# directory and maps errors to fixed process exit codes.

import argparse
import csv
import io
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from beamfuse.core import config as C
from beamfuse.core.checkpoint import write_atomic
from beamfuse.core.config import RunConfig, apply_overrides, config_hash, dump_config, load_config
from beamfuse.core.dataset_io import Dataset, load_dataset, read_json, write_dataset, write_json
from beamfuse.core.errors import EXIT_IO, EXIT_OK, BeamFuseError, ConfigError, DatasetIOError
from beamfuse.core.labeling import LabelSet, label_dataset, read_labels, write_labels
from beamfuse.core.mapping import (
    MAP_META_NAME, aggregate_map, drift_summary, map_metadata, overlay, rasterize,
)
from beamfuse.core.metrics import TABLE_COLUMNS, MetricReport, oracle_report, report
from beamfuse.core.model import Normalizer, SplitData, build_model, make_split_data
from beamfuse.core.plotting import plot_runs
from beamfuse.core.simulator import generate_sequences
from beamfuse.core.training import SplitSpec, fit, load_bundle, save_bundle, split_by_sequence

logger = logging.getLogger("beamfuse")

ABLATION_NAME = "ablation"
MODEL_LABELS = {
    "camera": "Camera",
    "lidar": "LiDAR",
    "radar": "Radar",
    "gps": "GPS",
    "mmwave": "mmWave",
    C.FUSION_MODALITY: "Multimodal",
}


def main(argv: Optional[List[str]] = None) -> int:
    """Primary CLI entry point; returns the process exit code."""
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        cfg = build_config(args)
        COMMANDS[args.command](args, cfg)
    except BeamFuseError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Construct and parse the argument parser for the command-line interface."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Path to a key = value configuration file", default=None)
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="Master seed")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    parser = argparse.ArgumentParser(
        prog="beamfuse",
        description="beamfuse: multimodal beam, blockage and pose prediction on synthetic V2I data",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen_parser = subparsers.add_parser("gen", parents=[common], help="Generate a dataset and its labels")
    gen_parser.add_argument("-o", "--out", required=True, help="Dataset directory")
    gen_parser.add_argument("--sequences", type=int, default=None, help="Number of drive sequences")
    gen_parser.add_argument("--workers", type=int, default=1, help="Parallel generator processes")

    train_parser = subparsers.add_parser("train", parents=[common], help="Train a network on a dataset")
    train_parser.add_argument("-d", "--data", required=True, help="Dataset directory")
    train_parser.add_argument("-o", "--out", required=True, help="Run directory")
    _add_training_flags(train_parser)

    eval_parser = subparsers.add_parser("eval", parents=[common], help="Evaluate a trained run on a split")
    eval_parser.add_argument("-d", "--data", required=True, help="Dataset directory")
    eval_parser.add_argument("-r", "--run", default=None, help="Run directory with the checkpoint")
    eval_parser.add_argument("-o", "--out", default=None, help="Report directory (defaults to the run directory)")
    eval_parser.add_argument("--split", default="test", choices=("train", "val", "test"))
    eval_parser.add_argument("--oracle", action="store_true", help="Evaluate the label-reading oracle instead")

    map_parser = subparsers.add_parser("map", parents=[common], help="Build the test-split map overlay")
    map_parser.add_argument("-d", "--data", required=True, help="Dataset directory")
    map_parser.add_argument("-r", "--run", required=True, help="Run directory with the checkpoint")
    map_parser.add_argument("-o", "--out", default=None, help="Map directory (defaults to the run directory)")
    map_parser.add_argument("--split", default="test", choices=("train", "val", "test"))

    ablate_parser = subparsers.add_parser("ablate", parents=[common], help="Train and compare all six models")
    ablate_parser.add_argument("-d", "--data", required=True, help="Dataset directory")
    ablate_parser.add_argument("-o", "--out", required=True, help="Directory receiving one run per model")
    _add_training_flags(ablate_parser, modality=False)

    plot_parser = subparsers.add_parser("plot", parents=[common], help="Render training curves")
    plot_parser.add_argument("runs", nargs="+", help="Run directories holding train_log.csv")
    plot_parser.add_argument("-o", "--out", required=True, help="Figure directory")

    return parser.parse_args(argv)


def _add_training_flags(parser: argparse.ArgumentParser, modality: bool = True) -> None:
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    if modality:
        parser.add_argument("--modality", default=None, choices=C.MODALITIES + (C.FUSION_MODALITY,),
                            help="Unimodal baseline or 'all' for the fusion model")


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge the config file, --set overrides and dedicated flags (in that order)."""
    overrides: Dict[str, object] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("seed", "sequences", "epochs", "lr", "modality"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return load_config(args.config, overrides)


def with_dataset_config(cfg: RunConfig, dataset: Dataset) -> RunConfig:
    """Take every dataset-defining key from the dataset's manifest."""
    stored = dataset.manifest.get("config", {})
    pinned = {key: stored[key] for key in C.DATASET_KEYS if key in stored}
    changed = sorted(key for key, value in pinned.items() if getattr(cfg, key) != value)
    if changed:
        logger.warning("Using dataset values for %s", ", ".join(changed))
    return apply_overrides(cfg, pinned).validate()


def echo_config(out_dir: str, cfg: RunConfig, run_dir: Optional[str] = None) -> None:
    """Write config.txt, leaving a training run's own echo in place."""
    if run_dir and os.path.abspath(out_dir) == os.path.abspath(run_dir):
        return
    os.makedirs(out_dir, exist_ok=True)
    write_atomic(os.path.join(out_dir, C.CONFIG_ECHO_NAME), dump_config(cfg).encode("utf-8"))


def load_inputs(data_dir: str, cfg: RunConfig):
    """Verified dataset, its labels and the run config aligned with it."""
    dataset = load_dataset(data_dir)
    labels = read_labels(data_dir, dataset)
    return dataset, labels, with_dataset_config(cfg, dataset)


def split_data(dataset: Dataset, labels: LabelSet, name: str, normalizer: Normalizer) -> SplitData:
    indices = dataset.indices_for(SplitSpec.from_dict(labels.splits).ids(name))
    return make_split_data(dataset, labels, indices, normalizer)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def gen_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Simulate the sequences, write them, then label them on the train split."""
    if cfg.sequences < 3:
        raise ConfigError("Splitting by sequence needs at least 3 sequences", "sequences")
    sequences = generate_sequences(cfg, workers=args.workers)
    write_dataset(args.out, sequences, cfg)
    dataset = load_dataset(args.out)
    fractions = (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction)
    split = split_by_sequence(dataset.counts(), fractions, cfg.seed)
    labels = label_dataset(dataset, split, cfg)
    write_labels(args.out, labels, dataset)
    echo_config(args.out, cfg)
    print(f"Dataset written to {args.out}: {len(dataset)} snapshots, tau {labels.tau_db:.2f} dB")


def train_run(data_dir: str, out_dir: str, cfg: RunConfig, dataset: Dataset, labels: LabelSet) -> dict:
    """Train one network into out_dir; returns the checkpoint sidecar."""
    echo_config(out_dir, cfg)
    train_idx = dataset.indices_for(SplitSpec.from_dict(labels.splits).train)
    normalizer = Normalizer.fit(dataset.gnss[train_idx], dataset.prev_power[train_idx], dataset.truth[train_idx])
    train = split_data(dataset, labels, "train", normalizer)
    val = split_data(dataset, labels, "val", normalizer)
    net = build_model(cfg.modality, cfg.d_model, cfg.layers, cfg.heads, cfg.ffn_mult, seed=cfg.seed,
                      pose_residual=cfg.pose_residual)
    result = fit(net, train, val, cfg, normalizer, log_path=os.path.join(out_dir, C.TRAIN_LOG_NAME))
    sidecar = save_bundle(out_dir, result.best_params, normalizer, cfg, labels,
                          dataset.config_hash, result.state.best_epoch)
    logger.info("Saved %s checkpoint from epoch %d (data %s)", cfg.modality, result.state.best_epoch, data_dir)
    return sidecar


def train_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset, labels, cfg = load_inputs(args.data, cfg)
    sidecar = train_run(args.data, args.out, cfg, dataset, labels)
    print(f"Best epoch {sidecar['best_epoch']}; checkpoint written to {args.out}")


def evaluate_run(run_dir: str, split: str, dataset: Dataset, labels: LabelSet):
    """Score a trained run; returns the loaded bundle, its split data, report and predictions."""
    bundle = load_bundle(run_dir, expected_dataset_hash=dataset.config_hash)
    data = split_data(dataset, labels, split, bundle.normalizer)
    metrics, predictions = report(bundle.net, data, bundle.normalizer,
                                  noise_dbm=bundle.sidecar["n0_dbm"], in_db=bundle.sidecar["power_in_db"])
    return bundle, data, metrics, predictions


def report_document(metrics: MetricReport, model: str, split: str, cfg_hash: str,
                    dataset_hash: str, checkpoint_id: Optional[str]) -> dict:
    document = metrics.to_dict()
    document.update({
        "model": model,
        "split": split,
        "config_hash": cfg_hash,
        "dataset_hash": dataset_hash,
        "checkpoint_id": checkpoint_id,
        "table": metrics.table_row(MODEL_LABELS.get(model, model)),
    })
    return document


def eval_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    dataset, labels, cfg = load_inputs(args.data, cfg)
    if args.oracle:
        out_dir = args.out or args.run
        if not out_dir:
            raise ConfigError("--oracle needs --out or --run for the report")
        data = split_data(dataset, labels, args.split, Normalizer.fit(dataset.gnss, dataset.prev_power, dataset.truth))
        metrics = oracle_report(data, labels.noise_dbm, labels.power_in_db)
        document = report_document(metrics, "oracle", args.split, config_hash(cfg), dataset.config_hash, None)
    else:
        if not args.run:
            raise ConfigError("eval needs --run (or --oracle)")
        out_dir = args.out or args.run
        bundle, _, metrics, _ = evaluate_run(args.run, args.split, dataset, labels)
        document = report_document(metrics, bundle.modality, args.split, bundle.sidecar["config_hash"],
                                   dataset.config_hash, bundle.sidecar["checkpoint_id"])
    echo_config(out_dir, cfg, args.run)
    write_json(os.path.join(out_dir, C.REPORT_NAME), document)
    print(f"{document['model']} on {args.split}: top1 {metrics.top1:.4f} top3 {metrics.top3:.4f} "
          f"dSE {metrics.se_drop:.4f} F1 {metrics.f1_blk:.4f} RMSE {metrics.rmse:.3f} m")


def map_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Aggregate the split's LiDAR scans and overlay true and predicted trajectories."""
    dataset, labels, cfg = load_inputs(args.data, cfg)
    out_dir = args.out or args.run
    bundle, data, metrics, predictions = evaluate_run(args.run, args.split, dataset, labels)
    point_map = aggregate_map(dataset.lidar[data.indices], cfg.map_voxel_size, cfg.lidar_range_m)
    grid = rasterize(point_map, cfg.map_cell_size)
    echo_config(out_dir, cfg, args.run)
    overlay(grid, data.truth, predictions.pose, out_dir, t=data.t, seq_ids=data.seq_ids,
            pixels_per_cell=cfg.map_pixels_per_cell, config_hash=bundle.sidecar["config_hash"])
    drift = {}
    for seq_id in np.unique(data.seq_ids):
        rows = data.seq_ids == seq_id
        drift[str(int(seq_id))] = drift_summary(data.truth[rows], predictions.pose[rows], segments=4)
    meta = map_metadata(grid, cfg.map_pixels_per_cell, len(point_map), drift, bundle.sidecar["config_hash"])
    meta["rmse"] = metrics.rmse
    meta["dataset_hash"] = dataset.config_hash
    write_json(os.path.join(out_dir, MAP_META_NAME), meta)
    print(f"Map of {len(point_map)} points written to {out_dir}; pose RMSE {metrics.rmse:.3f} m")


def render_table(rows: List[Dict[str, object]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def ablate_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    """Train the five unimodal baselines and the fusion model, then tabulate test metrics."""
    dataset, labels, cfg = load_inputs(args.data, cfg)
    echo_config(args.out, cfg)
    rows = []
    reports = {}
    for modality in C.MODALITIES + (C.FUSION_MODALITY,):
        run_dir = os.path.join(args.out, modality)
        run_cfg = apply_overrides(cfg, {"modality": modality})
        train_run(args.data, run_dir, run_cfg, dataset, labels)
        bundle, _, metrics, _ = evaluate_run(run_dir, "test", dataset, labels)
        document = report_document(metrics, modality, "test", bundle.sidecar["config_hash"],
                                   dataset.config_hash, bundle.sidecar["checkpoint_id"])
        write_json(os.path.join(run_dir, C.REPORT_NAME), document)
        reports[modality] = document
        rows.append(metrics.table_row(MODEL_LABELS[modality]))
    write_json(os.path.join(args.out, ABLATION_NAME + ".json"),
               {"dataset_hash": dataset.config_hash, "rows": rows, "reports": reports})
    write_atomic(os.path.join(args.out, ABLATION_NAME + ".csv"), render_table(rows).encode("utf-8"))
    print(render_table(rows), end="")


def plot_command(args: argparse.Namespace, cfg: RunConfig) -> None:
    logs = {}
    for run_dir in args.runs:
        name = os.path.basename(os.path.normpath(run_dir))
        path = os.path.join(run_dir, C.TRAIN_LOG_NAME)
        if not os.path.exists(path):
            raise DatasetIOError("No training log in run directory", path=path)
        sidecar_path = os.path.join(run_dir, C.CHECKPOINT_SIDECAR_NAME)
        if os.path.exists(sidecar_path):
            name = MODEL_LABELS.get(read_json(sidecar_path).get("modality"), name)
        if name in logs:
            name = f"{name} ({os.path.basename(os.path.normpath(run_dir))})"
        logs[name] = path
    paths = plot_runs(logs, args.out)
    echo_config(args.out, cfg)
    print(f"Figures written: {', '.join(sorted(paths.values()))}")


COMMANDS = {
    "gen": gen_command,
    "train": train_command,
    "eval": eval_command,
    "map": map_command,
    "ablate": ablate_command,
    "plot": plot_command,
}


if __name__ == "__main__":
    sys.exit(main())
