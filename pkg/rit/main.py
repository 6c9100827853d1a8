"""Main orchestrator – parses the command line and runs one pipeline command."""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np

from .config import DATA_DIR, RUNS_DIR, PipelineConfig, load_config, miniature_config, resolve_seed, rng_for, save_config
from .errors import ContractError, RitError
from .gradcheck import format_table, run_all
from .metrics import PanopticEvaluator, PanopticResult, threshold_baseline
from .model import predict, predict_offset
from .output import (
    frame_key,
    ground_truth,
    load_dataset,
    load_graph,
    load_predictions,
    match_frames,
    save_partition,
    save_predictions,
    save_report,
    save_sequence,
    write_json,
)
from .partition import assign_instances, modularity, partition_graph
from .pointcloud import NO_INSTANCE, scene_statistics, synth_scene
from .train import build_model, load_checkpoint, train

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

# flag dest → config field
FLAG_FIELDS = {
    "T": "model.T",
    "align_poses": "model.align_poses",
    "n_sequences": "synth.n_sequences",
    "n_frames": "synth.n_frames",
    "n_instances": "synth.n_instances",
    "static_points": "synth.static_points",
    "noise_fraction": "synth.noise_fraction",
    "tangential_fraction": "synth.tangential_fraction",
    "pose_noise": "synth.pose_noise",
    "epochs": "train.epochs",
    "batch_size": "train.batch_size",
    "optimizer": "train.optimizer",
    "lr": "train.lr",
    "augment": "train.augment",
    "radius": "partition.radius",
    "v_threshold": "baseline.v_threshold",
    "cluster_radius": "baseline.cluster_radius",
    "offset_head": "head.offset_head",
    "top_level": "backbone.top_level",
}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def build_config(args: argparse.Namespace) -> PipelineConfig:
    """defaults < --config file < flags < $RIT_SEED."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "miniature", False):
        cfg = miniature_config()
    else:
        cfg = PipelineConfig()
    for dest, dotted in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg.override(dotted, value)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    resolve_seed(cfg)
    cfg.validate()
    return cfg


def _weights_config(weights: Path) -> Path:
    return weights.with_suffix(".config.json")


def _model_for(args: argparse.Namespace, cfg: PipelineConfig):
    weights = Path(args.weights)
    if not getattr(args, "config", None) and _weights_config(weights).is_file():
        saved = load_config(_weights_config(weights))
        saved.partition, saved.baseline = cfg.partition, cfg.baseline
        cfg = saved
    model = build_model(cfg)
    load_checkpoint(weights, model)
    return model, cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def cmd_synth(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    sequences = []
    for i in range(cfg.synth.n_sequences):
        seq = synth_scene(cfg.synth, rng_for(cfg.seed, "data", i), sequence_id=f"seq_{i:04d}")
        save_sequence(seq, out, T=cfg.model.T)
        sequences.append(seq)
    stats = scene_statistics(sequences)
    write_json(stats, out / "stats.json")
    logger.info("Scenes: %d scans, %d points, %d moving", stats["scans"], stats["points"], stats["moving_points"])
    logger.info("Instances per scan: %s", stats["instances_per_scan"])
    logger.info("Points per instance: %s", stats["points_per_instance"])
    logger.info("Static share of |v| > 0.1 m/s points: %.3f", stats["fast_points_static_share"])
    return 0


def cmd_train(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    sequences = load_dataset(args.data)
    out = Path(args.out)
    save_config(cfg, _weights_config(out))
    _, result = train(cfg, sequences, out_path=out, resume=args.resume)
    if result.history:
        logger.info("Loss: first epoch %.5f → last epoch %.5f", result.history[0], result.history[-1])
    write_json({"history": result.history, "parts": result.parts}, out.with_suffix(".log.json"))
    return 0


def cmd_infer(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    model, cfg = _model_for(args, cfg)
    sequences = load_dataset(args.data)
    results = {}
    for seq in sequences:
        for window in seq.windows(cfg.model.T):
            key = frame_key(seq.sequence_id, window.current.frame_id)
            if args.method == "offset":
                results[key] = predict_offset(model, window, cfg.baseline.cluster_radius)
            else:
                results[key] = predict(model, window, radius=cfg.partition.radius)
    save_predictions(results, args.out)
    return 0


def cmd_eval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    preds = load_predictions(args.pred)
    gts = ground_truth(load_dataset(args.gt))
    evaluator = PanopticEvaluator()
    for key in match_frames(preds, gts):
        evaluator.add_scan(preds[key], gts[key], name=key)
    report = evaluator.report()
    save_report(report, args.out, args.name)
    for line in report.table(args.name).splitlines():
        logger.info("%s", line)
    return 0


def cmd_gradcheck(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    hook = (lambda g: g * 1.5 + 1e-2) if args.corrupt else None
    results = run_all(seeds=args.seeds, tol=args.tol, only=args.only, analytic_hook=hook)
    table = format_table(results)
    for line in table.splitlines():
        logger.info("%s", line)
    if args.out:
        write_json([r.to_dict() for r in results], args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("Gradient check failed for: %s", ", ".join(failed))
        return 1
    return 0


def cmd_baseline(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    bc = cfg.baseline
    method = args.method or bc.method
    results = {}
    if method == "offset":
        if not args.weights:
            raise ContractError("the offset baseline needs --weights")
        model, cfg = _model_for(args, cfg)
        for seq in load_dataset(args.data):
            for window in seq.windows(cfg.model.T):
                key = frame_key(seq.sequence_id, window.current.frame_id)
                results[key] = predict_offset(model, window, bc.cluster_radius)
    else:
        for seq in load_dataset(args.data):
            for scan in seq.scans:
                results[frame_key(seq.sequence_id, scan.frame_id)] = threshold_baseline(
                    scan, bc.v_threshold, bc.cluster_radius
                )
    save_predictions(results, args.out)
    return 0


def cmd_partition(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if args.graph:
        graph = load_graph(args.graph)
        part = partition_graph(graph, cfg.partition)
        logger.info("%d nodes → %d communities, Q = %.6f", graph.n, part.count, modularity(graph, part))
        if args.out:
            save_partition(part, args.out)
        return 0

    if not args.data:
        raise ContractError("partition needs --graph or --data")
    # radius sweep on ground-truth moving points with unit similarity
    sequences = load_dataset(args.data)
    radii = args.sweep or [cfg.partition.radius]
    rows = []
    for r in radii:
        evaluator = PanopticEvaluator()
        for seq in sequences:
            for scan in seq.scans:
                instance = np.full(scan.n, NO_INSTANCE, dtype=np.int64)
                if scan.moving.any():
                    instance[scan.moving] = assign_instances(scan.xyz[scan.moving], None, r, cfg.partition).assignment
                evaluator.add_scan(PanopticResult(scan.moving, instance), PanopticResult.from_scan(scan))
        report = evaluator.report()
        rows.append({"radius": r, "pq_mov": report.pq_mov, "sq_mov": report.sq_mov, "rq_mov": report.rq_mov})
        logger.info("r = %5.2f  PQ^mov %6.2f  SQ^mov %6.2f  RQ^mov %6.2f", r, report.pq_mov, report.sq_mov, report.rq_mov)
    if args.out:
        write_json(rows, args.out)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
    "partition": cmd_partition,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------
def _bool_flag(parser: argparse.ArgumentParser, name: str, help_text: str) -> None:
    parser.add_argument(f"--{name.replace('_', '-')}", dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (PipelineConfig layout)")
    common.add_argument("--seed", type=int, help="master seed ($RIT_SEED wins)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    common.add_argument("--miniature", action="store_true", help="desk-scale model widths 16/32/64/128")

    parser = argparse.ArgumentParser(prog="rit", description="Moving instance segmentation for radar point clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic radar sequences")
    p.add_argument("--out", default=str(DATA_DIR))
    p.add_argument("--n-sequences", dest="n_sequences", type=int)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--n-instances", dest="n_instances", type=int)
    p.add_argument("--static-points", dest="static_points", type=int)
    p.add_argument("--noise-fraction", dest="noise_fraction", type=float)
    p.add_argument("--tangential-fraction", dest="tangential_fraction", type=float)
    p.add_argument("--pose-noise", dest="pose_noise", type=float)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--data", default=str(DATA_DIR))
    p.add_argument("--out", default=str(RUNS_DIR / "model.ritw"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer", choices=["adamw", "sgd"])
    p.add_argument("--lr", type=float)
    p.add_argument("--T", dest="T", type=int)
    _bool_flag(p, "augment", "training augmentation")
    _bool_flag(p, "align_poses", "align previous scans to the current pose")
    _bool_flag(p, "offset_head", "train the offset regression head")
    _bool_flag(p, "top_level", "keep the full-resolution transformer blocks")

    p = sub.add_parser("infer", parents=[common], help="predict moving instances")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", default=str(DATA_DIR))
    p.add_argument("--out", default=str(RUNS_DIR / "pred"))
    p.add_argument("--radius", type=float)
    p.add_argument("--method", choices=["modularity", "offset"], default="modularity")

    p = sub.add_parser("eval", parents=[common], help="panoptic evaluation")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=str(RUNS_DIR / "eval"))
    p.add_argument("--name", default="rit")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--only", nargs="*")
    p.add_argument("--out")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("baseline", parents=[common], help="Doppler threshold or offset baseline")
    p.add_argument("--data", default=str(DATA_DIR))
    p.add_argument("--out", default=str(RUNS_DIR / "baseline"))
    p.add_argument("--v-threshold", dest="v_threshold", type=float)
    p.add_argument("--cluster-radius", dest="cluster_radius", type=float)
    p.add_argument("--method", choices=["threshold", "offset"])
    p.add_argument("--weights")

    p = sub.add_parser("partition", parents=[common], help="modularity partition of a graph file")
    p.add_argument("--graph")
    p.add_argument("--data", help="sweep radii over ground-truth moving points instead")
    p.add_argument("--radius", type=float)
    p.add_argument("--sweep", nargs="*", type=float)
    p.add_argument("--out")
    return parser


# ---------------------------------------------------------------------------
# Entry-point
# ---------------------------------------------------------------------------
def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    logger.info("=" * 60)
    logger.info("rit %s: starting", args.command)
    logger.info("=" * 60)
    try:
        cfg = build_config(args)
        status = COMMANDS[args.command](args, cfg)
    except (RitError, OSError) as exc:
        logger.error("✗ %s failed: %s", args.command, exc)
        status = 1
    logger.info("=" * 60)
    logger.info("Done: %s exited with status %d", args.command, status)
    logger.info("=" * 60)
    return status


if __name__ == "__main__":
    raise SystemExit(run())
