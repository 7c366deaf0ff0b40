"""
main.py - LatentSLAM command-line entry point
Ties the simulator, the latent model, the SLAM pipeline, evaluation and
plotting together behind one argparse CLI.

Exit codes: 0 success, 1 runtime or IO failure, 2 validation failure.
"""


from dotenv import load_dotenv

load_dotenv()

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

# Add the parent directory to Python path for imports
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config import RunConfig, add_config_arguments, load_run_config, overrides_from_args
from domain import (
    Action,
    FrameRecord,
    InputError,
    LatentSlamError,
    OdometryDelta,
    Pose2D,
    ValidationError,
    atomic_write,
)
from evaluation import calibrate_match_threshold, dead_reckoning_error, latent_separation, pixel_separation
from experience_map import load_map, save_edge_list, save_map, topology_metrics
from latent_model import (
    LatentModel,
    LatentSample,
    ModelConfig,
    encode_sequence,
    load_checkpoint,
    resume_optimizer_state,
    save_checkpoint,
    train,
)
from plotting import map_svg, reports_svg, save_svg
from pose_cells import save_snapshot
from sim_dataset import (
    DatasetManifest,
    SequenceData,
    WarehouseRenderer,
    dead_reckon,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from slam_pipeline import (
    SlamState,
    finish_run,
    process_frame,
    read_reports,
    run_sequence,
    summarize,
    write_reports,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
MAP_FILE = "map.json"
REPORTS_FILE = "reports.jsonl"
EDGES_FILE = "edges.csv"


# ---------------------------
# Helpers
# ---------------------------

def _select_sequence(sequences: Sequence[SequenceData], name: Optional[str]) -> SequenceData:
    if name is None:
        return sequences[0]
    for seq in sequences:
        if seq.name == name:
            return seq
    raise ValidationError(f"no sequence named {name!r}; have {[s.name for s in sequences]}")


def _data_model_config(cfg: RunConfig, manifest: DatasetManifest) -> ModelConfig:
    """Model architecture from the config, observation and action sizes from the data."""
    return replace(cfg.model_config(), obs_shape=tuple(manifest.image_shape), action_dim=int(manifest.action_dim))


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise ValidationError(f"{what} not found: {path}")


def _write_json(data, path: str) -> None:
    with atomic_write(path) as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def exit_code_for(error: BaseException) -> int:
    """2 for bad or missing inputs, 1 for everything else (corrupt files included)."""
    if isinstance(error, ValidationError):
        return 2
    if isinstance(error, InputError) and error.missing:
        return 2
    return 1


# ---------------------------
# Commands
# ---------------------------

def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = cfg.dataset_spec()
    print(f"🔧 Generating {spec.num_sequences} sequences through {spec.warehouse.num_aisles} aisles "
          f"(aliasing {spec.warehouse.aliasing_level}, seed {spec.seed})...")
    sequences = generate_dataset(spec, max_workers=args.workers)
    manifest = save_dataset(sequences, args.out, spec)
    print(f"✅ Dataset written to {args.out}: {len(manifest.sequences)} sequences, {manifest.total_frames} frames")
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    sequences, manifest = load_dataset(args.dataset)
    model_config = _data_model_config(cfg, manifest)
    train_config = cfg.train_config()

    start_epoch, optimizer_state = 0, None
    if args.resume:
        checkpoint = load_checkpoint(args.resume, expected=model_config)
        model = checkpoint.model
        start_epoch = checkpoint.epoch
        optimizer_state = resume_optimizer_state(checkpoint, train_config.learning_rate)
        print(f"📄 Resuming from {args.resume} at epoch {start_epoch}")
    else:
        model = LatentModel.initialize(model_config, seed=train_config.seed)

    print(f"🚀 Training {model.param_count} parameters on {manifest.total_frames} frames "
          f"for epochs {start_epoch + 1}..{train_config.epochs}")
    result = train(model, [s.frames for s in sequences], train_config,
                   start_epoch=start_epoch, optimizer_state=optimizer_state)

    save_checkpoint(args.out, model, train_config, result.epoch, result.final_loss, result.optimizer)
    loss_csv = args.loss_csv or os.path.splitext(args.out)[0] + "_loss.csv"
    with atomic_write(loss_csv) as fh:
        result.history.to_csv(fh, index=False, float_format="%.17g")
    if result.final_loss is not None:
        print(f"✅ Checkpoint written to {args.out} (free energy {result.final_loss:.4f}); log in {loss_csv}")
    else:
        print(f"⚠️ Nothing to train, checkpoint already at epoch {result.epoch}; written to {args.out}")
    return 0


def cmd_slam(args: argparse.Namespace, cfg: RunConfig) -> int:
    sequences, manifest = load_dataset(args.dataset)
    seq = _select_sequence(sequences, args.sequence)
    checkpoint = load_checkpoint(args.checkpoint, expected=_data_model_config(cfg, manifest))
    slam_config = cfg.slam_config(checkpoint_path=args.checkpoint)

    print(f"🤖 Running SLAM on {seq.name} ({len(seq)} frames)...")
    state, reports = run_sequence(seq.frames, checkpoint.model, slam_config, pipelined=args.pipelined)
    if cfg.final_optimize:
        finish_run(state)

    os.makedirs(args.out, exist_ok=True)
    save_map(state.map, state.store, os.path.join(args.out, MAP_FILE))
    write_reports(reports, os.path.join(args.out, REPORTS_FILE))
    save_edge_list(state.map, os.path.join(args.out, EDGES_FILE))
    if args.grid_snapshot:
        save_snapshot(state.grid, args.grid_snapshot)

    summary = summarize(state, reports)
    print(f"✅ nodes={summary['nodes']} links={summary['links']} loop_closures={summary['loop_closures']} "
          f"view_cells={summary['view_cells']} mean_latency_ms={summary['mean_latency_ms']:.2f}")
    return 0


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require_file(args.map, "map file")
    exp_map, _ = load_map(args.map)
    sequences, manifest = load_dataset(args.dataset)
    seq = _select_sequence(sequences, args.sequence)
    if any(p is None for p in seq.ground_truth):
        raise ValidationError(f"{seq.name} has frames without ground truth")
    reports_path = args.reports or os.path.join(os.path.dirname(os.path.abspath(args.map)), REPORTS_FILE)
    active = None
    if args.reports or os.path.isfile(reports_path):
        active = [r.experience_id for r in read_reports(reports_path)]
        logger.info(f"Per-frame revisit rate from {reports_path}")

    metrics = {
        "sequence": seq.name,
        "topology": topology_metrics(exp_map, seq.ground_truth, cfg.revisit_radius,
                                     cfg.heading_tolerance, cfg.min_frame_gap, active).to_dict(),
        "dead_reckoning": dead_reckoning_error(seq.frames).to_dict(),
    }

    # revisits only: pairs closer than min_frame_gap frames are neighbours on the path
    separation_args = dict(place_radius=cfg.place_radius, heading_tolerance=cfg.heading_tolerance,
                           min_frame_gap=cfg.min_frame_gap, seed=cfg.seed)
    observations = np.stack([f.observation.pixels for f in seq.frames])
    metrics["pixel_separation"] = _separation_or_none(pixel_separation, observations, seq, separation_args)
    metrics["latent_separation"] = None
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint, expected=_data_model_config(cfg, manifest))
        latents = np.stack([s.values for s in encode_sequence(checkpoint.model, seq.frames)])
        metrics["latent_separation"] = _separation_or_none(latent_separation, latents, seq, separation_args)

    _write_json(metrics, args.out)
    topo = metrics["topology"]
    print(f"📊 closures {topo['loop_closure_count']} (false {topo['false_closures']}), "
          f"revisit match rate {topo['revisit_match_rate']}, mean node error {topo['mean_node_error']:.3f} m")
    print(f"✅ Metrics written to {args.out}")
    return 0


def cmd_calibrate(args: argparse.Namespace, cfg: RunConfig) -> int:
    sequences, manifest = load_dataset(args.dataset)
    seq = _select_sequence(sequences, args.sequence)
    if any(p is None for p in seq.ground_truth):
        raise ValidationError(f"{seq.name} has frames without ground truth")
    checkpoint = load_checkpoint(args.checkpoint, expected=_data_model_config(cfg, manifest))
    codes = np.stack([s.values for s in encode_sequence(checkpoint.model, seq.frames)])
    threshold = calibrate_match_threshold(codes, seq.ground_truth, args.separation,
                                          args.distinct_heading, args.margin)
    print(f"📊 match_threshold={threshold:.6g} from {seq.name} ({len(seq)} frames)")
    if args.out:
        with atomic_write(args.out) as fh:
            fh.write(f"match_threshold={threshold!r}\n")
        print(f"✅ Config line written to {args.out}; pass it with --config")
    return 0


def _separation_or_none(fn, features, seq: SequenceData, kwargs):
    try:
        return fn(features, seq.ground_truth, **kwargs).to_dict()
    except ValidationError as e:
        logger.warning(f"Place separation skipped for {seq.name}: {e}")
        return None


def cmd_plot(args: argparse.Namespace, cfg: RunConfig) -> int:
    _require_file(args.input, "plot input")
    trace = None
    if args.dataset:
        sequences, _ = load_dataset(args.dataset)
        trace = dead_reckon(_select_sequence(sequences, args.sequence).frames)

    try:
        if args.input.endswith(".jsonl"):
            svg = reports_svg(read_reports(args.input), trace=trace, size=args.size)
        else:
            exp_map, _ = load_map(args.input)
            svg = map_svg(exp_map, trace=trace, size=args.size)
    except InputError as e:
        # a figure is only drawn from a well-formed map or report stream
        raise ValidationError(f"plot input {args.input}: {e}") from e
    save_svg(svg, args.out)
    print(f"✅ Figure written to {args.out}")
    return 0


def _bench_frame(cfg: RunConfig, model_config: ModelConfig) -> FrameRecord:
    spec = cfg.warehouse_spec()
    pose = Pose2D(spec.aisle_length / 2.0, 0.0, 0.0)
    observation = WarehouseRenderer(spec, model_config.obs_shape).render(pose)
    step = OdometryDelta(0.1, 0.0, 0.0)
    return FrameRecord(1, observation, Action.zero(model_config.action_dim), step, pose)


def _median_ms(fn, warmup: int, repeats: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(samples))


def cmd_bench(args: argparse.Namespace, cfg: RunConfig) -> int:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).model
    else:
        model = LatentModel.initialize(cfg.model_config(), seed=cfg.seed)
    frame = _bench_frame(cfg, model.config)
    slam_config = cfg.slam_config()
    prev = LatentSample.zero(model.latent_dim)
    state = SlamState.initial(slam_config, model.latent_dim)
    print(f"⏱️ Benchmarking D={model.latent_dim}, observation {model.config.obs_shape}, "
          f"grid {slam_config.can.shape} ({args.warmup} warm-up, {args.repeats} timed runs)")

    def run_frame():
        process_frame(state, frame, model, slam_config)

    result = {
        "encode_ms": _median_ms(lambda: model.encode(prev, frame.action, frame.observation), args.warmup, args.repeats),
        "process_frame_ms": _median_ms(run_frame, args.warmup, args.repeats),
        "latent_dim": model.latent_dim,
        "obs_shape": list(model.config.obs_shape),
        "grid_shape": list(slam_config.can.shape),
        "repeats": args.repeats,
    }
    print(f"📊 median encode {result['encode_ms']:.2f} ms, median process_frame {result['process_frame_ms']:.2f} ms")
    if args.out:
        _write_json(result, args.out)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "slam": cmd_slam,
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
    "plot": cmd_plot,
    "bench": cmd_bench,
}


# ---------------------------
# Argument parsing
# ---------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Path to a KEY=value configuration file")
    add_config_arguments(common)

    parser = argparse.ArgumentParser(
        description="LatentSLAM: topological mapping from learned latent codes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s simulate --out data/warehouse
  %(prog)s train --dataset data/warehouse --out runs/model.npz --epochs 100
  %(prog)s slam --dataset data/warehouse --checkpoint runs/model.npz --out runs/slam
  %(prog)s calibrate --dataset data/warehouse --checkpoint runs/model.npz --out runs/threshold.env
  %(prog)s eval --map runs/slam/map.json --dataset data/warehouse --out runs/metrics.json
  %(prog)s plot --input runs/slam/map.json --dataset data/warehouse --out runs/map.svg
  %(prog)s bench --checkpoint runs/model.npz

Environment Variables:
  LATENTSLAM_<KEY>=value      # any config key, e.g. LATENTSLAM_LATENT_DIM=16
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Generate a synthetic warehouse dataset")
    p.add_argument("--out", required=True, help="Dataset directory (must not exist or be empty)")
    p.add_argument("--workers", type=int, default=None, help="Parallel sequence workers")

    p = sub.add_parser("train", parents=[common], help="Train the latent model by free-energy minimization")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--out", required=True, help="Checkpoint path (.npz)")
    p.add_argument("--resume", help="Checkpoint to continue training from")
    p.add_argument("--loss-csv", help="Training log CSV (default: <out>_loss.csv)")

    p = sub.add_parser("slam", parents=[common], help="Run SLAM over one dataset sequence")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--checkpoint", required=True, help="Trained model checkpoint")
    p.add_argument("--out", required=True, help=f"Output directory for {MAP_FILE}, {REPORTS_FILE}, {EDGES_FILE}")
    p.add_argument("--sequence", help="Sequence name (default: first)")
    p.add_argument("--grid-snapshot", help="Also write the final pose-cell activity as JSON")
    p.add_argument("--pipelined", action="store_true", help="Encode on a worker thread ahead of the map update")

    p = sub.add_parser("eval", parents=[common], help="Score a map against ground truth")
    p.add_argument("--map", required=True, help="Map file written by slam")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--out", required=True, help="Metrics JSON path")
    p.add_argument("--sequence", help="Sequence the map was built from (default: first)")
    p.add_argument("--checkpoint", help="Model checkpoint for latent separation statistics")
    p.add_argument("--reports", help=f"Frame reports for the per-frame revisit rate (default: {REPORTS_FILE} next to the map)")

    p = sub.add_parser("calibrate", parents=[common], help="Derive match_threshold from a sequence with ground truth")
    p.add_argument("--dataset", required=True, help="Dataset directory")
    p.add_argument("--checkpoint", required=True, help="Trained model checkpoint")
    p.add_argument("--sequence", help="Calibration sequence (default: first)")
    p.add_argument("--separation", type=float, default=0.1, help="Meters apart for two frames to be distinct places")
    p.add_argument("--distinct-heading", type=float, default=0.1, help="Radians apart for two frames to be distinct places")
    p.add_argument("--margin", type=float, default=0.5, help="Fraction of the closest distinct-place distance")
    p.add_argument("--out", help="Write a KEY=value config file with the threshold")

    p = sub.add_parser("plot", parents=[common], help="Render a map or report stream as SVG")
    p.add_argument("--input", required=True, help="Map file (.json) or frame reports (.jsonl)")
    p.add_argument("--out", required=True, help="SVG path")
    p.add_argument("--dataset", help="Dataset directory for a dead-reckoning overlay")
    p.add_argument("--sequence", help="Sequence for the overlay (default: first)")
    p.add_argument("--size", type=int, default=600, help="Canvas size in pixels")

    p = sub.add_parser("bench", parents=[common], help="Median latency of encode and process_frame")
    p.add_argument("--checkpoint", help="Model checkpoint (default: untrained model from the config)")
    p.add_argument("--warmup", type=int, default=5, help="Warm-up runs")
    p.add_argument("--repeats", type=int, default=50, help="Timed runs")
    p.add_argument("--out", help="Also write the numbers as JSON")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Command-line entry point"""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides_from_args(args))
    except ValidationError as e:
        print(f"❌ Invalid configuration: {e}")
        return 2

    logging.basicConfig(level=getattr(logging, cfg.log_level.upper()), format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args, cfg)
    except (LatentSlamError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ {e}")
        return code


if __name__ == "__main__":
    sys.exit(main())
