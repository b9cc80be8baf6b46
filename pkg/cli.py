#!/usr/bin/env python3
"""
cli.py

Command-line entry point for synthesising blurred sequences, tracking them,
evaluating trajectories and running the numerical self-checks.

Usage:
    python cli.py synth --output data/shake --kind sinusoidal_shake --seed 7
    python cli.py track --dataset data/shake --output runs/mba --mode mba
    python cli.py track --dataset data/shake --output runs/naive --mode blur-naive
    python cli.py eval runs/mba/trajectory.txt data/shake/groundtruth.txt \\
        --report runs/mba/report.txt --endpoints runs/mba/endpoints.txt
    python cli.py selfcheck --seed 0

    track options:
    --config FILE             key = value configuration (see config_used.txt of any run)
    --set KEY=VALUE           Override one configuration key (repeatable)
    --force-zero-exposure     Blur-aware tracker with the exposure forced to 0

Exit codes: 0 success, 1 failure (library error, failed check, every frame
dropped), 2 usage error (bad arguments or configuration).
"""

import argparse
import os
import sys
from collections import Counter

import numpy as np
from tqdm import tqdm

import blursim
import evaluation
import selfcheck
import tracker
from camera import PinholeCamera
from config import (ECHO_FILENAME, build_run_config, load_config_file, parse_overrides,
                    save_config)
from errors import BlurVOError, ConfigInvalid
from imgproc import ensure_dir

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

TRAJECTORY_FILE = "trajectory.txt"
ENDPOINTS_FILE = "endpoints.txt"
REPORT_FILE = "report.txt"


def log(msg=""):
    print(msg, flush=True)


def banner(title: str):
    log("=" * 64)
    log(title)
    log("=" * 64)


def progress(desc: str):
    def wrap(iterable, total):
        return tqdm(iterable, total=total, desc=desc, file=sys.stderr, leave=False)
    return wrap


# --------------------------------------------------------------------------
# synth
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cam = PinholeCamera(args.fx, args.fy if args.fy else args.fx,
                        (args.width - 1) / 2.0, (args.height - 1) / 2.0,
                        args.width, args.height)
    params = blursim.TrajectoryParams(
        frame_rate=args.frame_rate, n_frames=args.n_frames,
        exposure=args.exposure, exposure_end=args.exposure_end,
        velocity=tuple(args.velocity), angular_velocity=tuple(args.angular_velocity),
        amplitude=args.amplitude, frequency=args.frequency, rot_amplitude=args.rot_amplitude,
        axis=tuple(args.axis), rot_axis=tuple(args.rot_axis))

    banner("BLURRED SEQUENCE SYNTHESIS")
    log(f"Kind:       {args.kind}")
    log(f"Frames:     {args.n_frames} at {args.frame_rate} fps, exposure {args.exposure} s")
    log(f"Camera:     {cam.width}x{cam.height}, fx {cam.fx}")
    log(f"Output:     {args.output}")
    log("=" * 64)

    texture = blursim.make_noise_texture(args.texture_size, args.seed, args.texture_sigma)
    scene = blursim.PlanarScene(texture, args.scene_depth, args.texel_size)
    frames = blursim.synth_trajectory(args.kind, params)

    log(f"\n>> Rendering {len(frames)} frames with {args.samples} samples each...")
    blursim.generate_sequence(scene, cam, frames, args.samples, args.output,
                              progress=progress("render"))

    streaks = np.array([blursim.streak_length(scene, cam, f) for f in frames])
    log(f"[SUCCESS] Wrote {len(frames)} frames to {args.output}")
    log(f"\nBlur streak length (px): min {streaks.min():.2f}  "
        f"mean {streaks.mean():.2f}  max {streaks.max():.2f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# track
# --------------------------------------------------------------------------

def track_layers(args) -> tuple[dict, dict, dict]:
    """(config file, named flags, --set) layers, lowest precedence first."""
    file_values = load_config_file(args.config) if args.config else {}
    flags = {
        "dataset": args.dataset,
        "output": args.output,
        "mode": args.mode,
        "depth_source": args.depth_source,
        "depth_dir": args.depth_dir,
        "depth_noise": args.depth_noise,
        "seed": args.seed,
        "force_zero_exposure": True if args.force_zero_exposure else None,
    }
    return file_values, flags, parse_overrides(args.set)


def cmd_track(args) -> int:
    run = build_run_config(*track_layers(args))
    if not run.dataset or not run.output:
        raise ConfigInvalid("track needs a dataset and an output directory")

    dataset = blursim.load_dataset(run.dataset)
    banner("MOTION-BLUR-AWARE TRACKING")
    log(f"Dataset:    {run.dataset} ({len(dataset)} frames)")
    log(f"Mode:       {run.mode}{' (exposure forced to 0)' if run.force_zero_exposure else ''}")
    log(f"Depth:      {run.depth_source}"
        f"{f', noise sigma {run.depth_noise}' if run.depth_noise else ''}")
    log(f"Output:     {run.output}")
    log("=" * 64)
    if dataset.groundtruth is None:
        log("[WARNING] No groundtruth.txt; the first keyframe sits at the identity pose")

    ensure_dir(run.output)
    save_config(os.path.join(run.output, ECHO_FILENAME), run)

    log("\n>> Tracking...")
    seq = tracker.track_sequence(dataset, run.tracker, mode=run.mode,
                                 depth_source=run.depth_source, depth_dir=run.depth_dir,
                                 depth_noise=run.depth_noise,
                                 force_zero_exposure=run.force_zero_exposure,
                                 seed=run.seed, progress=progress("track"))

    evaluation.write_tum(os.path.join(run.output, TRAJECTORY_FILE), seq.trajectory)
    evaluation.write_tum(os.path.join(run.output, ENDPOINTS_FILE), seq.endpoints)
    tracker.write_report(os.path.join(run.output, REPORT_FILE), seq.timestamps, seq.results)

    counts = Counter(r.status.value for r in seq.results)
    fd = evaluation.frame_drop_rate(seq.results, len(seq.results))
    log(f"[SUCCESS] Wrote {TRAJECTORY_FILE}, {ENDPOINTS_FILE}, {REPORT_FILE}, {ECHO_FILENAME}")
    log("\nTracking summary:")
    for status in tracker.TrackStatus:
        log(f"  {status.value + ':':16s} {counts.get(status.value, 0)}")
    log(f"  {'Keyframes:':16s} {len(seq.keyframes)}")
    log(f"  {'Frame drops:':16s} {fd:.2f}%")

    if len(seq.trajectory) == 0:
        log("[ERROR] Every frame was dropped")
        return EXIT_FAILURE
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def cmd_eval(args) -> int:
    est = evaluation.read_tum(args.estimate)
    gt = evaluation.read_tum(args.groundtruth)
    report = evaluation.compute_ate(est, gt, mode=args.align, max_dt=args.max_dt,
                                    offset=args.offset)
    log(report.summary())
    if args.save_errors:
        report.to_csv(args.save_errors)

    if args.report:
        frames = evaluation.read_report(args.report)
        fd = evaluation.frame_drop_rate(frames["status"], len(frames))
        log(f"frame_drop_rate {fd:.2f} %")

    if args.endpoints:
        errors = evaluation.endpoint_errors(evaluation.read_tum(args.endpoints), gt)
        log(f"endpoint_pose_pairs {len(errors)} pairs")
        log(f"endpoint_rotation_error.max {errors['rotation_deg'].max():.6f} deg")
        log(f"endpoint_translation_error.max {errors['translation_m'].max():.6f} m")
        log(f"endpoint_rotation_error.median {errors['rotation_deg'].median():.6f} deg")
        log(f"endpoint_translation_error.median {errors['translation_m'].median():.6f} m")
    return EXIT_OK


# --------------------------------------------------------------------------
# selfcheck
# --------------------------------------------------------------------------

def cmd_selfcheck(args) -> int:
    results = selfcheck.run_checks(args.seed)
    log(selfcheck.format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


# --------------------------------------------------------------------------
# Arguments
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Motion-blur-aware visual odometry on synthetic planar scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Render a blurred sequence with ground truth")
    synth.add_argument("--output", required=True, help="Dataset directory to create")
    synth.add_argument("--kind", default="sinusoidal_shake", choices=sorted(blursim.TRAJECTORY_KINDS))
    synth.add_argument("--n-frames", type=int, default=100)
    synth.add_argument("--frame-rate", type=float, default=27.0)
    synth.add_argument("--exposure", type=float, default=0.02, help="Exposure time in seconds")
    synth.add_argument("--exposure-end", type=float, default=None,
                       help="Ramp the exposure linearly up to this value over the sequence")
    synth.add_argument("--velocity", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                       help="Constant world-frame velocity in m/s")
    synth.add_argument("--angular-velocity", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                       help="Constant camera-frame angular velocity in rad/s")
    synth.add_argument("--amplitude", type=float, default=0.1, help="Shake amplitude in meters")
    synth.add_argument("--frequency", type=float, default=2.0, help="Shake frequency in Hz")
    synth.add_argument("--rot-amplitude", type=float, default=0.02, help="Shake amplitude in radians")
    synth.add_argument("--axis", type=float, nargs=3, default=[1.0, 0.0, 0.0])
    synth.add_argument("--rot-axis", type=float, nargs=3, default=[0.0, 1.0, 0.0])
    synth.add_argument("--width", type=int, default=640)
    synth.add_argument("--height", type=int, default=480)
    synth.add_argument("--fx", type=float, default=500.0)
    synth.add_argument("--fy", type=float, default=None, help="Defaults to --fx")
    synth.add_argument("--scene-depth", type=float, default=2.0, help="Plane distance in meters")
    synth.add_argument("--texel-size", type=float, default=0.004, help="Meters per texture pixel")
    synth.add_argument("--texture-size", type=int, default=1024)
    synth.add_argument("--texture-sigma", type=float, default=2.0)
    synth.add_argument("--samples", type=int, default=blursim.DEFAULT_SAMPLES,
                       help="Virtual sharp frames averaged per blurred frame")
    synth.add_argument("--seed", type=int, default=0)
    synth.set_defaults(func=cmd_synth)

    track = sub.add_parser("track", help="Track a dataset and write trajectory + report")
    track.add_argument("--dataset", default=None)
    track.add_argument("--output", default=None)
    track.add_argument("--config", default=None, help="key = value configuration file")
    track.add_argument("--mode", default=None, choices=[m.value for m in tracker.TrackMode])
    track.add_argument("--force-zero-exposure", action="store_true")
    track.add_argument("--depth-source", default=None,
                       choices=[d.value for d in tracker.DepthSource])
    track.add_argument("--depth-dir", default=None, help="PFM depth maps named like the dataset's")
    track.add_argument("--depth-noise", type=float, default=None,
                       help="Sigma of multiplicative log-normal keypoint depth noise")
    track.add_argument("--seed", type=int, default=None)
    track.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    track.set_defaults(func=cmd_track)

    ev = sub.add_parser("eval", help="RMSE ATE of an estimated TUM trajectory")
    ev.add_argument("estimate")
    ev.add_argument("groundtruth")
    ev.add_argument("--align", default="rigid", choices=evaluation.ALIGN_MODES)
    ev.add_argument("--max-dt", type=float, default=evaluation.DEFAULT_MAX_DT,
                    help="Maximum timestamp difference for association (s)")
    ev.add_argument("--offset", type=float, default=0.0,
                    help="Added to the estimated timestamps before association")
    ev.add_argument("--report", default=None, help="Per-frame report, for the frame-drop rate")
    ev.add_argument("--endpoints", default=None,
                    help="Exposure start/end TUM file, compared unaligned")
    ev.add_argument("--save-errors", default=None, help="Write per-pose errors as CSV")
    ev.set_defaults(func=cmd_eval)

    check = sub.add_parser("selfcheck", help="Run the numerical self-checks")
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as e:
        log(f"[ERROR] {e}")
        return EXIT_USAGE
    except BlurVOError as e:
        log(f"[ERROR] {type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
