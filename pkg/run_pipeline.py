#!/usr/bin/env python3
"""
run_pipeline.py

Orchestrator script that runs the complete blur ablation:
1. Synthesise a blurred sequence with ground truth
2. Track it with the blur-aware tracker (mba)
3. Track it with the sharp model on the blurred frames (blur-naive)
4. Evaluate both trajectories against the ground truth

Usage:
    python run_pipeline.py
    python run_pipeline.py --workdir runs/shake --seed 7 --n-frames 40

    Optional arguments:
    --skip-synth              Reuse an existing dataset in <workdir>/dataset
    --config FILE             Tracker configuration passed to both track runs
"""

import argparse
import os
import subprocess
import sys

import evaluation


def run_command(description: str, command: list):
    """Run a command and handle errors."""
    print(f"\n{'='*60}")
    print(f">> {description}")
    print(f"{'='*60}")
    print(f"Command: {' '.join(command)}\n")

    result = subprocess.run(command, capture_output=False, text=True)

    if result.returncode != 0:
        print(f"\n[ERROR] {description} failed with exit code {result.returncode}")
        sys.exit(1)

    print(f"\n[SUCCESS] {description} completed successfully!")
    return result


def main():
    parser = argparse.ArgumentParser(
        description="Run the synth -> track -> eval blur ablation"
    )
    parser.add_argument(
        "--workdir",
        default=os.path.join("runs", "ablation"),
        help="Directory for the dataset and both tracking runs"
    )
    parser.add_argument(
        "--kind",
        default="sinusoidal_shake",
        help="Trajectory generator passed to synth"
    )
    parser.add_argument(
        "--n-frames",
        type=int,
        default=100,
        help="Frames to synthesise"
    )
    parser.add_argument(
        "--exposure",
        type=float,
        default=0.02,
        help="Exposure time in seconds"
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Seed for the texture and the tracker"
    )
    parser.add_argument(
        "--config",
        default=None,
        help="Tracker key = value configuration used by both modes"
    )
    parser.add_argument(
        "--skip-synth",
        action="store_true",
        help="Reuse an existing dataset instead of rendering a new one"
    )

    args = parser.parse_args()

    dataset = os.path.join(args.workdir, "dataset")
    runs = {mode: os.path.join(args.workdir, mode) for mode in ("mba", "blur-naive")}
    gt_file = os.path.join(dataset, "groundtruth.txt")

    print("\n" + "="*60)
    print("MOTION BLUR ABLATION PIPELINE")
    print("="*60)
    print(f"Workdir:        {args.workdir}")
    print(f"Trajectory:     {args.kind}, {args.n_frames} frames, exposure {args.exposure} s")
    print(f"Seed:           {args.seed}")
    print("="*60)

    # Step 1: Synthesise the dataset
    if args.skip_synth:
        if not os.path.isfile(os.path.join(dataset, "frames.txt")):
            print(f"[ERROR] No dataset found in {dataset}")
            sys.exit(1)
        print(f"\n[INFO] Reusing dataset in {dataset} (--skip-synth)")
    else:
        synth_cmd = [
            sys.executable, "cli.py", "synth",
            "--output", dataset,
            "--kind", args.kind,
            "--n-frames", str(args.n_frames),
            "--exposure", str(args.exposure),
            "--seed", str(args.seed),
        ]
        run_command("Step 1: Synthesise blurred sequence", synth_cmd)

    # Steps 2-3: Track with both models
    for step, (mode, out) in enumerate(runs.items(), start=2):
        track_cmd = [
            sys.executable, "cli.py", "track",
            "--dataset", dataset,
            "--output", out,
            "--mode", mode,
            "--seed", str(args.seed),
        ]
        if args.config:
            track_cmd += ["--config", args.config]
        run_command(f"Step {step}: Track ({mode})", track_cmd)

    # Step 4: Evaluate both
    for mode, out in runs.items():
        eval_cmd = [
            sys.executable, "cli.py", "eval",
            os.path.join(out, "trajectory.txt"), gt_file,
            "--report", os.path.join(out, "report.txt"),
            "--endpoints", os.path.join(out, "endpoints.txt"),
        ]
        run_command(f"Step 4: Evaluate ({mode})", eval_cmd)

    # Final summary
    print("\n" + "="*60)
    print("PIPELINE COMPLETED SUCCESSFULLY!")
    print("="*60)

    gt = evaluation.read_tum(gt_file)
    rmse = {}
    for mode, out in runs.items():
        est = evaluation.read_tum(os.path.join(out, "trajectory.txt"))
        rmse[mode] = evaluation.compute_ate(est, gt).rmse
        print(f"  RMSE ATE {mode + ':':12s} {rmse[mode]:.6f} m")
    if rmse["mba"] > 0:
        print(f"  Ablation ratio (blur-naive / mba): {rmse['blur-naive'] / rmse['mba']:.2f}x")
    print()


if __name__ == "__main__":
    main()
