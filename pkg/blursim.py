"""
blursim.py

Synthetic motion-blur datasets: a textured plane viewed by a pinhole camera
moving along a smooth ground-truth trajectory. Blurred frames are the mean of
sharp renders at evenly spaced virtual poses inside each exposure.

Dataset layout written by generate_sequence():

  calib.txt        fx fy cx cy width height
  frames.txt       timestamp exposure blurred_file sharp_file depth_file
  groundtruth.txt  TUM rows (timestamp tx ty tz qx qy qz qw), world-from-camera,
                   at exposure start, mid-exposure and exposure end of every frame
  blurred/NNNNNN.pgm, sharp/NNNNNN.pgm (mid-exposure), depth/NNNNNN.pfm
"""

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from camera import PinholeCamera, backproject_depth_many, load_calib, project_many, save_calib
from errors import BadParams, CameraBehindPlane, IoError
from evaluation import Trajectory, read_tum, write_tum
from imgproc import (GrayImage, ensure_dir, load_pfm, load_pgm, sample_bilinear_many, save_pfm,
                     save_pgm)
from lie import LocalTrajectory, Pose, se3_exp

DEFAULT_SAMPLES = 64

# Textures below this mean gradient leave the alignment ill-posed.
MIN_TEXTURE_GRADIENT = 0.01

FRAMES_COLUMNS = ["timestamp", "exposure", "blurred", "sharp", "depth"]


@dataclass(frozen=True, eq=False)
class PlanarScene:
    """Texture on the world plane z = depth, centred on the world z axis."""

    texture: GrayImage
    depth: float
    texel_size: float

    def __post_init__(self):
        if not self.depth > 0 or not self.texel_size > 0:
            raise BadParams(f"scene depth and texel size must be positive "
                            f"(depth={self.depth}, texel={self.texel_size})")
        energy = self.texture.mean_gradient_magnitude()
        if energy <= MIN_TEXTURE_GRADIENT:
            raise BadParams(f"texture gradient energy {energy:.4f} is too low to track")


@dataclass(frozen=True, eq=False)
class FrameSpec:
    timestamp: float
    exposure: float
    gt_trajectory: LocalTrajectory


@dataclass(frozen=True)
class TrajectoryParams:
    frame_rate: float = 27.0
    n_frames: int = 100
    exposure: float = 0.02
    # Linear ramp of exposure over the sequence; None keeps it constant.
    exposure_end: Optional[float] = None
    velocity: tuple = (0.0, 0.0, 0.0)
    angular_velocity: tuple = (0.0, 0.0, 0.0)
    amplitude: float = 0.0
    frequency: float = 1.0
    rot_amplitude: float = 0.0
    axis: tuple = (1.0, 0.0, 0.0)
    rot_axis: tuple = (0.0, 1.0, 0.0)
    origin: Pose = field(default_factory=Pose.identity)


def make_noise_texture(size: int, seed: int, sigma: float = 2.0) -> GrayImage:
    """Band-limited random texture, stretched to [0.05, 0.95]."""
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.standard_normal((size, size)), sigma=sigma, mode="wrap")
    lo, hi = noise.min(), noise.max()
    return GrayImage(0.05 + 0.9 * (noise - lo) / (hi - lo))


def _plane_intersections(scene: PlanarScene, cam: PinholeCamera, pose: Pose):
    """World hit point and camera depth of every pixel ray."""
    u, v = cam.pixel_grid()
    rays = backproject_depth_many(cam, np.stack((u, v), axis=-1), 1.0)
    dirs = rays @ pose.rotation.T
    dz = dirs[..., 2]
    if not np.all(dz > 0) or not pose.t[2] < scene.depth:
        raise CameraBehindPlane("some pixel rays do not reach the plane in front of the camera")
    s = (scene.depth - pose.t[2]) / dz
    return s[..., None] * dirs + pose.t, s


def render_sharp(scene: PlanarScene, cam: PinholeCamera, pose: Pose) -> GrayImage:
    """Render the plane from a world-from-camera pose.

    Pixels whose rays miss the texture are 0 and False in the returned mask.
    """
    hits, _ = _plane_intersections(scene, cam, pose)
    tex = scene.texture
    tu = hits[..., 0] / scene.texel_size + 0.5 * (tex.width - 1)
    tv = hits[..., 1] / scene.texel_size + 0.5 * (tex.height - 1)
    values, valid = sample_bilinear_many(tex, tu, tv)
    return GrayImage(values, mask=valid)


def render_depth(scene: PlanarScene, cam: PinholeCamera, pose: Pose) -> np.ndarray:
    """Camera-frame z of the plane at every pixel."""
    _, s = _plane_intersections(scene, cam, pose)
    return s


def render_blurred(scene: PlanarScene, cam: PinholeCamera, frame: FrameSpec,
                   n: int = DEFAULT_SAMPLES) -> GrayImage:
    """Mean of n sharp renders at the exposure's evenly spaced virtual poses."""
    if n < 1:
        raise BadParams(f"sample count must be >= 1, got {n}")
    traj = frame.gt_trajectory
    if n == 1 or not np.any(traj.relative_twist):
        return render_sharp(scene, cam, traj.start)
    renders = [render_sharp(scene, cam, pose) for pose in traj.virtual_poses(n)]
    mean = np.mean(np.stack([r.pixels for r in renders]), axis=0)
    mask = np.logical_and.reduce([r.mask for r in renders])
    return GrayImage(mean, mask=mask)


def streak_length(scene: PlanarScene, cam: PinholeCamera, frame: FrameSpec,
                  n: int = 16, grid: int = 8) -> float:
    """Mean pixel path length, over the exposure, of plane points seen mid-exposure."""
    traj = frame.gt_trajectory
    mid = traj.mid()
    u = np.linspace(0.1 * cam.width, 0.9 * cam.width, grid)
    v = np.linspace(0.1 * cam.height, 0.9 * cam.height, grid)
    uv = np.stack(np.meshgrid(u, v), axis=-1).reshape(-1, 2)
    depth = render_depth(scene, cam, mid)
    d = depth[np.clip(uv[:, 1].astype(int), 0, cam.height - 1), np.clip(uv[:, 0].astype(int), 0, cam.width - 1)]
    world = mid.apply(backproject_depth_many(cam, uv, d))

    path = []
    for pose in traj.virtual_poses(max(n, 2)):
        pix, _ = project_many(cam, pose.inverse().apply(world))
        path.append(pix)
    path = np.stack(path)
    return float(np.mean(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=-1), axis=0)))


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------

def _constant_velocity(p: TrajectoryParams) -> Callable[[float], Pose]:
    # Angular velocity in the camera frame, linear velocity in the world frame.
    omega = np.asarray(p.angular_velocity, dtype=float)
    velocity = np.asarray(p.velocity, dtype=float)

    def pose_at(t: float) -> Pose:
        rot = se3_exp(np.concatenate((omega * t, np.zeros(3))))
        return Pose((p.origin @ rot).q, p.origin.t + velocity * t)
    return pose_at


def _sinusoidal_shake(p: TrajectoryParams) -> Callable[[float], Pose]:
    axis = np.asarray(p.axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    rot_axis = np.asarray(p.rot_axis, dtype=float)
    rot_axis = rot_axis / np.linalg.norm(rot_axis)
    w = 2.0 * np.pi * p.frequency

    def pose_at(t: float) -> Pose:
        offset = p.amplitude * np.sin(w * t) * axis
        angle = p.rot_amplitude * np.sin(w * t)
        rot = se3_exp(np.concatenate((angle * rot_axis, np.zeros(3))))
        return Pose((p.origin @ rot).q, p.origin.t + offset)
    return pose_at


TRAJECTORY_KINDS = {
    "constant_velocity": _constant_velocity,
    "sinusoidal_shake": _sinusoidal_shake,
}


def synth_trajectory(kind: str, params: TrajectoryParams) -> list[FrameSpec]:
    if kind not in TRAJECTORY_KINDS:
        raise BadParams(f"unknown trajectory kind '{kind}' (choose from {sorted(TRAJECTORY_KINDS)})")
    p = params
    if not p.frame_rate > 0 or p.n_frames < 1:
        raise BadParams(f"need frame_rate > 0 and n_frames >= 1 (got {p.frame_rate}, {p.n_frames})")
    if p.frequency < 0 or p.amplitude < 0 or p.rot_amplitude < 0:
        raise BadParams("amplitudes and frequency must be non-negative")

    period = 1.0 / p.frame_rate
    exposure_end = p.exposure if p.exposure_end is None else p.exposure_end
    exposures = np.linspace(p.exposure, exposure_end, p.n_frames)
    if np.any(exposures < 0) or np.any(exposures > period):
        raise BadParams(f"exposures must lie in [0, {period:.6f}] s at {p.frame_rate} fps")

    pose_at = TRAJECTORY_KINDS[kind](p)
    frames = []
    for i, tau in enumerate(exposures):
        t0 = i * period
        tau = float(tau)
        traj = LocalTrajectory(pose_at(t0), pose_at(t0 + tau), tau)
        frames.append(FrameSpec(t0, tau, traj))
    return frames


# --------------------------------------------------------------------------
# Dataset files
# --------------------------------------------------------------------------

def groundtruth_trajectory(frames: list[FrameSpec]) -> Trajectory:
    """Start, mid and end poses per frame; a repeated timestamp is kept once."""
    stamps, poses = [], []
    for f in frames:
        traj = f.gt_trajectory
        samples = [(f.timestamp, traj.start)]
        if f.exposure > 0:
            samples += [(f.timestamp + 0.5 * f.exposure, traj.mid()),
                        (f.timestamp + f.exposure, traj.end)]
        for t, pose in samples:
            t = round(t, 9)
            if stamps and t <= stamps[-1]:
                continue
            stamps.append(t)
            poses.append(pose)
    return Trajectory(np.array(stamps), poses)


def generate_sequence(scene: PlanarScene, cam: PinholeCamera, frames: list[FrameSpec],
                      n: int, output_dir: str, progress=None) -> pd.DataFrame:
    """Render every frame and write the dataset; returns the frames.txt table.

    `progress` wraps the frame iterator (the CLI passes tqdm).
    """
    for sub in ("blurred", "sharp", "depth"):
        ensure_dir(os.path.join(output_dir, sub))
    save_calib(os.path.join(output_dir, "calib.txt"), cam)

    records = []
    iterator = enumerate(frames)
    if progress is not None:
        iterator = progress(iterator, total=len(frames))
    for i, frame in iterator:
        mid = frame.gt_trajectory.mid()
        names = (f"blurred/{i:06d}.pgm", f"sharp/{i:06d}.pgm", f"depth/{i:06d}.pfm")
        save_pgm(os.path.join(output_dir, names[0]), render_blurred(scene, cam, frame, n))
        save_pgm(os.path.join(output_dir, names[1]), render_sharp(scene, cam, mid))
        save_pfm(os.path.join(output_dir, names[2]), render_depth(scene, cam, mid))
        records.append([frame.timestamp, frame.exposure, *names])

    table = pd.DataFrame(records, columns=FRAMES_COLUMNS)
    try:
        table.to_csv(os.path.join(output_dir, "frames.txt"), sep=" ", header=False,
                     index=False, float_format="%.9f")
    except OSError as e:
        raise IoError(f"cannot write frames.txt in {output_dir}: {e}") from e
    write_tum(os.path.join(output_dir, "groundtruth.txt"), groundtruth_trajectory(frames))
    return table


@dataclass(frozen=True, eq=False)
class Dataset:
    """A sequence directory in the layout generate_sequence() writes."""

    root: str
    camera: PinholeCamera
    frames: pd.DataFrame
    groundtruth: Optional[Trajectory]

    def __len__(self):
        return len(self.frames)

    def _path(self, i: int, column: str) -> str:
        return os.path.join(self.root, self.frames.iloc[i][column])

    def blurred(self, i: int) -> GrayImage:
        return load_pgm(self._path(i, "blurred"))

    def sharp(self, i: int) -> GrayImage:
        return load_pgm(self._path(i, "sharp"))

    def depth(self, i: int, depth_dir: Optional[str] = None) -> np.ndarray:
        if depth_dir is None:
            return load_pfm(self._path(i, "depth"))
        return load_pfm(os.path.join(depth_dir, os.path.basename(self.frames.iloc[i]["depth"])))


def load_dataset(root: str) -> Dataset:
    frames_path = os.path.join(root, "frames.txt")
    if not os.path.isfile(frames_path):
        raise IoError(f"not a dataset directory (no frames.txt): {root}")
    try:
        frames = pd.read_csv(frames_path, sep=r"\s+", comment="#", header=None,
                             names=FRAMES_COLUMNS, dtype={c: str for c in FRAMES_COLUMNS[2:]})
    except (OSError, ValueError) as e:
        raise IoError(f"cannot parse {frames_path}: {e}") from e
    if frames.isna().any().any():
        raise IoError(f"{frames_path}: every row needs '{' '.join(FRAMES_COLUMNS)}'")

    gt_path = os.path.join(root, "groundtruth.txt")
    gt = read_tum(gt_path) if os.path.isfile(gt_path) else None
    return Dataset(root, load_calib(os.path.join(root, "calib.txt")), frames, gt)
