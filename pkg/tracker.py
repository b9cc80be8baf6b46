"""
tracker.py

Motion-blur-aware direct alignment of a blurry frame against a sharp keyframe.

The unknowns are the camera poses at exposure start and end, both relative to
the keyframe: T maps current-camera coordinates into the keyframe frame. Every
keypoint is projected into the current image with the mid-exposure pose and a
patch is cut around that anchor. Each patch pixel is compared with the mean of
the keyframe intensities it transfers to from n virtual poses along the
exposure, all through the keypoint's fronto-parallel plane. The Huber cost is
minimised coarse to fine with Levenberg-Marquardt over the 12-vector of left
twists (start, end).

The blur model cannot tell the exposure's start from its end: swapping the two
poses gives the same virtual poses and the same cost. Coarse levels whose
streaks are shorter than MIN_STREAK_PX therefore only shift the whole exposure
(6 parameters, relative motion held), and after every full solve the ordering
closest to the initial guess is kept.

With zero exposure the end pose is tied to the start pose and a single pose
(6 parameters) is solved: plain sharp direct alignment.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
import pandas as pd

from blursim import Dataset
from camera import (PinholeCamera, backproject_depth_many, backproject_unit_many, project_many,
                    transfer_jacobian_many, transfer_many)
from errors import AngleNearPi, ConfigInvalid, DimensionMismatch, IoError, TooFewKeypoints
from evaluation import REPORT_COLUMNS, Trajectory
from imgproc import (GrayImage, ImagePyramid, build_pyramid, gradient_maps, gradient_stack,
                     sample_bilinear_many, sample_stack_many)
from lie import LocalTrajectory, Pose, interp_jacobians, pose_error, se3_exp, se3_log

MIN_KEYPOINTS = 8

# Added to each grid cell's median gradient magnitude to form its threshold.
GRADIENT_OFFSET = 0.01

# Ground-truth rows are matched to frame mid-exposure times within this.
GT_MATCH_DT = 1e-6

# Below this mean streak (level pixels) a coarse level only shifts the exposure.
MIN_STREAK_PX = 2.0


class TrackStatus(str, Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    DIVERGED = "Diverged"
    DROPPED = "Dropped"


class TrackMode(str, Enum):
    MBA = "mba"               # blur-aware, blurred frames
    BLUR_NAIVE = "blur-naive"  # sharp model, blurred frames
    SHARP = "sharp"           # sharp model, sharp frames


class SolveMode(str, Enum):
    TIED = "tied"    # one pose, zero exposure
    SHIFT = "shift"  # one left twist applied to start and end
    FULL = "full"    # independent start and end twists


class DepthSource(str, Enum):
    GROUND_TRUTH = "ground_truth"
    PROVIDED = "provided"


@dataclass(frozen=True)
class TrackerConfig:
    patch_size: int = 9
    n_virtual: int = 8
    pyramid_levels: int = 4
    huber_delta: float = 0.03
    max_iterations: int = 50
    lm_lambda_init: float = 1e-4
    lm_lambda_factor: float = 10.0
    lm_lambda_max: float = 1e8
    convergence_eps: float = 1e-7
    min_valid_residual_fraction: float = 0.3
    keypoint_count: int = 300
    # Residuals at or above this magnitude do not count as valid.
    outlier_threshold: float = 0.25
    # Fraction of the keyframe's median keypoint depth.
    keyframe_baseline: float = 0.1
    keyframe_min_valid: float = 0.5

    def validate(self) -> "TrackerConfig":
        rules = [
            ("patch_size", self.patch_size >= 1 and self.patch_size % 2 == 1, "odd and >= 1"),
            ("n_virtual", self.n_virtual >= 1, ">= 1"),
            ("pyramid_levels", self.pyramid_levels >= 1, ">= 1"),
            ("huber_delta", self.huber_delta > 0, "> 0"),
            ("max_iterations", self.max_iterations >= 1, ">= 1"),
            ("lm_lambda_init", self.lm_lambda_init > 0, "> 0"),
            ("lm_lambda_factor", self.lm_lambda_factor > 1, "> 1"),
            ("lm_lambda_max", self.lm_lambda_max >= self.lm_lambda_init, ">= lm_lambda_init"),
            ("convergence_eps", self.convergence_eps > 0, "> 0"),
            ("min_valid_residual_fraction", 0 <= self.min_valid_residual_fraction <= 1, "in [0, 1]"),
            ("keypoint_count", self.keypoint_count >= MIN_KEYPOINTS, f">= {MIN_KEYPOINTS}"),
            ("outlier_threshold", self.outlier_threshold > 0, "> 0"),
            ("keyframe_baseline", self.keyframe_baseline > 0, "> 0"),
            ("keyframe_min_valid", 0 <= self.keyframe_min_valid <= 1, "in [0, 1]"),
        ]
        for name, ok, rule in rules:
            if not ok:
                raise ConfigInvalid(f"{name} must be {rule}, got {getattr(self, name)!r}")
        return self


# --------------------------------------------------------------------------
# Keyframes
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Keypoints:
    uv: np.ndarray      # (K, 2) level-0 pixels
    depth: np.ndarray   # (K,) plane depth in the keyframe

    def __len__(self):
        return len(self.depth)

    def at_level(self, level: int) -> np.ndarray:
        return (self.uv + 0.5) / (2.0 ** level) - 0.5


@dataclass(frozen=True, eq=False)
class Keyframe:
    pyramid: ImagePyramid
    cameras: tuple
    keypoints: Keypoints
    pose: Pose          # world-from-camera

    @property
    def median_depth(self) -> float:
        return float(np.median(self.keypoints.depth))

    @cached_property
    def ref_maps(self) -> tuple:
        """gradient_stack of every pyramid level, built on first use."""
        return tuple(gradient_stack(img) for img in self.pyramid.levels)


def sample_keypoints(img: GrayImage, depth: np.ndarray, target_count: int,
                     patch_radius: int) -> Keypoints:
    """At most one high-gradient pixel per cell of a ceil(sqrt(n))^2 grid.

    Each cell's candidate is its strongest pixel among those that beat the
    cell's median gradient by GRADIENT_OFFSET and keep the patch plus a
    2-pixel border inside the image. A candidate without a finite positive
    depth is rejected and the cell contributes nothing.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != img.shape:
        raise DimensionMismatch(f"depth map {depth.shape} does not match image {img.shape}")
    gu, gv = gradient_maps(img)
    mag = np.hypot(gu, gv)
    h, w = img.shape

    usable = np.zeros((h, w), dtype=bool)
    margin = patch_radius + 2
    usable[margin:h - margin, margin:w - margin] = True

    cells = math.ceil(math.sqrt(target_count))
    us = np.linspace(0, w, cells + 1).astype(int)
    vs = np.linspace(0, h, cells + 1).astype(int)
    picked = []
    for v0, v1 in zip(vs[:-1], vs[1:]):
        for u0, u1 in zip(us[:-1], us[1:]):
            cell = mag[v0:v1, u0:u1]
            if cell.size == 0:
                continue
            ok = usable[v0:v1, u0:u1] & (cell > np.median(cell) + GRADIENT_OFFSET)
            if not ok.any():
                continue
            k = np.argmax(np.where(ok, cell, -1.0))
            dv, du = np.unravel_index(k, cell.shape)
            d = depth[v0 + dv, u0 + du]
            if np.isfinite(d) and d > 0:
                picked.append((u0 + du, v0 + dv))

    if len(picked) < MIN_KEYPOINTS:
        raise TooFewKeypoints(f"found {len(picked)} keypoints, need at least {MIN_KEYPOINTS}")
    uv = np.array(picked, dtype=float)
    return Keypoints(uv, depth[uv[:, 1].astype(int), uv[:, 0].astype(int)])


def make_keyframe(image: GrayImage, depth: np.ndarray, cam: PinholeCamera, pose: Pose,
                  cfg: TrackerConfig, rng: Optional[np.random.Generator] = None,
                  depth_noise: float = 0.0) -> Keyframe:
    """Keypoints and pyramid of a sharp image.

    depth_noise is the sigma of a log-normal factor applied to every keypoint
    depth; it needs `rng`.
    """
    if image.shape != (cam.height, cam.width):
        raise DimensionMismatch(f"image {image.shape} does not match camera "
                                f"{cam.width}x{cam.height}")
    kps = sample_keypoints(image, depth, cfg.keypoint_count, cfg.patch_size // 2)
    if depth_noise > 0:
        if rng is None:
            raise ConfigInvalid("depth noise needs a random generator")
        kps = Keypoints(kps.uv, kps.depth * np.exp(depth_noise * rng.standard_normal(len(kps))))
    pyramid = build_pyramid(image, cfg.pyramid_levels)
    cameras = tuple(cam.at_level(level) for level in range(len(pyramid)))
    return Keyframe(pyramid, cameras, kps, pose)


# --------------------------------------------------------------------------
# Residuals
# --------------------------------------------------------------------------

def huber_weights(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, delta))


def huber_cost(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def synthesize_reblurred(ref: GrayImage, cam: PinholeCamera, traj: LocalTrajectory, anchor,
                         depth: float, n: int) -> Optional[float]:
    """Mean keyframe intensity seen by `anchor` from the n virtual poses; None if any sample fails."""
    if n < 1 or (traj.exposure > 0 and n < 2):
        raise ConfigInvalid(f"need n >= 2 virtual poses for a positive exposure, got {n}")
    pix = np.asarray(anchor, dtype=float).reshape(1, 2)
    total = 0.0
    for pose in traj.virtual_poses(n):
        uv, ok = transfer_many(cam, pix, np.array([depth]), pose)
        if not ok[0]:
            return None
        value, inside = sample_bilinear_many(ref, uv[:, 0], uv[:, 1])
        if not inside[0]:
            return None
        total += value[0]
    return total / n


@dataclass(frozen=True, eq=False)
class LevelData:
    ref: GrayImage
    cur: GrayImage
    cam: PinholeCamera
    uv: np.ndarray      # keypoints at this level
    depth: np.ndarray
    offsets: np.ndarray  # (P, 2) patch offsets
    maps: Optional[np.ndarray] = None  # gradient_stack(ref); built when not given

    def __post_init__(self):
        if self.maps is None:
            object.__setattr__(self, "maps", gradient_stack(self.ref))

    @cached_property
    def points(self) -> np.ndarray:
        """Keypoints back-projected into the keyframe."""
        return backproject_depth_many(self.cam, self.uv, self.depth)


@dataclass(frozen=True, eq=False)
class Residuals:
    r: np.ndarray
    valid: np.ndarray
    jacobian: Optional[np.ndarray]  # (N, 12) full, (N, 6) tied or shift

    def cost(self, delta: float) -> float:
        if not self.valid.any():
            return math.inf
        return float(np.mean(huber_cost(self.r[self.valid], delta)))

    def valid_fraction(self, outlier_threshold: float) -> float:
        good = self.valid & (np.abs(self.r) < outlier_threshold)
        return float(np.count_nonzero(good)) / len(self.r)


def patch_offsets(patch_size: int) -> np.ndarray:
    half = patch_size // 2
    steps = np.arange(-half, half + 1, dtype=float)
    du, dv = np.meshgrid(steps, steps)
    return np.stack((du.ravel(), dv.ravel()), axis=-1)


def select_anchors(level: LevelData, traj: LocalTrajectory, mode: SolveMode
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints projected with the mid-exposure pose, rounded half away from zero."""
    mid = traj.start if SolveMode(mode) is SolveMode.TIED else traj.mid()
    proj, in_front = project_many(level.cam, mid.inverse().apply(level.points))
    return round_half_away(proj), in_front


def streak_pixels(level: LevelData, traj: LocalTrajectory) -> float:
    """Mean image distance between the keypoints seen from the start and from the end pose."""
    a, ok_a = project_many(level.cam, traj.start.inverse().apply(level.points))
    b, ok_b = project_many(level.cam, traj.end.inverse().apply(level.points))
    ok = ok_a & ok_b
    if not ok.any():
        return 0.0
    return float(np.mean(np.linalg.norm(a - b, axis=1)[ok]))


def evaluate_residuals(level: LevelData, traj: LocalTrajectory, n: int, mode: SolveMode,
                       jacobian: bool = True, anchors=None) -> Residuals:
    """Residuals B_cur(x) - mean_i I_ref(transfer(x, T_i)) over every anchored patch pixel.

    `anchors` (pixels, in_front) freezes the patch placement; by default it is
    re-selected from `traj`.
    """
    mode = SolveMode(mode)
    n_patch = len(level.offsets)
    anchor_px, in_front = select_anchors(level, traj, mode) if anchors is None else anchors

    pix = (anchor_px[:, None, :] + level.offsets[None]).reshape(-1, 2)
    depth = np.repeat(level.depth, n_patch)
    valid = np.repeat(in_front, n_patch)
    observed, inside = sample_bilinear_many(level.cur, pix[:, 0], pix[:, 1])
    valid &= inside
    rays = backproject_unit_many(level.cam, pix)
    maps = level.maps if jacobian else level.maps[:1]

    poses = [traj.start] if mode is SolveMode.TIED else traj.virtual_poses(n)
    total = np.zeros(len(pix))
    J = np.zeros((len(pix), 12 if mode is SolveMode.FULL else 6)) if jacobian else None
    for i, pose in enumerate(poses):
        if jacobian:
            uv_ref, dT, ok = transfer_jacobian_many(level.cam, pix, depth, pose, rays)
        else:
            uv_ref, ok = transfer_many(level.cam, pix, depth, pose, rays)
        # margin 1 keeps the central-difference gradient inside the image
        values, inside = sample_stack_many(maps, uv_ref[:, 0], uv_ref[:, 1], margin=1.0)
        valid &= ok & inside
        total += values[0]
        if not jacobian:
            continue
        g = values[1][:, None] * dT[:, 0, :] + values[2][:, None] * dT[:, 1, :]
        if mode is SolveMode.FULL:
            j_start, j_end = interp_jacobians(traj, i / (n - 1))
            J[:, :6] += g @ j_start
            J[:, 6:] += g @ j_end
        else:
            # j_start + j_end = I: a shared twist moves every virtual pose alike
            J += g

    r = np.where(valid, observed - total / len(poses), 0.0)
    if jacobian:
        J = -J / len(poses)
        J[~valid] = 0.0
    return Residuals(r, valid, J)


# --------------------------------------------------------------------------
# Optimisation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrackResult:
    trajectory: LocalTrajectory     # relative to the keyframe
    cost: float
    valid_fraction: float
    iterations: tuple               # per level, coarsest first
    status: TrackStatus
    cost_history: tuple = ()        # accepted costs per level, coarsest first
    modes: tuple = ()               # SolveMode per level, coarsest first


def _apply_step(traj: LocalTrajectory, delta: np.ndarray, mode: SolveMode) -> LocalTrajectory:
    if mode is SolveMode.TIED:
        return LocalTrajectory.static(se3_exp(delta) @ traj.start, 0.0)
    if mode is SolveMode.SHIFT:
        step = se3_exp(delta)
        return LocalTrajectory(step @ traj.start, step @ traj.end, traj.exposure)
    return LocalTrajectory(se3_exp(delta[:6]) @ traj.start, se3_exp(delta[6:]) @ traj.end,
                           traj.exposure)


def _solve_level(level: LevelData, traj: LocalTrajectory, n: int, mode: SolveMode,
                 cfg: TrackerConfig):
    res = evaluate_residuals(level, traj, n, mode)
    cost = res.cost(cfg.huber_delta)
    history = [cost]
    if not math.isfinite(cost):
        return traj, res, 0, TrackStatus.DIVERGED, history

    lam = cfg.lm_lambda_init
    for iteration in range(1, cfg.max_iterations + 1):
        w = huber_weights(res.r, cfg.huber_delta) * res.valid
        count = np.count_nonzero(res.valid)
        Jw = res.jacobian * w[:, None]
        H = Jw.T @ res.jacobian / count
        b = Jw.T @ res.r / count

        accepted = False
        while lam <= cfg.lm_lambda_max:
            try:
                delta = -np.linalg.solve(H + lam * np.diag(np.diag(H)), b)
            except np.linalg.LinAlgError:
                return traj, res, iteration, TrackStatus.DIVERGED, history
            if not np.all(np.isfinite(delta)):
                return traj, res, iteration, TrackStatus.DIVERGED, history
            if np.linalg.norm(delta) < cfg.convergence_eps:
                return traj, res, iteration, TrackStatus.CONVERGED, history
            candidate = _apply_step(traj, delta, mode)
            try:
                cand_cost = evaluate_residuals(level, candidate, n, mode,
                                               jacobian=False).cost(cfg.huber_delta)
            except AngleNearPi:
                cand_cost = math.inf
            if cand_cost <= cost:
                traj, cost = candidate, cand_cost
                res = evaluate_residuals(level, traj, n, mode)
                history.append(cost)
                lam /= cfg.lm_lambda_factor
                accepted = True
                break
            lam *= cfg.lm_lambda_factor

        # Saturated damping: no descent direction is left at this level.
        if not accepted:
            return traj, res, iteration, TrackStatus.CONVERGED, history
    return traj, res, cfg.max_iterations, TrackStatus.MAX_ITERATIONS, history


def level_mode(level: LevelData, traj: LocalTrajectory, finest: bool) -> SolveMode:
    if traj.exposure == 0.0:
        return SolveMode.TIED
    if finest or streak_pixels(level, traj) >= MIN_STREAK_PX:
        return SolveMode.FULL
    return SolveMode.SHIFT


def orient_like(traj: LocalTrajectory, reference: LocalTrajectory, scale: float) -> LocalTrajectory:
    """`traj` or its time reversal, whichever endpoints lie closer to `reference`.

    Rotation gaps are weighed as `scale` meters per radian.
    """
    def gap(a: Pose, b: Pose) -> float:
        angle, dist = pose_error(a, b)
        return dist + scale * angle

    kept = gap(traj.start, reference.start) + gap(traj.end, reference.end)
    swapped = gap(traj.end, reference.start) + gap(traj.start, reference.end)
    if swapped < kept:
        return LocalTrajectory(traj.end, traj.start, traj.exposure)
    return traj


def track(kf: Keyframe, current: ImagePyramid, exposure: float, init: LocalTrajectory,
          cfg: TrackerConfig) -> TrackResult:
    """Estimate the current frame's exposure trajectory relative to the keyframe.

    A zero exposure ties the end pose to the start pose and uses one virtual
    pose: the sharp direct aligner.
    """
    cfg.validate()
    if len(current) != len(kf.pyramid):
        raise DimensionMismatch(f"pyramids have {len(kf.pyramid)} and {len(current)} levels")
    for level, (a, b) in enumerate(zip(kf.pyramid.levels, current.levels)):
        if a.shape != b.shape:
            raise DimensionMismatch(f"level {level}: keyframe {a.shape} vs current {b.shape}")
    if not exposure >= 0:
        raise ConfigInvalid(f"exposure must be >= 0, got {exposure}")

    tied = exposure == 0.0
    n = 1 if tied else cfg.n_virtual
    if not tied and n < 2:
        raise ConfigInvalid("n_virtual must be >= 2 when the exposure is positive")
    if tied:
        traj = LocalTrajectory.static(init.start, 0.0)
    else:
        traj = LocalTrajectory(init.start, init.end, exposure)
    reference = traj

    offsets = patch_offsets(cfg.patch_size)
    iterations, history, modes = [], [], []
    for lvl in reversed(range(len(kf.pyramid))):
        data = LevelData(kf.pyramid[lvl], current[lvl], kf.cameras[lvl],
                         kf.keypoints.at_level(lvl), kf.keypoints.depth, offsets,
                         kf.ref_maps[lvl])
        mode = level_mode(data, traj, finest=lvl == 0)
        traj, res, its, status, costs = _solve_level(data, traj, n, mode, cfg)
        if mode is SolveMode.FULL:
            traj = orient_like(traj, reference, kf.median_depth)
        iterations.append(its)
        history.append(tuple(costs))
        modes.append(mode)

    cost = res.cost(cfg.huber_delta)
    fraction = res.valid_fraction(cfg.outlier_threshold)
    if not math.isfinite(cost) or fraction < cfg.min_valid_residual_fraction:
        status = TrackStatus.DROPPED
    return TrackResult(traj, cost, fraction, tuple(iterations), status, tuple(history),
                       tuple(modes))


def track_sharp(kf: Keyframe, current: ImagePyramid, init: Pose, cfg: TrackerConfig) -> TrackResult:
    return track(kf, current, 0.0, LocalTrajectory.static(init), cfg)


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SequenceResult:
    timestamps: np.ndarray      # mid-exposure, one per frame
    results: tuple
    trajectory: Trajectory      # mid-exposure world poses, dropped frames left out
    endpoints: Trajectory       # exposure start and end world poses
    keyframes: tuple            # frame indices that became keyframes


def predict_motion(history: list, t: float) -> Optional[LocalTrajectory]:
    """Constant-twist extrapolation of the last two (timestamp, world trajectory) entries.

    With a single entry its own exposure twist is carried forward; a single
    zero-exposure entry is returned unchanged.
    """
    if not history:
        return None
    t1, last = history[-1]
    if len(history) == 1:
        if last.exposure == 0.0:
            return last
        step = se3_exp((t - t1) / last.exposure * last.relative_twist)
        return LocalTrajectory(last.start @ step, last.end @ step, last.exposure)
    t0, prev = history[-2]
    ratio = (t - t1) / (t1 - t0)

    def extrapolate(a: Pose, b: Pose) -> Pose:
        return b @ se3_exp(ratio * se3_log(a.inverse() @ b))

    try:
        return LocalTrajectory(extrapolate(prev.start, last.start),
                               extrapolate(prev.end, last.end), last.exposure)
    except AngleNearPi:
        return last


def cold_start(kf: Keyframe, current: ImagePyramid, following: Optional[ImagePyramid],
               exposure: float, dt: float, cfg: TrackerConfig) -> LocalTrajectory:
    """Initial exposure trajectory, relative to `kf`, for a frame with no motion history.

    Sharp-model solves of this frame and the following one give two
    mid-exposure poses `dt` apart; their twist, scaled to the exposure, is
    spread symmetrically around the first. Falls back to a motionless
    trajectory at that pose (or at the keyframe) when a solve fails.
    """
    here = track(kf, current, 0.0, LocalTrajectory.static(Pose.identity()), cfg)
    if here.status is TrackStatus.DROPPED:
        return LocalTrajectory.static(Pose.identity(), exposure)
    mid = here.trajectory.start
    still = LocalTrajectory.static(mid, exposure)
    if following is None or not dt > 0:
        return still
    there = track(kf, following, 0.0, here.trajectory, cfg)
    if there.status is TrackStatus.DROPPED:
        return still
    try:
        xi = se3_log(mid.inverse() @ there.trajectory.start) * (exposure / dt)
    except AngleNearPi:
        return still
    half = se3_exp(0.5 * xi)
    return LocalTrajectory(mid @ half.inverse(), mid @ half, exposure)


def initial_keyframe_pose(dataset: Dataset) -> Pose:
    """Ground-truth mid-exposure pose of frame 0, identity without ground truth."""
    gt = dataset.groundtruth
    if gt is None or len(gt) == 0:
        return Pose.identity()
    row = dataset.frames.iloc[0]
    t = round(float(row["timestamp"]) + 0.5 * float(row["exposure"]), 9)
    j = int(np.argmin(np.abs(gt.timestamps - t)))
    if abs(gt.timestamps[j] - t) > GT_MATCH_DT:
        return Pose.identity()
    return gt.poses[j]


def track_sequence(dataset: Dataset, cfg: TrackerConfig, mode=TrackMode.MBA,
                   depth_source=DepthSource.GROUND_TRUTH, depth_dir: Optional[str] = None,
                   depth_noise: float = 0.0, force_zero_exposure: bool = False,
                   seed: int = 0, progress=None) -> SequenceResult:
    """Track every frame against the latest keyframe, frame 0 included.

    `progress` wraps the frame iterator (the CLI passes tqdm).
    """
    cfg.validate()
    mode, depth_source = TrackMode(mode), DepthSource(depth_source)
    if depth_source is DepthSource.PROVIDED and depth_dir is None:
        raise ConfigInvalid("depth_source 'provided' needs a depth directory")
    if depth_noise < 0:
        raise ConfigInvalid(f"depth_noise must be >= 0, got {depth_noise}")
    rng = np.random.default_rng(seed)
    depth_dir = depth_dir if depth_source is DepthSource.PROVIDED else None

    def keyframe_at(i: int, pose: Pose) -> Keyframe:
        return make_keyframe(dataset.sharp(i), dataset.depth(i, depth_dir), dataset.camera,
                             pose, cfg, rng, depth_noise)

    def frame_at(i: int) -> tuple[float, float, ImagePyramid]:
        row = dataset.frames.iloc[i]
        image = dataset.sharp(i) if mode is TrackMode.SHARP else dataset.blurred(i)
        return float(row["timestamp"]), float(row["exposure"]), build_pyramid(image, cfg.pyramid_levels)

    kf = keyframe_at(0, initial_keyframe_pose(dataset))
    keyframes = [0]
    stamps, results, history = [], [], []
    mids, ends = [], []

    indices = range(len(dataset))
    if progress is not None:
        indices = progress(indices, total=len(dataset))
    for i in indices:
        t, tau, current = frame_at(i)
        exposure = tau if mode is TrackMode.MBA and not force_zero_exposure else 0.0

        predicted = predict_motion(history, t)
        if predicted is not None:
            init = predicted.left_multiplied(kf.pose.inverse())
        elif exposure > 0:
            following, dt = None, 0.0
            if i + 1 < len(dataset):
                t_next, tau_next, following = frame_at(i + 1)
                dt = (t_next + 0.5 * tau_next) - (t + 0.5 * tau)
            init = cold_start(kf, current, following, exposure, dt, cfg)
        else:
            init = LocalTrajectory.static(Pose.identity())
        result = track(kf, current, exposure, init, cfg)
        stamps.append(round(t + 0.5 * tau, 9))
        results.append(result)
        if result.status is TrackStatus.DROPPED:
            continue

        world = result.trajectory.left_multiplied(kf.pose)
        history = (history + [(t, world)])[-2:]
        mid = world.start if exposure == 0.0 else world.mid()
        mids.append((stamps[-1], mid))
        for stamp, pose in ((round(t, 9), world.start), (round(t + tau, 9), world.end)):
            if not ends or stamp > ends[-1][0]:
                ends.append((stamp, pose))

        baseline = float(np.linalg.norm((kf.pose.inverse() @ mid).t))
        if (baseline > cfg.keyframe_baseline * kf.median_depth
                or result.valid_fraction < cfg.keyframe_min_valid):
            try:
                kf = keyframe_at(i, mid)
                keyframes.append(i)
            except TooFewKeypoints:
                pass

    def as_trajectory(rows):
        return Trajectory(np.array([s for s, _ in rows]), [p for _, p in rows])

    return SequenceResult(np.array(stamps), tuple(results), as_trajectory(mids),
                          as_trajectory(ends), tuple(keyframes))


def write_report(path: str, timestamps, results) -> None:
    """One line per frame: timestamp status cost valid_fraction iterations (comma-joined)."""
    rows = [[t, r.status.value, r.cost, r.valid_fraction, ",".join(str(k) for k in r.iterations)]
            for t, r in zip(timestamps, results)]
    try:
        with open(path, "w") as fh:
            fh.write("# " + " ".join(REPORT_COLUMNS) + "\n")
            pd.DataFrame(rows, columns=REPORT_COLUMNS).to_csv(
                fh, sep=" ", header=False, index=False, float_format="%.9f")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
