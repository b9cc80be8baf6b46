"""
evaluation.py

Trajectory evaluation: TUM file I/O, timestamp association, closed-form
rigid / similarity alignment, RMSE absolute trajectory error, endpoint pose
errors and the frame-drop percentage.

Dropped frames never reach the estimated trajectory file, so ATE is computed
over successfully tracked frames only.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from errors import ConfigInvalid, DegenerateConfiguration, IoError, NoMatches
from lie import Pose, pose_error

TUM_COLUMNS = ["timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
REPORT_COLUMNS = ["timestamp", "status", "cost", "valid_fraction", "iterations"]

DEFAULT_MAX_DT = 0.01
ALIGN_MODES = ("rigid", "similarity")


@dataclass(frozen=True, eq=False)
class Trajectory:
    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        if len(ts) != len(self.poses):
            raise ValueError(f"{len(ts)} timestamps for {len(self.poses)} poses")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.t for p in self.poses])

    def to_frame(self) -> pd.DataFrame:
        rows = [[t, *p.tum()] for t, p in zip(self.timestamps, self.poses)]
        return pd.DataFrame(rows, columns=TUM_COLUMNS)

    def transformed(self, rotation: np.ndarray, translation, scale: float = 1.0) -> "Trajectory":
        """Apply x -> s R x + t to positions and R to orientations."""
        g = Pose.from_matrix(rotation, np.zeros(3))
        poses = [Pose((g @ p).q, scale * (rotation @ p.t) + translation) for p in self.poses]
        return Trajectory(self.timestamps, poses)


@dataclass
class AlignmentTransform:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


@dataclass
class AteReport:
    rmse: float
    errors: np.ndarray
    matched: int
    transform: AlignmentTransform
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))

    @property
    def min(self) -> float:
        return float(np.min(self.errors))

    @property
    def max(self) -> float:
        return float(np.max(self.errors))

    def summary(self) -> str:
        return "\n".join([
            f"compared_pose_pairs {self.matched} pairs",
            f"absolute_translational_error.rmse {self.rmse:.6f} m",
            f"absolute_translational_error.mean {self.mean:.6f} m",
            f"absolute_translational_error.median {self.median:.6f} m",
            f"absolute_translational_error.std {self.std:.6f} m",
            f"absolute_translational_error.min {self.min:.6f} m",
            f"absolute_translational_error.max {self.max:.6f} m",
            f"alignment_scale {self.transform.scale:.6f}",
        ])

    def to_csv(self, path: str) -> None:
        pd.DataFrame({"timestamp": self.timestamps, "error_m": self.errors}).to_csv(
            path, index=False, float_format="%.9f")


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

def read_tum(path: str) -> Trajectory:
    try:
        df = pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=TUM_COLUMNS)
    except FileNotFoundError as e:
        raise IoError(f"trajectory file not found: {path}") from e
    except (OSError, ValueError) as e:
        raise IoError(f"cannot parse trajectory {path}: {e}") from e
    if df.isna().any().any():
        raise IoError(f"{path}: every row needs 8 columns 'timestamp tx ty tz qx qy qz qw'")
    df = df.sort_values("timestamp")
    try:
        poses = [Pose.from_tum(*row[1:]) for row in df.itertuples(index=False)]
        return Trajectory(df["timestamp"].to_numpy(), poses)
    except ValueError as e:
        raise IoError(f"{path}: {e}") from e


def write_tum(path: str, traj: Trajectory) -> None:
    try:
        with open(path, "w") as fh:
            fh.write("# timestamp tx ty tz qx qy qz qw\n")
            traj.to_frame().to_csv(fh, sep=" ", header=False, index=False, float_format="%.9f")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_report(path: str) -> pd.DataFrame:
    try:
        report = pd.read_csv(path, sep=r"\s+", comment="#", header=None, names=REPORT_COLUMNS,
                             dtype={"status": str, "iterations": str})
    except (OSError, ValueError) as e:
        raise IoError(f"cannot read report {path}: {e}") from e
    if report.empty:
        raise IoError(f"report {path} has no frames")
    return report


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def associate(est: Trajectory, gt: Trajectory, max_dt: float = DEFAULT_MAX_DT,
              offset: float = 0.0) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching, each pose used at most once.

    Candidate pairs are taken in order of increasing |dt| (ties by index), pairs
    further apart than max_dt are discarded. Returned sorted by est index.
    """
    if not max_dt > 0:
        raise ConfigInvalid(f"max_dt must be positive, got {max_dt}")
    t_est = est.timestamps + offset
    t_gt = gt.timestamps
    if len(t_est) == 0 or len(t_gt) == 0:
        raise NoMatches("one of the trajectories is empty")

    candidates = []
    for i, t in enumerate(t_est):
        lo = np.searchsorted(t_gt, t - max_dt, side="left")
        hi = np.searchsorted(t_gt, t + max_dt, side="right")
        for j in range(lo, hi):
            dt = abs(t_gt[j] - t)
            if dt <= max_dt:
                candidates.append((dt, i, j))
    candidates.sort()

    used_est, used_gt, pairs = set(), set(), []
    for _, i, j in candidates:
        if i in used_est or j in used_gt:
            continue
        used_est.add(i)
        used_gt.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no timestamps within {max_dt} s of each other")
    return sorted(pairs)


def align(est: Trajectory, gt: Trajectory, pairs: list[tuple[int, int]],
          mode: str = "rigid") -> AlignmentTransform:
    """Closed-form least squares for gt_i ~ s R est_i + t (Horn / Umeyama).

    Rigid mode fixes s = 1. Collinear points are accepted: the rotation about
    the line is then arbitrary and does not change any error.
    """
    if mode not in ALIGN_MODES:
        raise ConfigInvalid(f"unknown alignment mode '{mode}'")
    if len(pairs) < 3:
        raise DegenerateConfiguration(f"need at least 3 matched poses, got {len(pairs)}")
    e = np.stack([est.poses[i].t for i, _ in pairs])
    g = np.stack([gt.poses[j].t for _, j in pairs])
    mu_e, mu_g = e.mean(axis=0), g.mean(axis=0)
    ec, gc = e - mu_e, g - mu_g
    var_e = float(np.mean(np.sum(ec * ec, axis=1)))

    if var_e == 0.0 or float(np.mean(np.sum(gc * gc, axis=1))) == 0.0:
        if mode == "similarity":
            raise DegenerateConfiguration("all matched positions coincide; scale is undefined")
        return AlignmentTransform(np.eye(3), mu_g - mu_e, 1.0)

    U, D, Vt = np.linalg.svd(gc.T @ ec / len(pairs))
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_e) if mode == "similarity" else 1.0
    return AlignmentTransform(R, mu_g - s * R @ mu_e, s)


def compute_ate(est: Trajectory, gt: Trajectory, mode: str = "rigid",
                max_dt: float = DEFAULT_MAX_DT, offset: float = 0.0) -> AteReport:
    pairs = associate(est, gt, max_dt, offset)
    transform = align(est, gt, pairs, mode)
    e = np.stack([est.poses[i].t for i, _ in pairs])
    g = np.stack([gt.poses[j].t for _, j in pairs])
    errors = np.linalg.norm(transform.apply(e) - g, axis=1)
    rmse = float(np.sqrt(np.mean(errors * errors)))
    stamps = np.array([est.timestamps[i] for i, _ in pairs])
    return AteReport(rmse, errors, len(pairs), transform, stamps)


def endpoint_errors(est: Trajectory, gt: Trajectory, max_dt: float = 1e-6) -> pd.DataFrame:
    """Per-pose rotation (deg) and translation (m) errors without any alignment.

    Meant for exposure-start / exposure-end estimates that share the ground
    truth's world frame (tracking initialised from the ground-truth pose).
    """
    rows = []
    for i, j in associate(est, gt, max_dt):
        angle, dist = pose_error(gt.poses[j], est.poses[i])
        rows.append([est.timestamps[i], np.degrees(angle), dist])
    return pd.DataFrame(rows, columns=["timestamp", "rotation_deg", "translation_m"])


def frame_drop_rate(reports, total_frames: int) -> float:
    """100 * dropped / total; accepts TrackResults or bare status values."""
    if total_frames < 1:
        raise ValueError("total_frames must be >= 1")
    dropped = sum(1 for r in reports if getattr(r, "status", r) == "Dropped")
    return 100.0 * dropped / total_frames
