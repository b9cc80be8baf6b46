"""
camera.py

Pinhole projection, the two back-projections (depth-scaled and unit-ray), and
pixel transfer through a fronto-parallel plane.

Plane transfer: a pixel of virtual camera i is cast as a ray, the ray is cut
with the plane z = d of the REFERENCE camera frame, and the hit point is
projected into the reference image. T_i maps camera-i coordinates into the
reference frame.

Each operation has a batched form (`*_many`, arrays in, arrays plus a validity
mask out) used by the renderer and the tracker, and a scalar form that raises.
"""

from dataclasses import dataclass, replace

import numpy as np

from errors import (BehindCamera, ImageFormatError, IntersectionBehindCamera, IoError,
                    NonPositiveDepth, RayParallelToPlane)
from lie import Pose

MIN_DEPTH = 1e-6

# |lambda| below this means the ray grazes the plane.
MIN_RAY_PLANE_COSINE = 1e-9


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    def at_level(self, level: int) -> "PinholeCamera":
        """Intrinsics after `level` rounds of 2x2 box downsampling.

        Pixel centres stay aligned: cx_L = (cx + 0.5) / 2^L - 0.5.
        """
        f = 2.0 ** level
        return replace(self,
                       fx=self.fx / f, fy=self.fy / f,
                       cx=(self.cx + 0.5) / f - 0.5, cy=(self.cy + 0.5) / f - 0.5,
                       width=self.width // (2 ** level), height=self.height // (2 ** level))

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer (u, v) coordinates of every pixel, each H x W."""
        return np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))


@dataclass(frozen=True, eq=False)
class PlaneTransferQuery:
    pixel: np.ndarray
    depth: float
    pose: Pose


def load_calib(path: str) -> PinholeCamera:
    """calib.txt: one line 'fx fy cx cy width height'."""
    try:
        with open(path) as fh:
            fields = fh.read().split()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(fields) != 6:
        raise ImageFormatError(f"{path}: expected 'fx fy cx cy width height', got {fields}")
    fx, fy, cx, cy = (float(f) for f in fields[:4])
    return PinholeCamera(fx, fy, cx, cy, int(fields[4]), int(fields[5]))


def save_calib(path: str, cam: PinholeCamera) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r} {cam.width} {cam.height}\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


# --------------------------------------------------------------------------
# Batched
# --------------------------------------------------------------------------

def project_many(cam: PinholeCamera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    z = points[..., 2]
    valid = z > MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    uv = np.stack((cam.fx * points[..., 0] / zs + cam.cx,
                   cam.fy * points[..., 1] / zs + cam.cy), axis=-1)
    return uv, valid


def backproject_depth_many(cam: PinholeCamera, uv: np.ndarray, depth) -> np.ndarray:
    uv = np.asarray(uv, dtype=float)
    depth = np.asarray(depth, dtype=float)
    return np.stack(((uv[..., 0] - cam.cx) / cam.fx * depth,
                     (uv[..., 1] - cam.cy) / cam.fy * depth,
                     np.broadcast_to(depth, uv.shape[:-1])), axis=-1)


def backproject_unit_many(cam: PinholeCamera, uv: np.ndarray) -> np.ndarray:
    rays = backproject_depth_many(cam, uv, 1.0)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def _plane_hits(cam: PinholeCamera, uv: np.ndarray, depth, pose: Pose, rays=None):
    """Shared core of the transfer: returns (rays in ref frame, hit points, scale, valid).

    `rays` are backproject_unit_many(cam, uv) when the caller already has them.
    """
    if rays is None:
        rays = backproject_unit_many(cam, uv)
    x, y, z = np.moveaxis(rays, -1, 0)
    qw, qx, qy, qz = pose.q
    q0 = qx * qz - qw * qy
    q1 = qx * qw + qy * qz
    q2 = qw * qw - qx * qx - qy * qy + qz * qz
    lam = 2.0 * x * q0 + 2.0 * y * q1 + z * q2

    depth = np.asarray(depth, dtype=float)
    ok_lam = np.abs(lam) > MIN_RAY_PLANE_COSINE
    scale = (depth - pose.t[2]) / np.where(ok_lam, lam, 1.0)
    valid = ok_lam & (scale > 0) & (depth > 0)

    hits = pose.apply(scale[..., None] * rays)
    return rays @ pose.rotation.T, hits, valid, ok_lam


def transfer_many(cam: PinholeCamera, uv: np.ndarray, depth, pose: Pose, rays=None
                  ) -> tuple[np.ndarray, np.ndarray]:
    _, hits, valid, _ = _plane_hits(cam, uv, depth, pose, rays)
    out, in_front = project_many(cam, hits)
    return out, valid & in_front


def transfer_jacobian_many(cam: PinholeCamera, uv: np.ndarray, depth, pose: Pose, rays=None
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transferred pixels, their 2x6 derivatives w.r.t. a left twist on `pose`, validity.

    The hit point P moves like a rigidly attached point, [-P^ | I] delta, then
    slides back along the ray a to stay on z = d: dP' = (I - a e_z^T / a_z) dP.
    """
    dirs, P, valid, ok_lam = _plane_hits(cam, uv, depth, pose, rays)
    out, in_front = project_many(cam, P)
    valid = valid & in_front

    px, py, pz = P[:, 0], P[:, 1], P[:, 2]
    zs = np.where(valid, pz, 1.0)
    az = np.where(ok_lam, dirs[:, 2], 1.0)

    # M = dpi (I - a e_z^T / a_z), with dpi the 2x3 projection derivative at P
    M = np.zeros((P.shape[0], 2, 3))
    M[:, 0, 0] = cam.fx / zs
    M[:, 1, 1] = cam.fy / zs
    dz_u = -cam.fx * px / (zs * zs)
    dz_v = -cam.fy * py / (zs * zs)
    M[:, 0, 2] = dz_u - (M[:, 0, 0] * dirs[:, 0] + dz_u * dirs[:, 2]) / az
    M[:, 1, 2] = dz_v - (M[:, 1, 1] * dirs[:, 1] + dz_v * dirs[:, 2]) / az

    J = np.empty((P.shape[0], 2, 6))
    # M times -hat(P)
    J[:, :, 0] = M[:, :, 2] * py[:, None] - M[:, :, 1] * pz[:, None]
    J[:, :, 1] = M[:, :, 0] * pz[:, None] - M[:, :, 2] * px[:, None]
    J[:, :, 2] = M[:, :, 1] * px[:, None] - M[:, :, 0] * py[:, None]
    J[:, :, 3:] = M
    J[~valid] = 0.0
    return out, J, valid


def warp_depth_many(cam: PinholeCamera, uv: np.ndarray, depth, pose: Pose
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Classic depth warp: project(pose * backproject_depth(uv, depth))."""
    return project_many(cam, pose.apply(backproject_depth_many(cam, uv, depth)))


# --------------------------------------------------------------------------
# Scalar
# --------------------------------------------------------------------------

def project(cam: PinholeCamera, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not p[2] > MIN_DEPTH:
        raise BehindCamera(f"point {p.tolist()} is not in front of the camera")
    return project_many(cam, p[None])[0][0]


def backproject_depth(cam: PinholeCamera, x, d: float) -> np.ndarray:
    if not d > 0:
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    return backproject_depth_many(cam, np.asarray(x, dtype=float)[None], d)[0]


def backproject_unit(cam: PinholeCamera, x) -> np.ndarray:
    return backproject_unit_many(cam, np.asarray(x, dtype=float)[None])[0]


def _check_transfer(cam: PinholeCamera, q: PlaneTransferQuery):
    if not q.depth > 0:
        raise NonPositiveDepth(f"plane depth must be positive, got {q.depth}")
    uv = np.asarray(q.pixel, dtype=float)[None]
    _, hits, valid, ok_lam = _plane_hits(cam, uv, q.depth, q.pose)
    if not ok_lam[0]:
        raise RayParallelToPlane(f"ray through {q.pixel} is parallel to the plane z={q.depth}")
    if not valid[0]:
        raise IntersectionBehindCamera(f"ray through {q.pixel} meets the plane behind the camera")
    if not hits[0, 2] > MIN_DEPTH:
        raise BehindCamera(f"plane point {hits[0].tolist()} is behind the reference camera")
    return uv


def transfer_via_plane(cam: PinholeCamera, q: PlaneTransferQuery) -> np.ndarray:
    uv = _check_transfer(cam, q)
    return transfer_many(cam, uv, q.depth, q.pose)[0][0]


def transfer_jacobian(cam: PinholeCamera, q: PlaneTransferQuery) -> np.ndarray:
    uv = _check_transfer(cam, q)
    return transfer_jacobian_many(cam, uv, np.array([q.depth]), q.pose)[1][0]
