"""
imgproc.py

Single-channel float images: bilinear sampling, central-difference gradients,
2x2 box-filter pyramids, and the PGM / PPM / PFM files the datasets are made of.

Sampling outside the image is an error for the scalar calls and an invalid mask
entry for the batched ones. Nothing is ever clamped to the border.
"""

import os
from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from errors import ImageFormatError, IoError, OutOfBounds, TooManyLevels

# Coarsest pyramid level must keep at least this many pixels per side.
MIN_LEVEL_SIZE = 32


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major H x W intensities in [0, 1]; pixels[v, u]."""

    pixels: np.ndarray
    # Set by the renderer: False where no scene texture was visible.
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ImageFormatError(f"expected a 2-D intensity array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ImageFormatError("image contains non-finite intensities")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def mean_gradient_magnitude(self) -> float:
        gu, gv = gradient_maps(self)
        return float(np.mean(np.hypot(gu, gv)[1:-1, 1:-1]))


@dataclass(frozen=True, eq=False)
class ImagePyramid:
    levels: tuple

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, level: int) -> GrayImage:
        return self.levels[level]


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def sample_stack_many(stack: np.ndarray, u: np.ndarray, v: np.ndarray,
                      margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of every plane of a (C, H, W) stack at shared coordinates.

    Returns (values, valid) with values shaped (C, *u.shape). A coordinate is
    valid when it lies within [margin, W-1-margin] x [margin, H-1-margin];
    invalid entries hold 0.
    """
    _, h, w = stack.shape
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    valid = ((u >= margin) & (u <= w - 1 - margin)
             & (v >= margin) & (v <= h - 1 - margin))
    uu = np.where(valid, u, 0.0)
    vv = np.where(valid, v, 0.0)

    # Clamp the upper corner index so samples on the last row/column stay exact.
    u0 = np.minimum(np.floor(uu).astype(np.intp), w - 2) if w > 1 else np.zeros_like(uu, np.intp)
    v0 = np.minimum(np.floor(vv).astype(np.intp), h - 2) if h > 1 else np.zeros_like(vv, np.intp)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = uu - u0
    b = vv - v0

    top = stack[:, v0, u0] * (1.0 - a) + stack[:, v0, u1] * a
    bottom = stack[:, v1, u0] * (1.0 - a) + stack[:, v1, u1] * a
    values = top * (1.0 - b) + bottom * b
    return np.where(valid, values, 0.0), valid


def sample_bilinear_many(img: GrayImage, u: np.ndarray, v: np.ndarray,
                         margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples at arrays of subpixel coordinates; see sample_stack_many."""
    values, valid = sample_stack_many(img.pixels[None], u, v, margin)
    return values[0], valid


def sample_bilinear(img: GrayImage, x) -> float:
    u, v = float(x[0]), float(x[1])
    values, valid = sample_bilinear_many(img, np.array([u]), np.array([v]))
    if not valid[0]:
        raise OutOfBounds(f"sample ({u}, {v}) outside {img.width}x{img.height} image")
    return float(values[0])


def gradient_many(img: GrayImage, u: np.ndarray, v: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central differences of bilinear samples: returns (dI/du, dI/dv, valid)."""
    left, ok_l = sample_bilinear_many(img, u - 1.0, v)
    right, ok_r = sample_bilinear_many(img, u + 1.0, v)
    up, ok_u = sample_bilinear_many(img, u, v - 1.0)
    down, ok_d = sample_bilinear_many(img, u, v + 1.0)
    valid = ok_l & ok_r & ok_u & ok_d
    gu = np.where(valid, 0.5 * (right - left), 0.0)
    gv = np.where(valid, 0.5 * (down - up), 0.0)
    return gu, gv, valid


def gradient(img: GrayImage, x) -> np.ndarray:
    u, v = float(x[0]), float(x[1])
    gu, gv, valid = gradient_many(img, np.array([u]), np.array([v]))
    if not valid[0]:
        raise OutOfBounds(f"gradient at ({u}, {v}) needs a 1-pixel border inside "
                          f"{img.width}x{img.height}")
    return np.array([gu[0], gv[0]])


def gradient_maps(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel central differences; the 1-pixel border is left at zero."""
    px = img.pixels
    gu = np.zeros_like(px)
    gv = np.zeros_like(px)
    gu[:, 1:-1] = 0.5 * (px[:, 2:] - px[:, :-2])
    gv[1:-1] = 0.5 * (px[2:] - px[:-2])
    return gu, gv


def gradient_stack(img: GrayImage) -> np.ndarray:
    """(3, H, W) stack of intensity, d/du and d/dv for sample_stack_many.

    Bilinear samples of the gradient planes equal central differences of
    bilinear intensity samples wherever both are defined.
    """
    gu, gv = gradient_maps(img)
    return np.stack((img.pixels, gu, gv))


# --------------------------------------------------------------------------
# Pyramid
# --------------------------------------------------------------------------

def downsample(img: GrayImage) -> GrayImage:
    """2x2 block means; an odd last row/column is dropped."""
    px = img.pixels
    h, w = px.shape[0] // 2, px.shape[1] // 2
    blocks = px[:2 * h, :2 * w].reshape(h, 2, w, 2)
    return GrayImage(blocks.mean(axis=(1, 3)))


def build_pyramid(img: GrayImage, n_levels: int, min_size: int = MIN_LEVEL_SIZE) -> ImagePyramid:
    if n_levels < 1:
        raise TooManyLevels(f"n_levels must be >= 1, got {n_levels}")
    scale = 2 ** (n_levels - 1)
    if img.width // scale < min_size or img.height // scale < min_size:
        raise TooManyLevels(
            f"{n_levels} levels would shrink {img.width}x{img.height} below {min_size} px")
    levels = [img]
    for _ in range(n_levels - 1):
        levels.append(downsample(levels[-1]))
    return ImagePyramid(tuple(levels))


# --------------------------------------------------------------------------
# Files
# --------------------------------------------------------------------------

def _imread(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise IoError(f"image file not found: {path}")
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageFormatError(f"{path}: not a readable image")
    return data


def _imwrite(path: str, data: np.ndarray) -> None:
    try:
        ok = cv2.imwrite(path, data)
    except cv2.error as e:
        raise IoError(f"cannot write {path}: {e}") from e
    if not ok:
        raise IoError(f"cannot write {path}")


def load_pgm(path: str) -> GrayImage:
    """Load an 8-bit PGM or PPM as intensities byte/255.

    PPM colour is collapsed to BT.601 luma.
    """
    data = _imread(path)
    if data.dtype != np.uint8:
        raise ImageFormatError(f"{path}: only 8-bit images are supported, got {data.dtype}")
    pixels = data.astype(np.float32) / 255.0
    if pixels.ndim == 3:
        if pixels.shape[2] != 3:
            raise ImageFormatError(f"{path}: expected 1 or 3 channels, got {pixels.shape[2]}")
        pixels = cv2.cvtColor(pixels, cv2.COLOR_BGR2GRAY)
        return GrayImage(np.clip(pixels.astype(np.float64), 0.0, 1.0))
    return GrayImage(data.astype(np.float64) / 255.0)


def to_bytes(img: GrayImage) -> np.ndarray:
    return np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(img: GrayImage) -> GrayImage:
    """What save_pgm followed by load_pgm gives back."""
    return GrayImage(to_bytes(img).astype(np.float64) / 255.0)


def save_pgm(path: str, img: GrayImage) -> None:
    _imwrite(path, to_bytes(img))


def load_pfm(path: str) -> np.ndarray:
    """Load a single-channel PFM into an H x W float64 array, top row first."""
    data = _imread(path)
    if data.dtype != np.float32 or data.ndim != 2:
        raise ImageFormatError(f"{path}: expected a single-channel float image, "
                               f"got {data.dtype} with shape {data.shape}")
    return data.astype(np.float64)


def save_pfm(path: str, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.ndim != 2:
        raise ImageFormatError(f"expected a 2-D depth map, got shape {array.shape}")
    _imwrite(path, np.ascontiguousarray(array, dtype=np.float32))


def ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create directory {path}: {e}") from e
