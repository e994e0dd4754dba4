"""Pinhole camera model: projection, back-projection and pixel warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PoseSE3

Z_MIN = 1e-4
BOUNDS_TOL = 1e-9     # px; absorbs round-off of back-projected border pixels


class InvalidDepthError(ValueError):
    """Raised when a pixel has no depth measurement."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    @classmethod
    def tum_fr3(cls) -> "CameraIntrinsics":
        # fr3 Kinect factory calibration, images assumed rectified
        return cls(535.4, 539.2, 320.1, 247.6, 640, 480)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def scaled(self, level: int) -> "CameraIntrinsics":
        """Intrinsics for pyramid level `level` (2x2 box downsampling per level)."""
        K = self
        for _ in range(level):
            K = CameraIntrinsics(
                K.fx / 2, K.fy / 2, (K.cx - 0.5) / 2, (K.cy - 0.5) / 2,
                K.width // 2, K.height // 2, K.depth_scale)
        return K

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(np.arange(self.width, dtype=float), np.arange(self.height, dtype=float))


def in_bounds(x, y, width: int, height: int, tol: float = 0.0):
    return (x >= -tol) & (x <= width - 1 + tol) & (y >= -tol) & (y <= height - 1 + tol)


def project(point, K: CameraIntrinsics):
    """Project a camera-frame point. Returns (x, y) or None if invalid."""
    X, Y, Z = (float(v) for v in point)
    if not Z > Z_MIN:
        return None
    x = K.fx * X / Z + K.cx
    y = K.fy * Y / Z + K.cy
    if not in_bounds(x, y, K.width, K.height, BOUNDS_TOL):
        return None
    return x, y


def project_points(P: np.ndarray, K: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points -> (x, y, valid)."""
    Z = P[:, 2]
    front = Z > Z_MIN
    Zs = np.where(front, Z, 1.0)
    x = K.fx * P[:, 0] / Zs + K.cx
    y = K.fy * P[:, 1] / Zs + K.cy
    valid = front & in_bounds(x, y, K.width, K.height, BOUNDS_TOL)
    return x, y, valid


def backproject(x: float, y: float, depth: float, K: CameraIntrinsics) -> np.ndarray:
    if not (np.isfinite(depth) and depth > 0):
        raise InvalidDepthError(f"invalid depth {depth} at ({x}, {y})")
    return np.array([(x - K.cx) / K.fx * depth, (y - K.cy) / K.fy * depth, depth])


def backproject_points(x: np.ndarray, y: np.ndarray, depth: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized back-projection; caller filters invalid depth beforehand."""
    return np.stack([(x - K.cx) / K.fx * depth, (y - K.cy) / K.fy * depth, depth], axis=-1)


def warp(x: int, y: int, depth_a: np.ndarray, T: PoseSE3, K: CameraIntrinsics):
    """Map pixel (x, y) of frame A into frame B given T (A-camera -> B-camera).

    Returns (x', y') or None when depth is missing or the target is not visible.
    """
    d = depth_a[int(y), int(x)]
    try:
        p = backproject(x, y, d, K)
    except InvalidDepthError:
        return None
    return project(T.apply(p), K)
