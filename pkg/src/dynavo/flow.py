"""Pyramidal Lucas-Kanade optical flow on sparse sample points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import gradient, sample_bilinear

WINDOW = 11
ITERATIONS = 10
EPSILON = 0.01
MIN_EIGEN = 1e-4


@dataclass(frozen=True)
class FlowField:
    points: np.ndarray         # (N, 2) sample coordinates (x, y)
    displacements: np.ndarray  # (N, 2)
    valid: np.ndarray          # (N,) bool

    def __post_init__(self):
        n = len(self.points)
        if len(self.displacements) != n or len(self.valid) != n:
            raise ValueError("flow field arrays must have equal length")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, points: np.ndarray) -> "FlowField":
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(points, np.zeros_like(points), np.zeros(len(points), dtype=bool))

    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.displacements, axis=1)


def sample_grid(width: int, height: int, step: int = 20, margin: int = 10) -> np.ndarray:
    """Regular (N, 2) grid of sample coordinates."""
    xs = np.arange(margin, width - margin, step, dtype=float)
    ys = np.arange(margin, height - margin, step, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _to_level(p: np.ndarray, level: int) -> np.ndarray:
    # matches the pixel-center convention of the 2x2 box pyramid
    return (p + 0.5) / (1 << level) - 0.5


def lk_flow(prev: list[np.ndarray], nxt: list[np.ndarray], points: np.ndarray,
            window: int = WINDOW, iterations: int = ITERATIONS, eps: float = EPSILON,
            min_eigen: float = MIN_EIGEN) -> FlowField:
    """Track `points` from the `prev` pyramid into the `nxt` pyramid.

    Coarse-to-fine forward-additive LK. A sample is flagged invalid when its
    window is near-singular at any level or it drifts out of the image.
    """
    if len(prev) != len(nxt) or any(a.shape != b.shape for a, b in zip(prev, nxt)):
        raise ValueError("pyramids must have identical level shapes")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    if n == 0:
        return FlowField.empty(points)

    half = window // 2
    oy, ox = np.mgrid[-half:half + 1, -half:half + 1]
    ox = ox.ravel().astype(float)
    oy = oy.ravel().astype(float)

    guess = np.zeros((n, 2))
    valid = np.ones(n, dtype=bool)
    levels = len(prev)
    for level in range(levels - 1, -1, -1):
        I, J = prev[level], nxt[level]
        h, w = I.shape
        gx_img, gy_img = gradient(I)
        p = _to_level(points, level)
        wx = np.clip(p[:, :1] + ox, 0, w - 1)
        wy = np.clip(p[:, 1:] + oy, 0, h - 1)
        tmpl, _ = sample_bilinear(I, wx, wy)
        gx, _ = sample_bilinear(gx_img, wx, wy)
        gy, _ = sample_bilinear(gy_img, wx, wy)

        gxx = (gx * gx).sum(1)
        gxy = (gx * gy).sum(1)
        gyy = (gy * gy).sum(1)
        npx = float(len(ox))
        min_eig = 0.5 * (gxx + gyy) - np.sqrt(0.25 * (gxx - gyy) ** 2 + gxy ** 2)
        valid &= (min_eig / npx) >= min_eigen
        det = gxx * gyy - gxy * gxy
        det = np.where(valid, det, 1.0)

        d = np.zeros((n, 2))
        active = valid.copy()
        for _ in range(iterations):
            if not active.any():
                break
            cx = p[:, 0] + guess[:, 0] + d[:, 0]
            cy = p[:, 1] + guess[:, 1] + d[:, 1]
            outside = (cx < 0) | (cx > w - 1) | (cy < 0) | (cy > h - 1)
            valid &= ~outside
            active &= ~outside
            sx = np.clip(cx[:, None] + ox, 0, w - 1)
            sy = np.clip(cy[:, None] + oy, 0, h - 1)
            cur, _ = sample_bilinear(J, sx, sy)
            err = tmpl - cur
            bx = (gx * err).sum(1)
            by = (gy * err).sum(1)
            dx = (gyy * bx - gxy * by) / det
            dy = (gxx * by - gxy * bx) / det
            step = np.where(active[:, None], np.stack([dx, dy], 1), 0.0)
            d += step
            active &= np.hypot(step[:, 0], step[:, 1]) >= eps
        guess = guess + d
        if level > 0:
            guess = guess * 2.0

    end = points + guess
    h0, w0 = prev[0].shape
    valid &= (end[:, 0] >= 0) & (end[:, 0] <= w0 - 1) & (end[:, 1] >= 0) & (end[:, 1] <= h0 - 1)
    valid &= np.all(np.isfinite(guess), axis=1)
    disp = np.where(valid[:, None], guess, 0.0)
    return FlowField(points.copy(), disp, valid)
