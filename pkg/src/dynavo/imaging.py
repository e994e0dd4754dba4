"""Image primitives on 2-D float arrays.

Intensity images hold values in [0, 1]. Depth images hold meters; 0 or NaN
marks a missing measurement.
"""
from __future__ import annotations

import numpy as np


def valid_depth(depth: np.ndarray) -> np.ndarray:
    return np.isfinite(depth) & (depth > 0)


def clean_depth(depth: np.ndarray) -> np.ndarray:
    """Copy of `depth` with every invalid pixel set to NaN."""
    out = np.array(depth, dtype=float)
    out[~valid_depth(out)] = np.nan
    return out


def _corners(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    h, w = img.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    # right/bottom border: step back one cell so the far neighbor stays in range
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return valid, x0, y0, x1, y1, xs - x0, ys - y0


def sample_bilinear(img: np.ndarray, x, y, depth: bool = False):
    """Bilinear lookup at subpixel coordinates.

    Scalars return a float or None; arrays return (values, valid) with NaN
    at invalid samples. A sample is invalid when it falls outside the image
    or any of its four neighbors is NaN (or, with depth=True, not positive).
    """
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    valid, x0, y0, x1, y1, fx, fy = _corners(img, x, y)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    val = top + fy * (bot - top)
    valid = valid & np.isfinite(val)
    if depth:
        valid &= (a > 0) & (b > 0) & (c > 0) & (d > 0)
    val = np.where(valid, val, np.nan)
    if scalar:
        return float(val) if bool(valid) else None
    return val, valid


def sample_bilinear_grad(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear value plus its exact partial derivatives in x and y.

    The derivatives are those of the interpolant itself, so they agree with
    finite differences of `sample_bilinear` away from cell boundaries.
    """
    valid, x0, y0, x1, y1, fx, fy = _corners(img, x, y)
    a = img[y0, x0]
    b = img[y0, x1]
    c = img[y1, x0]
    d = img[y1, x1]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    val = top + fy * (bot - top)
    dx = (b - a) + fy * ((d - c) - (b - a))
    dy = bot - top
    valid = valid & np.isfinite(val)
    return val, dx, dy, valid


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences inside, one-sided at the borders. Returns (gx, gy)."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"gradient needs an image of at least 3x3, got {img.shape}")
    gy, gx = np.gradient(img)
    return gx, gy


def downsample(img: np.ndarray, depth: bool = False) -> np.ndarray:
    """2x2 box filter. With depth=True invalid pixels are left out of each mean."""
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    blocks = np.asarray(img, dtype=float)[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    if not depth:
        return blocks.mean(axis=(1, 3))
    ok = valid_depth(blocks)
    n = ok.sum(axis=(1, 3))
    s = np.where(ok, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def build_pyramid(img: np.ndarray, levels: int, depth: bool = False, min_size: int = 8) -> list[np.ndarray]:
    """Level 0 is `img`; each following level halves both dimensions (floor)."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = img.shape
    if (h >> (levels - 1)) < min_size or (w >> (levels - 1)) < min_size:
        raise ValueError(f"{levels} levels too many for a {w}x{h} image")
    pyr = [np.asarray(img, dtype=float)]
    for _ in range(levels - 1):
        pyr.append(downsample(pyr[-1], depth=depth))
    return pyr


def box_sum3(img: np.ndarray) -> np.ndarray:
    """Sum over each 3x3 neighborhood with edge replication."""
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    out = np.zeros_like(img, dtype=float)
    for dy in range(3):
        for dx in range(3):
            out += p[dy:dy + h, dx:dx + w]
    return out


def corner_response(img: np.ndarray) -> np.ndarray:
    """Shi-Tomasi score: smallest eigenvalue of the 3x3-averaged structure tensor."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 7:
        raise ValueError(f"corner_response needs at least 7x7, got {img.shape}")
    gx, gy = gradient(img)
    a = box_sum3(gx * gx) / 9.0
    b = box_sum3(gx * gy) / 9.0
    c = box_sum3(gy * gy) / 9.0
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return np.maximum(half_tr - disc, 0.0)


def local_maxima(resp: np.ndarray) -> np.ndarray:
    """Boolean map of pixels equal to the max of their 3x3 neighborhood."""
    p = np.pad(resp, 1, mode="constant", constant_values=-np.inf)
    h, w = resp.shape
    m = np.full(resp.shape, -np.inf)
    for dy in range(3):
        for dx in range(3):
            np.maximum(m, p[dy:dy + h, dx:dx + w], out=m)
    return resp >= m
