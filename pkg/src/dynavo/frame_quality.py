"""Per-frame quality scores, benchmark initialization and dynamic masking.

All component scores live in [0, 1], higher meaning a more trustworthy
frame for feature tracking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraIntrinsics
from .flow import FlowField
from .imaging import corner_response, local_maxima, valid_depth


class ConfigError(ValueError):
    """Invalid weights or thresholds."""


def _clamp01(v: float) -> float:
    return float(min(max(v, 0.0), 1.0))


@dataclass(frozen=True)
class QualityWeights:
    w_conf: float = 0.3
    w_spatial: float = 0.2
    w_feature: float = 0.3
    w_depth: float = 0.2

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not (0.0 <= w <= 1.0) for w in ws):
            raise ConfigError(f"quality weights must lie in [0, 1]: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"quality weights must sum to 1, got {sum(ws)!r}")

    def as_tuple(self) -> tuple:
        return (self.w_conf, self.w_spatial, self.w_feature, self.w_depth)


@dataclass(frozen=True)
class QualityConfig:
    weights: QualityWeights = field(default_factory=QualityWeights)
    r_sat: float = 0.01          # corner response that counts as full strength
    top_n: int = 500
    grid: int = 8
    corner_frac: float = 0.05    # corner threshold as a fraction of r_sat
    g_sat: float = 0.5           # m/px depth gradient that zeroes smoothness
    flow_dyn_thresh: float = 1.5


@dataclass(frozen=True)
class QualityReport:
    s_conf: float
    s_spatial: float
    s_feature: float
    s_depth: float
    s_total: float


# ---------------------------------------------------------------- components

def score_confidence(dets) -> float:
    """Mean detection confidence; 0.5 when nothing is detected."""
    if not dets:
        return 0.5
    return _clamp01(float(np.mean([d.confidence for d in dets])))


def score_spatial(dets, K: CameraIntrinsics) -> float:
    """Penalize large and off-center objects; 1.0 without detections."""
    if not dets:
        return 1.0
    img_area = float(K.width * K.height)
    cx, cy = K.width / 2.0, K.height / 2.0
    max_dist = math.hypot(cx, cy)
    terms = []
    for d in dets:
        size = 1.0 - _clamp01(d.area / img_area / 0.5)
        bx, by = d.center
        central = 1.0 - _clamp01(math.hypot(bx - cx, by - cy) / max_dist)
        terms.append(size * central)
    return _clamp01(float(np.mean(terms)))


def feature_terms(img: np.ndarray, cfg: QualityConfig = QualityConfig()) -> tuple[float, float]:
    """(strength, uniformity) of the corner response."""
    h, w = img.shape
    if h < 32 or w < 32:
        raise ValueError(f"score_feature needs at least 32x32, got {w}x{h}")
    resp = corner_response(img)
    flat = resp.ravel()
    k = min(cfg.top_n, flat.size)
    top = np.partition(flat, flat.size - k)[flat.size - k:]
    strength = _clamp01(top.mean() / cfg.r_sat)

    corners = local_maxima(resp) & (resp >= cfg.corner_frac * cfg.r_sat)
    ys, xs = np.nonzero(corners)
    if len(xs) == 0:
        return strength, 0.0
    g = cfg.grid
    cells = (ys * g // h) * g + (xs * g // w)
    counts = np.bincount(cells, minlength=g * g).astype(float)
    p = counts[counts > 0] / counts.sum()
    entropy = float(-(p * np.log(p)).sum())
    return strength, _clamp01(entropy / math.log(g * g))


def score_feature(img: np.ndarray, cfg: QualityConfig = QualityConfig()) -> float:
    strength, uniformity = feature_terms(img, cfg)
    return 0.5 * strength + 0.5 * uniformity


def score_depth(depth: np.ndarray, g_sat: float = 0.5) -> float:
    """Average of coverage, consistency and smoothness of a depth map."""
    ok = valid_depth(depth)
    if not ok.any():
        return 0.0
    coverage = ok.mean()
    vals = depth[ok]
    mean = vals.mean()
    consistency = _clamp01(1.0 - vals.std() / mean)
    diffs = []
    for a, b, m in ((depth[:, 1:], depth[:, :-1], ok[:, 1:] & ok[:, :-1]),
                    (depth[1:, :], depth[:-1, :], ok[1:, :] & ok[:-1, :])):
        diffs.append(np.abs(a[m] - b[m]))
    diffs = np.concatenate(diffs)
    smoothness = _clamp01(1.0 - diffs.mean() / g_sat) if diffs.size else 0.0
    return float((coverage + consistency + smoothness) / 3.0)


def combine(weights: QualityWeights, s_conf: float, s_spatial: float,
            s_feature: float, s_depth: float) -> float:
    return (weights.w_conf * s_conf + weights.w_spatial * s_spatial
            + weights.w_feature * s_feature + weights.w_depth * s_depth)


def assess(img: np.ndarray, depth: np.ndarray, dets, K: CameraIntrinsics,
           cfg: QualityConfig = QualityConfig()) -> QualityReport:
    """All four components plus their weighted total."""
    parts = (score_confidence(dets), score_spatial(dets, K),
             score_feature(img, cfg), score_depth(depth, cfg.g_sat))
    return QualityReport(*parts, combine(cfg.weights, *parts))


# ---------------------------------------------------------------- initialization

def adapt_frame_threshold(th_f: float, n: int, th_fmax: float) -> float:
    """Grow the frame window once the current frame count has passed it."""
    return min(th_fmax, th_f * math.exp(max(0.0, n / th_f - 1.0)))


def adapt_quality_threshold(th_s: float, th_f: float, n: int, beta: float, th_smin: float) -> float:
    """Relax the quality threshold; ln(th_f/n) <= 0 pins it to th_smin."""
    return max(th_smin, beta * th_s * math.log(th_f / max(n, 1)))


@dataclass(frozen=True)
class InitState:
    th_s: float = 0.5
    th_f: float = 30.0
    th_fmax: float = 120.0
    th_smin: float = 0.3
    beta: float = 0.9
    n: int = 1                      # index of the next frame to be seen
    best: tuple | None = None       # (index, QualityReport) of the reference, once chosen
    qualifiers: tuple = ()          # (index, QualityReport) that met th_s when seen
    overall: tuple | None = None    # (index, QualityReport) global argmax

    def __post_init__(self):
        if not self.th_smin <= self.th_s:
            raise ConfigError("th_smin must not exceed th_s")
        if not self.th_f <= self.th_fmax:
            raise ConfigError("th_f must not exceed th_fmax")
        if self.n < 1:
            raise ConfigError("frame index n starts at 1")


@dataclass(frozen=True)
class Selected:
    index: int
    report: QualityReport
    fallback: bool = False


def init_step(state: InitState, report: QualityReport):
    """Feed the next frame's report. Returns (new_state, Selected | None).

    Once frame n reaches the window th_f, the best qualifier with index
    <= th_f is selected. Otherwise the window and the quality threshold
    adapt and the search goes on; at th_fmax the best frame seen so far is
    taken regardless of th_s.
    """
    n = state.n
    s = report.s_total
    qualifiers = state.qualifiers
    if s >= state.th_s:
        qualifiers = qualifiers + ((n, report),)
    overall = state.overall
    if overall is None or s > overall[1].s_total:
        overall = (n, report)
    new = replace(state, n=n + 1, qualifiers=qualifiers, overall=overall)

    if n >= state.th_f:
        eligible = [q for q in qualifiers if q[0] <= state.th_f]
        if eligible:
            # first maximum wins ties, i.e. the earliest frame
            idx, rep = max(eligible, key=lambda q: (q[1].s_total, -q[0]))
            return replace(new, best=(idx, rep)), Selected(idx, rep)
        th_f = adapt_frame_threshold(state.th_f, n, state.th_fmax)
        th_s = adapt_quality_threshold(state.th_s, th_f, n, state.beta, state.th_smin)
        new = replace(new, th_f=th_f, th_s=th_s)
    if n >= state.th_fmax:
        idx, rep = overall
        return replace(new, best=(idx, rep)), Selected(idx, rep, fallback=True)
    return new, None


# ---------------------------------------------------------------- dynamic observation

@dataclass(frozen=True)
class DynamicObservation:
    mask: np.ndarray            # bool, image-sized, True = dynamic
    dynamic_ratio: float
    moving: tuple               # per detection: judged dynamic
    flow_moving: tuple          # per detection: motion test fired


def _inside(points: np.ndarray, bbox) -> np.ndarray:
    x, y, w, h = bbox
    return (points[:, 0] >= x) & (points[:, 0] < x + w) & (points[:, 1] >= y) & (points[:, 1] < y + h)


def dynamic_observe(dets, flow: FlowField | None, K: CameraIntrinsics,
                    flow_dyn_thresh: float = 1.5) -> DynamicObservation:
    """Mark detections as dynamic by class prior or by motion relative to the background."""
    mask = np.zeros((K.height, K.width), dtype=bool)
    if not dets:
        return DynamicObservation(mask, 0.0, (), ())

    flow_moving = [False] * len(dets)
    if flow is not None and len(flow):
        pts = flow.points
        inside_any = np.zeros(len(pts), dtype=bool)
        for d in dets:
            inside_any |= _inside(pts, d.bbox)
        bg = flow.valid & ~inside_any
        if bg.any():
            bg_med = np.median(flow.displacements[bg], axis=0)
            for k, d in enumerate(dets):
                sel = flow.valid & _inside(pts, d.bbox)
                if sel.any():
                    med = np.median(flow.displacements[sel], axis=0)
                    flow_moving[k] = bool(np.linalg.norm(med - bg_med) > flow_dyn_thresh)

    moving = []
    for d, fm in zip(dets, flow_moving):
        dyn = bool(d.dynamic_prior or fm)
        moving.append(dyn)
        if dyn:
            mask |= d.region(K.width, K.height)
    ratio = float(np.count_nonzero(mask)) / float(mask.size)
    return DynamicObservation(mask, ratio, tuple(moving), tuple(flow_moving))
