"""Pose refinement for frames gated BAD.

Dense direct alignment of the current frame against a pool of recent GOOD
frames (robust photometric + depth residuals, time-decayed across
references), a sparse frame-to-frame VO front end, and geodesic fusion of
the two estimates.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .camera import CameraIntrinsics, backproject_points
from .flow import FlowField, lk_flow
from .frame import Frame
from .geometry import PoseSE3, interpolate, rigid_fit, se3_exp
from .imaging import corner_response, local_maxima, sample_bilinear, sample_bilinear_grad
from .scene_decision import SceneDecision, Verdict

log = logging.getLogger(__name__)


class NoReference(RuntimeError):
    """No pooled GOOD frame is similar enough to serve as reference."""


class Degenerate(RuntimeError):
    """Direct alignment is ill-conditioned or lacks valid pixels."""


class TrackingLost(RuntimeError):
    """Not enough inlier correspondences for a pose."""


class Provenance(str, Enum):
    FEATURE = "Feature"
    FUSED = "Fused"
    FEATURE_FALLBACK = "FeatureFallback"
    DIRECT = "Direct"
    CONSTANT_VELOCITY = "ConstantVelocity"


@dataclass(frozen=True)
class RobustCostConfig:
    alpha_i: float = 1.0
    cauchy_scale_i: float = 0.1
    cauchy_scale_d: float = 0.05
    lam: float = 0.5
    pyramid_levels: int = 3
    max_iters: int = 30
    step_tolerance: float = 1e-6
    gamma_fg: float = 0.1
    gamma_bg: float = 1.0
    min_pixels: int = 200
    max_condition: float = 1e12
    pixel_stride: int = 1       # finest-level subsampling, 1 = every pixel

    def __post_init__(self):
        for name in ("alpha_i", "cauchy_scale_i", "cauchy_scale_d", "lam", "step_tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pyramid_levels < 1 or self.max_iters < 1 or self.pixel_stride < 1:
            raise ValueError("pyramid_levels, max_iters and pixel_stride must be >= 1")


@dataclass(frozen=True)
class FusionConfig:
    mu: float = 2.0
    th_keyframes: float = 3.0

    def __post_init__(self):
        if self.mu < 0 or not self.th_keyframes > 0:
            raise ValueError("mu must be >= 0 and th_keyframes > 0")


@dataclass(frozen=True)
class VOConfig:
    n_features: int = 300
    ransac_iters: int = 200
    inlier_threshold: float = 0.03
    min_inliers: int = 12
    seed: int = 0


# ---------------------------------------------------------------- signatures

@dataclass(frozen=True)
class FrameSignature:
    depth_hist: np.ndarray      # 16 bins over [0, 8] m, sums to 1 (or all zero)
    motion_desc: np.ndarray     # (mean flow magnitude px, circular variance of direction)

    def distance(self, other: "FrameSignature") -> float:
        return float(np.linalg.norm(self.depth_hist - other.depth_hist)
                     + np.linalg.norm(self.motion_desc - other.motion_desc))


def signature(depth: np.ndarray, flow: FlowField | None = None, dyn_mask: np.ndarray | None = None,
              bins: int = 16, max_depth: float = 8.0) -> FrameSignature:
    """Depth histogram plus background motion statistics.

    Flow samples inside `dyn_mask` are ignored so the motion part describes
    the camera rather than the moving objects.
    """
    d = depth[np.isfinite(depth) & (depth > 0)]
    hist, _ = np.histogram(d, bins=bins, range=(0.0, max_depth))
    hist = hist.astype(float)
    total = hist.sum()
    if total > 0:
        hist /= total
    motion = np.zeros(2)
    if flow is not None:
        use = flow.valid.copy()
        if dyn_mask is not None and len(flow):
            h, w = dyn_mask.shape
            ix = np.clip(np.round(flow.points[:, 0]).astype(int), 0, w - 1)
            iy = np.clip(np.round(flow.points[:, 1]).astype(int), 0, h - 1)
            use &= ~dyn_mask[iy, ix]
        if use.any():
            disp = flow.displacements[use]
            mag = np.linalg.norm(disp, axis=1)
            motion[0] = mag.mean()
            moving = mag > 1e-6
            if moving.any():
                unit = disp[moving] / mag[moving, None]
                motion[1] = 1.0 - float(np.linalg.norm(unit.mean(0)))
    return FrameSignature(hist, motion)


@dataclass
class RefEntry:
    timestamp: float
    frame: Frame
    signature: FrameSignature
    pose: PoseSE3               # camera-to-world estimate


class RefPool:
    """Most recent GOOD frames, oldest dropped first."""

    def __init__(self, capacity: int = 3):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque = deque(maxlen=capacity)

    def offer(self, entry: RefEntry) -> None:
        if self._entries and entry.timestamp <= self._entries[-1].timestamp:
            raise ValueError("reference frames must arrive in timestamp order")
        self._entries.append(entry)

    @property
    def entries(self) -> list:
        return list(self._entries)

    def __len__(self):
        return len(self._entries)


def select_references(pool: RefPool, sig: FrameSignature, th_keyframes: float) -> list:
    """Pool entries within `th_keyframes` signature distance, newest first."""
    picked = [e for e in reversed(pool.entries) if sig.distance(e.signature) <= th_keyframes]
    if not picked:
        raise NoReference(f"no reference within distance {th_keyframes} among {len(pool)} pooled frames")
    return picked


# ---------------------------------------------------------------- residuals

def time_decay(t_cur: float, t_ref: float, lam: float) -> float:
    """Reference weight exp(-lam |t_cur - t_ref|), 1 for a simultaneous frame."""
    return float(np.exp(-lam * abs(t_cur - t_ref)))


def cauchy_cost(r: np.ndarray, c: float) -> np.ndarray:
    return 0.5 * c * c * np.log1p((r / c) ** 2)


def cauchy_weight(r: np.ndarray, c: float) -> np.ndarray:
    return 1.0 / (1.0 + (r / c) ** 2)


def _warp_terms(points: np.ndarray, T: PoseSE3, K: CameraIntrinsics,
                intensity_b: np.ndarray, depth_b: np.ndarray, with_jacobian: bool):
    """Warp A-frame 3-D points into B and sample B around the projections."""
    R = T.R
    Pb = points @ R.T + T.translation
    Z = Pb[:, 2]
    front = Z > 1e-4
    Zs = np.where(front, Z, 1.0)
    u = K.fx * Pb[:, 0] / Zs + K.cx
    v = K.fy * Pb[:, 1] / Zs + K.cy
    ib, ibx, iby, ok_i = sample_bilinear_grad(intensity_b, u, v)
    db, dbx, dby, ok_d = sample_bilinear_grad(depth_b, u, v)
    valid = front & ok_i & ok_d & (db > 0)
    out = {"Pb": Pb, "u": u, "v": v, "ib": ib, "db": db, "valid": valid}
    if not with_jacobian:
        return out
    # d(u, v)/d(Pb)
    inv_z = 1.0 / Zs
    du = np.stack([K.fx * inv_z, np.zeros_like(Z), -K.fx * Pb[:, 0] * inv_z * inv_z], axis=1)
    dv = np.stack([np.zeros_like(Z), K.fy * inv_z, -K.fy * Pb[:, 1] * inv_z * inv_z], axis=1)
    gi = ibx[:, None] * du + iby[:, None] * dv
    gd = dbx[:, None] * du + dby[:, None] * dv
    gd[:, 2] -= 1.0
    # Pb = R (exp(xi) p) + t  =>  dPb/dxi = R [I | -[p]x]
    ai = gi @ R
    ad = gd @ R
    out["J_i"] = np.concatenate([ai, np.cross(points, ai)], axis=1)
    out["J_d"] = np.concatenate([ad, np.cross(points, ad)], axis=1)
    return out


def residuals(intensity_a: np.ndarray, depth_a: np.ndarray, intensity_b: np.ndarray,
              depth_b: np.ndarray, T: PoseSE3, K: CameraIntrinsics, with_jacobian: bool = False):
    """Per-pixel intensity and depth residuals of A warped into B by T (A -> B).

    Returns a dict with image-shaped `r_i`, `r_d` (NaN where invalid) and
    `valid`; with_jacobian adds (H, W, 6) `J_i`, `J_d`, the derivatives with
    respect to a right perturbation T * exp(xi), xi = (v, omega).
    """
    if intensity_a.shape != intensity_b.shape or depth_a.shape != depth_b.shape \
            or intensity_a.shape != depth_a.shape:
        raise ValueError("frames must share one image size")
    h, w = intensity_a.shape
    ys, xs = np.nonzero(np.isfinite(depth_a) & (depth_a > 0))
    pts = backproject_points(xs.astype(float), ys.astype(float), depth_a[ys, xs], K)
    wt = _warp_terms(pts, T, K, intensity_b, depth_b, with_jacobian)
    valid = wt["valid"]
    r_i = np.full((h, w), np.nan)
    r_d = np.full((h, w), np.nan)
    r_i[ys[valid], xs[valid]] = wt["ib"][valid] - intensity_a[ys[valid], xs[valid]]
    r_d[ys[valid], xs[valid]] = wt["db"][valid] - wt["Pb"][valid, 2]
    mask = np.zeros((h, w), dtype=bool)
    mask[ys[valid], xs[valid]] = True
    out = {"r_i": r_i, "r_d": r_d, "valid": mask, "u": np.full((h, w), np.nan), "v": np.full((h, w), np.nan)}
    out["u"][ys, xs] = wt["u"]
    out["v"][ys, xs] = wt["v"]
    if with_jacobian:
        J_i = np.full((h, w, 6), np.nan)
        J_d = np.full((h, w, 6), np.nan)
        J_i[ys[valid], xs[valid]] = wt["J_i"][valid]
        J_d[ys[valid], xs[valid]] = wt["J_d"][valid]
        out["J_i"] = J_i
        out["J_d"] = J_d
    return out


# ---------------------------------------------------------------- direct alignment

@dataclass
class AlignResult:
    pose: PoseSE3
    cost: float
    iterations: int
    initial_cost: float = float("nan")
    valid_pixels: int = 0
    cost_history: list = field(default_factory=list)


@dataclass
class _LevelRef:
    intensity: np.ndarray
    depth: np.ndarray
    pose_inv: PoseSE3       # world -> reference camera
    decay: float
    mask: np.ndarray | None = None


def _mask_level(mask: np.ndarray, level: int) -> np.ndarray:
    for _ in range(level):
        h2, w2 = mask.shape[0] // 2, mask.shape[1] // 2
        mask = mask[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3)) >= 0.5
    return mask


def _level_points(frame: Frame, level: int, levels: int, K: CameraIntrinsics, stride: int,
                  dyn_mask: np.ndarray, cfg: RobustCostConfig):
    depth = frame.depth_pyramid(levels)[level]
    intensity = frame.intensity_pyramid(levels)[level]
    ok = np.isfinite(depth) & (depth > 0)
    if stride > 1:
        sub = np.zeros_like(ok)
        sub[::stride, ::stride] = True
        ok &= sub
    ys, xs = np.nonzero(ok)
    pts = backproject_points(xs.astype(float), ys.astype(float), depth[ys, xs], K)
    m = _mask_level(dyn_mask, level)
    gamma = np.where(m[ys, xs], cfg.gamma_fg, cfg.gamma_bg)
    return pts, intensity[ys, xs], gamma


def _evaluate(pose: PoseSE3, pts, ia, gamma, refs, K, cfg, with_jacobian: bool):
    """Total robust cost (and normal equations) of the current-frame world pose."""
    cost = 0.0
    n_valid = 0
    H = np.zeros((6, 6))
    g = np.zeros(6)
    ci, cd = cfg.cauchy_scale_i, cfg.cauchy_scale_d
    for ref in refs:
        T = ref.pose_inv @ pose
        wt = _warp_terms(pts, T, K, ref.intensity, ref.depth, with_jacobian)
        valid = wt["valid"]
        if not valid.any():
            continue
        n_valid += int(valid.sum())
        ri = cfg.alpha_i * (wt["ib"][valid] - ia[valid])
        rd = wt["db"][valid] - wt["Pb"][valid, 2]
        gam = gamma[valid]
        if ref.mask is not None:
            # pixels landing on a moving object in the reference are foreground too
            h, w = ref.mask.shape
            iu = np.clip(np.rint(wt["u"][valid]).astype(int), 0, w - 1)
            iv = np.clip(np.rint(wt["v"][valid]).astype(int), 0, h - 1)
            gam = np.where(ref.mask[iv, iu], cfg.gamma_fg, gam)
        scale = ref.decay * gam
        cost += float(np.sum(scale * (cauchy_cost(ri, ci) + cauchy_cost(rd, cd))))
        if with_jacobian:
            wi = scale * cauchy_weight(ri, ci)
            wd = scale * cauchy_weight(rd, cd)
            Ji = cfg.alpha_i * wt["J_i"][valid]
            Jd = wt["J_d"][valid]
            H += (Ji * wi[:, None]).T @ Ji + (Jd * wd[:, None]).T @ Jd
            g += Ji.T @ (wi * ri) + Jd.T @ (wd * rd)
    return cost, n_valid, H, g


def direct_align(frame: Frame, refs: list, dyn_mask: np.ndarray | None, K: CameraIntrinsics,
                 cfg: RobustCostConfig = RobustCostConfig(), T0: PoseSE3 | None = None) -> AlignResult:
    """Estimate the camera-to-world pose of `frame` against reference entries.

    Minimizes sum_k B_k sum_p gamma(p) [C(alpha r_I) + C(r_D)] with Cauchy
    C, B_k = exp(-lam |t_c - t_k|) and gamma down-weighting dynamic pixels.
    Iteratively reweighted Gauss-Newton on a right-multiplied twist,
    coarse to fine. A step that raises the cost is halved up to five times;
    the lowest-cost iterate of the finest level is returned.
    """
    if not refs:
        raise Degenerate("direct alignment needs at least one reference")
    levels = cfg.pyramid_levels
    pose = refs[0].pose if T0 is None else T0
    dyn = np.zeros(frame.shape, dtype=bool) if dyn_mask is None else dyn_mask
    result = None
    total_iters = 0
    for level in range(levels - 1, -1, -1):
        Kl = K.scaled(level)
        stride = cfg.pixel_stride if level == 0 else 1
        pts, ia, gamma = _level_points(frame, level, levels, Kl, stride, dyn, cfg)
        lrefs = [_LevelRef(r.frame.intensity_pyramid(levels)[level], r.frame.depth_pyramid(levels)[level],
                           r.pose.inverse(), time_decay(frame.timestamp, r.timestamp, cfg.lam),
                           None if r.frame.dyn_mask is None else _mask_level(r.frame.dyn_mask, level))
                 for r in refs]
        cost, n_valid, H, g = _evaluate(pose, pts, ia, gamma, lrefs, Kl, cfg, True)
        if level == 0 and n_valid < cfg.min_pixels:
            raise Degenerate(f"only {n_valid} valid residual pixels at full resolution")
        history = [cost]
        initial = cost
        best_pose, best_cost = pose, cost
        iters = 0
        while iters < cfg.max_iters and n_valid > 0:
            if np.linalg.cond(H) > cfg.max_condition:
                raise Degenerate(f"normal equations ill-conditioned at level {level}")
            step = -np.linalg.solve(H, g)
            if np.linalg.norm(step) < cfg.step_tolerance:
                break
            accepted = False
            for _ in range(6):
                cand = pose @ se3_exp(step)
                c_cost, c_valid, c_H, c_g = _evaluate(cand, pts, ia, gamma, lrefs, Kl, cfg, True)
                if c_valid > 0 and c_cost <= cost:
                    accepted = True
                    break
                step = step / 2.0
            if not accepted:
                break
            iters += 1
            pose, cost, n_valid, H, g = cand, c_cost, c_valid, c_H, c_g
            history.append(cost)
            if cost < best_cost:
                best_pose, best_cost = pose, cost
            if np.linalg.norm(step) < cfg.step_tolerance:
                break
        total_iters += iters
        pose = best_pose
        result = AlignResult(best_pose, best_cost, total_iters, initial, n_valid, history)
    return result


# ---------------------------------------------------------------- sparse VO

def pick_corners(img: np.ndarray, n: int, exclude: np.ndarray | None = None,
                 grid: int = 8, min_response: float = 1e-5) -> np.ndarray:
    """Strongest Shi-Tomasi maxima, spread over a grid of buckets. Returns (N, 2) x, y."""
    resp = corner_response(img)
    cand = local_maxima(resp) & (resp > min_response)
    h, w = img.shape
    margin = 8
    cand[:margin] = False
    cand[-margin:] = False
    cand[:, :margin] = False
    cand[:, -margin:] = False
    if exclude is not None:
        cand &= ~exclude
    ys, xs = np.nonzero(cand)
    if len(xs) == 0:
        return np.zeros((0, 2))
    r = resp[ys, xs]
    cell = (ys * grid // h) * grid + (xs * grid // w)
    per_cell = max(1, int(np.ceil(n / (grid * grid))))
    order = np.lexsort((-r, cell))
    picked = []
    counts = {}
    for k in order:
        c = cell[k]
        if counts.get(c, 0) < per_cell:
            counts[c] = counts.get(c, 0) + 1
            picked.append(k)
    picked = np.array(picked)
    picked = picked[np.argsort(-r[picked], kind="stable")][:n]
    return np.stack([xs[picked], ys[picked]], axis=1).astype(float)


def _ransac_rigid(src: np.ndarray, dst: np.ndarray, cfg: VOConfig):
    rng = np.random.default_rng(cfg.seed)
    n = len(src)
    best = np.zeros(n, dtype=bool)
    for _ in range(cfg.ransac_iters):
        idx = rng.choice(n, 3, replace=False)
        R, t, S = rigid_fit(src[idx], dst[idx])
        if S[1] < 1e-9:
            continue
        err = np.linalg.norm(src @ R.T + t - dst, axis=1)
        inl = err < cfg.inlier_threshold
        if inl.sum() > best.sum():
            best = inl
    if best.sum() < 3:
        return None, best
    for _ in range(3):
        R, t, _ = rigid_fit(src[best], dst[best])
        err = np.linalg.norm(src @ R.T + t - dst, axis=1)
        inl = err < cfg.inlier_threshold
        if inl.sum() < 3 or np.array_equal(inl, best):
            break
        best = inl
    R, t, _ = rigid_fit(src[best], dst[best])
    return PoseSE3.from_rt(R, t), best


def feature_vo(prev: Frame, cur: Frame, dyn_mask: np.ndarray | None, K: CameraIntrinsics,
               cfg: VOConfig = VOConfig(), levels: int = 3) -> PoseSE3:
    """Relative pose of `cur` in the camera frame of `prev` (cur -> prev).

    Corners of `prev` outside the dynamic mask are tracked by LK, lifted to
    3-D with both depth maps and aligned rigidly inside RANSAC.
    """
    pts = pick_corners(prev.intensity, cfg.n_features, dyn_mask)
    if len(pts) < cfg.min_inliers:
        raise TrackingLost(f"only {len(pts)} corners outside the dynamic mask")
    d_prev = prev.depth[pts[:, 1].astype(int), pts[:, 0].astype(int)]
    keep = np.isfinite(d_prev) & (d_prev > 0)
    pts, d_prev = pts[keep], d_prev[keep]
    fl = lk_flow(prev.intensity_pyramid(levels), cur.intensity_pyramid(levels), pts)
    end = pts + fl.displacements
    d_cur, ok = sample_bilinear(cur.depth, end[:, 0], end[:, 1], depth=True)
    ok &= fl.valid
    if dyn_mask is not None:
        ix = np.clip(np.round(end[:, 0]).astype(int), 0, K.width - 1)
        iy = np.clip(np.round(end[:, 1]).astype(int), 0, K.height - 1)
        ok &= ~dyn_mask[iy, ix]
    if ok.sum() < cfg.min_inliers:
        raise TrackingLost(f"only {int(ok.sum())} tracked correspondences with depth")
    P_prev = backproject_points(pts[ok, 0], pts[ok, 1], d_prev[ok], K)
    P_cur = backproject_points(end[ok, 0], end[ok, 1], d_cur[ok], K)
    pose, inliers = _ransac_rigid(P_cur, P_prev, cfg)
    if pose is None or inliers.sum() < cfg.min_inliers:
        raise TrackingLost(f"only {int(inliers.sum())} RANSAC inliers")
    return pose


# ---------------------------------------------------------------- fusion

def fusion_weight(s_change: float, mu: float) -> float:
    return float(np.exp(-mu * s_change))


def fuse(T_feature: PoseSE3, T_direct: PoseSE3, s_change: float, mu: float) -> PoseSE3:
    """Move from T_direct toward T_feature by exp(-mu * s_change) on the pose manifold."""
    if not 0.0 <= s_change <= 1.0:
        raise ValueError(f"s_change {s_change} outside [0, 1]")
    return interpolate(T_direct, T_feature, fusion_weight(s_change, mu))


def refine_pipeline(frame: Frame, decision: SceneDecision, s_change: float, pool: RefPool,
                    K: CameraIntrinsics, T_feat: PoseSE3 | None, sig: FrameSignature,
                    cost_cfg: RobustCostConfig = RobustCostConfig(),
                    fusion_cfg: FusionConfig = FusionConfig()):
    """Route one frame by its verdict. Returns (camera-to-world pose, Provenance).

    GOOD frames keep the feature pose and join the reference pool. BAD frames
    are aligned against similar pooled frames and fused; without references,
    or when alignment degenerates, the feature pose is kept. T_feat None
    means feature tracking failed: a BAD frame then relies on direct
    alignment alone, and TrackingLost is raised when that is unavailable too.
    """
    if decision.verdict is Verdict.GOOD:
        if T_feat is None:
            raise TrackingLost("feature tracking failed on a GOOD frame")
        pool.offer(RefEntry(frame.timestamp, frame, sig, T_feat))
        return T_feat, Provenance.FEATURE
    seed = T_feat
    try:
        refs = select_references(pool, sig, fusion_cfg.th_keyframes)
        if seed is None:
            seed = refs[0].pose
        aligned = direct_align(frame, refs, frame.dyn_mask, K, cost_cfg, seed)
    except (NoReference, Degenerate, np.linalg.LinAlgError) as exc:
        if T_feat is None:
            raise TrackingLost(f"feature and direct tracking both failed: {exc}") from exc
        log.debug("frame %d: %s; keeping feature pose", frame.index, exc)
        return T_feat, Provenance.FEATURE_FALLBACK
    if T_feat is None:
        return aligned.pose, Provenance.DIRECT
    return fuse(T_feat, aligned.pose, s_change, fusion_cfg.mu), Provenance.FUSED
