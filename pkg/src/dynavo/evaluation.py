"""Trajectory metrics: rigid alignment, ATE, RPE, and their CSV/SVG reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import Trajectory, associate
from .geometry import PoseSE3, rigid_fit

ASSOC_TOLERANCE = 0.02
RPE_DELTA = 1


class EvaluationError(ValueError):
    """Trajectories cannot be associated or aligned."""


@dataclass(frozen=True)
class AteResult:
    rmse: float
    std: float
    per_frame_errors: np.ndarray
    alignment: tuple        # (R, t) mapping estimate positions onto ground truth


@dataclass(frozen=True)
class RpeResult:
    trans_rmse: float
    trans_std: float
    rot_rmse: float         # degrees
    rot_std: float
    delta: int = RPE_DELTA
    trans_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rot_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))


def associate_trajectories(est: Trajectory, gt: Trajectory, tol: float = ASSOC_TOLERANCE) -> list:
    """Matched (est_pose, gt_pose) pairs in estimate-time order."""
    pairs = associate(list(est.timestamps), list(gt.timestamps), tol)
    if not pairs:
        raise EvaluationError(f"no estimate/ground-truth timestamps within {tol} s")
    return [(est[i][1], gt[j][1]) for i, j in pairs]


def umeyama_align(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Rigid (R, t) minimizing sum ||R p_est + t - p_gt||^2, without scale."""
    if len(pairs) < 3:
        raise EvaluationError(f"alignment needs at least 3 pose pairs, got {len(pairs)}")
    src = np.array([p.translation for p, _ in pairs])
    dst = np.array([q.translation for _, q in pairs])
    R, t, S = rigid_fit(src, dst)
    spread = max(np.ptp(src, axis=0).max(), np.ptp(dst, axis=0).max(), 1.0)
    if S[1] <= 1e-12 * spread * spread:
        raise EvaluationError("positions are collinear or coincident; alignment is undetermined")
    # SVD round-off leaves R a few ulps off identity even when no rotation is
    # needed; keep the pure translation when it fits at least as well
    t0 = dst.mean(0) - src.mean(0)
    if np.sum((src + t0 - dst) ** 2) <= np.sum((src @ R.T + t - dst) ** 2):
        return np.eye(3), t0
    return R, t


def _quat_angle_deg(qa: np.ndarray, qb: np.ndarray) -> float:
    """Angle of qa^-1 qb from the chord between the unit quaternions."""
    if np.dot(qa, qb) < 0:
        qb = -qb
    return float(np.degrees(4.0 * np.arctan2(np.linalg.norm(qa - qb), np.linalg.norm(qa + qb))))


def _rms_std(e: np.ndarray) -> tuple[float, float]:
    return float(np.sqrt(np.mean(e * e))), float(np.std(e))


def ate(est: Trajectory, gt: Trajectory, tol: float = ASSOC_TOLERANCE) -> AteResult:
    pairs = associate_trajectories(est, gt, tol)
    R, t = umeyama_align(pairs)
    p_est = np.array([p.translation for p, _ in pairs]) @ R.T + t
    p_gt = np.array([q.translation for _, q in pairs])
    err = np.linalg.norm(p_est - p_gt, axis=1)
    rmse, std = _rms_std(err)
    return AteResult(rmse, std, err, (R, t))


def rpe(est: Trajectory, gt: Trajectory, delta: int = RPE_DELTA, tol: float = ASSOC_TOLERANCE) -> RpeResult:
    """Relative pose error over steps of `delta` matched frames."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    pairs = associate_trajectories(est, gt, tol)
    if len(pairs) < delta + 1:
        raise EvaluationError(f"RPE with delta {delta} needs {delta + 1} matched poses, got {len(pairs)}")
    te, re = [], []
    for (P0, Q0), (P1, Q1) in zip(pairs, pairs[delta:]):
        A = Q0.inverse() @ Q1
        B = P0.inverse() @ P1
        # E = A^-1 B, written so that identical steps cancel exactly
        te.append(np.linalg.norm(A.R.T @ (B.translation - A.translation)))
        re.append(_quat_angle_deg(A.rotation, B.rotation))
    te, re = np.array(te), np.array(re)
    tr, ts = _rms_std(te)
    rr, rs = _rms_std(re)
    return RpeResult(tr, ts, rr, rs, delta, te, re)


# ---------------------------------------------------------------- reports

CSV_COLUMNS = ("sequence", "ate_rmse", "ate_std", "t_rpe_rmse", "t_rpe_std",
               "rot_rpe_rmse", "rot_rpe_std", "rpe_delta_frames")


def metrics_row(name: str, a: AteResult, r: RpeResult) -> dict:
    return {"sequence": name, "ate_rmse": a.rmse, "ate_std": a.std, "t_rpe_rmse": r.trans_rmse,
            "t_rpe_std": r.trans_std, "rot_rpe_rmse": r.rot_rmse, "rot_rpe_std": r.rot_std,
            "rpe_delta_frames": r.delta}


def write_metrics_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})


def aligned_positions(est: Trajectory, gt: Trajectory, tol: float = ASSOC_TOLERANCE):
    """(aligned estimate, ground truth) positions of the matched pairs."""
    pairs = associate_trajectories(est, gt, tol)
    R, t = umeyama_align(pairs)
    p_est = np.array([p.translation for p, _ in pairs]) @ R.T + t
    p_gt = np.array([q.translation for _, q in pairs])
    return p_est, p_gt


def write_trajectory_svg(p_est: np.ndarray, p_gt: np.ndarray, path, size: int = 600,
                         title: str = "") -> None:
    """Top-down plot on the two axes where ground truth spreads most.

    Ground truth in black, estimate in blue, per-frame differences in red.
    """
    both = np.vstack([p_est, p_gt])
    axes = np.sort(np.argsort(np.ptp(p_gt, axis=0))[-2:])
    xy = both[:, axes]
    lo = xy.min(axis=0)
    span = max(float(np.ptp(xy, axis=0).max()), 1e-6)
    margin = 30
    scale = (size - 2 * margin) / span

    def pts(P):
        q = (P[:, axes] - lo) * scale + margin
        q[:, 1] = size - q[:, 1]
        return q

    e, g = pts(p_est), pts(p_gt)
    poly = lambda q: " ".join(f"{x:.2f},{y:.2f}" for x, y in q)
    names = "xyz"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for a, b in zip(e, g):
        out.append(f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                   'stroke="red" stroke-width="0.8"/>')
    out.append(f'<polyline points="{poly(g)}" fill="none" stroke="black" stroke-width="1.5"/>')
    out.append(f'<polyline points="{poly(e)}" fill="none" stroke="blue" stroke-width="1.5"/>')
    label = f"{title}  " if title else ""
    out.append(f'<text x="8" y="18" font-size="13" font-family="sans-serif">{label}'
               f'ground truth (black), estimate (blue), difference (red); '
               f'axes {names[axes[0]]}/{names[axes[1]]} [m]</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def evaluate_files(est: Trajectory, gt: Trajectory, out_dir, name: str = "sequence") -> dict:
    """Compute ATE/RPE and write metrics.csv and trajectory.svg into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a = ate(est, gt)
    r = rpe(est, gt)
    row = metrics_row(name, a, r)
    write_metrics_csv([row], out / "metrics.csv")
    p_est, p_gt = aligned_positions(est, gt)
    write_trajectory_svg(p_est, p_gt, out / "trajectory.svg", title=name)
    return row


__all__ = ["AteResult", "RpeResult", "EvaluationError", "associate_trajectories", "umeyama_align",
           "ate", "rpe", "metrics_row", "write_metrics_csv", "write_trajectory_svg",
           "aligned_positions", "evaluate_files", "PoseSE3"]
