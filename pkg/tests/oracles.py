"""Independent reference implementations used to check the package.

Nothing here imports dynavo internals: rotations go through scipy, poses
through plain 4x4 matrices, alignment through Horn's quaternion method
(an eigen-decomposition, unlike the SVD route in the package), and the
adaptive thresholds through mpmath at 50 digits.
"""
from __future__ import annotations

import itertools

import mpmath
import numpy as np
from scipy.spatial.transform import Rotation, Slerp


# ---------------------------------------------------------------- poses as matrices

def matrix(q_xyzw, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = Rotation.from_quat(q_xyzw).as_matrix()
    T[:3, 3] = t
    return T


def pose_matrix(pose) -> np.ndarray:
    """4x4 matrix of any object exposing .rotation (xyzw) and .translation."""
    return matrix(np.asarray(pose.rotation), np.asarray(pose.translation))


def twist_matrix(xi) -> np.ndarray:
    """exp of a (v, omega) twist through the matrix exponential."""
    from scipy.linalg import expm
    v, w = np.asarray(xi[:3], float), np.asarray(xi[3:], float)
    A = np.zeros((4, 4))
    A[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    A[:3, 3] = v
    return expm(A)


def angle_deg(R: np.ndarray) -> float:
    return float(np.degrees(np.linalg.norm(Rotation.from_matrix(R).as_rotvec())))


# ---------------------------------------------------------------- association

def associate_bruteforce(a, b, tol):
    """Repeatedly take the globally smallest admissible gap among unused rows.

    Equal gaps go to the earlier b, then the earlier a; gaps are compared in
    integer microseconds. O(n^3) on purpose.
    """
    ua = [int(round(t * 1e6)) for t in a]
    ub = [int(round(t * 1e6)) for t in b]
    tol_us = int(round(tol * 1e6))
    free_a, free_b = set(range(len(a))), set(range(len(b)))
    pairs = []
    while True:
        best = None
        for i, j in itertools.product(sorted(free_a), sorted(free_b)):
            gap = abs(ua[i] - ub[j])
            if gap > tol_us:
                continue
            key = (gap, ub[j], ua[i])
            if best is None or key < best[0]:
                best = (key, i, j)
        if best is None:
            return sorted(pairs)
        _, i, j = best
        pairs.append((i, j))
        free_a.discard(i)
        free_b.discard(j)


# ---------------------------------------------------------------- metrics

def horn_align(src: np.ndarray, dst: np.ndarray):
    """Rigid R, t minimizing sum |R src + t - dst|^2 via Horn's unit quaternion."""
    ms, md = src.mean(0), dst.mean(0)
    S = (src - ms).T @ (dst - md)
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array([
        [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
        [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
        [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
        [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
    ])
    vals, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, np.argmax(vals)]
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    return R, md - R @ ms


def ate_bruteforce(est_pairs):
    """(rmse, std) from [(est 4x4, gt 4x4)] pairs."""
    P = np.array([e[:3, 3] for e, _ in est_pairs])
    Q = np.array([g[:3, 3] for _, g in est_pairs])
    R, t = horn_align(P, Q)
    err = [float(np.sqrt(sum((R @ p + t - q) ** 2))) for p, q in zip(P, Q)]
    n = len(err)
    rmse = (sum(e * e for e in err) / n) ** 0.5
    mean = sum(err) / n
    std = (sum((e - mean) ** 2 for e in err) / n) ** 0.5
    return rmse, std


def rpe_bruteforce(est_pairs, delta=1):
    """(trans_rmse, trans_std, rot_rmse_deg, rot_std_deg) from 4x4 pairs."""
    te, re = [], []
    for k in range(len(est_pairs) - delta):
        P0, Q0 = est_pairs[k]
        P1, Q1 = est_pairs[k + delta]
        E = np.linalg.inv(np.linalg.inv(Q0) @ Q1) @ (np.linalg.inv(P0) @ P1)
        te.append(float(np.linalg.norm(E[:3, 3])))
        re.append(angle_deg(E[:3, :3]))

    def rs(e):
        e = np.array(e)
        return float(np.sqrt(np.mean(e ** 2))), float(np.std(e))

    return (*rs(te), *rs(re))


# ---------------------------------------------------------------- interpolation

def geodesic_blend(qa, ta, qb, tb, frac):
    """Rotation slerp by scipy, translation lerp: the pose fraction `frac` from a to b."""
    s = Slerp([0.0, 1.0], Rotation.from_quat([qa, qb]))
    R = s([frac]).as_matrix()[0]
    return R, (1 - frac) * np.asarray(ta) + frac * np.asarray(tb)


# ---------------------------------------------------------------- adaptive thresholds

mpmath.mp.dps = 50


def frame_threshold_mp(th_f, n, th_fmax):
    th_f, n = mpmath.mpf(th_f), mpmath.mpf(n)
    return min(mpmath.mpf(th_fmax), th_f * mpmath.e ** max(0, n / th_f - 1))


def quality_threshold_mp(th_s, th_f, n, beta, th_smin):
    return max(mpmath.mpf(th_smin), mpmath.mpf(beta) * mpmath.mpf(th_s) * mpmath.log(mpmath.mpf(th_f) / n))


# ---------------------------------------------------------------- finite differences

def central_difference(fn, x0: np.ndarray, h: float):
    """Columns d fn / d x_k by central differences; fn returns a vector."""
    cols = []
    for k in range(len(x0)):
        e = np.zeros_like(x0)
        e[k] = h
        cols.append((fn(x0 + e) - fn(x0 - e)) / (2 * h))
    return np.stack(cols, axis=-1)
