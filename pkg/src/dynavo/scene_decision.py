"""GOOD/BAD scene gating against an adaptive reference benchmark."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .flow import FlowField
from .frame_quality import ConfigError, QualityReport
from .imaging import valid_depth


def _clamp01(v: float) -> float:
    return float(min(max(v, 0.0), 1.0))


class Verdict(str, Enum):
    GOOD = "GOOD"
    BAD = "BAD"


class Scenario(str, Enum):
    NONE = "None"
    HIGHLY_STATIC = "HighlyStatic"
    HIGHLY_DYNAMIC = "HighlyDynamic"
    HIGH_CONFIDENCE = "HighConfidence"


@dataclass(frozen=True)
class ChangeWeights:
    w_mc: float = 0.4
    w_dc: float = 0.3
    w_dec: float = 0.3

    def __post_init__(self):
        ws = (self.w_mc, self.w_dc, self.w_dec)
        if any(not (0.0 <= w <= 1.0) for w in ws):
            raise ConfigError(f"change weights must lie in [0, 1]: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise ConfigError(f"change weights must sum to 1, got {sum(ws)!r}")


@dataclass(frozen=True)
class ChangeReport:
    s_mc: float
    s_dc: float
    s_dec: float
    s_change: float


@dataclass(frozen=True)
class DecisionConfig:
    w_base0: float = 0.6
    a: float = 0.5
    th_static: float = 0.1
    th_dynamic: float = 0.5
    s_static: float = 0.6
    th_obj: float = 0.8
    th_differ: float = 0.3
    boost_static: float = 1.2
    boost_conf: float = 1.2
    mc_sat: float = 5.0
    dc_sat: float = 0.5
    change_weights: ChangeWeights = field(default_factory=ChangeWeights)

    def __post_init__(self):
        for name in ("w_base0", "th_static", "th_dynamic", "s_static", "th_obj", "th_differ"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} must lie in [0, 1]")
        if not self.th_static < self.th_dynamic:
            raise ConfigError("th_static must be below th_dynamic")
        if self.boost_static < 1 or self.boost_conf < 1:
            raise ConfigError("boost factors must be >= 1")
        if self.a < 0 or self.mc_sat <= 0 or self.dc_sat <= 0:
            raise ConfigError("a must be >= 0 and saturation constants > 0")


@dataclass(frozen=True)
class SceneDecision:
    s_final: float
    verdict: Verdict
    w_base_used: float
    w_change_used: float
    scenario: Scenario


@dataclass(frozen=True)
class Benchmark:
    s_initial: float
    ref_signature: object
    ref_frame_index: int


# ---------------------------------------------------------------- residuals

def motion_residual(flow_cur: FlowField, flow_ref: FlowField, mc_sat: float = 5.0,
                    grid: int = 8, image_size: tuple | None = None) -> float:
    """Flow deviation between two fields sampled on the same grid.

    Averages a per-point term and a per-cell term (cells of an 8x8 grid with
    at least 3 mutually valid samples). No mutually valid samples -> 1.
    """
    if flow_cur.points.shape != flow_ref.points.shape or not np.array_equal(flow_cur.points, flow_ref.points):
        raise ValueError("flow fields are not sampled on the same grid")
    both = flow_cur.valid & flow_ref.valid
    if not both.any():
        return 1.0
    diff = flow_cur.displacements - flow_ref.displacements
    point = float(np.linalg.norm(diff[both], axis=1).mean())

    pts = flow_cur.points
    if image_size is None:
        w = float(pts[:, 0].max()) + 1.0
        h = float(pts[:, 1].max()) + 1.0
    else:
        w, h = image_size
    cx = np.minimum((pts[:, 0] * grid / w).astype(int), grid - 1)
    cy = np.minimum((pts[:, 1] * grid / h).astype(int), grid - 1)
    cell = cy * grid + cx
    cell_terms = []
    for c in np.unique(cell[both]):
        sel = both & (cell == c)
        if sel.sum() >= 3:
            d = flow_cur.displacements[sel].mean(0) - flow_ref.displacements[sel].mean(0)
            cell_terms.append(float(np.linalg.norm(d)))
    grid_term = float(np.mean(cell_terms)) if cell_terms else point
    return _clamp01((point + grid_term) / 2.0 / mc_sat)


def depth_residual(depth_cur: np.ndarray, depth_ref: np.ndarray, dc_sat: float = 0.5) -> float:
    if depth_cur.shape != depth_ref.shape:
        raise ValueError(f"depth shapes differ: {depth_cur.shape} vs {depth_ref.shape}")
    both = valid_depth(depth_cur) & valid_depth(depth_ref)
    if not both.any():
        return 1.0
    delta = np.abs(depth_cur[both] - depth_ref[both])
    return _clamp01((delta.mean() + delta.std()) / 2.0 / dc_sat)


def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def detection_residual(dets_cur, dets_ref) -> float:
    """Half count change, half (1 - mean IoU) over greedily matched same-class pairs."""
    n_cur, n_ref = len(dets_cur), len(dets_ref)
    count = abs(n_cur - n_ref) / max(n_cur, n_ref, 1)
    cands = []
    for i, a in enumerate(dets_cur):
        for j, b in enumerate(dets_ref):
            if a.class_name == b.class_name:
                v = iou(a.bbox, b.bbox)
                if v > 0:
                    cands.append((v, i, j))
    # ties resolved on the unordered index pair so swapping the lists is harmless
    cands.sort(key=lambda c: (-c[0], min(c[1], c[2]), max(c[1], c[2])))
    used_i, used_j, matched = set(), set(), []
    for v, i, j in cands:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matched.append(v)
    if matched:
        iou_term = 1.0 - float(np.mean(matched))
    else:
        iou_term = 1.0 if (n_cur or n_ref) else 0.0
    return (count + iou_term) / 2.0


def change_score(cw: ChangeWeights, s_mc: float, s_dc: float, s_dec: float) -> ChangeReport:
    s = cw.w_mc * s_mc + cw.w_dc * s_dc + cw.w_dec * s_dec
    return ChangeReport(s_mc, s_dc, s_dec, s)


# ---------------------------------------------------------------- decision

def adaptive_weights(cfg: DecisionConfig, dynamic_ratio: float) -> tuple[float, float]:
    w_base = max(0.0, cfg.w_base0 - cfg.a * dynamic_ratio)
    return w_base, 1.0 - w_base


def decide(cfg: DecisionConfig, report: QualityReport, change: ChangeReport,
           dynamic_ratio: float) -> SceneDecision:
    """Final score and verdict.

    The change term enters as (1 - s_change): s_change grows with deviation
    from the reference, so a large deviation must lower the score.
    Scenario rules, first match wins: HighlyDynamic halves the base weight,
    HighlyStatic and HighConfidence scale the score up (capped at 1).
    """
    w_base, w_change = adaptive_weights(cfg, dynamic_ratio)
    scenario = Scenario.NONE
    if dynamic_ratio >= cfg.th_dynamic:
        scenario = Scenario.HIGHLY_DYNAMIC
        w_base = w_base / 2.0
        w_change = 1.0 - w_base
    s_final = w_base * report.s_total + w_change * (1.0 - change.s_change)
    if scenario is Scenario.NONE:
        if dynamic_ratio <= cfg.th_static and report.s_feature >= cfg.s_static:
            scenario = Scenario.HIGHLY_STATIC
            s_final = min(1.0, s_final * cfg.boost_static)
        elif report.s_conf >= cfg.th_obj:
            scenario = Scenario.HIGH_CONFIDENCE
            s_final = min(1.0, s_final * cfg.boost_conf)
    verdict = Verdict.GOOD if s_final >= cfg.th_differ else Verdict.BAD
    return SceneDecision(s_final, verdict, w_base, w_change, scenario)


def benchmark_update(bench: Benchmark, s_total: float, verdict: Verdict, signature,
                     frame_index: int) -> Benchmark:
    if s_total > bench.s_initial and verdict is Verdict.GOOD:
        return replace(bench, s_initial=s_total, ref_signature=signature, ref_frame_index=frame_index)
    return bench
