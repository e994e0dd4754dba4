"""Flat key = value pipeline configuration.

One key per line, '#' starts a comment. Unknown keys are errors. Every
value is re-validated by building the owning module's config objects.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .camera import CameraIntrinsics
from .frame_quality import ConfigError, InitState, QualityConfig, QualityWeights
from .pose_refine import FusionConfig, RobustCostConfig, VOConfig
from .scene_decision import ChangeWeights, DecisionConfig

CAMERA_KEYS = ("fx", "fy", "cx", "cy", "width", "height", "depth_scale")


@dataclass(frozen=True)
class PipelineConfig:
    # quality scores
    w_conf: float = 0.3
    w_spatial: float = 0.2
    w_feature: float = 0.3
    w_depth: float = 0.2
    r_sat: float = 0.01
    top_n: int = 500
    feature_grid: int = 8
    corner_frac: float = 0.05
    g_sat: float = 0.5
    flow_dyn_thresh: float = 1.5
    # benchmark initialization
    th_s: float = 0.5
    th_f: float = 30.0
    th_fmax: float = 120.0
    th_smin: float = 0.3
    beta: float = 0.9
    # gating
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
    w_mc: float = 0.4
    w_dc: float = 0.3
    w_dec: float = 0.3
    # direct alignment and fusion
    alpha_i: float = 1.0
    cauchy_scale_i: float = 0.1
    cauchy_scale_d: float = 0.05
    lam: float = 0.5
    pyramid_levels: int = 3
    max_iters: int = 30
    step_tolerance: float = 1e-6
    gamma_fg: float = 0.1
    gamma_bg: float = 1.0
    pixel_stride: int = 1
    ref_pool_size: int = 3
    mu: float = 2.0
    th_keyframes: float = 3.0
    # sparse VO and flow
    vo_features: int = 300
    ransac_iters: int = 200
    inlier_threshold: float = 0.03
    min_inliers: int = 12
    vo_seed: int = 0
    flow_step: int = 20
    flow_levels: int = 3
    # data
    assoc_tolerance: float = 0.02
    external_pose_tolerance: float = 1e-4
    # camera; unset keys come from <sequence>/camera.txt, else TUM fr3
    fx: float | None = None
    fy: float | None = None
    cx: float | None = None
    cy: float | None = None
    width: int | None = None
    height: int | None = None
    depth_scale: float | None = None

    def __post_init__(self):
        # building every sub-config re-runs the owning module's checks
        try:
            self.quality_config()
            self.init_state()
            self.decision_config()
            self.cost_config()
            self.fusion_config()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        if self.ref_pool_size < 1 or self.flow_step < 1 or self.flow_levels < 1:
            raise ConfigError("ref_pool_size, flow_step and flow_levels must be >= 1")
        if self.assoc_tolerance <= 0 or self.external_pose_tolerance <= 0:
            raise ConfigError("association tolerances must be positive")
        if not (self.inlier_threshold > 0 and self.min_inliers >= 3):
            raise ConfigError("inlier_threshold must be positive and min_inliers >= 3")

    def quality_config(self) -> QualityConfig:
        w = QualityWeights(self.w_conf, self.w_spatial, self.w_feature, self.w_depth)
        return QualityConfig(w, self.r_sat, self.top_n, self.feature_grid, self.corner_frac,
                             self.g_sat, self.flow_dyn_thresh)

    def init_state(self) -> InitState:
        return InitState(self.th_s, self.th_f, self.th_fmax, self.th_smin, self.beta)

    def decision_config(self) -> DecisionConfig:
        return DecisionConfig(self.w_base0, self.a, self.th_static, self.th_dynamic, self.s_static,
                              self.th_obj, self.th_differ, self.boost_static, self.boost_conf,
                              self.mc_sat, self.dc_sat, ChangeWeights(self.w_mc, self.w_dc, self.w_dec))

    def cost_config(self) -> RobustCostConfig:
        return RobustCostConfig(self.alpha_i, self.cauchy_scale_i, self.cauchy_scale_d, self.lam,
                                self.pyramid_levels, self.max_iters, self.step_tolerance,
                                self.gamma_fg, self.gamma_bg, pixel_stride=self.pixel_stride)

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.mu, self.th_keyframes)

    def vo_config(self) -> VOConfig:
        return VOConfig(self.vo_features, self.ransac_iters, self.inlier_threshold,
                        self.min_inliers, self.vo_seed)

    def intrinsics(self, sequence_dir=None) -> CameraIntrinsics:
        """Config keys override <sequence_dir>/camera.txt, which overrides TUM fr3."""
        base = CameraIntrinsics.tum_fr3()
        vals = {k: getattr(base, k) for k in CAMERA_KEYS}
        if sequence_dir is not None and (Path(sequence_dir) / "camera.txt").exists():
            side = parse_key_values(Path(sequence_dir) / "camera.txt")
            unknown = set(side) - set(CAMERA_KEYS)
            if unknown:
                raise ConfigError(f"camera.txt: unknown keys {sorted(unknown)}")
            vals.update({k: _coerce(k, v, float if k not in ("width", "height") else int)
                         for k, v in side.items()})
        vals.update({k: getattr(self, k) for k in CAMERA_KEYS if getattr(self, k) is not None})
        try:
            return CameraIntrinsics(**vals)
        except ValueError as exc:
            raise ConfigError(f"camera intrinsics: {exc}") from None


def parse_key_values(path) -> dict:
    """Raw string values of a key = value file; duplicate keys are errors."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"missing config file: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (p.strip() for p in s.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value: str, kind):
    try:
        if kind is int:
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def _field_kind(f) -> type:
    t = str(f.type)
    return int if t.startswith("int") else float


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, then the file at `path` (if any), then keyword overrides."""
    known = {f.name: f for f in fields(PipelineConfig)}
    vals = {}
    if path is not None:
        for key, raw in parse_key_values(path).items():
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r}")
            vals[key] = _coerce(key, raw, _field_kind(known[key]))
    for key, v in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        vals[key] = v
    return PipelineConfig(**vals)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is not None:
            lines.append(f"{f.name} = {v!r}")
    return "\n".join(lines) + "\n"


def replace(cfg: PipelineConfig, **changes) -> PipelineConfig:
    return dataclasses.replace(cfg, **changes)
