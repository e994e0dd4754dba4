"""Deterministic synthetic RGB-D sequences with exact ground truth.

Scenes are made of textured planes (a box-shaped room) and optional
fronto-parallel rectangles that move independently of the camera.
Rendering is analytic: every pixel ray is intersected with every plane and
the nearest hit wins, so depth and texture coordinates are exact.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .dataset_io import Detection, Trajectory, encode_rle, write_trajectory
from .geometry import PoseSE3, interpolate, so3_exp

TEXTURELESS = "textureless"
MOTION_BLUR = "motion_blur"
FAST_ROTATION = "fast_rotation"
MODES = (TEXTURELESS, MOTION_BLUR, FAST_ROTATION)

FPS = 30.0


@dataclass(frozen=True)
class Plane:
    """Plane n . X = offset (world frame) with a procedural texture.

    Texture coordinates are the hit point expressed along `u_axis`/`v_axis`.
    `bounds` = (umin, umax, vmin, vmax) limits the plane to a rectangle.
    """
    normal: tuple
    offset: float
    u_axis: tuple
    v_axis: tuple
    texture_seed: int
    bounds: tuple | None = None
    contrast: float = 1.0


@dataclass(frozen=True)
class DynamicObject:
    """Fronto-parallel textured rectangle translating through the world.

    `positions[i]` is the rectangle center in world coordinates at frame i;
    the rectangle spans +-half_size in world x/y at that center.
    """
    half_size: tuple
    positions: tuple
    texture_seed: int
    class_name: str = "person"
    confidence: float = 0.9
    dynamic_prior: bool = True


@dataclass(frozen=True)
class SynthScene:
    intrinsics: CameraIntrinsics
    planes: tuple
    camera: tuple                      # PoseSE3 camera-to-world per frame
    objects: tuple = ()
    intensity_sigma: float = 0.0
    depth_sigma: float = 0.0
    max_depth: float = 8.0
    seed: int = 0
    degradations: tuple = ()           # (start, stop, mode, strength)
    t0: float = 1000.0

    def __len__(self):
        return len(self.camera)

    def timestamp(self, i: int) -> float:
        return self.t0 + i / FPS

    def modes_at(self, i: int) -> dict:
        return {m: s for a, b, m, s in self.degradations if a <= i < b}


@dataclass
class RenderedFrame:
    intensity: np.ndarray
    depth: np.ndarray
    detections: list
    gt_pose: PoseSE3
    timestamp: float
    object_masks: list = field(default_factory=list)


# ---------------------------------------------------------------- texture

_LATTICE = 64


def _lattice(seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random((_LATTICE, _LATTICE))


def _value_noise(g: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    i0 = np.floor(u)
    j0 = np.floor(v)
    fu = u - i0
    fv = v - j0
    fu = fu * fu * (3 - 2 * fu)
    fv = fv * fv * (3 - 2 * fv)
    i0 = i0.astype(np.int64) % _LATTICE
    j0 = j0.astype(np.int64) % _LATTICE
    i1 = (i0 + 1) % _LATTICE
    j1 = (j0 + 1) % _LATTICE
    a = g[j0, i0] + fu * (g[j0, i1] - g[j0, i0])
    b = g[j1, i0] + fu * (g[j1, i1] - g[j1, i0])
    return a + fv * (b - a)


_OCTAVES = ((0.30, 0.45), (0.12, 0.30), (0.05, 0.25))


def texture(seed: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Smooth procedural texture in [0, 1]: value noise plus a soft checker."""
    out = np.zeros_like(u)
    for k, (cell, amp) in enumerate(_OCTAVES):
        out += amp * _value_noise(_lattice(seed * 7919 + k), u / cell, v / cell)
    checker = np.tanh(6.0 * np.sin(np.pi * u / 0.25) * np.sin(np.pi * v / 0.25))
    return np.clip(0.65 * out + 0.35 * checker + 0.175, 0.0, 1.0)


# ---------------------------------------------------------------- rendering

def _rays(K: CameraIntrinsics) -> np.ndarray:
    xs, ys = K.pixel_grid()
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)


def _render_pose(scene: SynthScene, pose: PoseSE3, frame: int, contrast: float = 1.0):
    """Noise-free intensity, depth, and per-object masks for one camera pose."""
    K = scene.intrinsics
    rays_c = _rays(K).reshape(-1, 3)
    dirs = rays_c @ pose.R.T
    origin = pose.translation
    n_px = len(rays_c)
    best = np.full(n_px, np.inf)
    owner = np.full(n_px, -1)
    hits_u = np.zeros(n_px)
    hits_v = np.zeros(n_px)

    surfaces = []
    for p in scene.planes:
        surfaces.append((np.asarray(p.normal, float), p.offset, np.asarray(p.u_axis, float),
                         np.asarray(p.v_axis, float), p.bounds, np.zeros(3), p.texture_seed, p.contrast))
    for ob in scene.objects:
        c = np.asarray(ob.positions[frame], float)
        hx, hy = ob.half_size
        surfaces.append((np.array([0.0, 0.0, 1.0]), c[2], np.array([1.0, 0.0, 0.0]),
                         np.array([0.0, 1.0, 0.0]), (-hx, hx, -hy, hy), c, ob.texture_seed, 1.0))

    for idx, (nrm, off, ua, va, bounds, center, _, _) in enumerate(surfaces):
        denom = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (off - origin @ nrm) / denom
        ok = np.isfinite(s) & (s > 1e-6)
        X = origin + s[:, None] * dirs
        rel = X - center
        u = rel @ ua
        v = rel @ va
        if bounds is not None:
            ok &= (u >= bounds[0]) & (u <= bounds[1]) & (v >= bounds[2]) & (v <= bounds[3])
        closer = ok & (s < best)
        best[closer] = s[closer]
        owner[closer] = idx
        hits_u[closer] = u[closer]
        hits_v[closer] = v[closer]

    intensity = np.full(n_px, 0.5)
    for idx, (_, _, _, _, _, _, seed, plane_contrast) in enumerate(surfaces):
        sel = owner == idx
        if sel.any():
            tex = texture(seed, hits_u[sel], hits_v[sel])
            intensity[sel] = 0.5 + plane_contrast * contrast * (tex - 0.5)

    depth = np.where(np.isfinite(best) & (best <= scene.max_depth), best, np.nan)
    shape = (K.height, K.width)
    n_planes = len(scene.planes)
    masks = [(owner == n_planes + k).reshape(shape) for k in range(len(scene.objects))]
    return intensity.reshape(shape), depth.reshape(shape), masks


def _bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return (float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1))


def render(scene: SynthScene, frame_index: int) -> RenderedFrame:
    """Render frame `frame_index`: (intensity, depth, detections, ground-truth pose)."""
    if not 0 <= frame_index < len(scene):
        raise IndexError(f"frame {frame_index} outside script of {len(scene)} frames")
    pose = scene.camera[frame_index]
    modes = scene.modes_at(frame_index)
    contrast = modes.get(TEXTURELESS, 1.0)

    intensity, depth, masks = _render_pose(scene, pose, frame_index, contrast)
    if MOTION_BLUR in modes:
        # average sub-exposures spread over half an inter-frame interval each side
        n_sub = max(2, int(modes[MOTION_BLUR]))
        prev_pose = scene.camera[max(frame_index - 1, 0)]
        next_pose = scene.camera[min(frame_index + 1, len(scene) - 1)]
        acc = np.zeros_like(intensity)
        for s in np.linspace(-0.5, 0.5, n_sub):
            sub = interpolate(pose, prev_pose, -s) if s < 0 else interpolate(pose, next_pose, s)
            acc += _render_pose(scene, sub, frame_index, contrast)[0]
        intensity = acc / n_sub

    if scene.intensity_sigma > 0 or scene.depth_sigma > 0:
        rng = np.random.default_rng([scene.seed, frame_index])
        intensity = intensity + scene.intensity_sigma * rng.standard_normal(intensity.shape)
        depth = depth + scene.depth_sigma * depth * depth * rng.standard_normal(depth.shape)
    intensity = np.clip(intensity, 0.0, 1.0)

    detections = []
    kept_masks = []
    for ob, m in zip(scene.objects, masks):
        box = _bbox(m)
        if box is None:
            continue
        detections.append(Detection(ob.class_name, ob.confidence, box, ob.dynamic_prior, mask=m))
        kept_masks.append(m)
    return RenderedFrame(intensity, depth, detections, pose, scene.timestamp(frame_index), kept_masks)


# ---------------------------------------------------------------- degradation

def _roll(angle: float) -> PoseSE3:
    return PoseSE3(so3_exp(np.array([0.0, 0.0, angle])), np.zeros(3))


def degrade(scene: SynthScene, frame_range: tuple, mode: str, strength: float | None = None) -> SynthScene:
    """Return a copy of `scene` with `mode` applied on frames [start, stop).

    textureless: strength = remaining contrast (default 0.03).
    motion_blur: strength = number of sub-exposures (default 9).
    fast_rotation: strength = peak extra roll rate in degrees per frame
    (default 4); the added roll rises and falls back to zero so frames after
    the segment keep their original orientation.
    """
    start, stop = frame_range
    if not (0 <= start < stop <= len(scene)):
        raise ValueError(f"invalid frame range {frame_range} for {len(scene)} frames")
    if mode not in MODES:
        raise ValueError(f"unknown degradation {mode!r}; expected one of {MODES}")
    if mode == FAST_ROTATION:
        rate = np.radians(4.0 if strength is None else strength)
        length = stop - start
        amplitude = rate * length / np.pi
        cams = list(scene.camera)
        for i in range(start, stop):
            angle = amplitude * np.sin(np.pi * (i - start + 1) / (length + 1))
            cams[i] = cams[i] @ _roll(angle)
        return dataclasses.replace(
            scene, camera=tuple(cams),
            degradations=scene.degradations + ((start, stop, mode, float(np.degrees(rate))),))
    default = 0.03 if mode == TEXTURELESS else 9
    value = default if strength is None else strength
    return dataclasses.replace(scene, degradations=scene.degradations + ((start, stop, mode, value),))


# ---------------------------------------------------------------- scene builders

def room_planes(seed: int = 0, half_width: float = 2.5, half_height: float = 1.5,
                back: float = 4.0, front: float = -1.5) -> tuple:
    """Box room around the origin, camera looking down +z (y points down)."""
    return (
        Plane((0, 0, 1), back, (1, 0, 0), (0, 1, 0), seed + 1),
        Plane((0, 1, 0), half_height, (1, 0, 0), (0, 0, 1), seed + 2),
        Plane((0, 1, 0), -half_height, (1, 0, 0), (0, 0, 1), seed + 3, contrast=0.6),
        Plane((1, 0, 0), -half_width, (0, 0, 1), (0, 1, 0), seed + 4),
        Plane((1, 0, 0), half_width, (0, 0, 1), (0, 1, 0), seed + 5),
        Plane((0, 0, 1), front, (1, 0, 0), (0, 1, 0), seed + 6),
    )


def wander_trajectory(n: int, seed: int = 0, amplitude: float = 0.25, angle_deg: float = 6.0) -> tuple:
    """Slow, smooth hand-held style camera motion around the room center."""
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    poses = []
    freqs = rng.uniform(1 / 400, 1 / 150, size=6)
    phases = rng.uniform(0, 2 * np.pi, size=6)
    for i in t:
        pos = amplitude * np.sin(2 * np.pi * freqs[:3] * i + phases[:3]) * np.array([1.0, 0.4, 0.6])
        ang = np.radians(angle_deg) * np.sin(2 * np.pi * freqs[3:] * i + phases[3:]) * np.array([1.0, 1.0, 0.3])
        poses.append(PoseSE3(so3_exp(ang), pos))
    return tuple(poses)


def pixel_rect(K: CameraIntrinsics, x0: int, y0: int, w: int, h: int, depth: float) -> tuple:
    """World center and half-size of a fronto-parallel rectangle that covers
    exactly pixels [x0, x0+w) x [y0, y0+h) from the identity camera."""
    xa = (x0 - 0.5 - K.cx) / K.fx * depth
    xb = (x0 + w - 0.5 - K.cx) / K.fx * depth
    ya = (y0 - 0.5 - K.cy) / K.fy * depth
    yb = (y0 + h - 0.5 - K.cy) / K.fy * depth
    center = ((xa + xb) / 2, (ya + yb) / 2, depth)
    return center, ((xb - xa) / 2, (yb - ya) / 2)


def walker(n: int, start: tuple, velocity: tuple, half_size=(0.3, 0.8), seed: int = 50,
           confidence: float = 0.9, bounce: float = 1.8) -> DynamicObject:
    """Rectangle walking back and forth along x between -bounce and +bounce."""
    pos = []
    p = np.array(start, dtype=float)
    v = np.array(velocity, dtype=float)
    for _ in range(n):
        pos.append(tuple(p))
        p = p + v
        if abs(p[0]) > bounce:
            v[0] = -v[0]
            p = p + 2 * np.array([v[0], 0.0, 0.0])
    return DynamicObject(half_size, tuple(pos), seed, confidence=confidence)


def default_intrinsics(scale: int = 1) -> CameraIntrinsics:
    """TUM fr3-like 640x480 camera, downscaled by a power-of-two `scale`."""
    level = int(scale).bit_length() - 1
    if scale < 1 or 1 << level != scale:
        raise ValueError(f"scale must be a power of two, got {scale}")
    return CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480).scaled(level)


def make_scenario(name: str, n_frames: int | None = None, seed: int = 0,
                  K: CameraIntrinsics | None = None) -> SynthScene:
    """Named scenarios used by the CLI and acceptance tests."""
    K = K or default_intrinsics()
    if name == "static":
        n = n_frames or 60
        cams = tuple(PoseSE3() for _ in range(n))
        return SynthScene(K, room_planes(seed), cams, seed=seed)
    if name == "dynamic_object":
        n = n_frames or 90
        cams = wander_trajectory(n, seed, amplitude=0.2, angle_deg=4.0)
        # a near pedestrian crossing the whole view covers a large image share mid-sequence
        obj = walker(n, (-3.0, 0.3, 2.0), (0.07, 0.0, 0.0), half_size=(0.8, 1.2), seed=seed + 50,
                     bounce=5.0)
        return SynthScene(K, room_planes(seed), cams, (obj,), intensity_sigma=0.02,
                          depth_sigma=0.0015, seed=seed)
    if name in ("wander", "ceiling_sweep", "fast_roll", "mixed"):
        n = n_frames or 300
        cams = list(wander_trajectory(n, seed))
        objs = (
            walker(n, (-1.0, 0.5, 2.6), (0.012, 0.0, 0.0), seed=seed + 50, confidence=0.75),
            walker(n, (0.8, 0.5, 3.0), (-0.009, 0.0, 0.0), seed=seed + 51, confidence=0.7),
        )
        scene = SynthScene(K, room_planes(seed), tuple(cams), objs, intensity_sigma=0.01,
                           depth_sigma=0.002, seed=seed)
        seg = max(6, n // 50)
        if name in ("ceiling_sweep", "mixed"):
            a = n // 3
            scene = _pitch_up(scene, (a, a + seg))
            scene = degrade(scene, (a, a + seg), TEXTURELESS)
        if name in ("fast_roll", "mixed"):
            b = (2 * n) // 3
            scene = degrade(scene, (b, b + seg), FAST_ROTATION)
            scene = degrade(scene, (b, b + seg), MOTION_BLUR)
        return scene
    raise ValueError(f"unknown scenario {name!r}; valid: {', '.join(SCENARIOS)}")


SCENARIOS = ("static", "dynamic_object", "wander", "ceiling_sweep", "fast_roll")


def _pitch_up(scene: SynthScene, frame_range: tuple, peak_deg: float = 70.0) -> SynthScene:
    start, stop = frame_range
    cams = list(scene.camera)
    length = stop - start
    for i in range(start, stop):
        a = -np.radians(peak_deg) * np.sin(np.pi * (i - start + 1) / (length + 1))
        cams[i] = cams[i] @ PoseSE3(so3_exp(np.array([a, 0.0, 0.0])), np.zeros(3))
    return dataclasses.replace(scene, camera=tuple(cams))


def degraded_frames(scene: SynthScene) -> set:
    out = set()
    for a, b, _, _ in scene.degradations:
        out.update(range(a, b))
    return out


# ---------------------------------------------------------------- export

def export_tum(scene: SynthScene, out_dir) -> Path:
    """Write the scene in the TUM on-disk layout plus detections.jsonl and camera.txt."""
    from PIL import Image

    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    K = scene.intrinsics
    rgb_rows, depth_rows, det_rows, gt = [], [], [], []
    for i in range(len(scene)):
        f = render(scene, i)
        ts = f"{f.timestamp:.6f}"
        gray = np.round(f.intensity * 255).astype(np.uint8)
        Image.fromarray(np.stack([gray] * 3, axis=-1)).save(out / "rgb" / f"{ts}.png")
        raw = np.where(np.isfinite(f.depth), np.round(f.depth * K.depth_scale), 0)
        Image.fromarray(np.clip(raw, 0, 65535).astype(np.uint16)).save(out / "depth" / f"{ts}.png")
        rgb_rows.append(f"{ts} rgb/{ts}.png")
        depth_rows.append(f"{ts} depth/{ts}.png")
        objs = []
        for d in f.detections:
            objs.append({"class": d.class_name, "conf": d.confidence, "bbox": list(d.bbox),
                         "dynamic_prior": d.dynamic_prior, "mask_rle": encode_rle(d.mask),
                         "mask_scope": "image"})
        det_rows.append(json.dumps({"timestamp": f.timestamp, "objects": objs}))
        gt.append((f.timestamp, f.gt_pose))
    header = "# timestamp filename\n"
    (out / "rgb.txt").write_text(header + "\n".join(rgb_rows) + "\n")
    (out / "depth.txt").write_text(header + "\n".join(depth_rows) + "\n")
    (out / "detections.jsonl").write_text("\n".join(det_rows) + "\n")
    write_trajectory(Trajectory(gt), out / "groundtruth.txt")
    (out / "camera.txt").write_text(
        f"fx = {K.fx!r}\nfy = {K.fy!r}\ncx = {K.cx!r}\ncy = {K.cy!r}\n"
        f"width = {K.width}\nheight = {K.height}\ndepth_scale = {K.depth_scale!r}\n")
    segs = [{"start": a, "stop": b, "mode": m, "strength": s} for a, b, m, s in scene.degradations]
    (out / "degradations.json").write_text(json.dumps(segs, indent=1) + "\n")
    return out


def ground_truth(scene: SynthScene) -> Trajectory:
    return Trajectory([(scene.timestamp(i), p) for i, p in enumerate(scene.camera)])


def relative_pose(scene: SynthScene, i: int, j: int) -> PoseSE3:
    """Transform taking points from camera i into camera j."""
    return scene.camera[j].inverse() @ scene.camera[i]


__all__ = [
    "Plane", "DynamicObject", "SynthScene", "RenderedFrame", "render", "degrade",
    "make_scenario", "export_tum", "ground_truth", "relative_pose", "room_planes",
    "wander_trajectory", "walker", "pixel_rect", "default_intrinsics", "degraded_frames",
    "SCENARIOS", "TEXTURELESS", "MOTION_BLUR", "FAST_ROTATION",
]
