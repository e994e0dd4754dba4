"""TUM RGB-D ingestion, detection sidecars and trajectory files."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics
from .geometry import PoseSE3

log = logging.getLogger(__name__)

ASSOC_TOLERANCE = 0.02
# classes treated as movable when a sidecar object omits "dynamic_prior"
DEFAULT_DYNAMIC_CLASSES = frozenset({"person", "cat", "dog", "bird", "horse", "bicycle", "car"})


class DatasetError(ValueError):
    """Malformed or missing sequence input."""


# ---------------------------------------------------------------- types

@dataclass(frozen=True, eq=False)
class Detection:
    class_name: str
    confidence: float
    bbox: tuple                 # (x, y, w, h) pixels
    dynamic_prior: bool = False
    mask: np.ndarray | None = None   # image-sized bool grid, None = use bbox

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]

    @property
    def center(self) -> tuple:
        x, y, w, h = self.bbox
        return x + w / 2, y + h / 2

    def region(self, width: int, height: int) -> np.ndarray:
        """Boolean image mask of the object (its mask, else its box)."""
        if self.mask is not None and self.mask.shape == (height, width):
            return self.mask.astype(bool)
        out = np.zeros((height, width), dtype=bool)
        x, y, w, h = self.bbox
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        x1, y1 = int(np.ceil(x + w)), int(np.ceil(y + h))
        out[max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = True
        return out

    def clamped(self, width: int, height: int) -> "Detection":
        x, y, w, h = self.bbox
        x0, y0 = min(max(x, 0.0), width), min(max(y, 0.0), height)
        x1, y1 = min(max(x + w, 0.0), width), min(max(y + h, 0.0), height)
        return Detection(self.class_name, self.confidence, (x0, y0, x1 - x0, y1 - y0),
                         self.dynamic_prior, self.mask)


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    rgb_path: Path
    depth_path: Path
    detections: tuple = ()
    gt_pose: PoseSE3 | None = None
    depth_timestamp: float | None = None


@dataclass
class Trajectory:
    poses: list = field(default_factory=list)   # [(timestamp, PoseSE3)]

    def __post_init__(self):
        ts = [t for t, _ in self.poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([t for t, _ in self.poses], dtype=float)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.translation for _, p in self.poses]).reshape(-1, 3)

    def transformed(self, T: PoseSE3) -> "Trajectory":
        """Left-multiply every pose by T (a change of world frame)."""
        return Trajectory([(t, T @ p) for t, p in self.poses])


@dataclass
class TumSequence:
    """Associated frames of one sequence plus association bookkeeping."""
    frames: list
    dropped: dict
    root: Path

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


# ---------------------------------------------------------------- association

def _micros(t: float) -> int:
    return int(round(t * 1_000_000))


def associate(a: list, b: list, tolerance: float = ASSOC_TOLERANCE) -> list:
    """Greedy nearest-timestamp matching between two timestamp lists.

    Candidate pairs within `tolerance` are taken in order of increasing gap;
    ties go to the earlier `b` timestamp, then the earlier `a` timestamp.
    Each entry is used at most once. Returns index pairs (i, j) sorted by i.
    Timestamps compare at microsecond resolution so equal gaps tie exactly.
    """
    ua = np.array([_micros(t) for t in a], dtype=np.int64)
    ub = np.array([_micros(t) for t in b], dtype=np.int64)
    tol = _micros(tolerance)
    if len(ua) == 0 or len(ub) == 0:
        return []
    order_b = np.argsort(ub, kind="stable")
    sb = ub[order_b]
    cands = []
    for i, t in enumerate(ua):
        lo = np.searchsorted(sb, t - tol, side="left")
        hi = np.searchsorted(sb, t + tol, side="right")
        for k in range(lo, hi):
            j = int(order_b[k])
            cands.append((abs(int(sb[k]) - int(t)), int(sb[k]), int(t), i, j))
    cands.sort()
    used_a, used_b, pairs = set(), set(), []
    for _, _, _, i, j in cands:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    return sorted(pairs)


def _read_index(path: Path) -> list:
    if not path.exists():
        raise DatasetError(f"missing index file: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) < 2:
            raise DatasetError(f"{path}:{lineno}: expected 'timestamp path', got {line!r}")
        try:
            t = float(parts[0])
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: bad timestamp {parts[0]!r}") from None
        rows.append((t, parts[1]))
    return rows


def load_tum_sequence(directory, assoc_tolerance: float = ASSOC_TOLERANCE,
                      detections_path=None, image_size: tuple = (640, 480)) -> TumSequence:
    """Associate rgb.txt / depth.txt (and groundtruth.txt, detections.jsonl when present)."""
    root = Path(directory)
    rgb = _read_index(root / "rgb.txt")
    depth = _read_index(root / "depth.txt")
    pairs = associate([t for t, _ in rgb], [t for t, _ in depth], assoc_tolerance)
    dropped = {"rgb": len(rgb) - len(pairs), "depth": len(depth) - len(pairs)}
    if not pairs:
        raise DatasetError(f"{root}: no rgb/depth pairs within {assoc_tolerance} s")

    frame_ts = [rgb[i][0] for i, _ in pairs]
    gt_pose = {}
    gt_file = root / "groundtruth.txt"
    if gt_file.exists():
        gt = read_trajectory(gt_file)
        matches = associate(frame_ts, list(gt.timestamps), assoc_tolerance)
        gt_pose = {i: gt[j][1] for i, j in matches}
        dropped["groundtruth_unmatched_frames"] = len(frame_ts) - len(matches)

    dets = {}
    det_file = Path(detections_path) if detections_path else root / "detections.jsonl"
    if det_file.exists():
        by_time = load_detections(det_file, image_size)
        keys = sorted(by_time)
        matches = associate(frame_ts, keys, assoc_tolerance)
        dets = {i: by_time[keys[j]] for i, j in matches}
    elif detections_path:
        raise DatasetError(f"missing detections file: {det_file}")

    frames = []
    for n, (i, j) in enumerate(pairs):
        frames.append(FrameRecord(
            timestamp=rgb[i][0],
            rgb_path=root / rgb[i][1],
            depth_path=root / depth[j][1],
            detections=tuple(dets.get(n, ())),
            gt_pose=gt_pose.get(n),
            depth_timestamp=depth[j][0],
        ))
    if dropped["rgb"] or dropped["depth"]:
        log.info("%s: dropped %d rgb and %d depth rows during association",
                 root, dropped["rgb"], dropped["depth"])
    return TumSequence(frames, dropped, root)


# ---------------------------------------------------------------- images

def load_depth_image(path, K: CameraIntrinsics) -> np.ndarray:
    """16-bit depth PNG -> meters, NaN where the raw value is 0."""
    from PIL import Image

    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read depth image {path}: {exc}") from exc
    if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise DatasetError(f"{path}: expected 16-bit single-channel depth, got mode {img.mode}")
    raw = np.asarray(img).astype(np.float64)
    if raw.ndim != 2:
        raise DatasetError(f"{path}: depth image must have one channel")
    depth = raw / K.depth_scale
    depth[raw == 0] = np.nan
    return depth


def load_intensity_image(path) -> np.ndarray:
    """8-bit color (or gray) PNG -> luminance in [0, 1]."""
    from PIL import Image

    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    arr = np.asarray(img.convert("RGB")).astype(np.float64) / 255.0
    return arr @ np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------- detections

def encode_rle(mask: np.ndarray) -> str:
    """Row-major run lengths, alternating, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return " ".join(str(r) for r in runs)


def decode_rle(rle: str, shape: tuple) -> np.ndarray:
    runs = [int(v) for v in rle.split()]
    if any(r < 0 for r in runs) or sum(runs) != shape[0] * shape[1]:
        raise ValueError(f"RLE does not describe a {shape[1]}x{shape[0]} grid")
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    pos = 0
    for k, r in enumerate(runs):
        if k % 2:
            flat[pos:pos + r] = True
        pos += r
    return flat.reshape(shape)


def _parse_object(obj: dict, width: int, height: int) -> Detection | None:
    conf = float(obj["conf"])
    if not 0.0 <= conf <= 1.0:
        raise ValueError(f"conf {conf} outside [0, 1]")
    bbox = [float(v) for v in obj["bbox"]]
    if len(bbox) != 4 or bbox[2] < 0 or bbox[3] < 0:
        raise ValueError(f"bad bbox {obj['bbox']}")
    mask = None
    if obj.get("mask_rle"):
        scope = obj.get("mask_scope", "image")
        if scope == "image":
            mask = decode_rle(obj["mask_rle"], (height, width))
        elif scope == "bbox":
            x, y, w, h = (int(round(v)) for v in bbox)
            local = decode_rle(obj["mask_rle"], (h, w))
            mask = np.zeros((height, width), dtype=bool)
            y0, y1 = max(y, 0), min(y + h, height)
            x0, x1 = max(x, 0), min(x + w, width)
            if y1 > y0 and x1 > x0:
                mask[y0:y1, x0:x1] = local[y0 - y:y1 - y, x0 - x:x1 - x]
        else:
            raise ValueError(f"mask_scope must be 'bbox' or 'image', got {scope!r}")
    cls = str(obj["class"])
    prior = obj.get("dynamic_prior")
    prior = cls in DEFAULT_DYNAMIC_CLASSES if prior is None else bool(prior)
    det = Detection(cls, conf, bbox, prior, mask)
    det = det.clamped(width, height)
    return det if det.area > 0 else None


def load_detections(path, image_size: tuple = (640, 480)) -> dict:
    """Parse a detections.jsonl sidecar into {timestamp: [Detection, ...]}."""
    width, height = image_size
    out = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            ts = float(row["timestamp"])
            dets = []
            for obj in row.get("objects", []):
                d = _parse_object(obj, width, height)
                if d is not None:
                    dets.append(d)
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        out[ts] = dets
    return out


# ---------------------------------------------------------------- trajectories

def _fmt(v: float) -> str:
    return f"{v + 0.0:.9g}"


def format_pose_line(t: float, pose: PoseSE3) -> str:
    vals = list(pose.translation) + list(pose.rotation)
    return f"{t:.6f} " + " ".join(_fmt(v) for v in vals)


def write_trajectory(traj: Trajectory, path) -> None:
    lines = [format_pose_line(t, p) for t, p in traj]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectory(path) -> Trajectory:
    poses = []
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"missing trajectory file: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.replace(",", " ").split()
        try:
            if len(parts) != 8:
                raise ValueError(f"expected 8 fields, got {len(parts)}")
            v = [float(x) for x in parts]
            pose = PoseSE3(np.array(v[4:8]), np.array(v[1:4]))
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        poses.append((v[0], pose))
    try:
        return Trajectory(poses)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
