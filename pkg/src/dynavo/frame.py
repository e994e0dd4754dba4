"""Per-frame container shared by the quality, gating and refinement stages."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import FlowField
from .imaging import build_pyramid, clean_depth


@dataclass(eq=False)
class Frame:
    index: int
    timestamp: float
    intensity: np.ndarray
    depth: np.ndarray               # meters, NaN = invalid
    detections: tuple = ()
    flow: FlowField | None = None   # motion from the previous frame
    dyn_mask: np.ndarray | None = None
    _pyramids: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        self.depth = clean_depth(self.depth)
        if self.intensity.shape != self.depth.shape:
            raise ValueError(f"intensity {self.intensity.shape} and depth {self.depth.shape} differ")

    @property
    def shape(self) -> tuple:
        return self.intensity.shape

    def intensity_pyramid(self, levels: int) -> list:
        key = ("i", levels)
        if key not in self._pyramids:
            self._pyramids[key] = build_pyramid(self.intensity, levels)
        return self._pyramids[key]

    def depth_pyramid(self, levels: int) -> list:
        key = ("d", levels)
        if key not in self._pyramids:
            self._pyramids[key] = build_pyramid(self.depth, levels, depth=True)
        return self._pyramids[key]

    def mask_or_empty(self) -> np.ndarray:
        if self.dyn_mask is None:
            return np.zeros(self.shape, dtype=bool)
        return self.dyn_mask
