"""Scene-object quality gating and direct pose refinement for RGB-D odometry."""

__version__ = "0.1.0"
