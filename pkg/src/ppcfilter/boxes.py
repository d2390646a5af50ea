"""Box, detection and frame containers."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import rotation_z


@dataclass(frozen=True)
class OrientedBox3:
    """A yaw-rotated 3D box in the LiDAR frame.

    ``center`` is the volumetric center, ``size`` is ``[w, l, h]`` with the
    length running along the heading, and ``yaw`` is the heading angle about
    +z measured from +x.
    """

    center: tuple
    size: tuple
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size need three components")
        if min(size) <= 0.0:
            raise ValueError(f"box size must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def w(self):
        return self.size[0]

    @property
    def l(self):  # noqa: E743
        return self.size[1]

    @property
    def h(self):
        return self.size[2]

    @property
    def half_extents_xyz(self):
        """Half sizes along the box-frame axes (length, width, height)."""
        return np.array([self.l, self.w, self.h]) / 2.0

    def to_local(self, points):
        """Express world points in the box frame."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        return p @ rotation_z(self.yaw)

    def to_world(self, points):
        return np.asarray(points, dtype=float) @ rotation_z(self.yaw).T + np.asarray(self.center)

    def contains(self, points, strict=False):
        local = np.abs(self.to_local(points))
        half = self.half_extents_xyz
        if strict:
            return np.all(local < half, axis=-1)
        return np.all(local <= half, axis=-1)

    def volume(self):
        return self.w * self.l * self.h


_CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, 1, -1],
        [1, 1, 1],
        [1, -1, 1],
        [-1, -1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)


def box_corners(box):
    """The eight vertices of ``box`` as an ``(8, 3)`` array.

    The first four are the bottom face, clockwise seen from above starting
    at the front-left corner; the last four are the top face in the same order.
    """
    return box.to_world(_CORNER_SIGNS * box.half_extents_xyz)


def bev_corners(box):
    """Footprint polygon of ``box`` on the ground plane, counter-clockwise."""
    return box_corners(box)[[3, 2, 1, 0], :2]


@dataclass(frozen=True)
class Detection:
    box: OrientedBox3
    score: float = 1.0
    label: str = "Car"
    bbox: Optional[tuple] = None  # image-plane (left, top, right, bottom), if known

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass
class Frame:
    """One LiDAR scan with its detections and optional ground truths."""

    frame_id: str
    points: np.ndarray
    detections: list = field(default_factory=list)
    ground_truths: Optional[list] = None
