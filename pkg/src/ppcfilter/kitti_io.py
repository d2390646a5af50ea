"""KITTI object-benchmark file formats.

Velodyne scans are flat little-endian float32 quadruples ``(x, y, z,
reflectance)``.  Label files carry one object per line with 15 fields, or 16
when a detection score is appended.  Calibration files hold ``KEY: values``
lines of which ``P2``, ``R0_rect`` and ``Tr_velo_to_cam`` are used.

Boxes are converted to the LiDAR frame on ingestion.
"""

import enum
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import OrientedBox3, box_corners
from .errors import (
    InvalidCalibrationError,
    KittiFormatError,
    MissingCalibrationError,
    TruncatedFileError,
)
from .geometry import wrap_angle

IMAGE_SIZE = (1242, 375)  # width, height of a typical KITTI left image


class Difficulty(enum.IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3

    @classmethod
    def parse(cls, name):
        return cls[name.upper()]


# min bbox height (px), max occlusion level, max truncation
DIFFICULTY_RULES = {
    Difficulty.EASY: (40.0, 0, 0.15),
    Difficulty.MODERATE: (25.0, 1, 0.30),
    Difficulty.HARD: (25.0, 2, 0.50),
}


@dataclass
class KittiLabel:
    type: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple  # left, top, right, bottom
    dimensions: tuple  # h, w, l
    location: tuple  # x, y, z in the rectified camera frame (bottom-face center)
    rotation_y: float
    score: Optional[float] = None

    @property
    def bbox_height(self):
        return self.bbox[3] - self.bbox[1]

    @property
    def is_dontcare(self):
        return self.type == "DontCare"

    def to_line(self):
        fields = [
            self.type,
            f"{self.truncated:.2f}",
            f"{int(self.occluded)}",
            f"{self.alpha:.2f}",
            *(f"{v:.2f}" for v in self.bbox),
            *(f"{v:.2f}" for v in self.dimensions),
            *(f"{v:.2f}" for v in self.location),
            f"{self.rotation_y:.2f}",
        ]
        if self.score is not None:
            fields.append(f"{self.score:.4f}")
        return " ".join(fields)


def parse_label_line(line, lineno=1, path=None):
    fields = line.split()
    if len(fields) not in (15, 16):
        raise KittiFormatError(lineno, f"expected 15 or 16 fields, got {len(fields)}", path)
    try:
        values = [float(v) for v in fields[1:]]
    except ValueError as exc:
        raise KittiFormatError(lineno, str(exc), path) from None
    return KittiLabel(
        type=fields[0],
        truncated=values[0],
        occluded=int(round(values[1])),
        alpha=values[2],
        bbox=tuple(values[3:7]),
        dimensions=tuple(values[7:10]),
        location=tuple(values[10:13]),
        rotation_y=values[13],
        score=values[14] if len(values) == 15 else None,
    )


def parse_labels(path):
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                labels.append(parse_label_line(line, lineno, path))
    return labels


def format_labels(labels):
    return "".join(label.to_line() + "\n" for label in labels)


def write_labels(labels, path):
    atomic_write_text(path, format_labels(labels))


def atomic_write_bytes(path, data):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def parse_velodyne(path):
    """Decode a velodyne ``.bin`` into ``(points (N, 3) float64, reflectance (N,))``."""
    raw = open(path, "rb").read()
    if len(raw) % 16:
        raise TruncatedFileError(f"{path}: {len(raw)} bytes is not a multiple of 16")
    quads = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return quads[:, :3].astype(np.float64), quads[:, 3].astype(np.float64)


def write_velodyne(path, points, reflectance=None):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    refl = np.zeros(len(pts)) if reflectance is None else np.asarray(reflectance, dtype=float)
    quads = np.column_stack([pts, refl]).astype("<f4")
    atomic_write_bytes(path, quads.tobytes())


@dataclass
class CalibrationSet:
    P2: np.ndarray
    R0_rect: np.ndarray
    Tr_velo_to_cam: np.ndarray
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P2 = np.asarray(self.P2, dtype=float).reshape(3, 4)
        self.R0_rect = np.asarray(self.R0_rect, dtype=float).reshape(3, 3)
        self.Tr_velo_to_cam = np.asarray(self.Tr_velo_to_cam, dtype=float).reshape(3, 4)

    @classmethod
    def ideal(cls, translation=(0.0, 0.0, 0.0), P2=None):
        """Calibration whose only rotation is the camera/LiDAR axis swap.

        Camera x = -LiDAR y, camera y = -LiDAR z, camera z = LiDAR x.
        """
        tr = np.zeros((3, 4))
        tr[:, :3] = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]
        tr[:, 3] = translation
        if P2 is None:
            P2 = [[721.5377, 0.0, 609.5593, 44.85728],
                  [0.0, 721.5377, 172.854, 0.2163791],
                  [0.0, 0.0, 1.0, 0.002745884]]
        return cls(P2=P2, R0_rect=np.eye(3), Tr_velo_to_cam=tr)

    def _rect_from_velo(self):
        m = np.eye(4)
        m[:3, :4] = self.Tr_velo_to_cam
        r = np.eye(4)
        r[:3, :3] = self.R0_rect
        return r @ m

    def velo_to_rect(self, points):
        pts = np.asarray(points, dtype=float)
        m = self._rect_from_velo()
        return pts @ m[:3, :3].T + m[:3, 3]

    def rect_to_velo(self, points):
        m = self._rect_from_velo()
        if abs(np.linalg.det(m[:3, :3])) < 1e-12:
            raise InvalidCalibrationError("R0_rect @ Tr_velo_to_cam is singular")
        inv = np.linalg.inv(m)
        pts = np.asarray(points, dtype=float)
        return pts @ inv[:3, :3].T + inv[:3, 3]

    def project_rect(self, points):
        """Project rectified-camera points to pixel coordinates with ``P2``."""
        pts = np.asarray(points, dtype=float)
        hom = pts @ self.P2[:, :3].T + self.P2[:, 3]
        return hom[..., :2] / hom[..., 2:3]


def parse_calib(path):
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            key, sep, rest = line.partition(":")
            if not sep:
                raise KittiFormatError(lineno, "expected 'KEY: values'", path)
            try:
                entries[key.strip()] = np.array([float(v) for v in rest.split()])
            except ValueError as exc:
                raise KittiFormatError(lineno, str(exc), path) from None
    shapes = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}
    for key, n in shapes.items():
        if key not in entries:
            raise MissingCalibrationError(f"{path}: missing calibration key {key}")
        if entries[key].size != n:
            raise KittiFormatError(0, f"{key} needs {n} values, got {entries[key].size}", path)
    extra = {k: v for k, v in entries.items() if k not in shapes}
    return CalibrationSet(entries["P2"], entries["R0_rect"], entries["Tr_velo_to_cam"], extra)


def write_calib(calib, path):
    rows = {k: v for k, v in calib.extra.items()}
    rows.update(P2=calib.P2, R0_rect=calib.R0_rect, Tr_velo_to_cam=calib.Tr_velo_to_cam)
    order = ["P0", "P1", "P2", "P3", "R0_rect", "Tr_velo_to_cam", "Tr_imu_to_velo"]
    keys = [k for k in order if k in rows] + [k for k in rows if k not in order]
    text = "".join(f"{k}: " + " ".join(f"{v:.12e}" for v in np.ravel(rows[k])) + "\n" for k in keys)
    atomic_write_text(path, text)


def camera_to_lidar_box(label, calib):
    """LiDAR-frame box for a camera-frame KITTI label."""
    h, w, l = label.dimensions
    x, y, z = label.location
    # camera y points down; the label location is the bottom-face center
    center = calib.rect_to_velo(np.array([x, y - h / 2.0, z]))
    yaw = float(wrap_angle(-label.rotation_y - np.pi / 2.0))
    return OrientedBox3(center, (w, l, h), yaw)


def lidar_to_camera_box(box, calib):
    """Inverse of :func:`camera_to_lidar_box`: ``(location, (h, w, l), rotation_y)``."""
    w, l, h = box.size
    c = calib.velo_to_rect(np.asarray(box.center))
    location = (float(c[0]), float(c[1] + h / 2.0), float(c[2]))
    rotation_y = float(wrap_angle(-box.yaw - np.pi / 2.0))
    return location, (h, w, l), rotation_y


def image_bbox(box, calib, image_size=IMAGE_SIZE):
    """2D box of the projected corners clipped to the image, or ``None`` if unseen."""
    rect = calib.velo_to_rect(box_corners(box))
    if np.any(rect[:, 2] <= 0.1):
        return None
    uv = calib.project_rect(rect)
    left, top = np.maximum(uv.min(axis=0), 0.0)
    right = min(uv[:, 0].max(), image_size[0] - 1)
    bottom = min(uv[:, 1].max(), image_size[1] - 1)
    if right <= left or bottom <= top:
        return None
    return (float(left), float(top), float(right), float(bottom))


def box_to_label(box, calib, obj_type="Car", score=None, truncated=0.0, occluded=0, bbox=None):
    location, dims, rotation_y = lidar_to_camera_box(box, calib)
    if bbox is None:
        bbox = image_bbox(box, calib) or (0.0, 0.0, 0.0, 0.0)
    alpha = float(wrap_angle(rotation_y - np.arctan2(location[0], location[2])))
    return KittiLabel(obj_type, truncated, occluded, alpha, tuple(bbox), dims, location, rotation_y, score)


def assign_difficulty(label):
    """KITTI devkit difficulty: the easiest level whose thresholds the label meets."""
    if label.is_dontcare:
        return Difficulty.IGNORED
    height = label.bbox_height
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        min_h, max_occ, max_trunc = DIFFICULTY_RULES[level]
        if height >= min_h and label.occluded <= max_occ and label.truncated <= max_trunc:
            return level
    return Difficulty.IGNORED


def frame_ids(directory, suffix):
    """Sorted frame ids (file stems) with the given suffix in ``directory``."""
    return sorted(f[: -len(suffix)] for f in os.listdir(directory) if f.endswith(suffix))
