"""Penetrated Point Classifier.

A LiDAR beam cannot pass through a car.  For each predicted box the aligned
CAD cloud and the scene points behind the box are projected onto the
``(theta, phi)`` plane, re-centered on the projection of the box center and
expressed in plane-polar coordinates ``(rho, t)``.  A point behind the box is
*penetrated* when the CAD point with the closest angular coordinate lies
farther from the center than it does.  A box with any penetrated point is
deleted.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cad as cadmod
from .errors import DegeneratePointError, PPCError
from .geometry import _spherical, angular_gap, cartesian_to_spherical, wrap_near
from .search_area import SortedScan, box_spherical_extent, spherical_extents


def project_polar(spherical, center):
    """Plane-polar ``(rho, t)`` of spherical coordinates about ``center``.

    ``center`` is the ``(theta, phi)`` of the box center; azimuths are taken
    relative to it so the seam at +-pi never splits a silhouette.
    """
    sph = np.asarray(spherical, dtype=float)
    # both azimuths lie in [-pi, pi), so one shift suffices
    d_theta = wrap_near(sph[..., 1] - center[0])
    d_phi = sph[..., 2] - center[1]
    rho = np.hypot(d_theta, d_phi)
    t = wrap_near(np.arctan2(d_phi, d_theta))
    t[rho == 0.0] = 0.0
    return rho, t


class Silhouette:
    """Plane-polar image of an aligned CAD cloud.

    Holds ``rho`` and ``t`` per CAD point (original order) plus an angular
    index for vectorized nearest-angle lookups.
    """

    def __init__(self, rho, t, center=(0.0, 0.0), order=None):
        self.rho = np.asarray(rho, dtype=float).reshape(-1)
        self.t = np.asarray(t, dtype=float).reshape(-1)
        if len(self.rho) == 0 or len(self.rho) != len(self.t):
            raise ValueError("silhouette needs matching, non-empty rho and t")
        self.center = (float(center[0]), float(center[1]))
        self.min_rho = float(self.rho.min())
        if order is None:
            order = np.argsort(self.t, kind="stable")
        self._sorted_t = self.t[order]
        # for every sorted slot, the original index heading its run of equal angles
        n = len(order)
        starts = np.ones(n, dtype=bool)
        starts[1:] = self._sorted_t[1:] != self._sorted_t[:-1]
        run_head = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
        self._first_index = order[run_head]

    def __len__(self):
        return len(self.rho)

    def nearest(self, t):
        """Index of the CAD point whose angle is closest to each of ``t``.

        Ties go to the lower index.
        """
        q = np.asarray(t, dtype=float)
        n = len(self._sorted_t)
        pos = np.searchsorted(self._sorted_t, q)
        left = pos - 1  # -1 wraps to the last slot
        right = np.where(pos == n, 0, pos)
        gap_l = np.abs(wrap_near(q - self._sorted_t[left]))
        gap_r = np.abs(wrap_near(q - self._sorted_t[right]))
        idx_l, idx_r = self._first_index[left], self._first_index[right]
        take_right = (gap_r < gap_l) | ((gap_r == gap_l) & (idx_r < idx_l))
        return np.where(take_right, idx_r, idx_l)

    def classify(self, rho, t):
        """Vectorized penetration test, returns ``(penetrated, matched_index)``."""
        rho = np.asarray(rho, dtype=float)
        j = self.nearest(t)
        pen = self.rho[j] > rho
        if np.any(rho == 0.0):
            pen = np.where(rho == 0.0, self.min_rho > 0.0, pen)
        return pen, j


def build_silhouette(aligned_cad, box):
    """Project an aligned CAD cloud about the projection of ``box.center``."""
    pts = np.asarray(aligned_cad, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("aligned CAD cloud is empty")
    center_sph = cartesian_to_spherical(np.asarray(box.center))
    center = (center_sph[1], center_sph[2])
    rho, t = project_polar(cartesian_to_spherical(pts), center)
    return Silhouette(rho, t, center)


def is_penetrated(sa_point, sil):
    """Nearest-angle radial test for a single search-area point.

    ``sa_point`` is a ``(rho, t)`` pair.  Returns ``(penetrated, j)`` where
    ``j`` is the matched CAD index (lowest index on ties).
    """
    rho, t = float(sa_point[0]), float(sa_point[1])
    j = int(np.argmin(angular_gap(t, sil.t)))
    if rho == 0.0:
        return sil.min_rho > 0.0, j
    return bool(sil.rho[j] > rho), j


@dataclass
class Removal:
    det_index: int
    detection: object
    point_index: int
    rho: float
    t: float
    cad_index: int
    all_points: np.ndarray = None


@dataclass
class FilterOutcome:
    detections: list
    kept: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # (det_index, message)

    @property
    def kept_detections(self):
        return [self.detections[i] for i in self.kept]

    @property
    def removed_detections(self):
        return [r.detection for r in self.removed]


def _first_penetrated(scan, idx, sil, diagnostics, chunk):
    """Scan ``idx`` in ascending order and stop at the first penetrated point."""
    every = []
    for lo in range(0, len(idx), chunk):
        part = idx[lo:lo + chunk]
        rho, t = project_polar(scan.spherical[part], sil.center)
        pen, j = sil.classify(rho, t)
        if not pen.any():
            continue
        if not diagnostics:
            k = int(np.argmax(pen))
            return int(part[k]), float(rho[k]), float(t[k]), int(j[k]), None
        every.append((part, rho, t, j, pen))
    if not every:
        return None
    part, rho, t, j, pen = every[0]
    k = int(np.argmax(pen))
    all_pen = np.concatenate([p[m] for p, _, _, _, m in every])
    return int(part[k]), float(rho[k]), float(t[k]), int(j[k]), all_pen


def classify_box(scan, box, aligned_cad, diagnostics=False, chunk=256):
    """Run the classifier for one box against a :class:`SortedScan`.

    Returns ``None`` when the box survives, otherwise a tuple
    ``(point_index, rho, t, cad_index, all_penetrated_or_None)`` describing
    the first penetrated point in ascending index order.  ``diagnostics``
    additionally collects every penetrated index.
    """
    ext = box_spherical_extent(box)
    idx = scan.crop(box, ext)
    if len(idx) == 0:
        return None
    sil = build_silhouette(aligned_cad, box)
    return _first_penetrated(scan, idx, sil, diagnostics, chunk)


def _silhouettes(aligned, boxes):
    """Build every box's silhouette in one batch; errors come back in place."""
    if not boxes:
        return []
    centers = _spherical(np.array([b.center for b in boxes]))
    sph = _spherical(aligned)
    rho, t = project_polar(sph, (centers[:, 1:2], centers[:, 2:3]))
    order = np.argsort(t, axis=1, kind="stable")
    out = []
    for i in range(len(boxes)):
        if centers[i, 0] == 0.0 or np.any(sph[i, :, 0] == 0.0):
            out.append(DegeneratePointError("CAD point or box center at the sensor origin"))
        else:
            out.append(Silhouette(rho[i], t[i], (centers[i, 1], centers[i, 2]), order[i]))
    return out


def filter_detections(frame, cad, kappa=cadmod.DEFAULT_KAPPA, diagnostics=False, scan=None, chunk=256):
    """Delete every detection in ``frame`` that has a penetrated point behind it.

    Detections are judged independently.  Geometry errors on one box are
    recorded in ``errors`` and that box is kept.
    """
    if scan is None:
        scan = SortedScan(frame.points)
    dets = list(frame.detections)
    boxes = [d.box for d in dets]
    outcome = FilterOutcome(detections=dets)
    extents = spherical_extents(boxes)
    sils = _silhouettes(cadmod.align_cad_batch(cad, boxes, kappa), boxes)
    for i, (det, ext, sil) in enumerate(zip(dets, extents, sils)):
        for problem in (ext, sil):
            if isinstance(problem, PPCError):
                outcome.errors.append((i, str(problem)))
                outcome.kept.append(i)
                break
        else:
            idx = scan.crop(det.box, ext)
            hit = _first_penetrated(scan, idx, sil, diagnostics, chunk) if len(idx) else None
            if hit is None:
                outcome.kept.append(i)
            else:
                outcome.removed.append(Removal(i, det, *hit))
    return outcome
