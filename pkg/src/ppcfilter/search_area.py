"""Spherical extent of a predicted box and the frustum of points behind it."""

import math
from typing import NamedTuple

import numpy as np

from .boxes import box_corners
from .errors import InvalidGeometryError
from .geometry import _spherical, wrap_angle, wrap_near

__all__ = [
    "SphericalExtent",
    "box_corners",
    "box_spherical_extent",
    "crop_search_area",
    "SortedScan",
    "spherical_extents",
]


class SphericalExtent(NamedTuple):
    r_max: float
    theta_min: float
    theta_max: float
    phi_min: float
    phi_max: float
    theta_center: float


def _check_origin_outside(box):
    local = np.abs(box.to_local(np.zeros(3)))
    half = box.half_extents_xyz
    if np.all(local <= half):
        raise InvalidGeometryError("sensor origin lies inside the box")
    if np.all(local[:2] <= half[:2]):
        # box directly above/below the sensor: azimuth span is the full circle
        raise InvalidGeometryError("sensor origin lies inside the box footprint")


def box_spherical_extent(box):
    """Min/max spherical coordinates over the eight corners of ``box``.

    Azimuths are unwrapped about the azimuth of the box center, so the
    returned ``theta_min``/``theta_max`` may leave ``[-pi, pi)`` when the box
    straddles the rear seam.

    Raises:
        InvalidGeometryError: if the sensor is inside the box or its footprint.
    """
    ext = spherical_extents([box])[0]
    if isinstance(ext, Exception):
        raise ext
    return ext


def _inside(sph, ext):
    dtheta = wrap_angle(sph[..., 1] - ext.theta_center)
    return (
        (sph[..., 0] > ext.r_max)
        & (dtheta > ext.theta_min - ext.theta_center)
        & (dtheta < ext.theta_max - ext.theta_center)
        & (sph[..., 2] > ext.phi_min)
        & (sph[..., 2] < ext.phi_max)
    )


def crop_search_area(cloud, box):
    """Indices (ascending) of the points lying in the frustum behind ``box``.

    A point qualifies when its range exceeds every corner range and its
    azimuth and elevation fall strictly inside the corner intervals.
    """
    ext = box_spherical_extent(box)
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return np.flatnonzero(_inside(_spherical(pts), ext))


def spherical_extents(boxes):
    """:func:`box_spherical_extent` for many boxes.

    Returns a list holding a :class:`SphericalExtent` per box, or the
    :class:`InvalidGeometryError` that box would raise.
    """
    if not boxes:
        return []
    corners = np.stack([box_corners(b) for b in boxes])
    sph = _spherical(corners)
    centers = np.array([b.center for b in boxes])
    theta_c = wrap_angle(np.arctan2(centers[:, 1], centers[:, 0]))
    dtheta = wrap_angle(sph[..., 1] - theta_c[:, None])
    r_max = sph[..., 0].max(axis=1)
    t_lo, t_hi = dtheta.min(axis=1), dtheta.max(axis=1)
    p_lo, p_hi = sph[..., 2].min(axis=1), sph[..., 2].max(axis=1)
    out = []
    for i, box in enumerate(boxes):
        try:
            _check_origin_outside(box)
        except InvalidGeometryError as exc:
            out.append(exc)
            continue
        tc = float(theta_c[i])
        out.append(SphericalExtent(float(r_max[i]), tc + float(t_lo[i]), tc + float(t_hi[i]),
                                   float(p_lo[i]), float(p_hi[i]), tc))
    return out


class SortedScan:
    """A scan bucketed by azimuth so many boxes can be cropped cheaply.

    ``crop(box)`` returns the same indices as :func:`crop_search_area` but
    only tests points from the azimuth buckets the box covers.
    """

    num_bins = 4096

    def __init__(self, cloud):
        self.points = np.asarray(cloud, dtype=float).reshape(-1, 3)
        self.spherical = _spherical(self.points)
        bins = self._bin(self.spherical[:, 1])
        self.order = np.argsort(bins.astype(np.int16), kind="stable")
        counts = np.bincount(bins, minlength=self.num_bins)
        self.starts = np.concatenate([[0], np.cumsum(counts)])
        # contiguous per-coordinate copies in bucket order
        self.r, self.theta, self.phi = (np.ascontiguousarray(self.spherical[self.order, k]) for k in range(3))

    def __len__(self):
        return len(self.points)

    def _bin(self, theta):
        b = np.floor((np.asarray(theta) + np.pi) * (self.num_bins / (2 * np.pi))).astype(np.intp)
        return np.clip(b, 0, self.num_bins - 1)

    def _bin_scalar(self, theta):
        theta = float(wrap_angle(theta))
        b = math.floor((theta + np.pi) * (self.num_bins / (2 * np.pi)))
        return min(max(b, 0), self.num_bins - 1)

    def windows(self, ext):
        """Slices of the bucket-ordered arrays covering the box azimuth range."""
        lo = self._bin_scalar(ext.theta_min) - 1
        hi = self._bin_scalar(ext.theta_max) + 1
        if lo < 0 or hi >= self.num_bins or lo > hi:
            # straddles the +-pi seam
            lo %= self.num_bins
            hi %= self.num_bins
            if lo > hi:
                return [slice(self.starts[lo], len(self.points)), slice(0, self.starts[hi + 1])]
            return [slice(0, len(self.points))]
        return [slice(self.starts[lo], self.starts[hi + 1])]

    def crop(self, box, extent=None):
        ext = box_spherical_extent(box) if extent is None else extent
        t_lo = ext.theta_min - ext.theta_center
        t_hi = ext.theta_max - ext.theta_center
        found = []
        for sl in self.windows(ext):
            r = self.r[sl]
            m = r > ext.r_max
            phi = self.phi[sl]
            m &= (phi > ext.phi_min) & (phi < ext.phi_max)
            dtheta = wrap_near(self.theta[sl] - ext.theta_center)
            m &= (dtheta > t_lo) & (dtheta < t_hi)
            found.append(self.order[sl][m])
        idx = found[0] if len(found) == 1 else np.concatenate(found)
        return np.sort(idx)
