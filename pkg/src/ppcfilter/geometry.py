"""Coordinate transforms shared by the rest of the package.

Conventions: the LiDAR sits at the origin with x forward, y left and z up.
Spherical coordinates are ``(r, theta, phi)`` where ``theta`` is the azimuth
in ``[-pi, pi)`` and ``phi`` is the *elevation* above the horizontal plane in
``[-pi/2, pi/2]``.  On the projection plane ``theta`` is the horizontal axis
and ``phi`` the vertical one.

Every function accepts a single point or a stack of points (last axis is the
coordinate axis) and returns arrays of matching leading shape.
"""

from typing import NamedTuple

import numpy as np

from .errors import DegeneratePointError

TWO_PI = 2.0 * np.pi


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float


class PlanePoint(NamedTuple):
    theta: float
    phi: float


class PolarPlanePoint(NamedTuple):
    rho: float
    t: float


def wrap_near(a):
    """Wrap angles in ``[-3*pi, 3*pi)`` into ``[-pi, pi)`` with one shift."""
    a = np.asarray(a, dtype=float)
    return np.where(a >= np.pi, a - TWO_PI, np.where(a < -np.pi, a + TWO_PI, a))


def wrap_angle(a):
    """Map angles into ``[-pi, pi)``.

    In-range inputs come back unchanged and inputs within one turn get a
    single shift, so results agree bit for bit with :func:`wrap_near`.
    """
    out = wrap_near(a)
    far = (out >= np.pi) | (out < -np.pi)
    if np.any(far):
        folded = np.mod(out + np.pi, TWO_PI) - np.pi
        # mod can round up to exactly 2*pi for tiny negative inputs
        folded = np.where(folded >= np.pi, folded - TWO_PI, folded)
        out = np.where(far, folded, out)
    return out


def angular_gap(a, b):
    """Smallest absolute difference between two angles, in ``[0, pi]``."""
    return np.abs(wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def unwrap_about(angles, center):
    """Express ``angles`` on the branch ``[center - pi, center + pi)``."""
    return wrap_angle(np.asarray(angles, dtype=float) - center) + center


def _spherical(points):
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    horiz = np.hypot(x, y)
    r = np.hypot(horiz, z)
    theta = wrap_angle(np.arctan2(y, x))
    phi = np.arctan2(z, horiz)
    return np.stack([r, theta, phi], axis=-1)


def cartesian_to_spherical(points):
    """Convert Cartesian points to ``(r, theta, phi)``.

    Raises:
        DegeneratePointError: if any input point is the origin.
    """
    sph = _spherical(points)
    if np.any(sph[..., 0] == 0.0):
        raise DegeneratePointError("point at the sensor origin has no direction")
    return sph


def cartesian_to_spherical_unchecked(points):
    """Like :func:`cartesian_to_spherical` but maps the origin to ``(0, 0, 0)``.

    Used on raw scans, where KITTI occasionally stores zero returns.
    """
    return _spherical(points)


def spherical_to_cartesian(sph):
    s = np.asarray(sph, dtype=float)
    r, theta, phi = s[..., 0], s[..., 1], s[..., 2]
    horiz = r * np.cos(phi)
    return np.stack([horiz * np.cos(theta), horiz * np.sin(theta), r * np.sin(phi)], axis=-1)


def rotation_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_rotate(points, theta):
    """Rotate points about the z axis by ``theta`` (counter-clockwise seen from above).

    Row-vector form ``P @ R(theta).T`` with the usual 3x3 yaw matrix.
    """
    p = np.asarray(points, dtype=float)
    return p @ rotation_z(theta).T


def plane_to_polar(points, origin):
    """Polar coordinates ``(rho, t)`` of plane points relative to ``origin``.

    Both arguments are ``(theta, phi)`` pairs.  ``t`` is measured from the
    +theta axis towards +phi and lies in ``[-pi, pi)``; a point coinciding
    with the origin gets ``t = 0``.
    """
    p = np.asarray(points, dtype=float)
    o = np.asarray(origin, dtype=float)
    d_theta = p[..., 0] - o[..., 0]
    d_phi = p[..., 1] - o[..., 1]
    rho = np.hypot(d_theta, d_phi)
    t = np.where(rho > 0.0, wrap_angle(np.arctan2(d_phi, d_theta)), 0.0)
    return np.stack([rho, t], axis=-1)
