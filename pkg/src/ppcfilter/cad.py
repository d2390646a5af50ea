"""Generalized car CAD point cloud: loading, canonical form, downsampling, alignment.

A CAD model lives in a canonical box frame with the length along +x, the
width along +y and the height along +z, centered so that its axis-aligned
bounding box is symmetric about the origin.  Sizes follow the ``[w, l, h]``
ordering used by :class:`~ppcfilter.boxes.OrientedBox3`.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull

from .errors import CadFormatError, DegenerateModelError, InsufficientModelError
from .geometry import rotation_z

DEFAULT_KAPPA = 0.82
DEFAULT_NUM_POINTS = 500


@dataclass(frozen=True)
class CadModel:
    points: np.ndarray
    size: tuple  # (w, l, h)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("CAD points must have shape (N, 3)")
        if len(pts) < 3:
            raise InsufficientModelError(f"CAD model needs at least 3 points, got {len(pts)}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))

    @property
    def num_points(self):
        return len(self.points)

    @property
    def size_xyz(self):
        """Extents along the canonical x, y, z axes, i.e. ``(l, w, h)``."""
        w, l, h = self.size
        return np.array([l, w, h])


def load_cad(path):
    """Read a CAD point file: one ``x y z`` triple per line, ``#`` comments."""
    points = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise CadFormatError(lineno, f"expected 3 coordinates, got {len(fields)}")
            try:
                points.append([float(v) for v in fields])
            except ValueError as exc:
                raise CadFormatError(lineno, str(exc)) from None
    if len(points) < 3:
        raise InsufficientModelError(f"{path}: CAD model needs at least 3 points, got {len(points)}")
    return np.array(points, dtype=float)


def write_cad(points, path):
    pts = np.asarray(points.points if isinstance(points, CadModel) else points, dtype=float)
    with open(path, "w") as fh:
        fh.write("# x y z (meters), length +x, width +y, height +z\n")
        for x, y, z in pts:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n")


def canonicalize(points):
    """Center a canonically oriented cloud on its bounding-box center.

    The orientation is taken as given (length along x); nothing is rotated.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must have shape (N, 3)")
    if len(pts) < 3:
        raise InsufficientModelError(f"CAD model needs at least 3 points, got {len(pts)}")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = hi - lo
    if np.any(extent <= 0.0):
        axis = "xyz"[int(np.argmin(extent))]
        raise DegenerateModelError(f"CAD model has zero extent along {axis}")
    centered = pts - (lo + hi) / 2.0
    return CadModel(centered, (extent[1], extent[0], extent[2]))


def farthest_point_indices(points, n):
    """Greedy farthest-point sampling seeded at the point of largest norm.

    Ties are broken towards the lowest index, so the result is deterministic.
    """
    pts = np.asarray(points, dtype=float)
    n = min(n, len(pts))
    chosen = np.empty(n, dtype=np.intp)
    chosen[0] = int(np.argmax(np.einsum("ij,ij->i", pts, pts)))
    dist = np.full(len(pts), np.inf)
    for k in range(1, n):
        d = pts - pts[chosen[k - 1]]
        np.minimum(dist, np.einsum("ij,ij->i", d, d), out=dist)
        chosen[k] = int(np.argmax(dist))
    return chosen


def downsample(model, n=DEFAULT_NUM_POINTS):
    """Reduce ``model`` to ``min(n, N)`` points by farthest-point sampling."""
    if n < 3:
        raise ValueError(f"cannot downsample below 3 points (n={n})")
    if n >= model.num_points:
        return model
    idx = np.sort(farthest_point_indices(model.points, n))
    return canonicalize(model.points[idx])


def _scale_xyz(model, box_size, kappa):
    w_b, l_b, h_b = box_size
    return kappa * np.array([l_b, w_b, h_b]) / model.size_xyz


def _check_kappa(kappa):
    if not 0.0 < kappa <= 1.0:
        raise ValueError(f"kappa must lie in (0, 1], got {kappa}")


def align_cad(model, box, kappa=DEFAULT_KAPPA):
    """Place the CAD cloud inside ``box``: scale, then yaw-rotate, then translate.

    Each axis is scaled by ``kappa`` times the box-to-model size ratio, the
    result is rotated by the box yaw and shifted to the box center.
    """
    _check_kappa(kappa)
    scaled = model.points * _scale_xyz(model, box.size, kappa)
    return scaled @ rotation_z(box.yaw).T + np.asarray(box.center)


def align_cad_batch(model, boxes, kappa=DEFAULT_KAPPA):
    """:func:`align_cad` for many boxes at once, shape ``(B, N, 3)``."""
    _check_kappa(kappa)
    if not boxes:
        return np.empty((0, model.num_points, 3))
    sizes = np.array([b.size for b in boxes])  # (B, 3) as w, l, h
    scale = kappa * sizes[:, [1, 0, 2]] / model.size_xyz
    yaw = np.array([b.yaw for b in boxes])
    c, s = np.cos(yaw), np.sin(yaw)
    scaled = model.points[None, :, :] * scale[:, None, :]
    x = scaled[..., 0] * c[:, None] - scaled[..., 1] * s[:, None]
    y = scaled[..., 0] * s[:, None] + scaled[..., 1] * c[:, None]
    out = np.stack([x, y, scaled[..., 2]], axis=-1)
    return out + np.array([b.center for b in boxes])[:, None, :]


# Procedural sedan.  Two convex solids in meters, canonical frame, bounding
# box 4.5 x 1.8 x 1.5 centered at the origin.
SEDAN_LENGTH, SEDAN_WIDTH, SEDAN_HEIGHT = 4.5, 1.8, 1.5
_BELT_Z = 0.25


def _prism(x_bottom, x_top, y_bottom, y_top, z0, z1):
    xb0, xb1 = x_bottom
    xt0, xt1 = x_top
    verts = []
    for x0, x1, yh, z in ((xb0, xb1, y_bottom, z0), (xt0, xt1, y_top, z1)):
        verts += [[x0, -yh, z], [x0, yh, z], [x1, -yh, z], [x1, yh, z]]
    return np.array(verts, dtype=float)


def sedan_parts():
    """Vertex arrays of the convex pieces making up the default sedan."""
    hl, hw, hh = SEDAN_LENGTH / 2, SEDAN_WIDTH / 2, SEDAN_HEIGHT / 2
    body = _prism((-hl, hl), (-hl, hl), hw, hw, -hh, _BELT_Z)
    cabin = _prism((-1.9, 1.3), (-1.2, 0.4), 0.85, 0.7, _BELT_Z, hh)
    return [body, cabin]


def convex_halfspaces(vertices):
    """``(A, b)`` with ``A @ x <= b`` describing the hull of ``vertices``."""
    eq = ConvexHull(vertices).equations
    return eq[:, :3], -eq[:, 3]


def _sample_hull_surface(vertices, n, rng):
    hull = ConvexHull(vertices)
    tris = vertices[hull.simplices]
    areas = 0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    pick = rng.choice(len(tris), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    t = tris[pick]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])


@lru_cache(maxsize=4)
def _sedan_points(n_surface, seed):
    rng = np.random.default_rng(seed)
    parts = sedan_parts()
    halfspaces = [convex_halfspaces(p) for p in parts]
    areas = [ConvexHull(p).area for p in parts]
    total = sum(areas)
    kept = []
    for i, verts in enumerate(parts):
        # oversample; faces shared between parts are interior and get dropped
        cand = _sample_hull_surface(verts, int(2 * n_surface * areas[i] / total) + 16, rng)
        inside_other = np.zeros(len(cand), dtype=bool)
        for j, (A, b) in enumerate(halfspaces):
            if j != i:
                inside_other |= np.all(cand @ A.T <= b + 1e-9, axis=1)
        kept.append(cand[~inside_other])
    # hull vertices pin the bounding box to the exact solid
    corners = []
    for i, verts in enumerate(parts):
        inside_other = np.zeros(len(verts), dtype=bool)
        for j, (A, b) in enumerate(halfspaces):
            if j != i:
                inside_other |= np.all(verts @ A.T < b - 1e-9, axis=1)
        corners.append(verts[~inside_other])
    corners = np.unique(np.concatenate(corners), axis=0)
    pts = np.concatenate(kept)
    pts = pts[rng.permutation(len(pts))[: n_surface - len(corners)]]
    return np.concatenate([corners, pts])


def default_sedan(n_surface=2000, seed=0):
    """Surface samples of the procedural sedan as a canonical :class:`CadModel`."""
    return canonicalize(_sedan_points(n_surface, seed))
