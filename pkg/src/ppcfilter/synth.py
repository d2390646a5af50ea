"""Ray-casting LiDAR simulator used as ground truth for the classifier.

Every ray returns at most its nearest surface hit, so no return can lie
behind an opaque object along its own beam.  Scenes are made of convex solids
(oriented boxes, posed cars built from the procedural sedan or from the
convex hull of a CAD file) and axis-aligned rectangular patches.
"""

import os
import shlex
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from . import cad as cadmod
from . import kitti_io
from .boxes import Detection, Frame, OrientedBox3
from .errors import InvalidGeometryError, SceneFormatError
from .geometry import rotation_z

GROUND_Z = -1.73  # KITTI velodyne mounting height


@dataclass(frozen=True)
class LidarGrid:
    az_min: float = -np.pi
    az_max: float = np.pi
    az_step: float = 0.003
    el_min: float = -0.43
    el_max: float = 0.06
    el_step: float = 0.49 / 63  # 64 beams
    max_range: float = 120.0

    def __post_init__(self):
        if self.az_step <= 0 or self.el_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.az_max <= self.az_min or self.el_max < self.el_min:
            raise ValueError("grid ranges must be non-empty")

    def azimuths(self):
        n = int(np.floor((self.az_max - self.az_min) / self.az_step - 1e-9)) + 1
        return self.az_min + self.az_step * np.arange(n)

    def elevations(self):
        n = int(np.floor((self.el_max - self.el_min) / self.el_step + 1e-9)) + 1
        return self.el_min + self.el_step * np.arange(n)

    def directions(self):
        """Unit ray directions, elevation-major, shape ``(n_el * n_az, 3)``."""
        az = self.azimuths()
        el = self.elevations()
        ce, se = np.cos(el)[:, None], np.sin(el)[:, None]
        d = np.stack(np.broadcast_arrays(ce * np.cos(az), ce * np.sin(az), se), axis=-1)
        return d.reshape(-1, 3)


FORWARD_GRID = LidarGrid(az_min=-np.pi / 4, az_max=np.pi / 4)


class ConvexSolid:
    """Union of convex parts posed by an oriented box.

    Parts are ``(A, b)`` half-space systems in a canonical frame whose
    bounding box has extents ``canonical_xyz``; the pose stretches that frame
    onto ``box``.
    """

    def __init__(self, obj_id, box, parts, canonical_xyz):
        self.id = obj_id
        self.box = box
        self.parts = parts
        self.scale = np.array([box.l, box.w, box.h]) / np.asarray(canonical_xyz, dtype=float)
        self.rot = rotation_z(box.yaw)

    def intersect(self, dirs):
        """Entry distance of each ray from the origin, ``inf`` on a miss."""
        o = (-np.asarray(self.box.center) @ self.rot) / self.scale
        d = (dirs @ self.rot) / self.scale
        best = np.full(len(dirs), np.inf)
        for A, b in self.parts:
            num = b - A @ o  # origin is outside iff some num < 0
            den = d @ A.T
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = num / den
            t_enter = np.max(np.where(den < 0, ratio, -np.inf), axis=1)
            t_exit = np.min(np.where(den > 0, ratio, np.inf), axis=1)
            parallel_out = np.any((den == 0) & (num < 0), axis=1)
            hit = (t_enter <= t_exit) & (t_enter > 0) & ~parallel_out
            best = np.where(hit & (t_enter < best), t_enter, best)
        return best


def _box_halfspaces():
    A = np.vstack([np.eye(3), -np.eye(3)])
    return A, np.full(6, 0.5)


def box_solid(obj_id, box):
    return ConvexSolid(obj_id, box, [_box_halfspaces()], (1.0, 1.0, 1.0))


def car_solid(obj_id, box, cad_points=None):
    """A car filling ``box``: the procedural sedan, or the hull of a CAD cloud."""
    if cad_points is None:
        parts = [cadmod.convex_halfspaces(p) for p in cadmod.sedan_parts()]
        size = (cadmod.SEDAN_LENGTH, cadmod.SEDAN_WIDTH, cadmod.SEDAN_HEIGHT)
        return ConvexSolid(obj_id, box, parts, size)
    model = cadmod.canonicalize(cad_points)
    return ConvexSolid(obj_id, box, [cadmod.convex_halfspaces(model.points)], model.size_xyz)


class Patch:
    """Axis-aligned rectangle ``x[axis] == offset``.

    The two remaining axes (in x, y, z order) are bounded by
    ``center[k] +- extent[k]``.
    """

    def __init__(self, obj_id, axis, offset, extent, center=(0.0, 0.0)):
        self.id = obj_id
        self.axis = "xyz".index(axis) if isinstance(axis, str) else int(axis)
        self.offset = float(offset)
        self.extent = tuple(float(e) for e in extent)
        self.center = tuple(float(c) for c in center)
        if min(self.extent) <= 0:
            raise ValueError("patch extents must be positive")
        self.others = [k for k in range(3) if k != self.axis]

    def intersect(self, dirs):
        da = dirs[:, self.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.offset / da
        ok = np.isfinite(t) & (t > 0)
        for k, c, e in zip(self.others, self.center, self.extent):
            ok &= np.abs(np.where(ok, t, 0.0) * dirs[:, k] - c) <= e
        return np.where(ok, t, np.inf)


@dataclass
class Scene:
    objects: list = field(default_factory=list)
    grid: LidarGrid = field(default_factory=LidarGrid)
    cars: list = field(default_factory=list)  # ground-truth car boxes
    detections: list = field(default_factory=list)  # planted detections

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise ValueError("scene object identifiers must be unique")


@dataclass
class RaycastResult:
    points: np.ndarray
    hit_ids: np.ndarray  # object id per return
    ray_index: np.ndarray  # which grid ray produced each return


def raycast(scene, grid=None, chunk=1 << 16):
    """Nearest-hit returns for every grid ray."""
    grid = scene.grid if grid is None else grid
    dirs_all = grid.directions()
    pts, ids, rays = [], [], []
    for start in range(0, len(dirs_all), chunk):
        dirs = dirs_all[start:start + chunk]
        best = np.full(len(dirs), np.inf)
        owner = np.full(len(dirs), -1)
        for k, obj in enumerate(scene.objects):
            t = obj.intersect(dirs)
            closer = t < best
            best[closer] = t[closer]
            owner[closer] = k
        hit = best <= grid.max_range
        idx = np.flatnonzero(hit)
        pts.append(dirs[idx] * best[idx, None])
        ids.append(owner[idx])
        rays.append(idx + start)
    points = np.concatenate(pts) if pts else np.zeros((0, 3))
    owners = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
    obj_ids = np.array([scene.objects[k].id for k in owners], dtype=object)
    return RaycastResult(points, obj_ids, np.concatenate(rays) if rays else np.zeros(0, dtype=int))


# ---------------------------------------------------------------- scene files

_BOX_KEYS = ("cx", "cy", "cz", "w", "l", "h", "yaw")


def _kv(tokens, lineno):
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep or not key:
            raise SceneFormatError(lineno, f"expected key=value, got {tok!r}")
        out[key] = val
    return out


def _floats(kv, keys, lineno, defaults=None):
    defaults = defaults or {}
    vals = {}
    for k in keys:
        if k in kv:
            try:
                vals[k] = float(kv[k])
            except ValueError:
                raise SceneFormatError(lineno, f"{k} is not a number: {kv[k]!r}") from None
        elif k in defaults:
            vals[k] = defaults[k]
        else:
            raise SceneFormatError(lineno, f"missing {k}=")
    return vals


def _box_from(kv, lineno, defaults):
    v = _floats(kv, _BOX_KEYS, lineno, defaults)
    try:
        return OrientedBox3((v["cx"], v["cy"], v["cz"]), (v["w"], v["l"], v["h"]), v["yaw"])
    except ValueError as exc:
        raise SceneFormatError(lineno, str(exc)) from None


def parse_scene(path):
    """Read a line-based scene description.

    Records (``#`` starts a comment)::

        lidar az_min= az_max= az_step= el_min= el_max= el_step= range=
        box   cx= cy= cz= w= l= h= yaw= [id=]
        wall  axis=x|y|z offset= extent= [extent2=] [c1=] [c2=] [id=]
        car   [cad=default|PATH] cx= cy= cz= [w= l= h= yaw=] [id=]
        det   cx= cy= cz= w= l= h= yaw= [score=]

    ``car`` records become ground-truth labels; ``det`` records are planted
    detections and are not part of the geometry.
    """
    objects, cars, dets = [], [], []
    grid = LidarGrid()
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            kind, *rest = shlex.split(line)
            kv = _kv(rest, lineno)
            oid = kv.pop("id", f"{kind}{lineno}")
            if kind == "lidar":
                d = LidarGrid()
                keys = {"az_min": d.az_min, "az_max": d.az_max, "az_step": d.az_step,
                        "el_min": d.el_min, "el_max": d.el_max, "el_step": d.el_step,
                        "range": d.max_range}
                v = _floats(kv, keys, lineno, keys)
                try:
                    grid = LidarGrid(v["az_min"], v["az_max"], v["az_step"], v["el_min"],
                                     v["el_max"], v["el_step"], v["range"])
                except ValueError as exc:
                    raise SceneFormatError(lineno, str(exc)) from None
            elif kind == "box":
                objects.append(box_solid(oid, _box_from(kv, lineno, {"yaw": 0.0})))
            elif kind == "wall":
                axis = kv.get("axis")
                if axis not in ("x", "y", "z"):
                    raise SceneFormatError(lineno, "wall needs axis=x|y|z")
                v = _floats(kv, ("offset", "extent", "extent2", "c1", "c2"), lineno,
                            {"extent2": float(kv.get("extent", 0) or 0), "c1": 0.0, "c2": 0.0})
                try:
                    objects.append(Patch(oid, axis, v["offset"], (v["extent"], v["extent2"]), (v["c1"], v["c2"])))
                except ValueError as exc:
                    raise SceneFormatError(lineno, str(exc)) from None
            elif kind == "car":
                defaults = {"w": cadmod.SEDAN_WIDTH, "l": cadmod.SEDAN_LENGTH,
                            "h": cadmod.SEDAN_HEIGHT, "yaw": 0.0}
                box = _box_from(kv, lineno, defaults)
                cad_ref = kv.get("cad", "default")
                cad_points = None
                if cad_ref != "default":
                    cad_path = cad_ref if os.path.isabs(cad_ref) else os.path.join(base, cad_ref)
                    try:
                        cad_points = cadmod.load_cad(cad_path)
                    except (OSError, ValueError) as exc:
                        raise SceneFormatError(lineno, f"cannot load CAD {cad_ref}: {exc}") from None
                objects.append(car_solid(oid, box, cad_points))
                cars.append(box)
            elif kind == "det":
                box = _box_from(kv, lineno, {"yaw": 0.0})
                score = _floats(kv, ("score",), lineno, {"score": 0.5})["score"]
                dets.append(Detection(box, score))
            else:
                raise SceneFormatError(lineno, f"unknown record kind {kind!r}")
    try:
        return Scene(objects, grid, cars, dets)
    except ValueError as exc:
        raise SceneFormatError(0, str(exc)) from None


# ------------------------------------------------------------------ scenarios

@dataclass
class Scenario:
    seed: int
    scene: Scene
    gt_boxes: list
    spurious_boxes: list
    detections: list  # true detections first, then spurious ones
    _cast: Optional[RaycastResult] = None

    @property
    def cast(self):
        if self._cast is None:
            self._cast = raycast(self.scene)
        return self._cast

    def frame(self, frame_id=None):
        fid = f"{self.seed:06d}" if frame_id is None else frame_id
        return Frame(fid, self.cast.points, list(self.detections), list(self.gt_boxes))

    def is_spurious(self, det_index):
        return det_index >= len(self.gt_boxes)


def _reach(box):
    return 0.5 * np.hypot(box.w, box.l)


def _clear(box, others, margin):
    c = np.asarray(box.center[:2])
    return all(np.hypot(*(c - np.asarray(o.center[:2]))) > _reach(box) + _reach(o) + margin for o in others)


def _random_car_box(rng, r_lo, r_hi, az_half):
    d = rng.uniform(r_lo, r_hi)
    a = rng.uniform(-az_half, az_half)
    w, l, h = rng.uniform(1.55, 1.85), rng.uniform(3.6, 4.6), rng.uniform(1.4, 1.65)
    return OrientedBox3((d * np.cos(a), d * np.sin(a), GROUND_Z + h / 2), (w, l, h), rng.uniform(-np.pi, np.pi))


def make_fp_scenario(seed, grid=FORWARD_GRID, background=True):
    """A seeded street scene with real cars and spurious detections.

    Cars stand on a ground plane in the forward wedge; a building facade (and
    sometimes a side wall) closes the scene.  Spurious boxes are car-sized,
    empty, and placed in free space in front of those surfaces.  Returns a
    :class:`Scenario`; the same seed always yields the same scenario.
    """
    rng = np.random.default_rng(seed)
    objects = []
    far_x = rng.uniform(46.0, 60.0)
    if background:
        objects.append(Patch("ground", "z", GROUND_Z, (far_x / 2, 40.0), (far_x / 2, 0.0)))
        objects.append(Patch("facade", "x", far_x, (40.0, 5.0), (0.0, GROUND_Z + 5.0)))
    cars = []
    for _ in range(int(rng.integers(1, 5))):
        for _attempt in range(20):
            box = _random_car_box(rng, 7.0, 40.0, 0.6)
            if _clear(box, cars, 0.5):
                cars.append(box)
                break
    side = None
    if background and rng.random() < 0.5:
        side = float(rng.choice([-1.0, 1.0]) * rng.uniform(14.0, 24.0))
        if any(abs(b.center[1]) + _reach(b) + 1.0 > abs(side) for b in cars):
            side = None
        else:
            objects.append(Patch("side", "y", side, (far_x / 2, 5.0), (far_x / 2, GROUND_Z + 5.0)))
    spurious = []
    for _ in range(int(rng.integers(1, 4))):
        for _attempt in range(50):
            box = _random_car_box(rng, 6.0, 42.0, 0.7)
            if box.center[0] + _reach(box) + 0.5 >= far_x:
                continue
            if side is not None and abs(box.center[1]) + _reach(box) + 0.5 >= abs(side):
                continue
            if _clear(box, cars + spurious, 0.5):
                spurious.append(box)
                break
    for k, box in enumerate(cars):
        objects.append(car_solid(f"car{k}", box))
    dets = [Detection(b, float(rng.uniform(0.5, 1.0))) for b in cars]
    dets += [Detection(b, float(rng.uniform(0.05, 0.9))) for b in spurious]
    scene = Scene(objects, grid, list(cars), list(dets))
    return Scenario(seed, scene, cars, spurious, dets)


def planar_target(distance, azimuth, gap, half_width, half_height, yaw=0.0,
                  size=(1.7, 4.2, 1.5), z=None, grid=FORWARD_GRID):
    """An empty predicted box with a flat wall behind it, facing the sensor.

    The wall is a thin slab perpendicular to the view ray through the box
    center, ``gap`` meters behind the center.  Returns ``(scene, box)``.
    """
    zc = GROUND_Z + size[2] / 2 if z is None else z
    center = np.array([distance * np.cos(azimuth), distance * np.sin(azimuth), zc])
    ray = center / np.linalg.norm(center)
    wall_center = center + gap * ray
    wall_yaw = float(np.arctan2(ray[1], ray[0]))
    # thin slab: its "length" axis runs along the view ray
    wall = OrientedBox3(wall_center, (2 * half_width, 0.05, 2 * half_height), wall_yaw)
    box = OrientedBox3(center, size, yaw)
    if box.contains(np.zeros(3)):
        raise InvalidGeometryError("sensor inside planar-target box")
    return Scene([box_solid("wall", wall)], grid, [], [Detection(box, 0.5)]), box


# -------------------------------------------------------------- KITTI output

SUBDIRS = ("velodyne", "label_2", "calib", "pred")


def write_frame(out_dir, frame_id, points, cars, detections, calib=None):
    """Write one frame in KITTI layout under ``out_dir``."""
    calib = kitti_io.CalibrationSet.ideal() if calib is None else calib
    for sub in SUBDIRS:
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    kitti_io.write_velodyne(os.path.join(out_dir, "velodyne", f"{frame_id}.bin"), points)
    kitti_io.write_calib(calib, os.path.join(out_dir, "calib", f"{frame_id}.txt"))
    labels = [kitti_io.box_to_label(b, calib) for b in cars]
    kitti_io.write_labels(labels, os.path.join(out_dir, "label_2", f"{frame_id}.txt"))
    preds = [kitti_io.box_to_label(d.box, calib, score=d.score) for d in detections]
    kitti_io.write_labels(preds, os.path.join(out_dir, "pred", f"{frame_id}.txt"))


def write_scenario(scenario, out_dir, frame_id=None, calib=None):
    fid = f"{scenario.seed:06d}" if frame_id is None else frame_id
    write_frame(out_dir, fid, scenario.cast.points, scenario.gt_boxes, scenario.detections, calib)
    return fid


def oracle_in_silhouette(query, hull):
    """Exact point-in-convex-polygon test.

    ``hull`` is a counter-clockwise convex polygon (``(K, 2)``, K >= 3) as
    returned by :func:`convex_hull_2d`; ``query`` is one point or a stack.
    Boundary points count as inside.
    """
    poly = np.asarray(hull, dtype=float)
    if len(poly) < 3 or abs(_area2(poly)) <= 1e-15:
        raise InvalidGeometryError("degenerate silhouette hull")
    q = np.asarray(query, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (q[..., None, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (q[..., None, 0] - a[:, 0])
    return np.all(cross >= 0.0, axis=-1)


def _area2(poly):
    x, y = poly[:, 0], poly[:, 1]
    return float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def convex_hull_2d(points):
    """Andrew's monotone chain; counter-clockwise, no collinear vertices."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) < 3:
        raise InvalidGeometryError("hull needs at least 3 distinct points")

    def turn(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and turn(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and turn(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise InvalidGeometryError("degenerate silhouette hull")
    return hull


def halfplane_in_hull(query, points):
    """Second route to the hull membership test, via scipy's facet equations."""
    eq = ConvexHull(np.asarray(points, dtype=float)).equations
    q = np.asarray(query, dtype=float)
    return np.all(q @ eq[:, :2].T + eq[:, 2] <= 1e-12, axis=-1)
