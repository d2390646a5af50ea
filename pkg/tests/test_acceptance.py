"""Acceptance suite: one test per criterion, reported as PASS/FAIL at the end of the run."""

import math
import time

import numpy as np
import pytest

import oracles
from ppcfilter.boxes import Detection, Frame, OrientedBox3
from ppcfilter.cad import align_cad, canonicalize
from ppcfilter.classifier import Silhouette, filter_detections, is_penetrated
from ppcfilter.evaluation import FP, GroundTruth, evaluate, iou_3d, iou_bev, match_frame
from ppcfilter.geometry import _spherical, wrap_angle
from ppcfilter.kitti_io import (
    CalibrationSet,
    KittiLabel,
    parse_calib,
    parse_labels,
    parse_velodyne,
    write_calib,
    write_labels,
)
from ppcfilter.search_area import box_spherical_extent, crop_search_area
from ppcfilter.synth import (
    GROUND_Z,
    LidarGrid,
    Patch,
    Scene,
    convex_hull_2d,
    make_fp_scenario,
    oracle_in_silhouette,
    planar_target,
    raycast,
)

KAPPA = 0.82
N_SCENES = 200


def criterion(number):
    def mark(fn):
        fn.criterion = number
        return fn
    return mark


def note(request, text):
    request.node.criterion_detail = text


@pytest.fixture(scope="module")
def scenarios():
    return [make_fp_scenario(seed) for seed in range(N_SCENES)]


# ----------------------------------------------------------------------- 1


@criterion(1)
def test_physical_soundness(scenarios, sedan, request):
    """Physical soundness: no true box removed over 200 seeded scenes at kappa 0.82."""
    start = time.perf_counter()
    removed = total = 0
    for sc in scenarios:
        out = filter_detections(sc.frame(), sedan, KAPPA)
        true_idx = set(range(len(sc.gt_boxes)))
        removed += sum(r.det_index in true_idx for r in out.removed)
        total += len(true_idx)
        assert not out.errors
    elapsed = time.perf_counter() - start
    note(request, f"{removed}/{total} true boxes removed, {elapsed:.1f} s")
    assert removed == 0
    assert elapsed < 60


# ----------------------------------------------------------------------- 2


def plane_coords(points, center):
    sph = _spherical(points)
    return np.c_[wrap_angle(sph[:, 1] - center[0]), sph[:, 2] - center[1]]


def spanned(sc, box, model):
    """Whether an opaque background surface spans the box silhouette with a return behind it.

    Every grid ray inside the convex hull of the aligned CAD projection must
    hit a background surface (not a car, not a miss), and at least one of
    those returns must lie beyond the farthest box corner.
    """
    c = _spherical(np.asarray(box.center))
    center = (c[1], c[2])
    hull = convex_hull_2d(plane_coords(align_cad(model, box, KAPPA), center))
    dirs = sc.scene.grid.directions()
    inside = np.flatnonzero(oracle_in_silhouette(plane_coords(dirs, center), hull))
    if not len(inside):
        return False
    where = {int(r): k for k, r in enumerate(sc.cast.ray_index)}
    hits = [where.get(int(r)) for r in inside]
    if any(h is None or str(sc.cast.hit_ids[h]).startswith("car") for h in hits):
        return False
    r_max = box_spherical_extent(box).r_max
    return bool(np.any(np.linalg.norm(sc.cast.points[hits], axis=1) > r_max))


@criterion(2)
def test_spurious_removal(scenarios, sedan, request):
    """Spurious boxes: every planted empty box spanned by an opaque surface is removed."""
    start = time.perf_counter()
    qualifying = removed = planted = 0
    for sc in scenarios:
        out = filter_detections(sc.frame(), sedan, KAPPA)
        gone = {r.det_index for r in out.removed}
        for i, det in enumerate(sc.detections):
            if not sc.is_spurious(i):
                continue
            planted += 1
            if spanned(sc, det.box, sedan):
                qualifying += 1
                removed += i in gone
    elapsed = time.perf_counter() - start
    note(request, f"{removed}/{qualifying} qualifying boxes removed ({planted} planted), {elapsed:.1f} s")
    assert qualifying >= 100
    assert removed == qualifying
    assert elapsed < 60


# ----------------------------------------------------------------------- 3


def radius_function(hull):
    """Boundary distance of a convex polygon around the origin along each angle."""
    a = hull
    b = np.roll(hull, -1, axis=0)
    edge = b - a
    normal = np.c_[edge[:, 1], -edge[:, 0]]  # outward for counter-clockwise order
    normal /= np.linalg.norm(normal, axis=1, keepdims=True)
    offset = np.einsum("ij,ij->i", normal, a)
    assert np.all(offset > 0)

    def radius(t):
        u = np.stack([np.cos(t), np.sin(t)], axis=-1)
        proj = u @ normal.T
        with np.errstate(divide="ignore"):
            r = np.where(proj > 0, offset / proj, np.inf)
        return r.min(axis=-1)
    return radius


@criterion(3)
def test_classifier_oracle_equivalence(request):
    """Classifier vs exact point-in-polygon oracle: 1e5 margin queries, no disagreement."""
    rng = np.random.default_rng(2024)
    n_samples, per_shape, shapes = 500, 5000, 20
    spacing = 2 * math.pi / n_samples
    disagreements = total = 0
    for _ in range(shapes):
        poly = oracles.random_convex_polygon(rng, scale=rng.uniform(0.02, 0.2))
        t = -math.pi + spacing * np.arange(n_samples)
        rho = radius_function(poly)(t)
        sil = Silhouette(rho, t)
        samples = np.c_[rho * np.cos(t), rho * np.sin(t)]
        hull = convex_hull_2d(samples)
        r_hull = radius_function(hull)
        fine = np.linspace(-math.pi, math.pi, 64 * n_samples, endpoint=False)
        fine_r = r_hull(fine)
        # sliding min/max of the hull radius over +-one sample spacing
        w = int(np.ceil(spacing / (fine[1] - fine[0]))) + 1
        idx = (np.arange(len(fine))[:, None] + np.arange(-w, w + 1)[None, :]) % len(fine)
        lo, hi = fine_r[idx].min(axis=1), fine_r[idx].max(axis=1)
        q_rho, q_t = [], []
        while len(q_rho) < per_shape:
            r = rng.uniform(0, 1.3 * rho.max(), 4 * per_shape)
            a = rng.uniform(-math.pi, math.pi, 4 * per_shape)
            k = np.floor((a + math.pi) / (fine[1] - fine[0])).astype(int) % len(fine)
            ok = (r < lo[k] * (1 - 1e-6)) | (r > hi[k] * (1 + 1e-6))
            q_rho.extend(r[ok])
            q_t.extend(a[ok])
        q_rho, q_t = np.array(q_rho[:per_shape]), np.array(q_t[:per_shape])
        expected = oracle_in_silhouette(np.c_[q_rho * np.cos(q_t), q_rho * np.sin(q_t)], hull)
        scalar = np.array([is_penetrated((r, a), sil)[0] for r, a in zip(q_rho, q_t)])
        vector = sil.classify(q_rho, q_t)[0]
        disagreements += int(np.count_nonzero(scalar != expected) + np.count_nonzero(vector != scalar))
        total += per_shape
    note(request, f"{disagreements} disagreements over {total} queries")
    assert total == 100_000
    assert disagreements == 0


# ----------------------------------------------------------------------- 4


@criterion(4)
def test_alignment_unit_suite(request):
    """CAD alignment: identity, pure scale, pure rotation and full composition within 1e-9."""
    pts = np.array([[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
                    [0.0, 0.0, 0.5], [0.0, 0.0, -0.5], [1.0, 0.5, 0.25]])
    model = canonicalize(pts)  # size (w, l, h) = (2, 4, 1)
    assert model.size == (2.0, 4.0, 1.0)
    probe = np.array([1.0, 0.5, 0.25])
    cases = [
        # identity: box equals the model, no rotation, at the origin
        (OrientedBox3((0, 0, 0), (2, 4, 1), 0.0), 1.0, probe),
        # pure scale: x by kappa*8/4, y by kappa*3/2, z by kappa*2/1
        (OrientedBox3((0, 0, 0), (3, 8, 2), 0.0), 0.5, np.array([1.0, 0.375, 0.25])),
        # pure rotation by +90 degrees: (x, y) -> (-y, x)
        (OrientedBox3((0, 0, 0), (2, 4, 1), math.pi / 2), 1.0, np.array([-0.5, 1.0, 0.25])),
        # full composition: scale, rotate by 30 degrees, translate
        (OrientedBox3((10.0, -5.0, 1.0), (1.8, 4.4, 1.5), math.pi / 6), 0.82,
         np.array([10.0 + 0.82 * (1.1 * math.cos(math.pi / 6) - 0.45 * math.sin(math.pi / 6)),
                   -5.0 + 0.82 * (1.1 * math.sin(math.pi / 6) + 0.45 * math.cos(math.pi / 6)),
                   1.0 + 0.82 * 0.375])),
    ]
    worst = 0.0
    for box, kappa, expected in cases:
        out = align_cad(model, box, kappa)
        worst = max(worst, float(np.abs(out[-1] - expected).max()))
    ref = align_cad(canonicalize(np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                                          float)), OrientedBox3((10, 0, 0), (4, 4, 4), math.pi / 2), 0.82)[0]
    worst = max(worst, float(np.abs(ref - [10.0, 1.64, 0.0]).max()))
    note(request, f"max error {worst:.1e}")
    assert worst <= 1e-9


# ----------------------------------------------------------------------- 5


@criterion(5)
def test_crop_equivalence(request):
    """Frustum crop vs per-point brute force: 1e4 points x 100 boxes, no disagreement."""
    rng = np.random.default_rng(55)
    pts = np.c_[rng.uniform(-70, 70, (10_000, 2)), rng.uniform(-4, 3, 10_000)]
    mismatches = checked = 0
    boxes = 0
    while boxes < 100:
        d, a = rng.uniform(4, 50), rng.uniform(-math.pi, math.pi)
        box = OrientedBox3((d * math.cos(a), d * math.sin(a), rng.uniform(-2, 1)), rng.uniform(0.8, 5, 3),
                           rng.uniform(-math.pi, math.pi))
        if np.all(np.abs(box.to_local(np.zeros(3)))[:2] <= box.half_extents_xyz[:2]):
            continue
        got = crop_search_area(pts, box).tolist()
        ref = oracles.brute_crop(pts, box)
        mismatches += len(set(got) ^ set(ref))
        checked += len(pts)
        boxes += 1
    note(request, f"{mismatches} disagreements over {checked} point-box pairs")
    assert mismatches == 0


# ----------------------------------------------------------------------- 6


@criterion(6)
def test_iou_validation(request):
    """IoU: analytic cases exact, Monte-Carlo agreement within 0.01 on 100 random pairs."""
    unit = OrientedBox3((5, 0, 0), (1, 1, 1), 0.0)
    analytic = [
        (iou_bev(unit, unit), 1.0),
        (iou_3d(unit, unit), 1.0),
        (iou_bev(unit, OrientedBox3((9, 0, 0), (1, 1, 1), 0.0)), 0.0),
        (iou_bev(unit, OrientedBox3((5.5, 0, 0), (1, 1, 1), 0.0)), 1 / 3),
        (iou_3d(unit, OrientedBox3((5.5, 0, 0), (1, 1, 1), 0.0)), 1 / 3),
        (iou_3d(unit, OrientedBox3((5, 0, 1), (1, 1, 1), 0.0)), 0.0),
        (iou_bev(unit, OrientedBox3((5, 0, 0), (1, 1, 1), math.pi / 4)), 1 / math.sqrt(2)),
    ]
    for got, want in analytic:
        assert got == pytest.approx(want, abs=1e-12)
    rng = np.random.default_rng(66)
    worst = 0.0
    for k in range(100):
        a = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(1, 4, 3), rng.uniform(-math.pi, math.pi))
        b = OrientedBox3(rng.uniform(-1, 1, 3), rng.uniform(1, 4, 3), rng.uniform(-math.pi, math.pi))
        bev = k % 2 == 0
        exact = iou_bev(a, b) if bev else iou_3d(a, b)
        worst = max(worst, abs(exact - oracles.monte_carlo_iou(a, b, 1_000_000, bev=bev, seed=k)))
    note(request, f"max Monte-Carlo gap {worst:.4f}")
    assert worst <= 0.01


# ----------------------------------------------------------------------- 7


def synthetic_set(rng, n_frames=30):
    gts, preds = {}, {}
    for f in range(n_frames):
        fid = f"{f:06d}"
        cars = [OrientedBox3((rng.uniform(5, 60), rng.uniform(-20, 20), -0.9), (1.7, 4.2, 1.5),
                             rng.uniform(-math.pi, math.pi)) for _ in range(int(rng.integers(1, 6)))]
        gts[fid] = [GroundTruth(c) for c in cars]
        frame = []
        for c in cars:
            if rng.random() < 0.8:  # detected, slightly off
                jitter = OrientedBox3(np.asarray(c.center) + rng.normal(0, 0.1, 3), c.size, c.yaw)
                frame.append(Detection(jitter, float(rng.uniform(0.2, 1.0))))
        for _ in range(int(rng.integers(0, 5))):
            ghost = OrientedBox3((rng.uniform(5, 60), rng.uniform(-20, 20), -0.9), (1.7, 4.2, 1.5), 0.0)
            frame.append(Detection(ghost, float(rng.uniform(0.0, 1.0))))
        preds[fid] = frame
    return gts, preds


@criterion(7)
def test_fp_deletion_never_hurts(request):
    """Deleting only false positives never lowers AP or HR-Precision (50 seeded sets)."""
    worse = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        gts, preds = synthetic_set(rng)
        for metric in ("3d", "bev"):
            before = evaluate(preds, gts, metric=metric)
            pruned = {}
            for fid, dets in preds.items():
                flags = match_frame(dets, gts[fid], metric=metric)[0]
                pruned[fid] = [d for d, f in zip(dets, flags) if not (f == FP and rng.random() < 0.6)]
            after = evaluate(pruned, gts, metric=metric)
            assert after.curve.max_recall == before.curve.max_recall
            if after.ap < before.ap - 1e-9 or after.hr_precision < before.hr_precision - 1e-9:
                worse += 1
    note(request, f"{worse} of 100 comparisons got worse")
    assert worse == 0


# ----------------------------------------------------------------------- 8


@criterion(8)
def test_kappa_sweep_monotone(sedan, request):
    """Planar targets: removal count is non-decreasing in kappa over 0.5 ... 1.0."""
    rng = np.random.default_rng(88)
    grid = LidarGrid(az_min=-math.pi / 4, az_max=math.pi / 4, az_step=0.003, el_min=-0.43, el_max=0.06,
                     el_step=0.49 / 63)
    targets = []
    for _ in range(40):  # walls centered behind the box
        scene, box = planar_target(rng.uniform(8, 35), rng.uniform(-0.6, 0.6), rng.uniform(2, 8),
                                   rng.uniform(0.2, 1.6), rng.uniform(0.15, 0.9), rng.uniform(-math.pi, math.pi),
                                   z=GROUND_Z + 0.75, grid=grid)
        targets.append((raycast(scene).points, box))
    for _ in range(80):  # walls whose edge cuts through the silhouette at a varying offset
        d, y, gap = rng.uniform(8, 35), rng.uniform(-3, 3), rng.uniform(2, 8)
        box = OrientedBox3((d, y, GROUND_Z + 0.75), (1.7, 4.2, 1.5), rng.uniform(-math.pi, math.pi))
        edge, side = rng.uniform(0.0, 2.6), rng.choice([-1.0, 1.0])
        x = d + gap
        edge_y = (y + side * edge) * x / d
        wall = Patch("wall", "x", x, (20.0, 5.0), (edge_y + side * 20.0, 0.0))
        targets.append((raycast(Scene([wall], grid)).points, box))
    kappas = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    counts = []
    for k in kappas:
        counts.append(sum(len(filter_detections(Frame("p", pts, [Detection(box)]), sedan, k).removed)
                          for pts, box in targets))
    note(request, "removals " + ", ".join(f"{k:g}:{c}" for k, c in zip(kappas, counts)))
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] > counts[0]  # the sweep actually exercises kappa


# ----------------------------------------------------------------------- 9


@criterion(9)
def test_parser_fidelity(tmp_path, request):
    """Parsers: label write/parse idempotent, velodyne decode exact, calib round trip within 1e-6."""
    rng = np.random.default_rng(99)
    labels = [KittiLabel(rng.choice(["Car", "Van", "Pedestrian"]), float(rng.uniform(0, 1)), int(rng.integers(0, 4)),
                         float(rng.uniform(-3, 3)), tuple(rng.uniform(0, 1200, 4)), tuple(rng.uniform(0.5, 5, 3)),
                         tuple(rng.uniform(-80, 80, 3)), float(rng.uniform(-3, 3)),
                         None if k % 3 == 0 else float(rng.uniform(0, 1))) for k in range(300)]
    first, second = tmp_path / "a.txt", tmp_path / "b.txt"
    write_labels(labels, first)
    parsed = parse_labels(first)
    write_labels(parsed, second)
    assert first.read_bytes() == second.read_bytes()
    assert parse_labels(second) == parsed

    quads = rng.normal(0, 30, size=(5000, 4)).astype("<f4")
    quads[:3] = [[0, 0, 0, 0], [1e-38, -1e38, 3.5, 1.0], [np.inf, -0.0, 1.0, 0.25]]
    path = tmp_path / "scan.bin"
    path.write_bytes(quads.tobytes())
    pts, refl = parse_velodyne(path)
    assert np.array_equal(pts.astype("<f4"), quads[:, :3]) and np.array_equal(refl.astype("<f4"), quads[:, 3])
    assert pts.dtype == np.float64 and len(pts) * 16 == path.stat().st_size

    worst = 0.0
    for _ in range(50):
        calib = CalibrationSet(rng.normal(0, 500, (3, 4)), rng.normal(0, 1, (3, 3)), rng.normal(0, 1, (3, 4)))
        cpath = tmp_path / "calib.txt"
        write_calib(calib, cpath)
        back = parse_calib(cpath)
        for key in ("P2", "R0_rect", "Tr_velo_to_cam"):
            worst = max(worst, float(np.abs(getattr(back, key) - getattr(calib, key)).max()))
    note(request, f"calib max error {worst:.1e}")
    assert worst <= 1e-6


# ---------------------------------------------------------------------- 10


@criterion(10)
def test_throughput(sedan, request):
    """Throughput: one frame of 120,000 points x 120 detections filtered in under 100 ms."""
    grid = LidarGrid()
    base = make_fp_scenario(3, grid=grid)
    extra = [Patch("ground2", "z", GROUND_Z, (80.0, 80.0)), Patch("back", "x", -50.0, (80.0, 10.0)),
             Patch("left", "y", 40.0, (80.0, 10.0)), Patch("right", "y", -40.0, (80.0, 10.0))]
    cloud = raycast(Scene(base.scene.objects + extra, grid)).points
    rng = np.random.default_rng(0)
    pts = cloud[rng.choice(len(cloud), 120_000, replace=len(cloud) < 120_000)]
    dets = []
    for _ in range(120):
        d, a = rng.uniform(6, 60), rng.uniform(-math.pi, math.pi)
        dets.append(Detection(OrientedBox3((d * math.cos(a), d * math.sin(a), -1.0), (1.7, 4.2, 1.5),
                                           rng.uniform(-3, 3)), 0.5))
    frame = Frame("perf", pts, dets)
    filter_detections(frame, sedan)  # warm caches
    times = []
    for _ in range(7):
        start = time.perf_counter()
        filter_detections(frame, sedan)
        times.append(time.perf_counter() - start)
    best, median = min(times), float(np.median(times))
    note(request, f"best {1000 * best:.0f} ms, median {1000 * median:.0f} ms")
    assert median < 0.100
