"""Directory-level workflows: load KITTI frames, filter them, evaluate them."""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cad as cadmod
from . import evaluation, kitti_io
from .boxes import Detection, Frame
from .classifier import filter_detections
from .errors import PPCError

log = logging.getLogger(__name__)


class FrameMismatchError(PPCError):
    def __init__(self, frame_id, where):
        super().__init__(f"frame {frame_id} has no file in {where}")
        self.frame_id = frame_id


def load_cad_model(path=None, num_points=cadmod.DEFAULT_NUM_POINTS):
    """The CAD file at ``path`` (or the built-in sedan), downsampled."""
    model = cadmod.default_sedan() if path is None else cadmod.canonicalize(cadmod.load_cad(path))
    return cadmod.downsample(model, num_points)


def label_to_detection(label, calib):
    return Detection(kitti_io.camera_to_lidar_box(label, calib),
                     label.score if label.score is not None else 1.0, label.type, label.bbox)


_EVAL_CALIB = kitti_io.CalibrationSet.ideal()


def label_to_ground_truth(label):
    # IoU is invariant under the rigid camera->LiDAR map, so any proper calibration will do
    box = None
    if not label.is_dontcare and min(label.dimensions) > 0:
        box = kitti_io.camera_to_lidar_box(label, _EVAL_CALIB)
    return evaluation.GroundTruth(box, kitti_io.assign_difficulty(label), label.type, label.bbox)


def eval_detection(label):
    return Detection(kitti_io.camera_to_lidar_box(label, _EVAL_CALIB),
                     label.score if label.score is not None else 1.0, label.type, label.bbox)


def check_frames(ids, directory, suffix):
    for fid in ids:
        if not os.path.exists(os.path.join(directory, fid + suffix)):
            raise FrameMismatchError(fid, directory)


@dataclass
class FrameInput:
    frame_id: str
    labels: list  # prediction labels as read
    frame: Frame


def load_frame(frame_id, pred_dir, velo_dir, calib_dir):
    labels = kitti_io.parse_labels(os.path.join(pred_dir, frame_id + ".txt"))
    points, _ = kitti_io.parse_velodyne(os.path.join(velo_dir, frame_id + ".bin"))
    calib = kitti_io.parse_calib(os.path.join(calib_dir, frame_id + ".txt"))
    dets = [label_to_detection(lb, calib) for lb in labels]
    return FrameInput(frame_id, labels, Frame(frame_id, points, dets))


@dataclass
class FrameResult:
    frame_id: str
    kept_labels: list
    removals: list  # (det_index, label, Removal)
    errors: list
    points: np.ndarray


def filter_frame(inp, model, kappa, diagnostics=False, scan=None):
    out = filter_detections(inp.frame, model, kappa, diagnostics=diagnostics, scan=scan)
    kept = [inp.labels[i] for i in out.kept]
    removals = [(r.det_index, inp.labels[r.det_index], r) for r in out.removed]
    return FrameResult(inp.frame_id, kept, removals, out.errors, inp.frame.points)


def _filter_task(args):
    frame_id, pred_dir, velo_dir, calib_dir, model, kappa, diagnostics = args
    inp = load_frame(frame_id, pred_dir, velo_dir, calib_dir)
    return filter_frame(inp, model, kappa, diagnostics)


def run_filter(ids, pred_dir, velo_dir, calib_dir, model, kappa=cadmod.DEFAULT_KAPPA,
               workers=1, diagnostics=False):
    """Filter the prediction files of ``ids``; returns :class:`FrameResult` in id order.

    Frames are independent, so the result does not depend on ``workers``.
    """
    check_frames(ids, pred_dir, ".txt")
    check_frames(ids, velo_dir, ".bin")
    check_frames(ids, calib_dir, ".txt")
    tasks = [(fid, pred_dir, velo_dir, calib_dir, model, kappa, diagnostics) for fid in ids]
    if workers <= 1 or len(tasks) <= 1:
        return [_filter_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_filter_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def write_filter_outputs(results, out_dir, diagnostics=False):
    """Write kept predictions per frame and a removal log; returns totals."""
    os.makedirs(out_dir, exist_ok=True)
    n_frames = n_boxes = n_removed = 0
    rows = ["frame,det_index,type,score,cx,cy,cz,point_index,px,py,pz,rho,t,cad_index"
            + (",n_penetrated" if diagnostics else "")]
    for res in results:
        kitti_io.write_labels(res.kept_labels, os.path.join(out_dir, res.frame_id + ".txt"))
        n_frames += 1
        n_boxes += len(res.kept_labels) + len(res.removals)
        n_removed += len(res.removals)
        for i, msg in res.errors:
            log.warning("frame %s box %d kept unchecked: %s", res.frame_id, i, msg)
        for i, label, r in res.removals:
            p = res.points[r.point_index]
            c = r.detection.box.center
            row = (f"{res.frame_id},{i},{label.type},{label.score if label.score is not None else ''},"
                   f"{c[0]:.3f},{c[1]:.3f},{c[2]:.3f},{r.point_index},{p[0]:.3f},{p[1]:.3f},{p[2]:.3f},"
                   f"{r.rho:.6f},{r.t:.6f},{r.cad_index}")
            if diagnostics:
                row += f",{len(r.all_points)}"
            rows.append(row)
    kitti_io.atomic_write_text(os.path.join(out_dir, "removed.csv"), "\n".join(rows) + "\n")
    return n_frames, n_boxes, n_removed


def load_ground_truths(label_dir, ids=None):
    ids = kitti_io.frame_ids(label_dir, ".txt") if ids is None else ids
    return {fid: [label_to_ground_truth(lb) for lb in kitti_io.parse_labels(os.path.join(label_dir, fid + ".txt"))]
            for fid in ids}


def load_predictions(pred_dir, ids):
    out = {}
    for fid in ids:
        path = os.path.join(pred_dir, fid + ".txt")
        out[fid] = [eval_detection(lb) for lb in kitti_io.parse_labels(path)] if os.path.exists(path) else []
    return out


def predictions_from_labels(labels_by_frame):
    return {fid: [eval_detection(lb) for lb in labels] for fid, labels in labels_by_frame.items()}
