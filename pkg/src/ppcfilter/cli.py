"""Command-line entry point.

Exit codes::

    0  success
    1  I/O failure (missing directory, unreadable file)
    2  usage error or frame-id mismatch between input directories
    3  parse failure in a label, velodyne, calib, CAD or scene file
    4  zero ground truths at the selected difficulty (recall undefined)

The report goes to stdout; warnings and progress go to stderr.
"""

import argparse
import logging
import os
import sys

from . import __version__, evaluation, kitti_io, pipeline, synth
from .cad import DEFAULT_KAPPA
from .classifier import filter_detections
from .errors import (
    CadFormatError,
    DegenerateModelError,
    InsufficientModelError,
    KittiFormatError,
    MissingCalibrationError,
    InvalidCalibrationError,
    SceneFormatError,
    TruncatedFileError,
    UndefinedRecallError,
)
from .search_area import SortedScan

log = logging.getLogger("ppcfilter")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PARSE, EXIT_NO_GT = 0, 1, 2, 3, 4

PARSE_ERRORS = (KittiFormatError, TruncatedFileError, MissingCalibrationError, InvalidCalibrationError,
                CadFormatError, InsufficientModelError, DegenerateModelError, SceneFormatError)


class UsageError(Exception):
    pass


def _kappa(text):
    try:
        k = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < k <= 1.0:
        raise argparse.ArgumentTypeError(f"kappa must lie in (0, 1], got {k}")
    return k


def _kappa_list(text):
    return [_kappa(t) for t in text.split(",") if t.strip()]


def _add_common(p, need=("pred",)):
    for name in ("pred", "label", "velo", "calib"):
        helps = {"pred": "prediction label directory (KITTI format with scores)",
                 "label": "ground-truth label directory",
                 "velo": "velodyne .bin directory",
                 "calib": "calibration directory"}
        p.add_argument(f"--{name}", required=name in need, help=helps[name])
    p.add_argument("--cad", help="CAD point file (x y z per line); default is the built-in sedan")
    p.add_argument("--split", help="file listing the frame ids to use, one per line")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")


def _add_eval_opts(p):
    p.add_argument("--difficulty", action="append", choices=["moderate", "hard"],
                   help="difficulty level; repeat for several (default: both)")
    p.add_argument("--metric", action="append", choices=list(evaluation.METRICS),
                   help="3d or bev; repeat for both (default: both)")


def build_parser():
    parser = argparse.ArgumentParser(prog="ppcfilter", description="Remove physically impossible "
                                     "LiDAR detections and evaluate the effect.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="filter prediction files")
    _add_common(p, need=("pred", "velo", "calib"))
    p.add_argument("--kappa", type=_kappa, default=DEFAULT_KAPPA, help=f"CAD size ratio (default {DEFAULT_KAPPA})")
    p.add_argument("--diagnostics", action="store_true", help="count every penetrated point per removed box")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="evaluate predictions before and after filtering")
    _add_common(p, need=("pred", "label"))
    p.add_argument("--filtered", help="already filtered prediction directory")
    p.add_argument("--kappa", type=_kappa, default=DEFAULT_KAPPA,
                   help=f"CAD size ratio when filtering here (default {DEFAULT_KAPPA})")
    p.add_argument("--diagnostics", action="store_true", help="count every penetrated point per removed box")
    _add_eval_opts(p)
    p.add_argument("--out", help="directory for report files")

    p = sub.add_parser("sweep", help="HR-Precision as a function of kappa")
    _add_common(p, need=("pred", "label", "velo", "calib"))
    p.add_argument("--kappa", type=_kappa_list, action="extend", required=True,
                   help="comma-separated kappa values; may be repeated")
    _add_eval_opts(p)
    p.add_argument("--out", help="directory for sweep.csv and sweep.dat")

    p = sub.add_parser("synth", help="write synthetic KITTI-format frames")
    p.add_argument("--scene", help="scene description file; without it random street scenes are made")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=1, help="number of random scenes (ignored with --scene)")
    p.add_argument("--out", required=True)
    return parser


# ----------------------------------------------------------------- helpers


def _read_split(path):
    with open(path) as fh:
        ids = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    return sorted(dict.fromkeys(ids))


def _check_dir(path, what):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"{what} directory not found: {path}")


def _difficulties(args):
    names = args.difficulty or ["moderate", "hard"]
    return [kitti_io.Difficulty.parse(n) for n in dict.fromkeys(names)]


def _metrics(args):
    return list(dict.fromkeys(args.metric or list(evaluation.METRICS)))


def _header(kappa):
    ks = ", ".join(f"{k:g}" for k in kappa) if isinstance(kappa, (list, tuple)) else f"{kappa:g}"
    return f"# ppcfilter {__version__}  kappa={ks}  iou_threshold={evaluation.DEFAULT_IOU_THRESHOLD:g}\n"


def _pred_ids(args):
    _check_dir(args.pred, "prediction")
    if args.split:
        return _read_split(args.split)
    return kitti_io.frame_ids(args.pred, ".txt")


def _eval_ids(args):
    """Frames to evaluate: the split, or every label file."""
    _check_dir(args.label, "label")
    _check_dir(args.pred, "prediction")
    ids = _read_split(args.split) if args.split else kitti_io.frame_ids(args.label, ".txt")
    pipeline.check_frames(ids, args.label, ".txt")
    if not args.split:
        extra = sorted(set(kitti_io.frame_ids(args.pred, ".txt")) - set(ids))
        if extra:
            log.warning("%d prediction files have no label file and are ignored (first: %s)",
                        len(extra), extra[0])
    with_preds = [fid for fid in ids if os.path.exists(os.path.join(args.pred, fid + ".txt"))]
    return ids, with_preds


def _filter_results(args, ids, kappa, model):
    for d, what in ((args.velo, "velodyne"), (args.calib, "calibration")):
        _check_dir(d, what)
    return pipeline.run_filter(ids, args.pred, args.velo, args.calib, model, kappa,
                               args.workers, getattr(args, "diagnostics", False))


def _evaluate_runs(runs, gts, difficulties, metrics):
    """``runs`` maps a name to predictions by frame; returns [(name, report)]."""
    rows = []
    for metric in metrics:
        for diff in difficulties:
            for name, preds in runs.items():
                rows.append((name, evaluation.evaluate(preds, gts, diff, metric)))
    return rows


def _decrement_table(rows):
    by_key = {}
    for name, rep in rows:
        by_key.setdefault((rep.metric, rep.difficulty), {})[name] = rep
    lines = ["metric  difficulty  FP-before  FP-after  FP-change%  TP-before  TP-after  TP-change%"]
    for (metric, diff), reps in by_key.items():
        if "before" in reps and "after" in reps:
            s = evaluation.fp_tp_sums(reps["before"], reps["after"])
            lines.append(f"{metric:>6}  {diff.name.lower():>10}  {s['fp_before']:>9}  {s['fp_after']:>8}  "
                         f"{s['fp_change_pct']:>10.2f}  {s['tp_before']:>9}  {s['tp_after']:>8}  "
                         f"{s['tp_change_pct']:>10.2f}")
    return "\n".join(lines) + "\n" if len(lines) > 1 else ""


# ----------------------------------------------------------------- commands


def cmd_filter(args):
    ids = _pred_ids(args)
    model = pipeline.load_cad_model(args.cad)
    results = _filter_results(args, ids, args.kappa, model)
    n_frames, n_boxes, n_removed = pipeline.write_filter_outputs(results, args.out, args.diagnostics)
    sys.stdout.write(_header(args.kappa))
    sys.stdout.write(f"frames {n_frames}  boxes {n_boxes}  removed {n_removed}  kept {n_boxes - n_removed}\n")
    return EXIT_OK


def cmd_eval(args):
    ids, with_preds = _eval_ids(args)
    gts = pipeline.load_ground_truths(args.label, ids)
    runs = {"before": pipeline.load_predictions(args.pred, ids)}
    if args.filtered:
        _check_dir(args.filtered, "filtered prediction")
        runs["after"] = pipeline.load_predictions(args.filtered, ids)
    elif args.velo or args.calib:
        if not (args.velo and args.calib):
            raise UsageError("filtering during eval needs both --velo and --calib")
        results = _filter_results(args, with_preds, args.kappa, pipeline.load_cad_model(args.cad))
        kept = {fid: [] for fid in ids}
        kept.update({r.frame_id: r.kept_labels for r in results})
        runs["after"] = pipeline.predictions_from_labels(kept)
    rows = _evaluate_runs(runs, gts, _difficulties(args), _metrics(args))
    text = _header(args.kappa) + evaluation.format_reports(rows) + _decrement_table(rows)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for name, rep in rows:
            evaluation.write_curve_csv(rep, os.path.join(
                args.out, f"{name}_{rep.metric}_{rep.difficulty.name.lower()}.csv"))
        kitti_io.atomic_write_text(os.path.join(args.out, "report.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args):
    kappas = list(dict.fromkeys(args.kappa))
    if len(kappas) < len(args.kappa):
        log.warning("duplicate kappa values dropped: %d left", len(kappas))
    if len(kappas) < 2:
        raise UsageError("sweep needs at least two distinct kappa values")
    kappas.sort()
    ids, with_preds = _eval_ids(args)
    for d, what in ((args.velo, "velodyne"), (args.calib, "calibration")):
        _check_dir(d, what)
    gts = pipeline.load_ground_truths(args.label, ids)
    pipeline.check_frames(with_preds, args.velo, ".bin")
    pipeline.check_frames(with_preds, args.calib, ".txt")
    model = pipeline.load_cad_model(args.cad)
    frames = [pipeline.load_frame(fid, args.pred, args.velo, args.calib) for fid in with_preds]
    scans = [SortedScan(f.frame.points) for f in frames]  # the scan does not depend on kappa
    difficulties, metrics = _difficulties(args), _metrics(args)
    table = []
    for k in kappas:
        removed = 0
        kept = {fid: [] for fid in gts}
        for inp, scan in zip(frames, scans):
            out = filter_detections(inp.frame, model, k, scan=scan)
            removed += len(out.removed)
            kept[inp.frame_id] = [inp.labels[i] for i in out.kept]
        preds = pipeline.predictions_from_labels(kept)
        for metric in metrics:
            for diff in difficulties:
                rep = evaluation.evaluate(preds, gts, diff, metric)
                table.append((k, metric, diff.name.lower(), removed, rep))
    lines = ["kappa,metric,difficulty,removed,hr_precision,hr_recall,max_recall,ap"]
    for k, metric, diff, removed, rep in table:
        hrp = "" if rep.hr_precision != rep.hr_precision else f"{rep.hr_precision:.4f}"
        # every rate in percent, as in the eval report
        lines.append(f"{k:g},{metric},{diff},{removed},{hrp},{100 * rep.hr_recall:.4f},"
                     f"{100 * rep.curve.max_recall:.4f},{rep.ap:.4f}")
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        kitti_io.atomic_write_text(os.path.join(args.out, "sweep.csv"), csv_text)
        # two-column series for plotting: first metric/difficulty pair
        first = (metrics[0], difficulties[0].name.lower())
        dat = [f"# kappa hr_precision ({first[0]}, {first[1]})"]
        dat += [f"{k:g} {rep.hr_precision:.4f}" for k, m, d, _, rep in table if (m, d) == first]
        kitti_io.atomic_write_text(os.path.join(args.out, "sweep.dat"), "\n".join(dat) + "\n")
    sys.stdout.write(_header(kappas) + csv_text)
    return EXIT_OK


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    written = []
    if args.scene:
        scene = synth.parse_scene(args.scene)
        cast = synth.raycast(scene)
        fid = f"{args.seed:06d}"
        synth.write_frame(args.out, fid, cast.points, scene.cars, scene.detections)
        written.append((fid, len(cast.points), len(scene.cars), len(scene.detections)))
    else:
        if args.frames < 1:
            raise UsageError("--frames must be at least 1")
        for seed in range(args.seed, args.seed + args.frames):
            sc = synth.make_fp_scenario(seed)
            fid = synth.write_scenario(sc, args.out)
            written.append((fid, len(sc.cast.points), len(sc.gt_boxes), len(sc.detections)))
    for fid, n_pts, n_cars, n_dets in written:
        sys.stdout.write(f"{fid}  points {n_pts}  cars {n_cars}  detections {n_dets}\n")
    return EXIT_OK


COMMANDS = {"filter": cmd_filter, "eval": cmd_eval, "sweep": cmd_sweep, "synth": cmd_synth}


def _setup_logging(verbose):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("ppcfilter: %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except pipeline.FrameMismatchError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except PARSE_ERRORS as exc:
        log.error("parse failure: %s", exc)
        return EXIT_PARSE
    except UndefinedRecallError as exc:
        log.error("%s", exc)
        return EXIT_NO_GT
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
