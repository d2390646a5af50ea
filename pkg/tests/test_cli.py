import os

import numpy as np
import pytest

from ppcfilter import cli, kitti_io
from ppcfilter.boxes import OrientedBox3
from ppcfilter.kitti_io import CalibrationSet, box_to_label, parse_labels, write_labels
from ppcfilter.synth import make_fp_scenario, write_scenario


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("kitti")
    scenarios = [make_fp_scenario(seed) for seed in range(4)]
    for sc in scenarios:
        write_scenario(sc, root)
    return root, scenarios


def dirs(root):
    return ["--pred", root / "pred", "--velo", root / "velodyne", "--calib", root / "calib"]


def test_filter_removes_spurious(dataset, tmp_path, capsys):
    root, scenarios = dataset
    code, out, err = run(["filter", *dirs(root), "--out", tmp_path / "f"], capsys)
    assert code == 0 and err == ""
    assert "kappa=0.82" in out and "iou_threshold=0.7" in out
    sc = scenarios[0]
    kept = parse_labels(tmp_path / "f" / "000000.txt")
    preds = parse_labels(root / "pred" / "000000.txt")
    true_lines = {p.to_line() for p in preds[:len(sc.gt_boxes)]}
    assert {k.to_line() for k in kept} == true_lines
    log = (tmp_path / "f" / "removed.csv").read_text().splitlines()
    assert log[0].startswith("frame,det_index")
    assert any(line.startswith("000000,") for line in log[1:])


def test_filter_idempotent_and_worker_independent(dataset, tmp_path, capsys):
    root, _ = dataset
    assert run(["filter", *dirs(root), "--out", tmp_path / "a"], capsys)[0] == 0
    assert run(["filter", *dirs(root), "--out", tmp_path / "b", "--workers", 2], capsys)[0] == 0
    for f in sorted(os.listdir(tmp_path / "a")):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    again = ["filter", "--pred", tmp_path / "a", "--velo", root / "velodyne", "--calib", root / "calib",
             "--out", tmp_path / "c"]
    code, out, _ = run(again, capsys)
    assert code == 0 and " removed 0 " in out
    for f in os.listdir(tmp_path / "a"):
        if f.endswith(".txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()


def test_filter_diagnostics(dataset, tmp_path, capsys):
    root, _ = dataset
    code, _, _ = run(["filter", *dirs(root), "--out", tmp_path / "d", "--diagnostics"], capsys)
    assert code == 0
    rows = (tmp_path / "d" / "removed.csv").read_text().splitlines()
    assert rows[0].endswith(",n_penetrated")
    assert all(int(r.split(",")[-1]) >= 1 for r in rows[1:])


def test_empty_prediction_dir(tmp_path, capsys):
    for d in ("pred", "velo", "calib"):
        (tmp_path / d).mkdir()
    code, out, _ = run(["filter", "--pred", tmp_path / "pred", "--velo", tmp_path / "velo",
                        "--calib", tmp_path / "calib", "--out", tmp_path / "out"], capsys)
    assert code == 0 and "frames 0" in out
    assert [f for f in os.listdir(tmp_path / "out") if f.endswith(".txt")] == []


def test_frame_mismatch(dataset, tmp_path, capsys):
    root, _ = dataset
    velo = tmp_path / "velo"
    velo.mkdir()
    for f in os.listdir(root / "velodyne"):
        if f != "000002.bin":
            (velo / f).write_bytes((root / "velodyne" / f).read_bytes())
    code, out, err = run(["filter", "--pred", root / "pred", "--velo", velo, "--calib", root / "calib",
                          "--out", tmp_path / "o"], capsys)
    assert code == 2 and "000002" in err and out == ""


def test_parse_failure(dataset, tmp_path, capsys):
    root, _ = dataset
    pred = tmp_path / "pred"
    pred.mkdir()
    (pred / "000000.txt").write_text("Car 0 0\n")
    code, out, err = run(["filter", "--pred", pred, "--velo", root / "velodyne", "--calib", root / "calib",
                          "--out", tmp_path / "o"], capsys)
    assert code == 3 and "000000.txt:1:" in err and out == ""


def test_bad_kappa(dataset, tmp_path, capsys):
    root, _ = dataset
    with pytest.raises(SystemExit) as exc:
        cli.main(["filter", *map(str, dirs(root)), "--out", str(tmp_path), "--kappa", "1.5"])
    assert exc.value.code == 2


def test_missing_directory(tmp_path, capsys):
    code, _, err = run(["filter", "--pred", tmp_path / "nope", "--velo", tmp_path, "--calib", tmp_path,
                        "--out", tmp_path / "o"], capsys)
    assert code == 1 and "nope" in err


def test_eval_before_after(dataset, tmp_path, capsys):
    root, _ = dataset
    code, out, err = run(["eval", *dirs(root), "--label", root / "label_2", "--out", tmp_path / "e"], capsys)
    assert code == 0, err
    assert "before" in out and "after" in out and "FP-change%" in out
    assert (tmp_path / "e" / "after_3d_moderate.csv").exists()
    assert (tmp_path / "e" / "report.txt").read_text() == out


def labelled_frame(root, gt_boxes, pred_boxes, scores):
    calib = CalibrationSet.ideal()
    for sub in ("label_2", "pred"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_labels([box_to_label(b, calib) for b in gt_boxes], root / "label_2" / "000000.txt")
    write_labels([box_to_label(b, calib, score=s) for b, s in zip(pred_boxes, scores)],
                 root / "pred" / "000000.txt")


def car(x, y):
    return OrientedBox3((x, y, -0.98), (1.6, 3.9, 1.5), 0.0)


def eval_ap(root, capsys):
    code, out, err = run(["eval", "--pred", root / "pred", "--label", root / "label_2",
                          "--metric", "3d", "--difficulty", "moderate"], capsys)
    assert code == 0, err
    row = [line for line in out.splitlines() if line.strip().startswith("before")][0]
    return float(row.split()[3])


def test_eval_perfect_empty_and_hand(tmp_path, capsys):
    gts = [car(12, -4), car(15, 0), car(18, 4), car(22, -2)]
    labelled_frame(tmp_path / "perfect", gts, gts, [0.9, 0.8, 0.7, 0.6])
    assert eval_ap(tmp_path / "perfect", capsys) == 100.0
    labelled_frame(tmp_path / "empty", gts, [], [])
    assert eval_ap(tmp_path / "empty", capsys) == 0.0
    # TP, FP, TP, TP, FP, TP by descending score
    ghosts = [car(14, 6), car(25, 5)]
    preds = [gts[0], ghosts[0], gts[1], gts[2], ghosts[1], gts[3]]
    labelled_frame(tmp_path / "hand", gts, preds, [0.9, 0.8, 0.7, 0.6, 0.5, 0.4])
    assert eval_ap(tmp_path / "hand", capsys) == pytest.approx(79.17, abs=0.005)


def test_eval_zero_ground_truths(tmp_path, capsys):
    labelled_frame(tmp_path, [], [car(15, 0)], [0.5])
    code, out, err = run(["eval", "--pred", tmp_path / "pred", "--label", tmp_path / "label_2"], capsys)
    assert code == 4 and "no ground truths" in err and out == ""


def test_eval_filtered_dir(dataset, tmp_path, capsys):
    root, _ = dataset
    run(["filter", *dirs(root), "--out", tmp_path / "f"], capsys)
    code, out, _ = run(["eval", "--pred", root / "pred", "--label", root / "label_2",
                        "--filtered", tmp_path / "f"], capsys)
    code2, out2, _ = run(["eval", *dirs(root), "--label", root / "label_2"], capsys)
    assert code == code2 == 0 and out == out2


def test_split_file(dataset, tmp_path, capsys):
    root, _ = dataset
    split = tmp_path / "val.txt"
    split.write_text("000001\n000003\n")
    code, out, _ = run(["filter", *dirs(root), "--split", split, "--out", tmp_path / "f"], capsys)
    assert code == 0 and "frames 2" in out
    assert sorted(f for f in os.listdir(tmp_path / "f") if f.endswith(".txt")) == ["000001.txt", "000003.txt"]
    split.write_text("000009\n")
    assert run(["filter", *dirs(root), "--split", split, "--out", tmp_path / "g"], capsys)[0] == 2


def test_sweep(dataset, tmp_path, capsys):
    root, _ = dataset
    code, out, err = run(["sweep", *dirs(root), "--label", root / "label_2", "--kappa", "0.5,0.82,1.0",
                          "--metric", "3d", "--difficulty", "moderate", "--out", tmp_path / "s"], capsys)
    assert code == 0 and err == ""
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 4
    removed = [int(r.split(",")[3]) for r in rows[1:]]
    assert removed == sorted(removed)
    dat = np.loadtxt(tmp_path / "s" / "sweep.dat")
    assert dat.shape == (3, 2) and dat[:, 0].tolist() == [0.5, 0.82, 1.0]


def test_sweep_usage(dataset, tmp_path, capsys):
    root, _ = dataset
    base = ["sweep", *map(str, dirs(root)), "--label", str(root / "label_2")]
    with pytest.raises(SystemExit) as exc:
        cli.main(base + ["--kappa", "0.82"])
    assert exc.value.code == 2
    code, out, err = run(base + ["--kappa", "0.82", "--kappa", "0.82,1.0", "--metric", "bev",
                                 "--difficulty", "hard"], capsys)
    assert code == 0 and "duplicate" in err
    assert len([r for r in out.splitlines() if r[:1].isdigit()]) == 2


def test_synth_determinism(tmp_path, capsys):
    assert run(["synth", "--out", tmp_path / "a", "--seed", 5, "--frames", 2], capsys)[0] == 0
    assert run(["synth", "--out", tmp_path / "b", "--seed", 5, "--frames", 2], capsys)[0] == 0
    for sub in ("velodyne", "label_2", "calib", "pred"):
        names = sorted(os.listdir(tmp_path / "a" / sub))
        assert names == ["000005" + names[0][6:], "000006" + names[0][6:]]
        for f in names:
            assert (tmp_path / "a" / sub / f).read_bytes() == (tmp_path / "b" / sub / f).read_bytes()


def test_synth_scene_files(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\nlidar az_min=-0.5 az_max=0.5\n")
    code, out, _ = run(["synth", "--scene", empty, "--out", tmp_path / "e"], capsys)
    assert code == 0
    assert (tmp_path / "e" / "velodyne" / "000000.bin").read_bytes() == b""
    assert (tmp_path / "e" / "label_2" / "000000.txt").read_text() == ""
    wall = tmp_path / "wall.txt"
    wall.write_text("lidar az_min=-0.5 az_max=0.5 az_step=0.01\nwall axis=x offset=20 extent=3 extent2=1\n")
    assert run(["synth", "--scene", wall, "--out", tmp_path / "w"], capsys)[0] == 0
    pts, _ = kitti_io.parse_velodyne(tmp_path / "w" / "velodyne" / "000000.bin")
    assert len(pts) > 0 and np.allclose(pts[:, 0], 20.0, atol=1e-5)
    bad = tmp_path / "bad.txt"
    bad.write_text("wall axis=x\n")
    code, out, err = run(["synth", "--scene", bad, "--out", tmp_path / "b"], capsys)
    assert code == 3 and "line 1" in err
