import csv
import json

import pytest

from rtdetbench import cli, headnum
from rtdetbench.ingest import load_detections, load_ground_truth, load_latency_log
from rtdetbench.matching import EvalConfig, evaluate
from rtdetbench.reference import reference_evaluate
from rtdetbench.rtop import RtopConfig, rtop


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_rtop_defaults(capsys):
    code, out, _ = run(capsys, "rtop", 56.9, 30.0)
    assert code == 0
    assert "rtop  56.9000" in out


def test_rtop_below_realtime(capsys):
    _, out, _ = run(capsys, "rtop", 60.4, 11.2)
    value = float(out.split("rtop")[-1])
    assert value == pytest.approx(39.1, abs=0.1)


def test_rtop_zero_fps(capsys):
    _, out, _ = run(capsys, "rtop", 10, 0)
    assert out.splitlines()[-1] == "rtop  5.0000"


@pytest.mark.parametrize("argv", [["rtop", "abc", "3"], ["rtop", "--", "-1", "3"], ["rtop", "1", "2", "--b", "0"]])
def test_rtop_bad_input(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        if cli.main(argv) == 2:
            raise SystemExit(2)
    assert exc.value.code == 2


def test_rtop_structured(capsys):
    _, out, _ = run(capsys, "rtop", 57.9, 6.7, "--format", "structured")
    data = json.loads(out)
    assert data["rtop"] == rtop(57.9, 6.7).rtop


def test_eval_perfect_detector(capsys, fixtures, tmp_path):
    gt = json.loads((fixtures / "gt_2class.json").read_text())
    dets = [
        {"image_id": a["image_id"], "category_id": a["category_id"], "bbox": a["bbox"], "score": 1.0}
        for a in gt["annotations"] if not a.get("ignore")
    ]
    det_path = tmp_path / "perfect.json"
    det_path.write_text(json.dumps(dets))
    out_path = tmp_path / "report.json"
    code, out, _ = run(capsys, "eval", fixtures / "gt_2class.json", det_path, "--fps", 15, "--out", out_path)
    assert code == 0
    report = json.loads(out_path.read_text())
    r = report["runs"][0]
    assert r["ap"]["map"] == 1.0
    assert r["rtop"]["rtop"] == rtop(100.0, 15.0).rtop
    assert "100.00" in out


def test_eval_missing_file(capsys, fixtures, tmp_path):
    code, _, err = run(capsys, "eval", fixtures / "gt_2class.json", tmp_path / "missing.json")
    assert code == 2
    assert "missing.json" in err and len(err.strip().splitlines()) == 1


def test_eval_bad_detection_names_violation(capsys, fixtures, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"image_id": 10, "category_id": 3, "bbox": [0, 0, 1, 1], "score": 1.5}]))
    code, _, err = run(capsys, "eval", fixtures / "gt_2class.json", bad)
    assert code == 2 and "bad.json" in err and "score" in err


def test_eval_matches_library(capsys, fixtures, tmp_path):
    out_path = tmp_path / "r.json"
    code, _, _ = run(
        capsys, "eval", fixtures / "gt_2class.json", fixtures / "dets_2class.json",
        "--latency", fixtures / "latency.csv", "--out", out_path, "--format", "csv",
    )
    assert code == 0
    report = json.loads(out_path.read_text())
    bundle = load_ground_truth(fixtures / "gt_2class.json")
    run_ = load_detections(fixtures / "dets_2class.json", bundle)
    lib = evaluate(bundle, run_, EvalConfig())
    oracle = reference_evaluate(bundle, run_, EvalConfig())
    got = report["runs"][0]
    assert got["ap"]["map"] == lib.map
    assert got["ap"]["map"] == pytest.approx(oracle["map"], abs=1e-12)
    fps = load_latency_log(fixtures / "latency.csv").fps_mean
    assert got["rtop"]["rtop"] == rtop(100 * lib.map, fps, RtopConfig()).rtop


def test_eval_report_is_reproducible(capsys, fixtures, tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        run(capsys, "eval", fixtures / "gt_2class.json", fixtures / "dets_2class.json", "--fps", 20, "--out", p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_eval_echoed_config_reproduces(capsys, fixtures, tmp_path):
    out_path = tmp_path / "r.json"
    run(capsys, "eval", fixtures / "gt_2class.json", fixtures / "dets_2class.json", "--fps", 20,
        "--iou-thresholds", "0.5,0.75", "--max-dets", 3, "--score-floor", 0.4, "--out", out_path)
    report = json.loads(out_path.read_text())
    echo = report["config"]["eval"]
    cfg = EvalConfig(tuple(echo["iou_thresholds"]), tuple(echo["recall_grid"]), echo["max_dets_per_image"], echo["score_floor"])
    bundle = load_ground_truth(fixtures / "gt_2class.json")
    lib = evaluate(bundle, load_detections(fixtures / "dets_2class.json", bundle), cfg)
    assert report["runs"][0]["ap"]["map"] == lib.map


def test_threshold_range_parsing():
    assert cli.parse_thresholds("0.5:0.05:0.95") == tuple(round(0.5 + 0.05 * i, 10) for i in range(10))
    assert cli.parse_thresholds("0.5,0.75") == (0.5, 0.75)


def test_compare_tju(capsys, fixtures, tmp_path):
    prefix = tmp_path / "scatter"
    code, out, _ = run(capsys, "compare", fixtures / "manifests" / "tju.json", "--plot", prefix, "--format", "structured")
    assert code == 0
    names = [e["run"] for e in json.loads(out)["leaderboard"]]
    assert names == ["LSFM P", "YOLOv3", "FCOS", "LSFM B", "Cascade RCNN"]
    rows = list(csv.DictReader(prefix.with_suffix(".csv").open()))
    assert [r["name"] for r in rows][0] == "Cascade RCNN"
    assert float(rows[0]["fps"]) == 6.7 and float(rows[0]["map"]) == 57.9


def test_compare_svg(capsys, fixtures, tmp_path):
    pytest.importorskip("matplotlib")
    prefix = tmp_path / "fig"
    code, _, _ = run(capsys, "compare", fixtures / "manifests" / "nuimages.json", "--plot", prefix, "--svg")
    assert code == 0
    assert prefix.with_suffix(".svg").read_text().lstrip().startswith("<?xml")


def test_compare_single_and_ties(capsys, tmp_path):
    m = tmp_path / "m.json"
    m.write_text(json.dumps([{"name": "x", "map": 40, "fps": 30}, {"name": "y", "map": 40, "fps": 60}]))
    _, out, _ = run(capsys, "compare", m, "--format", "csv")
    assert [r["run"] for r in csv.DictReader(out.splitlines())] == ["x", "y"]
    single = tmp_path / "s.json"
    single.write_text(json.dumps({"name": "solo", "map": 10, "fps": 5}))
    _, out, _ = run(capsys, "compare", single, "--format", "csv")
    assert len(out.strip().splitlines()) == 2


def test_compare_evaluated_manifest(capsys, fixtures):
    code, out, _ = run(capsys, "compare", fixtures / "manifests" / "evaluated.json", "--format", "structured")
    assert code == 0
    entry = json.loads(out)["leaderboard"][0]
    bundle = load_ground_truth(fixtures / "gt_2class.json")
    lib = evaluate(bundle, load_detections(fixtures / "dets_2class.json", bundle))
    assert entry["p"] == 100 * lib.map
    assert entry["fps"] == pytest.approx(1000 / 30)


def test_compare_csv_manifest(capsys, tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("name,map,fps\nA,50,10\nB,45,30\n")
    _, out, _ = run(capsys, "compare", m, "--format", "csv")
    assert [r["run"] for r in csv.DictReader(out.splitlines())] == ["B", "A"]


@pytest.mark.parametrize(
    "content",
    ['{"name": "x"}', '{"map": 3, "fps": 2}', '[{"name": "x", "map": "high", "fps": 3}]', "not json",
     '{"name": "x", "detections": "d.json", "fps": 3}'],
)
def test_compare_malformed_manifest(capsys, tmp_path, content):
    m = tmp_path / "m.json"
    m.write_text(content)
    code, _, err = run(capsys, "compare", m)
    assert code == 2 and "m.json" in err


def test_curve(capsys, tmp_path):
    out = tmp_path / "curve.csv"
    code, _, _ = run(capsys, "curve", "--b", 2, 4, 8, "--samples", 10, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    for b in ("2", "4", "8"):
        series = [(float(r["fps"]), float(r["w"])) for r in rows if r["b"] == b]
        assert series[0] == (0.0, 1 / float(b))
        assert dict(series)[30.0] == 1.0
        assert all(w == 1.0 for f, w in series if f >= 30)
        assert max(f for f, _ in series) == 45.0


def test_curve_base_one_flat(capsys):
    _, out, _ = run(capsys, "curve", "--b", 1)
    assert {float(r["w"]) for r in csv.DictReader(out.splitlines())} == {1.0}


def test_curve_b4_at_15(capsys):
    _, out, _ = run(capsys, "curve", "--b", 4, "--samples", 31)
    rows = {float(r["fps"]): float(r["w"]) for r in csv.DictReader(out.splitlines())}
    assert rows[15.0] == 0.5


def test_curve_invalid_base(capsys):
    code, _, err = run(capsys, "curve", "--b", 0)
    assert code == 2 and "b must be" in err


def test_curve_svg(capsys, tmp_path):
    pytest.importorskip("matplotlib")
    svg = tmp_path / "w.svg"
    assert run(capsys, "curve", "--svg", svg)[0] == 0
    assert "<svg" in svg.read_text()


def test_summarize(capsys, fixtures):
    code, out, _ = run(capsys, "summarize", fixtures / "gt_small.json", "--format", "structured")
    assert code == 0
    data = json.loads(out)
    assert data["per_class_counts"] == {"car": 3, "pedestrian": 1}
    assert data["resolution_modes"] == [[1280, 720, 2]]
    _, table, _ = run(capsys, "summarize", fixtures / "gt_small.json")
    assert "class:car" in table


def test_summarize_bad_file(capsys, tmp_path):
    p = tmp_path / "gt.json"
    p.write_text("[]")
    assert run(capsys, "summarize", p)[0] == 2


def test_jobs_env_fallback(monkeypatch):
    monkeypatch.setenv("RTDETBENCH_JOBS", "3")
    assert cli._jobs(None) == 3
    assert cli._jobs(2) == 2
    monkeypatch.delenv("RTDETBENCH_JOBS")
    assert cli._jobs(None) == 1


def test_selfcheck_lists_checks(capsys):
    code, out, _ = run(capsys, "selfcheck")
    assert code == 0
    assert sum(line.startswith("PASS") for line in out.splitlines()) >= 5


def test_selfcheck_detects_perturbed_loss(capsys, monkeypatch):
    original = headnum.center_loss

    def skewed(*args, **kwargs):
        total, per = original(*args, **kwargs)
        return total * 1.001, per

    monkeypatch.setattr(headnum, "center_loss", skewed)
    code, out, _ = run(capsys, "selfcheck")
    assert code == 1
    assert "FAIL  center_loss_vs_naive" in out
