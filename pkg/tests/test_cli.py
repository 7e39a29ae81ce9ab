import json

import numpy as np
import pytest

from conftest import HAND_EXPECTED
from daponet.cli import main
from daponet.imageio import write_ppm


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_summary_text_and_json(capsys, tmp_path):
    code, out, _ = run(capsys, "summary", "--preset", "svrdd-n", "--mode", "deploy")
    assert code == 0 and "total (deploy)" in out
    code, out, _ = run(capsys, "summary", "--json", "--out", tmp_path / "s.json")
    rep = json.loads(out)
    assert code == 0 and 1.28e6 <= rep["params"] <= 1.92e6 and 1.36e9 <= rep["flops"] <= 2.04e9
    assert json.loads((tmp_path / "s.json").read_text()) == rep


def test_summary_ablation_and_scaling(capsys):
    def totals(*flags):
        return json.loads(run(capsys, "summary", "--json", *flags)[1])

    base = totals()
    off = totals("--no-cpda", "--no-mcd")
    assert off["params"] > base["params"] and off["flops"] > base["flops"]
    small = totals("--imgsz", "320")
    assert abs(small["flops"] / base["flops"] - 0.25) <= 0.05 * 0.25


def test_validation_errors_exit_one(capsys):
    assert run(capsys, "summary", "--imgsz", "100")[0] == 1
    assert run(capsys, "summary", "--mode", "fast")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "bench", "--iters", "0")[0] == 1


def test_check_passes_and_reports(capsys, tmp_path):
    code, out, _ = run(capsys, "check", "--json", tmp_path / "r.json")
    rep = json.loads((tmp_path / "r.json").read_text())
    assert code == 0 and rep["passed"]
    assert len(rep["checks"]) >= 12
    assert {"name", "status", "measured", "tolerance"} <= set(rep["checks"][0])
    assert "FAIL" not in out


def test_check_with_injected_fault_fails(capsys, tmp_path):
    code, out, _ = run(capsys, "check", "--inject-fault", "--json", tmp_path / "r.json")
    rep = json.loads((tmp_path / "r.json").read_text())
    failed = {c["name"] for c in rep["checks"] if c["status"] == "fail"}
    assert code == 2 and {"doconv_fold_float32", "doconv_fold_float64"} <= failed


def test_inject_fault_hidden_from_help(capsys):
    assert main(["check", "--help"]) == 0
    assert "inject" not in capsys.readouterr().out


@pytest.fixture
def tiny_weights(tmp_path, capsys):
    p = tmp_path / "tiny.dapw"
    assert run(capsys, "init-weights", "--preset", "tiny", "--seed", "0", "--out", p)[0] == 0
    return p


def test_init_weights_deterministic(tmp_path, capsys, tiny_weights):
    q = tmp_path / "again.dapw"
    run(capsys, "init-weights", "--preset", "tiny", "--seed", "0", "--out", q)
    assert tiny_weights.read_bytes() == q.read_bytes()
    r = tmp_path / "other.dapw"
    run(capsys, "init-weights", "--preset", "tiny", "--seed", "1", "--out", r)
    assert r.read_bytes() != q.read_bytes()


def test_init_weights_missing_dir(tmp_path, capsys):
    assert run(capsys, "init-weights", "--out", tmp_path / "no" / "w.dapw")[0] == 3


def _image(tmp_path, h=48, w=80):
    p = tmp_path / "img.ppm"
    write_ppm(p, np.random.default_rng(0).integers(0, 256, (h, w, 3), dtype=np.uint8))
    return p


def test_infer_deterministic_bounded_sorted(tmp_path, capsys, tiny_weights):
    img = _image(tmp_path)
    outs = []
    for name in ("d1.json", "d2.json"):
        code, _, _ = run(capsys, "infer", "--weights", tiny_weights, "--image", img,
                         "--conf", "0.0005", "--out-json", tmp_path / name,
                         "--out-image", tmp_path / "ann.ppm")
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    dets = json.loads(outs[0])
    assert dets, "low threshold should keep some boxes"
    assert [d["score"] for d in dets] == sorted((d["score"] for d in dets), reverse=True)
    for d in dets:
        x1, y1, x2, y2 = d["box"]
        assert 0 <= x1 <= x2 <= 80 and 0 <= y1 <= y2 <= 48
        assert set(d) == {"box", "class", "class_name", "score"}
    assert (tmp_path / "ann.ppm").read_bytes()[:2] == b"P6"


def test_infer_high_threshold_valid_json(tmp_path, capsys, tiny_weights):
    code, out, _ = run(capsys, "infer", "--weights", tiny_weights, "--image", _image(tmp_path),
                       "--conf", "0.99")
    assert code == 0 and isinstance(json.loads(out), list)


def test_infer_error_codes(tmp_path, capsys, tiny_weights):
    img = _image(tmp_path)
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n4 4\n255\n" + b"\0" * 7)
    assert run(capsys, "infer", "--weights", tiny_weights, "--image", bad)[0] == 3
    assert run(capsys, "infer", "--weights", tiny_weights, "--image", tmp_path / "none.ppm")[0] == 3
    # architecture flags that disagree with the stored weights
    assert run(capsys, "infer", "--weights", tiny_weights, "--image", img, "--no-mcd")[0] == 1
    junk = tmp_path / "junk.dapw"
    junk.write_bytes(b"nope")
    assert run(capsys, "infer", "--weights", junk, "--image", img)[0] == 3
    out = tmp_path / "should_not_exist.json"
    run(capsys, "infer", "--weights", tiny_weights, "--image", bad, "--out-json", out)
    assert not out.exists()


def test_eval_self_evaluation(capsys, hand_fixture):
    root, imgs, ann, _ = hand_fixture
    code, _, _ = run(capsys, "eval", "--annotations", ann, "--gt-as-pred", "--out", root / "e.json")
    rep = json.loads((root / "e.json").read_text())
    assert code == 0 and rep["map50"] == 1.0 and rep["map50_95"] == 1.0


def test_eval_hand_fixture(capsys, hand_fixture):
    root, imgs, ann, pred = hand_fixture
    code, out, _ = run(capsys, "eval", "--annotations", ann, "--images", imgs,
                       "--predictions", pred, "--out", root / "e.json")
    rep = json.loads((root / "e.json").read_text())
    assert code == 0 and "mAP50" in out
    for k, v in HAND_EXPECTED.items():
        assert abs(rep[k] - v) <= 1e-6


def test_eval_empty_predictions(capsys, hand_fixture):
    root, _, ann, _ = hand_fixture
    (root / "empty.json").write_text("{}")
    run(capsys, "eval", "--annotations", ann, "--predictions", root / "empty.json",
        "--out", root / "e.json")
    assert json.loads((root / "e.json").read_text())["recall"] == 0.0


def test_eval_with_weights(capsys, hand_fixture, tiny_weights):
    root, imgs, ann, _ = hand_fixture
    code, _, _ = run(capsys, "eval", "--annotations", ann, "--images", imgs,
                     "--weights", tiny_weights, "--out", root / "e.json")
    rep = json.loads((root / "e.json").read_text())
    assert code == 0 and 0 <= rep["map50_95"] <= rep["map50"] <= 1


def test_eval_missing_images_enumerated(capsys, hand_fixture):
    root, imgs, ann, pred = hand_fixture
    (imgs / "a.ppm").unlink()
    (imgs / "c.ppm").unlink()
    code, _, err = run(capsys, "eval", "--annotations", ann, "--images", imgs,
                       "--predictions", pred, "--out", root / "e.json")
    assert code == 3 and "a.ppm" in err and "c.ppm" in err and "2 image" in err
    assert not (root / "e.json").exists()


def test_eval_source_flags_exclusive(capsys, hand_fixture):
    _, _, ann, pred = hand_fixture
    assert run(capsys, "eval", "--annotations", ann)[0] == 1
    assert run(capsys, "eval", "--annotations", ann, "--gt-as-pred", "--predictions", pred)[0] == 1


def test_eval_unknown_prediction_id(capsys, hand_fixture):
    root, _, ann, _ = hand_fixture
    (root / "p.json").write_text(json.dumps({"zzz": []}))
    assert run(capsys, "eval", "--annotations", ann, "--predictions", root / "p.json")[0] == 1


def test_bench_single_iteration(capsys):
    code, out, _ = run(capsys, "bench", "--preset", "tiny", "--iters", "1", "--warmup", "0")
    s = json.loads(out)
    assert code == 0 and s["mean_ms"] == s["p50_ms"] == s["p95_ms"]


def test_bench_order_stats_and_size_monotonic(capsys):
    def mean(size):
        s = json.loads(run(capsys, "bench", "--imgsz", size, "--iters", "3")[1])
        assert s["p50_ms"] <= s["p95_ms"]
        return s["mean_ms"]
    assert mean(320) > mean(160)
