"""End-to-end command-line behaviour: reports, exit codes, determinism."""

import json

import numpy as np
import pytest

from itsmlab.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from itsmlab.tensor_io import read_tensor


@pytest.fixture(scope="module")
def aligned_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("aligned")
    assert main(["synth", "--out", str(root), "--num-samples", "6", "--seed", "3"]) == EXIT_OK
    return root / "manifest.json"


@pytest.fixture(scope="module")
def inverted_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("inverted")
    args = ["synth", "--out", str(root), "--num-samples", "6", "--mode", "inverted", "--seed", "3"]
    assert main(args) == EXIT_OK
    return root / "manifest.json"


def _evaluate(manifest, out, *extra):
    return main(["evaluate", "--manifest", str(manifest), "--out", str(out), *extra])


def test_evaluate_writes_reports(aligned_fixture, tmp_path, capsys):
    out = tmp_path / "eval"
    assert _evaluate(aligned_fixture, out) == EXIT_OK
    assert "evaluate[clip]" in capsys.readouterr().out

    doc = json.loads((out / "report.json").read_text())
    assert doc["method"] == "clip"
    assert doc["sample_count"] == 6
    assert 0 <= doc["miou"] <= 100
    assert -100 <= doc["msc"] <= 100
    assert doc["miou"] > 80  # aligned fixture maps are nearly perfect
    assert (out / "report.csv").read_text().startswith("class,iou_pct,sc_pct,ap_pct,samples")


def test_evaluate_emit_itsm(aligned_fixture, tmp_path):
    out = tmp_path / "eval"
    assert _evaluate(aligned_fixture, out, "--emit-itsm") == EXIT_OK
    tensor = read_tensor(out / "itsm" / "s0000.ften")
    assert tensor.shape == (56, 56, 20)
    assert tensor.min() >= 0.0 and tensor.max() <= 1.0


def test_evaluate_is_byte_deterministic(aligned_fixture, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert _evaluate(aligned_fixture, out_a, "--jobs", "2") == EXIT_OK
    assert _evaluate(aligned_fixture, out_b) == EXIT_OK
    assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()
    assert (out_a / "report.csv").read_bytes() == (out_b / "report.csv").read_bytes()


def test_rclip_beats_clip_on_inverted_fixture(inverted_fixture, tmp_path):
    out_clip, out_rclip = tmp_path / "clip", tmp_path / "rclip"
    assert _evaluate(inverted_fixture, out_clip, "--method", "clip") == EXIT_OK
    assert _evaluate(inverted_fixture, out_rclip, "--method", "rclip") == EXIT_OK
    clip = json.loads((out_clip / "report.json").read_text())
    rclip = json.loads((out_rclip / "report.json").read_text())
    assert rclip["miou"] > clip["miou"]
    assert clip["msc"] < 0 < rclip["msc"]


def test_class_filter(aligned_fixture, tmp_path, capsys):
    out = tmp_path / "filtered"
    assert _evaluate(aligned_fixture, out, "--classes", "class_00,class_01") == EXIT_OK
    doc = json.loads((out / "report.json").read_text())
    assert doc["classes_evaluated"] == ["class_00", "class_01"]

    assert _evaluate(aligned_fixture, tmp_path / "x", "--classes", "mystery") == EXIT_DATA
    assert "no classes to evaluate" in capsys.readouterr().err


def test_eclip_requires_checkpoint(aligned_fixture, tmp_path, capsys):
    code = _evaluate(aligned_fixture, tmp_path / "e", "--method", "eclip")
    assert code == EXIT_USAGE
    assert "error: UsageError" in capsys.readouterr().err


def test_missing_manifest_is_data_error(tmp_path, capsys):
    code = _evaluate(tmp_path / "absent.json", tmp_path / "out")
    assert code == EXIT_DATA
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_usage_error_on_unknown_flag(capsys):
    assert main(["evaluate", "--nope"]) == EXIT_USAGE
    assert "error: UsageError" in capsys.readouterr().err


def test_train_then_eclip_evaluate(aligned_fixture, tmp_path, capsys):
    train_out = tmp_path / "train"
    code = main(
        [
            "train", "--manifest", str(aligned_fixture), "--out", str(train_out),
            "--lr", "0.01", "--epochs", "120", "--seed", "0",
        ]
    )
    assert code == EXIT_OK
    ckpt = train_out / "checkpoint"
    assert (ckpt / "phi_i_hat.ften").is_file()
    assert (ckpt / "phi_t_hat.ften").is_file()
    assert (ckpt / "log_temperature.ften").is_file()
    assert (ckpt / "checkpoint.json").is_file()
    curve = (train_out / "loss_curve.csv").read_text().strip().splitlines()
    assert curve[0] == "step,loss"
    assert len(curve) == 121

    out = tmp_path / "eval-eclip"
    code = _evaluate(aligned_fixture, out, "--method", "eclip", "--checkpoint", str(ckpt))
    assert code == EXIT_OK
    doc = json.loads((out / "report.json").read_text())
    assert doc["method"] == "eclip"
    assert doc["msc"] > 0
    capsys.readouterr()


def test_train_is_byte_deterministic(aligned_fixture, tmp_path):
    outs = []
    for name in ("t1", "t2"):
        out = tmp_path / name
        args = [
            "train", "--manifest", str(aligned_fixture), "--out", str(out),
            "--lr", "0.01", "--epochs", "20", "--seed", "11",
        ]
        assert main(args) == EXIT_OK
        outs.append(out)
    for rel in (
        "checkpoint/phi_i_hat.ften",
        "checkpoint/phi_t_hat.ften",
        "checkpoint/log_temperature.ften",
        "checkpoint/checkpoint.json",
        "loss_curve.csv",
    ):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_diagnose_reports_and_overlays(aligned_fixture, tmp_path, capsys):
    out = tmp_path / "diag"
    assert main(["diagnose", "--manifest", str(aligned_fixture), "--out", str(out)]) == EXIT_OK
    doc = json.loads((out / "diagnose.json").read_text())
    assert doc["candidate"] == "avg"
    assert len(doc["samples"]) == 6
    for row in doc["samples"]:
        assert row["b2f"] + row["f2b"] + row["unshifted"] == row["channels"] == 32
        assert (out / "points" / f"{row['id']}.max.png").is_file()
        assert (out / "points" / f"{row['id']}.avg.png").is_file()
    assert "(0,1]" in doc["buckets"]
    capsys.readouterr()


def test_diagnose_masked_candidate(aligned_fixture, tmp_path):
    out = tmp_path / "diag-mmp"
    args = ["diagnose", "--manifest", str(aligned_fixture), "--out", str(out), "--candidate", "masked_max"]
    assert main(args) == EXIT_OK
    doc = json.loads((out / "diagnose.json").read_text())
    assert doc["candidate"] == "masked_max"


def test_render_overlays(aligned_fixture, tmp_path, capsys):
    out = tmp_path / "render"
    args = ["render", "--manifest", str(aligned_fixture), "--out", str(out), "--samples", "s0001"]
    assert main(args) == EXIT_OK
    pngs = sorted(out.glob("*.png"))
    assert [p.name for p in pngs] == ["s0001.class_01.png"]

    assert main(["render", "--manifest", str(aligned_fixture), "--out", str(out), "--samples", "ghost"]) == EXIT_DATA
    err = capsys.readouterr().err
    assert "MissingSample" in err


def test_render_explicit_class_list(aligned_fixture, tmp_path):
    out = tmp_path / "render2"
    args = [
        "render", "--manifest", str(aligned_fixture), "--out", str(out),
        "--samples", "s0000", "--classes", "class_00,class_05",
    ]
    assert main(args) == EXIT_OK
    names = sorted(p.name for p in out.glob("*.png"))
    assert names == ["s0000.class_00.png", "s0000.class_05.png"]


def test_help_exits_zero():
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
