import json
import shutil

import numpy as np
import pytest

from conftest import tiny_args
from dynavsr.checkpoint import ModelState, load_checkpoint, save_checkpoint
from dynavsr.cli import main
from dynavsr.degrade import FrameSequence, Tier, blur_downsample, read_frames
from dynavsr.evaluation import read_records
from dynavsr.kernels import load_kernel


def test_unknown_subcommand_prints_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train-everything"])
    assert exc.value.code != 0
    assert "usage:" in capsys.readouterr().err


def test_unknown_flag_rejected(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--fast"])
    assert exc.value.code != 0


def test_synth(tmp_path, capsys):
    assert main(["synth", "--output", str(tmp_path), "--count", "2", "--frames", "5", "--size", "16"]) == 0
    assert "wrote 2 sequences" in capsys.readouterr().out
    assert read_frames(tmp_path / "seq0001").shape == (5, 16, 16, 3)


def test_degrade(tiny_data, tmp_path, capsys):
    args = tiny_args(tiny_data, tmp_path / "run")
    assert main(["degrade", "--output", str(tmp_path / "a"), "--split", "val", *args]) == 0
    assert "wrote 2 triples" in capsys.readouterr().out
    assert main(["degrade", "--output", str(tmp_path / "b"), "--split", "val", *args]) == 0
    for f in sorted((tmp_path / "a").rglob("*.*")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()
    seq = tmp_path / "a" / "val0000"
    hr, lr, slr = (read_frames(seq / t) for t in ("HR", "LR", "SLR"))
    assert hr.shape[1:3] == (32, 32) and lr.shape[1:3] == (16, 16) and slr.shape[1:3] == (8, 8)
    spot = blur_downsample(FrameSequence(hr[:1], Tier.HR), load_kernel(seq / "kernel.txt"), 2, "direct")
    assert np.abs(spot.frames[0] - lr[0]).max() <= 0.5 / 255 + 1e-9


def test_missing_data_is_an_error(tmp_path, capsys):
    assert main(["degrade", "--output", str(tmp_path), "--override", f"data.val_root={tmp_path / 'x'}"]) == 1
    assert "val_root" in capsys.readouterr().err


def test_meta_train_needs_pretrained_checkpoints(tiny_data, tmp_path, capsys):
    assert main(["meta-train", *tiny_args(tiny_data, tmp_path)]) == 1
    assert "mfdn_pretrained.ckpt" in capsys.readouterr().err


def test_zero_iterations_keep_the_initial_parameters(tiny_run, tiny_data, tmp_path):
    out, _ = tiny_run
    for name in ("vsr_bicubic.ckpt", "mfdn_pretrained.ckpt"):
        shutil.copy(out / name, tmp_path / name)
    assert main(["meta-train", *tiny_args(tiny_data, tmp_path, "meta.total_iters=0")]) == 0
    final = load_checkpoint(tmp_path / "meta_final.ckpt")
    for k, v in load_checkpoint(tmp_path / "vsr_bicubic.ckpt").groups["theta"].items():
        assert np.array_equal(final.groups["theta"][k], v)
    for k, v in load_checkpoint(tmp_path / "mfdn_pretrained.ckpt").groups["phi"].items():
        assert np.array_equal(final.groups["phi"][k], v)
    assert (tmp_path / "metrics.jsonl").read_text() == ""


def test_resume_reproduces_the_log_tail(tiny_run):
    out, args = tiny_run
    log = (out / "metrics.jsonl").read_text()
    final = (out / "meta_final.ckpt").read_bytes()
    assert [json.loads(ln)["iter"] for ln in log.splitlines()] == [0, 1, 2, 3]
    assert main(["meta-train", "--resume", *args]) == 0
    assert (out / "metrics.jsonl").read_text() == log
    assert (out / "meta_final.ckpt").read_bytes() == final


def test_eval_report(tiny_run, capsys):
    out, args = tiny_run
    assert main(["eval", *args]) == 0
    table = capsys.readouterr().out.splitlines()
    header = [c.strip() for c in table[0].split("|")]
    assert header == ["Method", "Iso.", "Aniso.", "Mixed", "Preprocessing (s)", "Super-resolution (s)",
                      "Total (s)"]
    assert [ln.split("|")[0].strip() for ln in table[2:]] == ["Baseline", "DynaVSR", "PSNR gain"]
    report = out / "report"
    for name in ("eval.jsonl", "eval_table.txt", "config.yaml", "psnr_by_protocol.png", "psnr_by_setting.png"):
        assert (report / name).stat().st_size > 0
    recs = read_records(report / "eval.jsonl")
    for system in ("baseline", "adapted"):
        for protocol in ("iso_gaussian8", "aniso4", "mixed"):
            rows = [r for r in recs if r["type"] == "sequence" and r["system"] == system
                    and r["protocol"] == protocol]
            agg = [r for r in recs if r["type"] == "aggregate" and r["system"] == system
                   and r["protocol"] == protocol]
            assert len(agg) == 1
            assert agg[0]["psnr_db"] == pytest.approx(np.mean([r["psnr_db"] for r in rows]), abs=1e-9)


def test_eval_with_zero_inner_rate_has_zero_gain(tiny_run, tmp_path, capsys):
    out, args = tiny_run
    # baseline backbone = the meta-trained one, so only the (disabled) update could differ
    state = load_checkpoint(out / "meta_final.ckpt")
    save_checkpoint(ModelState({"theta": state.groups["theta"]}, state.fingerprint), tmp_path / "same.ckpt")
    assert main(["eval", *args, "--override", "meta.alpha=0", "--baseline-checkpoint",
                 str(tmp_path / "same.ckpt"), "--report-dir", str(tmp_path)]) == 0
    gain = capsys.readouterr().out.splitlines()[-1]
    assert [c.strip() for c in gain.split("|")[1:4]] == ["+0.00", "+0.00", "+0.00"]
    recs = read_records(tmp_path / "eval.jsonl")
    base = [r["psnr_db"] for r in recs if r["type"] == "sequence" and r["system"] == "baseline"]
    adapted = [r["psnr_db"] for r in recs if r["type"] == "sequence" and r["system"] == "adapted"]
    assert base == adapted


def test_eval_sweep(tiny_run, tmp_path, capsys):
    _, args = tiny_run
    assert main(["eval", *args, "--report-dir", str(tmp_path), "--sweep", "inner_steps=1,3"]) == 0
    recs = [json.loads(ln) for ln in (tmp_path / "sweep_inner_steps.jsonl").read_text().splitlines()]
    assert [r["updates_per_sequence"] for r in recs] == [1, 1, 1, 3, 3, 3]
    assert (tmp_path / "sweep_inner_steps.png").exists()
    assert main(["eval", *args, "--report-dir", str(tmp_path), "--sweep", "radius=1"]) == 1


def test_profile(tiny_run, capsys):
    _, args = tiny_run
    assert main(["profile", *args]) == 0
    lines = capsys.readouterr().out.splitlines()
    base = [c.strip() for c in lines[2].split("|")]
    adapted = [c.strip() for c in lines[3].split("|")]
    assert base[0] == "Baseline" and float(base[1]) == 0 and base[4] == "0"
    assert adapted[0] == "DynaVSR" and adapted[4] == "1"
    assert float(adapted[3]) == pytest.approx(float(adapted[1]) + float(adapted[2]), abs=2e-4)


def test_adapt_writes_frames(tiny_run, tiny_data, tmp_path, capsys):
    _, args = tiny_run
    assert main(["adapt", "--input", str(tiny_data / "val" / "val0001"), "--output", str(tmp_path), *args]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["updates"] == 1 and info["frames"] == 6
    assert read_frames(tmp_path).shape == (6, 64, 64, 3)


def test_fingerprint_mismatch_is_reported(tiny_run, capsys):
    _, args = tiny_run
    assert main(["eval", *args, "--override", "model.vsr_channels=8"]) == 1
    assert "fingerprint" in capsys.readouterr().err
