from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

from idminer import __version__
from idminer.cli import main
from idminer.synth import format_config

from conftest import small_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A six-identity corpus on disk with a quickly trained checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "six.ini"
    cfg.write_text(format_config(small_config(n=6, videos=3, frames=32, test=2)))
    assert main(["synth-gen", "--config", str(cfg), "--out", str(root / "data"), "--seed", "2"]) == 0
    assert main(["train", "--manifest", str(root / "data" / "manifest.json"), "--out", str(root / "m.ckpt"),
                 "--epochs", "1", "--steps-per-epoch", "2", "--classes", "2", "--videos-per-class", "4",
                 "--frames-per-pair", "4", "--encoder-widths", "8,8", "--hidden", "8", "--rep-dim", "8"]) == 0
    return root


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == f"idminer {__version__} (manifest v1, checkpoint v1)"


def test_synth_gen_tiny_counts_and_determinism(tmp_path, capsys):
    code, out, _ = run(capsys, "synth-gen", "--config", "tiny", "--out", tmp_path / "a", "--seed", 7)
    assert code == 0
    report = json.loads(out)
    assert report["records"] == 6
    assert report["counts"] == {"genuine": 2, "forged": 2, "reconstructed": 2, "surrogate": 0}
    run(capsys, "synth-gen", "--config", "tiny", "--out", tmp_path / "b", "--seed", 7)
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    run(capsys, "synth-gen", "--config", "tiny", "--out", tmp_path / "c", "--seed", 8)
    assert tree(tmp_path / "a") != tree(tmp_path / "c")


def test_synth_gen_missing_section(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(format_config(small_config()).replace("[surrogate]", "[surrogates]"))
    code, _, err = run(capsys, "synth-gen", "--config", bad, "--out", tmp_path / "o")
    assert code == 2
    assert "[surrogate]" in err


def test_train_smoke_on_tiny(tmp_path, capsys):
    run(capsys, "synth-gen", "--config", "tiny", "--out", tmp_path / "d")
    t0 = time.perf_counter()
    code, out, _ = run(capsys, "train", "--manifest", tmp_path / "d" / "manifest.json", "--out", tmp_path / "m.ckpt",
                       "--epochs", 2, "--classes", 2, "--videos-per-class", 2)
    assert code == 0 and time.perf_counter() - t0 < 60
    rep = json.loads(out)
    assert (rep["tau"], rep["lambda"], rep["betas"], rep["epochs"]) == (0.07, 0.1, [0.9, 0.999], 2)
    run_json = json.loads((tmp_path / "m.ckpt.run.json").read_text())
    tc = run_json["train_config"]
    assert (tc["tau"], tc["lam"], tc["beta1"], tc["beta2"], tc["lr"]) == (0.07, 0.1, 0.9, 0.999, 1e-3)
    assert run_json["inputs"]["manifest"]["sha256"]
    log = (tmp_path / "m.ckpt.loss.csv").read_text().splitlines()
    assert log[0] == "step,l_identity,l_artifact,l_total" and len(log) == 1 + rep["steps"]


def test_train_bad_manifest_path(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--manifest", tmp_path / "nope.json", "--out", tmp_path / "m.ckpt")
    assert code == 2 and "nope.json" in err


def test_train_resume_matches_straight_run(workdir, tmp_path, capsys):
    m = workdir / "data" / "manifest.json"
    flags = ["--steps-per-epoch", 2, "--classes", 2, "--videos-per-class", 4, "--frames-per-pair", 4,
             "--encoder-widths", "8,8", "--hidden", 8, "--rep-dim", 8]
    run(capsys, "train", "--manifest", m, "--out", tmp_path / "two.ckpt", "--epochs", 2, *flags)
    run(capsys, "train", "--manifest", m, "--out", tmp_path / "one.ckpt", "--epochs", 1, *flags)
    code, _, _ = run(capsys, "train", "--manifest", m, "--out", tmp_path / "res.ckpt", "--resume",
                     tmp_path / "one.ckpt", "--epochs", 2)
    assert code == 0
    assert (tmp_path / "res.ckpt").read_bytes() == (tmp_path / "two.ckpt").read_bytes()
    code, _, err = run(capsys, "train", "--manifest", m, "--out", tmp_path / "bad.ckpt", "--resume",
                       tmp_path / "one.ckpt", "--tau", 0.2)
    assert code == 2 and "tau" in err


def test_eval_level_zero_equals_conventional(workdir, tmp_path, capsys):
    m, ck = workdir / "data" / "manifest.json", workdir / "m.ckpt"
    run(capsys, "eval", "--manifest", m, "--ckpt", ck, "--protocol", "conventional", "--out", tmp_path / "c")
    run(capsys, "eval", "--manifest", m, "--ckpt", ck, "--protocol", "surrogate", "--kind", "jpeg",
        "--level", 0, "--out", tmp_path / "s")
    conv = json.loads((tmp_path / "c" / "metrics.json").read_text())["reports"][0]
    sur = json.loads((tmp_path / "s" / "metrics.json").read_text())["reports"][0]
    for key in ("auc", "acc", "acc_calibrated", "n_pairs"):
        assert conv[key] == sur[key]
    assert sur["surrogate_level"] == 0 and sur["mode"] == "reference_based"
    assert (tmp_path / "c" / "scores-conventional.csv").read_bytes().splitlines()[1:] == \
        (tmp_path / "s" / "scores-rddp_surrogate-jpeg_analog-L0.csv").read_bytes().splitlines()[1:]


def test_eval_all_reports_avg_drop(workdir, tmp_path, capsys):
    code, out, _ = run(capsys, "eval", "--manifest", workdir / "data" / "manifest.json", "--ckpt",
                       workdir / "m.ckpt", "--protocol", "all", "--level", 2, "--out", tmp_path)
    assert code == 0
    res = json.loads(out)
    assert [r["protocol"] for r in res["reports"]] == ["conventional", "rddp_whitehat"] + ["rddp_surrogate"] * 4
    assert set(res["avg_drop"]) == {"auc", "acc"}
    assert json.loads((tmp_path / "run.json").read_text())["inputs"]["ckpt"]["sha256"]


def test_eval_is_deterministic(workdir, tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "eval", "--manifest", workdir / "data" / "manifest.json", "--ckpt", workdir / "m.ckpt",
            "--protocol", "whitehat", "--out", tmp_path / name)
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_eval_whitehat_without_recon_set(workdir, tmp_path, capsys):
    src = workdir / "data" / "manifest.json"
    man = json.loads(src.read_text())
    man["records"] = [r for r in man["records"] if r["provenance"]["tag"] != "reconstructed"]
    dst = workdir / "data" / "no-recon.json"
    dst.write_text(json.dumps(man))
    code, _, err = run(capsys, "eval", "--manifest", dst, "--ckpt", workdir / "m.ckpt", "--protocol", "whitehat",
                       "--out", tmp_path)
    assert code == 2 and "D_recon" in err


def test_eval_unsupported_mode(workdir, tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--manifest", workdir / "data" / "manifest.json", "--ckpt",
                       workdir / "m.ckpt", "--mode", "reference_free", "--out", tmp_path)
    assert code == 2 and "reference_free" in err


def test_sweep_rows(workdir, tmp_path, capsys):
    out_csv = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--manifest", workdir / "data" / "manifest.json", "--ckpt",
                       workdir / "m.ckpt", "--levels", "0..5", "--kinds", "all", "--out", out_csv)
    assert code == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "kind,level,auc,acc,n_pairs" and len(lines) == 25
    rows = [l.split(",") for l in lines[1:]]
    for k in range(4):
        block = rows[6 * k: 6 * k + 6]
        assert len({r[0] for r in block}) == 1
        assert [int(r[1]) for r in block] == list(range(6))
    assert out == out_csv.read_text()
    run(capsys, "sweep", "--manifest", workdir / "data" / "manifest.json", "--ckpt", workdir / "m.ckpt",
        "--out", tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == out_csv.read_bytes()


def test_reid_and_baseline(workdir, tmp_path, capsys):
    m = workdir / "data" / "manifest.json"
    code, out, _ = run(capsys, "reid", "--manifest", m, "--ckpt", workdir / "m.ckpt")
    assert code == 0 and set(json.loads(out)) >= {"rank1", "rank5", "map"}
    code, _, _ = run(capsys, "baseline", "--manifest", m, "--out", tmp_path / "clf.json")
    assert code == 0
    code, out, _ = run(capsys, "eval", "--manifest", m, "--baseline", tmp_path / "clf.json",
                       "--protocol", "conventional", "--out", tmp_path / "e")
    assert code == 0 and json.loads(out)["reports"][0]["mode"] == "reference_free"
    code, out, _ = run(capsys, "reid", "--manifest", m, "--baseline", tmp_path / "clf.json")
    assert code == 0 and 0.0 <= json.loads(out)["rank1"] <= 1.0


def test_score_metrics_perfect_detector(tmp_path, capsys):
    f = tmp_path / "s.csv"
    f.write_text("pair_id,probe_id,reference_id,label,score\n0,a,,1,0.9\n1,b,,0,0.2\n2,c,,1,0.7\n")
    code, out, _ = run(capsys, "score-metrics", "--scores", f)
    assert code == 0
    rep = json.loads(out)
    assert rep["auc"] == 1.0 and rep["acc"] == 1.0
    fs = tmp_path / "frames.csv"
    fs.write_text("video_id,frame,score\nv1,1,0.9\nv1,2,0.7\nv2,1,0.1\n")
    lab = tmp_path / "lab.json"
    lab.write_text('{"v1": 1, "v2": 0}')
    code, out, _ = run(capsys, "score-metrics", "--frame-scores", fs, "--labels", lab)
    assert code == 0 and json.loads(out)["auc"] == 1.0


def test_grad_check_command(capsys):
    code, out, _ = run(capsys, "grad-check", "--configs", 2)
    rep = json.loads(out)
    assert code == 0 and rep["ok"] and rep["configs"] == 2
    assert set(rep["max_rel_error"]) == {"encoder", "gru_bptt", "artifact_loss", "identity_loss", "end_to_end"}
