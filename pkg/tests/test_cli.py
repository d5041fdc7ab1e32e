import hashlib
import json
from pathlib import Path

import pytest

from htrclp.cli import format_compare, main, read_config_file

FAST = ["--epochs", "1", "--batch-size", "4", "--patience", "1", "--bootstrap", "20"]


def digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "src", "--atlas", "A", "--hand", "plain", "--lines", 12, "--seed", 1,
               "--min-chars", 3, "--max-chars", 6) == 0
    assert run("synth", "--out", root / "tgt", "--atlas", "B", "--hand", "B", "--lines", 12, "--seed", 2,
               "--min-chars", 3, "--max-chars", 6) == 0
    assert run("synth", "--out", root / "test", "--atlas", "B", "--hand", "B", "--lines", 6, "--seed", 3,
               "--min-chars", 3, "--max-chars", 6) == 0
    assert run("train", "--out", root / "source", "--data", root / "src", "--scheme", "da", *FAST) == 0
    return root


def test_synth_is_reproducible(work, tmp_path):
    assert run("synth", "--out", tmp_path / "again", "--atlas", "A", "--hand", "plain", "--lines", 12,
               "--seed", 1, "--min-chars", 3, "--max-chars", 6) == 0
    assert digest(tmp_path / "again") == digest(work / "src")
    assert run("synth", "--out", tmp_path / "other", "--atlas", "A", "--hand", "plain", "--lines", 12,
               "--seed", 1, "--text-seed", 9, "--min-chars", 3, "--max-chars", 6) == 0
    assert digest(tmp_path / "other") != digest(work / "src")


def test_train_outputs_and_reproducibility(work, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--out", tmp_path / name, "--data", work / "tgt", "--test", work / "test",
                   "--seed", 4, *FAST) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert {"model.ckpt", "history.csv", "report.json", "report.csv"} <= set(digest(tmp_path / "a"))
    header = (tmp_path / "a" / "history.csv").read_text().splitlines()[0]
    assert header == "epoch,train_loss,val_cer,skipped,aborted"
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["ci_low"] <= report["cer"] <= report["ci_high"]


def test_transfer_schemes(work, tmp_path):
    assert run("transfer", "--out", tmp_path / "t", "--data", work / "tgt", "--source", work / "source" / "model.ckpt", *FAST) == 0
    assert run("transfer", "--out", tmp_path / "u", "--data", work / "tgt", "--scheme", "da-tl-da",
               "--source", work / "source" / "model.ckpt", *FAST) == 0


def test_scheme_source_mismatch_is_usage_error(work, tmp_path, capsys):
    assert run("transfer", "--out", tmp_path / "x", "--data", work / "tgt", *FAST) == 2
    assert run("train", "--out", tmp_path / "y", "--data", work / "tgt", "--scheme", "scratch",
               "--source", work / "source" / "model.ckpt", *FAST) == 2
    assert not (tmp_path / "y" / "model.ckpt").exists()
    assert "error" in capsys.readouterr().err


def test_usage_errors(work, tmp_path):
    assert run("train", "--out", tmp_path / "z", "--bogus") == 2
    assert run("eval", "--out", tmp_path / "z", "--model", tmp_path / "missing.ckpt", "--data", work / "tgt") == 2
    assert run("eval", "--out", tmp_path / "z", "--model", work / "source" / "model.ckpt",
               "--data", tmp_path / "nowhere") == 2
    assert run("clp", "--out", tmp_path / "z", "--source", work / "source" / "model.ckpt",
               "--data", work / "tgt", "--compare") == 2
    assert run("sweep", "--out", tmp_path / "z", "--source", work / "source" / "model.ckpt",
               "--data", work / "tgt", "--test", work / "test", "--line-counts", "4,x") == 2
    assert run("clp", "--out", tmp_path / "z", "--jobs", 0, "--source", work / "source" / "model.ckpt",
               "--data", work / "tgt") == 2
    assert run("nonsense") == 2


def test_eval_writes_decodes(work, tmp_path):
    assert run("eval", "--out", tmp_path / "e", "--model", work / "source" / "model.ckpt", "--data", work / "src",
               "--bootstrap", 20) == 0
    rows = (tmp_path / "e" / "decodes.csv").read_text().splitlines()
    assert rows[0] == "id,hyp,ref" and len(rows) == 13


def test_corrupt_is_reproducible_and_leaves_input_alone(work, tmp_path):
    before = digest(work / "tgt")
    for name in ("a", "b"):
        assert run("corrupt", "--out", tmp_path / name, "--data", work / "tgt", "--L", 0.5, "--R", 0.5,
                   "--seed", 3) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert digest(work / "tgt") == before
    assert run("corrupt", "--out", tmp_path / "none", "--data", work / "tgt", "--L", 0) == 0
    assert (tmp_path / "none" / "corrupted.txt").read_text() == ""
    assert (tmp_path / "none" / "manifest.tsv").read_bytes() == (work / "tgt" / "manifest.tsv").read_bytes()


def test_clp_epsilon_one_removes_nothing(work, tmp_path):
    assert run("clp", "--out", tmp_path / "c", "--source", work / "source" / "model.ckpt", "--data", work / "tgt",
               "--epsilon", 1.0, *FAST) == 0
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert report["counts"]["removed"] == 0
    assert {"clp_lines.csv", "clp_hist.csv", "clp_summary.txt", "model.ckpt"} <= set(digest(tmp_path / "c"))
    assert len(list((tmp_path / "c" / "purged" / "lines").iterdir())) == 12


def test_clp_jobs_do_not_change_outputs(work, tmp_path):
    args = ["--source", work / "source" / "model.ckpt", "--data", work / "tgt", "--test", work / "test",
            "--epsilon", 1.0, *FAST]
    assert run("clp", "--out", tmp_path / "a", *args) == 0
    assert run("clp", "--out", tmp_path / "b", "--jobs", 2, *args) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_clp_compare_rows(work, tmp_path, monkeypatch):
    # an untrained recognizer fails every line, so plant fold scores with a known spread
    import htrclp.cli as cli
    from htrclp.noise import FoldScores

    def planted(source, data, config):
        cers = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.55, 0.6, 0.65, 0.7, 0.8, 1.2]
        return FoldScores([i % 2 for i in range(len(data))], [""] * len(data), cers, [[], []])

    monkeypatch.setattr(cli, "score_folds", planted)
    args = ["--source", work / "source" / "model.ckpt", "--data", work / "tgt", "--test", work / "test",
            "--compare", *FAST]
    assert run("clp", "--out", tmp_path / "a", *args) == 0
    rows = json.loads((tmp_path / "a" / "compare.json").read_text())
    assert [r["setting"] for r in rows] == ["baseline", "eps=50%", "eps=70%"]
    assert [r["removed"] for r in rows] == [0, 6, 2]
    lines = (tmp_path / "a" / "compare.txt").read_text().splitlines()
    assert len(lines) == 3 and "(" not in lines[0]
    assert lines[1].endswith("(6)") and lines[2].endswith("(2)")
    summary = (tmp_path / "a" / "clp_summary.txt").read_text()
    assert "CER <= 50%: 50.0% of 12 lines" in summary and "CER <= 70%: 83.3% of 12 lines" in summary


def test_format_compare():
    rows = [{"setting": "baseline", "epsilon": None, "cer": 0.1234, "removed": 0},
            {"setting": "eps=50%", "epsilon": 0.5, "cer": 0.1, "removed": 7}]
    assert format_compare(rows) == "baseline: 12.34\neps=50%: 10.00 (7)\n"


def test_sweep(work, tmp_path):
    args = ["--source", work / "source" / "model.ckpt", "--data", work / "tgt", "--test", work / "test",
            "--line-counts", "4,8,12", *FAST]
    assert run("sweep", "--out", tmp_path / "s", *args) == 0
    rows = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "l,cer,delta_cer_per_line" and [r.split(",")[0] for r in rows[1:]] == ["4", "8", "12"]
    assert run("sweep", "--out", tmp_path / "too-many", *args[:-len(FAST)], "--line-counts", "4,99", *FAST) == 2


def test_augment_preview(work, tmp_path):
    assert run("augment-preview", "--out", tmp_path / "p", "--data", work / "src", "--n", 3, "--seed", 2) == 0
    names = sorted(p.name for p in (tmp_path / "p").iterdir())
    assert len(names) == 6 and sum(n.endswith("_after.pgm") for n in names) == 3
    assert run("augment-preview", "--out", tmp_path / "q", "--data", work / "src", "--n", 3, "--seed", 2) == 0
    assert digest(tmp_path / "p") == digest(tmp_path / "q")


def test_config_file_flags_win(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\nlines = 5\nmin-chars = 3\nmax_chars = 4\nseed = 8\n", encoding="utf-8")
    assert read_config_file(cfg) == {"lines": "5", "min_chars": "3", "max_chars": "4", "seed": "8"}
    assert run("synth", "--out", tmp_path / "a", "--config", cfg) == 0
    assert len((tmp_path / "a" / "manifest.tsv").read_text().splitlines()) == 5
    assert run("synth", "--out", tmp_path / "b", "--config", cfg, "--lines", 3) == 0
    assert len((tmp_path / "b" / "manifest.tsv").read_text().splitlines()) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense = 1\n", encoding="utf-8")
    assert run("synth", "--out", tmp_path / "c", "--config", bad) == 2
