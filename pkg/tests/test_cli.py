import hashlib
import json
from pathlib import Path

import pytest

from seplab.cli import main

SMOKE = """\
seed: 0
dataset: {n_train: 4, n_valid: 2, n_test: 4, utterance_seconds: 0.5}
model: {design: mixed, K: 1, M: 2, n_filters: 16, window: 8, block_dim: 8, hidden: 8, chunk_len: 4}
train: {max_epochs: 1, patience: 1, batch_size: 2}
sweep: {include: ["simo_only:2", "mixed:1", "siso_iterative:1"]}
"""


def _digest(root: Path):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.delenv("SEPLAB_SEED", raising=False)
    (tmp_path / "exp.yaml").write_text(SMOKE)
    return tmp_path


def _run(workdir, *args):
    return main(["--workdir", str(workdir), "--config", "exp.yaml", *args])


def test_simulate_train_evaluate(workdir, capsys):
    assert _run(workdir, "simulate") == 0
    assert (workdir / "data" / "manifest.jsonl").exists()
    assert _run(workdir, "train") == 0
    run = workdir / "runs" / "mixed-K1-M2"
    assert (run / "checkpoint.npz").exists() and (run / "train_log.jsonl").exists()
    assert _run(workdir, "evaluate") == 0
    out = capsys.readouterr().out
    assert "SIMO blocks | SISO blocks" in out
    assert len((run / "records.jsonl").read_text().splitlines()) == 4


def test_sweep_is_idempotent_and_reports(workdir):
    assert _run(workdir, "sweep") == 0
    reports = workdir / "reports"
    for name in ("table1.md", "table2.md", "buckets.csv", "overlap_scatter.svg", "overlap_scatter.csv",
                 "table1_bars.svg", "table1_bars.csv", "table2_bars.svg", "report.json"):
        assert (reports / name).exists(), name
    assert json.loads((reports / "report.json").read_text())["root_seed"] == 0
    assert "published reference" in (reports / "table1.md").read_text()
    first = _digest(workdir)
    assert _run(workdir, "sweep") == 0
    assert _digest(workdir) == first
    assert _run(workdir, "report") == 0
    assert _digest(workdir) == first


def test_jobs_do_not_change_artifacts(tmp_path, monkeypatch):
    monkeypatch.delenv("SEPLAB_SEED", raising=False)
    digests = []
    for jobs in ("1", "2"):
        wd = tmp_path / jobs
        wd.mkdir()
        (wd / "exp.yaml").write_text(SMOKE)
        assert _run(wd, "--jobs", jobs, "simulate") == 0
        assert _run(wd, "--jobs", jobs, "train") == 0
        assert _run(wd, "--jobs", jobs, "evaluate") == 0
        digests.append(_digest(wd / "data") | {k: v for k, v in _digest(wd / "runs").items()
                                                if not k.endswith("train_log.jsonl")})
    assert digests[0] == digests[1]


def test_paramcheck_output(capsys):
    assert main(["paramcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("simo_only-K6-M6") == 1
    assert out.count("PASS") == 3 and "FAIL" not in out


def test_exit_codes(workdir, capsys):
    assert main(["--set", "model.bogus=1", "paramcheck"]) == 2
    assert "model.bogus" in capsys.readouterr().err
    (workdir / "bad.yaml").write_text("train: {max_epochs: -1}\n")
    assert main(["--workdir", str(workdir), "--config", "bad.yaml", "simulate"]) == 2
    assert _run(workdir, "evaluate", "--checkpoint", "missing.npz") == 3
    assert _run(workdir, "report") == 3
    assert main(["--jobs", "0", "paramcheck"]) == 2


def test_seed_env_is_recorded(workdir, monkeypatch):
    monkeypatch.setenv("SEPLAB_SEED", "3")
    assert _run(workdir, "simulate") == 0
    assert json.loads((workdir / "data" / "dataset.json").read_text())["seed"] == 3


def test_global_flags_after_subcommand(capsys):
    assert main(["paramcheck", "--set", "model.bogus=1"]) == 2
    assert "model.bogus" in capsys.readouterr().err
    # overrides on both sides of the subcommand accumulate
    assert main(["--set", "model.hidden=8", "paramcheck", "--set", "model.bogus=1"]) == 2
    assert main(["paramcheck", "-j", "0"]) == 2
