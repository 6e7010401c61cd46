from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from bsqz.cli import EXIT_CONFIG, EXIT_OK, main

TIGER_PNMF = """
sampler.m = 120
sampler.horizon_cap = 20
compressor.variant = pnmf
compressor.k = 2
compressor.lam = auto
compressor.max_iters = 200
solver.max_stages = 40
solver.baseline = true
eval.n_trajectories = 20
eval.horizon = 20
eval.n_repeats = 2
diagnose.draws = 200
diagnose.n_beliefs = 20
"""


def _config(tmp_path: Path, model: Path, body: str, name: str = "run.conf") -> str:
    path = tmp_path / name
    path.write_text(f"model = {model}\nout = {tmp_path / 'out'}\n{body}", encoding="utf-8")
    return str(path)


def _run(*argv: str) -> int:
    return main(list(argv))


def test_full_pipeline_on_tiger(tmp_path, data_dir, capsys) -> None:
    conf = _config(tmp_path, data_dir / "tiger.pomdp", TIGER_PNMF)
    for cmd in ("compress", "solve", "eval", "diagnose", "report"):
        assert _run(cmd, "--config", conf) == EXIT_OK, cmd
    assert "Done." in capsys.readouterr().out

    out = tmp_path / "out"
    for name in (
        "beliefs.bsqz",
        "spectrum.csv",
        "factorisation_trace.csv",
        "basis.bsqz",
        "compressed.bsqz",
        "error_report.json",
        "value_function.bsqz",
        "value_function_original.bsqz",
        "trace.csv",
        "trace_original.csv",
        "verdict.json",
        "eval_repeats.csv",
        "eval_summary.csv",
        "diagnostics.jsonl",
        "value_loss.csv",
        "table.csv",
        "trace.svg",
        "report.md",
        "config.txt",
    ):
        assert (out / name).is_file(), name

    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["commands"]) == {"compress", "solve", "eval", "diagnose", "report"}
    assert manifest["k"] == 2
    assert manifest["config"]["compressor.variant"] == "pnmf"
    assert len(manifest["config_hash"]) == 64

    verdicts = json.loads((out / "verdict.json").read_text())
    assert set(verdicts) == {"pnmf k=2", "original"}
    summary = pd.read_csv(out / "eval_summary.csv")
    assert summary["policy"].tolist() == ["pnmf k=2", "original"]
    assert (summary["n_repeats"] == 2).all()

    checks = [json.loads(line)["check"] for line in (out / "diagnostics.jsonl").read_text().splitlines()]
    assert checks[:3] == ["contraction-rate", "pruning-witness", "scaling-identity"]
    assert "value-gap-bound" in checks and "value-loss-identity" in checks

    report = (out / "report.md").read_text()
    assert "## 1) Policy reward" in report
    assert "pnmf k=2" in report


def test_outputs_do_not_depend_on_thread_count(tmp_path, data_dir) -> None:
    for threads in ("1", "4"):
        d = tmp_path / f"t{threads}"
        d.mkdir()
        conf = _config(d, data_dir / "tiger.pomdp", TIGER_PNMF)
        for cmd in ("compress", "solve", "eval"):
            assert _run(cmd, "--config", conf, "--threads", threads) == EXIT_OK
    for name in ("spectrum.csv", "factorisation_trace.csv", "trace.csv", "trace_original.csv", "eval_repeats.csv"):
        one = (tmp_path / "t1" / "out" / name).read_bytes()
        four = (tmp_path / "t4" / "out" / name).read_bytes()
        assert one == four, name


def test_vdc_sweep_produces_error_chart(tmp_path, data_dir) -> None:
    body = (
        "sampler.m = 60\ncompressor.variant = vdc\ncompressor.mode = lossy-greedy\n"
        "compressor.k = 2\ncompressor.sweep = 1,2,3\n"
    )
    conf = _config(tmp_path, data_dir / "chain.pomdp", body)
    assert _run("compress", "--config", conf) == EXIT_OK
    assert _run("report", "--config", conf) == EXIT_OK
    out = tmp_path / "out"
    sweep = pd.read_csv(out / "error_sweep.csv")
    assert list(sweep.columns) == ["parameter", "value", "k", "eps_R", "eps_T"]
    assert sweep["parameter"].eq("k").all()
    svg = (out / "errors.svg").read_text()
    assert svg.startswith("<svg") and "polyline" in svg
    assert "No evaluation results yet" in (out / "report.md").read_text()


def test_uncompressed_run_uses_original_label(tmp_path, data_dir) -> None:
    body = "sampler.m = 50\ncompressor.variant = none\nsolver.max_stages = 20\n"
    conf = _config(tmp_path, data_dir / "tiger.pomdp", body)
    assert _run("compress", "--config", conf) == EXIT_OK
    assert _run("solve", "--config", conf) == EXIT_OK
    out = tmp_path / "out"
    assert not (out / "compressed.bsqz").exists()
    assert set(json.loads((out / "verdict.json").read_text())) == {"original"}
    assert "status" in pd.read_csv(out / "trace.csv").columns


def test_overrides_and_seed_flag(tmp_path, data_dir) -> None:
    conf = _config(tmp_path, data_dir / "tiger.pomdp", "compressor.variant = none\n")
    alt = tmp_path / "alt"
    assert _run("compress", "--config", conf, "--set", "sampler.m=7", "--seed", "3", "--out", str(alt)) == EXIT_OK
    saved = (alt / "config.txt").read_text()
    assert "sampler.m = 7\n" in saved
    assert "sampler.seed = 3\n" in saved and "solver.seed = 3\n" in saved


def test_missing_model_is_a_config_error(tmp_path, capsys) -> None:
    conf = _config(tmp_path, tmp_path / "nope.pomdp", "")
    assert _run("compress", "--config", conf) == EXIT_CONFIG
    assert "model file not found" in capsys.readouterr().err


def test_solve_before_compress_is_a_config_error(tmp_path, data_dir, capsys) -> None:
    conf = _config(tmp_path, data_dir / "tiger.pomdp", "")
    assert _run("solve", "--config", conf) == EXIT_CONFIG
    assert "bsqz compress" in capsys.readouterr().err


def test_bad_config_values_are_rejected(tmp_path, data_dir) -> None:
    conf = _config(tmp_path, data_dir / "tiger.pomdp", "solver.unknown = 1\n")
    assert _run("compress", "--config", conf) == EXIT_CONFIG
    conf = _config(tmp_path, data_dir / "tiger.pomdp", "", name="ok.conf")
    assert _run("compress", "--config", conf, "--set", "sampler.m=0") == EXIT_CONFIG
    assert _run("compress", "--config", str(tmp_path / "missing.conf")) == EXIT_CONFIG


def test_subcommand_is_required() -> None:
    with pytest.raises(SystemExit):
        main([])
