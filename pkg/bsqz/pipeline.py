"""Batch pipeline behind the CLI commands.

Every command reads its inputs from and writes its outputs to one output
directory, and records its wall time and outputs in `manifest.json`.
"""

from __future__ import annotations

import logging
import os
import time
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import bsqz
from bsqz.compressed import build_compressed, error_report, reconstruction_residual
from bsqz.config import ExperimentConfig, check_paths, config_hash, flatten_config, save_config
from bsqz.diagnostics import (
    contraction_check,
    pruning_witness_search,
    scaling_identity_check,
    value_gap_check,
    value_loss_decomposition,
)
from bsqz.errors import ConfigError
from bsqz.evaluation import divergence_verdict, repeats_frame, simulate_policy, summary_frame
from bsqz.io import load_artifact, load_model, read_json, read_jsonl, save_artifact, write_csv, write_json, write_jsonl
from bsqz.nmf import factorize
from bsqz.pbvi import compressed_process, original_process, perseus_solve
from bsqz.report import generate_report_md, reward_table, svg_line_chart
from bsqz.sampling import belief_spectrum, sample_beliefs
from bsqz.settings import settings
from bsqz.types import (
    BeliefMatrix,
    CompressedPomdp,
    CompressionErrorReport,
    DiagnosticReport,
    Pomdp,
    SolveResult,
    SolveTrace,
    ValueFunction,
)
from bsqz.vdc import error_sweep, vdc_compress

logger = logging.getLogger(__name__)

BELIEFS = "beliefs.bsqz"
BASIS = "basis.bsqz"
COMPRESSED = "compressed.bsqz"
ERROR_REPORT = "error_report.json"
VALUE_FUNCTION = "value_function.bsqz"
VALUE_FUNCTION_ORIGINAL = "value_function_original.bsqz"
TRACE = "trace.csv"
TRACE_ORIGINAL = "trace_original.csv"
VERDICT = "verdict.json"
EVAL_REPEATS = "eval_repeats.csv"
EVAL_SUMMARY = "eval_summary.csv"
DIAGNOSTICS = "diagnostics.jsonl"
MANIFEST = "manifest.json"
FAILURE = "failure.json"


def ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def out_dir(cfg: ExperimentConfig) -> str:
    return cfg.out or settings.OUT


def _path(cfg: ExperimentConfig, name: str) -> str:
    return os.path.join(out_dir(cfg), name)


def _load_model(cfg: ExperimentConfig) -> Pomdp:
    check_paths(cfg)
    return load_model(cfg.model, tolerance=settings.LOAD_TOLERANCE)


def _require(cfg: ExperimentConfig, name: str, producer: str) -> str:
    path = _path(cfg, name)
    if not os.path.isfile(path):
        raise ConfigError(f"{path} not found; run `bsqz {producer}` first")
    return path


def _compressed(cfg: ExperimentConfig) -> bool:
    return cfg.compressor.variant != "none"


def policy_label(cfg: ExperimentConfig) -> str:
    c = cfg.compressor
    if c.variant == "none":
        return "original"
    if c.variant == "vdc":
        return f"vdc {c.mode}" + (f" k={c.k}" if c.mode == "lossy-greedy" else "")
    return f"{c.variant} k={c.k}"


def _update_manifest(cfg: ExperimentConfig, command: str, seconds: float, outputs: List[str], **extra: Any) -> str:
    path = _path(cfg, MANIFEST)
    manifest: Dict[str, Any] = read_json(path) if os.path.isfile(path) else {}
    manifest["version"] = bsqz.__version__
    manifest["config_hash"] = config_hash(cfg)
    manifest["config"] = flatten_config(cfg)
    manifest.setdefault("commands", {})[command] = {"wall_time": seconds, "outputs": [os.path.basename(p) for p in outputs]}
    times = manifest.setdefault("times", {})
    times.update(extra.pop("times", {}))
    manifest.update(extra)
    save_config(cfg, _path(cfg, "config.txt"))
    return write_json(manifest, path)


def write_failure(cfg: Optional[ExperimentConfig], command: str, err: BaseException, out: Optional[str] = None) -> str:
    base = out or (out_dir(cfg) if cfg is not None else settings.OUT)
    ensure_dir(base)
    return write_json(
        {
            "command": command,
            "error": type(err).__name__,
            "message": str(err),
            "diagnostics": getattr(err, "diagnostics", {}),
        },
        os.path.join(base, FAILURE),
    )


# ---------------------------------------------------------------------------
# compress


def run_compress(cfg: ExperimentConfig, threads: int = 1) -> List[str]:
    ensure_dir(out_dir(cfg))
    t0 = time.perf_counter()
    model = _load_model(cfg)
    s = cfg.sampler
    B = sample_beliefs(model, s.m, seed=s.seed, horizon_cap=s.horizon_cap, threads=threads)
    written = [_save(B, cfg, BELIEFS)]

    spectrum = belief_spectrum(B)
    sv = np.asarray(spectrum["singular_values"])
    written.append(write_csv(pd.DataFrame({"index": np.arange(sv.size), "singular_value": sv}), _path(cfg, "spectrum.csv")))
    t_sample = time.perf_counter() - t0

    t1 = time.perf_counter()
    extra: Dict[str, Any] = {"belief_rank": int(spectrum["rank"])}
    if _compressed(cfg):
        c = cfg.compressor
        if c.variant == "vdc":
            basis = vdc_compress(model, c.vdc())
            values = c.sweep_values()
            if values:
                written.append(write_csv(error_sweep(model, c.vdc(), values), _path(cfg, "error_sweep.csv")))
        else:
            basis, ftrace = factorize(B, c.nmf(), discount=model.discount)
            written.append(write_csv(ftrace.to_frame(), _path(cfg, "factorisation_trace.csv")))
            extra["factorisation"] = {"iterations": ftrace.iterations, "stop_reason": ftrace.stop_reason, "lam": ftrace.lam}
        cm = build_compressed(model, basis)
        rep = error_report(model, basis, compressed=cm)
        rep.reconstruction_residual = reconstruction_residual(basis, B)
        written += [_save(basis, cfg, BASIS), _save(cm, cfg, COMPRESSED), write_json(rep.to_dict(), _path(cfg, ERROR_REPORT))]
        extra["k"] = basis.k
        logger.info("compressed %d states to %d (eps_R=%.3g, eps_T=%.3g)", model.n_states, basis.k, rep.eps_R, rep.eps_T)
    t_compress = time.perf_counter() - t1

    written.append(
        _update_manifest(
            cfg, "compress", time.perf_counter() - t0, written, times={"sample": t_sample, "compress": t_compress}, **extra
        )
    )
    return written


def _save(obj: Any, cfg: ExperimentConfig, name: str) -> str:
    return save_artifact(obj, _path(cfg, name))


# ---------------------------------------------------------------------------
# solve


def _points(cfg: ExperimentConfig) -> BeliefMatrix:
    B = load_artifact(_require(cfg, BELIEFS, "compress"))
    if cfg.solver.points is not None and cfg.solver.points < B.m:
        B = B.subset(np.arange(cfg.solver.points), points=cfg.solver.points)
    return B


def trace_frame(trace: SolveTrace, verdict: str) -> pd.DataFrame:
    """Stage table whose last row carries the verdict."""
    df = trace.to_frame()
    df["status"] = "running"
    if len(df):
        df.loc[df.index[-1], "status"] = verdict
    return df


def _solve(proc: Any, cfg: ExperimentConfig, threads: int) -> SolveResult:
    sc = cfg.solver
    return perseus_solve(
        proc,
        max_stages=sc.max_stages,
        seed=sc.seed,
        value_floor_init=sc.value_floor_init,
        tol=sc.tol,
        prune_vectors=sc.prune,
        threads=threads,
    )


def _verdict_record(res: SolveResult, verdict: str) -> Dict[str, Any]:
    tr = res.trace
    return {
        "verdict": verdict,
        "stop_reason": tr.stop_reason,
        "stages": len(tr.stages),
        "n_vectors": len(res.value_function),
        "guard_fired": tr.guard_fired,
        "flags": tr.flags,
    }


def run_solve(cfg: ExperimentConfig, threads: int = 1) -> List[str]:
    t0 = time.perf_counter()
    model = _load_model(cfg)
    B = _points(cfg)
    written: List[str] = []
    verdicts: Dict[str, Any] = {}
    times: Dict[str, float] = {}

    # (label, process, value function file, trace file, time key)
    runs: List[Tuple[str, Any, str, str, str]] = []
    if _compressed(cfg):
        cm: CompressedPomdp = load_artifact(_require(cfg, COMPRESSED, "compress"))
        runs.append((policy_label(cfg), compressed_process(model, cm, B), VALUE_FUNCTION, TRACE, "solve"))
        if cfg.solver.baseline:
            runs.append(("original", original_process(model, B), VALUE_FUNCTION_ORIGINAL, TRACE_ORIGINAL, "solve_original"))
    else:
        runs.append(("original", original_process(model, B), VALUE_FUNCTION, TRACE, "solve_original"))

    for label, proc, vf_name, trace_name, time_key in runs:
        t1 = time.perf_counter()
        res = _solve(proc, cfg, threads)
        times[time_key] = time.perf_counter() - t1
        verdict = divergence_verdict(res.trace)
        verdicts[label] = _verdict_record(res, verdict)
        written += [_save(res.value_function, cfg, vf_name), write_csv(trace_frame(res.trace, verdict), _path(cfg, trace_name))]
        logger.info("%s: %s", label, verdict)

    written.append(write_json(verdicts, _path(cfg, VERDICT)))
    written.append(_update_manifest(cfg, "solve", time.perf_counter() - t0, written, times=times))
    return written


# ---------------------------------------------------------------------------
# eval


def _policies(cfg: ExperimentConfig) -> List[Tuple[str, ValueFunction, Any]]:
    vf = load_artifact(_require(cfg, VALUE_FUNCTION, "solve"))
    if not _compressed(cfg):
        return [("original", vf, None)]
    cm: CompressedPomdp = load_artifact(_require(cfg, COMPRESSED, "compress"))
    out = [(policy_label(cfg), vf, cm.basis)]
    if os.path.isfile(_path(cfg, VALUE_FUNCTION_ORIGINAL)):
        out.append(("original", load_artifact(_path(cfg, VALUE_FUNCTION_ORIGINAL)), None))
    return out


def run_eval(cfg: ExperimentConfig, threads: int = 1) -> List[str]:
    t0 = time.perf_counter()
    model = _load_model(cfg)
    results = {label: simulate_policy(model, vf, basis, cfg.eval, threads) for label, vf, basis in _policies(cfg)}
    repeats = repeats_frame(results)
    written = [
        write_csv(repeats, _path(cfg, EVAL_REPEATS)),
        write_csv(summary_frame(repeats), _path(cfg, EVAL_SUMMARY)),
    ]
    elapsed = time.perf_counter() - t0
    written.append(_update_manifest(cfg, "eval", elapsed, written, times={"eval": elapsed}))
    return written


# ---------------------------------------------------------------------------
# diagnose


def _trace_from_csv(path: str, n_points: int, value_bound: float) -> SolveTrace:
    df = pd.read_csv(path)
    last = str(df["status"].iloc[-1]) if len(df) else "plateaued"
    stop = {"converged": "converged", "diverged": "diverged"}.get(last, "max_stages")
    stages = df[["stage", "sum_value", "n_vectors", "max_change"]].to_dict(orient="records")
    return SolveTrace(stages, stop, n_points, value_bound, guard_fired=last == "diverged")


def _scaling_summary(model: Pomdp, A: np.ndarray, gamma: ValueFunction, B: BeliefMatrix) -> DiagnosticReport:
    reps = [scaling_identity_check(model, A, gamma, B.column(j)) for j in range(B.m)]
    checked = [r for r in reps if r.passed is not None]
    failed = [r for r in checked if not r.passed]
    details = {"beliefs": B.m, "checked": len(checked), "failed": len(failed)}
    if not checked:
        return DiagnosticReport("scaling-identity", None, "not-applicable", details=details)
    margin = float(min(r.margin for r in checked))
    if failed:
        return DiagnosticReport("scaling-identity", False, "fail", margin, failed[0].witness, details)
    return DiagnosticReport("scaling-identity", True, "pass", margin, None, details)


def run_diagnose(cfg: ExperimentConfig, threads: int = 1) -> List[str]:
    t0 = time.perf_counter()
    model = _load_model(cfg)
    B = _points(cfg)
    Bd = B.subset(np.arange(min(cfg.diagnose.n_beliefs, B.m)))
    written: List[str] = []
    reports: List[DiagnosticReport] = []

    margin = None
    rep: Optional[CompressionErrorReport] = None
    if _compressed(cfg):
        rep = CompressionErrorReport(**read_json(_require(cfg, ERROR_REPORT, "compress")))
        margin = rep.contraction_margin
    trace = _trace_from_csv(_require(cfg, TRACE, "solve"), B.m, model.value_bound())
    reports.append(contraction_check(trace, margin if _compressed(cfg) else model.discount))

    if _compressed(cfg):
        cm: CompressedPomdp = load_artifact(_require(cfg, COMPRESSED, "compress"))
        basis = cm.basis
        gamma_c: ValueFunction = load_artifact(_require(cfg, VALUE_FUNCTION, "solve"))
        reports.append(pruning_witness_search(basis, Bd, cfg.diagnose.draws, cfg.diagnose.seed, threads))
        lifted = ValueFunction(gamma_c.vectors @ basis.F.T, gamma_c.actions, "original")
        reports.append(_scaling_summary(model, basis.projector(), lifted, Bd))
        if os.path.isfile(_path(cfg, VALUE_FUNCTION_ORIGINAL)):
            gamma: ValueFunction = load_artifact(_path(cfg, VALUE_FUNCTION_ORIGINAL))
            reports.append(value_gap_check(rep, basis, gamma, gamma_c, Bd))
            table = value_loss_decomposition(model, basis, gamma, gamma_c, Bd)
            written.append(write_csv(table, _path(cfg, "value_loss.csv")))
            ok = table[table["premise_ok"]]
            reports.append(
                DiagnosticReport(
                    "value-loss-identity",
                    None if ok.empty else bool(ok["residual"].max() <= 1e-6),
                    "not-applicable" if ok.empty else "reported",
                    margin=float("nan") if ok.empty else float(ok["residual"].max()),
                    details={"beliefs": len(table), "premise_ok": int(len(ok))},
                )
            )
        else:
            reports.append(
                DiagnosticReport("value-gap-bound", None, "not-applicable", details={"reason": "solver.baseline is false"})
            )

    for r in reports:
        if r.passed is False and r.witness is None:
            r.witness = {"details": r.details}
    written.append(write_jsonl([r.to_dict() for r in reports], _path(cfg, DIAGNOSTICS)))
    written.append(_update_manifest(cfg, "diagnose", time.perf_counter() - t0, written))
    return written


# ---------------------------------------------------------------------------
# report


def run_report(cfg: ExperimentConfig, threads: int = 1) -> List[str]:
    t0 = time.perf_counter()
    ensure_dir(out_dir(cfg))
    written: List[str] = []
    charts: List[str] = []

    table = None
    if os.path.isfile(_path(cfg, EVAL_REPEATS)):
        table = reward_table(summary_frame(pd.read_csv(_path(cfg, EVAL_REPEATS))))
        written.append(write_csv(table, _path(cfg, "table.csv")))

    sweep_path = _path(cfg, "error_sweep.csv")
    if os.path.isfile(sweep_path):
        sw = pd.read_csv(sweep_path)
        param = str(sw["parameter"].iloc[0]) if len(sw) else "parameter"
        svg = svg_line_chart(
            {"eps_R": (sw["value"], sw["eps_R"]), "eps_T": (sw["value"], sw["eps_T"])},
            "Compression error",
            param,
            "error",
            logy=True,
        )
        written.append(_write_text(svg, _path(cfg, "errors.svg")))
        charts.append("errors.svg")

    series = {}
    for label, name in ((policy_label(cfg), TRACE), ("original", TRACE_ORIGINAL)):
        if os.path.isfile(_path(cfg, name)) and label not in series:
            df = pd.read_csv(_path(cfg, name))
            series[label] = (df["stage"], df["sum_value"])
    if series:
        written.append(_write_text(svg_line_chart(series, "Expected value during value iteration", "stage", "sum of V over points"), _path(cfg, "trace.svg")))
        charts.append("trace.svg")

    manifest = read_json(_path(cfg, MANIFEST)) if os.path.isfile(_path(cfg, MANIFEST)) else {"config": flatten_config(cfg)}
    verdicts = {}
    if os.path.isfile(_path(cfg, VERDICT)):
        verdicts = {k: v["verdict"] for k, v in read_json(_path(cfg, VERDICT)).items()}
    errors = read_json(_path(cfg, ERROR_REPORT)) if os.path.isfile(_path(cfg, ERROR_REPORT)) else None
    diags = read_jsonl(_path(cfg, DIAGNOSTICS)) if os.path.isfile(_path(cfg, DIAGNOSTICS)) else []

    md = generate_report_md(manifest, table, verdicts, errors, diags, charts)
    written.append(_write_text(md + "\n", _path(cfg, "report.md")))
    written.append(_update_manifest(cfg, "report", time.perf_counter() - t0, written))
    return written


def _write_text(text: str, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path
