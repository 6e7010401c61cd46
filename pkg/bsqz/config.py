from __future__ import annotations

import hashlib
import os
from typing import Any, Dict, Iterable, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from bsqz.errors import ConfigError

VdcMode = Literal["lossless-rank", "lossless-residual", "lossy-greedy"]
Lambda = Union[float, Literal["auto"]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class VdcConfig(_Strict):
    mode: VdcMode = "lossless-rank"
    tau: Optional[float] = None
    k: Optional[int] = None
    rank_tol: Optional[float] = None

    @model_validator(mode="after")
    def _mode_fields(self) -> "VdcConfig":
        if self.mode == "lossless-residual" and (self.tau is None or self.tau <= 0):
            raise ValueError("lossless-residual needs tau > 0")
        if self.mode == "lossy-greedy" and (self.k is None or self.k < 1):
            raise ValueError("lossy-greedy needs k >= 1")
        if self.rank_tol is not None and self.rank_tol < 0:
            raise ValueError("rank_tol must be >= 0")
        return self


class NmfConfig(_Strict):
    variant: Literal["onmf", "lpnmf", "pnmf"] = "pnmf"
    k: int = Field(ge=1)
    lam: Lambda = 0.0
    max_iters: int = Field(2000, ge=1)
    tol: float = Field(1e-7, gt=0)
    seed: int = 0
    delta: float = Field(0.0, ge=0)
    knn: int = Field(5, ge=1)
    mu: float = Field(0.1, ge=0)
    normalise_columns: bool = False

    @field_validator("lam")
    @classmethod
    def _lam_nonneg(cls, v: Lambda) -> Lambda:
        if v != "auto" and v < 0:
            raise ValueError("lam must be >= 0 or 'auto'")
        return v


class SamplerConfig(_Strict):
    m: int = Field(2000, ge=1)
    seed: int = 0
    horizon_cap: int = Field(250, ge=1)


class CompressorConfig(_Strict):
    variant: Literal["none", "vdc", "onmf", "lpnmf", "pnmf"] = "pnmf"
    k: Optional[int] = Field(None, ge=1)
    mode: VdcMode = "lossless-rank"
    tau: Optional[float] = None
    rank_tol: Optional[float] = None
    lam: Lambda = "auto"
    max_iters: int = Field(2000, ge=1)
    tol: float = Field(1e-7, gt=0)
    seed: int = 0
    delta: float = Field(0.0, ge=0)
    knn: int = Field(5, ge=1)
    mu: float = Field(0.1, ge=0)
    normalise_columns: bool = False
    sweep: str = ""

    def vdc(self) -> VdcConfig:
        return VdcConfig(mode=self.mode, tau=self.tau, k=self.k, rank_tol=self.rank_tol)

    def nmf(self) -> NmfConfig:
        if self.k is None:
            raise ConfigError(f"compressor.k is required for {self.variant}")
        return NmfConfig(
            variant=self.variant,
            k=self.k,
            lam=self.lam,
            max_iters=self.max_iters,
            tol=self.tol,
            seed=self.seed,
            delta=self.delta,
            knn=self.knn,
            mu=self.mu,
            normalise_columns=self.normalise_columns,
        )

    def sweep_values(self) -> List[float]:
        try:
            return [float(x) for x in self.sweep.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"compressor.sweep is not a comma-separated list of numbers: {self.sweep!r}") from None


class SolverConfig(_Strict):
    max_stages: int = Field(500, ge=1)
    seed: int = 0
    tol: float = Field(1e-4, gt=0)
    value_floor_init: bool = True
    prune: bool = True
    points: Optional[int] = Field(None, ge=1)
    baseline: bool = False


class EvalProtocol(_Strict):
    n_trajectories: int = Field(1000, ge=1)
    horizon: int = Field(251, ge=1)
    n_repeats: int = Field(5, ge=1)
    seed: int = 0


class DiagnoseConfig(_Strict):
    draws: int = Field(10000, ge=1)
    seed: int = 0
    n_beliefs: int = Field(200, ge=1)


class ExperimentConfig(_Strict):
    model: str
    out: Optional[str] = None
    threads: Optional[int] = Field(None, ge=1)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    compressor: CompressorConfig = Field(default_factory=CompressorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    eval: EvalProtocol = Field(default_factory=EvalProtocol)
    diagnose: DiagnoseConfig = Field(default_factory=DiagnoseConfig)


# ---------------------------------------------------------------------------
# flat key = value form


def _assign(tree: Dict[str, Any], key: str, value: str) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"key {key!r} conflicts with scalar {p!r}")
        node = nxt
    node[parts[-1]] = value


def parse_assignment(line: str, lineno: Optional[int] = None) -> tuple[str, str]:
    where = f"line {lineno}: " if lineno is not None else ""
    if "=" not in line:
        raise ConfigError(f"{where}expected 'key = value', got {line!r}")
    key, value = line.split("=", 1)
    key, value = key.strip(), value.strip()
    if not key:
        raise ConfigError(f"{where}empty key")
    return key, value


def parse_flat(text: str) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        _assign(tree, *parse_assignment(line, lineno))
    return tree


def _build(tree: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return _build(parse_flat(f.read()))


def _flatten(prefix: str, value: Any, out: Dict[str, Any]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    elif value is not None:
        out[prefix] = value


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    flat: Dict[str, Any] = {}
    _flatten("", cfg.model_dump(), flat)
    return "".join(f"{k} = {_fmt(flat[k])}\n" for k in sorted(flat))


def save_config(cfg: ExperimentConfig, path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(cfg))
    return path


def apply_overrides(cfg: ExperimentConfig, assignments: Iterable[str]) -> ExperimentConfig:
    tree = parse_flat(dump_config(cfg))
    for item in assignments:
        _assign(tree, *parse_assignment(item))
    return _build(tree)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def check_paths(cfg: ExperimentConfig) -> None:
    if not os.path.isfile(cfg.model):
        raise ConfigError(f"model file not found: {cfg.model}")


def flatten_config(cfg: ExperimentConfig) -> Dict[str, str]:
    """Dotted key -> value text, as written by `dump_config`."""
    return dict(parse_assignment(line) for line in dump_config(cfg).splitlines())
