from __future__ import annotations

import json
import logging
import math
import os
import re
import struct
import zlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from bsqz.errors import (
    ArtifactChecksumError,
    ArtifactError,
    ArtifactVersionError,
    PomdpSemanticError,
    PomdpSyntaxError,
)
from bsqz.pomdp import validate
from bsqz.types import BeliefMatrix, CompressedPomdp, CompressionBasis, Pomdp, ValueFunction

logger = logging.getLogger(__name__)

MAGIC = b"BSQZ"
VERSION = 1
TAGS = {"belief_matrix": 1, "basis": 2, "compressed": 3, "value_function": 4, "pomdp": 5}
TEXT_EXTS = {".pomdp", ".txt"}
BINARY_EXTS = {".bsqz"}

Artifact = Union[BeliefMatrix, CompressionBasis, CompressedPomdp, ValueFunction, Pomdp]


@dataclass(frozen=True)
class ModelFile:
    path: str
    format: str  # "pomdp-text" | "native-binary"


def sniff_format(path: str) -> ModelFile:
    ext = os.path.splitext(path)[1].lower()
    if ext in BINARY_EXTS:
        return ModelFile(path, "native-binary")
    if ext in TEXT_EXTS:
        return ModelFile(path, "pomdp-text")
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    return ModelFile(path, "native-binary" if head == MAGIC else "pomdp-text")


def load_model(path: str, tolerance: float = 1e-3) -> Pomdp:
    mf = sniff_format(path)
    if mf.format == "native-binary":
        obj = load_artifact(path)
        if not isinstance(obj, Pomdp):
            raise ArtifactError(f"{path} holds a {type(obj).__name__}, not a model")
        return obj
    return parse_pomdp(path, tolerance=tolerance)


# ---------------------------------------------------------------------------
# community text format

_HEADER_KEYS = ("discount", "values", "states", "actions", "observations")
_KEYWORDS = set(_HEADER_KEYS) | {"start", "T", "O", "R"}
_TOKEN = re.compile(r":|[^\s:]+")


@dataclass
class _Record:
    key: str
    modifier: Optional[str]
    tokens: List[str]
    line: int


def _tokenize_records(text: str) -> List[_Record]:
    records: List[_Record] = []
    cur: Optional[_Record] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = _TOKEN.findall(raw.split("#", 1)[0])
        if not toks:
            continue
        head = toks[0]
        if head in _KEYWORDS and len(toks) > 1 and toks[1] == ":":
            cur = _Record(head, None, toks[2:], lineno)
            records.append(cur)
        elif head == "start" and len(toks) > 2 and toks[1] in ("include", "exclude") and toks[2] == ":":
            cur = _Record(head, toks[1], toks[3:], lineno)
            records.append(cur)
        elif cur is None:
            raise PomdpSyntaxError(f"unexpected token {head!r} before any entry", lineno)
        else:
            cur.tokens.extend(toks)
    return records


def _float(tok: str, line: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise PomdpSyntaxError(f"expected a number, got {tok!r}", line) from None


def _floats(toks: Sequence[str], line: int) -> np.ndarray:
    return np.array([_float(t, line) for t in toks], dtype=float)


def _names(rec: _Record) -> Tuple[str, ...]:
    toks = [t for t in rec.tokens if t != ":"]
    if not toks:
        raise PomdpSyntaxError(f"'{rec.key}' needs a count or a list of names", rec.line)
    if len(toks) == 1 and toks[0].isdigit():
        n = int(toks[0])
        if n < 1:
            raise PomdpSemanticError(f"'{rec.key}' count must be positive", rec.line)
        return tuple(str(i) for i in range(n))
    if len(set(toks)) != len(toks):
        raise PomdpSemanticError(f"duplicate names in '{rec.key}'", rec.line)
    return tuple(toks)


class _Indexer:
    def __init__(self, kind: str, names: Tuple[str, ...]):
        self.kind = kind
        self.names = names
        self.lookup = {n: i for i, n in enumerate(names)}

    def __call__(self, tok: str, line: int) -> List[int]:
        if tok == "*":
            return list(range(len(self.names)))
        if tok in self.lookup:
            return [self.lookup[tok]]
        if tok.isdigit() and int(tok) < len(self.names):
            return [int(tok)]
        raise PomdpSemanticError(f"unknown {self.kind} {tok!r}", line)


def _split_fields(rec: _Record) -> Tuple[List[str], List[str]]:
    groups: List[List[str]] = [[]]
    for t in rec.tokens:
        if t == ":":
            groups.append([])
        else:
            groups[-1].append(t)
    if any(not g for g in groups):
        raise PomdpSyntaxError(f"empty field in '{rec.key}' entry", rec.line)
    return [g[0] for g in groups], groups[-1][1:]


def _matrix(data: List[str], shape: Tuple[int, int], rec: _Record, allow_identity: bool) -> np.ndarray:
    if data == ["uniform"]:
        return np.full(shape, 1.0 / shape[1])
    if data == ["identity"]:
        if not allow_identity or shape[0] != shape[1]:
            raise PomdpSemanticError("'identity' needs a square matrix", rec.line)
        return np.eye(shape[0])
    vals = _floats(data, rec.line)
    if vals.size != shape[0] * shape[1]:
        raise PomdpSyntaxError(f"expected {shape[0] * shape[1]} values, got {vals.size}", rec.line)
    return vals.reshape(shape)


def _row(data: List[str], n: int, rec: _Record) -> np.ndarray:
    if data == ["uniform"]:
        return np.full(n, 1.0 / n)
    vals = _floats(data, rec.line)
    if vals.size != n:
        raise PomdpSyntaxError(f"expected {n} values, got {vals.size}", rec.line)
    return vals


def _scalar(data: List[str], rec: _Record) -> float:
    if len(data) != 1:
        raise PomdpSyntaxError(f"expected a single value, got {len(data)}", rec.line)
    return _float(data[0], rec.line)


def _renormalise(
    arr: np.ndarray,
    kind: str,
    axis_names: Tuple[Tuple[str, ...], Tuple[str, ...]],
    tol: float,
    lines: Optional[np.ndarray] = None,
) -> None:
    """Rescale rows to sum 1; `lines` holds the last record line that wrote each (a, s) row."""
    sums = arr.sum(axis=2)
    acts, states = axis_names

    def where(a: int, s: int) -> Optional[int]:
        return int(lines[a, s]) if lines is not None and lines[a, s] > 0 else None

    for a, s in np.argwhere((arr < 0).any(axis=2)):
        raise PomdpSemanticError(f"{kind} row (action {acts[a]}, state {states[s]}) has a negative entry", where(a, s))
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if bad.size:
        a, s = bad[0]
        raise PomdpSemanticError(
            f"{kind} row (action {acts[a]}, state {states[s]}) sums to {sums[a, s]:.6g}, not 1",
            where(a, s),
        )
    arr /= sums[:, :, None]


def parse_pomdp(path: str, tolerance: float = 1e-3) -> Pomdp:
    """Parse a model in the community text format.

    Rows within `tolerance` of stochastic are renormalised; rows further
    off are rejected with their location.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_pomdp_text(text, tolerance=tolerance)


def parse_pomdp_text(text: str, tolerance: float = 1e-3) -> Pomdp:
    records = _tokenize_records(text)
    header: Dict[str, _Record] = {}
    for rec in records:
        if rec.key in _HEADER_KEYS:
            header[rec.key] = rec

    for key in ("discount", "states", "actions", "observations"):
        if key not in header:
            raise PomdpSyntaxError(f"missing '{key}:' header")

    d = header["discount"]
    if len(d.tokens) != 1:
        raise PomdpSyntaxError("'discount' takes one value", d.line)
    discount = _float(d.tokens[0], d.line)
    if not (0.0 < discount < 1.0):
        raise PomdpSemanticError(f"discount {discount} must lie in (0, 1)", d.line)

    sign = 1.0
    if "values" in header:
        v = header["values"]
        if v.tokens not in (["reward"], ["cost"]):
            raise PomdpSyntaxError("'values' must be 'reward' or 'cost'", v.line)
        sign = -1.0 if v.tokens == ["cost"] else 1.0

    states = _names(header["states"])
    actions = _names(header["actions"])
    observations = _names(header["observations"])
    S, A, Z = len(states), len(actions), len(observations)
    si, ai, zi = _Indexer("state", states), _Indexer("action", actions), _Indexer("observation", observations)

    T = np.zeros((A, S, S))
    O = np.zeros((A, S, Z))
    T_line = np.zeros((A, S), dtype=np.int64)
    O_line = np.zeros((A, S), dtype=np.int64)
    reward_entries: List[Tuple[List[int], List[int], Optional[List[int]], Optional[List[int]], Any]] = []
    start: Optional[np.ndarray] = None

    for rec in records:
        if rec.key in _HEADER_KEYS:
            continue
        if rec.key == "start":
            start = _parse_start(rec, si, S)
            continue
        ids, data = _split_fields(rec)
        if rec.key == "T":
            if len(ids) == 3:
                acts, srcs = ai(ids[0], rec.line), si(ids[1], rec.line)
                T[np.ix_(acts, srcs, si(ids[2], rec.line))] = _scalar(data, rec)
                T_line[np.ix_(acts, srcs)] = rec.line
            elif len(ids) == 2:
                acts, srcs = ai(ids[0], rec.line), si(ids[1], rec.line)
                T[np.ix_(acts, srcs)] = _row(data, S, rec)
                T_line[np.ix_(acts, srcs)] = rec.line
            elif len(ids) == 1:
                acts = ai(ids[0], rec.line)
                T[acts] = _matrix(data, (S, S), rec, allow_identity=True)
                T_line[acts] = rec.line
            else:
                raise PomdpSyntaxError("too many fields in 'T' entry", rec.line)
        elif rec.key == "O":
            if len(ids) == 3:
                acts, dsts = ai(ids[0], rec.line), si(ids[1], rec.line)
                O[np.ix_(acts, dsts, zi(ids[2], rec.line))] = _scalar(data, rec)
                O_line[np.ix_(acts, dsts)] = rec.line
            elif len(ids) == 2:
                acts, dsts = ai(ids[0], rec.line), si(ids[1], rec.line)
                O[np.ix_(acts, dsts)] = _row(data, Z, rec)
                O_line[np.ix_(acts, dsts)] = rec.line
            elif len(ids) == 1:
                acts = ai(ids[0], rec.line)
                O[acts] = _matrix(data, (S, Z), rec, allow_identity=True)
                O_line[acts] = rec.line
            else:
                raise PomdpSyntaxError("too many fields in 'O' entry", rec.line)
        elif rec.key == "R":
            if len(ids) < 2 or len(ids) > 4:
                raise PomdpSyntaxError("'R' entry needs 2 to 4 fields", rec.line)
            acts = ai(ids[0], rec.line)
            srcs = si(ids[1], rec.line)
            if len(ids) == 4:
                dst = None if ids[2] == "*" else si(ids[2], rec.line)
                obs = None if ids[3] == "*" else zi(ids[3], rec.line)
                reward_entries.append((acts, srcs, dst, obs, _scalar(data, rec)))
            elif len(ids) == 3:
                dst = None if ids[2] == "*" else si(ids[2], rec.line)
                reward_entries.append((acts, srcs, dst, list(range(Z)), _row(data, Z, rec)))
            else:
                reward_entries.append((acts, srcs, list(range(S)), list(range(Z)), _matrix(data, (S, Z), rec, False)))

    _renormalise(T, "transition", (actions, states), tolerance, T_line)
    _renormalise(O, "observation", (actions, states), tolerance, O_line)
    R = sign * _marginal_reward(reward_entries, T, O)

    model = Pomdp(T, O, R, discount, start, states, actions, observations)
    issues = validate(model)
    if issues:
        raise PomdpSemanticError("; ".join(str(i) for i in issues))
    logger.info("parsed model: %d states, %d actions, %d observations, discount %g", S, A, Z, discount)
    return model


def _parse_start(rec: _Record, si: _Indexer, S: int) -> np.ndarray:
    toks = [t for t in rec.tokens if t != ":"]
    if rec.modifier is not None:
        chosen = sorted({i for t in toks for i in si(t, rec.line)})
        mask = np.zeros(S, dtype=bool)
        mask[chosen] = True
        if rec.modifier == "exclude":
            mask = ~mask
        if not mask.any():
            raise PomdpSemanticError("start set is empty", rec.line)
        return mask / mask.sum()
    if toks == ["uniform"]:
        return np.full(S, 1.0 / S)
    if len(toks) == S and all(re.fullmatch(r"[-+0-9.eE]+", t) for t in toks):
        b = _floats(toks, rec.line)
        if (b >= 0).all() and abs(b.sum() - 1.0) <= 1e-6:
            return b / b.sum()
    if len(toks) == 1:
        b = np.zeros(S)
        b[si(toks[0], rec.line)] = 1.0
        return b
    raise PomdpSemanticError("start belief is neither a distribution nor a state", rec.line)


def _marginal_reward(entries: List[Tuple[Any, ...]], T: np.ndarray, O: np.ndarray) -> np.ndarray:
    """R(s,a) as the expectation of r(a,s,s',z) under T and Omega; later entries override earlier ones."""
    A, S, _ = T.shape
    Z = O.shape[2]
    if all(dst is None and obs is None for _, _, dst, obs, _ in entries):
        R = np.zeros((S, A))
        for acts, srcs, _, _, value in entries:
            R[np.ix_(srcs, acts)] = value
        return R

    r4 = np.zeros((A, S, S, Z))
    for acts, srcs, dst, obs, value in entries:
        dst = list(range(S)) if dst is None else dst
        obs = list(range(Z)) if obs is None else obs
        if np.ndim(value) == 2:
            value = value[np.ix_(dst, obs)]
        elif np.ndim(value) == 1:
            value = value[obs]
        r4[np.ix_(acts, srcs, dst, obs)] = value
    return np.einsum("asp,apz,aspz->sa", T, O, r4)


# ---------------------------------------------------------------------------
# native binary artifacts


# JSON has no NaN or infinity; they are written as these strings
_NON_FINITE_OUT = ("NaN", "Infinity", "-Infinity")
_NON_FINITE_IN = {"NaN": float("nan"), "Infinity": float("inf"), "-Infinity": float("-inf")}


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return _NON_FINITE_OUT[0 if math.isnan(x) else (1 if x > 0 else 2)]
    return x


def _unjsonable(x: Any) -> Any:
    """Inverse of _jsonable for the non-finite float tokens."""
    if isinstance(x, dict):
        return {k: _unjsonable(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_unjsonable(v) for v in x]
    if isinstance(x, str) and x in _NON_FINITE_IN:
        return _NON_FINITE_IN[x]
    return x


def _encode(obj: Artifact) -> Tuple[int, Dict[str, np.ndarray], Dict[str, Any]]:
    if isinstance(obj, BeliefMatrix):
        return TAGS["belief_matrix"], {"beliefs": obj.beliefs}, {"provenance": obj.provenance}
    if isinstance(obj, CompressionBasis):
        arrays = {"F": obj.F}
        if obj.F_dag is not None:
            arrays["F_dag"] = obj.F_dag
        return TAGS["basis"], arrays, _basis_meta(obj)
    if isinstance(obj, CompressedPomdp):
        arrays = {"reward": obj.reward, "maps": obj.maps, "F": obj.basis.F}
        if obj.basis.F_dag is not None:
            arrays["F_dag"] = obj.basis.F_dag
        return TAGS["compressed"], arrays, {"discount": obj.discount, **_basis_meta(obj.basis)}
    if isinstance(obj, ValueFunction):
        return TAGS["value_function"], {"vectors": obj.vectors, "actions": obj.actions.astype(float)}, {"space": obj.space}
    if isinstance(obj, Pomdp):
        arrays = {"transition": obj.transition, "observation": obj.observation, "reward": obj.reward}
        if obj.initial_belief is not None:
            arrays["initial_belief"] = obj.initial_belief
        meta = {
            "discount": obj.discount,
            "states": list(obj.states),
            "actions": list(obj.actions),
            "observations": list(obj.observations),
        }
        return TAGS["pomdp"], arrays, meta
    raise TypeError(f"cannot persist {type(obj).__name__}")


def _basis_meta(b: CompressionBasis) -> Dict[str, Any]:
    return {"method": b.method, "nonnegative": bool(b.nonnegative), "provenance": b.provenance}


def _decode(tag: int, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Artifact:
    if tag == TAGS["belief_matrix"]:
        return BeliefMatrix(arrays["beliefs"], meta.get("provenance", {}))
    if tag == TAGS["basis"]:
        return CompressionBasis(arrays["F"], arrays.get("F_dag"), meta["method"], meta["nonnegative"], meta["provenance"])
    if tag == TAGS["compressed"]:
        basis = CompressionBasis(arrays["F"], arrays.get("F_dag"), meta["method"], meta["nonnegative"], meta["provenance"])
        return CompressedPomdp(arrays["reward"], arrays["maps"], basis, meta["discount"])
    if tag == TAGS["value_function"]:
        return ValueFunction(arrays["vectors"], arrays["actions"].astype(np.int64), meta["space"])
    if tag == TAGS["pomdp"]:
        return Pomdp(
            arrays["transition"],
            arrays["observation"],
            arrays["reward"],
            meta["discount"],
            arrays.get("initial_belief"),
            tuple(meta["states"]),
            tuple(meta["actions"]),
            tuple(meta["observations"]),
        )
    raise ArtifactError(f"unknown artifact type tag {tag}")


def save_artifact(obj: Artifact, path: str) -> str:
    tag, arrays, meta = _encode(obj)
    parts = [MAGIC, struct.pack("<III", VERSION, tag, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    meta_raw = json.dumps(_jsonable(meta), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_raw)) + meta_raw)
    body = b"".join(parts)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    return path


def load_artifact(path: str) -> Artifact:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 20 or data[:4] != MAGIC:
        raise ArtifactError(f"{path} is not a bsqz artifact")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ArtifactChecksumError(f"{path}: checksum mismatch")
    version, tag, n_arrays = struct.unpack_from("<III", body, 4)
    if version != VERSION:
        raise ArtifactVersionError(f"{path}: format version {version}, expected {VERSION}")

    pos = 16
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", body, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if count == 0:
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape).astype(float)
        pos += 8 * count
    (mlen,) = struct.unpack_from("<I", body, pos)
    meta = _unjsonable(json.loads(body[pos + 4 : pos + 4 + mlen].decode("utf-8")))
    return _decode(tag, arrays, meta)


# ---------------------------------------------------------------------------
# CSV


def write_csv(df: pd.DataFrame, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


def to_frame(obj: Artifact) -> pd.DataFrame:
    if isinstance(obj, BeliefMatrix):
        return pd.DataFrame(obj.beliefs, columns=[f"b{j}" for j in range(obj.m)])
    if isinstance(obj, CompressionBasis):
        return pd.DataFrame(obj.F, columns=[f"f{j}" for j in range(obj.k)])
    if isinstance(obj, CompressedPomdp):
        return pd.DataFrame(obj.reward, columns=[f"a{a}" for a in range(obj.reward.shape[1])])
    if isinstance(obj, ValueFunction):
        df = pd.DataFrame(obj.vectors, columns=[f"x{j}" for j in range(obj.vectors.shape[1])])
        df.insert(0, "action", obj.actions)
        return df
    raise TypeError(f"no CSV form for {type(obj).__name__}")


def export_csv(obj: Artifact, path: str) -> str:
    return write_csv(to_frame(obj), path)


# ---------------------------------------------------------------------------
# JSON


def write_json(obj: Any, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(obj), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return _unjsonable(json.load(f))


def write_jsonl(records: Sequence[Any], path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(_jsonable(r), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str) -> List[Any]:
    with open(path, "r", encoding="utf-8") as f:
        return [_unjsonable(json.loads(line)) for line in f if line.strip()]
