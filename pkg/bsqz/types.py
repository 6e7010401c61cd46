from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp


def _frozen(arr: Any) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


def _axis(arr: np.ndarray, i: int) -> int:
    """Length of axis i, 0 when the array has fewer axes."""
    return int(arr.shape[i]) if arr.ndim > i else 0


@dataclass(frozen=True, eq=False)
class Pomdp:
    """Discrete POMDP.

    transition[a, s, s'] = T(s'|s,a), observation[a, s', z] = Omega(z|s',a),
    reward[s, a] = R(s,a).
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    discount: float
    initial_belief: Optional[np.ndarray] = None
    states: Tuple[str, ...] = ()
    actions: Tuple[str, ...] = ()
    observations: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("transition", "observation", "reward"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.initial_belief is not None:
            object.__setattr__(self, "initial_belief", _frozen(self.initial_belief))
        object.__setattr__(self, "discount", float(self.discount))
        for name, n in (("states", self.n_states), ("actions", self.n_actions), ("observations", self.n_obs)):
            if not getattr(self, name):
                object.__setattr__(self, name, tuple(str(i) for i in range(n)))

    @property
    def n_states(self) -> int:
        return _axis(self.transition, 1)

    @property
    def n_actions(self) -> int:
        return _axis(self.transition, 0)

    @property
    def n_obs(self) -> int:
        return _axis(self.observation, 2)

    def start(self) -> np.ndarray:
        if self.initial_belief is None:
            return np.full(self.n_states, 1.0 / self.n_states)
        return np.array(self.initial_belief)

    def reward_bound(self) -> float:
        return float(np.abs(self.reward).max(initial=0.0))

    def value_bound(self) -> float:
        """max|R| / (1 - discount)."""
        return self.reward_bound() / (1.0 - self.discount)


@dataclass(frozen=True)
class ValidationIssue:
    kind: str
    location: Tuple[int, ...]
    message: str

    def __str__(self) -> str:
        loc = ",".join(str(i) for i in self.location)
        return f"{self.kind}[{loc}]: {self.message}"


@dataclass(frozen=True, eq=False)
class ObsWeightedTransitions:
    """maps[a][z][i, j] = T(s_j|a,s_i) * Omega(z|a,s_j); sparse entries are csr matrices."""

    maps: Tuple[Tuple[Any, ...], ...]
    n_states: int

    @property
    def n_actions(self) -> int:
        return len(self.maps)

    @property
    def n_obs(self) -> int:
        return len(self.maps[0]) if self.maps else 0

    @property
    def is_sparse(self) -> bool:
        return any(sp.issparse(m) for row in self.maps for m in row)

    def get(self, a: int, z: int) -> Any:
        return self.maps[a][z]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_actions, self.n_obs, self.n_states, self.n_states))
        for a, row in enumerate(self.maps):
            for z, m in enumerate(row):
                out[a, z] = m.toarray() if sp.issparse(m) else m
        return out

    def operator(self) -> Any:
        """Dense (A,Z,n,n) array, or the nested sparse maps when they are sparse."""
        if self.is_sparse:
            return [list(row) for row in self.maps]
        return self.dense()


@dataclass(eq=False)
class BeliefMatrix:
    beliefs: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return int(self.beliefs.shape[0])

    @property
    def m(self) -> int:
        return int(self.beliefs.shape[1])

    def column(self, j: int) -> np.ndarray:
        return self.beliefs[:, j]

    def subset(self, idx: Any, **provenance: Any) -> "BeliefMatrix":
        return BeliefMatrix(self.beliefs[:, idx], {**self.provenance, **provenance})


@dataclass(eq=False)
class NeighbourhoodGraph:
    selected: np.ndarray
    adjacency: List[np.ndarray]
    K: int

    @property
    def m(self) -> int:
        return len(self.adjacency)

    def edges(self) -> List[Tuple[int, int]]:
        return [(i, int(j)) for i, nb in enumerate(self.adjacency) for j in nb if i < j]


@dataclass(eq=False)
class CompressionBasis:
    F: np.ndarray
    F_dag: Optional[np.ndarray]
    method: str
    nonnegative: bool = False
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return int(self.F.shape[0])

    @property
    def k(self) -> int:
        return int(self.F.shape[1])

    def projector(self) -> np.ndarray:
        """A = F F_dag."""
        return self.F @ self.F_dag


@dataclass
class FactorisationTrace:
    objective: List[float]
    iterations: int
    stop_reason: str
    guarded: int = 0
    lam: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"iteration": np.arange(len(self.objective)), "objective": self.objective})


@dataclass(eq=False)
class CompressedPomdp:
    reward: np.ndarray
    maps: np.ndarray
    basis: CompressionBasis
    discount: float

    @property
    def k(self) -> int:
        return int(self.reward.shape[0])


@dataclass
class CompressionErrorReport:
    eps_R: float
    eps_T: float
    A_inf: float
    I_minus_A_inf: float
    contraction_margin: float
    v_sup: float
    value_gap_bound: Optional[float] = None
    bound_note: str = ""
    reconstruction_residual: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class AlphaVector:
    values: np.ndarray
    action: int


@dataclass(eq=False)
class ValueFunction:
    vectors: np.ndarray
    actions: np.ndarray
    space: str = "original"

    def __post_init__(self) -> None:
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @classmethod
    def single(cls, values: np.ndarray, action: int = 0, space: str = "original") -> "ValueFunction":
        return cls(np.asarray(values, dtype=float)[None, :], np.array([action]), space)

    def alpha(self, i: int) -> AlphaVector:
        return AlphaVector(self.vectors[i].copy(), int(self.actions[i]))

    def values(self, X: np.ndarray) -> np.ndarray:
        """V at each row of X."""
        return (np.atleast_2d(X) @ self.vectors.T).max(axis=1)

    def value(self, x: np.ndarray) -> float:
        return float(np.max(self.vectors @ x))


@dataclass(eq=False)
class LinearBeliefProcess:
    points: np.ndarray
    reward: np.ndarray
    maps: Any
    discount: float
    reward_bound: float
    reward_floor: float
    space: str = "original"

    @property
    def dim(self) -> int:
        return int(self.reward.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.reward.shape[1])

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])


@dataclass
class SolveTrace:
    stages: List[Dict[str, Any]]
    stop_reason: str
    n_points: int
    value_bound: float
    guard_fired: bool = False
    flags: List[str] = field(default_factory=list)

    def to_frame(self, with_time: bool = False) -> pd.DataFrame:
        cols = ["stage", "sum_value", "n_vectors", "max_change"] + (["wall_time"] if with_time else [])
        return pd.DataFrame(self.stages, columns=cols)

    def max_changes(self) -> np.ndarray:
        return np.array([s["max_change"] for s in self.stages], dtype=float)

    def ceiling(self) -> float:
        return self.value_bound * self.n_points


@dataclass
class SolveResult:
    value_function: ValueFunction
    trace: SolveTrace


@dataclass
class EvalResult:
    mean: float
    std: float
    per_repeat: List[float]
    discounted: bool = True
    n_trajectories: int = 0
    horizon: int = 0


@dataclass
class DiagnosticReport:
    check: str
    passed: Optional[bool]
    status: str
    margin: float = float("nan")
    witness: Optional[Dict[str, Any]] = None
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
