"""
Data models for the I-divergence NMF toolkit.

Matrix-valued models hold float64 numpy arrays that are copied and marked
read-only at construction, so a validated instance can be shared freely.
"""

from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from config import Settings, get_settings
from errors import DegenerateInputError, DomainError, UsageError

# Entries in [-CLAMP_TOLERANCE, 0) are parse round-off and become 0.
CLAMP_TOLERANCE = 1e-14
ROW_SUM_TOLERANCE = 1e-12
MONOTONE_SLACK = 1e-12


def as_nonnegative_array(values: Any, ndim: int, name: str) -> np.ndarray:
    """
    Copy `values` into a read-only float64 array and enforce nonnegativity.

    Args:
        values: Array-like input
        ndim: Required number of dimensions
        name: Label used in error messages

    Returns:
        Validated array with near-zero negatives clamped to 0
    """
    array = np.array(values, dtype=np.float64)
    if array.ndim != ndim:
        raise UsageError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if array.size == 0:
        raise UsageError(f"{name} must have at least one entry in every dimension")
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} contains non-finite entries", code="non_finite")
    if np.any(array < -CLAMP_TOLERANCE):
        i = tuple(int(x) for x in np.argwhere(array < -CLAMP_TOLERANCE)[0])
        raise DomainError(f"{name} has a negative entry {array[i]!r} at {i}")
    array[array < 0] = 0.0
    array.setflags(write=False)
    return array


class DataMatrix(BaseModel):
    """Elementwise nonnegative m x n data matrix with at least one positive entry."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(description="m x n nonnegative entries")

    @field_validator("values", mode="before")
    @classmethod
    def _validate_values(cls, value: Any) -> np.ndarray:
        array = as_nonnegative_array(value, 2, "data matrix")
        if not np.any(array > 0):
            raise DomainError("data matrix is identically zero", code="all_zero")
        return array

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def total(self) -> float:
        return float(self.values.sum())


class FactorPair(BaseModel):
    """
    Nonnegative factors (W, H) of the model WH.

    H is row stochastic: every row sums to 1 within ROW_SUM_TOLERANCE.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    W: np.ndarray = Field(description="m x k nonnegative matrix")
    H: np.ndarray = Field(description="k x n nonnegative row-stochastic matrix")

    @field_validator("W", "H", mode="before")
    @classmethod
    def _validate_factor(cls, value: Any, info: ValidationInfo) -> np.ndarray:
        return as_nonnegative_array(value, 2, info.field_name)

    @model_validator(mode="after")
    def _check_pair(self) -> "FactorPair":
        m, k = self.W.shape
        k_h, n = self.H.shape
        if k != k_h:
            raise UsageError(f"inner dimensions differ: W is {self.W.shape}, H is {self.H.shape}")
        if not 1 <= k <= min(m, n):
            raise UsageError(f"rank {k} outside [1, {min(m, n)}] for a {m} x {n} model")
        row_sums = self.H.sum(axis=1)
        zero_rows = np.flatnonzero(row_sums == 0)
        if zero_rows.size:
            raise DegenerateInputError(f"H row {zero_rows[0]} is identically zero", row=int(zero_rows[0]))
        worst = float(np.max(np.abs(row_sums - 1.0)))
        if worst > ROW_SUM_TOLERANCE:
            raise UsageError(f"H is not row stochastic (max row-sum deviation {worst:.3e})")
        return self

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def rank(self) -> int:
        return self.W.shape[1]


class InitStrategy(str, Enum):
    UNIFORM_RANDOM = "uniform_random"
    PROVIDED = "provided"


class StopReason(str, Enum):
    TOL_REACHED = "tol_reached"
    MAX_ITERS = "max_iters"
    STATIONARY = "stationary"


class SolverConfig(BaseModel):
    """Solver parameters for one factorization run."""

    model_config = ConfigDict(frozen=True)

    rank: int = Field(ge=1, description="Number of latent components k")
    max_iters: int = Field(default=1000, ge=1, description="Iteration budget per restart")
    rel_tol: float = Field(default=1e-9, ge=0.0, description="Relative divergence-change threshold")
    seed: int = Field(default=0, ge=0, le=2**64 - 1, description="Root seed for all restarts")
    init_strategy: InitStrategy = Field(default=InitStrategy.UNIFORM_RANDOM)
    min_init: float = Field(default=1e-2, gt=0.0, le=1.0, description="Lower bound of random initial entries")
    restarts: int = Field(default=1, ge=1, description="Independently seeded solves; best one wins")
    oracle: bool = Field(default=False, description="Record lifted identity checks every iteration")

    def check_shape(self, m: int, n: int) -> None:
        """Raise UsageError unless 1 <= rank <= min(m, n)."""
        if not 1 <= self.rank <= min(m, n):
            raise UsageError(f"rank {self.rank} outside [1, {min(m, n)}] for a {m} x {n} matrix")

    @classmethod
    def from_settings(cls, rank: int, settings: Optional[Settings] = None, **overrides: Any) -> "SolverConfig":
        """Build a config whose unset fields fall back to the environment settings."""
        settings = settings or get_settings()
        values: Dict[str, Any] = {
            "rank": rank,
            "max_iters": settings.default_max_iters,
            "rel_tol": settings.default_rel_tol,
            "min_init": settings.default_min_init,
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


class ConvergenceRecord(BaseModel):
    """One iteration of the solver: the step from iterate n-1 to iterate n."""

    iteration: int = Field(ge=1)
    divergence: float = Field(description="D(V || W^n H^n)")
    objective: float = Field(description="F(W^n, H^n)")
    residual: float = Field(description="Displacement max|f - update_step(f)| of the previous iterate")
    gain_p: Optional[float] = Field(default=None, description="D(P_n || P_{n+1}) in oracle mode")
    gain_q: Optional[float] = Field(default=None, description="D(Q_{n+1} || Q_n) in oracle mode")
    lifted_gap: Optional[float] = Field(default=None, description="Max gap lifted vs matrix update")
    pythagorean_p: Optional[float] = Field(default=None)
    pythagorean_q: Optional[float] = Field(default=None)
    elapsed_seconds: float = Field(default=0.0, ge=0.0)

    def trace_line(self) -> Dict[str, float]:
        """Deterministic subset written to trace.jsonl (no wall-clock fields)."""
        line: Dict[str, float] = {
            "iter": self.iteration,
            "divergence": self.divergence,
            "objective": self.objective,
            "residual": self.residual,
        }
        for key in ("gain_p", "gain_q", "lifted_gap"):
            value = getattr(self, key)
            if value is not None:
                line[key] = value
        return line


class ConvergenceTrace(BaseModel):
    """Per-iteration history of a run."""

    records: List[ConvergenceRecord] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: ConvergenceRecord) -> None:
        self.records.append(record)

    @property
    def last(self) -> Optional[ConvergenceRecord]:
        return self.records[-1] if self.records else None

    def divergences(self) -> np.ndarray:
        return np.array([record.divergence for record in self.records])

    def objectives(self) -> np.ndarray:
        return np.array([record.objective for record in self.records])

    def is_monotone(self, slack: float = MONOTONE_SLACK) -> bool:
        """Divergence nonincreasing and objective nondecreasing, both within `slack`."""
        divergences = self.divergences()
        objectives = self.objectives()
        if divergences.size < 2:
            return True
        return bool(np.all(np.diff(divergences) <= slack) and np.all(np.diff(objectives) >= -slack))


class FactorizationResult(BaseModel):
    """Outcome of a solver run (the best restart when several ran)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    factors: FactorPair
    trace: ConvergenceTrace
    iterations_run: int = Field(ge=1)
    stop_reason: StopReason
    final_divergence: float = Field(ge=0.0)
    seed: int = Field(ge=0)
    restart_index: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_trace(self) -> "FactorizationResult":
        if len(self.trace) != self.iterations_run:
            raise UsageError(f"trace has {len(self.trace)} entries for {self.iterations_run} iterations")
        if self.trace.last is not None and self.trace.last.divergence != self.final_divergence:
            raise UsageError("final divergence differs from the last trace entry")
        return self


class RunManifest(BaseModel):
    """Provenance record written next to the factor files."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    input_sha256: str = Field(description="SHA-256 of the input file bytes")
    input_shape: Tuple[int, int]
    config: SolverConfig
    library_version: str
    stop_reason: StopReason
    final_divergence: float
    iterations_run: int
    wall_time_seconds: float = Field(ge=0.0)
    restart_index: int = Field(default=0, ge=0)
    seed: int = Field(ge=0)
    created_at: datetime = Field(default_factory=datetime.now)
