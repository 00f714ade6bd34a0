"""
Lifted three-index formulation of I-divergence NMF.

A data matrix P (m x n) is lifted to tensors T(i, l, j) over an extra
latent index l. Two sets meet here:

    P-set  tensors whose marginal sum_l T(i, l, j) equals P
    Q-set  product tensors Q_minus(i, l) * Q_plus(l, j) with Q_plus row stochastic

Alternately projecting onto the two sets in I-divergence reproduces the
multiplicative (W, H) update exactly. This module is a verifier: tensors are
dense and guarded by `Settings.tensor_size_cap`, and the production solver
in factorizer.py never builds them.
"""

import logging
import math
from typing import Any, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import get_settings
from divergence import divergence_of_arrays, i_divergence
from errors import DegenerateLatentError, PreconditionError, SingularityError, UsageError
from models import ROW_SUM_TOLERANCE, DataMatrix, FactorPair, as_nonnegative_array

logger = logging.getLogger(__name__)

MARGINAL_TOLERANCE = 1e-10
WITNESS_TOLERANCE = 1e-10
JOINT_NORMALIZATION_TOLERANCE = 1e-12
DOUBLE_MINIMIZATION_SIZE_LIMIT = 512
DOUBLE_MINIMIZATION_AGREEMENT = 1e-8


def check_tensor_size(m: int, k: int, n: int, cap: Optional[int] = None) -> None:
    """Raise UsageError when an m x k x n tensor exceeds the configured cap."""
    cap = cap if cap is not None else get_settings().tensor_size_cap
    if m * k * n > cap:
        raise UsageError(f"lifted tensor {m} x {k} x {n} exceeds the size cap {cap}")


class Tensor3(BaseModel):
    """Nonnegative m x k x n array."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray = Field(description="Entries T(i, l, j)")

    @field_validator("values", mode="before")
    @classmethod
    def _validate_values(cls, value: Any) -> np.ndarray:
        return as_nonnegative_array(value, 3, "tensor")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def marginal_values(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def marginal(self) -> DataMatrix:
        return DataMatrix(values=self.marginal_values())


class LiftedQ(BaseModel):
    """Factors (Q_minus, Q_plus) of a product tensor in the Q-set."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q_minus: np.ndarray = Field(description="m x k nonnegative matrix")
    q_plus: np.ndarray = Field(description="k x n nonnegative row-stochastic matrix")

    @field_validator("q_minus", "q_plus", mode="before")
    @classmethod
    def _validate_factor(cls, value: Any) -> np.ndarray:
        return as_nonnegative_array(value, 2, "lifted factor")

    @model_validator(mode="after")
    def _check_factors(self) -> "LiftedQ":
        if self.q_minus.shape[1] != self.q_plus.shape[0]:
            raise UsageError(f"latent dimensions differ: {self.q_minus.shape} vs {self.q_plus.shape}")
        worst = float(np.max(np.abs(self.q_plus.sum(axis=1) - 1.0)))
        if worst > ROW_SUM_TOLERANCE:
            raise UsageError(f"Q_plus is not row stochastic (max row-sum deviation {worst:.3e})")
        return self

    @classmethod
    def from_factors(cls, f: FactorPair) -> "LiftedQ":
        return cls(q_minus=f.W, q_plus=f.H)

    def to_factors(self) -> FactorPair:
        return FactorPair(W=self.q_minus, H=self.q_plus)

    @property
    def dims(self) -> tuple:
        return (self.q_minus.shape[0], self.q_minus.shape[1], self.q_plus.shape[1])

    def tensor_values(self) -> np.ndarray:
        check_tensor_size(*self.dims)
        return np.einsum("il,lj->ilj", self.q_minus, self.q_plus)

    def tensor(self) -> Tensor3:
        return Tensor3(values=self.tensor_values())

    def marginal_values(self) -> np.ndarray:
        """Q(i, j) = sum_l Q(i, l, j), computed through the tensor."""
        return self.tensor_values().sum(axis=1)


def tensor_divergence(A: Tensor3, B: Tensor3) -> float:
    """Elementwise I-divergence between two tensors of equal dims."""
    if A.dims != B.dims:
        raise UsageError(f"tensor dims differ: {A.dims} vs {B.dims}")
    return divergence_of_arrays(A.values, B.values)


def marginal(A: Tensor3) -> DataMatrix:
    """M(i, j) = sum_l A(i, l, j)."""
    return A.marginal()


def _project_values(P: np.ndarray, q_tensor: np.ndarray) -> np.ndarray:
    q_marginal = q_tensor.sum(axis=1)
    singular = (P > 0) & (q_marginal == 0)
    if np.any(singular):
        i, j = np.argwhere(singular)[0]
        raise SingularityError((int(i), int(j)))
    ratio = np.divide(P, q_marginal, out=np.zeros_like(P), where=q_marginal > 0)
    return q_tensor * ratio[:, np.newaxis, :]


def project_to_P(P: DataMatrix, Q: LiftedQ) -> Tensor3:
    """
    I-projection of the product tensor of Q onto the P-set.

    P*(i, l, j) = Q(i, l, j) P(i, j) / Q(i, j), so the latent index keeps
    its conditional law under Q while the marginal becomes P.

    Raises:
        SingularityError: P(i, j) > 0 where the marginal Q(i, j) is 0
    """
    if P.shape != (Q.dims[0], Q.dims[2]):
        raise UsageError(f"shape mismatch: P is {P.shape}, Q marginal is {(Q.dims[0], Q.dims[2])}")
    return Tensor3(values=_project_values(P.values, Q.tensor_values()))


def project_to_Q(Pt: Tensor3) -> LiftedQ:
    """
    I-projection of a tensor onto the Q-set.

    Q_minus(i, l) = sum_j Pt(i, l, j)
    Q_plus(l, j)  = sum_i Pt(i, l, j) / sum_ij Pt(i, l, j)

    Raises:
        DegenerateLatentError: a latent index carries zero total mass
    """
    values = Pt.values
    q_minus = values.sum(axis=2)
    latent_columns = values.sum(axis=0)
    mass = latent_columns.sum(axis=1)
    dead = np.flatnonzero(mass == 0)
    if dead.size:
        raise DegenerateLatentError(int(dead[0]))
    return LiftedQ(q_minus=q_minus, q_plus=latent_columns / mass[:, np.newaxis])


def _all_finite(*values: float) -> bool:
    return all(math.isfinite(value) for value in values)


def pythagorean_Q_residual(Pt: Tensor3, Q: LiftedQ) -> Optional[float]:
    """
    D(Pt || Q) - D(Pt || Q*) - D(Q* || Q) with Q* = project_to_Q(Pt).

    Returns None when one of the divergences is infinite.
    """
    q_star = project_to_Q(Pt).tensor()
    q_tensor = Q.tensor()
    total = tensor_divergence(Pt, q_tensor)
    to_projection = tensor_divergence(Pt, q_star)
    between = tensor_divergence(q_star, q_tensor)
    if not _all_finite(total, to_projection, between):
        return None
    return total - to_projection - between


def pythagorean_P_residual(Pt: Tensor3, P: DataMatrix, Q: LiftedQ) -> Optional[float]:
    """
    D(Pt || Q) - D(Pt || P*) - D(P || Q_marginal) with P* = project_to_P(P, Q).

    The last term stands in for D(P* || Q), which equals it exactly.

    Raises:
        PreconditionError: the marginal of Pt is not P
    """
    if Pt.dims != Q.dims:
        raise UsageError(f"tensor dims differ: {Pt.dims} vs {Q.dims}")
    gap = float(np.max(np.abs(Pt.marginal_values() - P.values)))
    if gap > MARGINAL_TOLERANCE:
        raise PreconditionError(f"tensor marginal differs from P by {gap:.3e}")
    p_star = project_to_P(P, Q)
    q_tensor = Q.tensor()
    total = tensor_divergence(Pt, q_tensor)
    to_projection = tensor_divergence(Pt, p_star)
    matrix_term = i_divergence(P, Q.marginal_values())
    if not _all_finite(total, to_projection, matrix_term):
        return None
    return total - to_projection - matrix_term


def projection_identity_gap(P: DataMatrix, Q: LiftedQ) -> float:
    """D(P*(Q) || Q) - D(P || Q_marginal); zero up to rounding."""
    lifted = tensor_divergence(project_to_P(P, Q), Q.tensor())
    return lifted - i_divergence(P, Q.marginal_values())


def lifted_iteration(P: DataMatrix, Q: LiftedQ) -> LiftedQ:
    """One alternating cycle Q_n -> P_n -> Q_{n+1}."""
    return project_to_Q(project_to_P(P, Q))


class GainTerms(BaseModel):
    """Decrease of D(P || Q_n) over one lifted cycle and its two components."""

    divergence_before: float = Field(description="D(P || Q_n)")
    divergence_after: float = Field(description="D(P || Q_{n+1})")
    gain_p: float = Field(description="D(P_n || P_{n+1})")
    gain_q: float = Field(description="D(Q_{n+1} || Q_n)")
    chain_residual: float = Field(description="Residual of the summed Pythagorean rules")

    @property
    def residual(self) -> float:
        return self.divergence_before - self.divergence_after - self.gain_p - self.gain_q


def gain_terms(P: DataMatrix, Q: LiftedQ) -> GainTerms:
    """
    Evaluate both sides of the per-iteration gain identity from Q_n.

    D(P || Q_n) - D(P || Q_{n+1}) = D(P_n || P_{n+1}) + D(Q_{n+1} || Q_n)
    """
    q_n = Q.tensor()
    p_n = project_to_P(P, Q)
    next_q = project_to_Q(p_n)
    q_next = next_q.tensor()
    p_next = project_to_P(P, next_q)

    gain_p = tensor_divergence(p_n, p_next)
    gain_q = tensor_divergence(q_next, q_n)
    chain = tensor_divergence(p_n, q_n) - (gain_p + tensor_divergence(p_next, q_next) + gain_q)
    return GainTerms(
        divergence_before=i_divergence(P, Q.marginal_values()),
        divergence_after=i_divergence(P, next_q.marginal_values()),
        gain_p=gain_p,
        gain_q=gain_q,
        chain_residual=chain
    )


def pythagorean_chain(P: DataMatrix, Q: LiftedQ) -> float:
    """
    Residual of D(P_n || Q_n) = D(P_n || P_{n+1}) + D(P_{n+1} || Q_{n+1}) + D(Q_{n+1} || Q_n).

    This is the tensor form of the gain identity, before the projection
    identity reduces both end terms to matrix divergences.
    """
    return gain_terms(P, Q).chain_residual


class WitnessReport(BaseModel):
    """Outcome of checking a factor pair for exactness."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    certified: bool = Field(description="Tensor lies in both the P-set and the Q-set")
    gap: float = Field(ge=0.0, description="Max-norm gap between the tensor marginal and V")
    tensor: Optional[Tensor3] = Field(default=None, description="The intersection witness when certified")


def lemma1_witness(V: DataMatrix, f: FactorPair) -> WitnessReport:
    """
    Build Q(i, l, j) = W(i, l) H(l, j) and certify it when its marginal is V.

    An exact factorization V = WH holds precisely when this tensor lies in the
    P-set as well as the Q-set.
    """
    if V.shape != (f.m, f.n):
        raise UsageError(f"shape mismatch: V is {V.shape}, WH is {(f.m, f.n)}")
    tensor = LiftedQ.from_factors(f).tensor()
    gap = float(np.max(np.abs(tensor.marginal_values() - V.values)))
    certified = gap <= WITNESS_TOLERANCE * max(1.0, float(np.max(V.values)))
    logger.debug(f"Witness gap {gap:.3e} (certified={certified})")
    return WitnessReport(certified=certified, gap=gap, tensor=tensor if certified else None)


class DecompositionTerms(BaseModel):
    """Joint divergence split into a conditional and a marginal part."""

    lhs: float = Field(description="D(P^{U,V} || Q^{U,V})")
    term_cond: float = Field(description="E_P D(P^{U|V} || Q^{U|V})")
    term_marg: float = Field(description="D(P^V || Q^V)")

    @property
    def residual(self) -> float:
        return self.lhs - self.term_cond - self.term_marg


def conditional_divergence_decomposition(PJ: Any, QJ: Any) -> DecompositionTerms:
    """
    Split the divergence of two joint laws of (U, V).

    Rows index U and columns index V. Both joints must sum to 1 and QJ must be
    positive wherever PJ is.

    Raises:
        PreconditionError: normalization or support condition fails
    """
    p_joint = as_nonnegative_array(PJ, 2, "PJ")
    q_joint = as_nonnegative_array(QJ, 2, "QJ")
    if p_joint.shape != q_joint.shape:
        raise UsageError(f"shape mismatch: {p_joint.shape} vs {q_joint.shape}")
    for name, joint in (("PJ", p_joint), ("QJ", q_joint)):
        total = math.fsum(joint.ravel())
        if abs(total - 1.0) > JOINT_NORMALIZATION_TOLERANCE:
            raise PreconditionError(f"{name} sums to {total!r}, not 1")
    if np.any((p_joint > 0) & (q_joint == 0)):
        raise PreconditionError("QJ vanishes where PJ is positive")

    p_v = p_joint.sum(axis=0)
    q_v = q_joint.sum(axis=0)
    conditional_terms: List[float] = []
    for j in np.flatnonzero(p_v > 0):
        p_cond = p_joint[:, j] / p_v[j]
        q_cond = q_joint[:, j] / q_v[j]
        conditional_terms.append(p_v[j] * divergence_of_arrays(p_cond, q_cond))

    return DecompositionTerms(
        lhs=divergence_of_arrays(p_joint, q_joint),
        term_cond=math.fsum(conditional_terms),
        term_marg=divergence_of_arrays(p_v, q_v)
    )


class DoubleMinimizationReport(BaseModel):
    """Summary of lifted alternating runs from several seeds."""

    trials: int
    lifted_divergence: float = Field(description="min over runs of D(P_n || Q_n) at convergence")
    matrix_divergence: float = Field(description="min over runs of D(P || Q_n) at convergence")
    max_identity_gap: float = Field(description="max over all iterations of |D(P_n || Q_n) - D(P || Q_n)|")
    consistent: bool = Field(description="Both minima agree within tolerance at every run")
    final_divergences: List[float] = Field(default_factory=list)
    iterations: List[int] = Field(default_factory=list)


def random_lifted_start(P: DataMatrix, k: int, rng: np.random.Generator, min_init: float = 1e-2) -> LiftedQ:
    """Strictly positive starting point whose total mass matches P."""
    m, n = P.shape
    q_minus = rng.uniform(min_init, 1.0, size=(m, k))
    q_minus *= (P.total / k) / q_minus.sum(axis=0)
    q_plus = rng.uniform(min_init, 1.0, size=(k, n))
    q_plus /= q_plus.sum(axis=1, keepdims=True)
    return LiftedQ(q_minus=q_minus, q_plus=q_plus)


def double_minimization_check(
    P: DataMatrix,
    k: int,
    trials: int,
    seed: int,
    max_iters: int = 500,
    rel_tol: float = 1e-12
) -> DoubleMinimizationReport:
    """
    Compare the lifted double minimization with the matrix problem.

    Runs the alternating projections from `trials` seeded starts, recording
    at every iterate the lifted value D(P_n || Q_n) next to D(P || Q_n).

    Raises:
        UsageError: m*k*n above 512, rank out of range, or trials < 1
    """
    m, n = P.shape
    if not 1 <= k <= min(m, n):
        raise UsageError(f"rank {k} outside [1, {min(m, n)}]")
    if m * k * n > DOUBLE_MINIMIZATION_SIZE_LIMIT:
        raise UsageError(f"m*k*n = {m * k * n} exceeds {DOUBLE_MINIMIZATION_SIZE_LIMIT}")
    if trials < 1:
        raise UsageError("at least one trial is required")

    lifted_finals: List[float] = []
    matrix_finals: List[float] = []
    iterations: List[int] = []
    max_gap = 0.0
    consistent = True

    for trial, child in enumerate(np.random.SeedSequence(seed).spawn(trials)):
        Q = random_lifted_start(P, k, np.random.default_rng(child))
        previous = math.inf
        for iteration in range(1, max_iters + 1):
            p_n = project_to_P(P, Q)
            lifted_value = tensor_divergence(p_n, Q.tensor())
            matrix_value = i_divergence(P, Q.marginal_values())
            max_gap = max(max_gap, abs(lifted_value - matrix_value))
            if abs(previous - matrix_value) <= rel_tol * max(previous, 1.0):
                break
            previous = matrix_value
            Q = project_to_Q(p_n)

        if abs(lifted_value - matrix_value) > DOUBLE_MINIMIZATION_AGREEMENT:
            consistent = False
            logger.warning(f"Trial {trial}: lifted {lifted_value!r} vs matrix {matrix_value!r}")
        lifted_finals.append(lifted_value)
        matrix_finals.append(matrix_value)
        iterations.append(iteration)
        logger.debug(f"Trial {trial}: D = {matrix_value:.6e} after {iteration} iterations")

    return DoubleMinimizationReport(
        trials=trials,
        lifted_divergence=min(lifted_finals),
        matrix_divergence=min(matrix_finals),
        max_identity_gap=max_gap,
        consistent=consistent,
        final_divergences=matrix_finals,
        iterations=iterations
    )
