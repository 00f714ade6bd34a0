"""
Alternating-minimization solver for I-divergence NMF.

Each step maps (W, H) to (W', H') with

    W'(i, l) = sum_j V(i, j) W(i, l) H(l, j) / (WH)(i, j)
    H'(l, j) = sum_i V(i, j) W(i, l) H(l, j) / (WH)(i, j), rows renormalized

Both updates read the same (W, H). D(V || WH) never increases along the
iteration and H stays row stochastic.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, Optional, Tuple

import numpy as np

from config import Settings, get_settings
from divergence import divergence_of_arrays, objective_F, wh_product
from errors import DegenerateInputError, DegenerateLatentError, PreconditionError, SingularityError, UsageError
from lifted import (
    LiftedQ,
    check_tensor_size,
    gain_terms,
    lifted_iteration,
    project_to_P,
    pythagorean_P_residual,
    pythagorean_Q_residual,
)
from models import (
    MONOTONE_SLACK,
    ConvergenceRecord,
    ConvergenceTrace,
    DataMatrix,
    FactorizationResult,
    FactorPair,
    InitStrategy,
    SolverConfig,
    StopReason,
    as_nonnegative_array,
)

STATIONARY_TOLERANCE = 1e-12
GAIN_IDENTITY_TOLERANCE = 1e-8
LIFTED_GAP_TOLERANCE = 1e-12


def init_factors(
    m: int,
    n: int,
    cfg: SolverConfig,
    V: Optional[DataMatrix] = None,
    rng: Optional[np.random.Generator] = None
) -> FactorPair:
    """
    Draw a strictly positive starting pair.

    W and H entries are uniform on [min_init, 1]; H rows are then normalized.
    When V is given, W columns are rescaled to sum to total(V) / k so the
    starting model carries the same mass as the data.

    Args:
        m: Rows of the data
        n: Columns of the data
        cfg: Solver configuration (rank, seed, min_init)
        V: Optional data used for scale matching
        rng: Generator to draw from; defaults to one seeded with cfg.seed
    """
    cfg.check_shape(m, n)
    if V is not None and V.shape != (m, n):
        raise UsageError(f"V has shape {V.shape}, expected {(m, n)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    k = cfg.rank

    W = rng.uniform(cfg.min_init, 1.0, size=(m, k))
    H = rng.uniform(cfg.min_init, 1.0, size=(k, n))
    H /= H.sum(axis=1, keepdims=True)
    if V is not None:
        W *= (V.total / k) / W.sum(axis=0)
    return FactorPair(W=W, H=H)


def _update_arrays(V: np.ndarray, W: np.ndarray, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    model = W @ H
    positive = V > 0
    singular = positive & (model == 0)
    if np.any(singular):
        i, j = np.argwhere(singular)[0]
        raise SingularityError((int(i), int(j)))
    # zero data cells contribute nothing to either sum
    ratio = np.divide(V, model, out=np.zeros_like(V), where=positive)
    W_next = W * (ratio @ H.T)
    latent = H * (W.T @ ratio)
    mass = latent.sum(axis=1)
    dead = np.flatnonzero(mass == 0)
    if dead.size:
        raise DegenerateLatentError(int(dead[0]))
    return W_next, latent / mass[:, np.newaxis]


def update_step(V: DataMatrix, f: FactorPair) -> FactorPair:
    """
    One multiplicative update of (W, H), computed Jacobi style from the same pair.

    Raises:
        SingularityError: V(i, j) > 0 with (WH)(i, j) = 0
    """
    if V.shape != (f.m, f.n):
        raise UsageError(f"shape mismatch: V is {V.shape}, WH is {(f.m, f.n)}")
    W_next, H_next = _update_arrays(V.values, f.W, f.H)
    return FactorPair(W=W_next, H=H_next)


def _displacement(f: FactorPair, g: FactorPair) -> float:
    return float(max(np.max(np.abs(f.W - g.W)), np.max(np.abs(f.H - g.H))))


def stationarity_residual(V: DataMatrix, f: FactorPair) -> float:
    """
    Max-norm distance between f and its update.

    The first-order conditions of F under the row-stochastic constraint are
    exactly the fixed-point equations of update_step, so this is 0 precisely
    at stationary points.
    """
    return _displacement(f, update_step(V, f))


def normalize_row_stochastic(W: Any, H: Any) -> FactorPair:
    """
    Rescale (W, H) to (W h, h^-1 H) with h = row sums of H; WH is unchanged.

    Raises:
        DegenerateInputError: H has a zero row
    """
    W = as_nonnegative_array(W, 2, "W")
    H = as_nonnegative_array(H, 2, "H")
    if W.shape[1] != H.shape[0]:
        raise UsageError(f"inner dimensions differ: W is {W.shape}, H is {H.shape}")
    h = H.sum(axis=1)
    zero_rows = np.flatnonzero(h == 0)
    if zero_rows.size:
        raise DegenerateInputError(f"H row {zero_rows[0]} is identically zero", row=int(zero_rows[0]))
    return FactorPair(W=W * h, H=H / h[:, np.newaxis])


def canonicalize(f: FactorPair) -> FactorPair:
    """
    Order latent components by descending column sum of W.

    Ties fall back to comparing the W columns entry by entry, larger first.
    """
    W, H = f.W, f.H
    # np.lexsort treats the last key as primary
    keys = tuple(-W[i] for i in reversed(range(W.shape[0]))) + (-W.sum(axis=0),)
    order = np.lexsort(keys)
    return FactorPair(W=W[:, order], H=H[order])


class AlternatingFactorizer:
    """
    Runs the multiplicative iteration with restarts, stopping rules and tracing.
    """

    def __init__(self, config: SolverConfig, settings: Optional[Settings] = None):
        """Initialize the solver with a configuration."""
        self.config = config
        self.settings = settings or get_settings()
        self.logger = logging.getLogger(f"{__name__}.AlternatingFactorizer")

    def run(self, V: DataMatrix, initial: Optional[FactorPair] = None) -> FactorizationResult:
        """
        Factorize V.

        Args:
            V: Data matrix
            initial: Strictly positive starting pair; required when the
                init strategy is `provided`

        Returns:
            FactorizationResult: the restart with the smallest final divergence
        """
        cfg = self.config
        m, n = V.shape
        cfg.check_shape(m, n)
        if cfg.oracle:
            check_tensor_size(m, cfg.rank, n, self.settings.tensor_size_cap)

        if initial is not None or cfg.init_strategy == InitStrategy.PROVIDED:
            if initial is None:
                raise UsageError("init strategy 'provided' needs an initial factor pair")
            self._check_initial(V, initial)
            self.logger.info(f"Solving {m} x {n} at rank {cfg.rank} from the provided start")
            return self._solve(V, initial, restart_index=0)

        children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
        workers = min(self.settings.restart_workers, cfg.restarts)
        self.logger.info(
            f"Solving {m} x {n} at rank {cfg.rank}: {cfg.restarts} restart(s), {workers} worker(s)"
        )

        def solve_restart(index: int) -> FactorizationResult:
            start = init_factors(m, n, cfg, V=V, rng=np.random.default_rng(children[index]))
            return self._solve(V, start, restart_index=index)

        if workers == 1:
            results = [solve_restart(index) for index in range(cfg.restarts)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(solve_restart, range(cfg.restarts)))

        best = min(results, key=lambda result: (result.final_divergence, result.restart_index))
        self.logger.info(
            f"Best restart {best.restart_index}: D = {best.final_divergence:.6e} "
            f"after {best.iterations_run} iterations ({best.stop_reason.value})"
        )
        return best

    def _check_initial(self, V: DataMatrix, initial: FactorPair) -> None:
        if (initial.m, initial.n) != V.shape or initial.rank != self.config.rank:
            raise UsageError(
                f"initial pair is {initial.m} x {initial.rank} x {initial.n}, "
                f"expected {V.rows} x {self.config.rank} x {V.cols}"
            )
        if not (np.all(initial.W > 0) and np.all(initial.H > 0)):
            raise PreconditionError("initial factors must be strictly positive")

    def _solve(self, V: DataMatrix, start: FactorPair, restart_index: int) -> FactorizationResult:
        cfg = self.config
        trace = ConvergenceTrace()
        f = start
        divergence = divergence_of_arrays(V.values, wh_product(f))
        stop_reason = StopReason.MAX_ITERS

        for iteration in range(1, cfg.max_iters + 1):
            tic = time.perf_counter()
            following = update_step(V, f)
            residual = _displacement(f, following)
            new_divergence = divergence_of_arrays(V.values, wh_product(following))
            objective = objective_F(V, following)
            elapsed = time.perf_counter() - tic

            checks = self._observe(V, f, following) if cfg.oracle else {}
            trace.append(ConvergenceRecord(
                iteration=iteration,
                divergence=new_divergence,
                objective=objective,
                residual=residual,
                elapsed_seconds=elapsed,
                **checks
            ))
            if new_divergence - divergence > MONOTONE_SLACK:
                self.logger.warning(
                    f"Restart {restart_index}, iteration {iteration}: divergence rose "
                    f"from {divergence!r} to {new_divergence!r}"
                )
            self.logger.debug(
                f"Restart {restart_index}, iteration {iteration}: D = {new_divergence:.12e}, residual = {residual:.3e}"
            )

            previous = divergence
            f, divergence = following, new_divergence
            if residual < STATIONARY_TOLERANCE:
                stop_reason = StopReason.STATIONARY
                break
            if abs(previous - new_divergence) <= cfg.rel_tol * max(previous, 1.0):
                stop_reason = StopReason.TOL_REACHED
                break

        return FactorizationResult(
            factors=f,
            trace=trace,
            iterations_run=len(trace),
            stop_reason=stop_reason,
            final_divergence=divergence,
            seed=cfg.seed,
            restart_index=restart_index
        )

    def _observe(self, V: DataMatrix, f: FactorPair, following: FactorPair) -> Dict[str, Optional[float]]:
        """Lifted identity checks for one step; observers only, the iterate is untouched."""
        Q = LiftedQ.from_factors(f)
        gains = gain_terms(V, Q)
        lifted_next = lifted_iteration(V, Q)
        lifted_gap = float(max(
            np.max(np.abs(lifted_next.q_minus - following.W)),
            np.max(np.abs(lifted_next.q_plus - following.H))
        ))
        p_n = project_to_P(V, Q)
        checks = {
            "gain_p": gains.gain_p,
            "gain_q": gains.gain_q,
            "lifted_gap": lifted_gap,
            "pythagorean_q": pythagorean_Q_residual(p_n, Q),
            "pythagorean_p": pythagorean_P_residual(p_n, V, lifted_next),
        }
        if abs(gains.residual) > GAIN_IDENTITY_TOLERANCE:
            self.logger.warning(f"Gain identity residual {gains.residual:.3e}")
        if lifted_gap > LIFTED_GAP_TOLERANCE * max(1.0, float(np.max(following.W))):
            self.logger.warning(f"Lifted and matrix updates differ by {lifted_gap:.3e}")
        return checks


def run(
    V: DataMatrix,
    cfg: SolverConfig,
    initial: Optional[FactorPair] = None,
    settings: Optional[Settings] = None
) -> FactorizationResult:
    """Factorize V with the given configuration."""
    return AlternatingFactorizer(cfg, settings).run(V, initial)
