"""
Worked demonstrations for the I-divergence NMF toolkit.
Shows the solver, the lifted projections and their agreement on small problems.
"""

import logging
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import Settings, get_settings
from factorizer import AlternatingFactorizer, update_step
from lifted import (
    LiftedQ,
    double_minimization_check,
    lifted_iteration,
    project_to_P,
    pythagorean_P_residual,
    pythagorean_Q_residual,
)
from models import DataMatrix, FactorPair, SolverConfig

logger = logging.getLogger(__name__)

RANK_ONE_DATA = [[1.0, 2.0], [3.0, 4.0]]


class FactorizationExamples:
    """
    Demonstrations of the toolkit's capabilities. Each returns True when
    its check passes.
    """

    def __init__(self, settings: Optional[Settings] = None, seed: int = 7):
        """Initialize the examples."""
        self.settings = settings or get_settings()
        self.rng = np.random.default_rng(seed)
        self.logger = logger

    def run_all_examples(self) -> bool:
        """Run all demonstrations; True when every one passes."""
        self.logger.info("🚀 Starting I-divergence NMF examples...")

        examples: List[Tuple[str, Callable[[], bool]]] = [
            ("Rank-one closed form", self.example_rank_one),
            ("Planted factorization", self.example_planted_recovery),
            ("Lifted/matrix equivalence", self.example_lifted_equivalence),
            ("Pythagorean identities", self.example_pythagorean_rules),
            ("Double minimization", self.example_double_minimization)
        ]

        all_passed = True
        for name, example_func in examples:
            self.logger.info(f"{'=' * 60}")
            self.logger.info(f"📋 {name}")
            try:
                passed = example_func()
            except Exception as e:
                self.logger.error(f"❌ {name} example failed: {str(e)}")
                passed = False
            self.logger.info(f"{'✅' if passed else '❌'} {name}: {'passed' if passed else 'FAILED'}")
            all_passed = all_passed and passed

        self.logger.info(f"{'=' * 60}")
        self.logger.info("🎉 All examples passed!" if all_passed else "⚠️  Some examples failed")
        return all_passed

    def _positive_matrix(self, m: int, n: int) -> np.ndarray:
        return self.rng.uniform(0.1, 1.0, size=(m, n))

    def _positive_pair(self, m: int, k: int, n: int) -> FactorPair:
        H = self._positive_matrix(k, n)
        return FactorPair(W=self._positive_matrix(m, k), H=H / H.sum(axis=1, keepdims=True))

    def example_rank_one(self) -> bool:
        """At rank one a single step lands on row sums and normalized column sums."""
        V = DataMatrix(values=RANK_ONE_DATA)
        result = AlternatingFactorizer(SolverConfig(rank=1), self.settings).run(V)
        W, H = result.factors.W, result.factors.H
        self.logger.info(f"W = {W.ravel().tolist()}, H = {H.ravel().tolist()}")
        self.logger.info(f"D = {result.final_divergence:.10f} after {result.iterations_run} iterations")
        return bool(np.allclose(W.ravel(), [3.0, 7.0], atol=1e-12) and np.allclose(H.ravel(), [0.4, 0.6], atol=1e-12))

    def example_planted_recovery(self) -> bool:
        """A planted exact factorization is approached from random starts."""
        planted = self._positive_pair(6, 2, 5)
        V = DataMatrix(values=planted.W @ planted.H)
        config = SolverConfig(rank=2, max_iters=2000, rel_tol=0.0, restarts=5, seed=1)
        result = AlternatingFactorizer(config, self.settings).run(V)
        start = result.trace.records[0].divergence
        self.logger.info(f"D fell from {start:.3e} to {result.final_divergence:.3e}")
        return result.trace.is_monotone() and result.final_divergence < 1e-3 * max(start, 1e-12)

    def example_lifted_equivalence(self) -> bool:
        """Composing the two projections reproduces the multiplicative update."""
        V = DataMatrix(values=self._positive_matrix(4, 3))
        f = self._positive_pair(4, 2, 3)
        Q = LiftedQ.from_factors(f)
        worst = 0.0
        for _ in range(20):
            f = update_step(V, f)
            Q = lifted_iteration(V, Q)
            worst = max(worst, float(np.max(np.abs(Q.q_minus - f.W))), float(np.max(np.abs(Q.q_plus - f.H))))
        self.logger.info(f"Largest gap over 20 iterations: {worst:.3e}")
        return worst < 1e-12

    def example_pythagorean_rules(self) -> bool:
        """Both Pythagorean residuals vanish at a strictly positive instance."""
        V = DataMatrix(values=self._positive_matrix(3, 4))
        Q = LiftedQ.from_factors(self._positive_pair(3, 2, 4))
        P_star = project_to_P(V, Q)
        other = LiftedQ.from_factors(self._positive_pair(3, 2, 4))
        residual_q = pythagorean_Q_residual(P_star, other)
        residual_p = pythagorean_P_residual(project_to_P(V, other), V, Q)
        self.logger.info(f"Q-side residual {residual_q:.3e}, P-side residual {residual_p:.3e}")
        return abs(residual_q) < 1e-10 and abs(residual_p) < 1e-10

    def example_double_minimization(self) -> bool:
        """Lifted and matrix minima coincide."""
        V = DataMatrix(values=RANK_ONE_DATA)
        report = double_minimization_check(V, k=1, trials=3, seed=0)
        self.logger.info(
            f"Lifted {report.lifted_divergence:.10f} vs matrix {report.matrix_divergence:.10f}"
        )
        return report.consistent


def main():
    """Run all examples."""
    logging.basicConfig(level=logging.INFO)
    FactorizationExamples().run_all_examples()


if __name__ == "__main__":
    main()
