"""
I-divergence, the model product WH and the objective F.

Conventions: 0/0 = 0, 0 log 0 = 0 and p/0 = inf for p > 0. Sums run over
the row-major flattening with math.fsum, so results do not depend on
numpy's pairwise summation blocking.

A cell with M > 0 contributes N ((1 + x) log(1 + x) - x) with x = (M - N) / N,
which stays positive however close M is to N.
"""

import math
from typing import Any, Union

import numpy as np

from errors import UsageError
from models import DataMatrix, FactorPair, as_nonnegative_array


ArrayLike = Union[DataMatrix, np.ndarray, Any]

# Below this |M/N - 1| a cell's term is summed from its Taylor series.
SERIES_THRESHOLD = 1e-3


def _as_array(value: ArrayLike, name: str) -> np.ndarray:
    if isinstance(value, DataMatrix):
        return value.values
    array = np.asarray(value, dtype=np.float64)
    return as_nonnegative_array(array, array.ndim, name)


def divergence_of_arrays(M: np.ndarray, N: np.ndarray) -> float:
    """
    Elementwise I-divergence sum of two validated nonnegative arrays of any rank.

    Args:
        M: First argument
        N: Second argument, same shape as M

    Returns:
        D(M || N) as a float; math.inf when some M > 0 meets N = 0
    """
    if M.shape != N.shape:
        raise UsageError(f"shape mismatch: {M.shape} vs {N.shape}")
    positive = M > 0
    if np.any(positive & (N == 0)):
        return math.inf
    terms = np.array(N, dtype=np.float64, copy=True)
    n = N[positive]
    terms[positive] = n * _relative_excess((M[positive] - n) / n)
    return math.fsum(terms.ravel())


def _relative_excess(x: np.ndarray) -> np.ndarray:
    """(1 + x) log(1 + x) - x, without cancellation near x = 0."""
    out = np.empty_like(x)
    small = np.abs(x) < SERIES_THRESHOLD
    s = x[small]
    out[small] = s * s * (1 / 2 - s * (1 / 6 - s * (1 / 12 - s * (1 / 20 - s / 30))))
    large = x[~small]
    out[~small] = (1 + large) * np.log1p(large) - large
    return out


def i_divergence(M: ArrayLike, N: ArrayLike) -> float:
    """D(M || N) = sum(M log(M/N) - M + N) for nonnegative matrices of equal shape."""
    a = _as_array(M, "M")
    b = _as_array(N, "N")
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {a.shape} vs {b.shape}")
    return divergence_of_arrays(a, b)


def wh_product(f: FactorPair) -> np.ndarray:
    """The m x n model WH."""
    return f.W @ f.H


def entropy_constant(V: DataMatrix) -> float:
    """sum(V log V - V); the constant in D(V || WH) = constant - F(W, H)."""
    values = V.values
    positive = values > 0
    v = values[positive]
    return math.fsum((v * np.log(v) - v).ravel())


def objective_F(V: DataMatrix, f: FactorPair) -> float:
    """
    F(W, H) = sum(V log (WH) - WH).

    Returns -inf when a positive V entry meets a zero model value.
    """
    if V.shape != (f.m, f.n):
        raise UsageError(f"shape mismatch: V is {V.shape}, WH is {(f.m, f.n)}")
    model = wh_product(f)
    values = V.values
    positive = values > 0
    if np.any(positive & (model == 0)):
        return -math.inf
    terms = -model
    terms[positive] += values[positive] * np.log(model[positive])
    return math.fsum(terms.ravel())
