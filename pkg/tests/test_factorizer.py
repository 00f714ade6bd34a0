"""Tests for the multiplicative solver."""

import numpy as np
import pytest

from config import Settings
from divergence import i_divergence, wh_product
from errors import DegenerateInputError, PreconditionError, SingularityError, UsageError
from factorizer import (
    AlternatingFactorizer,
    canonicalize,
    init_factors,
    normalize_row_stochastic,
    run,
    stationarity_residual,
    update_step,
)
from models import DataMatrix, FactorPair, InitStrategy, SolverConfig, StopReason
from tests.factories import planted_matrix, random_matrix, random_pair


def test_init_factors_is_positive_row_stochastic_and_mass_matched(rng):
    V = random_matrix(rng, 6, 5)
    cfg = SolverConfig(rank=3, seed=11)
    f = init_factors(6, 5, cfg, V=V)

    assert f.W.shape == (6, 3) and f.H.shape == (3, 5)
    assert np.all(f.W > 0) and np.all(f.H > 0)
    np.testing.assert_allclose(f.H.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(f.W.sum(axis=0), V.total / 3, rtol=1e-12)


def test_init_factors_is_seed_deterministic():
    cfg = SolverConfig(rank=2, seed=5)
    first, second = init_factors(4, 4, cfg), init_factors(4, 4, cfg)
    np.testing.assert_array_equal(first.W, second.W)
    np.testing.assert_array_equal(first.H, second.H)
    other = init_factors(4, 4, SolverConfig(rank=2, seed=6))
    assert not np.array_equal(first.W, other.W)


def test_init_factors_rejects_rank_above_min_dimension():
    with pytest.raises(UsageError):
        init_factors(3, 2, SolverConfig(rank=3))


def test_update_step_keeps_h_row_stochastic_and_does_not_increase_divergence(rng):
    V = random_matrix(rng, 7, 6)
    f = random_pair(rng, 7, 3, 6)
    previous = i_divergence(V, wh_product(f))
    for _ in range(25):
        f = update_step(V, f)
        np.testing.assert_allclose(f.H.sum(axis=1), 1.0, atol=1e-12)
        current = i_divergence(V, wh_product(f))
        assert current <= previous + 1e-12
        previous = current


def test_rank_one_update_lands_on_closed_form(rank_one_matrix, rng):
    f = update_step(rank_one_matrix, random_pair(rng, 2, 1, 2))
    np.testing.assert_allclose(f.W.ravel(), [3.0, 7.0], atol=1e-12)
    np.testing.assert_allclose(f.H.ravel(), [0.4, 0.6], atol=1e-12)


def test_update_step_raises_on_singular_cell():
    V = DataMatrix(values=[[1.0, 0.0], [0.0, 1.0]])
    f = FactorPair(W=[[1.0], [0.0]], H=[[0.5, 0.5]])
    with pytest.raises(SingularityError) as excinfo:
        update_step(V, f)
    assert excinfo.value.cell == (1, 1)


def test_update_step_tolerates_zero_data_entries(rng):
    V = DataMatrix(values=[[0.0, 1.0, 2.0], [3.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    f = update_step(V, random_pair(rng, 3, 2, 3))
    assert np.all(np.isfinite(f.W)) and np.all(np.isfinite(f.H))


def test_planted_factors_are_a_fixed_point(planted):
    V = planted_matrix(planted)
    f = update_step(V, planted)
    np.testing.assert_allclose(f.W, planted.W, atol=1e-12)
    np.testing.assert_allclose(f.H, planted.H, atol=1e-12)
    assert stationarity_residual(V, planted) < 1e-12


def test_normalize_row_stochastic_example():
    f = normalize_row_stochastic([[1.0], [1.0]], [[2.0, 2.0]])
    np.testing.assert_array_equal(f.W, [[4.0], [4.0]])
    np.testing.assert_array_equal(f.H, [[0.5, 0.5]])


def test_normalize_row_stochastic_keeps_product(rng):
    W = rng.uniform(0.1, 2.0, size=(4, 2))
    H = rng.uniform(0.1, 2.0, size=(2, 5))
    f = normalize_row_stochastic(W, H)
    np.testing.assert_allclose(wh_product(f), W @ H, rtol=1e-12)


def test_normalize_row_stochastic_rejects_zero_row():
    with pytest.raises(DegenerateInputError) as excinfo:
        normalize_row_stochastic([[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [0.0, 0.0]])
    assert excinfo.value.row == 1


def test_canonicalize_orders_components_and_keeps_product(rng):
    f = random_pair(rng, 5, 3, 4)
    g = canonicalize(f)
    sums = g.W.sum(axis=0)
    assert np.all(np.diff(sums) <= 0)
    np.testing.assert_allclose(wh_product(g), wh_product(f), rtol=1e-12)


def test_canonicalize_breaks_ties_by_larger_entries_first():
    f = FactorPair(W=[[1.0, 2.0], [2.0, 1.0]], H=[[1.0, 0.0], [0.0, 1.0]])
    g = canonicalize(f)
    np.testing.assert_array_equal(g.W, [[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_array_equal(g.H, [[0.0, 1.0], [1.0, 0.0]])


def test_rank_one_run_stops_early(rank_one_matrix):
    result = run(rank_one_matrix, SolverConfig(rank=1))
    assert result.iterations_run <= 2
    assert result.stop_reason in (StopReason.STATIONARY, StopReason.TOL_REACHED)
    expected = i_divergence(rank_one_matrix, [[1.2, 1.8], [2.8, 4.2]])
    assert result.final_divergence == pytest.approx(expected, rel=1e-12)


def test_max_iters_stop_reason(rng):
    V = random_matrix(rng, 6, 6)
    result = run(V, SolverConfig(rank=2, max_iters=3, rel_tol=0.0))
    assert result.iterations_run == 3
    assert result.stop_reason == StopReason.MAX_ITERS
    assert result.final_divergence == result.trace.last.divergence


def test_runs_are_deterministic_for_a_fixed_seed(rng):
    V = random_matrix(rng, 6, 5)
    cfg = SolverConfig(rank=2, max_iters=50, restarts=3, seed=42)
    first, second = run(V, cfg), run(V, cfg)
    np.testing.assert_array_equal(first.factors.W, second.factors.W)
    np.testing.assert_array_equal(first.trace.divergences(), second.trace.divergences())


def test_restart_results_do_not_depend_on_worker_count(rng):
    V = random_matrix(rng, 6, 5)
    cfg = SolverConfig(rank=2, max_iters=40, restarts=4, seed=3)
    serial = run(V, cfg, settings=Settings(restart_workers=1))
    threaded = run(V, cfg, settings=Settings(restart_workers=4))
    assert serial.restart_index == threaded.restart_index
    np.testing.assert_array_equal(serial.factors.W, threaded.factors.W)


def test_best_restart_has_smallest_divergence(rng):
    V = random_matrix(rng, 6, 5)
    cfg = SolverConfig(rank=2, max_iters=20, rel_tol=0.0, restarts=4, seed=9)
    best = run(V, cfg)
    for index in range(4):
        single = AlternatingFactorizer(cfg)._solve(
            V,
            init_factors(6, 5, cfg, V=V, rng=np.random.default_rng(np.random.SeedSequence(9).spawn(4)[index])),
            restart_index=index
        )
        assert best.final_divergence <= single.final_divergence


def test_provided_start(rng):
    V = random_matrix(rng, 4, 4)
    start = random_pair(rng, 4, 2, 4)
    cfg = SolverConfig(rank=2, init_strategy=InitStrategy.PROVIDED, max_iters=5, rel_tol=0.0)
    result = run(V, cfg, initial=start)
    np.testing.assert_array_equal(result.factors.W, _iterate(V, start, 5).W)

    with pytest.raises(UsageError):
        run(V, cfg)


def test_provided_start_must_be_strictly_positive(rng):
    V = random_matrix(rng, 3, 3)
    start = FactorPair(W=[[1.0], [0.0], [1.0]], H=[[0.2, 0.3, 0.5]])
    with pytest.raises(PreconditionError):
        run(V, SolverConfig(rank=1), initial=start)


def test_rank_out_of_range(rng):
    with pytest.raises(UsageError):
        run(random_matrix(rng, 3, 5), SolverConfig(rank=4))


def test_oracle_records_gain_terms_and_lifted_gap(rng):
    V = random_matrix(rng, 4, 5)
    result = run(V, SolverConfig(rank=2, max_iters=10, rel_tol=0.0, oracle=True))
    records = result.trace.records
    assert all(record.gain_p is not None and record.gain_q is not None for record in records)
    assert all(record.lifted_gap < 1e-12 for record in records)
    for before, after in zip(records, records[1:]):
        gain = before.divergence - after.divergence
        assert abs(gain - after.gain_p - after.gain_q) < 1e-8
    assert "gain_p" in records[0].trace_line()


def test_oracle_respects_tensor_size_cap(rng):
    V = random_matrix(rng, 4, 5)
    with pytest.raises(UsageError):
        run(V, SolverConfig(rank=2, oracle=True), settings=Settings(tensor_size_cap=10))


def _iterate(V, f, steps):
    for _ in range(steps):
        f = update_step(V, f)
    return f


def test_divergence_strictly_decreases_away_from_stationarity(rng):
    for _ in range(20):
        V = random_matrix(rng, 5, 6)
        f = random_pair(rng, 5, 2, 6)
        current = i_divergence(V, wh_product(f))
        for _ in range(200):
            residual = stationarity_residual(V, f)
            f = update_step(V, f)
            following = i_divergence(V, wh_product(f))
            if residual > 1e-8:
                assert following < current
            current = following


def test_iterates_stay_strictly_positive_for_positive_data(rng):
    V = random_matrix(rng, 6, 4)
    f = random_pair(rng, 6, 3, 4)
    for _ in range(200):
        f = update_step(V, f)
        assert np.all(f.W > 0) and np.all(f.H > 0)


def test_oracle_does_not_change_the_trajectory(rng):
    V = random_matrix(rng, 4, 5)
    plain = run(V, SolverConfig(rank=2, max_iters=25, rel_tol=0.0, seed=13))
    observed = run(V, SolverConfig(rank=2, max_iters=25, rel_tol=0.0, seed=13, oracle=True))
    np.testing.assert_array_equal(plain.trace.divergences(), observed.trace.divergences())
    np.testing.assert_array_equal(plain.factors.W, observed.factors.W)
    np.testing.assert_array_equal(plain.factors.H, observed.factors.H)
    assert plain.stop_reason == observed.stop_reason
