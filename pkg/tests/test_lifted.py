"""Tests for the lifted tensor formulation."""

import numpy as np
import pytest

from divergence import i_divergence
from errors import DegenerateLatentError, PreconditionError, SingularityError, UsageError
from factorizer import update_step
from lifted import (
    LiftedQ,
    Tensor3,
    check_tensor_size,
    conditional_divergence_decomposition,
    double_minimization_check,
    gain_terms,
    lemma1_witness,
    lifted_iteration,
    marginal,
    project_to_P,
    project_to_Q,
    projection_identity_gap,
    pythagorean_chain,
    pythagorean_P_residual,
    pythagorean_Q_residual,
    tensor_divergence,
)
from models import DataMatrix
from tests.factories import planted_matrix, random_matrix, random_pair


@pytest.fixture
def lifted_q(rng) -> LiftedQ:
    return LiftedQ.from_factors(random_pair(rng, 3, 2, 4))


def test_lifted_q_round_trips_factor_pair(rng):
    f = random_pair(rng, 4, 2, 3)
    Q = LiftedQ.from_factors(f)
    assert Q.dims == (4, 2, 3)
    g = Q.to_factors()
    np.testing.assert_array_equal(g.W, f.W)
    np.testing.assert_array_equal(g.H, f.H)


def test_lifted_q_requires_row_stochastic_q_plus():
    with pytest.raises(UsageError):
        LiftedQ(q_minus=[[1.0], [1.0]], q_plus=[[0.5, 0.6]])


def test_product_tensor_marginal_is_wh(rng):
    f = random_pair(rng, 3, 2, 5)
    Q = LiftedQ.from_factors(f)
    np.testing.assert_allclose(marginal(Q.tensor()).values, f.W @ f.H, rtol=1e-12)


def test_project_to_p_has_marginal_p(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    Pt = project_to_P(P, lifted_q)
    np.testing.assert_allclose(Pt.marginal_values(), P.values, rtol=1e-12)


def test_project_to_p_keeps_zero_cells_zero(lifted_q):
    P = DataMatrix(values=[[0.0, 1.0, 1.0, 1.0], [1.0, 0.0, 1.0, 1.0], [1.0, 1.0, 1.0, 0.0]])
    Pt = project_to_P(P, lifted_q)
    assert np.all(Pt.values[0, :, 0] == 0.0)
    assert np.all(Pt.values[2, :, 3] == 0.0)


def test_project_to_p_raises_on_singular_cell(rng):
    Q = LiftedQ(q_minus=[[1.0], [0.0]], q_plus=[[0.5, 0.5]])
    with pytest.raises(SingularityError):
        project_to_P(DataMatrix(values=[[1.0, 1.0], [1.0, 1.0]]), Q)


def test_project_to_q_of_product_tensor_is_identity(lifted_q):
    projected = project_to_Q(lifted_q.tensor())
    np.testing.assert_allclose(projected.q_minus, lifted_q.q_minus, rtol=1e-12)
    np.testing.assert_allclose(projected.q_plus, lifted_q.q_plus, rtol=1e-12)


def test_project_to_q_raises_on_dead_latent():
    values = np.ones((2, 2, 3))
    values[:, 1, :] = 0.0
    with pytest.raises(DegenerateLatentError) as excinfo:
        project_to_Q(Tensor3(values=values))
    assert excinfo.value.latent == 1


def test_lifted_iteration_matches_update_step(rng):
    V = random_matrix(rng, 4, 5)
    f = random_pair(rng, 4, 3, 5)
    Q = LiftedQ.from_factors(f)
    for _ in range(30):
        f = update_step(V, f)
        Q = lifted_iteration(V, Q)
        np.testing.assert_allclose(Q.q_minus, f.W, rtol=0, atol=1e-12)
        np.testing.assert_allclose(Q.q_plus, f.H, rtol=0, atol=1e-12)


def test_pythagorean_q_residual_vanishes(rng, lifted_q):
    Pt = Tensor3(values=rng.uniform(0.1, 1.0, size=(3, 2, 4)))
    assert abs(pythagorean_Q_residual(Pt, lifted_q)) < 1e-10


def test_pythagorean_p_residual_vanishes(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    other = LiftedQ.from_factors(random_pair(rng, 3, 2, 4))
    Pt = project_to_P(P, other)
    assert abs(pythagorean_P_residual(Pt, P, lifted_q)) < 1e-10


def test_pythagorean_p_residual_requires_marginal_p(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    with pytest.raises(PreconditionError):
        pythagorean_P_residual(lifted_q.tensor(), P, lifted_q)


def test_pythagorean_q_residual_is_none_when_infinite(lifted_q):
    values = np.ones((3, 2, 4))
    Pt = Tensor3(values=values)
    Q = LiftedQ(q_minus=np.array([[1.0, 1.0], [1.0, 0.0], [1.0, 1.0]]), q_plus=lifted_q.q_plus)
    assert pythagorean_Q_residual(Pt, Q) is None


def test_projection_identity(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    D = i_divergence(P, lifted_q.marginal_values())
    assert abs(projection_identity_gap(P, lifted_q)) < 1e-12 * max(1.0, D)
    lifted = tensor_divergence(project_to_P(P, lifted_q), lifted_q.tensor())
    assert lifted == pytest.approx(D, rel=1e-12)


def test_gain_terms_satisfy_identity(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    gains = gain_terms(P, lifted_q)
    assert gains.gain_p >= 0.0 and gains.gain_q >= 0.0
    assert gains.divergence_after <= gains.divergence_before + 1e-12
    assert abs(gains.residual) < 1e-8
    assert abs(pythagorean_chain(P, lifted_q)) < 1e-10


def test_lemma1_witness_certifies_exact_factorization(planted):
    report = lemma1_witness(planted_matrix(planted), planted)
    assert report.certified
    assert report.gap < 1e-10
    np.testing.assert_allclose(report.tensor.marginal_values(), planted.W @ planted.H, rtol=1e-12)


def test_lemma1_witness_rejects_inexact_factorization(planted):
    values = planted.W @ planted.H
    values[0, 0] += 0.1
    report = lemma1_witness(DataMatrix(values=values), planted)
    assert not report.certified
    assert report.gap == pytest.approx(0.1)
    assert report.tensor is None


def test_conditional_decomposition_is_additive(rng):
    PJ = rng.uniform(0.0, 1.0, size=(3, 4))
    QJ = rng.uniform(0.1, 1.0, size=(3, 4))
    terms = conditional_divergence_decomposition(PJ / PJ.sum(), QJ / QJ.sum())
    assert abs(terms.residual) < 1e-12
    assert terms.term_cond >= 0.0 and terms.term_marg >= 0.0


def test_conditional_decomposition_preconditions():
    uniform = np.full((2, 2), 0.25)
    with pytest.raises(PreconditionError):
        conditional_divergence_decomposition(uniform * 2, uniform)
    with pytest.raises(PreconditionError):
        conditional_divergence_decomposition(uniform, [[0.5, 0.0], [0.25, 0.25]])


def test_double_minimization_agrees_with_matrix_problem(rank_one_matrix):
    report = double_minimization_check(rank_one_matrix, k=1, trials=3, seed=0)
    assert report.consistent
    assert report.trials == 3 and len(report.final_divergences) == 3
    assert report.max_identity_gap < 1e-8
    expected = i_divergence(rank_one_matrix, [[1.2, 1.8], [2.8, 4.2]])
    assert report.matrix_divergence == pytest.approx(expected, rel=1e-9)


def test_double_minimization_size_guard(rng):
    with pytest.raises(UsageError):
        double_minimization_check(random_matrix(rng, 10, 10), k=6, trials=1, seed=0)
    with pytest.raises(UsageError):
        double_minimization_check(random_matrix(rng, 3, 3), k=1, trials=0, seed=0)


def test_tensor_size_cap():
    check_tensor_size(10, 10, 10, cap=1000)
    with pytest.raises(UsageError):
        check_tensor_size(10, 10, 11, cap=1000)


def test_tensor_divergence_single_cell():
    value = tensor_divergence(Tensor3(values=[[[2.0]]]), Tensor3(values=[[[1.0]]]))
    assert value == pytest.approx(2 * np.log(2) - 1, rel=1e-12)


def test_project_to_p_beats_feasible_perturbations(rng, lifted_q):
    P = random_matrix(rng, 3, 4)
    best = project_to_P(P, lifted_q)
    baseline = tensor_divergence(best, lifted_q.tensor())
    for _ in range(20):
        noise = rng.normal(size=best.dims)
        noise -= noise.mean(axis=1, keepdims=True)
        scale = 0.5 * float(np.min(best.values)) / float(np.max(np.abs(noise)))
        perturbed = Tensor3(values=best.values + scale * noise)
        np.testing.assert_allclose(perturbed.marginal_values(), P.values, rtol=1e-12)
        assert tensor_divergence(perturbed, lifted_q.tensor()) >= baseline


def test_project_to_q_beats_other_product_tensors(rng):
    Pt = Tensor3(values=rng.uniform(0.1, 1.0, size=(3, 2, 4)))
    baseline = tensor_divergence(Pt, project_to_Q(Pt).tensor())
    for _ in range(20):
        other = LiftedQ.from_factors(random_pair(rng, 3, 2, 4))
        assert tensor_divergence(Pt, other.tensor()) >= baseline
