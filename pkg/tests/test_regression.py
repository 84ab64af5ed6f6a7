import dataclasses

import numpy as np
import pytest
import scipy.linalg

from cmkernel.errors import InvalidArgument
from cmkernel.kernels import KernelSpec
from cmkernel.regression import (DIAG_JITTER, LITERAL, RegressionProblem, assemble_blocks, fit,
                                 objective_terms, objective_value, surrogate_eval)

from oracles import central_diff, gauss_1d_blocks, gauss_1d_fit, rel_err

K1 = KernelSpec.polynomial(4, 0.5)
K2 = KernelSpec.gaussian(0.5)


def _instance(seed, n=10, d=1, m=1, lam=1e-10, spec=K2, mode=DIAG_JITTER):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-0.1, 0.1, (n, d))
    Y = np.sum(X ** 2, axis=1, keepdims=True) * np.linspace(1, -1, m) + 1e-3 * rng.normal(size=(n, m))
    return RegressionProblem(X, Y, spec.with_dim(d), lam, mode)


def test_blocks_match_hand_assembly():
    prob = RegressionProblem(np.array([[0.3], [-0.7]]), np.array([[0.1], [0.4]]), K2, 1e-3)
    blocks = assemble_blocks(prob)
    np.testing.assert_allclose(blocks.gram_matrix(), gauss_1d_blocks([0.3, -0.7]), rtol=1e-14)
    np.testing.assert_array_equal(np.diag(blocks.W), [1e-3, 1e-3, 0.0])


def test_single_center_three_by_three_system():
    # one data point plus the origin value and derivative rows: a 3x3 system
    prob = RegressionProblem(np.array([[0.5]]), np.array([[0.2]]), K2, 1e-2)
    sur = fit(prob)
    coef, s_ref = gauss_1d_fit([0.5], [0.2], 1e-2)
    np.testing.assert_allclose(sur.coefficients(), coef, rtol=1e-12)
    for x in (-0.3, 0.0, 0.25, 0.5, 1.0):
        assert surrogate_eval(sur, [x])[0] == pytest.approx(s_ref(x), abs=1e-14)


@pytest.mark.parametrize("lam", [1e-10, 1e-4, 1.0])
def test_fit_matches_dense_oracle(lam):
    prob = _instance(0, 6, lam=lam)
    sur = fit(prob)
    coef, s_ref = gauss_1d_fit(prob.centers[:, 0], prob.targets[:, 0], lam)
    # two backward-stable solvers agree to about cond * eps
    tol = 1e-14 * max(sur.fit_report["condition"], 1.0) * np.abs(prob.targets).max()
    for x in np.linspace(-0.1, 0.1, 11):
        assert surrogate_eval(sur, [x])[0] == pytest.approx(s_ref(x), abs=tol)


@pytest.mark.parametrize("spec", [K1, K2], ids=["k1", "k2"])
@pytest.mark.parametrize("d", [1, 2])
def test_constraints_hold(spec, d):
    sur = fit(_instance(1, 8, d=d, spec=spec, lam=1e-6))
    assert np.linalg.norm(sur(np.zeros(d))) <= 1e-10
    assert np.linalg.norm(sur.jacobian(np.zeros(d))) <= 1e-8


@pytest.mark.parametrize("spec", [K1, K2], ids=["k1", "k2"])
@pytest.mark.parametrize("d", [1, 2])
def test_constraints_hold_to_coefficient_roundoff(spec, d):
    # with lambda = 1e-10 on clustered random data the coefficients reach ~1e7;
    # storing them in double limits s(0) to about eps * sum |c|
    sur = fit(_instance(1, 8, d=d, spec=spec))
    floor = 8 * np.finfo(float).eps * np.abs(sur.coefficients()).sum()
    assert np.linalg.norm(sur(np.zeros(d))) <= floor
    assert np.linalg.norm(sur.jacobian(np.zeros(d))) <= floor


def test_data_misfit_equals_weight_times_coefficient():
    # first block row: (A + W) alpha + B beta = y, i.e. s(x_i) = y_i - lambda alpha_i
    prob = _instance(2, 8, lam=1e-6)
    sur = fit(prob)
    np.testing.assert_allclose(sur(prob.centers) - prob.targets, -prob.lam * sur.alpha[:-1],
                               rtol=1e-6, atol=1e-12)


def test_literal_weight_mode_shrinks_the_fit():
    jitter = fit(_instance(3, 8, lam=1e-4))
    literal = fit(_instance(3, 8, lam=1e-4, mode=LITERAL))
    grid = np.linspace(-0.1, 0.1, 21)[:, None]
    # W = 1e4 on the data rows: the data barely move the solution
    assert np.max(np.abs(literal(grid))) < 1e-3 * np.max(np.abs(jitter(grid)))


def test_separable_lift_decouples_outputs():
    prob = _instance(4, 7, d=2, m=2, lam=1e-6)
    both = fit(prob)
    for j in range(2):
        single = fit(RegressionProblem(prob.centers, prob.targets[:, j], prob.spec, prob.lam))
        np.testing.assert_allclose(both.alpha[:, j], single.alpha[:, 0], rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(both.beta[:, j], single.beta[:, 0], rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("d", [1, 2])
def test_extended_gram_is_symmetric_psd(d):
    for seed in range(5):
        for spec in (K1, K2):
            G = assemble_blocks(_instance(seed, 6, d=d, spec=spec)).gram_matrix()
            np.testing.assert_array_equal(G, G.T)
            ev = np.linalg.eigvalsh(G)
            assert ev.min() >= -1e-10 * ev.max()


def constraint_respecting_directions(prob, count, rng):
    """Random coefficient directions whose function vanishes with its derivative
    at the origin, scaled to unit native norm."""
    G = assemble_blocks(prob).gram_matrix()
    n_data = prob.centers.shape[0] * prob.m
    rows = np.arange(n_data, G.shape[0])  # origin value rows and derivative rows
    N = scipy.linalg.null_space(G[rows])
    out = []
    for _ in range(count):
        delta = N @ rng.normal(size=N.shape[1])
        out.append(delta / np.sqrt(delta @ G @ delta))
    return out


def _with_coefficients(sur, prob, c):
    n1 = prob.centers.shape[0] + 1
    return dataclasses.replace(sur, alpha=c[: n1 * prob.m].reshape(n1, prob.m),
                               beta=c[n1 * prob.m:].reshape(prob.d, prob.m))


@pytest.mark.parametrize("lam", [1e-10, 1e-4])
def test_fit_minimizes_the_functional(lam):
    prob = _instance(5, 10, lam=lam)
    sur = fit(prob)
    j0 = objective_value(sur, prob)
    rng = np.random.default_rng(0)
    for delta in constraint_respecting_directions(prob, 20, rng):
        bump = _with_coefficients(sur, prob, delta)
        assert np.linalg.norm(bump(np.zeros(1))) <= 1e-10  # admissible direction
        assert np.linalg.norm(bump.jacobian(np.zeros(1))) <= 1e-8
        moved = _with_coefficients(sur, prob, sur.coefficients() + 1e-3 * delta)
        # the increase is at least eps^2 times the unit native norm
        assert objective_value(moved, prob) - j0 >= 0.5e-6


def test_objective_terms_require_matching_basis():
    prob = _instance(6, 5)
    other = fit(_instance(7, 5))
    with pytest.raises(InvalidArgument):
        objective_terms(other, prob)


def test_surrogate_jacobian_against_finite_differences():
    rng = np.random.default_rng(8)
    for spec in (K1, K2):
        for d, m in ((1, 1), (2, 1), (2, 2)):
            sur = fit(_instance(9, 10, d=d, m=m, lam=1e-3, spec=spec))
            for _ in range(20):
                x = rng.uniform(-0.1, 0.1, d)
                assert rel_err(sur.jacobian(x), central_diff(sur, x)) <= 1e-6


def test_fit_report_fields():
    rep = fit(_instance(10, 10)).fit_report
    assert rep["solver"] in ("ldl", "lstsq")
    assert rep["backward_error"] < 1e-14
    for key in ("condition", "relative_residual", "s0_norm", "ds0_norm"):
        assert np.isfinite(rep[key])


def test_invalid_problems():
    X = np.array([[0.1], [0.2]])
    with pytest.raises(InvalidArgument):
        RegressionProblem(np.array([[0.1], [0.0]]), np.ones(2), K2)
    with pytest.raises(InvalidArgument):
        RegressionProblem(np.array([[0.1], [0.1]]), np.ones(2), K2)
    with pytest.raises(InvalidArgument):
        RegressionProblem(X, np.ones(3), K2)
    with pytest.raises(InvalidArgument):
        RegressionProblem(X, np.ones(2), K2, lam=0.0)
    with pytest.raises(InvalidArgument):
        RegressionProblem(X, np.ones(2), K2, weight_mode="inverse")
    with pytest.raises(InvalidArgument):
        RegressionProblem(X, np.ones(2), K2.with_dim(2))
    with pytest.raises(InvalidArgument):
        fit(RegressionProblem(X, np.ones(2), K2))(np.zeros(2))
