import numpy as np
import pytest
from scipy.optimize import minimize

from advreg.baselines import bs_objective, combined_weights, fit_bs, fit_linreg, proximal_response
from advreg.calculus import fd_check
from advreg.errors import ContractError, SolverError
from advreg.model import AdversaryBlock, Dataset, TrainingSplit


def _split(seed=0, n=12, m=3, q=3, nu=0.3):
    rng = np.random.default_rng(seed)
    return TrainingSplit(Dataset(rng.uniform(0.1, 1, (n, q)), rng.uniform(0.1, 1, n)),
                         AdversaryBlock.from_rows(rng.uniform(0.1, 1, (m, q)), rng.uniform(0.1, 1, m), nu))


def test_linreg_interpolates_linear_data():
    rng = np.random.default_rng(0)
    D = rng.normal(size=(10, 4))
    w_true = rng.normal(size=4)
    np.testing.assert_allclose(fit_linreg(Dataset(D, D @ w_true), ridge=None), w_true, atol=1e-10)


def test_linreg_identity_design():
    np.testing.assert_allclose(fit_linreg(Dataset(np.eye(3), np.eye(3)[0]), ridge=None), np.eye(3)[0], atol=1e-14)


def test_linreg_matches_lstsq_oracle():
    rng = np.random.default_rng(1)
    D, y = rng.normal(size=(20, 5)), rng.normal(size=20)
    ridge = 100.0
    # Augmented least squares: rows sqrt(1/n) D over sqrt(1/ridge) I.
    A = np.vstack([D / np.sqrt(20), np.eye(5) / np.sqrt(ridge)])
    b = np.concatenate([y / np.sqrt(20), np.zeros(5)])
    oracle = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(fit_linreg(Dataset(D, y), ridge), oracle, atol=1e-10)


def test_linreg_gradient_vanishes():
    rng = np.random.default_rng(2)
    D, y = rng.normal(size=(15, 3)), rng.normal(size=15)
    w = fit_linreg(Dataset(D, y), 100.0)
    grad = 2 / 15 * D.T @ (D @ w - y) + 2 / 100 * w
    assert np.linalg.norm(grad) <= 1e-8


def test_linreg_errors():
    with pytest.raises(SolverError):
        fit_linreg(Dataset(np.ones((3, 2)), np.ones(3)), ridge=None)
    with pytest.raises(ContractError):
        fit_linreg(Dataset(np.eye(2), np.ones(2)), ridge=-1.0)


def test_proximal_response_scalar_closed_form():
    w, x0, z, rho = 1.5, 0.4, 2.0, 0.7
    x = proximal_response(np.array([w]), np.array([[x0]]), np.array([z]), rho)
    assert x[0, 0] == pytest.approx((rho * x0 + 2 * z * w) / (rho + 2 * w * w), rel=1e-14)


def test_proximal_response_matches_numerical_minimizer():
    rng = np.random.default_rng(3)
    for _ in range(10):
        q = int(rng.integers(2, 6))
        w, x0, z, rho = rng.normal(size=q), rng.normal(size=q), float(rng.normal()), float(rng.uniform(0.2, 3))
        obj = lambda x: (w @ x - z) ** 2 + 0.5 * rho * (x - x0) @ (x - x0)
        jac = lambda x: 2 * (w @ x - z) * w + rho * (x - x0)
        ref = minimize(obj, x0, jac=jac, method="BFGS", options={"gtol": 1e-12}).x
        np.testing.assert_allclose(proximal_response(w, x0[None], [z], rho)[0], ref, atol=1e-8)


def test_proximal_system_positive_definite():
    rng = np.random.default_rng(4)
    for rho in (1e-6, 1.0, 1e6):
        w = rng.normal(size=4)
        assert np.linalg.eigvalsh(2 * np.outer(w, w) + rho * np.eye(4)).min() > 0


def test_bs_gradient_matches_fd():
    split = _split()
    w = np.array([0.3, -0.5, 0.9])
    report = fd_check(lambda v: bs_objective(v, split)[0], lambda v: bs_objective(v, split)[1], w)
    assert report.passed


def test_bs_pinned_adversary_matches_weighted_linreg():
    split = _split(seed=5)
    data, weights = combined_weights(split)
    model = fit_bs(split, ridge=100.0, rho_a=1e8)
    np.testing.assert_allclose(model.weights, fit_linreg(data, 100.0, weights), atol=1e-3)


def test_bs_converges_to_stationary_point():
    split = _split(seed=6)
    model = fit_bs(split, rho_a=1.0)
    assert model.converged
    assert np.linalg.norm(bs_objective(model.weights, split)[1]) <= 1e-6


def test_bs_rejects_bad_rho():
    with pytest.raises(ContractError):
        fit_bs(_split(), rho_a=0.0)
