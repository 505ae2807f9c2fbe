"""Comparison predictors: plain (ridge) linear regression and an optimistic
Stackelberg surrogate whose adversary has a unique best response."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, SolverError
from .model import Dataset, TrainingSplit

log = logging.getLogger(__name__)


class BaselineKind(str, enum.Enum):
    LINREG = "LinReg"
    BS = "BS"


@dataclass(frozen=True)
class BaselineModel:
    kind: BaselineKind
    weights: np.ndarray
    ridge: Optional[float]
    rho_a: Optional[float] = None
    converged: bool = True
    iterations: int = 0


def fit_linreg(train: Dataset, ridge: Optional[float] = 100.0, sample_weight=None) -> np.ndarray:
    """Minimize sum_i s_i (w.x_i - y_i)^2 + ||w||^2 / ridge via the normal equations.

    ``sample_weight`` defaults to 1/n for every row (mean squared error).
    ``ridge=None`` drops the penalty; a rank-deficient design then raises.
    """
    D, y = train.rows, train.labels
    n, q = D.shape
    s = np.full(n, 1.0 / n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    if s.shape != (n,) or np.any(s < 0):
        raise ContractError("sample_weight must be a non-negative vector with one entry per row")
    A = D.T @ (s[:, None] * D)
    b = D.T @ (s * y)
    if ridge is None:
        if np.linalg.matrix_rank(A) < q:
            raise SolverError("normal equations are singular without a ridge term; pass ridge > 0")
    else:
        if not ridge > 0:
            raise ContractError(f"ridge must be positive, got {ridge}")
        A = A + np.eye(q) / ridge
    return np.linalg.solve(A, b)


def combined_weights(split: TrainingSplit) -> tuple[Dataset, np.ndarray]:
    """Static and adversary rows stacked, weighted 1/n and 1/m as in the learner's objective."""
    adv = split.adversary
    rows = np.vstack([split.static.rows, adv.origin])
    labels = np.concatenate([split.static.labels, adv.true_labels])
    weights = np.concatenate([np.full(split.n, 1.0 / split.n), np.full(split.m, 1.0 / split.m)])
    return Dataset(rows, labels), weights


def proximal_response(w, x0, z, rho_a: float) -> np.ndarray:
    """Unique minimizer of (w.x - z)^2 + (rho_a/2)||x - x0||^2 for each row of x0.

    Solves (2 w w^T + rho_a I) x = rho_a x0 + 2 z w by Sherman-Morrison.
    """
    w = np.asarray(w, dtype=float)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    z = np.asarray(z, dtype=float).reshape(-1)
    shift = 2.0 * (x0 @ w - z) / (rho_a + 2.0 * (w @ w))
    return x0 - shift[:, None] * w


def _bs_objective(w, split: TrainingSplit, ridge_coef, rho_a):
    D, gamma = split.static.rows, split.static.labels
    adv = split.adversary
    s = w @ w
    c = 2.0 * s / (rho_a + 2.0 * s)
    p = adv.origin @ w
    pred = (1.0 - c) * p + c * adv.target_labels
    r_static = D @ w - gamma
    r_adv = pred - adv.true_labels
    value = np.mean(r_static**2) + np.mean(r_adv**2) + ridge_coef * s
    dc = 4.0 * rho_a * w / (rho_a + 2.0 * s) ** 2
    dpred = (1.0 - c) * adv.origin + np.outer(adv.target_labels - p, dc)
    grad = (2.0 / len(gamma)) * D.T @ r_static + (2.0 / len(r_adv)) * dpred.T @ r_adv + 2.0 * ridge_coef * w
    return float(value), grad


def bs_objective(w, split: TrainingSplit, ridge: Optional[float] = 100.0, rho_a: float = 1.0):
    """Learner's objective with the adversary's rows replaced by their proximal best response."""
    ridge_coef = 0.0 if ridge is None else 1.0 / ridge
    return _bs_objective(np.asarray(w, dtype=float), split, ridge_coef, rho_a)


def fit_bs(split: TrainingSplit, ridge: Optional[float] = 100.0, rho_a: float = 1.0,
           max_iter: int = 2000, gtol: float = 1e-6) -> BaselineModel:
    """Optimistic single-level surrogate solved by gradient descent with Armijo backtracking.

    The start is the weighted ridge fit at the untouched adversary data; trial
    steps use the Barzilai-Borwein length before backtracking.
    """
    if not rho_a > 0:
        raise ContractError(f"rho_a must be positive, got {rho_a}")
    ridge_coef = 0.0 if ridge is None else 1.0 / ridge
    data, weights = combined_weights(split)
    w = fit_linreg(data, ridge, sample_weight=weights)
    f, g = _bs_objective(w, split, ridge_coef, rho_a)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= gtol:
            it -= 1
            break
        t = step
        while True:
            w_new = w - t * g
            f_new, g_new = _bs_objective(w_new, split, ridge_coef, rho_a)
            if f_new <= f - 1e-4 * t * (g @ g) or t < 1e-16:
                break
            t *= 0.5
        s_vec, y_vec = w_new - w, g_new - g
        sy = s_vec @ y_vec
        step = (s_vec @ s_vec) / sy if sy > 0 else 2.0 * t
        w, f, g = w_new, f_new, g_new
    converged = bool(np.linalg.norm(g) <= gtol)
    if not converged:
        log.warning("B&S surrogate did not reach gradient norm %.1e in %d iterations (|g|=%.3e)",
                    gtol, max_iter, np.linalg.norm(g))
    return BaselineModel(BaselineKind.BS, w, ridge, rho_a, converged, it)
