"""Analytic first and second derivatives of the objectives and constraints.

Shapes follow the row-major flattening of the adversary's data: an index
``(i, j)`` (instance i, feature j) maps to position ``i * q + j`` in a flat
vector of length ``m * q``. Per-instance quantities (Hessian blocks) are
returned as stacked arrays of shape ``(m, q, q)``; everything that crosses
instances is returned dense.

Constraint derivatives are derivatives of ``g_i = delta - cos(X_i, X0_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    AdversaryBlock,
    Dataset,
    ModelConfig,
    constraint_values,
    lower_objective,
    row_cosines,
    upper_objective,
)


def grad_upper_w(w, adversary: AdversaryBlock, static: Dataset, cfg: ModelConfig) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    D, gamma = static.rows, static.labels
    X, Y = adversary.current, adversary.true_labels
    grad = (2.0 / D.shape[0]) * D.T @ (D @ w - gamma) + (2.0 / X.shape[0]) * X.T @ (X @ w - Y)
    return grad + 2.0 * cfg.ridge_coef * w


def hess_upper_ww(w, adversary: AdversaryBlock, static: Dataset, cfg: ModelConfig) -> np.ndarray:
    D, X = static.rows, adversary.current
    q = D.shape[1]
    return (2.0 / D.shape[0]) * D.T @ D + (2.0 / X.shape[0]) * X.T @ X + 2.0 * cfg.ridge_coef * np.eye(q)


def _grad_X(w, X, labels):
    w = np.asarray(w, dtype=float)
    res = X @ w - labels
    return (2.0 / X.shape[0]) * np.outer(res, w)


def grad_upper_X(w, adversary: AdversaryBlock) -> np.ndarray:
    """Entry (i, j) = (2/m) w_j (w.X_i - Y_i)."""
    return _grad_X(w, adversary.current, adversary.true_labels)


def grad_lower_X(w, adversary: AdversaryBlock) -> np.ndarray:
    """Entry (i, j) = (2/m) w_j (w.X_i - Z_i)."""
    return _grad_X(w, adversary.current, adversary.target_labels)


def hess_lower_XX(w, adversary: AdversaryBlock) -> np.ndarray:
    """Diagonal blocks (m, q, q), each equal to (2/m) w w^T."""
    w = np.asarray(w, dtype=float)
    m = adversary.m
    block = (2.0 / m) * np.outer(w, w)
    return np.broadcast_to(block, (m,) + block.shape).copy()


# The learner's loss on the adversary's rows has the same curvature in X.
hess_upper_XX = hess_lower_XX


def _cross_wX(w, X, labels):
    # d/dw_k of (2/m) w_j r_i  =  (2/m) [1{j=k} r_i + w_j X_ik]
    w = np.asarray(w, dtype=float)
    m, q = X.shape
    res = X @ w - labels
    out = np.einsum("j,ik->kij", w, X)
    out[np.arange(q), :, np.arange(q)] += res
    return (2.0 / m) * out.reshape(q, m * q)


def cross_lower_wX(w, adversary: AdversaryBlock) -> np.ndarray:
    """Mixed second derivative of the lower objective, shape (q, m*q).

    Row k holds the derivative of the flattened X-gradient with respect to
    w_k; equivalently column (i, j) is the X_ij-derivative of grad_w f.
    """
    return _cross_wX(w, adversary.current, adversary.target_labels)


def cross_upper_wX(w, adversary: AdversaryBlock) -> np.ndarray:
    """Mixed second derivative of the upper objective, shape (q, m*q)."""
    return _cross_wX(w, adversary.current, adversary.true_labels)


def _cosine_parts(adversary: AdversaryBlock):
    X, X0 = adversary.current, adversary.origin
    d = row_cosines(X, X0)
    nx = np.linalg.norm(X, axis=1)
    n0 = np.linalg.norm(X0, axis=1)
    return X, X0, d, nx, n0


def constraint_gradient_blocks(adversary: AdversaryBlock) -> np.ndarray:
    """Gradient of g_i with respect to X_i, stacked as an (m, q) array."""
    X, X0, d, nx, n0 = _cosine_parts(adversary)
    grad_cos = X0 / (nx * n0)[:, None] - (d / nx**2)[:, None] * X
    return -grad_cos


def grad_constraints_X(adversary: AdversaryBlock) -> np.ndarray:
    """Dense (m, m*q) Jacobian of g; row i is zero outside instance i's columns."""
    blocks = constraint_gradient_blocks(adversary)
    m, q = blocks.shape
    out = np.zeros((m, m * q))
    for i in range(m):
        out[i, i * q:(i + 1) * q] = blocks[i]
    return out


def hess_constraints_XX(adversary: AdversaryBlock) -> np.ndarray:
    """Per-instance Hessians of g_i, shape (m, q, q). Cross-instance blocks are zero."""
    X, X0, d, nx, n0 = _cosine_parts(adversary)
    q = X.shape[1]
    sym = np.einsum("ic,ik->ikc", X, X0)
    sym = sym + np.swapaxes(sym, 1, 2)
    outer = np.einsum("ik,ic->ikc", X, X)
    hess = (
        sym / (nx**3 * n0)[:, None, None]
        - 3.0 * (d / nx**4)[:, None, None] * outer
        + (d / nx**2)[:, None, None] * np.eye(q)
    )
    return 0.5 * (hess + np.swapaxes(hess, 1, 2))


def block_diag(blocks: np.ndarray) -> np.ndarray:
    """Dense block-diagonal matrix from stacked (m, a, b) blocks."""
    m, a, b = blocks.shape
    out = np.zeros((m * a, m * b))
    for i in range(m):
        out[i * a:(i + 1) * a, i * b:(i + 1) * b] = blocks[i]
    return out


@dataclass(frozen=True)
class GradientBundle:
    dF_dw: np.ndarray
    dF_dX: np.ndarray
    df_dX: np.ndarray
    d2F_dww: np.ndarray
    d2L_dXX: np.ndarray
    d2f_dwX: np.ndarray
    dg_dX: np.ndarray
    d2g_dXX: np.ndarray


def gradient_bundle(w, adversary: AdversaryBlock, static: Dataset, cfg: ModelConfig) -> GradientBundle:
    return GradientBundle(
        dF_dw=grad_upper_w(w, adversary, static, cfg),
        dF_dX=grad_upper_X(w, adversary),
        df_dX=grad_lower_X(w, adversary),
        d2F_dww=hess_upper_ww(w, adversary, static, cfg),
        d2L_dXX=hess_lower_XX(w, adversary),
        d2f_dwX=cross_lower_wX(w, adversary),
        dg_dX=grad_constraints_X(adversary),
        d2g_dXX=hess_constraints_XX(adversary),
    )


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass(frozen=True)
class FDReport:
    name: str
    max_rel_error: float
    tol: float
    worst_index: tuple

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)


def fd_jacobian(f, point, step=1e-6) -> np.ndarray:
    """Central-difference derivative of f at point, shape f(point).shape + point.shape."""
    x = np.asarray(point, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    out = np.empty(f0.shape + x.shape)
    flat = x.reshape(-1)
    for idx in range(flat.size):
        e = np.zeros_like(flat)
        e[idx] = step
        up = np.asarray(f((flat + e).reshape(x.shape)), dtype=float)
        down = np.asarray(f((flat - e).reshape(x.shape)), dtype=float)
        out[(...,) + np.unravel_index(idx, x.shape)] = (up - down) / (2.0 * step)
    return out


def fd_check(f, grad, point, step=1e-6, tol=1e-5, name="") -> FDReport:
    """Compare ``grad(point)`` against central differences of ``f``.

    Relative error is ``|analytic - numeric| / max(1, |analytic|)`` entrywise.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    numeric = fd_jacobian(f, point, step)
    analytic = np.asarray(grad(np.asarray(point, dtype=float)), dtype=float).reshape(numeric.shape)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return FDReport(name, float(rel.max()) if rel.size else 0.0, tol, tuple(int(i) for i in worst))


def random_instance(rng: np.random.Generator, q=None, n=None, m=None, ridge=100.0):
    """Random problem with entries in (0.1, 1), q <= 5, n <= 6, m <= 3."""
    q = q or int(rng.integers(1, 6))
    n = n or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 4))
    draw = lambda *shape: rng.uniform(0.1, 1.0, size=shape)
    static = Dataset(draw(n, q), draw(n))
    adv = AdversaryBlock(draw(m, q), draw(m, q), draw(m), draw(m))
    cfg = ModelConfig(delta=float(rng.uniform(0.5, 1.0)), ridge=ridge)
    return draw(q), adv, static, cfg


def derivative_suite(seed=0, n_instances=100, step=1e-6, first_tol=1e-5, second_tol=1e-4):
    """Check every analytic derivative against central differences.

    Returns a list of :class:`FDReport`, one per derivative, each holding the
    worst relative error over all random instances.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, FDReport] = {}

    def record(report):
        prev = worst.get(report.name)
        if prev is None or report.max_rel_error > prev.max_rel_error:
            worst[report.name] = report

    for _ in range(n_instances):
        w, adv, static, cfg = random_instance(rng)
        m, q = adv.current.shape
        X = adv.current
        at = lambda flat: adv.with_current(flat.reshape(m, q))
        record(fd_check(lambda v: upper_objective(v, adv, static, cfg),
                        lambda v: grad_upper_w(v, adv, static, cfg), w, step, first_tol, "grad_upper_w"))
        record(fd_check(lambda v: grad_upper_w(v, adv, static, cfg),
                        lambda v: hess_upper_ww(v, adv, static, cfg), w, step, second_tol, "hess_upper_ww"))
        record(fd_check(lambda x: upper_objective(w, at(x), static, cfg),
                        lambda x: grad_upper_X(w, at(x)).reshape(-1), X.reshape(-1), step, first_tol, "grad_upper_X"))
        record(fd_check(lambda x: lower_objective(w, at(x)),
                        lambda x: grad_lower_X(w, at(x)).reshape(-1), X.reshape(-1), step, first_tol, "grad_lower_X"))
        record(fd_check(lambda x: grad_lower_X(w, at(x)).reshape(-1),
                        lambda x: block_diag(hess_lower_XX(w, at(x))), X.reshape(-1), step, second_tol,
                        "hess_lower_XX"))
        record(fd_check(lambda v: grad_lower_X(v, adv).reshape(-1),
                        lambda v: cross_lower_wX(v, adv).T, w, step, second_tol, "cross_lower_wX"))
        record(fd_check(lambda v: grad_upper_X(v, adv).reshape(-1),
                        lambda v: cross_upper_wX(v, adv).T, w, step, second_tol, "cross_upper_wX"))
        record(fd_check(lambda x: constraint_values(at(x), cfg.delta),
                        lambda x: grad_constraints_X(at(x)), X.reshape(-1), step, first_tol, "grad_constraints_X"))
        record(fd_check(lambda x: grad_constraints_X(at(x)).sum(axis=0),
                        lambda x: block_diag(hess_constraints_XX(at(x))), X.reshape(-1), step, second_tol,
                        "hess_constraints_XX"))
    return list(worst.values())
