"""First-order conditions of the pessimistic bilevel program as an equation system.

Unknowns are split into ``z = (w, X)`` with X flattened row-major, and the
multipliers ``xi = (beta, beta_hat, lam)``. The residual stacks, in order:

    grad_w F                                   (q rows)
    grad_X F - lam grad_X f - dg^T beta        (m*q rows)
    grad_X f + dg^T beta_hat                   (m*q rows)
    fb(beta_i, -g_i)                           (m rows)
    fb(beta_hat_i, -g_i)                       (m rows)
    fb(lam, 0)                                 (1 row)

It vanishes exactly when all stationarity, feasibility, sign and
complementarity conditions hold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import calculus
from .errors import ContractError
from .model import AdversaryBlock, ModelConfig, TrainingSplit, constraint_values, lower_objective, upper_objective

KINK = np.sqrt(0.5) - 1.0


@dataclass(frozen=True)
class BilevelProblem:
    split: TrainingSplit
    cfg: ModelConfig

    @property
    def q(self) -> int:
        return self.split.q

    @property
    def m(self) -> int:
        return self.split.m

    @property
    def n_vars(self) -> int:
        return self.q + self.m * self.q + 2 * self.m + 1

    @property
    def n_rows(self) -> int:
        return self.q + 2 * self.m * self.q + 2 * self.m + 1

    def adversary_at(self, X) -> AdversaryBlock:
        return self.split.adversary.with_current(X)


@dataclass(frozen=True)
class BlockVariable:
    z: np.ndarray
    xi: np.ndarray
    q: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        if (z.size - self.q) % self.q or z.size <= self.q:
            raise ContractError(f"z of length {z.size} is not q + m*q for q={self.q}")
        m = (z.size - self.q) // self.q
        if xi.size != 2 * m + 1:
            raise ContractError(f"xi must have length 2m+1 = {2 * m + 1}, got {xi.size}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def from_parts(cls, w, X, beta, beta_hat, lam) -> "BlockVariable":
        w = np.asarray(w, dtype=float).reshape(-1)
        z = np.concatenate([w, np.asarray(X, dtype=float).reshape(-1)])
        xi = np.concatenate([np.ravel(beta), np.ravel(beta_hat), [float(lam)]])
        return cls(z, xi, w.size)

    @classmethod
    def from_vector(cls, v, q, m) -> "BlockVariable":
        v = np.asarray(v, dtype=float)
        return cls(v[: q + m * q], v[q + m * q:], q)

    @property
    def m(self) -> int:
        return (self.z.size - self.q) // self.q

    @property
    def w(self) -> np.ndarray:
        return self.z[: self.q]

    @property
    def X(self) -> np.ndarray:
        return self.z[self.q:].reshape(self.m, self.q)

    @property
    def beta(self) -> np.ndarray:
        return self.xi[: self.m]

    @property
    def beta_hat(self) -> np.ndarray:
        return self.xi[self.m: 2 * self.m]

    @property
    def lam(self) -> float:
        return float(self.xi[-1])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.z, self.xi])


def row_layout(q: int, m: int) -> dict[str, slice]:
    sizes = [("grad_w_F", q), ("grad_X_upper_lagrangian", m * q), ("grad_X_lower_lagrangian", m * q),
             ("fb_beta", m), ("fb_beta_hat", m), ("fb_lambda", 1)]
    layout, start = {}, 0
    for name, size in sizes:
        layout[name] = slice(start, start + size)
        start += size
    return layout


def column_layout(q: int, m: int) -> dict[str, slice]:
    return {
        "w": slice(0, q),
        "X": slice(q, q + m * q),
        "beta": slice(q + m * q, q + m * q + m),
        "beta_hat": slice(q + m * q + m, q + m * q + 2 * m),
        "lambda": slice(q + m * q + 2 * m, q + m * q + 2 * m + 1),
    }


def fb(a, b):
    """Fischer-Burmeister function sqrt(a^2 + b^2) - (a + b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = np.hypot(a, b) - (a + b)
    return float(out) if out.ndim == 0 else out


def fb_partials(a, b):
    """An element of the generalized derivative of fb; (sqrt(1/2)-1, sqrt(1/2)-1) at the origin."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    r = np.hypot(a, b)
    kink = r == 0
    safe = np.where(kink, 1.0, r)
    da = np.where(kink, KINK, a / safe - 1.0)
    db = np.where(kink, KINK, b / safe - 1.0)
    return da, db


def _coerce(z, xi, problem: BilevelProblem) -> BlockVariable:
    point = BlockVariable(z, xi, problem.q)
    if point.m != problem.m:
        raise ContractError(f"point has m={point.m} adversary rows, problem has m={problem.m}")
    return point


def lagrangian_upper(z, xi, problem: BilevelProblem) -> float:
    """F(w, X) - lam f(w, X) - beta^T g(X)."""
    p = _coerce(z, xi, problem)
    adv = problem.adversary_at(p.X)
    g = constraint_values(adv, problem.cfg.delta)
    return (upper_objective(p.w, adv, problem.split.static, problem.cfg)
            - p.lam * lower_objective(p.w, adv) - float(p.beta @ g))


def lagrangian_lower(z, xi, problem: BilevelProblem) -> float:
    """f(w, X) + beta_hat^T g(X)."""
    p = _coerce(z, xi, problem)
    adv = problem.adversary_at(p.X)
    g = constraint_values(adv, problem.cfg.delta)
    return lower_objective(p.w, adv) + float(p.beta_hat @ g)


def _pieces(p: BlockVariable, problem: BilevelProblem):
    adv = problem.adversary_at(p.X)
    g = constraint_values(adv, problem.cfg.delta)
    dg = calculus.constraint_gradient_blocks(adv)
    return adv, g, dg


def assemble_residual(z, xi, problem: BilevelProblem) -> np.ndarray:
    p = _coerce(z, xi, problem)
    adv, g, dg = _pieces(p, problem)
    w = p.w
    gF_X = calculus.grad_upper_X(w, adv)
    gf_X = calculus.grad_lower_X(w, adv)
    return np.concatenate([
        calculus.grad_upper_w(w, adv, problem.split.static, problem.cfg),
        (gF_X - p.lam * gf_X - p.beta[:, None] * dg).reshape(-1),
        (gf_X + p.beta_hat[:, None] * dg).reshape(-1),
        fb(p.beta, -g).reshape(-1),
        fb(p.beta_hat, -g).reshape(-1),
        [fb(p.lam, 0.0)],
    ])


def assemble_jacobian(z, xi, problem: BilevelProblem) -> np.ndarray:
    p = _coerce(z, xi, problem)
    adv, g, dg = _pieces(p, problem)
    q, m = problem.q, problem.m
    w = p.w
    rows, cols = row_layout(q, m), column_layout(q, m)
    J = np.zeros((problem.n_rows, problem.n_vars))

    cross_F = calculus.cross_upper_wX(w, adv)
    cross_f = calculus.cross_lower_wX(w, adv)
    hess_f = calculus.hess_lower_XX(w, adv)
    hess_g = calculus.hess_constraints_XX(adv)
    dg_dense = calculus.grad_constraints_X(adv)

    r = rows["grad_w_F"]
    J[r, cols["w"]] = calculus.hess_upper_ww(w, adv, problem.split.static, problem.cfg)
    J[r, cols["X"]] = cross_F

    # grad_X F and grad_X f share the (2/m) w w^T curvature blocks.
    r = rows["grad_X_upper_lagrangian"]
    J[r, cols["w"]] = cross_F.T - p.lam * cross_f.T
    J[r, cols["X"]] = calculus.block_diag((1.0 - p.lam) * hess_f - p.beta[:, None, None] * hess_g)
    J[r, cols["beta"]] = -dg_dense.T
    J[r, cols["lambda"]] = -calculus.grad_lower_X(w, adv).reshape(-1, 1)

    r = rows["grad_X_lower_lagrangian"]
    J[r, cols["w"]] = cross_f.T
    J[r, cols["X"]] = calculus.block_diag(hess_f + p.beta_hat[:, None, None] * hess_g)
    J[r, cols["beta_hat"]] = dg_dense.T

    # d/dX of fb(mult, -g) = (d fb / db) * (-dg)
    for name, mult, col in (("fb_beta", p.beta, "beta"), ("fb_beta_hat", p.beta_hat, "beta_hat")):
        da, db = fb_partials(mult, -g)
        r = rows[name]
        J[r, cols[col]] = np.diag(da)
        J[r, cols["X"]] = -db[:, None] * dg_dense

    da, _ = fb_partials(p.lam, 0.0)
    J[rows["fb_lambda"], cols["lambda"]] = da[0]
    return J


@dataclass(frozen=True)
class ResidualSystem:
    phi: np.ndarray
    jacobian: np.ndarray
    row_layout: dict


def residual_system(z, xi, problem: BilevelProblem) -> ResidualSystem:
    return ResidualSystem(
        phi=assemble_residual(z, xi, problem),
        jacobian=assemble_jacobian(z, xi, problem),
        row_layout=row_layout(problem.q, problem.m),
    )


@dataclass(frozen=True)
class ConditionReport:
    """Violation measures of the unpacked first-order conditions."""

    stationarity: float
    max_constraint: float
    min_multiplier: float
    max_complementarity: float

    def holds(self, stat_tol=1e-4, feas_tol=1e-6, sign_tol=1e-8, comp_tol=1e-6) -> bool:
        return (self.stationarity <= stat_tol and self.max_constraint <= feas_tol
                and self.min_multiplier >= -sign_tol and self.max_complementarity <= comp_tol)


def check_conditions(point: BlockVariable, problem: BilevelProblem) -> ConditionReport:
    """Evaluate the stationarity, feasibility, sign and complementarity conditions
    directly, without the Fischer-Burmeister reformulation."""
    phi = assemble_residual(point.z, point.xi, problem)
    layout = row_layout(problem.q, problem.m)
    stat = np.concatenate([phi[layout[k]] for k in
                           ("grad_w_F", "grad_X_upper_lagrangian", "grad_X_lower_lagrangian")])
    g = constraint_values(problem.adversary_at(point.X), problem.cfg.delta)
    mults = np.concatenate([point.beta, point.beta_hat, [point.lam]])
    comp = np.abs(np.concatenate([point.beta * g, point.beta_hat * g]))
    return ConditionReport(
        stationarity=float(np.max(np.abs(stat))),
        max_constraint=float(np.max(g)),
        min_multiplier=float(np.min(mults)),
        max_complementarity=float(np.max(comp)),
    )
