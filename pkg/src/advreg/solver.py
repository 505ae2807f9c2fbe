"""Nonsmooth Levenberg-Marquardt method on the Fischer-Burmeister residual.

Each iteration solves the damped normal equations with damping
``min(gamma1, gamma2 * ||phi||)``. The full step is kept when it shrinks the
merit ``0.5 ||phi||^2`` by the factor ``kappa``; otherwise the direction is
replaced by steepest descent when it is nearly orthogonal to the merit gradient
or too short, and an Armijo backtracking search picks the step length. A run
stops on a small residual, on stalled progress (residual ratio above ``eta``
after ``K`` iterations), or at ``max_iter``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, SolverError
from .stationarity import BilevelProblem, BlockVariable, assemble_jacobian, assemble_residual


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    STALLED = "Stalled"
    MAX_ITERATIONS = "MaxIterations"


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1e-10
    kappa: float = 0.8
    sigma: float = 1e-4
    step_beta: float = 0.5
    gamma1: float = 1.0
    gamma2: float = 1.0
    angle_rho: float = 1e-8
    min_step: float = 1e-12
    eta: float = 0.995
    K: int = 50
    max_iter: int = 1000
    max_backtracks: int = 60

    def __post_init__(self):
        for name in ("kappa", "sigma", "step_beta", "eta"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ContractError(f"{name} must lie in (0, 1), got {value}")
        for name in ("eps", "gamma1", "gamma2", "angle_rho"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.min_step < 0 or self.K < 0 or self.max_iter < 0 or self.max_backtracks < 1:
            raise ContractError("min_step, K and max_iter must be non-negative, max_backtracks >= 1")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    merit: float
    residual_norm: float
    step_type: str
    damping: float
    alpha: float


@dataclass
class SolveOutcome:
    point: BlockVariable
    residual_norm: float
    status: Status
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def trace_lines(self) -> str:
        """Trace as line-delimited JSON records."""
        return "".join(json.dumps(asdict(rec)) + "\n" for rec in self.trace)


def merit(phi) -> float:
    phi = np.asarray(phi, dtype=float)
    return 0.5 * float(phi @ phi)


def lm_step(phi, jacobian, damping) -> np.ndarray:
    """Solve (J^T J + damping I) d = -J^T phi."""
    if not damping > 0:
        raise ContractError(f"damping must be positive, got {damping}")
    J = np.asarray(jacobian, dtype=float)
    A = J.T @ J + damping * np.eye(J.shape[1])
    rhs = -J.T @ np.asarray(phi, dtype=float)
    try:
        d = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"damped normal equations are singular (cond={np.linalg.cond(A):.3e})") from exc
    if not np.all(np.isfinite(d)):
        raise SolverError(f"non-finite LM direction (cond={np.linalg.cond(A):.3e})")
    return d


def initial_point(problem: BilevelProblem, w0, lam=1.0, mult=1e-2) -> BlockVariable:
    """Start at X = X0 with weights w0 and small positive multipliers."""
    m = problem.m
    return BlockVariable.from_parts(w0, problem.split.adversary.origin, np.full(m, mult), np.full(m, mult), lam)


def levenberg_marquardt(residual, jacobian, v0, cfg: SolverConfig = SolverConfig()):
    """Drive ``residual(v)`` to zero from ``v0``.

    Returns ``(v, residual_norm, status, iterations, trace)``.
    """
    v = np.asarray(v0, dtype=float).copy()
    phi = residual(v)
    if not np.all(np.isfinite(phi)):
        raise SolverError("residual is not finite at the start point")
    psi = merit(phi)
    norm = float(np.sqrt(2.0 * psi))
    trace = [TraceRecord(0, psi, norm, "start", 0.0, 0.0)]
    status = Status.MAX_ITERATIONS
    k = 0

    while True:
        if norm <= cfg.eps:
            status = Status.CONVERGED
            break
        if k >= cfg.max_iter:
            break
        J = jacobian(v)
        grad = J.T @ phi
        damping = min(cfg.gamma1, cfg.gamma2 * norm)
        d = lm_step(phi, J, damping)

        trial = v + d
        phi_trial = residual(trial)
        psi_trial = merit(phi_trial) if np.all(np.isfinite(phi_trial)) else np.inf
        alpha = 1.0
        if psi_trial <= cfg.kappa * psi:
            step_type = "lm"
        else:
            step_type = "lm-linesearch"
            dnorm = np.linalg.norm(d)
            if grad @ d > -cfg.angle_rho * np.linalg.norm(grad) * dnorm or dnorm < cfg.min_step:
                d = -grad
                step_type = "gradient"
            slope = float(grad @ d)
            for _ in range(cfg.max_backtracks):
                trial = v + alpha * d
                phi_trial = residual(trial)
                psi_trial = merit(phi_trial) if np.all(np.isfinite(phi_trial)) else np.inf
                if psi_trial <= psi + alpha * cfg.sigma * slope:
                    break
                alpha *= cfg.step_beta
            else:
                # No admissible step length: the iterate cannot be improved.
                status = Status.STALLED
                break

        k += 1
        v, phi, psi = trial, phi_trial, psi_trial
        prev_norm, norm = norm, float(np.sqrt(2.0 * psi))
        trace.append(TraceRecord(k, psi, norm, step_type, damping, alpha))
        if norm > cfg.eps and k > cfg.K and prev_norm > 0 and norm / prev_norm >= cfg.eta:
            status = Status.STALLED
            break

    # Merit never increases across accepted steps, so the final iterate is the best one.
    return v, norm, status, k, trace


def solve(start: BlockVariable, problem: BilevelProblem, cfg: SolverConfig = SolverConfig()) -> SolveOutcome:
    """Run the method on the stationarity system of ``problem`` from ``start``."""
    q, m = problem.q, problem.m
    nz = q + m * q
    if start.q != q or start.m != m:
        raise ContractError(f"start point has (q={start.q}, m={start.m}), problem has (q={q}, m={m})")
    v, norm, status, k, trace = levenberg_marquardt(
        lambda v: assemble_residual(v[:nz], v[nz:], problem),
        lambda v: assemble_jacobian(v[:nz], v[nz:], problem),
        start.vector(), cfg)
    return SolveOutcome(BlockVariable.from_vector(v, q, m), norm, status, k, trace)
