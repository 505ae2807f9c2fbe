"""Test-time evasion attacks.

Each attacked row solves

    min_x (w.x - z)^2   subject to   cos(x, x0) >= delta

with an augmented-Lagrangian outer loop around projected-gradient inner steps
(the projection keeps iterates off the apex of the cone). Several starts are
tried and the best feasible point is kept; among equally good points the one
closest to ``x0`` wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, DomainError
from .model import Dataset, cosine_similarity

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class AttackSpec:
    fraction: float = 0.10
    threshold_low: float = 0.8
    threshold_high: float = 1.0
    perturbation: Optional[float] = None  # None: 2 * std of the test labels
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ContractError(f"attacked fraction must lie in (0, 1], got {self.fraction}")
        if not -1.0 < self.threshold_low <= self.threshold_high <= 1.0:
            raise ContractError("thresholds must satisfy -1 < low <= high <= 1")


@dataclass(frozen=True)
class AttackRecord:
    index: int
    threshold: float
    target: float
    similarity: float
    loss_before: float
    loss_after: float


@dataclass(frozen=True)
class AttackResult:
    data: Dataset
    indices: np.ndarray
    thresholds: np.ndarray
    targets: np.ndarray
    records: list = field(default_factory=list)


@dataclass(frozen=True)
class InnerSettings:
    n_starts: int = 5
    outer_iter: int = 30
    inner_iter: int = 200
    tol: float = 1e-12
    penalty0: float = 10.0
    penalty_max: float = 1e8
    start_scale: float = 0.1


def _cos_and_grad(x, x0, n0):
    nx = np.linalg.norm(x)
    d = float(x @ x0 / (nx * n0))
    grad = x0 / (nx * n0) - d * x / nx**2
    return d, grad


def _orthonormal_hint(axis, w):
    v = w - (w @ axis) * axis
    if np.linalg.norm(v) < 1e-12:
        v = np.zeros_like(axis)
        v[int(np.argmin(np.abs(axis)))] = 1.0
        v -= (v @ axis) * axis
    return v / np.linalg.norm(v)


def restore_feasibility(x, x0, delta, w):
    """Map x onto the cone {cos(., x0) >= delta}.

    Infeasible points are rotated towards x0 inside the plane they span until
    the angle equals arccos(delta); the length becomes the projection of x onto
    the boundary ray.
    """
    x = np.asarray(x, dtype=float)
    axis = x0 / np.linalg.norm(x0)
    nx = np.linalg.norm(x)
    if nx > 0 and x @ axis / nx >= delta:
        return x
    v = x - (x @ axis) * axis
    vhat = v / np.linalg.norm(v) if np.linalg.norm(v) > 1e-12 * max(nx, 1.0) else _orthonormal_hint(axis, w)
    u = delta * axis + math.sqrt(max(0.0, 1.0 - delta * delta)) * vhat
    u /= np.linalg.norm(u)
    length = max(float(x @ u), 1e-8 * np.linalg.norm(x0))
    return length * u


def best_direction(w, x0, delta):
    """Unit vector u in the cone maximizing w.u, and that maximum.

    The cone is {u : angle(u, x0) <= arccos(delta)}; the maximizer is w's own
    direction when it lies inside, otherwise the boundary direction in the
    plane of x0 and w.
    """
    axis = x0 / np.linalg.norm(x0)
    wn = np.linalg.norm(w)
    if wn == 0:
        return axis, 0.0
    what = w / wn
    alpha = math.acos(min(1.0, max(-1.0, float(what @ axis))))
    theta = math.acos(min(1.0, max(-1.0, delta)))
    if alpha <= theta:
        return what, wn
    u = math.cos(theta) * axis + math.sin(theta) * _orthonormal_hint(axis, what)
    u /= np.linalg.norm(u)
    return u, float(w @ u)


def _rescale(x, w, z):
    # Scaling along a ray leaves the cosine unchanged.
    s = float(w @ x)
    if s * z > 0:
        return x * (z / s)
    return x


def _al_solve(w, x0, z, delta, start, cfg: InnerSettings):
    n0 = np.linalg.norm(x0)
    r_min = 1e-8 * n0
    mu, rho = 0.0, cfg.penalty0
    x = start.copy()

    def lagr(x):
        d, dgrad = _cos_and_grad(x, x0, n0)
        c = delta - d
        res = float(w @ x - z)
        shifted = max(0.0, c + mu / rho)
        val = res * res + 0.5 * rho * shifted * shifted
        grad = 2.0 * res * w - rho * shifted * dgrad
        return val, grad, c

    def project(x):
        nx = np.linalg.norm(x)
        if nx >= r_min:
            return x
        if nx == 0:
            return x0 * (r_min / n0)
        return x * (r_min / nx)

    prev_c = np.inf
    for _ in range(cfg.outer_iter):
        val, grad, c = lagr(x)
        step = 1.0 / (2.0 * (w @ w) + rho + 1e-12)
        for _ in range(cfg.inner_iter):
            if grad @ grad <= cfg.tol:
                break
            t = step
            while True:
                x_new = project(x - t * grad)
                val_new, grad_new, c_new = lagr(x_new)
                if val_new <= val - 1e-4 * (grad @ (x - x_new)) or t < 1e-14:
                    break
                t *= 0.5
            s_vec, y_vec = x_new - x, grad_new - grad
            sy = float(s_vec @ y_vec)
            step = float(s_vec @ s_vec) / sy if sy > 1e-300 else 2.0 * t
            x, val, grad, c = x_new, val_new, grad_new, c_new
        mu = max(0.0, mu + rho * c)
        if c <= FEAS_TOL and (w @ x - z) ** 2 <= cfg.tol:
            break
        if c > 0.25 * prev_c:
            rho = min(rho * 10.0, cfg.penalty_max)
        prev_c = max(c, 0.0)
    return x


def attack_instance(w, x0, z: float, delta: float, rng: Optional[np.random.Generator] = None,
                    settings: InnerSettings = InnerSettings()) -> np.ndarray:
    """Row closest (in adversary loss) to target ``z`` inside the cosine cone around ``x0``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if w.shape != x0.shape:
        raise ContractError(f"weights of length {w.size} for a row of length {x0.size}")
    if np.linalg.norm(x0) == 0:
        raise DomainError("cannot attack a zero-norm row: cosine similarity is undefined")
    if not -1.0 < delta <= 1.0:
        raise ContractError(f"threshold must lie in (-1, 1], got {delta}")
    rng = rng if rng is not None else np.random.default_rng(0)

    base_loss = float((w @ x0 - z) ** 2)
    if base_loss == 0.0:
        return x0.copy()

    n0 = np.linalg.norm(x0)
    sign = 1.0 if z >= 0 else -1.0
    u_best, reach = best_direction(sign * w, x0, delta)
    if z != 0 and reach <= 0:
        # No feasible direction moves the prediction towards z: the infimum z^2
        # is only approached at the apex of the cone, so take a short step there.
        apex = 1e-6 * n0 * u_best
        return apex if (w @ apex - z) ** 2 < base_loss else x0.copy()

    starts = [x0.copy()]
    for _ in range(settings.n_starts - 1):
        noise = rng.standard_normal(x0.size)
        starts.append(x0 + settings.start_scale * n0 * noise / math.sqrt(x0.size))

    candidates = [x0.copy(), _rescale(x0.copy(), w, z), _rescale(u_best * n0, w, z)]
    for start in starts:
        x = _al_solve(w, x0, z, delta, start, settings)
        x = restore_feasibility(x, x0, delta, w)
        candidates.append(x)
        candidates.append(_rescale(x, w, z))

    best, best_key = x0.copy(), (base_loss, 0.0)
    for x in candidates:
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) == 0:
            continue
        if cosine_similarity(x, x0) < delta - FEAS_TOL:
            continue
        key = (float((w @ x - z) ** 2), float(np.linalg.norm(x - x0)))
        # Losses within roundoff count as ties; then prefer the smaller move.
        if key[0] < best_key[0] - 1e-15 or (abs(key[0] - best_key[0]) <= 1e-15 and key[1] < best_key[1]):
            best, best_key = x, key
    return best


def attacked_count(n_rows: int, fraction: float) -> int:
    return int(math.floor(fraction * n_rows + 0.5))


def build_attacked_testset(test: Dataset, w_reference, spec: AttackSpec,
                           settings: InnerSettings = InnerSettings()) -> AttackResult:
    """Replace a seeded random subset of test rows by their attacked versions.

    Labels are left untouched so evaluation is against the ground truth.
    Zero-norm rows are never selected.
    """
    rng = np.random.default_rng(spec.seed)
    w = np.asarray(w_reference, dtype=float)
    delta_shift = 2.0 * float(np.std(test.labels)) if spec.perturbation is None else float(spec.perturbation)
    eligible = np.flatnonzero(np.linalg.norm(test.rows, axis=1) > 0)
    t = min(attacked_count(test.n_rows, spec.fraction), eligible.size)
    indices = np.sort(rng.choice(eligible, size=t, replace=False)) if t else np.empty(0, dtype=int)
    thresholds = rng.uniform(spec.threshold_low, spec.threshold_high, size=t)
    targets = test.labels[indices] + delta_shift

    rows = test.rows.copy()
    records = []
    for idx, thr, z in zip(indices, thresholds, targets):
        x0 = test.rows[idx]
        x = attack_instance(w, x0, float(z), float(thr), rng, settings)
        rows[idx] = x
        records.append(AttackRecord(int(idx), float(thr), float(z), cosine_similarity(x, x0),
                                    float((w @ x0 - z) ** 2), float((w @ x - z) ** 2)))
    return AttackResult(replace(test, rows=rows), indices, thresholds, targets, records)
