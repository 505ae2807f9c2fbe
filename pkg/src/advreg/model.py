"""Data containers, losses and objectives for the learner/adversary game.

Matrices are stored row-per-instance (``rows x features``). The solver works on
flat vectors; :func:`flatten_rows` / :func:`unflatten_rows` convert between the
two views using row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, DomainError


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with one label per row."""

    rows: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = field(default=(), compare=False)
    label_name: str = field(default="label", compare=False)

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        labels = np.asarray(self.labels, dtype=float).reshape(-1)
        if rows.shape[0] < 1 or rows.shape[1] < 1:
            raise ContractError(f"dataset needs at least one row and one feature, got shape {rows.shape}")
        if labels.shape[0] != rows.shape[0]:
            raise ContractError(f"{rows.shape[0]} rows but {labels.shape[0]} labels")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(rows.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return replace(self, rows=self.rows[index], labels=self.labels[index])


@dataclass(frozen=True)
class AdversaryBlock:
    """Instances the adversary controls.

    ``current`` is the manipulable data X, ``origin`` the untouched start X0,
    ``true_labels`` Y and ``target_labels`` Z.
    """

    current: np.ndarray
    origin: np.ndarray
    true_labels: np.ndarray
    target_labels: np.ndarray

    def __post_init__(self):
        current = np.atleast_2d(np.asarray(self.current, dtype=float))
        origin = np.atleast_2d(np.asarray(self.origin, dtype=float))
        y = np.asarray(self.true_labels, dtype=float).reshape(-1)
        z = np.asarray(self.target_labels, dtype=float).reshape(-1)
        if current.shape != origin.shape:
            raise ContractError(f"current {current.shape} and origin {origin.shape} differ in shape")
        m = current.shape[0]
        if m < 1:
            raise ContractError("adversary block is empty")
        if y.shape[0] != m or z.shape[0] != m:
            raise ContractError(f"expected {m} true and target labels, got {y.shape[0]} and {z.shape[0]}")
        norms = np.linalg.norm(origin, axis=1)
        if np.any(norms == 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise DomainError(f"origin row {bad} is the zero vector; cosine similarity is undefined", row=bad)
        object.__setattr__(self, "current", current)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "true_labels", y)
        object.__setattr__(self, "target_labels", z)

    @classmethod
    def from_rows(cls, rows, labels, nu: float = 0.0) -> "AdversaryBlock":
        """Start block: X = X0 = ``rows`` and Z = Y + nu."""
        if nu < 0:
            raise ContractError(f"target offset nu must be >= 0, got {nu}")
        rows = np.asarray(rows, dtype=float)
        labels = np.asarray(labels, dtype=float)
        return cls(rows.copy(), rows.copy(), labels, labels + nu)

    @property
    def m(self) -> int:
        return self.current.shape[0]

    @property
    def n_features(self) -> int:
        return self.current.shape[1]

    def with_current(self, current) -> "AdversaryBlock":
        return replace(self, current=np.asarray(current, dtype=float).reshape(self.origin.shape))


@dataclass(frozen=True)
class ModelConfig:
    """Similarity threshold ``delta``, ridge weight ``ridge`` (None disables
    the ridge term) and training target offset ``nu`` (None: two standard
    deviations of the training labels)."""

    delta: float = 0.95
    ridge: Optional[float] = 100.0
    nu: Optional[float] = None

    def __post_init__(self):
        if not -1.0 < self.delta <= 1.0:
            raise ContractError(f"delta must lie in (-1, 1], got {self.delta}")
        if self.ridge is not None and not self.ridge > 0:
            raise ContractError(f"ridge must be > 0 when enabled, got {self.ridge}")
        if self.nu is not None and self.nu < 0:
            raise ContractError(f"nu must be >= 0, got {self.nu}")

    @property
    def ridge_coef(self) -> float:
        """Multiplier of ||w||^2 in the upper objective (0 when disabled)."""
        return 0.0 if self.ridge is None else 1.0 / self.ridge


@dataclass(frozen=True)
class TrainingSplit:
    """Training data divided into the static set and the adversary's block."""

    static: Dataset
    adversary: AdversaryBlock

    def __post_init__(self):
        if self.static.n_features != self.adversary.n_features:
            raise ContractError(
                f"static set has {self.static.n_features} features, adversary block {self.adversary.n_features}"
            )

    @property
    def n(self) -> int:
        return self.static.n_rows

    @property
    def m(self) -> int:
        return self.adversary.m

    @property
    def q(self) -> int:
        return self.static.n_features


def flatten_rows(rows: np.ndarray) -> np.ndarray:
    return np.asarray(rows, dtype=float).reshape(-1)


def unflatten_rows(vec: np.ndarray, q: int) -> np.ndarray:
    return np.asarray(vec, dtype=float).reshape(-1, q)


def _check_width(w, width, what):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != width:
        raise ContractError(f"weights have length {w.shape[0]} but {what} has {width} features")
    return w


def predict(w, x) -> float:
    """Linear prediction w.x for a single feature row."""
    x = np.asarray(x, dtype=float).reshape(-1)
    w = _check_width(w, x.shape[0], "row")
    return float(w @ x)


def learner_loss(prediction: float, label: float) -> float:
    return float((prediction - label) ** 2)


def adversary_loss(prediction: float, target: float) -> float:
    # Same squared distance as the learner's loss, measured to the target.
    return learner_loss(prediction, target)


def upper_objective(w, adversary: AdversaryBlock, static: Dataset, cfg: ModelConfig) -> float:
    """Learner's objective: mean squared error on the static rows plus mean
    squared error of the adversary's current rows against their true labels,
    plus the optional ridge term ||w||^2 / rho."""
    w = _check_width(w, static.n_features, "static set")
    _check_width(w, adversary.n_features, "adversary block")
    static_res = static.rows @ w - static.labels
    adv_res = adversary.current @ w - adversary.true_labels
    value = np.mean(static_res**2) + np.mean(adv_res**2)
    return float(value + cfg.ridge_coef * (w @ w))


def lower_objective(w, adversary: AdversaryBlock) -> float:
    """Adversary's objective: mean squared distance of predictions to targets."""
    w = _check_width(w, adversary.n_features, "adversary block")
    res = adversary.current @ w - adversary.target_labels
    return float(np.mean(res**2))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"vectors of length {a.shape[0]} and {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("cosine similarity of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def row_cosines(rows: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; raises DomainError naming the first zero row."""
    rows = np.atleast_2d(rows)
    origin = np.atleast_2d(origin)
    nr = np.linalg.norm(rows, axis=1)
    no = np.linalg.norm(origin, axis=1)
    for norms, what in ((nr, "current"), (no, "origin")):
        if np.any(norms == 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise DomainError(f"{what} row {bad} has zero norm; cosine similarity is undefined", row=bad)
    return np.einsum("ij,ij->i", rows, origin) / (nr * no)


def constraint_values(adversary: AdversaryBlock, delta: float) -> np.ndarray:
    """g_i = delta - cos(X_i, X0_i); the block is feasible when every entry is <= 0."""
    return delta - row_cosines(adversary.current, adversary.origin)
