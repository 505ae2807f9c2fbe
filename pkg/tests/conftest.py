import csv

import numpy as np
import pytest

from advreg.baselines import combined_weights, fit_linreg
from advreg.model import AdversaryBlock, Dataset, ModelConfig, TrainingSplit
from advreg.stationarity import BilevelProblem


def toy_problem(seed, nu=0.0, delta=0.9, ridge=None):
    """Small random bilevel instance with entries in (0.1, 1) and its ridge warm start."""
    rng = np.random.default_rng(seed)
    q, m, n = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 6))
    D = rng.uniform(0.1, 1, (n, q))
    gamma = rng.uniform(0.1, 1, n)
    X0 = rng.uniform(0.1, 1, (m, q))
    Y = rng.uniform(0.1, 1, m)
    split = TrainingSplit(Dataset(D, gamma), AdversaryBlock.from_rows(X0, Y, nu))
    problem = BilevelProblem(split, ModelConfig(delta=delta, ridge=ridge))
    data, weights = combined_weights(split)
    return problem, fit_linreg(data, 100.0, weights)


def synthetic_frame(n_rows, n_features, seed=0):
    """Positive, correlated features with a noisy linear label, like a small tabular benchmark."""
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(n_features, n_features)) / np.sqrt(n_features)
    rows = np.exp(0.5 * rng.normal(size=(n_rows, n_features)) @ mix)
    coef = rng.normal(size=n_features)
    labels = rows @ coef + 0.3 * rng.normal(size=n_rows)
    names = tuple(f"f{j}" for j in range(n_features))
    return Dataset(np.round(rows, 4), np.round(labels, 4), feature_names=names, label_name="target")


def write_csv(path, data, delimiter=","):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(list(data.feature_names) + [data.label_name])
        for row, label in zip(data.rows, data.labels):
            writer.writerow([f"{v:.4f}" for v in row] + [f"{label:.4f}"])


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "small.csv"
    write_csv(path, synthetic_frame(60, 3, seed=1))
    return path


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed after the run."""
    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
