import numpy as np
import pytest

from advreg.attack import (AttackSpec, attack_instance, attacked_count, best_direction,
                           build_attacked_testset, restore_feasibility)
from advreg.errors import ContractError, DomainError
from advreg.model import Dataset, cosine_similarity

from oracles import polar_grid_attack_loss, random_attack_case


def test_unit_threshold_scales_along_ray():
    x = attack_instance(np.array([1.0, 1.0]), np.array([1.0, 1.0]), 4.0, 1.0)
    np.testing.assert_allclose(x, [2.0, 2.0], rtol=1e-8)


def test_target_already_met_returns_origin():
    w, x0 = np.array([0.5, 2.0]), np.array([1.0, 0.25])
    np.testing.assert_array_equal(attack_instance(w, x0, float(w @ x0), 0.9), x0)


@pytest.mark.parametrize("mixed", [False, True])
def test_matches_polar_grid(mixed):
    rng = np.random.default_rng(10 + mixed)
    for i in range(12):
        delta = (0.85, 0.9, 0.95, 1.0)[i % 4]
        w, x0, z, delta = random_attack_case(rng, delta, mixed)
        x = attack_instance(w, x0, z, delta)
        loss = float((w @ x - z) ** 2)
        assert cosine_similarity(x, x0) >= delta - 1e-8
        assert loss <= polar_grid_attack_loss(w, x0, z, delta) + 1e-3


def test_never_worse_than_origin():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = int(rng.integers(2, 6))
        w, x0 = rng.normal(size=q), rng.normal(size=q)
        z, delta = float(rng.normal()), float(rng.uniform(0.8, 1.0))
        x = attack_instance(w, x0, z, delta)
        assert (w @ x - z) ** 2 <= (w @ x0 - z) ** 2 + 1e-12
        assert cosine_similarity(x, x0) >= delta - 1e-8


def test_best_direction_inside_and_on_boundary():
    u, reach = best_direction(np.array([1.0, 1.0]), np.array([1.0, 0.9]), 0.9)
    np.testing.assert_allclose(u, np.array([1.0, 1.0]) / np.sqrt(2))
    assert reach == pytest.approx(np.sqrt(2))
    u, reach = best_direction(np.array([0.0, 1.0]), np.array([1.0, 0.0]), 0.8)
    assert u @ np.array([1.0, 0.0]) == pytest.approx(0.8)
    assert reach == pytest.approx(0.6)


def test_restore_feasibility_lands_on_cone():
    x0 = np.array([1.0, 0.0, 0.0])
    x = restore_feasibility(np.array([0.0, 1.0, 0.0]), x0, 0.9, np.ones(3))
    assert cosine_similarity(x, x0) == pytest.approx(0.9)
    inside = np.array([1.0, 0.1, 0.0])
    np.testing.assert_array_equal(restore_feasibility(inside, x0, 0.9, np.ones(3)), inside)


def test_input_validation():
    with pytest.raises(DomainError):
        attack_instance([1.0, 1.0], [0.0, 0.0], 1.0, 0.9)
    with pytest.raises(ContractError):
        attack_instance([1.0, 1.0], [1.0, 0.0], 1.0, 1.5)
    with pytest.raises(ContractError):
        attack_instance([1.0], [1.0, 0.0], 1.0, 0.9)
    with pytest.raises(ContractError):
        AttackSpec(fraction=0.0)


def test_attacked_count_rounding():
    assert attacked_count(83, 0.10) == 8
    assert attacked_count(980, 0.10) == 98
    assert attacked_count(4, 0.10) == 0
    assert attacked_count(5, 0.10) == 1


def _test_set(n=30, q=3, seed=0):
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0, 1, (n, q))
    return Dataset(rows, rows @ np.array([0.5, -0.2, 0.8]) + 0.05 * rng.normal(size=n))


def test_empty_attack_leaves_data_unchanged():
    test = _test_set(n=4)
    result = build_attacked_testset(test, np.ones(3), AttackSpec(fraction=0.1))
    assert result.indices.size == 0
    np.testing.assert_array_equal(result.data.rows, test.rows)


def test_attacked_set_valid_and_labels_untouched():
    test = _test_set()
    result = build_attacked_testset(test, np.array([0.5, -0.2, 0.8]), AttackSpec(fraction=0.2, seed=4))
    assert result.indices.size == 6
    np.testing.assert_array_equal(result.data.labels, test.labels)
    untouched = np.setdiff1d(np.arange(test.n_rows), result.indices)
    np.testing.assert_array_equal(result.data.rows[untouched], test.rows[untouched])
    for rec, thr in zip(result.records, result.thresholds):
        assert 0.8 <= thr <= 1.0
        assert rec.similarity >= thr - 1e-8
        assert rec.loss_after <= rec.loss_before
    np.testing.assert_allclose(result.targets, test.labels[result.indices] + 2 * np.std(test.labels))


def test_attack_is_deterministic():
    test = _test_set(seed=2)
    spec = AttackSpec(fraction=0.3, seed=9)
    a = build_attacked_testset(test, np.array([0.5, -0.2, 0.8]), spec)
    b = build_attacked_testset(test, np.array([0.5, -0.2, 0.8]), spec)
    assert a.data.rows.tobytes() == b.data.rows.tobytes()
    np.testing.assert_array_equal(a.indices, b.indices)


def test_zero_rows_never_selected():
    rows = np.vstack([np.zeros((5, 2)), np.ones((5, 2))])
    test = Dataset(rows, np.arange(10.0))
    result = build_attacked_testset(test, np.ones(2), AttackSpec(fraction=0.5, seed=1))
    assert set(result.indices) <= set(range(5, 10))
