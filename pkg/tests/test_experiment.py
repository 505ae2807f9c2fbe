import numpy as np
import pytest

from advreg.errors import ContractError, DataLoadError
from advreg.experiment import (REAL_ESTATE, WINE_QUALITY, DatasetSchema, ExperimentConfig, best_over_m,
                               denormalize, evaluate_mse, feature_movement, load_dataset, make_training_split,
                               normalize, run_sweep, save_dataset, split, write_report)
from advreg.model import Dataset
from advreg.solver import SolverConfig

from conftest import synthetic_frame, write_csv

SCHEMA = DatasetSchema(label_column="target")


def test_normalize_examples():
    data = Dataset(np.array([[2.0, 5.0], [4.0, 5.0], [6.0, 5.0]]), np.array([1.0, 2.0, 3.0]))
    scaled, params = normalize(data)
    np.testing.assert_allclose(scaled.rows[:, 0], [0, 0.5, 1])
    np.testing.assert_allclose(scaled.rows[:, 1], [0.5, 0.5, 0.5])
    np.testing.assert_allclose(scaled.labels, [0, 0.5, 1])
    back = denormalize(scaled, params)
    np.testing.assert_allclose(back.rows, data.rows, atol=1e-12)
    np.testing.assert_allclose(back.labels, data.labels, atol=1e-12)


def test_normalize_reuses_training_params():
    train = Dataset(np.array([[0.0], [10.0]]), np.array([0.0, 1.0]))
    test = Dataset(np.array([[5.0], [20.0]]), np.array([0.5, 2.0]))
    _, params = normalize(train)
    scaled, _ = normalize(test, params)
    np.testing.assert_allclose(scaled.rows[:, 0], [0.5, 2.0])


def test_split_counts_and_partition():
    data = synthetic_frame(414, 6)
    train, test = split(data, 0.8, seed=3)
    assert (train.n_rows, test.n_rows) == (331, 83)
    together = np.vstack([train.rows, test.rows])
    assert sorted(map(tuple, together)) == sorted(map(tuple, data.rows))
    again, _ = split(data, 0.8, seed=3)
    np.testing.assert_array_equal(again.rows, train.rows)
    with pytest.raises(ContractError):
        split(data, 1.0)


def test_training_split_examples():
    train = synthetic_frame(10, 3)
    last = make_training_split(train, 9, 0.0, seed=0)
    assert last.n == 1 and last.m == 9
    np.testing.assert_array_equal(last.adversary.target_labels, last.adversary.true_labels)
    a = make_training_split(train, 3, 0.5, seed=1)
    b = make_training_split(train, 3, 0.5, seed=1)
    np.testing.assert_array_equal(a.adversary.origin, b.adversary.origin)
    np.testing.assert_allclose(a.adversary.target_labels, a.adversary.true_labels + 0.5)
    with pytest.raises(ContractError):
        make_training_split(train, 10)
    with pytest.raises(ContractError):
        make_training_split(train, 0)


def test_csv_round_trip(tmp_path):
    data = Dataset(np.array([[0.1, 2.5], [3.0, -1.25], [7.0, 0.0]]), np.array([1.0, 0.5, 2.0]),
                   feature_names=("a", "b"), label_name="target")
    path = tmp_path / "three.csv"
    save_dataset(data, path)
    loaded = load_dataset(path, SCHEMA)
    np.testing.assert_array_equal(loaded.rows, data.rows)
    np.testing.assert_array_equal(loaded.labels, data.labels)
    assert loaded.feature_names == ("a", "b")


def test_presets_parse_their_layouts(tmp_path):
    wine = tmp_path / "wine.csv"
    wine.write_text('"fixed acidity";"residual sugar";"quality"\n7;20.7;6\n6.3;1.6;6\n')
    data = load_dataset(wine, WINE_QUALITY)
    assert data.n_features == 2 and data.labels.tolist() == [6, 6]
    estate = tmp_path / "estate.csv"
    estate.write_text("No,X1 transaction date,X2 house age,Y house price of unit area\n1,2012.9,32,37.9\n")
    data = load_dataset(estate, REAL_ESTATE)
    assert data.feature_names == ("X1 transaction date", "X2 house age")


def test_load_errors_name_location(tmp_path):
    with pytest.raises(DataLoadError, match="missing.csv"):
        load_dataset(tmp_path / "missing.csv", SCHEMA)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataLoadError, match="empty"):
        load_dataset(empty, SCHEMA)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,target\n1,2\nx,3\n")
    with pytest.raises(DataLoadError, match=r"bad.csv:3.*'a'"):
        load_dataset(bad, SCHEMA)
    with pytest.raises(DataLoadError, match="label column"):
        load_dataset(bad, DatasetSchema(label_column="quality"))


def test_mse_examples():
    data = Dataset(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([5.0, 11.0]))
    assert evaluate_mse([1.0, 2.0], data) == 0
    half = Dataset(np.ones((4, 2)), np.full(4, 0.5))
    assert evaluate_mse([0.0, 0.0], half) == pytest.approx(0.25)
    rng = np.random.default_rng(0)
    rows, labels, w = rng.normal(size=(7, 3)), rng.normal(size=7), rng.normal(size=3)
    oracle = sum((sum(w[j] * rows[i, j] for j in range(3)) - labels[i]) ** 2 for i in range(7)) / 7
    assert evaluate_mse(w, Dataset(rows, labels)) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(ContractError):
        evaluate_mse([1.0], data)


def test_feature_movement_examples():
    X0 = np.array([[0.2, 0.4, 0.6], [0.1, 0.3, 0.5]])
    np.testing.assert_array_equal(feature_movement(X0, X0), 0)
    moved = X0.copy()
    moved[0, 0] += 0.2
    np.testing.assert_allclose(feature_movement(moved, X0), [0.1, 0, 0])
    np.testing.assert_allclose(feature_movement(moved[::-1], X0[::-1]), feature_movement(moved, X0))


def _config(path, **kw):
    base = dict(dataset=str(path), schema=SCHEMA, m_grid=(1,), delta_grid=(0.95,), seeds=(0,),
                solver=SolverConfig(max_iter=30))
    base.update(kw)
    return ExperimentConfig(**base)


def test_minimal_sweep_has_one_record(small_csv):
    report = run_sweep(_config(small_csv))
    assert len(report.records) == 1
    rec = report.records[0]
    assert rec["m"] == 1 and rec["delta"] == 0.95 and rec["seed"] == 0
    assert all(rec[k] >= 0 for k in ("mse_bilevel", "mse_linreg", "mse_bs"))
    assert len(report.dataset_sha256) == 64


def test_sweep_reports_byte_identical(small_csv, tmp_path):
    cfg = _config(small_csv, m_grid=(1, 2), seeds=(0, 1))
    a = write_report(run_sweep(cfg), tmp_path / "a")
    b = write_report(run_sweep(cfg, jobs=2), tmp_path / "b")
    for kind in ("json", "csv"):
        assert a[kind].read_bytes() == b[kind].read_bytes()
        assert a[kind].name == b[kind].name


def test_sweep_records_cell_failures(small_csv):
    report = run_sweep(_config(small_csv, m_grid=(1, 500)))
    statuses = {r["m"]: r["status"] for r in report.records}
    assert statuses[500].startswith("Error")
    assert not statuses[1].startswith("Error")


def test_attacked_mse_not_below_clean_for_reference(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(path, synthetic_frame(120, 4, seed=3))
    report = run_sweep(_config(path, m_grid=(2,), seeds=(0, 1, 2, 3, 4), solver=SolverConfig(max_iter=5)))
    holds = [r["mse_linreg"] >= r["mse_linreg_clean"] for r in report.records]
    assert np.mean(holds) >= 0.9


def test_best_over_m_picks_minimum(small_csv):
    report = run_sweep(_config(small_csv, m_grid=(1, 2, 3)))
    best = best_over_m(report, 0.95)
    rows = [r for r in report.records if r["seed"] == 0]
    assert best[0]["m"] == min(rows, key=lambda r: r["mse_bilevel"])["m"]


def test_config_hash_changes_with_content(small_csv):
    assert _config(small_csv).config_hash() != _config(small_csv, m_grid=(2,)).config_hash()
    assert _config(small_csv).config_hash() == _config(small_csv).config_hash()
    with pytest.raises(ContractError):
        _config(small_csv, m_grid=())
