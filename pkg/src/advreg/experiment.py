"""Dataset handling, the (m, delta) sweep and report serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import attack as attack_mod
from .baselines import fit_bs, fit_linreg
from .errors import ContractError, DataLoadError
from .model import AdversaryBlock, Dataset, ModelConfig, TrainingSplit
from .solver import SolverConfig, initial_point, solve
from .stationarity import BilevelProblem

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# loading and preprocessing


@dataclass(frozen=True)
class DatasetSchema:
    label_column: str
    drop_columns: tuple[str, ...] = ()
    delimiter: Optional[str] = None
    name: str = "dataset"


WINE_QUALITY = DatasetSchema(label_column="quality", delimiter=";", name="wine-quality")
REAL_ESTATE = DatasetSchema(label_column="Y house price of unit area", drop_columns=("No",), name="real-estate")


def _sniff_delimiter(header_line: str) -> str:
    counts = {d: header_line.count(d) for d in (",", ";", "\t")}
    return max(counts, key=counts.get)


def load_dataset(path, schema: DatasetSchema) -> Dataset:
    """Read a headered CSV file; every non-label, non-dropped column is a feature."""
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"dataset file not found: {path}")
    text = path.read_text(encoding="utf-8-sig")
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataLoadError(f"{path}: file is empty")
    delimiter = schema.delimiter or _sniff_delimiter(lines[0])
    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    if schema.label_column not in header:
        raise DataLoadError(f"{path}: label column {schema.label_column!r} not in header {header}")
    missing = [c for c in schema.drop_columns if c not in header]
    if missing:
        raise DataLoadError(f"{path}: columns to drop {missing} not in header")
    label_idx = header.index(schema.label_column)
    feature_idx = [i for i, h in enumerate(header) if i != label_idx and h not in schema.drop_columns]
    if not feature_idx:
        raise DataLoadError(f"{path}: no feature columns left")

    rows, labels = [], []
    for line_no, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != len(header):
            raise DataLoadError(f"{path}:{line_no}: expected {len(header)} cells, found {len(record)}")
        values = []
        for i in feature_idx + [label_idx]:
            try:
                values.append(float(record[i]))
            except ValueError:
                raise DataLoadError(
                    f"{path}:{line_no}: non-numeric value {record[i]!r} in column {header[i]!r}") from None
        rows.append(values[:-1])
        labels.append(values[-1])
    if not rows:
        raise DataLoadError(f"{path}: no data rows")
    data = Dataset(np.array(rows), np.array(labels),
                   feature_names=tuple(header[i] for i in feature_idx), label_name=schema.label_column)
    log.info("loaded %s: %d rows x %d features", path, data.n_rows, data.n_features)
    return data


def save_dataset(data: Dataset, path, delimiter=",") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(list(data.feature_names) + [data.label_name])
        for row, label in zip(data.rows, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])


@dataclass(frozen=True)
class MinMaxParams:
    feature_min: np.ndarray
    feature_max: np.ndarray
    label_min: float
    label_max: float


def fit_minmax(data: Dataset) -> MinMaxParams:
    return MinMaxParams(data.rows.min(axis=0), data.rows.max(axis=0),
                        float(data.labels.min()), float(data.labels.max()))


def _scale(values, lo, hi):
    span = hi - lo
    const = span == 0
    out = (values - lo) / np.where(const, 1.0, span)
    return np.where(const, 0.5, out)


def _unscale(values, lo, hi):
    span = hi - lo
    return np.where(span == 0, lo, values * span + lo)


def normalize(data: Dataset, params: Optional[MinMaxParams] = None) -> tuple[Dataset, MinMaxParams]:
    """Min-max scale features and labels; constant columns map to 0.5.

    Pass ``params`` fitted on the training portion to transform a test set.
    """
    params = params or fit_minmax(data)
    rows = _scale(data.rows, params.feature_min, params.feature_max)
    labels = _scale(data.labels, params.label_min, params.label_max)
    return replace(data, rows=rows, labels=labels), params


def denormalize(data: Dataset, params: MinMaxParams) -> Dataset:
    rows = _unscale(data.rows, params.feature_min, params.feature_max)
    labels = _unscale(data.labels, params.label_min, params.label_max)
    return replace(data, rows=rows, labels=labels)


def split(data: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first round-half-up(ratio * n) rows train."""
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"split ratio must lie in (0, 1), got {ratio}")
    n = data.n_rows
    n_train = int(math.floor(ratio * n + 0.5))
    if not 0 < n_train < n:
        raise ContractError(f"ratio {ratio} leaves an empty side for {n} rows")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(order[:n_train])), data.subset(np.sort(order[n_train:]))


def make_training_split(train: Dataset, m: int, nu: Optional[float] = None, seed: int = 0) -> TrainingSplit:
    """Pick m seeded rows (never zero-norm ones) as the adversary's block; Z = Y + nu.

    ``nu=None`` uses two standard deviations of the training labels.
    """
    n = train.n_rows
    if not 1 <= m < n:
        raise ContractError(f"m must satisfy 1 <= m < {n}, got {m}")
    eligible = np.flatnonzero(np.linalg.norm(train.rows, axis=1) > 0)
    if eligible.size < m:
        raise ContractError(f"only {eligible.size} non-zero rows available for m={m}")
    nu = 2.0 * float(np.std(train.labels)) if nu is None else float(nu)
    chosen = np.sort(np.random.default_rng(seed).choice(eligible, size=m, replace=False))
    rest = np.setdiff1d(np.arange(n), chosen)
    adversary = AdversaryBlock.from_rows(train.rows[chosen], train.labels[chosen], nu)
    return TrainingSplit(train.subset(rest), adversary)


def evaluate_mse(w, test: Dataset) -> float:
    w = np.asarray(w, dtype=float)
    if w.shape != (test.n_features,):
        raise ContractError(f"weights of length {w.size} for {test.n_features} features")
    return float(np.mean((test.rows @ w - test.labels) ** 2))


def feature_movement(X_star, X_origin) -> np.ndarray:
    """Mean absolute displacement per feature column, averaged over the rows."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    X_origin = np.atleast_2d(np.asarray(X_origin, dtype=float))
    if X_star.shape != X_origin.shape:
        raise ContractError(f"shapes {X_star.shape} and {X_origin.shape} differ")
    return np.mean(np.abs(X_star - X_origin), axis=0)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    schema: DatasetSchema
    split_ratio: float = 0.8
    m_grid: tuple[int, ...] = (1, 2, 3, 5, 8, 13, 21, 34)
    delta_grid: tuple[float, ...] = (0.85, 0.90, 0.95, 0.99)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    attack: attack_mod.AttackSpec = attack_mod.AttackSpec()
    ridge: Optional[float] = 100.0
    nu: Optional[float] = None
    rho_a: float = 1.0
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        if not self.m_grid or not self.delta_grid or not self.seeds:
            raise ContractError("m_grid, delta_grid and seeds must be non-empty")
        if not 0.0 < self.split_ratio < 1.0:
            raise ContractError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["attack"].pop("seed", None)  # attacks are seeded per experiment seed
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class PreparedSeed:
    seed: int
    train: Dataset
    test: Dataset
    attacked: attack_mod.AttackResult
    w_linreg: np.ndarray


def prepare_seed(data: Dataset, cfg: ExperimentConfig, seed: int) -> PreparedSeed:
    """Split, normalize on the training portion, fit LinReg and attack the test set with it."""
    train_raw, test_raw = split(data, cfg.split_ratio, seed)
    train, params = normalize(train_raw)
    test, _ = normalize(test_raw, params)
    w_lin = fit_linreg(train, cfg.ridge)
    spec = replace(cfg.attack, seed=seed)
    attacked = attack_mod.build_attacked_testset(test, w_lin, spec)
    return PreparedSeed(seed, train, test, attacked, w_lin)


def solve_bilevel(split_: TrainingSplit, model_cfg: ModelConfig, solver_cfg: SolverConfig, w0):
    problem = BilevelProblem(split_, model_cfg)
    return solve(initial_point(problem, w0), problem, solver_cfg)


def run_cell(prepared: PreparedSeed, m: int, deltas: Sequence[float], cfg: ExperimentConfig) -> list[dict]:
    """All records for one (seed, m): the B&S fit is shared across thresholds."""
    train_split = make_training_split(prepared.train, m, cfg.nu, prepared.seed)
    bs = fit_bs(train_split, cfg.ridge, cfg.rho_a)
    clean, attacked = prepared.test, prepared.attacked.data
    records = []
    for delta in deltas:
        record = {
            "m": int(m), "delta": float(delta), "seed": int(prepared.seed),
            "mse_linreg": evaluate_mse(prepared.w_linreg, attacked),
            "mse_bs": evaluate_mse(bs.weights, attacked),
            "mse_linreg_clean": evaluate_mse(prepared.w_linreg, clean),
            "mse_bs_clean": evaluate_mse(bs.weights, clean),
            "bs_converged": bs.converged,
        }
        try:
            model_cfg = ModelConfig(delta=float(delta), ridge=cfg.ridge, nu=cfg.nu)
            outcome = solve_bilevel(train_split, model_cfg, cfg.solver, prepared.w_linreg)
            w = outcome.point.w
            record.update({
                "mse_bilevel": evaluate_mse(w, attacked),
                "mse_bilevel_clean": evaluate_mse(w, clean),
                "status": outcome.status.value,
                "iterations": outcome.iterations,
                "residual_norm": outcome.residual_norm,
                "initial_residual_norm": outcome.trace[0].residual_norm,
                "movement": feature_movement(outcome.point.X, train_split.adversary.origin).tolist(),
                "weights": w.tolist(),
            })
        except Exception as exc:  # a failing cell is recorded, the sweep goes on
            log.warning("cell m=%d delta=%g seed=%d failed: %s", m, delta, prepared.seed, exc)
            record.update({"mse_bilevel": None, "mse_bilevel_clean": None, "status": f"Error: {exc}",
                           "iterations": 0, "residual_norm": None, "initial_residual_norm": None,
                           "movement": None, "weights": None})
        records.append(record)
    return records


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    dataset_sha256: str
    feature_names: list
    records: list
    aggregates: list = field(default_factory=list)
    feature_movement: dict = field(default_factory=dict)
    attacks: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)


def _mean_std(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def aggregate(records: list[dict]) -> list[dict]:
    cells = sorted({(r["m"], r["delta"]) for r in records})
    out = []
    for m, delta in cells:
        group = [r for r in records if r["m"] == m and r["delta"] == delta]
        row = {"m": m, "delta": delta, "n_seeds": len(group)}
        for key in ("mse_bilevel", "mse_linreg", "mse_bs", "mse_bilevel_clean", "mse_linreg_clean", "mse_bs_clean"):
            row[f"{key}_mean"], row[f"{key}_std"] = _mean_std([r[key] for r in group])
        row["converged"] = sum(r["status"] == "Converged" for r in group)
        out.append(row)
    return out


def movement_summary(records: list[dict], feature_names) -> dict:
    """Per-feature movement averaged over seeds, for every (m, delta) cell and overall."""
    usable = [r for r in records if r.get("movement") is not None]
    per_cell = {}
    for m, delta in sorted({(r["m"], r["delta"]) for r in usable}):
        group = [r["movement"] for r in usable if r["m"] == m and r["delta"] == delta]
        per_cell[f"m={m},delta={delta}"] = np.mean(group, axis=0).tolist()
    overall = np.mean([r["movement"] for r in usable], axis=0).tolist() if usable else []
    return {"features": list(feature_names), "overall": overall, "per_cell": per_cell}


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, data: Optional[Dataset] = None) -> ExperimentReport:
    """Run every (m, delta, seed) cell and collect the report.

    Results are ordered by (m, delta, seed) whatever the execution order, so
    the report is a deterministic function of config and data.
    """
    if data is None:
        data = load_dataset(cfg.dataset, cfg.schema)
    bad = [m for m in cfg.m_grid if m < 1]
    if bad:
        raise ContractError(f"m values must be >= 1, got {bad}")

    prepared = {seed: prepare_seed(data, cfg, seed) for seed in cfg.seeds}
    tasks = [(seed, m) for seed in cfg.seeds for m in cfg.m_grid]

    def cell(seed, m):
        try:
            return run_cell(prepared[seed], m, cfg.delta_grid, cfg)
        except ContractError as exc:
            log.warning("cell m=%d seed=%d skipped: %s", m, seed, exc)
            return [{"m": int(m), "delta": float(d), "seed": int(seed), "status": f"Error: {exc}",
                     "mse_bilevel": None, "mse_linreg": None, "mse_bs": None, "mse_bilevel_clean": None,
                     "mse_linreg_clean": None, "mse_bs_clean": None, "bs_converged": None,
                     "iterations": 0, "residual_norm": None, "initial_residual_norm": None,
                     "movement": None, "weights": None} for d in cfg.delta_grid]

    if jobs == 1:
        chunks = [cell(seed, m) for seed, m in tasks]
    else:
        from joblib import Parallel, delayed

        chunks = Parallel(n_jobs=jobs)(delayed(cell)(seed, m) for seed, m in tasks)
    records = sorted((r for chunk in chunks for r in chunk), key=lambda r: (r["m"], r["delta"], r["seed"]))

    attacks = {str(seed): [asdict(rec) for rec in p.attacked.records] for seed, p in prepared.items()}
    checksum = _sha256_file(cfg.dataset) if cfg.dataset and Path(cfg.dataset).is_file() else ""
    return ExperimentReport(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        dataset_sha256=checksum,
        feature_names=list(data.feature_names),
        records=records,
        aggregates=aggregate(records),
        feature_movement=movement_summary(records, data.feature_names),
        attacks=attacks,
    )


CSV_FIELDS = ("m", "delta", "seed", "mse_bilevel", "mse_linreg", "mse_bs", "mse_bilevel_clean",
              "mse_linreg_clean", "mse_bs_clean", "status", "iterations", "residual_norm",
              "initial_residual_norm", "bs_converged")


def write_report(report: ExperimentReport, out_dir) -> dict[str, Path]:
    """Write ``report-<hash>.json`` and ``cells-<hash>.csv``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = report.config_hash[:12]
    json_path = out_dir / f"report-{tag}.json"
    csv_path = out_dir / f"cells-{tag}.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for rec in report.records:
            writer.writerow(["" if rec.get(k) is None else rec.get(k) for k in CSV_FIELDS])
    return {"json": json_path, "csv": csv_path}


def best_over_m(report: ExperimentReport, delta: float) -> dict[int, dict]:
    """For each seed, the m minimizing the bilevel attacked MSE at ``delta``."""
    out = {}
    for seed in sorted({r["seed"] for r in report.records}):
        rows = [r for r in report.records
                if r["seed"] == seed and math.isclose(r["delta"], delta) and r["mse_bilevel"] is not None]
        if rows:
            best = min(rows, key=lambda r: (r["mse_bilevel"], r["m"]))
            out[seed] = {"m": best["m"], "mse_bilevel": best["mse_bilevel"], "mse_linreg": best["mse_linreg"]}
    return out
