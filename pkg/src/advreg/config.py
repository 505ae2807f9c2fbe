"""TOML experiment files.

A file has up to five tables, all optional except ``[dataset]``::

    [dataset]
    path = "winequality-white.csv"   # relative paths resolve against the file
    label_column = "quality"         # omitted: detected from the header
    delimiter = ";"
    drop_columns = []

    [experiment]
    split_ratio = 0.8
    m_grid = [1, 2, 3]
    delta_grid = [0.95]
    seeds = [0, 1, 2, 3, 4]

    [attack]      # fraction, threshold_low, threshold_high, perturbation
    [model]       # ridge (false disables it), nu, rho_a
    [solver]      # any SolverConfig field

Unknown tables or keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .attack import AttackSpec
from .errors import ContractError, DataLoadError
from .experiment import REAL_ESTATE, WINE_QUALITY, DatasetSchema, ExperimentConfig
from .solver import SolverConfig

PRESETS = (WINE_QUALITY, REAL_ESTATE)

_DATASET_KEYS = {"path", "label_column", "delimiter", "drop_columns", "name"}
_EXPERIMENT_KEYS = {"split_ratio", "m_grid", "delta_grid", "seeds"}
_ATTACK_KEYS = {"fraction", "threshold_low", "threshold_high", "perturbation"}
_MODEL_KEYS = {"ridge", "nu", "rho_a"}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}


def _check_keys(table: dict, allowed: set, where: str):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ContractError(f"unknown key(s) {unknown} in [{where}]; allowed: {sorted(allowed)}")


def detect_schema(path, label_column: Optional[str] = None) -> DatasetSchema:
    """Schema for a CSV file: a known preset when its header matches, else a bare label column."""
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8-sig") as fh:
        first = fh.readline()
    counts = {d: first.count(d) for d in (",", ";", "\t")}
    delimiter = max(counts, key=counts.get)
    header = [h.strip() for h in next(csv.reader([first], delimiter=delimiter), [])]
    for preset in PRESETS:
        if preset.label_column in header and (label_column is None or label_column == preset.label_column):
            return preset
    if label_column is None:
        raise DataLoadError(f"{path}: cannot tell which column is the label; pass --label-column")
    return DatasetSchema(label_column=label_column, delimiter=delimiter, name=path.stem)


def _ridge(value):
    if value is False or value is None or value == 0:
        return None
    return float(value)


def config_from_dict(doc: dict, base_dir=Path(".")) -> ExperimentConfig:
    _check_keys(doc, {"dataset", "experiment", "attack", "model", "solver"}, "top level")
    ds = doc.get("dataset")
    if not ds or "path" not in ds:
        raise ContractError("config needs a [dataset] table with a path")
    _check_keys(ds, _DATASET_KEYS, "dataset")
    path = Path(ds["path"])
    if not path.is_absolute():
        path = Path(base_dir) / path
    if "label_column" in ds and ("delimiter" in ds or "drop_columns" in ds):
        schema = DatasetSchema(label_column=ds["label_column"], drop_columns=tuple(ds.get("drop_columns", ())),
                               delimiter=ds.get("delimiter"), name=ds.get("name", path.stem))
    else:
        schema = detect_schema(path, ds.get("label_column"))

    exp = doc.get("experiment", {})
    _check_keys(exp, _EXPERIMENT_KEYS, "experiment")
    kwargs = {}
    for key in ("m_grid", "delta_grid", "seeds"):
        if key in exp:
            kwargs[key] = tuple(exp[key])
    if "split_ratio" in exp:
        kwargs["split_ratio"] = float(exp["split_ratio"])

    att = doc.get("attack", {})
    _check_keys(att, _ATTACK_KEYS, "attack")
    kwargs["attack"] = AttackSpec(**att)

    model = doc.get("model", {})
    _check_keys(model, _MODEL_KEYS, "model")
    if "ridge" in model:
        kwargs["ridge"] = _ridge(model["ridge"])
    if "nu" in model:
        kwargs["nu"] = float(model["nu"])
    if "rho_a" in model:
        kwargs["rho_a"] = float(model["rho_a"])

    sol = doc.get("solver", {})
    _check_keys(sol, _SOLVER_KEYS, "solver")
    kwargs["solver"] = SolverConfig(**sol)
    return ExperimentConfig(dataset=str(path), schema=schema, **kwargs)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise DataLoadError(f"config file not found: {path}")
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ContractError(f"{path}: invalid TOML: {exc}") from None
    return config_from_dict(doc, path.parent)


def with_overrides(cfg: ExperimentConfig, *, dataset=None, label_column=None, m=None, delta=None,
                   seeds=None) -> ExperimentConfig:
    """Apply command-line overrides on top of a loaded (or default) config."""
    changes = {}
    if dataset is not None or label_column is not None:
        path = dataset if dataset is not None else cfg.dataset
        changes["dataset"] = str(path)
        changes["schema"] = detect_schema(path, label_column)
    if m is not None:
        changes["m_grid"] = tuple(m)
    if delta is not None:
        changes["delta_grid"] = tuple(delta)
    if seeds is not None:
        changes["seeds"] = tuple(seeds)
    return replace(cfg, **changes)
