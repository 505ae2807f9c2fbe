"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 solver non-convergence under ``--strict`` (or a numerical solver failure),
4 a failed derivative check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiment as exp
from .baselines import fit_bs, fit_linreg
from .calculus import derivative_suite
from .config import load_config, with_overrides
from .errors import ContractError, DataLoadError, DomainError, SolverError
from .model import ModelConfig
from .solver import Status

OUT_ENV = "ADVREG_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3, 4

log = logging.getLogger("advreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(sub):
    sub.add_argument("--config", type=Path, help="TOML experiment file")
    sub.add_argument("--dataset", type=Path, help="CSV dataset (overrides the config)")
    sub.add_argument("--label-column", help="name of the label column (detected for known datasets)")
    sub.add_argument("--m", type=_int_list, help="adversary sample size(s), comma separated")
    sub.add_argument("--delta", type=_float_list, help="similarity threshold(s), comma separated")
    sub.add_argument("--seed", type=int, default=None, help="random seed (default 0; for sweep, replaces the config's seeds)")
    sub.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./results)")
    sub.add_argument("--strict", action="store_true", help="exit 3 when any bilevel solve does not converge")
    sub.add_argument("--jobs", type=int, default=1, help="worker processes for the sweep (default 1)")
    sub.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advreg", description="Adversarially robust linear regression experiments.")
    subs = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    subs.required = True

    p = subs.add_parser("fit", help="train LinReg, B&S and the bilevel model for one (m, delta, seed)")
    _common(p)
    p.add_argument("--trace", action="store_true", help="also write the solver trace as JSON lines")

    p = subs.add_parser("attack", help="write the attacked test set for one seed")
    _common(p)

    p = subs.add_parser("eval", help="evaluate saved weights on the clean and attacked test sets")
    _common(p)
    p.add_argument("--weights", type=Path, required=True, help="model JSON written by 'fit'")

    p = subs.add_parser("sweep", help="run the (m, delta, seed) grid and write the report")
    _common(p)

    p = subs.add_parser("movement", help="per-feature movement of the adversary's data")
    _common(p)
    p.add_argument("--report", type=Path, help="read an existing sweep report instead of running one")

    p = subs.add_parser("check-derivatives", help="compare analytic derivatives with finite differences")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--instances", type=int, default=100, help="random instances (default 100)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    return parser


def _out_dir(args) -> Path:
    return args.out if args.out is not None else Path(os.environ.get(OUT_ENV, "results"))


def _config(args):
    if args.config is not None:
        cfg = load_config(args.config)
        dataset = args.dataset
    elif args.dataset is not None:
        cfg, dataset = None, args.dataset
    else:
        raise UsageError("either --config or --dataset is required")
    if cfg is None:
        from .config import detect_schema

        cfg = exp.ExperimentConfig(dataset=str(dataset), schema=detect_schema(dataset, args.label_column))
        dataset = None
    seeds = None if args.seed is None else [args.seed]
    return with_overrides(cfg, dataset=dataset, label_column=args.label_column, m=args.m, delta=args.delta,
                          seeds=seeds)


def _single(values, what):
    if len(values) != 1:
        raise UsageError(f"this command takes a single {what}; got {list(values)}")
    return values[0]


def _prepare(cfg):
    data = exp.load_dataset(cfg.dataset, cfg.schema)
    seed = cfg.seeds[0]
    return data, exp.prepare_seed(data, cfg, seed)


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=exp._json_default) + "\n")


def _cell_line(rec) -> str:
    def f(v):
        return "n/a" if v is None else f"{v:.6f}"

    return (f"m={rec['m']} delta={rec['delta']:g} seed={rec['seed']} status={rec['status']} "
            f"iters={rec['iterations']} mse_bilevel={f(rec['mse_bilevel'])} mse_linreg={f(rec['mse_linreg'])} "
            f"mse_bs={f(rec['mse_bs'])}")


def cmd_fit(args) -> int:
    cfg = _config(args)
    m = _single(cfg.m_grid, "--m") if args.m is not None or len(cfg.m_grid) == 1 else cfg.m_grid[0]
    delta = _single(cfg.delta_grid, "--delta") if args.delta is not None or len(cfg.delta_grid) == 1 \
        else cfg.delta_grid[0]
    data, prepared = _prepare(cfg)
    seed = prepared.seed
    split_ = exp.make_training_split(prepared.train, m, cfg.nu, seed)
    bs = fit_bs(split_, cfg.ridge, cfg.rho_a)
    outcome = exp.solve_bilevel(split_, ModelConfig(delta=delta, ridge=cfg.ridge, nu=cfg.nu), cfg.solver,
                                prepared.w_linreg)
    out = _out_dir(args)
    tag = f"{cfg.config_hash()[:12]}-m{m}-d{delta:g}-s{seed}"
    result = {
        "m": m, "delta": delta, "seed": seed, "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
        "feature_names": list(data.feature_names),
        "weights": {"bilevel": outcome.point.w, "linreg": prepared.w_linreg, "bs": bs.weights},
        "bilevel": {"status": outcome.status.value, "iterations": outcome.iterations,
                    "residual_norm": outcome.residual_norm, "X": outcome.point.X,
                    "origin": split_.adversary.origin},
        "bs_converged": bs.converged,
    }
    _write_json(out / f"model-{tag}.json", result)
    if args.trace:
        (out / f"trace-{tag}.jsonl").write_text(outcome.trace_lines())
    print(f"m={m} delta={delta:g} seed={seed} status={outcome.status.value} iters={outcome.iterations} "
          f"residual={outcome.residual_norm:.3e} -> {out / f'model-{tag}.json'}")
    if args.strict and outcome.status is not Status.CONVERGED:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    _, prepared = _prepare(cfg)
    out = _out_dir(args)
    tag = f"{cfg.config_hash()[:12]}-s{prepared.seed}"
    out.mkdir(parents=True, exist_ok=True)
    exp.save_dataset(prepared.attacked.data, out / f"attacked-{tag}.csv")
    _write_json(out / f"attacks-{tag}.json", [asdict(r) for r in prepared.attacked.records])
    records = prepared.attacked.records
    moved = sum(r.loss_after < r.loss_before for r in records)
    print(f"seed={prepared.seed} attacked_rows={len(records)} improved={moved} -> {out / f'attacked-{tag}.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    try:
        saved = json.loads(args.weights.read_text())
    except FileNotFoundError:
        raise DataLoadError(f"weights file not found: {args.weights}") from None
    except json.JSONDecodeError as exc:
        raise DataLoadError(f"{args.weights}: not valid JSON: {exc}") from None
    if args.seed is None and "seed" in saved:
        cfg = with_overrides(cfg, seeds=[saved["seed"]])
    _, prepared = _prepare(cfg)
    for name, w in sorted(saved.get("weights", {}).items()):
        w = np.asarray(w, dtype=float)
        print(f"model={name} seed={prepared.seed} mse_attacked={exp.evaluate_mse(w, prepared.attacked.data):.6f} "
              f"mse_clean={exp.evaluate_mse(w, prepared.test):.6f}")
    return EXIT_OK


def _sweep(args, cfg):
    report = exp.run_sweep(cfg, jobs=args.jobs)
    paths = exp.write_report(report, _out_dir(args))
    for rec in report.records:
        print(_cell_line(rec))
    return report, paths


def cmd_sweep(args) -> int:
    cfg = _config(args)
    report, paths = _sweep(args, cfg)
    print(f"report: {paths['json']}  cells: {paths['csv']}")
    if args.strict and any(r["status"] != Status.CONVERGED.value for r in report.records):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_movement(args) -> int:
    if args.report is not None:
        try:
            summary = json.loads(args.report.read_text())["feature_movement"]
        except FileNotFoundError:
            raise DataLoadError(f"report file not found: {args.report}") from None
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataLoadError(f"{args.report}: not a sweep report ({exc})") from None
        strict_fail = False
    else:
        cfg = _config(args)
        report, paths = _sweep(args, cfg)
        summary = report.feature_movement
        out = paths["json"].parent / f"movement-{report.config_hash[:12]}.json"
        _write_json(out, summary)
        print(f"movement: {out}")
        strict_fail = args.strict and any(r["status"] != Status.CONVERGED.value for r in report.records)
    width = max([len(n) for n in summary["features"]] + [7])
    for name, value in zip(summary["features"], summary["overall"]):
        print(f"{name:<{width}}  {value:.6f}")
    return EXIT_SOLVER if strict_fail else EXIT_OK


def cmd_check_derivatives(args) -> int:
    reports = derivative_suite(seed=args.seed, n_instances=args.instances)
    print(f"{'derivative':<22}{'max rel error':>15}{'tol':>9}  result")
    for r in reports:
        print(f"{r.name:<22}{r.max_rel_error:>15.3e}{r.tol:>9.0e}  {'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


COMMANDS = {"fit": cmd_fit, "attack": cmd_attack, "eval": cmd_eval, "sweep": cmd_sweep,
            "movement": cmd_movement, "check-derivatives": cmd_check_derivatives}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"advreg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataLoadError, DomainError) as exc:
        print(f"advreg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"advreg {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"advreg {args.command}: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
