"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure. Settings come from ``--config`` (a JSON object whose
keys are the long option names, dashes or underscores) and are overridden by
flags given on the command line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from typing import Optional, Sequence

import numpy as np

from ._version import __version__
from .errors import ConfigError, DataError, NumericalError, SparcsError, UsageError
from .experiments import ExperimentConfig, run_experiment, write_outputs
from .linalg import DataMatrix, atomic_write_text, read_csv
from .phase import critical_threshold, p0, pvalue, sphere_area
from .screening import Method, screen
from .simgen import (
    RNG_ALGORITHM,
    CovarianceSpec,
    ar_design,
    gen_coefficients,
    gen_response,
    make_rng,
    sample_elliptical_t,
    sample_gaussian,
)
from .two_stage import TwoStageModel, fit, predict, rmse

PROG = "sparcs"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _manifest(args, extra=None) -> dict:
    m = {"version": __version__, "command": args.command,
         "settings": {k: v for k, v in sorted(vars(args).items())
                      if k not in ("command", "func")}}
    if extra:
        m.update(extra)
    return m


def _write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sidecar(path) -> str:
    return os.fspath(path) + ".manifest.json"


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError("missing required option(s): " +
                         ", ".join("--" + n.replace("_", "-") for n in missing))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_screen(args) -> None:
    _require(args, "data", "response", "out")
    if (args.top is None) == (args.threshold is None):
        raise UsageError("give exactly one of --top or --threshold")
    data = read_csv(args.data, args.response)
    sup = screen(data, None, Method.parse(args.method), l=args.top, rho=args.threshold)
    doc = sup.to_dict(data.column_ids)
    doc["manifest"] = _manifest(args)
    _write_json(args.out, doc)


def cmd_fit(args) -> None:
    _require(args, "data", "response", "top", "out")
    stage1 = read_csv(args.data, args.response)
    stage2 = read_csv(args.stage2, args.response) if args.stage2 else None
    model = fit(stage1, None, stage2, None, Method.parse(args.method), args.top,
                reuse_stage1=not args.no_reuse, ridge=args.ridge)
    doc = model.to_dict()
    doc["manifest"] = _manifest(args)
    _write_json(args.out, doc)


def _model_inputs(model: TwoStageModel, data: DataMatrix) -> np.ndarray:
    ids = model.column_ids
    if ids is not None and data.column_ids is not None and set(ids) <= set(data.column_ids):
        pos = {c: j for j, c in enumerate(data.column_ids)}
        return data.values[:, [pos[c] for c in ids]]
    return data.values


def cmd_predict(args) -> None:
    _require(args, "model", "data", "out")
    try:
        with open(args.model) as fh:
            model = TwoStageModel.from_json(fh.read())
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{args.model}: not a model file ({exc})") from None
    data = read_csv(args.data, args.response)
    yhat = predict(model, _model_inputs(model, data))
    yhat = np.atleast_1d(yhat)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["prediction"])
    for v in yhat:
        w.writerow([repr(float(v))])
    atomic_write_text(args.out, buf.getvalue())
    extra = {}
    if data.response is not None:
        extra["rmse"] = rmse(data.response, yhat)
    _write_json(_sidecar(args.out), _manifest(args, extra))


def _parse_grid(text: str) -> list:
    parts = text.split(":")
    try:
        if len(parts) == 3:
            start, stop, step = (float(v) for v in parts)
            if not step > 0 or stop < start:
                raise UsageError("grid needs start <= stop and step > 0")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}; use start:stop:step or a comma list") from None


def cmd_phase(args) -> None:
    _require(args, "p", "n", "out")
    rows = []
    for rho in _parse_grid(args.grid):
        prob = p0(rho, args.n)
        rows.append((rho, prob, args.p * prob, pvalue(args.p, args.n, rho)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rho", "P0", "xi", "pvalue"])
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    atomic_write_text(args.out, buf.getvalue())
    try:
        rho_c = critical_threshold(args.p, args.n, args.rho_c_method)
    except DataError as exc:
        rho_c, note = None, str(exc)
    else:
        note = None
    extra = {"rho_c": rho_c, "rho_c_method": args.rho_c_method, "a_n": sphere_area(args.n)}
    if note:
        extra["rho_c_note"] = note
    _write_json(_sidecar(args.out), _manifest(args, extra))


def _covariance(args, p) -> CovarianceSpec:
    if args.covariance == "identity":
        return CovarianceSpec.identity(p)
    if args.covariance == "block_sparse":
        return CovarianceSpec.default(p)
    raise UsageError(f"unknown covariance {args.covariance!r}")


def _frame(x, y, p) -> tuple:
    header = [f"x{j}" for j in range(p)] + ["y"]
    return header, np.column_stack([x, y])


def _write_table(path, header, values) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in values:
        w.writerow([repr(float(v)) for v in row])
    atomic_write_text(path, buf.getvalue())


def cmd_simulate(args) -> None:
    _require(args, "p", "n", "k", "out")
    total = args.n if args.t is None else args.t
    if total < args.n:
        raise UsageError("--t must be at least --n")
    rng = make_rng(args.seed if args.seed is not None else 0)
    truth = gen_coefficients(args.p, args.k, args.coefficients, args.sigma, rng, args.noise_var)
    if args.phi is not None:
        x = ar_design(total, truth, args.phi, rng)
        spec_doc = {"design": "ar", "phi": args.phi}
    else:
        spec = _covariance(args, args.p)
        draw = (sample_gaussian(spec, total, rng) if args.dof is None
                else sample_elliptical_t(spec, total, args.dof, rng))
        x = draw.values
        spec_doc = {"design": "gaussian" if args.dof is None else "elliptical_t",
                    "covariance": spec.to_dict(), "dof": args.dof}
    y = gen_response(x, truth, rng)
    os.makedirs(args.out, exist_ok=True)
    header, table = _frame(x, y, args.p)
    _write_table(os.path.join(args.out, "data.csv"), header, table[: args.n])
    files = ["data.csv"]
    if total > args.n:
        _write_table(os.path.join(args.out, "stage2.csv"), header, table[args.n:])
        files.append("stage2.csv")
    doc = truth.to_dict()
    doc.update({"spec": spec_doc, "seed": args.seed, "rng_algorithm": RNG_ALGORITHM,
                "files": files, "manifest": _manifest(args)})
    _write_json(os.path.join(args.out, "truth.json"), doc)


_EXPERIMENT_FLAGS = ("trials", "master_seed", "output_path")


def cmd_experiment(args) -> None:
    if args.config_data is None:
        raise UsageError("experiment needs --config")
    d = dict(args.config_data)
    if args.seed is not None:
        d["master_seed"] = args.seed
    if args.trials is not None:
        d["trials"] = args.trials
    if args.out is not None:
        d["output_path"] = args.out
    cfg = ExperimentConfig.from_dict(d)
    out = cfg.output_path
    if out is None:
        raise UsageError("experiment needs --out or an output_path in the config")
    result = run_experiment(cfg, args.threads)
    write_outputs(result, out, args.threads)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(sp):
    sp.add_argument("--config", help="JSON file of settings; flags override it")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--threads", type=int, default=None, help="parallel workers (results do not depend on it)")
    sp.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog=PROG, description="Two-stage correlation screening and prediction.")
    ap.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("screen", help="select variables from a data CSV")
    _common(sp)
    sp.add_argument("--data")
    sp.add_argument("--response")
    sp.add_argument("--method", default="pcs")
    sp.add_argument("--top", type=int)
    sp.add_argument("--threshold", type=float)
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("fit", help="fit a two-stage predictor")
    _common(sp)
    sp.add_argument("--data", help="stage-1 CSV with all variables")
    sp.add_argument("--stage2", help="stage-2 CSV (selected columns or all)")
    sp.add_argument("--response")
    sp.add_argument("--method", default="pcs")
    sp.add_argument("--top", type=int)
    sp.add_argument("--no-reuse", action="store_true", default=None,
                    help="fit stage 2 on the stage-2 rows only")
    sp.add_argument("--ridge", action="store_true", default=None,
                    help="add a 1e-8 * trace / l ridge to the restricted covariance")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="apply a fitted model to a CSV")
    _common(sp)
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--response", help="optional response column; its RMSE goes to the manifest")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("phase", help="false-discovery table over a threshold grid")
    _common(sp)
    sp.add_argument("--p", type=int)
    sp.add_argument("--n", type=int)
    sp.add_argument("--grid", default="0.0:1.0:0.01")
    sp.add_argument("--rho-c-method", choices=("formula", "slope"), default="formula")
    sp.set_defaults(func=cmd_phase)

    sp = sub.add_parser("simulate", help="write synthetic data and its ground truth")
    _common(sp)
    sp.add_argument("--p", type=int)
    sp.add_argument("--n", type=int, help="rows written to data.csv")
    sp.add_argument("--t", type=int, help="total rows; the extra t - n go to stage2.csv")
    sp.add_argument("--k", type=int)
    sp.add_argument("--coefficients", choices=("unit_normal", "bernoulli_gaussian"),
                    default="unit_normal")
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--noise-var", type=float, default=0.05)
    sp.add_argument("--covariance", choices=("block_sparse", "identity"), default="block_sparse")
    sp.add_argument("--dof", type=float, help="multivariate t instead of Gaussian")
    sp.add_argument("--phi", type=float, help="AR(1) inactive design instead of Gaussian")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("experiment", help="run a Monte Carlo experiment from a config")
    _common(sp)
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_experiment)
    return ap


def _apply_config(ap, args, argv) -> None:
    """Fill options not given on the command line from the --config JSON."""
    args.config_data = None
    if args.config is None:
        return
    try:
        with open(args.config) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{args.config}: expected a JSON object")
    if args.command == "experiment":
        args.config_data = data
        return
    sub = ap._subparsers._group_actions[0].choices[args.command]
    dests = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    given = set()
    for tok in argv:
        if tok.startswith("--"):
            given.add(tok[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise ConfigError(f"{args.config}: unknown setting {key!r} for {args.command}")
        if dest not in given:
            setattr(args, dest, value)


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        try:
            args = ap.parse_args(argv)
        except SystemExit as exc:  # --help and --version
            return int(exc.code or 0)
        _apply_config(ap, args, argv)
        if args.threads is None:
            args.threads = 1
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
        return 0
    except UsageError as exc:
        code, msg = 1, str(exc)
    except (DataError, OSError) as exc:
        code, msg = 2, str(exc)
    except NumericalError as exc:
        code, msg = 3, str(exc)
    except SparcsError as exc:
        code, msg = 2, str(exc)
    print(f"{PROG}: error: {' '.join(msg.split())}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
