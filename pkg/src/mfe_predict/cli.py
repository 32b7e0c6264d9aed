"""``mfe-predict`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import gsa, pipeline
from .exceptions import (
    ConfigError,
    CorrelatedFactors,
    DegenerateVariance,
    Infeasible,
    InsufficientData,
    InvariantViolation,
    NonConvergence,
    NonFiniteEvaluation,
    ParseError,
    RankDeficient,
    ShapeMismatch,
    ThetaSingularity,
)
from .records import ingest_csv, inputs_array, non_empty, targets_array

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

_EXIT_CODES = (
    ((ConfigError, CorrelatedFactors), EXIT_CONFIG),
    ((ParseError, InvariantViolation, InsufficientData, ShapeMismatch, FileNotFoundError), EXIT_DATA),
    ((RankDeficient, NonConvergence, NonFiniteEvaluation, DegenerateVariance, Infeasible,
      ThetaSingularity, np.linalg.LinAlgError, FloatingPointError), EXIT_NUMERIC),
)


def exit_code(exc: BaseException) -> int:
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return 1


def _parse_bounds(items) -> dict:
    out = {}
    for item in items or []:
        try:
            name, rng = item.split("=")
            lo, hi = (float(v) for v in rng.split(":"))
        except ValueError:
            raise ConfigError(f"factor {item!r} must look like name=lower:upper") from None
        out[name] = (lo, hi)
    return out


def _parse_fixed(items) -> dict:
    out = {}
    for item in items or []:
        try:
            name, value = item.split("=")
            out[name] = float(value)
        except ValueError:
            raise ConfigError(f"fixed value {item!r} must look like name=value") from None
    return out


def _load_folds(path, n_records):
    if path is None:
        train, test = pipeline.split(n_records, (0.9, 0.1), 0)
        return train, test
    d = json.loads(Path(path).read_text())
    return np.array(d["train"], int), np.array(d["test"], int)


def _data(args):
    records = ingest_csv(args.database)
    x = inputs_array(records)
    y = targets_array(records, args.target)
    train, test = _load_folds(args.folds, len(records))
    return records, x, y, train, test


def _write_json(obj, path) -> None:
    text = json.dumps(pipeline._finite(obj), indent=1, sort_keys=True)
    if path:
        Path(path).write_text(text)
    else:
        print(text)


# ---------------------------------------------------------------- commands


def cmd_generate(args):
    from .envelope.dynamics import GenericTransport, weak_thrust_variant
    from .envelope.sweep import GridSpec, build_database, enumerate_jobs

    model = weak_thrust_variant(args.thrust_factor) if args.thrust_factor != 1.0 else GenericTransport()
    grid = GridSpec(v_step=args.v_step, psidot_step=args.psidot_step)
    jobs = enumerate_jobs(args.altitudes, args.gammas)

    def progress(done, total):
        logging.info("solved %d / %d", done, total)

    db = build_database(model, jobs, grid, detail_dir=args.detail_dir, progress=progress)
    out = Path(args.out)
    db.write(out, out.with_suffix(".meta.json"))
    print(f"{db.metadata['n_records']} records ({db.metadata['n_empty']} empty) written to {out}")


def cmd_ingest(args):
    records = ingest_csv(args.database)
    y = targets_array(records, "n_trim")
    summary = {"n_records": len(records), "n_empty": len(records) - len(non_empty(records)),
               "n_trim_min": float(y.min()), "n_trim_max": float(y.max())}
    _write_json(summary, args.out)


def cmd_split(args):
    n = len(ingest_csv(args.database))
    folds = pipeline.split(n, args.ratios, args.seed)
    if len(folds) != 2:
        raise ConfigError("split takes (train, test) ratios")
    net_tr, net_val = pipeline.network_split(folds[1], n, args.validation_fraction, args.seed)
    d = {"seed": args.seed, "train": folds[0].tolist(), "test": folds[1].tolist(),
         "network_train": net_tr.tolist(), "network_validation": net_val.tolist()}
    Path(args.out).write_text(json.dumps(d))
    print(f"train {folds[0].size}  test {folds[1].size}")


def cmd_fit_poly(args):
    from .poly import PolynomialRegressor, PolynomialSpec

    _, x, y, train, _ = _data(args)
    spec = PolynomialSpec.from_name(args.model)
    model = PolynomialRegressor(spec.per_var_max, spec.total_degree).fit(x[train], y[train])
    model.to_json(args.out)
    print(f"{spec.name}: {model.exponents_.shape[0]} coefficients, adjusted R2 "
          f"{np.asarray(model.stats_['r2_adjusted'])}")


def cmd_fit_tanh(args):
    from .tanh_models import TanhRegressor

    _, x, y, train, test = _data(args)
    model = TanhRegressor(args.n_basis, args.solver, args.restarts, args.seed, args.max_iter)
    model.fit(x[train], y[train])
    model.to_json(args.out)
    t = model.trace_
    print(f"objective {t.final_objective:.6e} after {t.n_iter} iterations ({t.reason})")


def cmd_fit_mlp(args):
    from .mlp import MLPRegressor

    records, x, y, _, test = _data(args)
    if args.folds:
        d = json.loads(Path(args.folds).read_text())
        tr, val = np.array(d["network_train"], int), np.array(d["network_validation"], int)
    else:
        tr, val = pipeline.network_split(test, len(records), 0.1, args.seed)
    model = MLPRegressor(args.hidden, args.restarts, args.max_epochs, selection=args.selection,
                         random_state=args.seed)
    model.fit_folds(x[tr], y[tr], x[val], y[val], x[test], y[test])
    model.to_json(args.out)
    if args.history:
        model.network_.history_to_csv(args.history)
    print(f"best validation MSE {model.network_.best_validation_mse:.6e} "
          f"(restart {model.network_.restart}, epoch {model.network_.best_epoch})")


def cmd_evaluate(args):
    from .scaling import ScalingSpec

    records, x, y, train, test = _data(args)
    model = pipeline.load_model(args.model)
    scale = ScalingSpec.fit(x[train], y[train])
    kind = {"polynomial": "poly"}.get(model.to_dict()["kind"], model.to_dict()["kind"])
    row = pipeline._model_row(Path(args.model).stem, kind, model, 0, x[train], y[train], x[test], y[test], scale)
    row.pop("n_coefficients")
    if args.probes:
        row["probes"] = pipeline.probe_eval(model, ingest_csv(args.probes), args.target, x[train])
    _write_json(row, args.out)


def _gsa_model(args):
    model = pipeline.load_model(args.model)
    space = gsa.FactorSpace.from_bounds(_parse_bounds(args.factor))
    intake = pipeline.gsa_intake(space.names, _parse_fixed(args.fixed))

    def f(z):
        y = np.asarray(model.predict(intake(z)), dtype=float)
        return y if y.ndim == 1 else y[:, args.output]

    return space, f


def cmd_gsa(args):
    space, f = _gsa_model(args)
    res = gsa.analyze(space, f, args.n, args.seed, args.second_order, args.n_boot, args.level)
    _write_json(res.to_dict(), args.out)


def cmd_convergence(args):
    space, f = _gsa_model(args)
    res = gsa.convergence_sweep(space, f, args.schedule, args.seed, args.n_boot, args.level)
    res.to_csv(args.out)
    slope = res.ci_width_slope()
    if slope is not None:
        print("CI width slope vs N: " + ", ".join(f"{n}={s:.3f}" for n, s in zip(space.names, slope)))


def cmd_report(args):
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("output_dir", "database", "seed"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    if args.database:
        cfg["generate"] = False
    report = pipeline.run_experiment(pipeline.ExperimentConfig.from_dict(cfg))
    print(report.to_text(), end="")


def cmd_audit(args):
    problems = pipeline.audit(args.directory)
    for p in problems:
        print(p)
    if problems:
        raise InvariantViolation(f"{len(problems)} report values could not be reproduced")
    print("all report values reproduced")


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfe-predict",
                                 description="Build, fit and analyse surrogates of post-failure flight envelopes.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--database", required=True, help="envelope database CSV")
        p.add_argument("--folds", help="folds JSON written by the split command (default: seed-0 90/10)")
        p.add_argument("--target", default="n_trim", choices=["n_trim", "centroid_v", "centroid_psidot", "centroid"])

    p = sub.add_parser("generate", help="sweep the surrogate aircraft into an envelope database")
    p.add_argument("--out", required=True)
    p.add_argument("--altitudes", type=float, nargs="+", default=[0.0, 10000.0, 20000.0, 30000.0])
    p.add_argument("--gammas", type=float, nargs="+", default=[float(g) for g in range(-5, 6)])
    p.add_argument("--v-step", type=float, default=1.0)
    p.add_argument("--psidot-step", type=float, default=0.2)
    p.add_argument("--thrust-factor", type=float, default=1.0)
    p.add_argument("--detail-dir", help="also write per-slice trim point CSVs here")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="validate a database CSV and summarize it")
    p.add_argument("--database", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="write seeded train/test (and network validation) folds")
    p.add_argument("--database", required=True)
    p.add_argument("--ratios", type=float, nargs="+", default=[0.9, 0.1])
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit-poly", help="fit a polynomial response surface, e.g. Poly3344")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_poly)

    p = sub.add_parser("fit-tanh", help="fit a sum-of-tanh model")
    data_args(p)
    p.add_argument("--n-basis", type=int, default=1)
    p.add_argument("--solver", choices=["lm", "trr"], default="lm")
    p.add_argument("--restarts", type=int, default=15)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_tanh)

    p = sub.add_parser("fit-mlp", help="train a one-hidden-layer network")
    data_args(p)
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--restarts", type=int, default=15)
    p.add_argument("--max-epochs", type=int, default=1000)
    p.add_argument("--selection", choices=["validation", "test"], default="validation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", help="write the per-epoch MSE history CSV here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_mlp)

    p = sub.add_parser("evaluate", help="train/test metrics and probe errors of a stored model")
    data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--probes", help="CSV of probe records with known targets")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    for name, func, help_text in (("gsa", cmd_gsa, "Sobol indices of a stored model"),
                                  ("convergence", cmd_convergence, "Sobol indices over an N schedule")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True)
        p.add_argument("--factor", action="append", required=True, help="name=lower:upper (h, gamma, ll, ul, jam)")
        p.add_argument("--fixed", action="append", help="name=value for inputs that are not factors")
        p.add_argument("--output", type=int, default=0, help="output column for multi-output models")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-boot", type=int, default=500)
        p.add_argument("--level", type=float, default=0.95)
        if name == "gsa":
            p.add_argument("--n", type=int, default=10000)
            p.add_argument("--second-order", action="store_true")
            p.add_argument("--out")
        else:
            p.add_argument("--schedule", type=int, nargs="+", required=True)
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="run a full experiment from a JSON config")
    p.add_argument("--config")
    p.add_argument("--output-dir")
    p.add_argument("--database")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("audit", help="recompute a stored report from its artifacts")
    p.add_argument("directory")
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:
        code = exit_code(exc)
        if code == 1:
            raise
        stage = getattr(exc, "stage", args.command)
        print(f"mfe-predict: {stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
