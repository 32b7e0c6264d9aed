"""Experiment orchestration: folds, fitting, evaluation, reports and audits."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from . import gsa
from .exceptions import ConfigError, ShapeMismatch
from .mlp import MLPRegressor
from .poly import PolynomialRegressor, PolynomialSpec, error_percentage
from .records import INPUT_NAMES, InputVector, MfeRecord, ingest_csv, inputs_array, targets_array, write_csv
from .scaling import ScalingSpec
from .tanh_models import TanhModelSpec, TanhRegressor

log = logging.getLogger(__name__)

REPORT_VERSION = 1


# ------------------------------------------------------------------ folds


def split(n_records: int, ratios: Sequence[float], seed=0) -> list[np.ndarray]:
    """Seeded random partition of ``range(n_records)`` into folds.

    Every fold but the last gets ``floor(ratio * n)`` members; the last takes
    the remainder (1102 records at 90/10 give 991 and 111). Fold indices
    are returned sorted.
    """
    ratios = [float(r) for r in ratios]
    if n_records < 1:
        raise ValueError("no records to split")
    if any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    perm = np.random.default_rng(seed).permutation(n_records)
    sizes = [int(math.floor(r * n_records + 1e-9)) for r in ratios[:-1]]
    sizes.append(n_records - sum(sizes))
    folds, start = [], 0
    for s in sizes:
        folds.append(np.sort(perm[start : start + s]))
        start += s
    if any(f.size == 0 for f in folds):
        warnings.warn("split produced an empty fold", UserWarning)
    return folds


def network_split(test_idx: np.ndarray, n_records: int, validation_fraction: float, seed=0):
    """Carve a validation fold out of the non-test records, leaving the test
    fold untouched so polynomial and network experiments share it."""
    rest = np.setdiff1d(np.arange(n_records), test_idx)
    n_val = int(round(validation_fraction * n_records))
    perm = np.random.default_rng([seed, 1]).permutation(rest)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def multi_output_mse(pred, target) -> float:
    """Mean over samples of the per-sample average squared error over outputs."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != target shape {t.shape}")
    if p.size == 0:
        return math.nan
    if p.ndim == 1:
        p, t = p[:, None], t[:, None]
    return float(np.mean(np.mean((p - t) ** 2, axis=1)))


# ----------------------------------------------------------------- probes


def _hull(x_train: np.ndarray):
    try:
        return Delaunay(x_train)
    except (QhullError, ValueError):
        return None


def inside_hull(x_train, x) -> np.ndarray:
    """Whether points lie in the convex hull of the training inputs (the
    bounding box when the inputs do not span the full space)."""
    x_train = np.asarray(x_train, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    tri = _hull(x_train)
    if tri is None:
        lo, hi = x_train.min(axis=0), x_train.max(axis=0)
        return np.all((x >= lo) & (x <= hi), axis=1)
    return tri.find_simplex(x) >= 0


def probe_eval(model, probes: Sequence[MfeRecord], target: str = "n_trim", x_train=None) -> list[dict]:
    """One row per probe: prediction, error percentage and hull flag."""
    if not probes:
        raise ValueError("no probes given")
    x = inputs_array(probes)
    pred = np.asarray(model.predict(x), dtype=float)
    actual = targets_array(probes, target)
    flags = inside_hull(x_train, x) if x_train is not None else np.ones(len(probes), bool)
    rows = []
    for i, rec in enumerate(probes):
        a = np.atleast_1d(actual[i])
        p = np.atleast_1d(pred[i])
        errs = [error_percentage(float(ai), float(pi)) if ai != 0 else math.nan for ai, pi in zip(a, p)]
        rows.append({
            "input": dict(zip(INPUT_NAMES, map(float, rec.input.as_array()))),
            "actual": a.tolist() if a.size > 1 else float(a[0]),
            "predicted": p.tolist() if p.size > 1 else float(p[0]),
            "error_percentage": errs if len(errs) > 1 else errs[0],
            "outside_training_hull": bool(not flags[i]),
        })
    return rows


def synthesize_probes(dyn, inputs: Sequence[InputVector], grid) -> list[MfeRecord]:
    """Targets for arbitrary probe inputs computed from a dynamics model,
    using every enumerated failure box contained in the probe's box."""
    from .envelope.sweep import enumerate_failure_cases, sweep_group
    from .envelope.trim import FailureCase

    out = []
    for inp in inputs:
        f = FailureCase(inp.ll, inp.ul)
        cases = [c for c in enumerate_failure_cases() if f.contains(c)] + [f]
        mfe = sweep_group(inp.h, inp.gamma, cases, dyn, grid)[f]
        out.append(mfe.to_record())
    return out


def mid_range(x: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` candidate rows closest to the centre of the input box."""
    lo, hi = x.min(axis=0), x.max(axis=0)
    half = np.where(hi > lo, (hi - lo) / 2, 1.0)
    d = np.linalg.norm((x[candidates] - (lo + hi) / 2) / half, axis=1)
    return candidates[np.argsort(d, kind="stable")[:k]]


DEFAULT_SYNTHETIC_PROBES = (
    InputVector(5000.0, 1.0, -20.0, 20.0),
    InputVector(15000.0, -2.0, -10.0, 30.0),
    InputVector(25000.0, 0.0, 0.0, 0.0),
)


# ----------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    output_dir: str = "experiment"
    database: Optional[str] = None
    generate: bool = False
    grid: dict = field(default_factory=lambda: {"v_step": 5.0, "psidot_step": 1.0})
    altitudes: list = field(default_factory=lambda: [0.0, 10000.0, 20000.0, 30000.0])
    gammas: list = field(default_factory=lambda: [float(g) for g in range(-5, 6)])
    seed: int = 0
    split: list = field(default_factory=lambda: [0.9, 0.1])
    validation_fraction: float = 0.1
    target: str = "n_trim"
    poly_models: list = field(default_factory=lambda: ["Poly2222", "Poly3333", "Poly3344"])
    tanh_models: list = field(default_factory=list)
    tanh_solver: str = "lm"
    mlp_models: list = field(default_factory=list)
    restarts: int = 15
    max_epochs: int = 1000
    selection: str = "validation"
    probes: str = "default"
    gsa: list = field(default_factory=list)

    def __post_init__(self):
        if not math.isclose(sum(self.split), 1.0, abs_tol=1e-9) or len(self.split) != 2:
            raise ConfigError("split must hold two ratios (train, test) summing to 1")
        if not 0 <= self.validation_fraction < self.split[0]:
            raise ConfigError("validation fraction must be below the training share")
        if self.database is None and not self.generate:
            raise ConfigError("either a database path or generate=true is required")
        if self.database is not None and self.generate:
            raise ConfigError("database and generate are mutually exclusive")
        if self.target not in ("n_trim", "centroid_v", "centroid_psidot", "centroid"):
            raise ConfigError(f"unknown target {self.target!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


# ----------------------------------------------------------------- models


def load_model(path):
    with open(path) as fh:
        d = json.load(fh)
    return model_from_dict(d)


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "polynomial":
        return PolynomialRegressor.from_dict(d)
    if kind == "tanh":
        return TanhRegressor.from_dict(d)
    if kind == "mlp":
        return MLPRegressor.from_dict(d)
    raise ConfigError(f"unknown model kind {kind!r}")


def _model_row(name, kind, model, n_coef, x_tr, y_tr, x_te, y_te, scale: ScalingSpec) -> dict:
    ptr = scale.normalize(np.asarray(model.predict(x_tr)))
    row = {
        "name": name,
        "kind": kind,
        "n_coefficients": int(n_coef),
        "train_mse": multi_output_mse(ptr, scale.normalize(y_tr)),
        "test_mse": multi_output_mse(scale.normalize(np.asarray(model.predict(x_te))), scale.normalize(y_te))
        if len(x_te) else math.nan,
    }
    if kind == "poly":
        row["r2_adjusted"] = np.asarray(model.stats_["r2_adjusted"]).tolist()
        row["dof"] = int(model.stats_["dof"])
    return row


def _tanh_coef(n_basis: int) -> int:
    return TanhModelSpec(n_basis).n_params


# ------------------------------------------------------------------ runs


@dataclass
class Report:
    dataset: dict
    models: list
    gsa: list
    config: dict

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "config": self.config, "dataset": self.dataset,
                "models": self.models, "gsa": self.gsa}

    def write(self, directory) -> None:
        d = Path(directory)
        with open(d / "report.json", "w") as fh:
            json.dump(_finite(self.to_dict()), fh, indent=1, sort_keys=True)
        (d / "report.txt").write_text(self.to_text())

    def to_text(self) -> str:
        ds = self.dataset
        lines = [
            f"records {ds['n_records']}  train {ds['n_train']}  test {ds['n_test']}  target {ds['target']}",
            "",
            f"{'model':<12}{'coef':>6}{'adj R2':>12}{'train MSE':>14}{'test MSE':>14}",
        ]
        for m in self.models:
            r2 = m.get("r2_adjusted")
            if isinstance(r2, list) and len(r2) == 1:
                r2 = r2[0]
            r2s = f"{r2:12.6f}" if isinstance(r2, float) and math.isfinite(r2) else f"{'-':>12}"
            lines.append(f"{m['name']:<12}{m['n_coefficients']:>6}{r2s}{m['train_mse']:>14.4e}{m['test_mse']:>14.4e}")
        for m in self.models:
            if m.get("probes"):
                lines += ["", f"probe errors, {m['name']}"]
                for p in m["probes"]:
                    inp = p["input"]
                    err = p["error_percentage"]
                    errs = ", ".join(f"{e:.3f}%" for e in np.atleast_1d(err))
                    flag = "  (outside training hull)" if p["outside_training_hull"] else ""
                    lines.append(f"  h={inp['h']:g} gamma={inp['gamma']:g} LL={inp['ll']:g} UL={inp['ul']:g}: {errs}{flag}")
        for g in self.gsa:
            lines += ["", f"sensitivity of {g['model']} (N={g['N']})"]
            for j, name in enumerate(g["factors"]):
                lines.append(f"  {name:<6} S={g['indices']['first'][j]:.4f}  ST={g['indices']['total'][j]:.4f}")
        return "\n".join(lines) + "\n"


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def load_or_generate(cfg: ExperimentConfig, out: Path, progress=None) -> list[MfeRecord]:
    if cfg.database is not None:
        return ingest_csv(cfg.database)
    from .envelope.dynamics import GenericTransport
    from .envelope.sweep import GridSpec, build_database, enumerate_jobs

    db = build_database(GenericTransport(), enumerate_jobs(cfg.altitudes, cfg.gammas), GridSpec(**cfg.grid),
                        progress=progress)
    meta = dict(db.metadata)
    runtime = meta.pop("runtime_s")
    db.metadata = meta
    db.write(out / "database.csv", out / "database_meta.json")
    _merge_runtimes(out, {"generate_s": runtime})
    return db.records


def _merge_runtimes(out: Path, entries: dict) -> None:
    path = out / "runtimes.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data.update(entries)
    path.write_text(json.dumps(data, indent=1, sort_keys=True))


def gsa_intake(factor_names: Sequence[str], fixed: dict):
    """Map GSA factor samples onto model inputs (h, gamma, LL, UL).

    A factor named ``jam`` drives both rudder limits; ``fixed`` supplies
    constant values for inputs that are not factors.
    """
    names = list(factor_names)

    def to_inputs(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.empty((z.shape[0], 4))
        cols = dict(zip(names, z.T))
        if "jam" in cols:
            cols["ll"] = cols["ul"] = cols.pop("jam")
        for k, name in enumerate(INPUT_NAMES):
            if name in cols:
                out[:, k] = cols[name]
            elif name in fixed:
                out[:, k] = float(fixed[name])
            else:
                raise ConfigError(f"input {name!r} is neither a factor nor fixed")
        return out

    return to_inputs


def run_gsa(model, request: dict, seed: int) -> gsa.SobolResult:
    space = gsa.FactorSpace.from_bounds(request["factors"])
    intake = gsa_intake(space.names, request.get("fixed", {}))
    output = int(request.get("output", 0))

    def f(z):
        y = np.asarray(model.predict(intake(z)), dtype=float)
        return y if y.ndim == 1 else y[:, output]

    return gsa.analyze(space, f, int(request.get("n", 10000)), seed=seed,
                       second_order=bool(request.get("second_order", False)),
                       n_boot=int(request.get("n_boot", 500)), level=float(request.get("level", 0.95)))


def run_experiment(cfg: ExperimentConfig, progress=None) -> Report:
    """Load or generate data, split, fit every requested model, evaluate,
    run requested sensitivity analyses and write all artifacts."""
    out = Path(cfg.output_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    stage = "data"
    try:
        records = load_or_generate(cfg, out, progress)
        if not records:
            raise ValueError("database holds no records")
        stage = "split"
        n = len(records)
        train_idx, test_idx = split(n, cfg.split, cfg.seed)
        net_train, net_val = network_split(test_idx, n, cfg.validation_fraction, cfg.seed)
        folds = {"seed": cfg.seed, "train": train_idx.tolist(), "test": test_idx.tolist(),
                 "network_train": net_train.tolist(), "network_validation": net_val.tolist()}
        (out / "folds.json").write_text(json.dumps(folds))
        x = inputs_array(records)
        y = targets_array(records, cfg.target)
        x_tr, y_tr, x_te, y_te = x[train_idx], y[train_idx], x[test_idx], y[test_idx]
        scale = ScalingSpec.fit(x_tr, y_tr)

        probes = []
        if cfg.probes == "default":
            probes = [records[i] for i in mid_range(x, test_idx, 2)]
            if cfg.generate:
                from .envelope.dynamics import GenericTransport
                from .envelope.sweep import GridSpec

                probes += [p for p in synthesize_probes(GenericTransport(), DEFAULT_SYNTHETIC_PROBES,
                                                        GridSpec(**cfg.grid)) if not p.empty]
        elif cfg.probes:
            probes = ingest_csv(cfg.probes)
        if probes:
            write_csv(probes, out / "probes.csv")

        rows, models = [], {}
        stage = "fit"
        timings = {}
        for name in cfg.poly_models:
            t0 = time.perf_counter()
            spec = PolynomialSpec.from_name(name)
            model = PolynomialRegressor(spec.per_var_max, spec.total_degree).fit(x_tr, y_tr)
            timings[name] = time.perf_counter() - t0
            models[name] = ("poly", model, model.exponents_.shape[0])
        for nb in cfg.tanh_models:
            if np.ndim(y) != 1:
                raise ConfigError("tanh models fit a single output")
            name = f"f{_tanh_coef(int(nb))}"
            t0 = time.perf_counter()
            model = TanhRegressor(int(nb), cfg.tanh_solver, cfg.restarts, cfg.seed).fit(x_tr, y_tr)
            timings[name] = time.perf_counter() - t0
            models[name] = ("tanh", model, _tanh_coef(int(nb)))
        for hidden in cfg.mlp_models:
            name = f"MLP{int(hidden)}"
            t0 = time.perf_counter()
            model = MLPRegressor(int(hidden), cfg.restarts, cfg.max_epochs, random_state=cfg.seed,
                                 selection=cfg.selection)
            model.fit_folds(x[net_train], y[net_train], x[net_val], y[net_val], x_te, y_te)
            timings[name] = time.perf_counter() - t0
            p = model.network_.params
            models[name] = ("mlp", model, p.size)
        _merge_runtimes(out, {"fit_s": timings})

        stage = "evaluate"
        for name, (kind, model, ncoef) in models.items():
            with open(out / "models" / f"{name}.json", "w") as fh:
                json.dump(_finite(model.to_dict()), fh)
            row = _model_row(name, kind, model, ncoef, x_tr, y_tr, x_te, y_te, scale)
            if probes:
                row["probes"] = probe_eval(model, probes, cfg.target, x_tr)
            rows.append(row)
            _write_predictions(out / f"predictions_{name}.csv", x_te, y_te, np.asarray(model.predict(x_te)))
            if kind == "mlp":
                model.network_.history_to_csv(out / f"history_{name}.csv")
        rows.sort(key=lambda r: (r["test_mse"] if math.isfinite(r["test_mse"]) else math.inf, r["name"]))

        stage = "gsa"
        gsa_out = []
        for k, req in enumerate(cfg.gsa):
            mname = req.get("model")
            if mname not in models:
                raise ConfigError(f"sensitivity request names unknown model {mname!r}")
            res = run_gsa(models[mname][1], req, cfg.seed + k)
            d = res.to_dict()
            d["model"] = mname
            gsa_out.append(d)
            with open(out / f"gsa_{k}_{mname}.json", "w") as fh:
                json.dump(_finite(d), fh, indent=1)

        stage = "report"
        dataset = {
            "n_records": n,
            "n_train": int(train_idx.size),
            "n_test": int(test_idx.size),
            "n_network_train": int(net_train.size),
            "n_validation": int(net_val.size),
            "target": cfg.target,
            "target_min": np.min(y, axis=0).tolist(),
            "target_max": np.max(y, axis=0).tolist(),
        }
        report = Report(dataset, rows, gsa_out, asdict(cfg))
        report.write(out)
        return report
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = stage
        raise


def _write_predictions(path, x, y, pred) -> None:
    y = np.asarray(y).reshape(len(x), -1)
    pred = np.asarray(pred).reshape(len(x), -1)
    with open(path, "w") as fh:
        cols = list(INPUT_NAMES) + [f"actual_{k}" for k in range(y.shape[1])] + [f"predicted_{k}" for k in range(y.shape[1])]
        fh.write(",".join(cols) + "\n")
        for i in range(len(x)):
            fh.write(",".join(repr(float(v)) for v in (*x[i], *y[i], *pred[i])) + "\n")


# ------------------------------------------------------------------ audit


def audit(directory, rtol: float = 1e-9) -> list[str]:
    """Recompute every model row of a stored report from its artifacts.

    Returns a list of discrepancies; empty means the report is reproducible.
    """
    d = Path(directory)
    report = json.loads((d / "report.json").read_text())
    cfg = report["config"]
    folds = json.loads((d / "folds.json").read_text())
    db_path = cfg["database"] if cfg.get("database") else d / "database.csv"
    records = ingest_csv(db_path)
    x = inputs_array(records)
    y = targets_array(records, cfg["target"])
    tr, te = np.array(folds["train"], int), np.array(folds["test"], int)
    scale = ScalingSpec.fit(x[tr], y[tr])
    probes = ingest_csv(d / "probes.csv") if (d / "probes.csv").exists() else []
    problems = []

    def close(a, b):
        if a is None or b is None:
            return a is None and b is None
        return math.isclose(a, b, rel_tol=rtol, abs_tol=1e-15)

    if report["dataset"]["n_records"] != len(records):
        problems.append("record count differs from the database")
    for row in report["models"]:
        model = load_model(d / "models" / f"{row['name']}.json")
        fresh = _finite(_model_row(row["name"], row["kind"], model, row["n_coefficients"],
                                   x[tr], y[tr], x[te], y[te], scale))
        for key in ("train_mse", "test_mse", "r2_adjusted"):
            if key in row and not close(row[key], fresh.get(key)):
                problems.append(f"{row['name']}: {key} reported {row[key]} recomputed {fresh.get(key)}")
        if probes and row.get("probes"):
            again = _finite(probe_eval(model, probes, cfg["target"], x[tr]))
            for p_old, p_new in zip(row["probes"], again):
                for e_old, e_new in zip(np.atleast_1d(p_old["error_percentage"]),
                                        np.atleast_1d(p_new["error_percentage"])):
                    if not close(e_old, e_new):
                        problems.append(f"{row['name']}: probe error {e_old} recomputed {e_new}")
    return problems
