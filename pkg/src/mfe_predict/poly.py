"""Constrained-degree multivariate polynomial response surfaces fitted by
Householder-QR least squares.

A model such as ``Poly3344`` contains every monomial
``h^j1 * gamma^j2 * LL^j3 * UL^j4`` with ``j1+j2+j3+j4 <= d`` and per-variable
caps ``(3, 3, 4, 4)``; ``d`` defaults to the largest cap.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import linalg
from .exceptions import InsufficientData, RankDeficient
from .records import MfeRecord, inputs_array, non_empty, targets_array
from .scaling import ScalingSpec
from .validation import check_inputs, check_targets

N_INPUTS = 4


@dataclass(frozen=True)
class PolynomialSpec:
    total_degree: int
    per_var_max: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_var_max", tuple(int(c) for c in self.per_var_max))
        if self.total_degree < 1:
            raise ValueError("total_degree must be >= 1")
        if any(c < 0 or c > self.total_degree for c in self.per_var_max):
            raise ValueError(f"per-variable caps {self.per_var_max} must lie in [0, {self.total_degree}]")

    @classmethod
    def from_name(cls, name: str) -> "PolynomialSpec":
        """Parse ``"Poly3344"``-style names (one digit per input)."""
        m = re.fullmatch(r"(?i)poly(\d{4})", name.strip())
        if not m:
            raise ValueError(f"cannot parse polynomial name {name!r}")
        caps = tuple(int(c) for c in m.group(1))
        return cls(max(caps), caps)

    @property
    def name(self) -> str:
        label = "Poly" + "".join(str(c) for c in self.per_var_max)
        return label if self.total_degree == max(self.per_var_max) else f"{label}d{self.total_degree}"

    def to_dict(self) -> dict:
        return {"total_degree": self.total_degree, "per_var_max": list(self.per_var_max)}


def as_spec(spec) -> PolynomialSpec:
    if isinstance(spec, PolynomialSpec):
        return spec
    if isinstance(spec, str):
        return PolynomialSpec.from_name(spec)
    caps = tuple(spec)
    return PolynomialSpec(max(caps), caps)


def enumerate_terms(spec) -> np.ndarray:
    """Exponent table ``(P, n_vars)`` in graded lexicographic order.

    Terms are grouped by total degree; within a degree, tuples are sorted in
    descending lexicographic order, so with variables (h, gamma, LL, UL) the
    first-degree block reads h, gamma, LL, UL.
    """
    spec = as_spec(spec)
    rows = [
        e
        for e in itertools.product(*(range(c + 1) for c in spec.per_var_max))
        if sum(e) <= spec.total_degree
    ]
    rows.sort(key=lambda e: (sum(e), tuple(-j for j in e)))
    return np.array(rows, dtype=int).reshape(-1, len(spec.per_var_max))


def design_matrix(z_scaled, exponents) -> np.ndarray:
    """Monomial evaluations of already-scaled inputs, one column per term."""
    z = np.asarray(z_scaled, dtype=float)
    exponents = np.asarray(exponents, dtype=int)
    max_e = exponents.max(axis=0)
    out = np.ones((z.shape[0], exponents.shape[0]))
    for v in range(exponents.shape[1]):
        powers = np.ones((z.shape[0], max_e[v] + 1))
        for p in range(1, max_e[v] + 1):
            powers[:, p] = powers[:, p - 1] * z[:, v]
        out *= powers[:, exponents[:, v]]
    return out


def adjusted_r2(r2: float, m: int, n_predictors: int) -> float:
    """``1 - (1 - r2) (m - 1) / (m - p - 1)`` with ``p`` non-constant terms."""
    return 1.0 - (1.0 - r2) * (m - 1) / (m - n_predictors - 1)


def error_percentage(y: float, yhat: float) -> float:
    """``|y - yhat| / |y| * 100``."""
    if y == 0:
        raise ZeroDivisionError("error percentage undefined for a zero target")
    return abs(y - yhat) / abs(y) * 100.0


def t_quantile(p: float, dof: int) -> float:
    return float(_stats.t.ppf(p, dof))


def fingerprint(x, y) -> str:
    """Short content hash of a training set, stored in model artifacts."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()[:16]


class PolynomialRegressor(RegressorMixin, BaseEstimator):
    """Least-squares polynomial response surface.

    Parameters
    ----------
    max_degrees : tuple of int
        Per-variable exponent caps in (h, gamma, LL, UL) order.
    total_degree : int, optional
        Bound on the summed exponents; defaults to ``max(max_degrees)``.

    Attributes
    ----------
    exponents_ : ndarray of shape (P, 4)
    coef_ : ndarray of shape (P,) or (P, n_outputs)
        Coefficients on the scaled-input / normalized-output scale.
    scaling_ : ScalingSpec
    stats_ : dict
        ``r2``, ``r2_adjusted``, ``train_mse``, ``dof``, ``n_coef``, ``m``.
    """

    def __init__(self, max_degrees=(3, 3, 4, 4), total_degree=None):
        self.max_degrees = max_degrees
        self.total_degree = total_degree

    @property
    def spec(self) -> PolynomialSpec:
        caps = tuple(self.max_degrees)
        return PolynomialSpec(self.total_degree or max(caps), caps)

    def fit(self, X, y):
        X = check_inputs(X, n_features=len(tuple(self.max_degrees)))
        y = check_targets(X, y)
        spec = self.spec
        exponents = enumerate_terms(spec)
        m, p = X.shape[0], exponents.shape[0]
        if m <= p:
            raise InsufficientData(f"{spec.name} needs more than {p} samples, got {m}")

        scaling = ScalingSpec.fit(X, y, inputs="std")
        d = design_matrix(scaling.scale_inputs(X), exponents)
        yn = scaling.normalize(y)
        try:
            qr = linalg.qr_householder(d)
        except RankDeficient as exc:
            raise RankDeficient(f"{spec.name}: {exc}") from exc
        coef = linalg.solve_upper(qr.r, qr.q.T @ yn)

        self.exponents_ = exponents
        self.coef_ = coef
        self.scaling_ = scaling
        self.r_factor_ = qr.r
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = 1 if y.ndim == 1 else y.shape[1]
        self.fingerprint_ = fingerprint(X, y)

        resid = d @ coef - yn
        sse = np.sum(resid**2, axis=0)
        sst = np.sum((yn - yn.mean(axis=0)) ** 2, axis=0)
        r2 = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), 1.0)
        dof = m - p
        self.stats_ = {
            "m": m,
            "n_coef": p,
            "dof": dof,
            "train_mse": _squeeze(sse / m),
            "sigma2": _squeeze(sse / dof),
            "r2": _squeeze(r2),
            "r2_adjusted": _squeeze(adjusted_r2(r2, m, p - 1)),
        }
        return self

    def _design(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_inputs(X, n_features=self.n_features_in_)
        return design_matrix(self.scaling_.scale_inputs(X), self.exponents_)

    def predict_normalized(self, X) -> np.ndarray:
        return self._design(X) @ self.coef_

    def predict(self, X) -> np.ndarray:
        return self.scaling_.denormalize(self.predict_normalized(X))

    def predict_counts(self, X) -> np.ndarray:
        """Predictions rounded to the nearest non-negative integer."""
        return np.maximum(np.rint(self.predict(X)), 0).astype(int)

    def denormalized_coefficients(self) -> np.ndarray:
        """Coefficients acting on scaled inputs and producing raw targets."""
        check_is_fitted(self, "coef_")
        c = self.coef_ * (self.scaling_.output_halfrange if self.coef_.ndim > 1 else self.scaling_.output_halfrange[0])
        c = np.array(c, copy=True)
        c[0] = c[0] + (self.scaling_.output_offset if c.ndim > 1 else self.scaling_.output_offset[0])
        return c

    def leverage(self, X) -> np.ndarray:
        """``x^T (D^T D)^{-1} x`` for each scaled term row ``x``."""
        d = self._design(X)
        w = linalg.solve_lower(self.r_factor_.T, d.T)
        return np.sum(w**2, axis=0)

    def predict_interval(self, X, confidence: float = 0.95):
        """Prediction bounds ``yhat +/- t * s * sqrt(1 + leverage)`` in raw units.

        Returns ``(yhat, lower, upper)``.
        """
        if not 0.0 < confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        yhat_n = self.predict_normalized(X)
        tq = t_quantile((1.0 + confidence) / 2.0, self.stats_["dof"])
        s = np.sqrt(np.asarray(self.stats_["sigma2"]))
        half = tq * np.sqrt(1.0 + self.leverage(X))
        half = half[:, None] * s if yhat_n.ndim > 1 else half * s
        lo = self.scaling_.denormalize(yhat_n - half)
        hi = self.scaling_.denormalize(yhat_n + half)
        return self.scaling_.denormalize(yhat_n), lo, hi

    # ------------------------------------------------------------ artifacts

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": "polynomial",
            "spec": self.spec.to_dict(),
            "exponent_table": self.exponents_.tolist(),
            "coefficients": np.asarray(self.coef_).tolist(),
            "r_factor": self.r_factor_.tolist(),
            "scaling": self.scaling_.to_dict(),
            "stats": {k: _jsonable(v) for k, v in self.stats_.items()},
            "n_outputs": self.n_outputs_,
            "dataset_fingerprint": self.fingerprint_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialRegressor":
        spec = d["spec"]
        model = cls(tuple(spec["per_var_max"]), spec["total_degree"])
        model.exponents_ = np.array(d["exponent_table"], dtype=int)
        model.coef_ = np.array(d["coefficients"], dtype=float)
        model.r_factor_ = np.array(d["r_factor"], dtype=float)
        model.scaling_ = ScalingSpec.from_dict(d["scaling"])
        model.stats_ = {k: (np.array(v) if isinstance(v, list) else v) for k, v in d["stats"].items()}
        model.n_outputs_ = d["n_outputs"]
        model.n_features_in_ = model.exponents_.shape[1]
        model.fingerprint_ = d["dataset_fingerprint"]
        return model

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "PolynomialRegressor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _squeeze(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 or a.size == 1 else a


def _jsonable(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


def fit_records(records: Sequence[MfeRecord], spec, target: str = "n_trim") -> PolynomialRegressor:
    """Fit a polynomial to non-empty records for one target selector."""
    recs = non_empty(records)
    spec = as_spec(spec)
    model = PolynomialRegressor(spec.per_var_max, spec.total_degree)
    return model.fit(inputs_array(recs), targets_array(recs, target))


def metrics(model: PolynomialRegressor, X, y) -> dict:
    """MSE on the model's normalized output scale, R^2 and adjusted R^2."""
    X = check_inputs(X, n_features=model.n_features_in_)
    y = check_targets(X, y)
    yn = model.scaling_.normalize(y)
    resid = model.predict_normalized(X) - yn
    m = X.shape[0]
    sse = np.sum(resid**2, axis=0)
    sst = np.sum((yn - yn.mean(axis=0)) ** 2, axis=0)
    r2 = np.where(sst > 0, 1.0 - sse / np.where(sst > 0, sst, 1.0), 1.0)
    p = model.exponents_.shape[0]
    out = {"mse": _squeeze(sse / m), "r2": _squeeze(r2), "residuals": resid}
    out["r2_adjusted"] = _squeeze(adjusted_r2(r2, m, p - 1)) if m > p else float("nan")
    return out


@dataclass
class DiagnosticRow:
    name: str
    n_coef: int
    train_mse: float
    test_mse: float
    probe_mse: float
    probe_max_error_pct: float
    flagged: bool
    reason: str = ""


def degree_diagnostic(
    x_train, y_train, x_test, y_test, x_probe, y_probe, specs, ratio: float = 10.0
) -> list[DiagnosticRow]:
    """Compare candidate specs on train/test MSE and mid-range probe error.

    A spec is flagged as over-specified when its design is rank deficient or
    when its normalized probe MSE exceeds ``ratio`` times its test MSE. Rows
    are returned best first: unflagged before flagged, then by probe MSE.
    """
    rows = []
    for s in specs:
        spec = as_spec(s)
        model = PolynomialRegressor(spec.per_var_max, spec.total_degree)
        n_coef = enumerate_terms(spec).shape[0]
        try:
            model.fit(x_train, y_train)
        except RankDeficient as exc:
            rows.append(DiagnosticRow(spec.name, n_coef, *([float("nan")] * 3), float("inf"), True, f"rank deficient: {exc}"))
            continue
        except InsufficientData as exc:
            rows.append(DiagnosticRow(spec.name, n_coef, *([float("nan")] * 3), float("inf"), True, str(exc)))
            continue
        test_mse = float(np.mean(metrics(model, x_test, y_test)["mse"]))
        probe = metrics(model, x_probe, y_probe)
        probe_mse = float(np.mean(probe["mse"]))
        yp = model.predict(x_probe)
        yt = np.asarray(y_probe, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            pct = np.abs(yt - yp) / np.abs(yt) * 100.0
        flagged = probe_mse > ratio * test_mse
        rows.append(
            DiagnosticRow(
                spec.name,
                n_coef,
                float(np.mean(model.stats_["train_mse"])),
                test_mse,
                probe_mse,
                float(np.nanmax(pct)),
                bool(flagged),
                f"probe MSE {probe_mse:.3e} > {ratio:g} x test MSE {test_mse:.3e}" if flagged else "",
            )
        )
    rows.sort(key=lambda r: (r.flagged, r.probe_mse if np.isfinite(r.probe_mse) else np.inf))
    return rows
