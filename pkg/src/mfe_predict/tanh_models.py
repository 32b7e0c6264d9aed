"""Sums of hyperbolic-tangent ridge functions fitted by nonlinear least squares.

With ``B`` basis functions the model is::

    f(z) = eta[0] + sum_b a_b * tanh(w_b . z + c_b)

and the coefficient vector is laid out as ``[offset, (a_b, w_b1..w_b4, c_b)
for each b]``, i.e. ``1 + 6B`` entries. A 19-entry vector therefore holds the
three-basis model and its first 7 / 13 entries are the one- and two-basis
models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .nlsq import LmConfig, ResidualModel, SolveTrace, TrConfig, lm_solve, trr_solve
from .scaling import ScalingSpec
from .validation import check_inputs, check_targets

N_INPUTS = 4


class AllRunsStalled(UserWarning):
    """Every restart stopped without meeting its convergence tolerance."""


@dataclass(frozen=True)
class TanhModelSpec:
    n_basis: int = 1
    n_inputs: int = N_INPUTS

    def __post_init__(self):
        if self.n_basis < 1:
            raise ValueError("n_basis must be >= 1")

    @property
    def n_params(self) -> int:
        return 1 + (self.n_inputs + 2) * self.n_basis


def _blocks(spec: TanhModelSpec, eta: np.ndarray):
    eta = np.asarray(eta, dtype=float)
    if eta.size != spec.n_params:
        raise ValueError(f"expected {spec.n_params} coefficients, got {eta.size}")
    blk = eta[1:].reshape(spec.n_basis, spec.n_inputs + 2)
    return eta[0], blk[:, 0], blk[:, 1:-1], blk[:, -1]


def tanh_model_eval(spec: TanhModelSpec, eta, z) -> np.ndarray:
    """Evaluate on scaled inputs ``z`` of shape ``(m, 4)`` (or a single row)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    offset, amp, w, c = _blocks(spec, eta)
    return offset + np.tanh(z @ w.T + c) @ amp


def tanh_model_jacobian(spec: TanhModelSpec, eta, z) -> np.ndarray:
    """``d f / d eta`` with shape ``(m, 1 + 6B)``, columns in coefficient order."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    _, amp, w, c = _blocks(spec, eta)
    t = np.tanh(z @ w.T + c)
    dt = amp * (1.0 - t**2)
    m = z.shape[0]
    jac = np.empty((m, spec.n_params))
    jac[:, 0] = 1.0
    cols = jac[:, 1:].reshape(m, spec.n_basis, spec.n_inputs + 2)
    cols[:, :, 0] = t
    cols[:, :, 1:-1] = dt[:, :, None] * z[:, None, :]
    cols[:, :, -1] = dt
    jac[:, 1:] = cols.reshape(m, -1)
    return jac


def residual_model(spec: TanhModelSpec, z, y, analytic: bool = True) -> ResidualModel:
    """Residuals ``e = y - f(z)``; the Jacobian is ``-df/deta``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    return ResidualModel(
        residual=lambda eta: y - tanh_model_eval(spec, eta, z),
        jacobian=(lambda eta: -tanh_model_jacobian(spec, eta, z)) if analytic else None,
    )


def initial_vectors(n_restarts: int, seed, length: int) -> list[np.ndarray]:
    """Uniform[-1, 1] start vectors, one independent stream per restart."""
    children = np.random.SeedSequence(seed).spawn(n_restarts)
    return [np.random.default_rng(c).uniform(-1.0, 1.0, length) for c in children]


@dataclass
class TanhFit:
    eta: np.ndarray
    trace: SolveTrace
    train_sse: float
    selection_mse: float
    restart: int
    all_stalled: bool
    runs: list


def fit_tanh_family(
    z,
    y,
    spec: TanhModelSpec,
    restarts: int = 15,
    seed=0,
    z_val=None,
    y_val=None,
    solver: str = "lm",
    cfg=None,
    prefix_length: Optional[int] = None,
) -> TanhFit:
    """Multi-start fit; the run with the lowest held-out MSE wins.

    Start vectors are drawn with ``prefix_length`` entries (default: this
    model's size) and truncated, so models of different size started from
    the same seed share their leading coefficients. Without a held-out set
    the training sum of squares decides.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    length = max(prefix_length or spec.n_params, spec.n_params)
    starts = [v[: spec.n_params] for v in initial_vectors(restarts, seed, length)]
    model = residual_model(spec, z, y)
    solve = {"lm": lm_solve, "trr": trr_solve}[solver]
    if cfg is None:
        cfg = LmConfig() if solver == "lm" else TrConfig()
    runs = []
    for k, eta0 in enumerate(starts):
        eta, trace = solve(model, eta0, cfg)
        sse = trace.final_objective
        if z_val is not None:
            sel = float(np.mean((tanh_model_eval(spec, eta, z_val) - np.asarray(y_val)) ** 2))
        else:
            sel = sse / len(y)
        runs.append((sel, k, eta, trace, sse))
    sel, k, eta, trace, sse = min(runs, key=lambda r: (r[0], r[1]))
    all_stalled = all(r[3].stalled for r in runs)
    if all_stalled:
        warnings.warn(f"all {restarts} restarts stopped before convergence", AllRunsStalled)
    return TanhFit(eta, trace, sse, sel, k, all_stalled, [(r[1], r[0], r[4], r[3].reason) for r in runs])


class TanhRegressor(RegressorMixin, BaseEstimator):
    """Sum-of-tanh regressor (7, 13 or 19 coefficients for 1-3 bases).

    Inputs are autoscaled by inverse standard deviation and targets mapped
    onto [-1, 1] before fitting.
    """

    def __init__(self, n_basis=1, solver="lm", restarts=15, random_state=0, max_iter=1000, prefix_length=None):
        self.n_basis = n_basis
        self.solver = solver
        self.restarts = restarts
        self.random_state = random_state
        self.max_iter = max_iter
        self.prefix_length = prefix_length

    def fit(self, X, y, eval_set=None):
        X = check_inputs(X)
        y = check_targets(X, y)
        if y.ndim != 1:
            raise ValueError("TanhRegressor fits a single output")
        spec = TanhModelSpec(self.n_basis)
        scaling = ScalingSpec.fit(X, y, inputs="std")
        zv = yv = None
        if eval_set is not None:
            xv, yv_raw = eval_set
            zv = scaling.scale_inputs(check_inputs(xv))
            yv = scaling.normalize(np.asarray(yv_raw, dtype=float))
        cfg = (LmConfig if self.solver == "lm" else TrConfig)(max_iter=self.max_iter)
        result = fit_tanh_family(
            scaling.scale_inputs(X),
            scaling.normalize(y),
            spec,
            restarts=self.restarts,
            seed=self.random_state,
            z_val=zv,
            y_val=yv,
            solver=self.solver,
            cfg=cfg,
            prefix_length=self.prefix_length,
        )
        self.spec_ = spec
        self.scaling_ = scaling
        self.coef_ = result.eta
        self.trace_ = result.trace
        self.result_ = result
        self.n_features_in_ = X.shape[1]
        return self

    def predict_normalized(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        z = self.scaling_.scale_inputs(check_inputs(X))
        return tanh_model_eval(self.spec_, self.coef_, z)

    def predict(self, X) -> np.ndarray:
        return self.scaling_.denormalize(self.predict_normalized(X))

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": "tanh",
            "n_basis": self.spec_.n_basis,
            "coefficients": self.coef_.tolist(),
            "scaling": self.scaling_.to_dict(),
            "solver": self.solver,
            "seed": self.random_state,
            "trace": {
                "n_iter": self.trace_.n_iter,
                "nfev": self.trace_.nfev,
                "reason": self.trace_.reason,
                "final_objective": self.trace_.final_objective,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TanhRegressor":
        model = cls(n_basis=d["n_basis"], solver=d.get("solver", "lm"), random_state=d.get("seed", 0))
        model.spec_ = TanhModelSpec(d["n_basis"])
        model.coef_ = np.array(d["coefficients"], dtype=float)
        model.scaling_ = ScalingSpec.from_dict(d["scaling"])
        model.n_features_in_ = N_INPUTS
        return model

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
