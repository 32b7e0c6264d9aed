"""Two-layer feedforward network: tanh hidden layer, linear output layer.

Parameters are flattened as ``w1`` (row-major), ``b1``, ``w2`` (row-major),
``b2``; Jacobian columns and JSON artifacts use this order. Residuals are
``e = target - output`` and stacked sample-major, so row ``i * S2 + k``
holds output ``k`` of sample ``i``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .nlsq import LmConfig, ResidualModel, lm_iterate
from .scaling import ScalingSpec
from .tanh_models import AllRunsStalled
from .validation import check_inputs, check_targets

N_INPUTS = 4
NW_FACTOR = 0.7
OUTPUT_INIT_SCALE = 0.5


def param_count(s1: int, r: int, s2: int) -> int:
    if min(s1, r, s2) < 1:
        raise ValueError("layer sizes must be positive")
    return s1 * (r + 1) + s2 * (s1 + 1)


@dataclass(frozen=True)
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        s1, r = self.w1.shape
        if self.b1.shape != (s1,) or self.w2.shape[1] != s1 or self.b2.shape != (self.w2.shape[0],):
            raise ValueError("inconsistent layer dimensions")

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(S1, R, S2)``."""
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[0]

    @property
    def size(self) -> int:
        return param_count(*self.dims)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def unflatten(cls, eta, s1: int, r: int, s2: int) -> "MlpParams":
        eta = np.asarray(eta, dtype=float)
        if eta.size != param_count(s1, r, s2):
            raise ValueError(f"expected {param_count(s1, r, s2)} parameters, got {eta.size}")
        i = 0
        w1 = eta[i : i + s1 * r].reshape(s1, r)
        i += s1 * r
        b1 = eta[i : i + s1]
        i += s1
        w2 = eta[i : i + s2 * s1].reshape(s2, s1)
        i += s2 * s1
        return cls(w1, b1, w2, eta[i:])


def forward(params: MlpParams, z) -> np.ndarray:
    """``w2 tanh(w1 z + b1) + b2`` for one input (returns ``(S2,)``) or a batch ``(m, S2)``."""
    z = np.asarray(z, dtype=float)
    a1 = np.tanh(z @ params.w1.T + params.b1)
    return a1 @ params.w2.T + params.b2


def nguyen_widrow_init(s1: int, r: int, s2: int = 1, seed=0) -> MlpParams:
    """Hidden rows get norm ``0.7 * S1**(1/R)`` with random directions and
    biases spread evenly over the active interval; output weights are
    uniform in [-0.5, 0.5]. Assumes inputs scaled to [-1, 1].
    """
    rng = np.random.default_rng(seed)
    mag = NW_FACTOR * s1 ** (1.0 / r)
    d = rng.standard_normal((s1, r))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    w1 = mag * d
    if s1 == 1:
        b1 = np.zeros(1)
    else:
        b1 = mag * np.linspace(-1.0, 1.0, s1) * np.sign(w1[:, 0])
    w2 = rng.uniform(-OUTPUT_INIT_SCALE, OUTPUT_INIT_SCALE, (s2, s1))
    b2 = rng.uniform(-OUTPUT_INIT_SCALE, OUTPUT_INIT_SCALE, s2)
    return MlpParams(w1, b1, w2, b2)


def residuals(params: MlpParams, z, t) -> np.ndarray:
    t = np.asarray(t, dtype=float).reshape(len(z), -1)
    return (t - forward(params, z)).ravel()


def marquardt_jacobian(params: MlpParams, z) -> np.ndarray:
    """``d e / d eta`` for ``e = t - a2``, shape ``(m * S2, P)``.

    Each output channel seeds the backward pass with ``-1`` at that channel
    (linear output layer), and the hidden sensitivity is that seed
    propagated through ``w2`` and scaled by ``1 - a1**2``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    s1, r, s2 = params.dims
    m = z.shape[0]
    a1 = np.tanh(z @ params.w1.T + params.b1)
    # lam1[i, k, l]: hidden sensitivity of sample i for output k
    lam1 = -(1.0 - a1**2)[:, None, :] * params.w2[None, :, :]
    eye = np.eye(s2)
    jw1 = lam1[:, :, :, None] * z[:, None, None, :]
    jw2 = -eye[None, :, :, None] * a1[:, None, None, :]
    jb2 = -np.broadcast_to(eye, (m, s2, s2))
    jac = np.concatenate(
        [
            jw1.reshape(m, s2, s1 * r),
            lam1,
            jw2.reshape(m, s2, s2 * s1),
            jb2,
        ],
        axis=2,
    )
    return jac.reshape(m * s2, -1)


def sgd_backprop_step(params: MlpParams, z, t, sigma: float) -> MlpParams:
    """One steepest-descent backpropagation update on a single sample."""
    if sigma <= 0:
        raise ValueError("learning rate must be positive")
    z = np.asarray(z, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a1 = np.tanh(params.w1 @ z + params.b1)
    e = t - (params.w2 @ a1 + params.b2)
    lam2 = -2.0 * e
    lam1 = (1.0 - a1**2) * (params.w2.T @ lam2)
    return MlpParams(
        params.w1 - sigma * np.outer(lam1, z),
        params.b1 - sigma * lam1,
        params.w2 - sigma * np.outer(lam2, a1),
        params.b2 - sigma * lam2,
    )


def network_residual_model(s1: int, z, t) -> ResidualModel:
    z = np.asarray(z, dtype=float)
    t = np.asarray(t, dtype=float).reshape(len(z), -1)
    r, s2 = z.shape[1], t.shape[1]
    return ResidualModel(
        residual=lambda eta: residuals(MlpParams.unflatten(eta, s1, r, s2), z, t),
        jacobian=lambda eta: marquardt_jacobian(MlpParams.unflatten(eta, s1, r, s2), z),
    )


def mse(params: MlpParams, z, t) -> float:
    """Mean over samples of the per-sample average squared error across outputs."""
    e = residuals(params, z, t)
    return float(e @ e / e.size)


@dataclass
class TrainConfig:
    restarts: int = 15
    max_epochs: int = 1000
    validation_fraction: float = 1.0 / 9.0
    max_fail: int = 6
    lm: LmConfig = field(default_factory=LmConfig)
    learning_rate: float = 1e-3
    seed: int = 0
    selection: str = "validation"

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")
        if self.selection not in ("validation", "test"):
            raise ValueError("selection must be 'validation' or 'test'")


@dataclass
class TrainedNetwork:
    """A trained network; ``params`` are those at ``best_epoch``."""

    params: MlpParams
    scaling: Optional[ScalingSpec]
    history: list
    best_epoch: int
    restart: int = 0
    stop_reason: str = ""
    seed: int = 0
    all_runs: list = field(default_factory=list)

    @property
    def best_validation_mse(self) -> float:
        return self.history[self.best_epoch]["validation"]

    def predict_normalized(self, z) -> np.ndarray:
        return forward(self.params, z)

    def history_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "validation_mse", "test_mse"])
            for k, h in enumerate(self.history):
                w.writerow([k, repr(h["train"]), repr(h["validation"]), repr(h["test"])])

    def to_dict(self) -> dict:
        s1, r, s2 = self.params.dims
        return {
            "kind": "mlp",
            "dims": {"S1": s1, "R": r, "S2": s2},
            "parameters": self.params.flatten().tolist(),
            "scaling": None if self.scaling is None else self.scaling.to_dict(),
            "history": self.history,
            "best_epoch": self.best_epoch,
            "restart": self.restart,
            "stop_reason": self.stop_reason,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedNetwork":
        dims = d["dims"]
        params = MlpParams.unflatten(d["parameters"], dims["S1"], dims["R"], dims["S2"])
        scaling = None if d.get("scaling") is None else ScalingSpec.from_dict(d["scaling"])
        return cls(params, scaling, d.get("history", []), d.get("best_epoch", 0),
                   d.get("restart", 0), d.get("stop_reason", ""), d.get("seed", 0))


def residual_histogram(net: TrainedNetwork, z, t, bins: int = 20):
    """Counts and bin edges of the residuals ``t - output``."""
    return np.histogram(residuals(net.params, z, t), bins=bins)


def _nan_mse(params, z, t) -> float:
    return math.nan if z is None else mse(params, z, t)


def train_single(
    params0: MlpParams,
    z_train,
    t_train,
    z_val=None,
    t_val=None,
    z_test=None,
    t_test=None,
    max_epochs: int = 1000,
    max_fail: int = 6,
    lm: LmConfig | None = None,
) -> TrainedNetwork:
    """LM training from ``params0`` with validation-based early stopping.

    One epoch is one LM iteration. Training stops after ``max_fail``
    consecutive epochs whose validation MSE exceeds the previous one, and
    the parameters of the lowest-validation epoch are kept. Without a
    validation set the final parameters are kept.
    """
    s1, r, s2 = params0.dims
    lm = lm or LmConfig()
    cfg = LmConfig(**{**lm.__dict__, "max_iter": max_epochs})
    model = network_residual_model(s1, z_train, t_train)
    history = []
    best_epoch, best_val, best_eta = 0, math.inf, params0.flatten()
    fails, prev_val = 0, math.inf
    stop = ""
    gen = lm_iterate(model, params0.flatten(), cfg)
    trace = None
    for eta, f, trace in gen:
        p = MlpParams.unflatten(eta, s1, r, s2)
        val = _nan_mse(p, z_val, t_val)
        history.append({"train": f / np.size(t_train), "validation": val, "test": _nan_mse(p, z_test, t_test)})
        epoch = len(history) - 1
        if z_val is None or val < best_val:
            best_epoch, best_val, best_eta = epoch, val, eta
        if z_val is not None:
            fails = fails + 1 if val > prev_val else 0
            prev_val = val
            if fails >= max_fail:
                stop = "validation"
                gen.close()
                break
    if not stop:
        stop = trace.reason if trace is not None else ""
    return TrainedNetwork(MlpParams.unflatten(best_eta, s1, r, s2), None, history, best_epoch, stop_reason=stop)


def train(
    z_train,
    t_train,
    s1: int,
    cfg: TrainConfig | None = None,
    z_val=None,
    t_val=None,
    z_test=None,
    t_test=None,
) -> TrainedNetwork:
    """Multi-restart training on already-scaled data.

    Restart ``k`` initializes from its own spawned seed. The winner is the
    restart with the lowest validation MSE, or the lowest test MSE when
    ``cfg.selection == "test"`` (this lets the test fold influence model
    choice and is kept only for comparison with test-selected results).
    """
    cfg = cfg or TrainConfig()
    z_train = np.asarray(z_train, dtype=float)
    t_train = np.asarray(t_train, dtype=float).reshape(len(z_train), -1)
    if z_train.shape[0] == 0:
        raise ValueError("no training samples")
    if cfg.selection == "test" and z_test is None:
        raise ValueError("test-based selection needs a test set")
    r, s2 = z_train.shape[1], t_train.shape[1]
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    runs = []
    for k, ss in enumerate(seeds):
        p0 = nguyen_widrow_init(s1, r, s2, seed=ss)
        net = train_single(p0, z_train, t_train, z_val, t_val, z_test, t_test,
                           cfg.max_epochs, cfg.max_fail, cfg.lm)
        net.restart, net.seed = k, cfg.seed
        runs.append(net)

    def score(net: TrainedNetwork) -> float:
        if cfg.selection == "test":
            return mse(net.params, z_test, t_test)
        if z_val is not None:
            return net.best_validation_mse
        return mse(net.params, z_train, t_train)

    best = min(runs, key=lambda n: (score(n), n.restart))
    if all(n.stop_reason in ("max_iter", "xi_max") for n in runs):
        warnings.warn(f"all {cfg.restarts} restarts stopped before convergence", AllRunsStalled)
    best.all_runs = [(n.restart, score(n), n.stop_reason) for n in runs]
    return best


class MLPRegressor(RegressorMixin, BaseEstimator):
    """Tanh-hidden-layer network trained by Levenberg-Marquardt.

    Inputs are mapped onto [-1, 1] by training min/max and targets onto
    [-1, 1]. A validation fold of ``validation_fraction`` of the training
    rows is drawn with ``random_state`` for early stopping.
    """

    def __init__(
        self,
        hidden_units=10,
        restarts=15,
        max_epochs=1000,
        max_fail=6,
        validation_fraction=1.0 / 9.0,
        selection="validation",
        random_state=0,
    ):
        self.hidden_units = hidden_units
        self.restarts = restarts
        self.max_epochs = max_epochs
        self.max_fail = max_fail
        self.validation_fraction = validation_fraction
        self.selection = selection
        self.random_state = random_state

    def fit(self, X, y, eval_set=None):
        """``eval_set=(X_test, y_test)`` is tracked in the history and used
        for selection when ``selection="test"``."""
        X = check_inputs(X)
        y = check_targets(X, y)
        rng = np.random.default_rng(self.random_state)
        order = rng.permutation(len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
        x_test, y_test = (None, None) if eval_set is None else eval_set
        return self.fit_folds(X[tr_idx], y[tr_idx], X[val_idx], y[val_idx], x_test, y_test)

    def fit_folds(self, X_train, y_train, X_val, y_val, X_test=None, y_test=None):
        """Train with an explicit validation fold (and optional test fold)."""
        X_train = check_inputs(X_train)
        y_train = check_targets(X_train, y_train)
        X_val = check_inputs(X_val)
        y_val = check_targets(X_val, y_val)
        cfg = TrainConfig(
            restarts=self.restarts,
            max_epochs=self.max_epochs,
            validation_fraction=self.validation_fraction,
            max_fail=self.max_fail,
            seed=self.random_state,
            selection=self.selection,
        )
        scaling = ScalingSpec.fit(X_train, y_train, inputs="minmax")
        zt = tt = None
        if X_test is not None:
            zt = scaling.scale_inputs(check_inputs(X_test))
            tt = scaling.normalize(np.asarray(y_test, dtype=float))
        net = train(scaling.scale_inputs(X_train), scaling.normalize(y_train), self.hidden_units, cfg,
                    scaling.scale_inputs(X_val), scaling.normalize(y_val), zt, tt)
        net.scaling = scaling
        self.network_ = net
        self.scaling_ = scaling
        self.n_features_in_ = X_train.shape[1]
        self.n_outputs_ = 1 if y_train.ndim == 1 else y_train.shape[1]
        return self

    def predict_normalized(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        out = forward(self.network_.params, self.scaling_.scale_inputs(check_inputs(X)))
        return out[:, 0] if self.n_outputs_ == 1 else out

    def predict(self, X) -> np.ndarray:
        return self.scaling_.denormalize(self.predict_normalized(X))

    def to_dict(self) -> dict:
        check_is_fitted(self, "network_")
        return self.network_.to_dict()

    @classmethod
    def from_dict(cls, d: dict) -> "MLPRegressor":
        net = TrainedNetwork.from_dict(d)
        model = cls(hidden_units=net.params.dims[0], random_state=net.seed)
        model.network_ = net
        model.scaling_ = net.scaling
        model.n_features_in_ = net.params.dims[1]
        model.n_outputs_ = net.params.dims[2]
        return model

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
