"""Nonlinear least-squares engines: Levenberg-Marquardt and a two-dimensional
subspace trust-region method, both minimizing ``F(eta) = ||e(eta)||^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg
from .exceptions import NonFiniteEvaluation, RankDeficient


@dataclass
class ResidualModel:
    """Residual map ``eta -> e`` with an optional analytic Jacobian ``de/deta``.

    Without ``jacobian`` a central-difference Jacobian is used.
    """

    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-6

    def jac(self, eta: np.ndarray) -> np.ndarray:
        if self.jacobian is not None:
            return np.asarray(self.jacobian(eta), dtype=float)
        return linalg.fd_jacobian(self.residual, eta, self.fd_step)


@dataclass
class LmConfig:
    xi0: float = 0.01
    xi_decrease: float = 10.0
    xi_increase: float = 10.0
    max_iter: int = 1000
    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    xi_max: float = 1e16

    def __post_init__(self):
        if self.xi0 <= 0:
            raise ValueError("xi0 must be positive")
        if self.xi_decrease <= 1 or self.xi_increase <= 1:
            raise ValueError("xi factors must exceed 1")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class TrConfig:
    delta0: float = 1.0
    shrink_below: float = 0.25
    expand_above: float = 0.75
    shrink_factor: float = 0.25
    expand_factor: float = 2.0
    max_iter: int = 1000
    grad_tol: float = 1e-6
    step_tol: float = 1e-10

    def __post_init__(self):
        if self.delta0 <= 0:
            raise ValueError("delta0 must be positive")
        if not 0 < self.shrink_below < self.expand_above < 1:
            raise ValueError("need 0 < shrink_below < expand_above < 1")


CONVERGED = ("gradient", "step")


@dataclass
class SolveTrace:
    """Per-iteration history of a solve.

    ``radius`` holds the Marquardt parameter for LM and the trust radius for
    TRR, both as used to compute that iteration's step.
    """

    objective: list = field(default_factory=list)
    step: list = field(default_factory=list)
    optimality: list = field(default_factory=list)
    radius: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    n_iter: int = 0
    nfev: int = 0
    njev: int = 0
    reason: str = ""
    initial_objective: float = math.nan

    @property
    def converged(self) -> bool:
        return self.reason in CONVERGED

    @property
    def stalled(self) -> bool:
        """Stopped without meeting the gradient or step tolerance."""
        return not self.converged

    @property
    def final_objective(self) -> float:
        acc = [f for f, a in zip(self.objective, self.accepted) if a]
        return acc[-1] if acc else self.initial_objective

    def _record(self, f, step, opt, radius, accepted):
        self.objective.append(float(f))
        self.step.append(float(step))
        self.optimality.append(float(opt))
        self.radius.append(float(radius))
        self.accepted.append(bool(accepted))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "step", "optimality", "xi_or_delta", "accepted"])
            for i, row in enumerate(
                zip(self.objective, self.step, self.optimality, self.radius, self.accepted), 1
            ):
                w.writerow([i, *(repr(v) for v in row[:4]), int(row[4])])


def _evaluate(model: ResidualModel, eta: np.ndarray) -> tuple[np.ndarray, float]:
    e = np.asarray(model.residual(eta), dtype=float).ravel()
    f = float(e @ e)
    return e, f


def first_order_optimality(jac: np.ndarray, e: np.ndarray, f: float) -> float:
    """``||grad F||_inf / max(1, F)`` with ``grad F = 2 J^T e``."""
    return float(np.max(np.abs(2.0 * jac.T @ e))) / max(1.0, f)


def lm_iterate(model: ResidualModel, eta0, cfg: LmConfig | None = None):
    """Levenberg-Marquardt as a generator.

    Yields ``(eta, f, trace)`` for the starting point and after every
    iteration; ``trace.reason`` is set once the generator is exhausted.
    """
    cfg = cfg or LmConfig()
    eta = np.array(eta0, dtype=float)
    e, f = _evaluate(model, eta)
    if not math.isfinite(f):
        raise NonFiniteEvaluation("residuals are not finite at the starting point")
    trace = SolveTrace(initial_objective=f, nfev=1)
    jac = model.jac(eta)
    trace.njev = 1
    xi = cfg.xi0
    eye = np.eye(eta.size)
    yield eta, f, trace

    for _ in range(cfg.max_iter):
        opt = first_order_optimality(jac, e, f)
        if opt < cfg.grad_tol:
            trace.reason = "gradient"
            return
        jtj = jac.T @ jac
        jte = jac.T @ e
        while True:
            try:
                d = -np.linalg.solve(jtj + xi * eye, jte)
            except np.linalg.LinAlgError:
                d = None
            if d is not None:
                trial = eta + d
                e_new, f_new = _evaluate(model, trial)
                trace.nfev += 1
                if math.isfinite(f_new) and f_new < f:
                    break
            xi *= cfg.xi_increase
            if xi > cfg.xi_max:
                break
        trace.n_iter += 1
        if xi > cfg.xi_max:
            trace._record(f, 0.0, opt, xi, False)
            trace.reason = "xi_max"
            yield eta, f, trace
            return
        step_norm = float(np.linalg.norm(d))
        trace._record(f_new, step_norm, opt, xi, True)
        eta, e, f = trial, e_new, f_new
        xi = max(xi / cfg.xi_decrease, 1e-300)
        jac = model.jac(eta)
        trace.njev += 1
        yield eta, f, trace
        if step_norm < cfg.step_tol * (cfg.step_tol + np.linalg.norm(eta)):
            trace.reason = "step"
            return
    opt = first_order_optimality(jac, e, f)
    trace.reason = "gradient" if opt < cfg.grad_tol else "max_iter"


def lm_solve(model: ResidualModel, eta0, cfg: LmConfig | None = None):
    """Levenberg-Marquardt with multiplicative damping updates.

    Each iteration solves ``(J^T J + xi I) d = -J^T e``. A step that lowers
    ``F`` is accepted and ``xi`` divided by ``xi_decrease``; otherwise ``xi``
    is multiplied by ``xi_increase`` and the step recomputed from the same
    Jacobian.

    Returns ``(eta, trace)``; non-convergence is reported through
    ``trace.reason`` (``"max_iter"`` or ``"xi_max"``), not raised.
    """
    for eta, _, trace in lm_iterate(model, eta0, cfg):
        pass
    return eta, trace


# ------------------------------------------------------------- trust region


def _golden(fun, a, b, tol=1e-12, max_iter=200):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def solve_subspace_tr(g: np.ndarray, h: np.ndarray, delta: float, n_scan: int = 720) -> np.ndarray:
    """Minimize ``g.s + s.H.s / 2`` over ``||s|| <= delta`` for 1 or 2 dims.

    Checks the interior stationary point when ``H`` is positive definite, and
    otherwise (or when it falls outside) scans the boundary circle and
    refines the best angle by golden-section search.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)

    def q(s):
        return float(g @ s + 0.5 * s @ h @ s)

    candidates = []
    evals = np.linalg.eigvalsh(h)
    if evals.min() > 1e-14 * max(1.0, abs(evals.max())):
        s = -np.linalg.solve(h, g)
        if np.linalg.norm(s) <= delta:
            candidates.append(s)
    if g.size == 1:
        candidates += [np.array([delta]), np.array([-delta])]
    else:
        t = np.linspace(0.0, 2.0 * np.pi, n_scan, endpoint=False)
        pts = delta * np.stack([np.cos(t), np.sin(t)], axis=1)
        vals = pts @ g + 0.5 * np.einsum("ij,jk,ik->i", pts, h, pts)
        k = int(np.argmin(vals))
        width = 2.0 * np.pi / n_scan

        def qa(a):
            return q(delta * np.array([math.cos(a), math.sin(a)]))

        a = _golden(qa, t[k] - width, t[k] + width)
        candidates.append(delta * np.array([math.cos(a), math.sin(a)]))
    return min(candidates, key=q)


def _gauss_newton_direction(jac: np.ndarray, e: np.ndarray) -> Optional[np.ndarray]:
    try:
        if jac.shape[0] >= jac.shape[1]:
            return linalg.lsq_solve(jac, -e)
    except RankDeficient:
        pass
    sol, *_ = np.linalg.lstsq(jac, -e, rcond=None)
    return sol


def trr_solve(model: ResidualModel, eta0, cfg: TrConfig | None = None):
    """Trust-region method restricted to ``span{-g, rho_gn}``.

    ``rho_gn`` is the Gauss-Newton step (minimizer of ``||J rho + e||``)
    computed by a direct QR solve. The quadratic model is the Gauss-Newton
    model of ``F``; the radius shrinks by ``shrink_factor`` when the
    actual/predicted reduction ratio is below ``shrink_below`` and grows by
    ``expand_factor`` when it exceeds ``expand_above`` on a boundary step.
    """
    cfg = cfg or TrConfig()
    eta = np.array(eta0, dtype=float)
    e, f = _evaluate(model, eta)
    if not math.isfinite(f):
        raise NonFiniteEvaluation("residuals are not finite at the starting point")
    trace = SolveTrace(initial_objective=f, nfev=1)
    jac = model.jac(eta)
    trace.njev = 1
    delta = cfg.delta0

    for _ in range(cfg.max_iter):
        opt = first_order_optimality(jac, e, f)
        if opt < cfg.grad_tol:
            trace.reason = "gradient"
            break
        g = jac.T @ e
        gn = np.linalg.norm(g)
        basis = [g / -gn]
        rho_gn = _gauss_newton_direction(jac, e)
        if rho_gn is not None and np.all(np.isfinite(rho_gn)):
            w = rho_gn - (rho_gn @ basis[0]) * basis[0]
            if np.linalg.norm(w) > 1e-12 * max(np.linalg.norm(rho_gn), 1e-300):
                basis.append(w / np.linalg.norm(w))
        u = np.stack(basis, axis=1)
        ju = jac @ u
        s = solve_subspace_tr(u.T @ g, ju.T @ ju, delta)
        rho = u @ s
        step_norm = float(np.linalg.norm(rho))
        jr = jac @ rho
        predicted = -(2.0 * g @ rho + jr @ jr)
        trial = eta + rho
        e_new, f_new = _evaluate(model, trial)
        trace.nfev += 1
        trace.n_iter += 1
        ratio = (f - f_new) / predicted if predicted > 0 else -1.0
        accepted = math.isfinite(f_new) and f_new < f
        used_delta = delta
        if not math.isfinite(ratio) or ratio < cfg.shrink_below:
            delta *= cfg.shrink_factor
        elif ratio > cfg.expand_above and step_norm >= 0.99 * delta:
            delta *= cfg.expand_factor
        if accepted:
            trace._record(f_new, step_norm, opt, used_delta, True)
            eta, e, f = trial, e_new, f_new
            if step_norm < cfg.step_tol * (cfg.step_tol + np.linalg.norm(eta)):
                trace.reason = "step"
                break
            jac = model.jac(eta)
            trace.njev += 1
        else:
            trace._record(f, step_norm, opt, used_delta, False)
            if delta < cfg.step_tol * (cfg.step_tol + np.linalg.norm(eta)):
                trace.reason = "step"
                break
    else:
        opt = first_order_optimality(jac, e, f)
        trace.reason = "gradient" if opt < cfg.grad_tol else "max_iter"
    return eta, trace
