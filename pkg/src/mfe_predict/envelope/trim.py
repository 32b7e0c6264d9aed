"""Trim-point search under steady-maneuver and control-failure constraints.

A trim problem fixes altitude, airspeed, flight-path angle and turn rate.
The maneuver constraints are eliminated rather than penalized: pitch
attitude follows from the rate-of-climb relation and the body rates from
the turn rate, leaving angle of attack, sideslip, bank and the free
controls as unknowns. Each unknown lives in a box and is reached through
``mid + half * sin(s)``, so the least-squares problem in ``s`` is
unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import linalg
from ..exceptions import Infeasible, NonConvergence, ThetaSingularity
from ..nlsq import LmConfig, ResidualModel, lm_solve
from .dynamics import DEG, G0, KT, DynamicsModel

STATE_NAMES = ("V", "alpha", "beta", "p", "q", "r", "phi", "theta")
CONTROL_NAMES = ("throttle", "elevator", "aileron", "rudder")

THROTTLE_LIMITS = (0.0, 1.0)
ELEVATOR_LIMITS = (-30.0, 30.0)
AILERON_LIMITS = (-20.0, 20.0)
RUDDER_LIMITS = (-30.0, 30.0)
BANK_LIMITS = (-30.0, 30.0)
ALPHA_LIMITS = (-5.0, 10.5)
BETA_LIMITS = (-20.0, 20.0)
GAMMA_LIMITS = (-5.0, 5.0)

ACCEPT_COST = 1e-8
ACCEPT_CONSTRAINT = 1e-6
ACCEPT_DERIVATIVE = 1e-6
STABILITY_MARGIN = 1e-9
THETA_GUARD = 1e-9

STABLE = "stable"
UNSTABLE_CONTROLLABLE = "unstable-controllable"
REJECTED = "rejected"


@dataclass(frozen=True)
class StateVector:
    """Airspeed in knots, angles in degrees, body rates in deg/s."""

    V: float
    alpha: float
    beta: float
    p: float
    q: float
    r: float
    phi: float
    theta: float

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError("airspeed must be positive")
        if not all(math.isfinite(v) for v in self.as_array()):
            raise ValueError("state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, a) -> "StateVector":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class ControlVector:
    throttle: float
    elevator: float
    aileron: float
    rudder: float

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.elevator, self.aileron, self.rudder], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ControlVector":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class FailureCase:
    """Rudder deflection limits; a jam has ``ll == ul``."""

    ll: float = RUDDER_LIMITS[0]
    ul: float = RUDDER_LIMITS[1]

    def __post_init__(self):
        if self.ll > self.ul:
            raise ValueError(f"lower rudder limit {self.ll} exceeds upper {self.ul}")
        if self.ll < RUDDER_LIMITS[0] or self.ul > RUDDER_LIMITS[1]:
            raise ValueError("rudder limits must lie within the healthy range")

    @property
    def kind(self) -> str:
        if self.ll == self.ul:
            return "jam"
        if (self.ll, self.ul) == RUDDER_LIMITS:
            return "unimpaired"
        return "restriction"

    def contains(self, other: "FailureCase") -> bool:
        return self.ll <= other.ll and other.ul <= self.ul

    def control_box(self) -> np.ndarray:
        """``(4, 2)`` lower/upper bounds for throttle, elevator, aileron, rudder."""
        return np.array([THROTTLE_LIMITS, ELEVATOR_LIMITS, AILERON_LIMITS, (self.ll, self.ul)], float)

    def contains_control(self, u, tol: float = 1e-9) -> bool:
        box = self.control_box()
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= box[:, 0] - tol) and np.all(u <= box[:, 1] + tol))


@dataclass(frozen=True)
class TrimProblem:
    h: float
    V: float
    gamma: float
    psidot: float
    failure: FailureCase = FailureCase()
    weights: tuple = (1.0,) * 8

    def __post_init__(self):
        if not GAMMA_LIMITS[0] <= self.gamma <= GAMMA_LIMITS[1]:
            raise ValueError(f"flight-path angle {self.gamma} outside {GAMMA_LIMITS}")
        if len(self.weights) != 8 or any(w <= 0 for w in self.weights):
            raise ValueError("need 8 positive weights")
        if not self.V > 0:
            raise ValueError("airspeed must be positive")


@dataclass
class TrimPoint:
    state: StateVector
    control: ControlVector
    cost: float
    classification: str
    eigenvalues: list = field(default_factory=list)
    max_derivative: float = math.nan
    constraint_violation: float = math.nan
    flag: str = ""

    @property
    def accepted(self) -> bool:
        return self.classification in (STABLE, UNSTABLE_CONTROLLABLE)


# --------------------------------------------------------------- kinematics


def theta_from_climb(alpha, beta, phi, gamma) -> np.ndarray:
    """Pitch attitude (deg) that yields flight-path angle ``gamma`` (deg).

    Principal branch of ``tan(theta) = (a b + sin(g) sqrt(a^2 - sin^2 g + b^2))
    / (a^2 - sin^2 g)`` with ``a = cos(alpha) cos(beta)`` and
    ``b = sin(phi) sin(beta) + cos(phi) sin(alpha) cos(beta)``.
    """
    al, be, ph, ga = (np.asarray(v, dtype=float) * DEG for v in (alpha, beta, phi, gamma))
    a = np.cos(al) * np.cos(be)
    b = np.sin(ph) * np.sin(be) + np.cos(ph) * np.sin(al) * np.cos(be)
    sg = np.sin(ga)
    den = a**2 - sg**2
    if np.any(np.abs(den) < THETA_GUARD):
        raise ThetaSingularity("rate-of-climb relation is singular (theta at +/-90 deg)")
    num = a * b + sg * np.sqrt(a**2 - sg**2 + b**2)
    return np.arctan(num / den) / DEG


def turn_body_rates(psidot, theta, phi) -> np.ndarray:
    """Body rates ``(p, q, r)`` in deg/s of a steady turn at ``psidot`` deg/s."""
    th, ph = np.asarray(theta, float) * DEG, np.asarray(phi, float) * DEG
    w = np.asarray(psidot, dtype=float)
    return np.stack([-w * np.sin(th), w * np.cos(th) * np.sin(ph), w * np.cos(th) * np.cos(ph)], axis=-1)


def flight_path_angle(x) -> np.ndarray:
    """Flight-path angle (deg) implied by a state array."""
    x = np.asarray(x, dtype=float)
    al, be, ph, th = (x[..., i] * DEG for i in (1, 2, 6, 7))
    a = np.cos(al) * np.cos(be)
    b = np.sin(ph) * np.sin(be) + np.cos(ph) * np.sin(al) * np.cos(be)
    return np.arcsin(np.clip(a * np.sin(th) - b * np.cos(th), -1.0, 1.0)) / DEG


def heading_rate(x) -> np.ndarray:
    """Turn rate (deg/s) implied by a state array."""
    x = np.asarray(x, dtype=float)
    ph, th = x[..., 6] * DEG, x[..., 7] * DEG
    return (x[..., 4] * np.sin(ph) + x[..., 5] * np.cos(ph)) / np.cos(th)


def maneuver_constraints(problem: TrimProblem):
    """Residual function ``(state, h=problem.h) -> vector`` of the maneuver constraints.

    Entries: altitude, airspeed, flight-path angle and turn-rate pins, the
    rate-of-climb pitch relation (as a ``tan(theta)`` difference), and the
    three steady-turn body-rate relations.
    """

    def residual(state, h: Optional[float] = None) -> np.ndarray:
        x = state.as_array() if isinstance(state, StateVector) else np.asarray(state, dtype=float)
        theta_req = theta_from_climb(x[1], x[2], x[6], problem.gamma)
        rates = turn_body_rates(problem.psidot, x[7], x[6])
        return np.concatenate(
            [
                [
                    (problem.h if h is None else h) - problem.h,
                    x[0] - problem.V,
                    flight_path_angle(x) - problem.gamma,
                    heading_rate(x) - problem.psidot,
                    math.tan(x[7] * DEG) - math.tan(float(theta_req) * DEG),
                ],
                x[3:6] - rates,
            ]
        )

    return residual


# ---------------------------------------------------------------- unknowns


@dataclass(frozen=True)
class TrimVariables:
    """Boxed unknowns of a trim problem; the rudder drops out for a jam."""

    failure: FailureCase

    @property
    def names(self) -> tuple:
        base = ("alpha", "beta", "phi", "throttle", "elevator", "aileron")
        return base if self.failure.kind == "jam" else base + ("rudder",)

    @property
    def box(self) -> np.ndarray:
        rows = [ALPHA_LIMITS, BETA_LIMITS, BANK_LIMITS, THROTTLE_LIMITS, ELEVATOR_LIMITS, AILERON_LIMITS]
        if self.failure.kind != "jam":
            rows.append((self.failure.ll, self.failure.ul))
        return np.array(rows, dtype=float)

    @property
    def size(self) -> int:
        return len(self.names)

    def values(self, s) -> np.ndarray:
        box = self.box
        mid, half = box.mean(axis=1), (box[:, 1] - box[:, 0]) / 2.0
        return mid + half * np.sin(s)

    def unknowns(self, vals) -> np.ndarray:
        """Inverse of :meth:`values` for points strictly inside the box."""
        box = self.box
        mid, half = box.mean(axis=1), (box[:, 1] - box[:, 0]) / 2.0
        return np.arcsin(np.clip((np.asarray(vals, float) - mid) / half, -1.0, 1.0))

    def assemble(self, vals, v, gamma, psidot):
        """State and control arrays from unknown values and the pinned
        airspeed, flight-path angle and turn rate (all broadcastable)."""
        vals = np.asarray(vals, dtype=float)
        al, be, ph = vals[..., 0], vals[..., 1], vals[..., 2]
        th = theta_from_climb(al, be, ph, gamma)
        rates = turn_body_rates(psidot, th, ph)
        v = np.broadcast_to(np.asarray(v, float), al.shape)
        x = np.stack([v, al, be, rates[..., 0], rates[..., 1], rates[..., 2], ph, th], axis=-1)
        rudder = vals[..., 6] if self.failure.kind != "jam" else np.full(al.shape, self.failure.ll)
        u = np.stack([vals[..., 3], vals[..., 4], vals[..., 5], rudder], axis=-1)
        return x, u


def default_start(variables: TrimVariables, v, psidot) -> np.ndarray:
    """Model-agnostic start values: coordinated-turn bank, mid throttle."""
    v = np.asarray(v, dtype=float)
    phi = np.clip(np.arctan(v * KT * np.asarray(psidot, float) * DEG / G0) / DEG, -25.0, 25.0)
    shape = np.broadcast(v, phi).shape
    cols = [np.full(shape, 3.0), np.zeros(shape), np.broadcast_to(phi, shape),
            np.full(shape, 0.5), np.full(shape, -3.0), np.zeros(shape)]
    if variables.failure.kind != "jam":
        cols.append(np.full(shape, (variables.failure.ll + variables.failure.ul) / 2.0))
    return np.stack(cols, axis=-1)


def weighted_residual(model: DynamicsModel, h, x, u, weights) -> np.ndarray:
    return np.sqrt(np.asarray(weights, float)) * model.derivatives(x, u, h)


# ----------------------------------------------------------- classification


def classify_linearization(a, b) -> str:
    """Stable if every eigenvalue has real part below a small margin, else
    unstable-controllable when ``[B, AB, ..., A^(n-1) B]`` has full rank."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float).reshape(a.shape[0], -1)
    eig = linalg.eigenvalues(a)
    if np.all(eig.real < STABILITY_MARGIN):
        return STABLE
    return UNSTABLE_CONTROLLABLE if controllable(a, b) else REJECTED


def controllable(a, b) -> bool:
    n = a.shape[0]
    if b.size == 0 or not np.any(b):
        return False
    blocks, cur = [], b
    for _ in range(n):
        blocks.append(cur)
        cur = a @ cur
    return linalg.rank(np.hstack(blocks)) == n


def free_control_columns(failure: FailureCase) -> list:
    return [0, 1, 2] if failure.kind == "jam" else [0, 1, 2, 3]


def linearize(model: DynamicsModel, x, u, h):
    """Central-difference ``A = df/dx`` (8x8) and ``B = df/du`` (8x4)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    a = linalg.fd_jacobian(lambda xx: model.derivatives(xx, u, h), x)
    b = linalg.fd_jacobian(lambda uu: model.derivatives(x, uu, h), u)
    return a, b


def classify(trim: TrimPoint, model: DynamicsModel, h: float, failure: FailureCase) -> TrimPoint:
    """Fill in the classification and eigenvalues of a feasible trim point."""
    a, b = linearize(model, trim.state.as_array(), trim.control.as_array(), h)
    b = b[:, free_control_columns(failure)]
    try:
        eig = linalg.eigenvalues(a)
    except NonConvergence:
        trim.classification, trim.flag = REJECTED, "eigenvalue iteration did not converge"
        return trim
    trim.eigenvalues = [complex(e) for e in eig]
    if np.all(eig.real < STABILITY_MARGIN):
        trim.classification = STABLE
    else:
        trim.classification = UNSTABLE_CONTROLLABLE if controllable(a, b) else REJECTED
    return trim


# ----------------------------------------------------------- single solve


def solve_trim(
    problem: TrimProblem,
    model: DynamicsModel,
    start: Optional[tuple] = None,
    cfg: Optional[LmConfig] = None,
) -> TrimPoint:
    """Minimize ``1/2 xdot^T G xdot`` for one trim problem with :func:`lm_solve`.

    ``start`` is an optional ``(StateVector, ControlVector)``. Raises
    :class:`Infeasible` when the optimizer stops above the acceptance
    tolerances.
    """
    variables = TrimVariables(problem.failure)
    if start is None:
        vals0 = default_start(variables, problem.V, problem.psidot)
    else:
        state, control = start
        if not problem.failure.contains_control(control.as_array()):
            raise ValueError("start controls violate the failure case limits")
        full = [state.alpha, state.beta, state.phi, *control.as_array()[:3]]
        if problem.failure.kind != "jam":
            full.append(control.rudder)
        vals0 = np.array(full, dtype=float)
    box = variables.box
    margin = 1e-3 * (box[:, 1] - box[:, 0])
    vals0 = np.clip(vals0, box[:, 0] + margin, box[:, 1] - margin)

    def res(s):
        x, u = variables.assemble(variables.values(s), problem.V, problem.gamma, problem.psidot)
        return weighted_residual(model, problem.h, x, u, problem.weights)

    cfg = cfg or LmConfig(grad_tol=1e-14, step_tol=1e-14, max_iter=400)
    s, trace = lm_solve(ResidualModel(res), variables.unknowns(vals0), cfg)
    x, u = variables.assemble(variables.values(s), problem.V, problem.gamma, problem.psidot)
    xdot = model.derivatives(x, u, problem.h)
    cost = 0.5 * float(np.sum(np.asarray(problem.weights) * xdot**2))
    viol = float(np.max(np.abs(maneuver_constraints(problem)(x))))
    maxd = float(np.max(np.abs(xdot)))
    if not (cost <= ACCEPT_COST and viol <= ACCEPT_CONSTRAINT and maxd <= ACCEPT_DERIVATIVE):
        raise Infeasible(f"no trim found: J = {cost:.3e}, max |xdot| = {maxd:.3e} ({trace.reason})")
    trim = TrimPoint(StateVector.from_array(x), ControlVector.from_array(u), cost, REJECTED,
                     max_derivative=maxd, constraint_violation=viol)
    return classify(trim, model, problem.h, problem.failure)


# ----------------------------------------------------------- batched solve


def unknown_box(failure: FailureCase) -> np.ndarray:
    """``(7, 2)`` bounds of alpha, beta, bank and all four controls; a jam
    gives the rudder a zero-width interval."""
    return np.array(
        [ALPHA_LIMITS, BETA_LIMITS, BANK_LIMITS, THROTTLE_LIMITS, ELEVATOR_LIMITS, AILERON_LIMITS,
         (failure.ll, failure.ul)],
        dtype=float,
    )


def _box_values(s, box) -> np.ndarray:
    mid, half = box.mean(axis=-1), (box[..., 1] - box[..., 0]) / 2.0
    return mid + half * np.sin(s)


def _box_unknowns(vals, box) -> np.ndarray:
    mid, half = box.mean(axis=-1), (box[..., 1] - box[..., 0]) / 2.0
    safe = np.where(half > 0, half, 1.0)
    return np.where(half > 0, np.arcsin(np.clip((vals - mid) / safe, -1.0, 1.0)), 0.0)


def assemble_full(vals, v, gamma, psidot):
    """State and control arrays from 7-column unknown values (rudder last)."""
    vals = np.asarray(vals, dtype=float)
    al, be, ph = vals[..., 0], vals[..., 1], vals[..., 2]
    th = theta_from_climb(al, be, ph, gamma)
    rates = turn_body_rates(psidot, th, ph)
    v = np.broadcast_to(np.asarray(v, float), al.shape)
    x = np.stack([v, al, be, rates[..., 0], rates[..., 1], rates[..., 2], ph, th], axis=-1)
    return x, vals[..., 3:7].copy()


def full_start(box, v, psidot) -> np.ndarray:
    """Coordinated-turn start values for 7-column unknowns, rudder centred."""
    v = np.asarray(v, dtype=float)
    phi = np.clip(np.arctan(v * KT * np.asarray(psidot, float) * DEG / G0) / DEG, -25.0, 25.0)
    n = v.size
    out = np.empty((n, 7))
    out[:, 0], out[:, 1], out[:, 2] = 3.0, 0.0, np.broadcast_to(phi, v.shape).ravel()
    out[:, 3], out[:, 4], out[:, 5] = 0.5, -3.0, 0.0
    out[:, 6] = np.broadcast_to(box, (n, 7, 2))[:, 6].mean(axis=-1)
    return out


def _damped_steps(hmat, g) -> np.ndarray:
    """Batched ``-H^-1 g``; singular or non-finite systems give NaN steps."""
    d = np.full(g.shape, np.nan)
    good = np.all(np.isfinite(hmat), axis=(1, 2)) & np.all(np.isfinite(g), axis=1)
    try:
        d[good] = -np.linalg.solve(hmat[good], g[good][..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in np.flatnonzero(good):
            try:
                d[i] = -np.linalg.solve(hmat[i], g[i])
            except np.linalg.LinAlgError:
                pass
    return d


@dataclass
class BatchResult:
    vals: np.ndarray
    cost: np.ndarray
    max_derivative: np.ndarray

    @property
    def feasible(self) -> np.ndarray:
        return (self.cost <= ACCEPT_COST) & (self.max_derivative <= ACCEPT_DERIVATIVE)


def batch_solve(
    model: DynamicsModel,
    h,
    gamma,
    v,
    psidot,
    box,
    vals0,
    weights=(1.0,) * 8,
    max_iter: int = 40,
    xi0: float = 1e-2,
    stall_iters: int = 6,
) -> BatchResult:
    """Levenberg-Marquardt on many trim problems at once.

    Every argument except ``model`` and ``weights`` may vary per node;
    ``box`` is ``(7, 2)`` or ``(n, 7, 2)``. Each node keeps its own damping
    parameter: a rejected step multiplies it by ten and keeps the Jacobian,
    an accepted step divides it by ten. A node leaves the active set once
    its residual vanishes, its damping exceeds 1e16, or ``stall_iters``
    consecutive iterations fail to reduce ``F`` by 0.1%.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    per_node = lambda a: np.broadcast_to(np.asarray(a, dtype=float), (n,)).copy()
    h, gamma, psidot = per_node(h), per_node(gamma), per_node(psidot)
    box = np.broadcast_to(np.asarray(box, dtype=float), (n, 7, 2)).copy()
    lo, hi = box[..., 0], box[..., 1]
    margin = 1e-3 * (hi - lo)
    s = _box_unknowns(np.clip(np.asarray(vals0, float).reshape(n, 7), lo + margin, hi - margin), box)
    sw = np.sqrt(np.asarray(weights, float))
    k = 7

    def res(ss, idx):
        x, u = assemble_full(_box_values(ss, box[idx]), v[idx], gamma[idx], psidot[idx])
        return sw * model.derivatives(x, u, h[idx])

    e = res(s, np.arange(n))
    f = np.sum(e**2, axis=1)
    xi = np.full(n, xi0)
    stall = np.zeros(n, dtype=int)
    active = np.isfinite(f)
    need_jac = np.ones(n, dtype=bool)
    jac_store = np.zeros((n, e.shape[1], k))
    eye = np.eye(k)
    for _ in range(max_iter):
        active &= (f > 1e-26) & (xi < 1e16) & (stall < stall_iters)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        jidx = idx[need_jac[idx]]
        if jidx.size:
            hstep = 1e-6 * np.maximum(1.0, np.abs(s[jidx]))
            for c in range(k):
                sp, sm = s[jidx].copy(), s[jidx].copy()
                sp[:, c] += hstep[:, c]
                sm[:, c] -= hstep[:, c]
                jac_store[jidx, :, c] = (res(sp, jidx) - res(sm, jidx)) / (2 * hstep[:, c : c + 1])
            need_jac[jidx] = False
        jac = jac_store[idx]
        g = np.einsum("nrk,nr->nk", jac, e[idx])
        hmat = np.einsum("nrk,nrl->nkl", jac, jac) + xi[idx, None, None] * eye
        d = _damped_steps(hmat, g)
        trial = s[idx] + d
        e_new = res(trial, idx)
        f_new = np.sum(e_new**2, axis=1)
        ok = np.isfinite(f_new) & (f_new < f[idx])
        acc, rej = idx[ok], idx[~ok]
        slow = f_new[ok] > 0.999 * f[acc]
        stall[acc] = np.where(slow, stall[acc] + 1, 0)
        stall[rej] += 1
        s[acc], e[acc], f[acc] = trial[ok], e_new[ok], f_new[ok]
        xi[acc] = np.maximum(xi[acc] / 10.0, 1e-12)
        need_jac[acc] = True
        xi[rej] *= 10.0

    vals = _box_values(s, box)
    x, u = assemble_full(vals, v, gamma, psidot)
    xdot = model.derivatives(x, u, h)
    cost = 0.5 * np.sum(np.asarray(weights) * xdot**2, axis=1)
    maxd = np.max(np.abs(xdot), axis=1)
    cost = np.where(np.isfinite(cost), cost, np.inf)
    maxd = np.where(np.isfinite(maxd), maxd, np.inf)
    return BatchResult(vals, cost, maxd)


def batch_linearize(model: DynamicsModel, x, u, h):
    """Central-difference ``A`` and ``B`` for a batch of operating points."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = x.shape[0]
    a = np.empty((n, 8, 8))
    b = np.empty((n, 8, 4))
    for c in range(8):
        hs = 1e-6 * np.maximum(1.0, np.abs(x[:, c]))
        xp, xm = x.copy(), x.copy()
        xp[:, c] += hs
        xm[:, c] -= hs
        a[:, :, c] = (model.derivatives(xp, u, h) - model.derivatives(xm, u, h)) / (2 * hs[:, None])
    for c in range(4):
        hs = 1e-6 * np.maximum(1.0, np.abs(u[:, c]))
        up, um = u.copy(), u.copy()
        up[:, c] += hs
        um[:, c] -= hs
        b[:, :, c] = (model.derivatives(x, up, h) - model.derivatives(x, um, h)) / (2 * hs[:, None])
    return a, b


def batch_classify(model: DynamicsModel, x, u, h, rudder_free) -> np.ndarray:
    """Classification labels for many feasible points.

    ``rudder_free`` (scalar or per point) drops the rudder column of ``B``
    for jammed cases. Stability uses LAPACK eigenvalues over the whole
    batch; the controllability rank test runs only on unstable points.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    labels = np.full(n, REJECTED, dtype=object)
    if n == 0:
        return labels
    a, b = batch_linearize(model, x, u, np.broadcast_to(np.asarray(h, float), (n,)))
    b[~np.broadcast_to(np.asarray(rudder_free, bool), (n,)), :, 3] = 0.0
    eig = np.linalg.eigvals(a)
    stable = np.all(eig.real < STABILITY_MARGIN, axis=1)
    labels[stable] = STABLE
    for i in np.flatnonzero(~stable):
        if controllable(a[i], b[i]):
            labels[i] = UNSTABLE_CONTROLLABLE
    return labels
