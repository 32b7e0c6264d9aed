"""Rigid-body six-degree-of-freedom dynamics for trim analysis.

State ``x = [V, alpha, beta, p, q, r, phi, theta]`` in knots, degrees and
degrees per second; control ``u = [throttle, elevator, aileron, rudder]``
with throttle in [0, 1] and surfaces in degrees. Derivatives come back in
knots/s, deg/s and deg/s^2. Every function broadcasts over leading axes so
whole trim grids can be evaluated at once.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Protocol, runtime_checkable

import numpy as np

G0 = 9.80665
KT = 0.514444  # m/s per knot
FT = 0.3048
RHO0 = 1.225
T0 = 288.15
LAPSE = 0.0065
ISA_EXPONENT = G0 / (287.053 * LAPSE) - 1.0

DEG = math.pi / 180.0


def isa_density(h_ft) -> np.ndarray:
    """Troposphere density (kg/m^3) at geometric altitude in feet."""
    h = np.asarray(h_ft, dtype=float) * FT
    if np.any(h > 11000.0) or np.any(h < -500.0):
        raise ValueError("altitude outside the troposphere model")
    return RHO0 * (1.0 - LAPSE * h / T0) ** ISA_EXPONENT


@runtime_checkable
class DynamicsModel(Protocol):
    """Anything exposing ``derivatives(x, u, h_ft)`` and validity ranges."""

    v_range: tuple[float, float]
    alpha_range: tuple[float, float]
    beta_range: tuple[float, float]

    def derivatives(self, x, u, h_ft) -> np.ndarray: ...

    def fingerprint(self) -> str: ...


@dataclass(frozen=True)
class TransportParams:
    """Mass, geometry and linear stability/control derivatives (per radian)."""

    mass: float = 26.2
    wing_area: float = 0.5483
    span: float = 2.09
    chord: float = 0.2790
    ixx: float = 1.229
    iyy: float = 5.768
    izz: float = 6.58
    ixz: float = 0.1717
    max_thrust: float = 65.0
    thrust_lapse: float = 0.7

    cl0: float = 0.25
    cl_alpha: float = 5.5
    cl_q: float = 7.0
    cl_de: float = 0.4
    cd0: float = 0.03
    cd_k: float = 0.06
    cd_beta: float = 0.4
    cy_beta: float = -0.6
    cy_r: float = 0.2
    cy_dr: float = 0.12
    cm0: float = 0.05
    cm_alpha: float = -1.0
    cm_q: float = -30.0
    cm_de: float = -1.5
    cl_beta: float = -0.08
    cl_p: float = -0.5
    cl_r: float = 0.08
    cl_da: float = 0.1
    cl_dr: float = 0.01
    cn_beta: float = 0.1
    cn_p: float = -0.03
    cn_r: float = -0.15
    cn_da: float = 0.0
    cn_dr: float = -0.035


class GenericTransport:
    """Generic subscale-transport surrogate with linear aerodynamics.

    Thrust is ``throttle * max_thrust * (rho / rho0) ** thrust_lapse`` along
    the body x axis.
    """

    v_range = (20.0, 250.0)
    alpha_range = (-10.0, 20.0)
    beta_range = (-25.0, 25.0)

    def __init__(self, params: TransportParams | None = None):
        self.params = params or TransportParams()
        p = self.params
        self._gamma = p.ixx * p.izz - p.ixz**2

    def thrust(self, throttle, h_ft) -> np.ndarray:
        p = self.params
        return throttle * p.max_thrust * (isa_density(h_ft) / RHO0) ** p.thrust_lapse

    def derivatives(self, x, u, h_ft) -> np.ndarray:
        c = self.params
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = x[..., 0] * KT
        al, be = x[..., 1] * DEG, x[..., 2] * DEG
        p, q, r = x[..., 3] * DEG, x[..., 4] * DEG, x[..., 5] * DEG
        phi, th = x[..., 6] * DEG, x[..., 7] * DEG
        dth, de, da, dr = u[..., 0], u[..., 1] * DEG, u[..., 2] * DEG, u[..., 3] * DEG

        rho = isa_density(h_ft)
        qbar_s = 0.5 * rho * v**2 * c.wing_area
        ph, qh, rh = p * c.span / (2 * v), q * c.chord / (2 * v), r * c.span / (2 * v)

        cl = c.cl0 + c.cl_alpha * al + c.cl_q * qh + c.cl_de * de
        cd = c.cd0 + c.cd_k * cl**2 + c.cd_beta * be**2
        cy = c.cy_beta * be + c.cy_r * rh + c.cy_dr * dr
        roll = c.cl_beta * be + c.cl_p * ph + c.cl_r * rh + c.cl_da * da + c.cl_dr * dr
        pitch = c.cm0 + c.cm_alpha * al + c.cm_q * qh + c.cm_de * de
        yaw = c.cn_beta * be + c.cn_p * ph + c.cn_r * rh + c.cn_da * da + c.cn_dr * dr

        ca, sa = np.cos(al), np.sin(al)
        cb, sb = np.cos(be), np.sin(be)
        thrust = self.thrust(dth, h_ft)
        fx = qbar_s * (-cd * ca + cl * sa) + thrust
        fy = qbar_s * cy
        fz = qbar_s * (-cd * sa - cl * ca)

        sphi, cphi = np.sin(phi), np.cos(phi)
        sth, cth = np.sin(th), np.cos(th)
        uu, vv, ww = v * ca * cb, v * sb, v * sa * cb
        m = c.mass
        udot = r * vv - q * ww + fx / m - G0 * sth
        vdot = p * ww - r * uu + fy / m + G0 * cth * sphi
        wdot = q * uu - p * vv + fz / m + G0 * cth * cphi

        vdot_air = (uu * udot + vv * vdot + ww * wdot) / v
        alpha_dot = (uu * wdot - ww * udot) / (uu**2 + ww**2)
        beta_dot = (v * vdot - vv * vdot_air) / (v**2 * cb)

        lmom = qbar_s * c.span * roll
        mmom = qbar_s * c.chord * pitch
        nmom = qbar_s * c.span * yaw
        g = self._gamma
        pdot = (
            c.izz * lmom + c.ixz * nmom
            + c.ixz * (c.ixx - c.iyy + c.izz) * p * q
            - (c.izz * (c.izz - c.iyy) + c.ixz**2) * q * r
        ) / g
        qdot = (mmom + (c.izz - c.ixx) * p * r - c.ixz * (p**2 - r**2)) / c.iyy
        rdot = (
            c.ixz * lmom + c.ixx * nmom
            + (c.ixx * (c.ixx - c.iyy) + c.ixz**2) * p * q
            - c.ixz * (c.ixx - c.iyy + c.izz) * q * r
        ) / g
        phi_dot = p + np.tan(th) * (q * sphi + r * cphi)
        theta_dot = q * cphi - r * sphi

        return np.stack(
            [
                vdot_air / KT,
                alpha_dot / DEG,
                beta_dot / DEG,
                pdot / DEG,
                qdot / DEG,
                rdot / DEG,
                phi_dot / DEG,
                theta_dot / DEG,
            ],
            axis=-1,
        )

    def fingerprint(self) -> str:
        blob = json.dumps({"model": type(self).__name__, **asdict(self.params)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def weak_thrust_variant(factor: float = 0.6) -> GenericTransport:
    """The default surrogate with its maximum thrust scaled by ``factor``."""
    base = TransportParams()
    return GenericTransport(replace(base, max_thrust=base.max_thrust * factor))
