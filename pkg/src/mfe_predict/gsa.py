"""Variance-based global sensitivity analysis.

First-order indices use the Saltelli (2010) estimator, total-order indices
the Jansen estimator, and second-order indices the closed second-order
estimate on the extended plan minus both first-order parts. All three work
on a radial plan built from two independent Latin-hypercube matrices.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .exceptions import CorrelatedFactors, DegenerateVariance

# Factor pairs that cannot vary independently: the rudder limits obey ll <= ul.
DEPENDENT_PAIRS = (("ll", "ul"),)


@dataclass(frozen=True)
class Factor:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"factor {self.name}: lower must be below upper")


@dataclass(frozen=True)
class FactorSpace:
    """Independent, uniformly distributed factors."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("factor names must be unique")

    @classmethod
    def from_bounds(cls, bounds: dict) -> "FactorSpace":
        return cls(tuple(Factor(n, float(lo), float(hi)) for n, (lo, hi) in bounds.items()))

    @property
    def names(self) -> list:
        return [f.name for f in self.factors]

    @property
    def size(self) -> int:
        return len(self.factors)

    @property
    def lower(self) -> np.ndarray:
        return np.array([f.lower for f in self.factors])

    @property
    def upper(self) -> np.ndarray:
        return np.array([f.upper for f in self.factors])

    def scale(self, unit) -> np.ndarray:
        return self.lower + np.asarray(unit) * (self.upper - self.lower)

    def dependent_pairs(self) -> list:
        names = {n.lower() for n in self.names}
        return [p for p in DEPENDENT_PAIRS if set(p) <= names]


def lhs_sample(space: FactorSpace, n: int, seed=0) -> np.ndarray:
    """Latin-hypercube sample: each column has one point in each of ``n``
    equal strata, uniformly placed within its stratum."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    unit = qmc.LatinHypercube(d=space.size, scramble=True, seed=np.random.default_rng(seed)).random(n)
    return space.scale(unit)


@dataclass
class SamplePlan:
    space: FactorSpace
    matrix_a: np.ndarray
    matrix_b: np.ndarray
    second_order: bool = False
    seed: int = 0

    @property
    def n(self) -> int:
        return self.matrix_a.shape[0]

    @property
    def n_blocks(self) -> int:
        h = self.space.size
        return 2 + (2 * h if self.second_order else h)

    @property
    def n_evaluations(self) -> int:
        return self.n_blocks * self.n

    def ab(self, j: int) -> np.ndarray:
        """``A`` with column ``j`` taken from ``B``."""
        m = self.matrix_a.copy()
        m[:, j] = self.matrix_b[:, j]
        return m

    def ba(self, j: int) -> np.ndarray:
        """``B`` with column ``j`` taken from ``A``."""
        m = self.matrix_b.copy()
        m[:, j] = self.matrix_a[:, j]
        return m

    def stacked(self) -> np.ndarray:
        """All evaluation points: ``A, B, AB_1..AB_H`` then ``BA_1..BA_H`` if planned."""
        h = self.space.size
        blocks = [self.matrix_a, self.matrix_b] + [self.ab(j) for j in range(h)]
        if self.second_order:
            blocks += [self.ba(j) for j in range(h)]
        return np.vstack(blocks)

    def split(self, y) -> dict:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.n_evaluations:
            raise ValueError(f"expected {self.n_evaluations} evaluations, got {y.size}")
        blocks = y.reshape(self.n_blocks, self.n)
        h = self.space.size
        out = {"A": blocks[0], "B": blocks[1], "AB": blocks[2 : 2 + h]}
        out["BA"] = blocks[2 + h :] if self.second_order else None
        return out


def evaluation_count(n_factors: int, n: int, second_order: bool = False) -> int:
    return (2 + (2 if second_order else 1) * n_factors) * n


def plan_samples(space: FactorSpace, n: int, seed=0, want_second_order: bool = False) -> SamplePlan:
    """Radial plan from two independent Latin-hypercube draws."""
    pairs = space.dependent_pairs()
    if pairs:
        a, b = pairs[0]
        raise CorrelatedFactors(
            f"factors {a!r} and {b!r} are constrained ({a} <= {b}) and cannot be sampled "
            "independently; fix one of them or use a single 'jam' factor with ll = ul"
        )
    ss = np.random.SeedSequence(seed).spawn(2)
    return SamplePlan(space, lhs_sample(space, n, ss[0]), lhs_sample(space, n, ss[1]), want_second_order, seed)


@dataclass
class SobolResult:
    names: list
    s_first: np.ndarray
    s_total: np.ndarray
    s_second: Optional[np.ndarray]
    variance: float
    n_used: int
    ci_first: Optional[np.ndarray] = None
    ci_total: Optional[np.ndarray] = None
    ci_second: Optional[np.ndarray] = None
    level: float = 0.95
    seed: int = 0
    estimators: dict = field(
        default_factory=lambda: {"first": "saltelli2010", "total": "jansen", "second": "saltelli2002-closed"}
    )

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.where(np.isfinite(a), a, np.nan).tolist()

        return {
            "factors": self.names,
            "N": self.n_used,
            "estimators": self.estimators,
            "variance": self.variance,
            "indices": {"first": arr(self.s_first), "total": arr(self.s_total), "second": arr(self.s_second)},
            "ci": {"level": self.level, "first": arr(self.ci_first), "total": arr(self.ci_total),
                   "second": arr(self.ci_second)},
            "seed": self.seed,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    def clamped(self) -> "SobolResult":
        """Copy with indices clipped to [0, 1] for display."""
        clip = lambda a: None if a is None else np.clip(a, 0.0, 1.0)
        return SobolResult(self.names, clip(self.s_first), clip(self.s_total), clip(self.s_second),
                           self.variance, self.n_used, self.ci_first, self.ci_total, self.ci_second,
                           self.level, self.seed, self.estimators)


def _indices(ya, yb, yab, yba):
    """Point estimates from block outputs; works on a leading resample axis."""
    var = np.var(np.concatenate([ya, yb], axis=-1), axis=-1)
    first = np.mean(yb[..., None, :] * (yab - ya[..., None, :]), axis=-1) / var[..., None]
    total = 0.5 * np.mean((ya[..., None, :] - yab) ** 2, axis=-1) / var[..., None]
    second = None
    if yba is not None:
        h = yab.shape[-2]
        second = np.full(yab.shape[:-2] + (h, h), np.nan)
        for j in range(h):
            for k in range(j + 1, h):
                vjk = np.mean(yba[..., j, :] * yab[..., k, :] - ya * yb, axis=-1) / var
                second[..., j, k] = vjk - first[..., j] - first[..., k]
    return var, first, total, second


def estimate(plan: SamplePlan, y) -> SobolResult:
    """First-, total- and (when planned) second-order indices."""
    if plan.n < 100:
        raise ValueError("estimation needs N >= 100")
    blocks = plan.split(y)
    if not np.all(np.isfinite(y)):
        raise ValueError("model evaluations must be finite")
    both = np.concatenate([blocks["A"], blocks["B"]])
    if np.var(both) <= 1e-14 * np.mean(both) ** 2:
        raise DegenerateVariance("output variance is zero to working precision; indices undefined")
    var, first, total, second = _indices(blocks["A"], blocks["B"], blocks["AB"], blocks["BA"])
    return SobolResult(plan.space.names, first, total, second, float(var), plan.n, seed=plan.seed)


def bootstrap_ci(plan: SamplePlan, y, n_boot: int = 1000, level: float = 0.95, seed=0, chunk: int = 50):
    """Percentile intervals from resampling plan rows jointly across blocks.

    Returns ``(first, total, second)`` arrays with a trailing ``(lo, hi)``
    axis; ``second`` is ``None`` without a second-order plan.
    """
    if n_boot < 1:
        raise ValueError("need at least one resample")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    blocks = plan.split(y)
    rng = np.random.default_rng(seed)
    firsts, totals, seconds = [], [], []
    for start in range(0, n_boot, chunk):
        b = min(chunk, n_boot - start)
        idx = rng.integers(0, plan.n, size=(b, plan.n))
        ya, yb = blocks["A"][idx], blocks["B"][idx]
        yab = blocks["AB"][:, idx].transpose(1, 0, 2)
        yba = None if blocks["BA"] is None else blocks["BA"][:, idx].transpose(1, 0, 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            _, f, t, s = _indices(ya, yb, yab, yba)
        firsts.append(f), totals.append(t)
        if s is not None:
            seconds.append(s)
    q = [(1 - level) / 2 * 100, (1 + level) / 2 * 100]

    def pct(samples):
        a = np.concatenate(samples)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.moveaxis(np.nanpercentile(a, q, axis=0), 0, -1)

    return pct(firsts), pct(totals), (pct(seconds) if seconds else None)


def analyze(
    space: FactorSpace,
    model: Callable[[np.ndarray], np.ndarray],
    n: int,
    seed=0,
    second_order: bool = False,
    n_boot: int = 1000,
    level: float = 0.95,
    batch: int = 200000,
) -> SobolResult:
    """Plan, evaluate ``model`` on (rows, H) factor arrays, estimate, bootstrap."""
    plan = plan_samples(space, n, seed, second_order)
    pts = plan.stacked()
    y = np.concatenate([np.asarray(model(pts[i : i + batch]), dtype=float).ravel()
                        for i in range(0, len(pts), batch)])
    res = estimate(plan, y)
    if n_boot:
        res.ci_first, res.ci_total, res.ci_second = bootstrap_ci(plan, y, n_boot, level, seed)
        res.level = level
    return res


@dataclass
class ConvergenceResult:
    schedule: list
    results: list

    def ci_width_slope(self) -> Optional[np.ndarray]:
        """Per-factor log-log slope of first-order CI width against N."""
        if len(self.schedule) < 2:
            return None
        logn = np.log(self.schedule)
        widths = np.array([r.ci_first[:, 1] - r.ci_first[:, 0] for r in self.results])
        return np.array([np.polyfit(logn, np.log(widths[:, j]), 1)[0] for j in range(widths.shape[1])])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "factor", "S", "S_T", "ci_lo", "ci_hi", "ci_total_lo", "ci_total_hi"])
            for n, r in zip(self.schedule, self.results):
                for j, name in enumerate(r.names):
                    w.writerow([n, name, repr(float(r.s_first[j])), repr(float(r.s_total[j])),
                                repr(float(r.ci_first[j, 0])), repr(float(r.ci_first[j, 1])),
                                repr(float(r.ci_total[j, 0])), repr(float(r.ci_total[j, 1]))])


def convergence_sweep(
    space: FactorSpace,
    model: Callable,
    schedule: Sequence[int],
    seed=0,
    n_boot: int = 500,
    level: float = 0.95,
) -> ConvergenceResult:
    schedule = [int(n) for n in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("N schedule must be strictly increasing")
    results = [analyze(space, model, n, seed, n_boot=n_boot, level=level) for n in schedule]
    return ConvergenceResult(schedule, results)


# Closed-form oracles -----------------------------------------------------


def ishigami(x, a: float = 7.0, b: float = 0.1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sin(x[:, 0]) + a * np.sin(x[:, 1]) ** 2 + b * x[:, 2] ** 4 * np.sin(x[:, 0])


def ishigami_indices(a: float = 7.0, b: float = 0.1) -> dict:
    """Analytic first- and total-order indices on ``[-pi, pi]^3``."""
    pi = math.pi
    v1 = 0.5 * (1 + b * pi**4 / 5) ** 2
    v2 = a**2 / 8
    v13 = b**2 * pi**8 * (1 / 18 - 1 / 50)
    v = v1 + v2 + v13
    return {
        "first": np.array([v1, v2, 0.0]) / v,
        "total": np.array([v1 + v13, v2, v13]) / v,
        "variance": v,
    }
