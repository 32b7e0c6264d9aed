"""Grid sweeps over the (airspeed, turn-rate) plane and database assembly."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..records import InputVector, MfeRecord, ingest_csv, write_csv  # noqa: F401  (re-exported)
from .dynamics import DynamicsModel
from .trim import (
    CONTROL_NAMES,
    REJECTED,
    STATE_NAMES,
    FailureCase,
    assemble_full,
    batch_classify,
    batch_solve,
    full_start,
    unknown_box,
)

ALTITUDES_FT = (0.0, 10000.0, 20000.0, 30000.0)
GAMMAS_DEG = tuple(float(g) for g in range(-5, 6))
LIMIT_STEPS = tuple(float(v) for v in range(-30, 31, 10))

NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError("grid steps must be positive")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(n), 10)


@dataclass(frozen=True)
class GridSpec:
    """Airspeed (knots) and turn-rate (deg/s) ranges with their increments."""

    v_min: float = 40.0
    v_max: float = 170.0
    v_step: float = 1.0
    psidot_min: float = -6.0
    psidot_max: float = 6.0
    psidot_step: float = 0.2

    def __post_init__(self):
        if self.v_step <= 0 or self.psidot_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.v_min <= 0 or self.v_max < self.v_min or self.psidot_max < self.psidot_min:
            raise ValueError("invalid grid ranges")

    @property
    def v_values(self) -> np.ndarray:
        return _axis(self.v_min, self.v_max, self.v_step)

    @property
    def psidot_values(self) -> np.ndarray:
        return _axis(self.psidot_min, self.psidot_max, self.psidot_step)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v_values.size, self.psidot_values.size


@dataclass
class Mfe2d:
    """Accepted trim points of one constant-altitude, constant-gamma envelope."""

    h: float
    gamma: float
    failure: FailureCase
    grid: GridSpec
    v: np.ndarray
    psidot: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    labels: np.ndarray
    n_feasible: int = 0

    @property
    def n_trim(self) -> int:
        return int(self.v.size)

    @property
    def empty(self) -> bool:
        return self.n_trim == 0

    @property
    def centroid(self) -> tuple[float, float]:
        if self.empty:
            return math.nan, math.nan
        return float(np.mean(self.v)), float(np.mean(self.psidot))

    def to_record(self) -> MfeRecord:
        cv, cp = self.centroid
        inp = InputVector(self.h, self.gamma, self.failure.ll, self.failure.ul)
        return MfeRecord(inp, self.n_trim, cv, cp)

    def write_detail(self, path) -> None:
        """One row per accepted grid node with its trim state and controls."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["V_kt", "psidot_dps", *STATE_NAMES, *CONTROL_NAMES, "classification"])
            for i in range(self.n_trim):
                w.writerow(
                    [repr(float(self.v[i])), repr(float(self.psidot[i]))]
                    + [repr(float(a)) for a in self.states[i]]
                    + [repr(float(a)) for a in self.controls[i]]
                    + [self.labels[i]]
                )


@dataclass
class _Solved:
    """Per-node feasible solutions of one failure case on the full grid."""

    ok: np.ndarray  # (nv, np) bool, feasible and accepted
    x: np.ndarray  # (nv, np, 8)
    u: np.ndarray  # (nv, np, 4)
    labels: np.ndarray  # (nv, np) object
    n_feasible: int


@dataclass(frozen=True)
class Job:
    h: float
    gamma: float
    failure: FailureCase


MAX_BATCH_NODES = 40000


def _shift(mask: np.ndarray, di: int, dj: int) -> np.ndarray:
    """``out[..., i, j] = mask[..., i + di, j + dj]`` (False outside the grid)."""
    out = np.zeros_like(mask)
    nv, npd = mask.shape[-2:]
    out[..., max(0, -di) : nv - max(0, di), max(0, -dj) : npd - max(0, dj)] = mask[
        ..., max(0, di) : nv + min(0, di) or None, max(0, dj) : npd + min(0, dj) or None
    ]
    return out


def _solve_jobs(model, jobs: Sequence[Job], grid: GridSpec, max_passes: int) -> list:
    """Free sweeps of several envelopes solved as one batch."""
    nj = len(jobs)
    vg, pg = np.meshgrid(grid.v_values, grid.psidot_values, indexing="ij")
    nv, npd = vg.shape
    shape = (nj, nv, npd)
    vv, pp = np.broadcast_to(vg, shape), np.broadcast_to(pg, shape)
    hh = np.broadcast_to(np.array([j.h for j in jobs], float)[:, None, None], shape)
    gg = np.broadcast_to(np.array([j.gamma for j in jobs], float)[:, None, None], shape)
    boxes = np.stack([unknown_box(j.failure) for j in jobs])
    bb = np.broadcast_to(boxes[:, None, None], shape + (7, 2))

    res = batch_solve(model, hh.ravel(), gg.ravel(), vv.ravel(), pp.ravel(), bb.reshape(-1, 7, 2),
                      full_start(bb.reshape(-1, 7, 2), vv.ravel(), pp.ravel()))
    vals = res.vals.reshape(shape + (7,))
    feasible = res.feasible.reshape(shape)

    # continuation: a failed node restarts once from each feasible neighbour
    tried = np.zeros((len(NEIGHBOURS),) + shape, dtype=bool)
    for _ in range(max_passes):
        pending = ~feasible
        picks = []
        for d, (di, dj) in enumerate(NEIGHBOURS):
            take = pending & _shift(feasible, di, dj) & ~tried[d]
            tried[d] |= take
            pending &= ~take
            q, i, j = np.nonzero(take)
            picks.append((q, i, j, i + di, j + dj))
        q, ci, cj, si, sj = (np.concatenate(c) for c in zip(*picks))
        if q.size == 0:
            break
        res = batch_solve(model, hh[q, ci, cj], gg[q, ci, cj], vv[q, ci, cj], pp[q, ci, cj],
                          bb[q, ci, cj], vals[q, si, sj])
        good = res.feasible
        vals[q[good], ci[good], cj[good]] = res.vals[good]
        feasible[q[good], ci[good], cj[good]] = True

    x = np.zeros(shape + (8,))
    u = np.zeros(shape + (4,))
    labels = np.full(shape, REJECTED, dtype=object)
    q, i, j = np.nonzero(feasible)
    if q.size:
        xs, us = assemble_full(vals[q, i, j], vv[q, i, j], gg[q, i, j], pp[q, i, j])
        free = np.array([jb.failure.kind != "jam" for jb in jobs])[q]
        x[q, i, j], u[q, i, j] = xs, us
        labels[q, i, j] = batch_classify(model, xs, us, hh[q, i, j], free)
    ok = feasible & (labels != REJECTED)
    return [_Solved(ok[n], x[n], u[n], labels[n], int(feasible[n].sum())) for n in range(nj)]


def _solve_chunked(model, jobs: Sequence[Job], grid: GridSpec, max_passes: int = 200, progress=None) -> list:
    per = max(1, MAX_BATCH_NODES // (grid.shape[0] * grid.shape[1]))
    out = []
    for start in range(0, len(jobs), per):
        out.extend(_solve_jobs(model, jobs[start : start + per], grid, max_passes))
        if progress is not None:
            progress(min(start + per, len(jobs)), len(jobs))
    return out


def _merge(own: _Solved, others: Sequence[_Solved], h, failure, model) -> _Solved:
    """Fill nodes missed by ``own`` with solutions found for contained boxes,
    reclassified with this case's free controls."""
    ok, x, u, labels = own.ok.copy(), own.x.copy(), own.u.copy(), own.labels.copy()
    for other in others:
        ai, aj = np.nonzero((other.x[..., 0] > 0) & ~ok)
        if ai.size == 0:
            continue
        lab = batch_classify(model, other.x[ai, aj], other.u[ai, aj], h, failure.kind != "jam")
        keep = lab != REJECTED
        ai, aj = ai[keep], aj[keep]
        x[ai, aj], u[ai, aj], labels[ai, aj] = other.x[ai, aj], other.u[ai, aj], lab[keep]
        ok[ai, aj] = True
    return _Solved(ok, x, u, labels, max(own.n_feasible, int(ok.sum())))


def _complete(solved: dict, model) -> dict:
    """Merge, within each (altitude, gamma), every case with the cases it contains."""
    out = {}
    order = sorted(solved, key=lambda jb: (jb.h, jb.gamma, jb.failure.ul - jb.failure.ll, jb.failure.ll))
    for jb in order:
        inner = [out[o] for o in out if o.h == jb.h and o.gamma == jb.gamma
                 and o.failure != jb.failure and jb.failure.contains(o.failure)]
        out[jb] = _merge(solved[jb], inner, jb.h, jb.failure, model) if inner else solved[jb]
    return out


def _to_mfe(solved: _Solved, h, gamma, failure, grid: GridSpec) -> Mfe2d:
    vv, pp = np.meshgrid(grid.v_values, grid.psidot_values, indexing="ij")
    i, j = np.nonzero(solved.ok)
    return Mfe2d(h, gamma, failure, grid, vv[i, j], pp[i, j], solved.x[i, j], solved.u[i, j],
                 solved.labels[i, j], solved.n_feasible)


def sweep_mfe2d(
    h: float,
    gamma: float,
    failure: FailureCase,
    model: DynamicsModel,
    grid: GridSpec = GridSpec(),
    max_passes: int = 200,
) -> Mfe2d:
    """Solve every grid node of one 2D envelope.

    All nodes start from a coordinated-turn guess; nodes that fail are then
    retried from the solutions of feasible neighbours until no new node
    is gained.
    """
    solved = _solve_jobs(model, [Job(float(h), float(gamma), failure)], grid, max_passes)[0]
    return _to_mfe(solved, h, gamma, failure, grid)


def sweep_group(
    h: float,
    gamma: float,
    failures: Iterable[FailureCase],
    model: DynamicsModel,
    grid: GridSpec = GridSpec(),
    max_passes: int = 200,
) -> dict:
    """Sweep several failure cases at one (altitude, gamma).

    A trim point found with the rudder confined to a narrower interval is
    also a trim point for every wider interval, so each case's envelope is
    completed with the solutions of the cases it contains.
    """
    jobs = [Job(float(h), float(gamma), f) for f in dict.fromkeys(failures)]
    done = _complete(dict(zip(jobs, _solve_chunked(model, jobs, grid, max_passes))), model)
    return {jb.failure: _to_mfe(done[jb], h, gamma, jb.failure, grid) for jb in jobs}


def enumerate_failure_cases() -> list[FailureCase]:
    """The 7 jams, the 20 proper restrictions and the unimpaired case."""
    jams = [FailureCase(v, v) for v in LIMIT_STEPS]
    intervals = [FailureCase(a, b) for a, b in itertools.combinations(LIMIT_STEPS, 2)]
    restrictions = [f for f in intervals if f.kind == "restriction"]
    return jams + restrictions + [FailureCase()]


def enumerate_jobs(
    altitudes: Sequence[float] = ALTITUDES_FT,
    gammas: Sequence[float] = GAMMAS_DEG,
    failures: Optional[Sequence[FailureCase]] = None,
) -> list[Job]:
    failures = enumerate_failure_cases() if failures is None else list(failures)
    return [Job(float(h), float(g), f) for h in altitudes for g in gammas for f in failures]


@dataclass
class Database:
    records: list
    metadata: dict = field(default_factory=dict)
    envelopes: dict = field(default_factory=dict)

    def write(self, csv_path, metadata_path=None) -> None:
        write_csv(self.records, csv_path)
        if metadata_path is not None:
            with open(metadata_path, "w") as fh:
                json.dump(self.metadata, fh, indent=1)


def build_database(
    model: DynamicsModel,
    jobs: Optional[Sequence[Job]] = None,
    grid: GridSpec = GridSpec(),
    detail_dir=None,
    progress=None,
    keep_envelopes: bool = False,
) -> Database:
    """Run every job and keep one record per non-empty envelope.

    Jobs sharing an (altitude, gamma) pair are swept together so that
    contained failure boxes can seed wider ones. Empty envelopes are
    counted in the metadata only. ``keep_envelopes`` retains every
    :class:`Mfe2d`, empty ones included, keyed by :class:`Job`.
    """
    jobs = enumerate_jobs() if jobs is None else list(jobs)
    t0 = time.perf_counter()
    unique = list(dict.fromkeys(jobs))
    done = _complete(dict(zip(unique, _solve_chunked(model, unique, grid, progress=progress))), model)
    results = {jb: _to_mfe(done[jb], jb.h, jb.gamma, jb.failure, grid) for jb in unique}
    records, empty = [], 0
    if detail_dir is not None:
        Path(detail_dir).mkdir(parents=True, exist_ok=True)
    for job in jobs:
        mfe = results[job]
        if mfe.empty:
            empty += 1
            continue
        records.append(mfe.to_record())
        if detail_dir is not None:
            name = f"mfe_h{job.h:g}_g{job.gamma:g}_ll{job.failure.ll:g}_ul{job.failure.ul:g}.csv"
            mfe.write_detail(Path(detail_dir) / name)
    meta = {
        "n_jobs": len(jobs),
        "n_records": len(records),
        "n_empty": empty,
        "grid": asdict(grid),
        "altitudes_ft": sorted({j.h for j in jobs}),
        "gammas_deg": sorted({j.gamma for j in jobs}),
        "model": type(model).__name__,
        "model_fingerprint": model.fingerprint(),
        "runtime_s": time.perf_counter() - t0,
    }
    return Database(records, meta, results if keep_envelopes else {})
