"""Monte-Carlo driver: many paths, expectation estimators, refinement studies.

Paths are embarrassingly parallel: each one regenerates its own noise from
(base_seed, path_index), so results are independent of worker count and
completion order.  Aggregation always reduces in path-index order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import summarize_trajectory
from .errors import FixedPointFailure, ParameterError, SolverFailure
from .noise import PathSeed, sample_increments
from .stepper import run_path

FAILURE_QUOTA = 0.10

DEFAULT_FUNCTIONALS = (
    "max_c_sq", "max_u_sq", "max_n_sq", "sum_dc_sq", "sum_du_sq",
    "sum_dn_sq", "sum_grad_c_sq", "sum_grad_u_sq", "sum_grad_n_sq",
    "mass_drift_max", "ledger_max", "fp_iters_max", "gap_u", "gap_c",
    "gap_n", "err_u_int", "err_c_int", "err_n_int",
)


class EnsembleFailure(RuntimeError):
    """Too many member paths failed."""


@dataclass(frozen=True)
class EnsembleSpec:
    path_count: int
    base_seed: int
    params: object
    n_list: tuple = ()
    functionals: tuple = DEFAULT_FUNCTIONALS

    def __post_init__(self):
        if self.path_count < 1:
            raise ParameterError("need at least one path")
        ns = tuple(int(n) for n in self.n_list)
        object.__setattr__(self, "n_list", ns)
        if ns:
            if list(ns) != sorted(set(ns)):
                raise ParameterError("refinement list must be strictly "
                                     "increasing")
            if any(ns[-1] % n for n in ns):
                raise ParameterError("every refinement level must divide "
                                     "the largest")


@dataclass
class EnsembleResult:
    spec: EnsembleSpec
    summaries: list
    aggregates: dict

    @property
    def n_failed(self):
        return sum(1 for s in self.summaries if s.failed)


def _run_one(spec, init, idx, fine_steps):
    seed = PathSeed(spec.base_seed, idx)
    params = spec.params
    try:
        inc = sample_increments(seed, params.n_steps, params.dt,
                                init.c.grid.dim, fine_steps=fine_steps)
        traj = run_path(seed, init, params, increments=inc)
        return summarize_trajectory(traj, path_index=idx)
    except (FixedPointFailure, SolverFailure) as exc:
        from .diagnostics import PathSummary
        return PathSummary(path_index=idx, failed=True, failure=str(exc))


_WORKER_CTX = {}


def _worker_init(spec, init, fine_steps):
    _WORKER_CTX["args"] = (spec, init, fine_steps)


def _worker_run(idx):
    spec, init, fine_steps = _WORKER_CTX["args"]
    return _run_one(spec, init, idx, fine_steps)


def aggregate(summaries, keys):
    """(mean, se, count) per functional over the successful paths."""
    ok = [s for s in summaries if not s.failed]
    out = {}
    for key in keys:
        vals = np.array([float(s.data[key]) for s in ok
                         if key in s.data and s.data[key] is not None])
        if vals.size == 0:
            continue
        mean = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / np.sqrt(vals.size)) \
            if vals.size > 1 else 0.0
        out[key] = {"mean": mean, "se": se, "count": int(vals.size)}
    return out


def run_ensemble(spec, init, *, workers=0, fine_steps=None):
    """Run all paths and aggregate; raises EnsembleFailure past the quota."""
    indices = list(range(spec.path_count))
    if workers and workers > 1:
        with ProcessPoolExecutor(
                max_workers=workers, initializer=_worker_init,
                initargs=(spec, init, fine_steps)) as pool:
            summaries = list(pool.map(_worker_run, indices, chunksize=4))
    else:
        summaries = [_run_one(spec, init, i, fine_steps) for i in indices]
    summaries.sort(key=lambda s: s.path_index)
    n_failed = sum(1 for s in summaries if s.failed)
    if n_failed > FAILURE_QUOTA * spec.path_count:
        raise EnsembleFailure(
            f"{n_failed}/{spec.path_count} paths failed")
    return EnsembleResult(spec, summaries,
                          aggregate(summaries, spec.functionals))


# ---------------------------------------------------------------------------
# refinement studies on coupled Brownian paths
# ---------------------------------------------------------------------------

STUDY_QUANTITIES = ("gap_u", "gap_c", "gap_n",
                    "err_u_int", "err_c_int", "err_n_int")


@dataclass
class StudyRow:
    n_steps: int
    dt: float
    means: dict
    ses: dict


@dataclass
class StudyResult:
    rows: list
    slopes: dict
    monotone: dict

    def to_csv(self):
        cols = ["n_steps", "dt"] + [q for q in STUDY_QUANTITIES] \
            + [q + "_se" for q in STUDY_QUANTITIES]
        lines = [",".join(cols)]
        for r in self.rows:
            vals = [str(r.n_steps), repr(r.dt)]
            vals += [repr(r.means.get(q, float("nan")))
                     for q in STUDY_QUANTITIES]
            vals += [repr(r.ses.get(q, float("nan")))
                     for q in STUDY_QUANTITIES]
            lines.append(",".join(vals))
        lines.append("# slopes: " + ",".join(
            f"{q}={self.slopes.get(q, float('nan')):.4f}"
            for q in STUDY_QUANTITIES))
        return "\n".join(lines) + "\n"

    def to_long_csv(self):
        lines = ["n_steps,dt,quantity,mean,se,slope,monotone"]
        for r in self.rows:
            for q in STUDY_QUANTITIES:
                if q in r.means:
                    lines.append(
                        f"{r.n_steps},{r.dt!r},{q},{r.means[q]!r},"
                        f"{r.ses[q]!r},{self.slopes.get(q, float('nan'))!r},"
                        f"{int(self.monotone.get(q, True))}")
        return "\n".join(lines) + "\n"


def convergence_study(spec, init, *, workers=0):
    """Coupled-path refinement study over spec.n_list.

    All resolutions of one path share a single Brownian path (increments are
    drawn at the finest level and pairwise-summed down), so the decay of the
    gap and error-term quantities is visible without Monte-Carlo noise
    swamping it.
    """
    if not spec.n_list:
        raise ParameterError("spec.n_list must list the refinement levels")
    fine = spec.n_list[-1]
    rows = []
    for n in spec.n_list:
        params_n = replace(spec.params, n_steps=n)
        spec_n = EnsembleSpec(spec.path_count, spec.base_seed, params_n,
                              functionals=spec.functionals)
        result = run_ensemble(spec_n, init, workers=workers,
                              fine_steps=fine)
        agg = aggregate(result.summaries, STUDY_QUANTITIES)
        rows.append(StudyRow(
            n_steps=n, dt=params_n.dt,
            means={q: agg[q]["mean"] for q in agg},
            ses={q: agg[q]["se"] for q in agg}))
    slopes = {}
    monotone = {}
    for q in STUDY_QUANTITIES:
        pts = [(r.dt, r.means[q]) for r in rows if q in r.means
               and r.means[q] > 0]
        if len(pts) >= 2:
            slopes[q] = float(np.polyfit(np.log([p[0] for p in pts]),
                                         np.log([p[1] for p in pts]), 1)[0])
        vals = [r.means.get(q) for r in rows if q in r.means]
        # rows are ordered coarse -> fine; each level should not exceed the
        # previous one beyond a 5% Monte-Carlo allowance
        monotone[q] = all(later <= earlier * 1.05
                          for earlier, later in zip(vals, vals[1:]))
    return StudyResult(rows, slopes, monotone)
