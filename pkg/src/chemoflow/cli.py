"""Command-line front end: configuration, orchestration, output.

Configuration is flat INI (sections of key = value pairs); every key is
documented in ``chemoflow --help-config``.  Subcommands:

* ``run``        integrate one or more paths, write trajectory CSVs and a
                 JSON summary
* ``check``      run the structural suites and the estimate report; exit 1
                 on any hard failure
* ``converge``   coupled-path refinement study, CSV output
* ``dump-theta`` sample the truncation family to CSV
* ``dump-basis`` compute/cache the eigenbasis, dump its eigenvalues

Exit codes: 0 ok, 1 runtime/verification failure, 2 configuration error.
Every output file starts with a header carrying the config hash, the base
seed, and the code version; re-running with the same inputs reproduces the
bytes exactly.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .diagnostics import (cancellation_suite, check_estimates,
                          truncation_suite)
from .ensemble import (EnsembleFailure, EnsembleSpec, convergence_study,
                       run_ensemble)
from .errors import ParameterError
from .fields import Grid
from .noise import PathSeed, sample_increments
from .presets import scalar_preset
from .stepper import (PathState, SchemeParams, run_path,
                      write_trajectory_csv)
from .stokes import get_basis
from .truncation import theta, theta_prime

CONFIG_DOC = """\
[grid]      dim (2|3), cells (int or comma list), lengths (float or list)
[scheme]    viscosity, chem_diffusion, cell_diffusion, velocity_noise,
            chem_noise, level (truncation/basis size), n_steps, t_final
[solver]    fp_tol, fp_max_iters, relax, tol_linear, check_residuals
[initial]   u ("zero"), c, n, phi: preset strings, e.g.
            "gaussian-bump amplitude=1 center=0.5,0.6 width=0.15",
            "constant value=1", "checkerboard amplitude=1 blocks=4",
            "linear slope=0,-0.1", "zero"
[output]    directory, dump_every (full-field dumps every K steps, 0=off),
            trajectories (max number of per-path CSVs to write)
[ensemble]  paths, base_seed, workers
[converge]  n_list (comma list, each dividing the largest), paths
[debug]     break_skew (true disables the convection antisymmetrization;
            negative control for `check`)
"""

_DEFAULTS = {
    "grid": {"dim": "2", "cells": "32", "lengths": "1.0"},
    "scheme": {"viscosity": "0.05", "chem_diffusion": "0.05",
               "cell_diffusion": "0.05", "velocity_noise": "0.05",
               "chem_noise": "0.0070693", "level": "8", "n_steps": "64",
               "t_final": "0.5"},
    "solver": {"fp_tol": "1e-10", "fp_max_iters": "50", "relax": "1.0",
               "tol_linear": "1e-10", "check_residuals": "true"},
    "initial": {"u": "zero",
                "c": "gaussian-bump amplitude=1 center=0.5,0.6 width=0.15",
                "n": "gaussian-bump amplitude=1 center=0.5,0.4 width=0.15",
                "phi": "linear slope=0,-0.1"},
    "output": {"directory": "out", "dump_every": "0", "trajectories": "4"},
    "ensemble": {"paths": "1", "base_seed": "42", "workers": "0"},
    "converge": {"n_list": "16,32,64,128", "paths": "50"},
    "debug": {"break_skew": "false"},
}


def load_config(path=None, overrides=()):
    cp = configparser.ConfigParser()
    cp.read_dict(_DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise ParameterError(f"config file {path} not found")
        cp.read(path)
    for section, key, value in overrides:
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    return cp


def config_hash(cp):
    payload = json.dumps({s: dict(cp.items(s)) for s in cp.sections()},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _parse_tuple(text, dim, cast):
    parts = [p for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts = parts * dim
    if len(parts) != dim:
        raise ParameterError(f"expected {dim} values in {text!r}")
    return tuple(cast(p) for p in parts)


class Setup:
    """Everything a run needs: grid, basis, params, initial state."""

    def __init__(self, cp, cache_dir=None):
        dim = cp.getint("grid", "dim")
        cells = _parse_tuple(cp.get("grid", "cells"), dim, int)
        lengths = _parse_tuple(cp.get("grid", "lengths"), dim, float)
        self.grid = Grid(cells, lengths)
        self.config = cp
        self.cache_dir = cache_dir or os.path.join(
            cp.get("output", "directory"), "basis_cache")

        level = cp.getint("scheme", "level")
        phi_text = cp.get("initial", "phi")
        potential = None if phi_text.split()[0] in ("zero", "none") \
            else scalar_preset(self.grid, phi_text)
        self.params = SchemeParams(
            viscosity=cp.getfloat("scheme", "viscosity"),
            chem_diffusion=cp.getfloat("scheme", "chem_diffusion"),
            cell_diffusion=cp.getfloat("scheme", "cell_diffusion"),
            velocity_noise=cp.getfloat("scheme", "velocity_noise"),
            chem_noise=cp.getfloat("scheme", "chem_noise"),
            level=level,
            n_steps=cp.getint("scheme", "n_steps"),
            t_final=cp.getfloat("scheme", "t_final"),
            potential=potential,
            fp_tol=cp.getfloat("solver", "fp_tol"),
            fp_max_iters=cp.getint("solver", "fp_max_iters"),
            relax=cp.getfloat("solver", "relax"),
            tol_linear=cp.getfloat("solver", "tol_linear"),
            check_residuals=cp.getboolean("solver", "check_residuals"),
        )
        if cp.getboolean("debug", "break_skew"):
            os.environ["CHEMOFLOW_BREAK_SKEW"] = "1"
        self.basis = get_basis(self.grid, level, cache_dir=self.cache_dir)
        self.init = self._initial_state()

    def _initial_state(self):
        cp = self.config
        u_text = cp.get("initial", "u")
        if u_text.split()[0] not in ("zero",):
            raise ParameterError(
                f"unsupported velocity initial preset {u_text!r}; "
                "regularized data starts from rest")
        u0 = self.basis.zero()
        c0 = scalar_preset(self.grid, cp.get("initial", "c"))
        n0 = scalar_preset(self.grid, cp.get("initial", "n"))
        return PathState(0, u0, c0, n0)

    def header_lines(self):
        return [
            f"chemoflow {__version__}",
            f"config_hash {config_hash(self.config)}",
            f"base_seed {self.config.get('ensemble', 'base_seed')}",
        ]


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_run(args):
    cp = load_config(args.config, _cli_overrides(args))
    setup = Setup(cp)
    out_dir = cp.get("output", "directory")
    os.makedirs(out_dir, exist_ok=True)

    spec = EnsembleSpec(
        path_count=cp.getint("ensemble", "paths"),
        base_seed=cp.getint("ensemble", "base_seed"),
        params=setup.params)
    workers = cp.getint("ensemble", "workers")
    try:
        result = run_ensemble(spec, setup.init, workers=workers)
    except EnsembleFailure as exc:
        print(f"ensemble failed: {exc}", file=sys.stderr)
        return 1

    max_traj = cp.getint("output", "trajectories")
    for idx in range(min(spec.path_count, max_traj)):
        seed = PathSeed(spec.base_seed, idx)
        inc = sample_increments(seed, setup.params.n_steps,
                                setup.params.dt, setup.grid.dim)
        traj = run_path(seed, setup.init, setup.params, increments=inc)
        write_trajectory_csv(
            traj, os.path.join(out_dir, f"trajectory_p{idx}.csv"),
            header_lines=setup.header_lines())
        _maybe_dump_fields(traj, cp, out_dir, idx)

    hard_ok = _hard_invariants_ok(result, setup.params)
    _write_json(os.path.join(out_dir, "summary.json"), {
        "version": __version__,
        "config_hash": config_hash(cp),
        "base_seed": spec.base_seed,
        "paths": spec.path_count,
        "failed_paths": result.n_failed,
        "hard_invariants_ok": hard_ok,
        "aggregates": result.aggregates,
        "per_path": [
            {"path": s.path_index, "failed": s.failed,
             **({"failure": s.failure} if s.failed else
                {k: s.data[k] for k in ("max_c_sq", "ledger_max",
                                        "mass_drift_max", "fp_iters_max")})}
            for s in result.summaries],
    })
    if not args.quiet:
        print(f"{spec.path_count} path(s), {result.n_failed} failed, "
              f"hard invariants {'ok' if hard_ok else 'VIOLATED'}; "
              f"outputs in {out_dir}")
    return 0 if (result.n_failed == 0 and hard_ok) else 1


def _hard_invariants_ok(result, params):
    for s in result.summaries:
        if s.failed:
            continue
        if s.data["ledger_max"] > 1e-8:
            return False
        if s.data["mass_drift_max"] > params.n_steps * 1e-9:
            return False
    return True


def _maybe_dump_fields(traj, cp, out_dir, idx):
    every = cp.getint("output", "dump_every")
    if every <= 0:
        return
    from .fields import scalar_to_binary, velocity_to_binary
    for st in traj.states[::every]:
        tag = f"p{idx}_s{st.step:05d}"
        scalar_to_binary(st.c, os.path.join(out_dir, f"c_{tag}.bin"),
                         extra={"step": st.step})
        scalar_to_binary(st.n, os.path.join(out_dir, f"n_{tag}.bin"),
                         extra={"step": st.step})
        velocity_to_binary(st.u.reconstruct(),
                           os.path.join(out_dir, f"u_{tag}.bin"),
                           extra={"step": st.step})


def cmd_check(args):
    cp = load_config(args.config, _cli_overrides(args))
    setup = Setup(cp)
    out_dir = cp.get("output", "directory")
    os.makedirs(out_dir, exist_ok=True)

    reports = [
        ("cancellations", cancellation_suite(setup.basis,
                                             setup.params.level)),
        ("truncation", truncation_suite(range(1, 25))),
    ]
    spec = EnsembleSpec(
        path_count=cp.getint("ensemble", "paths"),
        base_seed=cp.getint("ensemble", "base_seed"),
        params=setup.params)
    try:
        result = run_ensemble(spec, setup.init,
                              workers=cp.getint("ensemble", "workers"))
        reports.append(("estimates", check_estimates(
            result.summaries, setup.params, setup.basis, setup.init)))
    except EnsembleFailure as exc:
        print(f"ensemble failed: {exc}", file=sys.stderr)
        return 1

    all_ok = all(rep.all_passed for _, rep in reports)
    payload = {name: json.loads(rep.to_json()) for name, rep in reports}
    payload["all_passed"] = all_ok
    payload["version"] = __version__
    payload["config_hash"] = config_hash(cp)
    payload["base_seed"] = spec.base_seed
    _write_json(os.path.join(out_dir, "estimate_report.json"), payload)
    if not args.quiet:
        for name, rep in reports:
            print(f"--- {name}")
            print(rep.to_table())
    return 0 if all_ok else 1


def cmd_converge(args):
    cp = load_config(args.config, _cli_overrides(args))
    setup = Setup(cp)
    out_dir = cp.get("output", "directory")
    os.makedirs(out_dir, exist_ok=True)
    n_list = tuple(int(x) for x in
                   cp.get("converge", "n_list").split(",") if x)
    spec = EnsembleSpec(
        path_count=cp.getint("converge", "paths"),
        base_seed=cp.getint("ensemble", "base_seed"),
        params=setup.params,
        n_list=n_list)
    study = convergence_study(spec, setup.init,
                              workers=cp.getint("ensemble", "workers"))
    header = "".join(f"# {line}\n" for line in setup.header_lines())
    with open(os.path.join(out_dir, "convergence.csv"), "w") as f:
        f.write(header + study.to_csv())
    with open(os.path.join(out_dir, "convergence_long.csv"), "w") as f:
        f.write(header + study.to_long_csv())
    if not args.quiet:
        print(json.dumps(study.slopes, indent=2, sort_keys=True))
        stuck = [q for q, ok in study.monotone.items() if not ok]
        if stuck:
            print(f"non-monotone beyond MC tolerance: {', '.join(stuck)}")
    return 0


def cmd_dump_theta(args):
    m = args.level
    xs = np.linspace(-2.0 * (m + 2), 2.0 * (m + 2), args.samples)
    path = args.out or f"theta_m{m}.csv"
    with open(path, "w") as f:
        f.write("x,theta,theta_prime\n")
        for x in xs:
            f.write(f"{x!r},{theta(m, x)!r},{theta_prime(m, x)!r}\n")
    if not args.quiet:
        print(f"wrote {path}")
    return 0


def cmd_dump_basis(args):
    cp = load_config(args.config, _cli_overrides(args))
    setup = Setup(cp)
    out_dir = cp.get("output", "directory")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "eigenvalues.csv")
    with open(path, "w") as f:
        for line in setup.header_lines():
            f.write(f"# {line}\n")
        f.write("mode,eigenvalue\n")
        for i, lam in enumerate(setup.basis.eigenvalues):
            f.write(f"{i},{lam!r}\n")
    if not args.quiet:
        print(f"basis cached under {setup.cache_dir}; wrote {path}")
    return 0


def _cli_overrides(args):
    overrides = []
    if getattr(args, "paths", None) is not None:
        overrides.append(("ensemble", "paths", str(args.paths)))
    if getattr(args, "seed", None) is not None:
        overrides.append(("ensemble", "base_seed", str(args.seed)))
    if getattr(args, "out", None) is not None:
        overrides.append(("output", "directory", args.out))
    if getattr(args, "n_steps", None) is not None:
        overrides.append(("scheme", "n_steps", str(args.n_steps)))
    if getattr(args, "grid", None) is not None:
        overrides.append(("grid", "cells", args.grid))
    if getattr(args, "workers", None) is not None:
        overrides.append(("ensemble", "workers", str(args.workers)))
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chemoflow",
        description="Simulate a truncated stochastic chemotaxis-fluid "
                    "system and verify its discrete energy structure.")
    parser.add_argument("--help-config", action="store_true",
                        help="print the config-file key reference and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--paths", type=int, help="override ensemble paths")
        p.add_argument("--seed", type=int, help="override base seed")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--n-steps", dest="n_steps", type=int,
                       help="override time-step count")
        p.add_argument("--grid", help="override cells per axis, e.g. 32x32")
        p.add_argument("--workers", type=int, help="parallel path workers")
        p.add_argument("--quiet", action="store_true")

    for name, fn in (("run", cmd_run), ("check", cmd_check),
                     ("converge", cmd_converge),
                     ("dump-basis", cmd_dump_basis)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("dump-theta")
    p.add_argument("--level", type=int, default=8,
                   help="truncation level m")
    p.add_argument("--samples", type=int, default=2001)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_dump_theta)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "help_config", False):
        print(CONFIG_DOC)
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (EnsembleFailure, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
