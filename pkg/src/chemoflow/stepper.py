"""One semi-implicit time step and whole-path integration.

Each step freezes the transported pair (c_bar, n_bar), solves the velocity
system on the eigenbasis, then the two scalar Helmholtz problems, and
iterates that composition (damped Picard) until the update of (c_bar,
n_bar) is below tolerance in the discrete H1 norm.  The implicit diffusion
uses the Stratonovich-enhanced coefficients; the noise coefficients are
evaluated at the previous step, exactly as the time-discrete system
prescribes.

After each accepted step three exact energy ledgers (velocity,
concentration, density) are evaluated and recorded; they close to round-off
by construction of the operators and are re-asserted by the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FixedPointFailure, ParameterError
from .fields import (ScalarField, grad_norm, h1_norm, l2_inner, l2_norm,
                     mass, solve_helmholtz)
from .noise import sample_increments
from .operators import (buoyancy, chemotaxis_flux, convect_scalar,
                        convect_velocity, convection_tensor, noise_f,
                        noise_g, reaction)
from .stokes import SpectralVelocity
from .truncation import f1_cutoff, theta_family


@dataclass(frozen=True)
class SchemeParams:
    """Physical and numerical constants of one simulation."""

    viscosity: float            # fluid viscosity
    chem_diffusion: float       # chemo-attractant diffusivity
    cell_diffusion: float       # organism diffusivity
    velocity_noise: float       # transport-noise intensity on the fluid
    chem_noise: float           # transport-noise intensity on the chemical
    level: int                  # truncation / eigenbasis size m
    n_steps: int
    t_final: float
    potential: ScalarField = None   # gravitational potential, None = zero
    fp_tol: float = 1e-10
    fp_max_iters: int = 50
    relax: float = 1.0
    tol_linear: float = 1e-10
    check_residuals: bool = True

    def __post_init__(self):
        if min(self.viscosity, self.chem_diffusion, self.cell_diffusion) <= 0:
            raise ParameterError("all diffusivities must be positive")
        if self.velocity_noise < 0 or self.chem_noise < 0:
            raise ParameterError("noise intensities must be nonnegative")
        if self.level < 1:
            raise ParameterError("truncation level must be >= 1")
        if self.n_steps < 1 or self.t_final <= 0:
            raise ParameterError("need n_steps >= 1 and t_final > 0")
        if not (0 < self.relax <= 1):
            raise ParameterError("relaxation factor must lie in (0, 1]")
        theta_family(self.level)  # hard bridge-monotonicity assertion
        if not self.noise_hypothesis_ok():
            warnings.warn(
                "chem_noise^2 = {:.3e} is not below 1/484 of the effective "
                "chemical diffusivity {:.3e}; the well-posedness hypothesis "
                "gamma^2 < (1/484) * epsilon is violated".format(
                    self.chem_noise ** 2, self.effective_chem_diffusion),
                stacklevel=2)

    @property
    def effective_viscosity(self):
        return self.viscosity + 0.5 * self.velocity_noise ** 2

    @property
    def effective_chem_diffusion(self):
        return self.chem_diffusion + 0.5 * self.chem_noise ** 2

    @property
    def truncation_floor(self):
        return 8.0 / self.level

    @property
    def dt(self):
        return self.t_final / self.n_steps

    def noise_hypothesis_ok(self):
        return self.chem_noise ** 2 < self.effective_chem_diffusion / 484.0


@dataclass(frozen=True)
class PathState:
    step: int
    u: SpectralVelocity
    c: ScalarField
    n: ScalarField

    def time(self, dt):
        return self.step * dt


@dataclass
class StepReport:
    step: int
    fp_iterations: int
    fp_residuals: list
    ledgers: dict
    mass_change: float
    noise_pairing: float
    scheme_residuals: tuple = None

    @property
    def max_ledger_residual(self):
        return max(v[2] for v in self.ledgers.values())


# ---------------------------------------------------------------------------
# frozen-coefficient solves
# ---------------------------------------------------------------------------

def solve_velocity(u_prev, n_bar, dw, params):
    """Dense m x m solve of the implicit velocity system.

    (I + eta h Lambda + h C(u_prev)) a = a_prev + h buoy + alpha noise,
    with C exactly antisymmetric so the system is uniformly coercive.
    """
    basis = u_prev.basis
    h = params.dt
    eta = params.effective_viscosity
    t = convection_tensor(basis)
    conv = np.einsum("kji,k->ji", t, u_prev.coeffs).T  # C[i, j]
    m_mat = np.eye(basis.m) + eta * h * np.diag(basis.eigenvalues) \
        + h * conv
    rhs = u_prev.coeffs.copy()
    if params.potential is not None:
        rhs = rhs + h * buoyancy(n_bar, params.potential, basis).coeffs
    if params.velocity_noise:
        rhs = rhs + params.velocity_noise * noise_f(u_prev, dw).coeffs
    coeffs = np.linalg.solve(m_mat, rhs)
    return SpectralVelocity(basis, coeffs)


def chem_noise_term(c_prev, db, params):
    """gamma F1_m(c_prev) g(c_prev) dB, fixed during the Picard loop."""
    if not params.chem_noise or not np.any(db):
        return ScalarField(c_prev.grid, np.zeros(c_prev.grid.shape))
    amp = params.chem_noise * f1_cutoff(params.level, c_prev)
    ng = noise_g(c_prev, db)
    return ScalarField(c_prev.grid, amp * ng.values)


def solve_c(c_prev, u_new, c_bar, n_bar, noise_term, params):
    """(I + h eps A1) c = c_prev - h B1(u, c_bar) - h B2(theta_eps(n_bar),
    c_bar) + noise_term."""
    h = params.dt
    rhs = (c_prev.values
           - h * convect_scalar(u_new, c_bar).values
           - h * reaction(n_bar, c_bar, params.level).values
           + noise_term.values)
    return solve_helmholtz(h * params.effective_chem_diffusion,
                           ScalarField(c_prev.grid, rhs),
                           tol=params.tol_linear)


def solve_n(n_prev, u_new, c_new, n_bar, params):
    """(I + h delta A1) n = n_prev - h B1(u, n_bar) + h B3(theta(n_bar),
    c_new)."""
    h = params.dt
    rhs = (n_prev.values
           - h * convect_scalar(u_new, n_bar).values
           + h * chemotaxis_flux(n_bar, c_new, params.level).values)
    return solve_helmholtz(h * params.cell_diffusion,
                           ScalarField(n_prev.grid, rhs),
                           tol=params.tol_linear)


# ---------------------------------------------------------------------------
# fixed-point step
# ---------------------------------------------------------------------------

def _pair_h1(c, n):
    return float(np.sqrt(h1_norm(c) ** 2 + h1_norm(n) ** 2))


def _mix(old, new, relax):
    if relax >= 1.0:
        return new
    return ScalarField(old.grid,
                       old.values + relax * (new.values - old.values))


def fixed_point_step(state, dw, db, params):
    """Advance one step; returns (new_state, StepReport).

    The Picard iterate starts from the previous step's pair.  On a residual
    increase the damping factor is halved (at most three times); hitting the
    iteration cap raises FixedPointFailure carrying the residual history.
    """
    c_bar, n_bar = state.c, state.n
    noise_term = chem_noise_term(state.c, db, params)
    relax = params.relax
    halvings = 0
    history = []
    prev_res = np.inf
    result = None
    for it in range(1, params.fp_max_iters + 1):
        u_new = solve_velocity(state.u, n_bar, dw, params)
        c_new = solve_c(state.c, u_new, c_bar, n_bar, noise_term, params)
        n_new = solve_n(state.n, u_new, c_new, n_bar, params)
        res = float(np.sqrt(
            h1_norm(ScalarField(state.c.grid, c_new.values - c_bar.values))**2
            + h1_norm(ScalarField(state.n.grid,
                                  n_new.values - n_bar.values))**2))
        history.append(res)
        if res <= params.fp_tol * (1.0 + _pair_h1(c_bar, n_bar)):
            result = (u_new, c_new, n_new)
            break
        if res >= prev_res and halvings < 3:
            relax *= 0.5
            halvings += 1
        prev_res = res
        c_bar = _mix(c_bar, c_new, relax)
        n_bar = _mix(n_bar, n_new, relax)
    if result is None:
        raise FixedPointFailure(
            f"step {state.step + 1}: no fixed point in "
            f"{params.fp_max_iters} iterations (last residual {history[-1]:.3e})",
            residual_history=history)
    u_new, c_new, n_new = result
    new_state = PathState(state.step + 1, u_new, c_new, n_new)
    report = StepReport(
        step=new_state.step,
        fp_iterations=len(history),
        fp_residuals=history,
        ledgers=_energy_ledgers(state, new_state, noise_term, dw, params),
        mass_change=mass(n_new) - mass(state.n),
        noise_pairing=_noise_pairing(state, new_state, dw, params),
    )
    if params.check_residuals:
        report.scheme_residuals = scheme_residuals(
            state, new_state, dw, noise_term, params)
    return new_state, report


def _rel_residual(lhs_terms, rhs_terms):
    lhs = sum(lhs_terms)
    rhs = sum(rhs_terms)
    scale = max([abs(t) for t in lhs_terms + rhs_terms] + [1e-30])
    return lhs, rhs, abs(lhs - rhs) / scale


def _noise_pairing(old, new, dw, params):
    if not params.velocity_noise or not np.any(dw):
        return 0.0
    nf = noise_f(old.u, dw)
    return float(2 * params.velocity_noise * (nf.coeffs @ new.u.coeffs))


def _energy_ledgers(old, new, noise_term, dw, params):
    h = params.dt
    ledgers = {}

    du = new.u - old.u
    lhs_u = [new.u.l2() ** 2, -old.u.l2() ** 2, du.l2() ** 2,
             2 * h * params.effective_viscosity * new.u.grad_l2() ** 2]
    rhs_u = []
    if params.potential is not None:
        buoy = buoyancy(new.n, params.potential, new.u.basis)
        rhs_u.append(2 * h * float(buoy.coeffs @ new.u.coeffs))
    rhs_u.append(_noise_pairing(old, new, dw, params))
    ledgers["u"] = _rel_residual(lhs_u, rhs_u)

    dc = ScalarField(new.c.grid, new.c.values - old.c.values)
    absorb = reaction(new.n, new.c, params.level)
    lhs_c = [l2_norm(new.c) ** 2, -l2_norm(old.c) ** 2, l2_norm(dc) ** 2,
             2 * h * params.effective_chem_diffusion * grad_norm(new.c) ** 2,
             2 * h * l2_inner(absorb, new.c)]
    rhs_c = [2 * l2_inner(noise_term, new.c)]
    ledgers["c"] = _rel_residual(lhs_c, rhs_c)

    dn = ScalarField(new.n.grid, new.n.values - old.n.values)
    flux = chemotaxis_flux(new.n, new.c, params.level)
    lhs_n = [l2_norm(new.n) ** 2, -l2_norm(old.n) ** 2, l2_norm(dn) ** 2,
             2 * h * params.cell_diffusion * grad_norm(new.n) ** 2]
    rhs_n = [2 * h * l2_inner(flux, new.n)]
    ledgers["n"] = _rel_residual(lhs_n, rhs_n)
    return ledgers


def scheme_residuals(old, new, dw, noise_term, params):
    """Relative defects of the three coupled equations at the accepted step."""
    from .fields import neumann_laplacian

    h = params.dt
    basis = new.u.basis

    res_u = new.u.coeffs - old.u.coeffs + h * (
        params.effective_viscosity * basis.eigenvalues * new.u.coeffs
        + convect_velocity(old.u, new.u).coeffs)
    if params.potential is not None:
        res_u -= h * buoyancy(new.n, params.potential, basis).coeffs
    if params.velocity_noise:
        res_u -= params.velocity_noise * noise_f(old.u, dw).coeffs
    ru = float(np.linalg.norm(res_u)) / (1.0 + new.u.l2())

    res_c = (new.c.values - old.c.values
             + h * (params.effective_chem_diffusion
                    * neumann_laplacian(new.c).values
                    + convect_scalar(new.u, new.c).values
                    + reaction(new.n, new.c, params.level).values)
             - noise_term.values)
    rc = l2_norm(ScalarField(new.c.grid, res_c)) / (1.0 + l2_norm(new.c))

    res_n = (new.n.values - old.n.values
             + h * (params.cell_diffusion * neumann_laplacian(new.n).values
                    + convect_scalar(new.u, new.n).values
                    - chemotaxis_flux(new.n, new.c, params.level).values))
    rn = l2_norm(ScalarField(new.n.grid, res_n)) / (1.0 + l2_norm(new.n))
    return (ru, rc, rn)


# ---------------------------------------------------------------------------
# whole-path integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    seed: object
    params: SchemeParams
    states: list
    reports: list
    increments: object

    @property
    def n_steps(self):
        return len(self.states) - 1

    def state(self, step):
        return self.states[step]


def run_path(seed, init, params, *, increments=None):
    """Integrate a full path; deterministic given (seed, init, params)."""
    if init.step != 0:
        raise ParameterError("initial state must sit at step 0")
    if increments is None:
        increments = sample_increments(seed, params.n_steps, params.dt,
                                       init.c.grid.dim)
    states = [init]
    reports = []
    state = init
    for ell in range(params.n_steps):
        state, report = fixed_point_step(
            state, increments.dw[ell], increments.db[ell], params)
        states.append(state)
        reports.append(report)
    return Trajectory(seed, params, states, reports, increments)


TRAJECTORY_COLUMNS = [
    "step", "time", "u_l2", "u_grad_l2", "c_l2", "c_h1", "n_l2",
    "n_grad_l2", "n_mass", "fp_iters", "ledger_u", "ledger_c", "ledger_n",
]


def trajectory_rows(traj):
    dt = traj.params.dt
    rows = []
    for k, st in enumerate(traj.states):
        rep = traj.reports[k - 1] if k else None
        rows.append([
            st.step, st.step * dt, st.u.l2(), st.u.grad_l2(),
            l2_norm(st.c), h1_norm(st.c), l2_norm(st.n), grad_norm(st.n),
            mass(st.n),
            rep.fp_iterations if rep else 0,
            rep.ledgers["u"][2] if rep else 0.0,
            rep.ledgers["c"][2] if rep else 0.0,
            rep.ledgers["n"][2] if rep else 0.0,
        ])
    return rows


def write_trajectory_csv(traj, path, header_lines=()):
    with open(path, "w") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        f.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for row in trajectory_rows(traj):
            f.write(",".join(repr(x) if isinstance(x, float) else str(x)
                             for x in row) + "\n")
