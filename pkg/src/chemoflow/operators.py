"""Transport forms and noise maps of the truncated chemotaxis-fluid system.

Every transport discretization here is chosen so that the cancellation the
energy estimates rest on holds to round-off, not merely to stencil order:

* velocity self-advection is assembled through an exactly antisymmetrized
  trilinear tensor on the eigenbasis, so (conv(w, v), v) = 0;
* scalar advection is a conservative face-flux divergence, so pairing with
  the advected scalar telescopes to (div u, phi^2)/2 and its integral
  against 1 vanishes identically;
* the density flux -div(theta(n) grad c) is a flux-form divergence, making
  it mass-neutral and an exact adjoint of theta-weighted gradients;
* the velocity noise map realizes the paper-level fact that the projected
  noise field is a discrete gradient, hence annihilated by the solenoidal
  projection;
* the concentration noise map is a mean-projected, zero-ghost centered
  difference: exactly antisymmetric and exactly zero on constants.

Setting the environment variable ``CHEMOFLOW_BREAK_SKEW=1`` disables the
antisymmetrization of the convection tensor; it exists purely as a negative
control for the verification CLI.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .fields import (ScalarField, VelocityField, div, grad,
                     interpolate_to_cells, interpolate_to_faces, l2_inner)
from .stokes import SpectralVelocity, pi_m, zero_normal_boundary
from .truncation import theta, theta_eps


def _skew_disabled():
    return os.environ.get("CHEMOFLOW_BREAK_SKEW", "0").strip() == "1"


# ---------------------------------------------------------------------------
# noise coefficient fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseFields:
    """Unit coordinate advection fields, zeroed on boundary faces.

    The k-th field has component k equal to 1 on interior k-faces and 0 on
    the wall faces.  Discrete divergence vanishes at interior cells and the
    covariance matrix sum_k g_k(x) g_k(x)^T equals the identity there; both
    properties degrade only in the single cell layer touching the wall.
    """

    grid: object

    def fields(self):
        out = []
        for k in range(self.grid.dim):
            comps = []
            for ax in range(self.grid.dim):
                arr = np.zeros(self.grid.face_shape(ax))
                if ax == k:
                    inner = [slice(None)] * self.grid.dim
                    inner[ax] = slice(1, -1)
                    arr[tuple(inner)] = 1.0
                comps.append(arr)
            out.append(VelocityField(self.grid, tuple(comps)))
        return out

    def _interior_cells(self):
        sel = np.ones(self.grid.shape, dtype=bool)
        for ax in range(self.grid.dim):
            edge = [slice(None)] * self.grid.dim
            edge[ax] = 0
            sel[tuple(edge)] = False
            edge[ax] = -1
            sel[tuple(edge)] = False
        return sel

    def max_interior_divergence(self):
        sel = self._interior_cells()
        return max(float(np.max(np.abs(div(g).values[sel])))
                   for g in self.fields())

    def sup_norm(self):
        return max(float(max(np.max(np.abs(c)) for c in g.components))
                   for g in self.fields())

    def identity_defect_interior(self):
        """max |sum_k g_k g_k^T - Id| over interior cells."""
        sel = self._interior_cells()
        dim = self.grid.dim
        cell_comps = [interpolate_to_cells(g) for g in self.fields()]
        worst = 0.0
        for i in range(dim):
            for j in range(dim):
                acc = sum(cell_comps[k][i] * cell_comps[k][j]
                          for k in range(dim))
                target = 1.0 if i == j else 0.0
                worst = max(worst, float(np.max(np.abs(acc[sel] - target))))
        return worst


# ---------------------------------------------------------------------------
# grid-space advection quadrature (feeds the spectral tensor)
# ---------------------------------------------------------------------------

def _d_own_axis(arr, ax, h):
    """Centered derivative of a face array along its own axis."""
    out = np.zeros_like(arr)
    mid = [slice(None)] * arr.ndim
    mid[ax] = slice(1, -1)
    lo = [slice(None)] * arr.ndim
    lo[ax] = slice(None, -2)
    hi = [slice(None)] * arr.ndim
    hi[ax] = slice(2, None)
    out[tuple(mid)] = (arr[tuple(hi)] - arr[tuple(lo)]) / (2 * h)
    return out


def _d_tangential(arr, ax, h):
    """Centered derivative across the component axis, odd wall ghosts."""
    out = np.empty_like(arr)
    mid = [slice(None)] * arr.ndim
    mid[ax] = slice(1, -1)
    lo = [slice(None)] * arr.ndim
    lo[ax] = slice(None, -2)
    hi = [slice(None)] * arr.ndim
    hi[ax] = slice(2, None)
    out[tuple(mid)] = (arr[tuple(hi)] - arr[tuple(lo)]) / (2 * h)
    first = [slice(None)] * arr.ndim
    second = [slice(None)] * arr.ndim
    last = [slice(None)] * arr.ndim
    seclast = [slice(None)] * arr.ndim
    first[ax] = 0
    second[ax] = 1
    last[ax] = -1
    seclast[ax] = -2
    out[tuple(first)] = (arr[tuple(second)] + arr[tuple(first)]) / (2 * h)
    out[tuple(last)] = -(arr[tuple(last)] + arr[tuple(seclast)]) / (2 * h)
    return out


def _to_cells(arr, ax):
    lo = [slice(None)] * arr.ndim
    hi = [slice(None)] * arr.ndim
    lo[ax] = slice(None, -1)
    hi[ax] = slice(1, None)
    return 0.5 * (arr[tuple(lo)] + arr[tuple(hi)])


def _cells_to_faces(vals, ax):
    out = np.empty(tuple(n + (1 if d == ax else 0)
                         for d, n in enumerate(vals.shape)))
    inner = [slice(None)] * vals.ndim
    inner[ax] = slice(1, -1)
    lo = [slice(None)] * vals.ndim
    hi = [slice(None)] * vals.ndim
    lo[ax] = slice(None, -1)
    hi[ax] = slice(1, None)
    out[tuple(inner)] = 0.5 * (vals[tuple(lo)] + vals[tuple(hi)])
    first = [slice(None)] * vals.ndim
    first[ax] = 0
    last = [slice(None)] * vals.ndim
    last[ax] = -1
    out[tuple(first)] = vals[tuple(first)]
    out[tuple(last)] = vals[tuple(last)]
    return out


def advect_velocity_field(w, v):
    """(w . grad) v at faces, plain centered form (no symmetrization)."""
    g = w.grid
    comps = []
    for c in range(g.dim):
        acc = np.zeros(g.face_shape(c))
        for d in range(g.dim):
            if d == c:
                wd = w.components[c]
                dv = _d_own_axis(v.components[c], d, g.spacing[d])
            else:
                wd = _cells_to_faces(_to_cells(w.components[d], d), c)
                dv = _d_tangential(v.components[c], d, g.spacing[d])
            acc += wd * dv
        comps.append(acc)
    return zero_normal_boundary(VelocityField(g, tuple(comps)))


def trilinear(w, v, z):
    """b(w, v, z) = integral of (w . grad v) . z by midpoint quadrature."""
    return l2_inner(advect_velocity_field(w, v), z)


def convection_tensor(basis):
    """T[k, j, i] = skew form of b(e_k, e_j, e_i); cached on the basis."""
    broken = _skew_disabled()
    attr = "_conv_tensor_raw" if broken else "_conv_tensor"
    cached = getattr(basis, attr, None)
    if cached is not None:
        return cached
    m = basis.m
    modes = basis.modes
    b = np.empty((m, m, m))
    for k in range(m):
        for j in range(m):
            adv = advect_velocity_field(modes[k], modes[j])
            for i in range(m):
                b[k, j, i] = l2_inner(adv, modes[i])
    t = b if broken else 0.5 * (b - np.transpose(b, (0, 2, 1)))
    setattr(basis, attr, t)
    return t


def convect_velocity(u_adv, u):
    """pi_m of the skew-symmetrized self-advection (w . grad) v."""
    if u_adv.basis is not u.basis:
        _check_bases(u_adv, u)
    t = convection_tensor(u.basis)
    coeffs = np.einsum("kji,k,j->i", t, u_adv.coeffs, u.coeffs)
    return SpectralVelocity(u.basis, coeffs)


def _check_bases(a, b):
    if a.basis.grid != b.basis.grid or a.basis.m != b.basis.m or \
            not np.array_equal(a.basis.packed, b.basis.packed):
        raise ParameterError("spectral velocities use different bases")


# ---------------------------------------------------------------------------
# buoyancy and scalar transport
# ---------------------------------------------------------------------------

def buoyancy(n, potential, basis):
    """pi_m(P_L(theta_m(n) grad potential)) as a spectral velocity.

    Because the eigenmodes are exactly solenoidal, projecting the raw face
    field onto the basis already equals projecting its Leray part.
    """
    field = buoyancy_field(n, potential, basis.m)
    return pi_m(field, basis)


def buoyancy_field(n, potential, level):
    g = n.grid
    gp = grad(potential)
    th = theta(level, n.values)
    comps = tuple(interpolate_to_faces(ScalarField(g, th), ax) * gp.components[ax]
                  for ax in range(g.dim))
    return VelocityField(g, comps)


def convect_scalar(u, phi):
    """u . grad phi in conservative flux form div(u avg(phi)).

    Exactly mass-neutral; pairing with phi itself reduces to
    (div u, phi^2)/2 and therefore vanishes for solenoidal u.
    """
    g = phi.grid
    vel = u.reconstruct() if isinstance(u, SpectralVelocity) else u
    flux = tuple(vel.components[ax] * interpolate_to_faces(phi, ax)
                 for ax in range(g.dim))
    return div(VelocityField(g, flux))


def reaction(n, c, level):
    """Pointwise absorption theta_eps(n) * c (positive multiplier)."""
    return ScalarField(c.grid, theta_eps(level, n.values) * c.values)


def chemotaxis_flux(n, c, level):
    """-div(theta_m(n) grad c) in conservative flux form."""
    g = c.grid
    gc = grad(c)
    th = ScalarField(g, theta(level, n.values))
    flux = tuple(interpolate_to_faces(th, ax) * gc.components[ax]
                 for ax in range(g.dim))
    return ScalarField(g, -div(VelocityField(g, flux)).values)


# ---------------------------------------------------------------------------
# noise maps
# ---------------------------------------------------------------------------

def noise_f(u, dw):
    """Velocity transport-noise map, projected onto the eigenbasis.

    The grid field is the discrete gradient of the cell scalar u . dw, so
    its projection onto the (gradient-orthogonal) eigenmodes is zero to
    solver precision; keeping the assembly explicit documents the
    integration-by-parts identity responsible for the noise dropping out of
    every velocity energy ledger.
    """
    dw = np.asarray(dw, dtype=float)
    basis = u.basis
    g = basis.grid
    if dw.shape != (g.dim,):
        raise ParameterError(f"expected a length-{g.dim} increment")
    cell_comps = interpolate_to_cells(u.reconstruct())
    s = sum(cell_comps[k] * dw[k] for k in range(g.dim))
    return pi_m(grad(ScalarField(g, s)), basis)


def _centered_zero_ghost(vals, ax, h):
    out = np.empty_like(vals)
    mid = [slice(None)] * vals.ndim
    mid[ax] = slice(1, -1)
    lo = [slice(None)] * vals.ndim
    hi = [slice(None)] * vals.ndim
    lo[ax] = slice(None, -2)
    hi[ax] = slice(2, None)
    out[tuple(mid)] = (vals[tuple(hi)] - vals[tuple(lo)]) / (2 * h)
    first = [slice(None)] * vals.ndim
    second = [slice(None)] * vals.ndim
    last = [slice(None)] * vals.ndim
    seclast = [slice(None)] * vals.ndim
    first[ax] = 0
    second[ax] = 1
    last[ax] = -1
    seclast[ax] = -2
    out[tuple(first)] = vals[tuple(second)] / (2 * h)
    out[tuple(last)] = -vals[tuple(seclast)] / (2 * h)
    return out


def noise_g(c, db, nf=None):
    """Concentration transport noise sum_k db_k (g_k . grad c).

    Realized as mean-projected zero-ghost centered differences: the operator
    is exactly antisymmetric (so its pairing with c vanishes identically)
    and exactly zero on constants, and it coincides with d/dx_k away from
    the walls where the coefficient fields are the unit directions.
    """
    db = np.asarray(db, dtype=float)
    g = c.grid
    if db.shape != (g.dim,):
        raise ParameterError(f"expected a length-{g.dim} increment")
    inner = c.values - np.mean(c.values)
    acc = np.zeros(g.shape)
    for k in range(g.dim):
        if db[k] != 0.0:
            acc += db[k] * _centered_zero_ghost(inner, k, g.spacing[k])
    acc -= np.mean(acc)
    return ScalarField(g, acc)
