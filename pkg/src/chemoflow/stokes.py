"""Discrete Stokes machinery: Leray projection, solenoidal eigenbasis,
spectral velocities.

The velocity space is the set of staggered face fields with zero normal
boundary faces; its free degrees of freedom are the interior faces.  The
discrete Stokes operator is ``v -> leray_project(-lap_h v)`` restricted to
the discretely divergence-free subspace.  Up to ~5000 free DOFs the
eigenpairs come from a dense eigendecomposition of the operator projected
onto an SVD null-space basis of the divergence matrix (deterministic, exact
solenoidality); above that a penalized sparse shift-invert solve is used and
the modes are re-projected afterwards.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SolverFailure
from .fields import (DEFAULT_LINEAR_TOL, Grid, ScalarField, VelocityField,
                     div, grad, solve_neumann_poisson,
                     _read_blocks, _write_blocks)

DENSE_DOF_LIMIT = 5000


# ---------------------------------------------------------------------------
# free-DOF packing (interior faces only; boundary normal faces are pinned 0)
# ---------------------------------------------------------------------------

def _interior(grid, ax):
    sl = [slice(None)] * grid.dim
    sl[ax] = slice(1, -1)
    return tuple(sl)


def n_free(grid):
    return sum(int(np.prod(grid.face_shape(ax))
                   - np.prod(grid.shape) // grid.shape[ax] * 2)
               for ax in range(grid.dim))


def pack(v):
    g = v.grid
    return np.concatenate([v.components[ax][_interior(g, ax)].reshape(-1)
                           for ax in range(g.dim)])


def unpack(grid, vec):
    comps = []
    pos = 0
    for ax in range(grid.dim):
        arr = np.zeros(grid.face_shape(ax))
        inner = arr[_interior(grid, ax)]
        n = inner.size
        arr[_interior(grid, ax)] = vec[pos:pos + n].reshape(inner.shape)
        comps.append(arr)
        pos += n
    return VelocityField(grid, tuple(comps))


def zero_normal_boundary(v):
    g = v.grid
    comps = []
    for ax in range(g.dim):
        arr = v.components[ax].copy()
        first = [slice(None)] * g.dim
        first[ax] = 0
        last = [slice(None)] * g.dim
        last[ax] = -1
        arr[tuple(first)] = 0.0
        arr[tuple(last)] = 0.0
        comps.append(arr)
    return VelocityField(g, tuple(comps))


def velocity_laplacian(v):
    """Component-wise lap_h with no-slip walls.

    Along the component's own axis the wall faces act as Dirichlet zeros
    (their stored values are used, which are 0 for admissible fields); along
    the other axes the tangential ghost is the odd reflection of the first
    interior value.  Output boundary normal faces are zeroed (constrained).
    """
    g = v.grid
    out = []
    for ax in range(g.dim):
        c = v.components[ax]
        acc = np.zeros_like(c)
        for d in range(g.dim):
            inv2 = 1.0 / g.spacing[d] ** 2
            lo = [slice(None)] * g.dim
            hi = [slice(None)] * g.dim
            mid = [slice(None)] * g.dim
            lo[d] = slice(None, -2)
            hi[d] = slice(2, None)
            mid[d] = slice(1, -1)
            acc[tuple(mid)] += (c[tuple(lo)] - 2 * c[tuple(mid)]
                                + c[tuple(hi)]) * inv2
            first = [slice(None)] * g.dim
            second = [slice(None)] * g.dim
            last = [slice(None)] * g.dim
            seclast = [slice(None)] * g.dim
            first[d] = 0
            second[d] = 1
            last[d] = -1
            seclast[d] = -2
            if d == ax:
                # wall faces are Dirichlet data, rows for them stay untouched
                acc[tuple(first)] = 0.0
                acc[tuple(last)] = 0.0
            else:
                # ghost = -first interior value (odd reflection at the wall)
                acc[tuple(first)] += (c[tuple(second)]
                                      - 3 * c[tuple(first)]) * inv2
                acc[tuple(last)] += (c[tuple(seclast)]
                                     - 3 * c[tuple(last)]) * inv2
        # rows under the Dirichlet constraint are not free unknowns
        firsta = [slice(None)] * g.dim
        firsta[ax] = 0
        lasta = [slice(None)] * g.dim
        lasta[ax] = -1
        acc[tuple(firsta)] = 0.0
        acc[tuple(lasta)] = 0.0
        out.append(acc)
    return VelocityField(g, tuple(out))


def leray_project(v, *, tol=None):
    """Remove the discrete gradient part: v -> v - grad p, div-free output.

    Normal boundary faces are zeroed first (projection onto no-normal-flow),
    then the Neumann pressure problem A1 p = -div v is solved by CG.
    """
    tol = DEFAULT_LINEAR_TOL if tol is None else tol
    v0 = zero_normal_boundary(v)
    d = div(v0)
    if float(np.max(np.abs(d.values))) == 0.0:
        return v0
    p = solve_neumann_poisson(ScalarField(v.grid, -d.values), tol=tol)
    gp = grad(p)
    return VelocityField(v.grid, tuple(a - b for a, b in
                                       zip(v0.components, gp.components)))


# ---------------------------------------------------------------------------
# eigenbasis
# ---------------------------------------------------------------------------

@dataclass
class StokesBasis:
    """m lowest eigenpairs of the projected Stokes operator.

    ``packed`` holds the modes row-wise on the free DOFs, orthonormal for
    the volume-weighted inner product.
    """

    grid: Grid
    m: int
    eigenvalues: np.ndarray
    packed: np.ndarray
    _modes: list = field(default=None, repr=False)
    _sup_const: float = field(default=None, repr=False)

    @property
    def modes(self):
        if self._modes is None:
            self._modes = [unpack(self.grid, row) for row in self.packed]
        return self._modes

    @property
    def sup_constant(self):
        """Pointwise frame bound: |u|_inf <= sup_constant * |coeffs|_2."""
        if self._sup_const is None:
            self._sup_const = float(
                np.sqrt(np.max(np.sum(self.packed ** 2, axis=0))))
        return self._sup_const

    def project(self, v):
        return pi_m(v, self)

    def spectral(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.m,):
            raise ParameterError(f"expected {self.m} coefficients")
        return SpectralVelocity(self, coeffs)

    def zero(self):
        return SpectralVelocity(self, np.zeros(self.m))


@dataclass(frozen=True)
class SpectralVelocity:
    """Velocity expressed in the Stokes eigenbasis."""

    basis: StokesBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        object.__setattr__(self, "coeffs", c)
        if not np.all(np.isfinite(c)):
            raise ParameterError("non-finite spectral coefficients")

    def reconstruct(self):
        return unpack(self.basis.grid, self.basis.packed.T @ self.coeffs)

    def l2(self):
        return float(np.linalg.norm(self.coeffs))

    def grad_l2(self):
        """Dirichlet seminorm sqrt(sum lambda_i a_i^2) = sqrt((A u, u))."""
        return float(np.sqrt(np.sum(self.basis.eigenvalues
                                    * self.coeffs ** 2)))

    def apply_stokes(self):
        return SpectralVelocity(self.basis,
                                self.basis.eigenvalues * self.coeffs)

    def __add__(self, other):
        _check_same_basis(self, other)
        return SpectralVelocity(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_same_basis(self, other)
        return SpectralVelocity(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, a):
        return SpectralVelocity(self.basis, self.coeffs * float(a))

    __rmul__ = __mul__


def _check_same_basis(a, b):
    if a.basis is not b.basis and not (
            a.basis.grid == b.basis.grid and a.basis.m == b.basis.m
            and np.array_equal(a.basis.packed, b.basis.packed)):
        raise ParameterError("spectral velocities use different bases")


def pi_m(v, basis):
    """Orthogonal projection of a face field onto the eigenbasis."""
    if v.grid != basis.grid:
        raise ParameterError("field grid does not match basis grid")
    w = basis.grid.cell_volume
    return SpectralVelocity(basis, w * (basis.packed @ pack(v)))


def _divergence_matrix(grid):
    nf = n_free(grid)
    cols = []
    for j in range(nf):
        e = np.zeros(nf)
        e[j] = 1.0
        cols.append(div(unpack(grid, e)).values.reshape(-1))
    return np.array(cols).T


def _laplacian_matrix(grid):
    nf = n_free(grid)
    cols = []
    for j in range(nf):
        e = np.zeros(nf)
        e[j] = 1.0
        cols.append(-pack(velocity_laplacian(unpack(grid, e))))
    return np.array(cols).T


def _fix_signs(packed):
    out = packed.copy()
    for i in range(out.shape[0]):
        k = int(np.argmax(np.abs(out[i])))
        if out[i, k] < 0:
            out[i] = -out[i]
    return out


def _orthonormalize_clusters(eigenvalues, packed, w):
    """Deterministic Gram-Schmidt inside degenerate clusters, index order."""
    vals = np.asarray(eigenvalues)
    start = 0
    out = packed.copy()
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) <= \
                1e-8 * max(1.0, abs(vals[start])):
            stop += 1
        for i in range(start, stop):
            for j in range(start, i):
                out[i] -= (out[i] @ out[j]) * w * out[j]
            nrm = np.sqrt((out[i] @ out[i]) * w)
            out[i] /= nrm
        start = stop
    return out


def compute_basis(grid, m, *, dense_limit=DENSE_DOF_LIMIT):
    """Lowest m eigenpairs of the projected Stokes operator."""
    m = int(m)
    if m < 1:
        raise ParameterError("need at least one mode")
    nf = n_free(grid)
    ns = nf - (grid.n_cells - 1)
    if m > ns:
        raise ParameterError(
            f"m={m} exceeds the solenoidal dimension {ns}")
    if nf <= dense_limit:
        lam, packed_e = _dense_eigenpairs(grid, m, nf, ns)
    else:
        lam, packed_e = _iterative_eigenpairs(grid, m, nf)
    if lam[0] <= 0:
        raise SolverFailure("nonpositive Stokes eigenvalue", residual=lam[0])
    w = grid.cell_volume
    packed = _fix_signs(packed_e / np.sqrt(w))
    packed = _orthonormalize_clusters(lam, packed, w)
    packed = _fix_signs(packed)
    return StokesBasis(grid, m, np.asarray(lam, dtype=float), packed)


def _dense_eigenpairs(grid, m, nf, ns):
    d_mat = _divergence_matrix(grid)
    l_mat = _laplacian_matrix(grid)
    _, s, vt = np.linalg.svd(d_mat)
    tol = s[0] * 1e-10
    rank = int(np.sum(s > tol))
    if rank != grid.n_cells - 1:
        raise SolverFailure(
            f"divergence rank {rank} != expected {grid.n_cells - 1}")
    z = vt[rank:].T  # (nf, ns), euclidean-orthonormal null space
    g_mat = z.T @ l_mat @ z
    g_mat = 0.5 * (g_mat + g_mat.T)
    lam, vec = np.linalg.eigh(g_mat)
    return lam[:m], (z @ vec[:, :m]).T


def _iterative_eigenpairs(grid, m, nf):
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    # column-by-column assembly is still affordable just past desk scale
    d_mat = sp.csc_matrix(_divergence_matrix(grid))
    l_mat = sp.csc_matrix(_laplacian_matrix(grid))
    scale = float(abs(l_mat).sum(axis=1).max())
    penalty = 1e8 * scale
    b_pen = (l_mat + penalty * (d_mat.T @ d_mat)).tocsc()
    k = min(m + 8, nf - 2)
    lam, vec = spla.eigsh(b_pen, k=k, sigma=0.0, which="LM")
    order = np.argsort(lam)
    vec = vec[:, order[:m + 4]]
    # re-project onto the exact solenoidal space and run Rayleigh-Ritz
    cleaned = []
    for j in range(vec.shape[1]):
        v = leray_project(unpack(grid, vec[:, j]))
        cleaned.append(pack(v))
    q, _ = np.linalg.qr(np.array(cleaned).T)
    small = q.T @ (l_mat @ q)
    small = 0.5 * (small + small.T)
    lam2, v2 = np.linalg.eigh(small)
    return lam2[:m], (q @ v2[:, :m]).T


# ---------------------------------------------------------------------------
# disk cache
# ---------------------------------------------------------------------------

def basis_cache_path(cache_dir, grid, m):
    return os.path.join(cache_dir, f"stokes_{grid.content_key()}_m{m}.basis")


def save_basis(basis, path):
    header = {
        "grid_key": basis.grid.content_key(),
        "shape": basis.grid.shape,
        "lengths": basis.grid.lengths,
        "m": basis.m,
        "eigenvalues": [float(x) for x in basis.eigenvalues],
    }
    _write_blocks(path, header, [basis.packed])


def load_basis(path):
    header, raw = _read_blocks(path)
    grid = Grid(tuple(header["shape"]), tuple(header["lengths"]))
    m = int(header["m"])
    packed = raw.reshape(m, n_free(grid)).copy()
    return StokesBasis(grid, m, np.array(header["eigenvalues"]), packed)


_MEMORY_CACHE = {}


def get_basis(grid, m, *, cache_dir=None, dense_limit=DENSE_DOF_LIMIT):
    """Basis with memory + optional disk caching, keyed by grid content."""
    key = (grid.content_key(), m)
    if key in _MEMORY_CACHE:
        return _MEMORY_CACHE[key]
    basis = None
    path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = basis_cache_path(cache_dir, grid, m)
        if os.path.exists(path):
            basis = load_basis(path)
    if basis is None:
        basis = compute_basis(grid, m, dense_limit=dense_limit)
        if path:
            save_basis(basis, path)
    _MEMORY_CACHE[key] = basis
    return basis
