"""Grids, scalar/velocity fields, and the discrete calculus on a box.

The discretization is a second-order MAC staggered scheme: scalars sit at
cell centers, each velocity component on the faces normal to its axis.
Scalar walls are homogeneous Neumann (ghost reflection), velocity walls are
no-slip (zero normal boundary faces, odd-reflected tangential ghosts).  With
uniform face weights ``grad`` and ``-div`` are exact adjoints, which is what
makes the energy ledgers downstream close to round-off rather than to
truncation error.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import GridMismatchError, ParameterError, SolverFailure

DEFAULT_LINEAR_TOL = 1e-10
# iteration cap for the CG solves, per cell
LINEAR_ITER_FACTOR = 10


@dataclass(frozen=True)
class Grid:
    """Rectangular box split into equal cells, 2-d or 3-d."""

    shape: tuple
    lengths: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(x) for x in self.lengths)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)
        if len(shape) not in (2, 3):
            raise ParameterError(f"grid must be 2-d or 3-d, got {len(shape)}")
        if len(lengths) != len(shape):
            raise ParameterError("shape and lengths disagree on dimension")
        if any(n < 4 for n in shape):
            raise ParameterError("need at least 4 cells per axis")
        if int(np.prod(shape)) < 16:
            raise ParameterError("need at least 16 cells in total")
        if any(x <= 0 for x in lengths):
            raise ParameterError("box lengths must be positive")

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(l / n for l, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    def face_shape(self, axis):
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def cell_centers(self, axis):
        h = self.spacing[axis]
        return (np.arange(self.shape[axis]) + 0.5) * h

    def content_key(self):
        """Stable hash of the grid geometry, used to key the basis cache."""
        payload = json.dumps({"shape": self.shape, "lengths": self.lengths})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")


@dataclass(frozen=True)
class ScalarField:
    """One real value per cell center."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.shape != self.grid.shape:
            raise GridMismatchError(
                f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ParameterError("scalar field contains non-finite values")


@dataclass(frozen=True)
class VelocityField:
    """One real value per face, one staggered array per component."""

    grid: Grid
    components: tuple

    def __post_init__(self):
        comps = tuple(np.asarray(c, dtype=float) for c in self.components)
        object.__setattr__(self, "components", comps)
        if len(comps) != self.grid.dim:
            raise GridMismatchError("component count != grid dimension")
        for ax, c in enumerate(comps):
            if c.shape != self.grid.face_shape(ax):
                raise GridMismatchError(
                    f"component {ax} shape {c.shape} != "
                    f"{self.grid.face_shape(ax)}")
            if not np.all(np.isfinite(c)):
                raise ParameterError("velocity field has non-finite values")


def zero_scalar(grid):
    return ScalarField(grid, np.zeros(grid.shape))


def zero_velocity(grid):
    return VelocityField(grid, tuple(np.zeros(grid.face_shape(ax))
                                     for ax in range(grid.dim)))


def scalar_from_function(grid, fn):
    """Sample fn(*coords) at cell centers."""
    axes = [grid.cell_centers(ax) for ax in range(grid.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return ScalarField(grid, np.asarray(fn(*mesh), dtype=float)
                       + np.zeros(grid.shape))


# ---------------------------------------------------------------------------
# inner products and norms
# ---------------------------------------------------------------------------

def l2_inner(a, b):
    """Quadrature inner product; faces and cells share one uniform weight."""
    _check_same_grid(a, b)
    w = a.grid.cell_volume
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        return float(np.sum(a.values * b.values) * w)
    if isinstance(a, VelocityField) and isinstance(b, VelocityField):
        return float(sum(np.sum(ca * cb)
                         for ca, cb in zip(a.components, b.components)) * w)
    raise GridMismatchError("cannot pair a scalar with a velocity field")


def l2_norm(a):
    return float(np.sqrt(max(l2_inner(a, a), 0.0)))


def grad_norm(phi):
    return l2_norm(grad(phi))


def h1_norm(phi):
    return float(np.sqrt(l2_norm(phi) ** 2 + grad_norm(phi) ** 2))


def mass(phi):
    return float(np.sum(phi.values) * phi.grid.cell_volume)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def grad(phi):
    """Cell field -> face field; Neumann ghosts make wall faces exactly 0."""
    g = phi.grid
    comps = []
    for ax in range(g.dim):
        out = np.zeros(g.face_shape(ax))
        hi = [slice(None)] * g.dim
        hi[ax] = slice(1, -1)
        out[tuple(hi)] = np.diff(phi.values, axis=ax) / g.spacing[ax]
        comps.append(out)
    return VelocityField(g, tuple(comps))


def div(v):
    """Face field -> cell field; exact negative adjoint of grad."""
    g = v.grid
    out = np.zeros(g.shape)
    for ax in range(g.dim):
        out += np.diff(v.components[ax], axis=ax) / g.spacing[ax]
    return ScalarField(g, out)


def neumann_laplacian(phi):
    """A1 phi = -div(grad phi); SPSD with constants in the kernel."""
    inv2 = tuple(1.0 / h ** 2 for h in phi.grid.spacing)
    return ScalarField(phi.grid,
                       _kernels.helmholtz_apply(phi.values, 0.0, 1.0, inv2))


def interpolate_to_cells(v):
    """Average each face component onto cell centers (per component)."""
    g = v.grid
    out = []
    for ax in range(g.dim):
        lo = [slice(None)] * g.dim
        hi = [slice(None)] * g.dim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        c = v.components[ax]
        out.append(0.5 * (c[tuple(lo)] + c[tuple(hi)]))
    return out


def interpolate_to_faces(phi, axis):
    """Average a cell field onto the faces of one axis (wall faces get the
    adjacent cell value; they are only ever multiplied by zero fluxes)."""
    g = phi.grid
    out = np.empty(g.face_shape(axis))
    lo = [slice(None)] * g.dim
    hi = [slice(None)] * g.dim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    inner = [slice(None)] * g.dim
    inner[axis] = slice(1, -1)
    out[tuple(inner)] = 0.5 * (phi.values[tuple(lo)] + phi.values[tuple(hi)])
    first = [slice(None)] * g.dim
    first[axis] = 0
    last = [slice(None)] * g.dim
    last[axis] = -1
    out[tuple(first)] = phi.values[tuple(first)]
    out[tuple(last)] = phi.values[tuple(last)]
    return out


def max_abs_div(v):
    return float(np.max(np.abs(div(v).values)))


def solve_helmholtz(tau, rhs, *, kappa=0.0, tol=None, x0=None):
    """Solve ((1 + kappa) I + tau * A1) x = rhs by conjugate gradients.

    tau > 0, kappa >= 0.  The relative residual is driven below ``tol``
    (default DEFAULT_LINEAR_TOL) regardless of kappa.  Raises SolverFailure
    when the iteration cap (LINEAR_ITER_FACTOR per cell) is hit first.
    """
    if tau <= 0:
        raise ParameterError("tau must be positive")
    if kappa < 0:
        raise ParameterError("kappa must be nonnegative")
    tol = DEFAULT_LINEAR_TOL if tol is None else tol
    g = rhs.grid
    inv2 = tuple(1.0 / h ** 2 for h in g.spacing)
    maxiter = LINEAR_ITER_FACTOR * g.n_cells
    x, relres, _ = _kernels.cg_helmholtz(rhs.values, 1.0 + kappa, tau, inv2,
                                         tol, maxiter)
    if relres > tol:
        raise SolverFailure("helmholtz solve stalled", residual=relres)
    return ScalarField(g, x)


def solve_neumann_poisson(rhs, *, tol=None):
    """Solve A1 x = rhs on mean-zero data (pressure problem).

    The mean of rhs is removed first (it must be compatible up to round-off);
    the returned field is mean-free.
    """
    tol = DEFAULT_LINEAR_TOL if tol is None else tol
    g = rhs.grid
    b = rhs.values - np.mean(rhs.values)
    if float(np.max(np.abs(b))) == 0.0:
        return zero_scalar(g)
    inv2 = tuple(1.0 / h ** 2 for h in g.spacing)
    maxiter = LINEAR_ITER_FACTOR * g.n_cells
    x, relres, _ = _kernels.cg_helmholtz(b, 0.0, 1.0, inv2, tol, maxiter)
    if relres > tol:
        raise SolverFailure("poisson solve stalled", residual=relres)
    x -= np.mean(x)
    return ScalarField(g, x)


# ---------------------------------------------------------------------------
# serialization: flat CSV and binary dumps with a JSON grid header
# ---------------------------------------------------------------------------

def scalar_to_csv(phi, path):
    g = phi.grid
    idx = np.indices(g.shape).reshape(g.dim, -1).T
    with open(path, "w") as f:
        f.write("# " + json.dumps({"shape": g.shape, "lengths": g.lengths})
                + "\n")
        f.write(",".join(f"i{ax}" for ax in range(g.dim)) + ",value\n")
        flat = phi.values.reshape(-1)
        for row, val in zip(idx, flat):
            f.write(",".join(str(int(i)) for i in row) + f",{val!r}\n")


def scalar_from_csv(path):
    with open(path) as f:
        header = json.loads(f.readline().lstrip("# ").strip())
        f.readline()
        vals = [float(line.rsplit(",", 1)[1]) for line in f if line.strip()]
    grid = Grid(tuple(header["shape"]), tuple(header["lengths"]))
    return ScalarField(grid, np.array(vals).reshape(grid.shape))


_MAGIC = b"CHFLOW01"


def _write_blocks(path, header, blocks):
    payload = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(payload).to_bytes(8, "little"))
        f.write(payload)
        for arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blocks(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a chemoflow binary dump")
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n).decode())
        raw = np.frombuffer(f.read(), dtype="<f8")
    return header, raw


def scalar_to_binary(phi, path, extra=None):
    header = {"kind": "scalar", "shape": phi.grid.shape,
              "lengths": phi.grid.lengths}
    if extra:
        header.update(extra)
    _write_blocks(path, header, [phi.values])


def scalar_from_binary(path):
    header, raw = _read_blocks(path)
    grid = Grid(tuple(header["shape"]), tuple(header["lengths"]))
    return ScalarField(grid, raw[:grid.n_cells].reshape(grid.shape))


def velocity_to_binary(v, path, extra=None):
    header = {"kind": "velocity", "shape": v.grid.shape,
              "lengths": v.grid.lengths}
    if extra:
        header.update(extra)
    _write_blocks(path, header, list(v.components))


def velocity_from_binary(path):
    header, raw = _read_blocks(path)
    grid = Grid(tuple(header["shape"]), tuple(header["lengths"]))
    comps = []
    pos = 0
    for ax in range(grid.dim):
        n = int(np.prod(grid.face_shape(ax)))
        comps.append(raw[pos:pos + n].reshape(grid.face_shape(ax)))
        pos += n
    return VelocityField(grid, tuple(comps))
