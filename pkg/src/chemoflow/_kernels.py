"""Hot numeric kernels: Neumann-Laplacian stencils and the conjugate-gradient
Helmholtz solve.

Two interchangeable backends live here.  The pure-numpy versions are the
reference implementation; when numba is importable (and not disabled through
the ``CHEMOFLOW_NUMBA`` environment variable, set it to ``0`` to opt out) the
inner loops are replaced by ``@njit``-compiled twins.  ``BACKEND`` records
which one is active; tests and ``benchmarks/bench_kernels.py`` compare the
two paths on identical inputs.

Every kernel treats the scalar unknown as cell-centered with homogeneous
Neumann walls (ghost reflection), so the discrete operator applied everywhere
is ``sigma * x + tau * A1 x`` with ``A1 = -div grad`` built from zero
boundary-face gradients.
"""

from __future__ import annotations

import os

import numpy as np

_ENV = os.environ.get("CHEMOFLOW_NUMBA", "1").strip().lower()
_WANT_NUMBA = _ENV not in ("0", "off", "false", "no")


# ---------------------------------------------------------------------------
# pure-numpy reference kernels
# ---------------------------------------------------------------------------

def _neg_lap_np(x, inv2):
    """A1 x = -div(grad x) with Neumann ghost reflection, any dim."""
    out = np.zeros_like(x)
    for ax, a in enumerate(inv2):
        lo = [slice(None)] * x.ndim
        hi = [slice(None)] * x.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        d = (x[tuple(hi)] - x[tuple(lo)]) * a
        out[tuple(lo)] -= d
        out[tuple(hi)] += d
    return out


def helmholtz_apply_np(x, sigma, tau, inv2):
    return sigma * x + tau * _neg_lap_np(x, inv2)


def cg_helmholtz_np(b, sigma, tau, inv2, tol, maxiter):
    """CG for (sigma*I + tau*A1) x = b.  Returns (x, relres, iters)."""
    bnorm = np.sqrt(np.sum(b * b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0.0, 0
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r)
    it = 0
    while it < maxiter:
        ap = sigma * p + tau * _neg_lap_np(p, inv2)
        alpha = rs / np.sum(p * ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = np.sum(r * r)
        it += 1
        if np.sqrt(rs_new) <= tol * bnorm:
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.sqrt(rs) / bnorm), it


# ---------------------------------------------------------------------------
# numba kernels (2-d / 3-d specializations of the same loops)
# ---------------------------------------------------------------------------

if _WANT_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        _WANT_NUMBA = False

if _WANT_NUMBA:

    @njit(cache=True)
    def _apply_2d(x, sigma, tau, ax, ay, out):
        nx, ny = x.shape
        for i in range(nx):
            for j in range(ny):
                lap = 0.0
                v = x[i, j]
                if i > 0:
                    lap += (x[i - 1, j] - v) * ax
                if i < nx - 1:
                    lap += (x[i + 1, j] - v) * ax
                if j > 0:
                    lap += (x[i, j - 1] - v) * ay
                if j < ny - 1:
                    lap += (x[i, j + 1] - v) * ay
                out[i, j] = sigma * v - tau * lap

    @njit(cache=True)
    def _apply_3d(x, sigma, tau, ax, ay, az, out):
        nx, ny, nz = x.shape
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    lap = 0.0
                    v = x[i, j, k]
                    if i > 0:
                        lap += (x[i - 1, j, k] - v) * ax
                    if i < nx - 1:
                        lap += (x[i + 1, j, k] - v) * ax
                    if j > 0:
                        lap += (x[i, j - 1, k] - v) * ay
                    if j < ny - 1:
                        lap += (x[i, j + 1, k] - v) * ay
                    if k > 0:
                        lap += (x[i, j, k - 1] - v) * az
                    if k < nz - 1:
                        lap += (x[i, j, k + 1] - v) * az
                    out[i, j, k] = sigma * v - tau * lap

    @njit(cache=True)
    def _cg_2d(b, sigma, tau, ax, ay, tol, maxiter):
        bnorm = np.sqrt(np.sum(b * b))
        x = np.zeros_like(b)
        if bnorm == 0.0:
            return x, 0.0, 0
        r = b.copy()
        p = r.copy()
        ap = np.empty_like(b)
        rs = np.sum(r * r)
        it = 0
        while it < maxiter:
            _apply_2d(p, sigma, tau, ax, ay, ap)
            alpha = rs / np.sum(p * ap)
            x += alpha * p
            r -= alpha * ap
            rs_new = np.sum(r * r)
            it += 1
            if np.sqrt(rs_new) <= tol * bnorm:
                rs = rs_new
                break
            beta = rs_new / rs
            for ii in range(p.shape[0]):
                for jj in range(p.shape[1]):
                    p[ii, jj] = r[ii, jj] + beta * p[ii, jj]
            rs = rs_new
        return x, np.sqrt(rs) / bnorm, it

    @njit(cache=True)
    def _cg_3d(b, sigma, tau, ax, ay, az, tol, maxiter):
        bnorm = np.sqrt(np.sum(b * b))
        x = np.zeros_like(b)
        if bnorm == 0.0:
            return x, 0.0, 0
        r = b.copy()
        p = r.copy()
        ap = np.empty_like(b)
        rs = np.sum(r * r)
        it = 0
        while it < maxiter:
            _apply_3d(p, sigma, tau, ax, ay, az, ap)
            alpha = rs / np.sum(p * ap)
            x += alpha * p
            r -= alpha * ap
            rs_new = np.sum(r * r)
            it += 1
            if np.sqrt(rs_new) <= tol * bnorm:
                rs = rs_new
                break
            beta = rs_new / rs
            for ii in range(p.shape[0]):
                for jj in range(p.shape[1]):
                    for kk in range(p.shape[2]):
                        p[ii, jj, kk] = r[ii, jj, kk] + beta * p[ii, jj, kk]
            rs = rs_new
        return x, np.sqrt(rs) / bnorm, it

    BACKEND = "numba"

    def helmholtz_apply(x, sigma, tau, inv2):
        out = np.empty_like(x)
        if x.ndim == 2:
            _apply_2d(x, sigma, tau, inv2[0], inv2[1], out)
        else:
            _apply_3d(x, sigma, tau, inv2[0], inv2[1], inv2[2], out)
        return out

    def cg_helmholtz(b, sigma, tau, inv2, tol, maxiter):
        if b.ndim == 2:
            x, res, it = _cg_2d(b, sigma, tau, inv2[0], inv2[1], tol, maxiter)
        else:
            x, res, it = _cg_3d(b, sigma, tau, inv2[0], inv2[1], inv2[2],
                                tol, maxiter)
        return x, float(res), int(it)

else:
    BACKEND = "numpy"
    helmholtz_apply = helmholtz_apply_np
    cg_helmholtz = cg_helmholtz_np
