"""Reproducible Wiener increments for the two driving processes.

Each path owns two independent streams (one for the velocity process, one
for the concentration process) generated by counter-based Philox bit
generators keyed by (base_seed, path_index, process id).  Streams are
therefore order-independent: any worker can regenerate any path.

Refinement mode draws the increments once at the finest resolution of a
convergence study and builds every coarser level by pairwise summation, so
all resolutions share one underlying Brownian path bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

_PROCESS_W = 0x57  # velocity stream tag
_PROCESS_B = 0x42  # concentration stream tag


@dataclass(frozen=True)
class PathSeed:
    base_seed: int
    path_index: int

    def __post_init__(self):
        if self.path_index < 0:
            raise ParameterError("path_index must be nonnegative")


@dataclass(frozen=True)
class Increments:
    """dW drives the velocity noise, dB the concentration noise."""

    dw: np.ndarray  # (n_steps, dim)
    db: np.ndarray  # (n_steps, dim)
    dt: float

    @property
    def n_steps(self):
        return self.dw.shape[0]


def _stream(seed, process, n, dim, dt):
    # 128-bit Philox key: base seed word + (path, process) word
    word0 = np.uint64(seed.base_seed & 0xFFFFFFFFFFFFFFFF)
    word1 = np.uint64(((seed.path_index & 0xFFFFFFFFFFFFFF) << 8) | process)
    gen = np.random.Generator(np.random.Philox(key=(word0, word1)))
    return gen.standard_normal((n, dim)) * np.sqrt(dt)


def _coarsen_by_halving(fine, n_target):
    out = fine
    while out.shape[0] > n_target:
        if out.shape[0] % 2:
            raise ParameterError("refinement chain requires power-of-two "
                                 "step ratios")
        out = out[0::2] + out[1::2]
    return out


def sample_increments(seed, n_steps, dt, dim, *, fine_steps=None):
    """Draw the two increment streams for one path.

    Without ``fine_steps`` the increments are N(0, dt) drawn directly at the
    requested resolution.  With ``fine_steps`` (refinement mode) they are
    drawn at that finer resolution and summed pairwise down to ``n_steps``;
    the ratio must be a power of two so every level of a study reproduces
    coarser levels exactly.
    """
    if n_steps < 1:
        raise ParameterError("need at least one step")
    if dt <= 0:
        raise ParameterError("dt must be positive")
    if dim not in (2, 3):
        raise ParameterError("dim must be 2 or 3")
    if fine_steps is None:
        dw = _stream(seed, _PROCESS_W, n_steps, dim, dt)
        db = _stream(seed, _PROCESS_B, n_steps, dim, dt)
        return Increments(dw, db, float(dt))
    if fine_steps % n_steps:
        raise ParameterError("fine_steps must be a multiple of n_steps")
    ratio = fine_steps // n_steps
    if ratio & (ratio - 1):
        raise ParameterError("refinement ratio must be a power of two")
    dt_fine = dt * n_steps / fine_steps
    dw = _coarsen_by_halving(
        _stream(seed, _PROCESS_W, fine_steps, dim, dt_fine), n_steps)
    db = _coarsen_by_halving(
        _stream(seed, _PROCESS_B, fine_steps, dim, dt_fine), n_steps)
    return Increments(dw, db, float(dt))
