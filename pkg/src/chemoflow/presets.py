"""Named initial-data formulas sampled on the grid.

A preset string looks like ``gaussian-bump amplitude=1 center=0.5,0.6
width=0.15``; unknown names or malformed parameters raise ParameterError
with the offending token.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .fields import ScalarField, scalar_from_function, zero_scalar


def _parse_kv(tokens):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ParameterError(f"malformed preset parameter {tok!r}")
        key, val = tok.split("=", 1)
        parts = val.split(",")
        try:
            nums = [float(p) for p in parts]
        except ValueError as exc:
            raise ParameterError(f"non-numeric preset value {val!r}") \
                from exc
        out[key] = nums[0] if len(nums) == 1 else tuple(nums)
    return out


def scalar_preset(grid, text):
    """Build a scalar field from a preset description string."""
    tokens = text.split()
    if not tokens:
        raise ParameterError("empty preset")
    name = tokens[0]
    kv = _parse_kv(tokens[1:])
    if name == "zero" or name == "none":
        return zero_scalar(grid)
    if name == "constant":
        value = kv.get("value", 1.0)
        return ScalarField(grid, np.full(grid.shape, float(value)))
    if name == "gaussian-bump":
        amp = float(kv.get("amplitude", 1.0))
        width = float(kv.get("width", 0.15))
        center = kv.get("center", tuple(l / 2 for l in grid.lengths))
        if np.isscalar(center):
            center = (center,) * grid.dim
        if len(center) != grid.dim:
            raise ParameterError("center must match the grid dimension")

        def bump(*coords):
            r2 = sum((x - c) ** 2 for x, c in zip(coords, center))
            return amp * np.exp(-r2 / (2 * width ** 2))

        return scalar_from_function(grid, bump)
    if name == "checkerboard":
        amp = float(kv.get("amplitude", 1.0))
        blocks = int(kv.get("blocks", 4))

        def board(*coords):
            s = np.zeros_like(coords[0], dtype=int)
            for x, l in zip(coords, grid.lengths):
                s = s + np.floor(x / l * blocks).astype(int)
            return amp * np.where(s % 2 == 0, 1.0, -1.0)

        return scalar_from_function(grid, board)
    if name == "linear":
        slope = kv.get("slope", (0.0,) * grid.dim)
        if np.isscalar(slope):
            slope = (slope,) * grid.dim
        if len(slope) != grid.dim:
            raise ParameterError("slope must match the grid dimension")

        def plane(*coords):
            return sum(s * x for s, x in zip(slope, coords))

        return scalar_from_function(grid, plane)
    raise ParameterError(f"unknown preset {name!r}")
