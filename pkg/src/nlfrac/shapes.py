"""Analytic field builders: bumps, plateau cutoffs, window bases and named shapes."""

from __future__ import annotations

from typing import Any, Mapping, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import GridError, ParameterError
from .grid import GridSpec

__all__ = [
    "cosine_bump",
    "smooth_bump",
    "node_delta",
    "plateau",
    "monomial",
    "window_bumps",
    "omega_bounds",
    "shrunk_region",
    "make_field",
]


def _radial(grid: GridSpec, center) -> np.ndarray:
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    return np.sqrt(sum((x - ci) ** 2 for x, ci in zip(grid.coords(), c)))


def cosine_bump(grid: GridSpec, center, radius: float, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """0.5*(1 + cos(pi r / R)) for r < R, zero elsewhere."""
    if radius <= 0:
        raise ParameterError("bump radius must be positive")
    r = _radial(grid, center)
    out = np.where(r < radius, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r / radius, 1.0))), 0.0)
    return out if mask is None else np.where(mask, out, 0.0)


def smooth_bump(grid: GridSpec, center, radius: float, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """C-infinity bump exp(1 - 1/(1 - (r/R)^2)), peak value 1."""
    if radius <= 0:
        raise ParameterError("bump radius must be positive")
    t = (_radial(grid, center) / radius) ** 2
    inside = t < 1.0
    out = np.zeros(grid.shape)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside]))
    return out if mask is None else np.where(mask, out, 0.0)


def node_delta(grid: GridSpec, index) -> np.ndarray:
    """Nodal indicator scaled so that its quadrature integral is 1."""
    out = grid.zeros()
    out[tuple(np.atleast_1d(index))] = 1.0 / grid.cell_volume
    return out


def _step(t: np.ndarray) -> np.ndarray:
    """C-infinity transition from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def plateau(grid: GridSpec, lo, hi, width: float, kind: str = "compact") -> np.ndarray:
    """Tensor-product cutoff equal to 1 on [lo, hi].

    ``compact``: C-infinity, zero outside [lo - width, hi + width].
    ``erf``: analytic with Gaussian spectral decay; within 1e-12 of 1 on
    [lo, hi], transition over [lo - 10*width, lo] (so spectral derivatives of
    the plateau are accurate to near machine precision).
    """
    if width <= 0:
        raise ParameterError("plateau width must be positive")
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.dim,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.dim,))
    out = np.ones(grid.shape)
    for x, a, b in zip(grid.coords(), lo, hi):
        if kind == "compact":
            out *= _step((x - (a - width)) / width) * _step(((b + width) - x) / width)
        elif kind == "erf":
            out *= 0.5 * (erf((x - a) / width + 5.0) - erf((x - b) / width - 5.0))
        else:
            raise ParameterError(f"unknown plateau kind {kind!r}")
    return out


def monomial(grid: GridSpec, sigma: Sequence[int], origin=None) -> np.ndarray:
    """(x - origin)^sigma on the nodes."""
    origin = np.zeros(grid.dim) if origin is None else np.broadcast_to(np.asarray(origin, float), (grid.dim,))
    out = np.ones(grid.shape)
    for x, p, c in zip(grid.coords(), sigma, origin):
        if p:
            out = out * (x - c) ** p
    return out


def omega_bounds(grid: GridSpec) -> tuple:
    """Axis-aligned bounding box (lo, hi) of the domain specification."""
    spec = grid.region_spec.get("omega", {})
    kind = spec.get("type", "box")
    if kind == "box":
        lo = np.atleast_1d(np.asarray(spec["lo"], dtype=float))
        hi = np.atleast_1d(np.asarray(spec["hi"], dtype=float))
    elif kind == "ball":
        c = np.atleast_1d(np.asarray(spec["center"], dtype=float))
        r = float(spec["radius"])
        lo, hi = c - r, c + r
    else:
        raise GridError(f"unknown region type {kind!r}")
    return lo, hi


def shrunk_region(grid: GridSpec, margin: float) -> np.ndarray:
    """Domain nodes kept after shrinking the domain by ``margin`` times its width."""
    if not 0 <= margin < 0.5:
        raise ParameterError("margin must lie in [0, 0.5)")
    if margin == 0:
        return grid.omega_mask.copy()
    spec = grid.region_spec["omega"]
    coords = grid.coords()
    if spec.get("type", "box") == "ball":
        c = np.atleast_1d(np.asarray(spec["center"], dtype=float))
        r = float(spec["radius"]) * (1 - 2 * margin)
        mask = sum((x - ci) ** 2 for x, ci in zip(coords, c)) < r * r
    else:
        lo, hi = omega_bounds(grid)
        pad = margin * (hi - lo)
        mask = np.ones(grid.shape, dtype=bool)
        for x, a, b in zip(coords, lo + pad, hi - pad):
            mask &= (x > a) & (x < b)
    mask &= grid.omega_mask
    if not mask.any():
        raise GridError("recovery region is empty")
    return mask


def _mask_box(grid: GridSpec, mask: np.ndarray) -> tuple:
    pts = [x[mask] for x in grid.coords()]
    return np.array([p.min() for p in pts]), np.array([p.max() for p in pts])


def window_bumps(grid: GridSpec, mask: np.ndarray, count: int, radius: Optional[float] = None) -> list:
    """Cosine bumps on a lattice of centers inside ``mask``, each exactly supported in ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise GridError("window is empty")
    if count < 1:
        raise ParameterError("count must be >= 1")
    lo, hi = _mask_box(grid, mask)
    per_axis = max(1, int(round(count ** (1.0 / grid.dim))))
    axes = []
    for a, b in zip(lo, hi):
        edges = np.linspace(a, b, per_axis + 1)
        axes.append(0.5 * (edges[:-1] + edges[1:]))
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)[:count]
    if radius is None:
        radius = max(float(np.min(hi - lo)) / per_axis, 2.0 * grid.spacing)
    out = []
    for c in centers:
        b = cosine_bump(grid, c, radius, mask)
        if not b.any():
            b = cosine_bump(grid, c, 2 * radius, mask)
        out.append(b)
    return out


def make_field(grid: GridSpec, spec: Any) -> np.ndarray:
    """Build a field from a named analytic shape.

    Supported ``type`` values: ``zero``, ``constant`` (value), ``bump`` (center,
    radius, amplitude, optional ``kind`` cosine/smooth), ``polybump`` (as bump
    plus ``sigma`` and ``origin``: amplitude*(x-origin)^sigma*bump), ``sin``
    (wavenumber per axis, amplitude), ``sum`` (list of ``terms``).  A plain number
    is a constant.  ``support`` may be ``omega``, ``exterior``, ``w1`` or ``w2``.
    """
    if isinstance(spec, (int, float)):
        return np.full(grid.shape, float(spec))
    if not isinstance(spec, Mapping):
        raise ParameterError(f"cannot build a field from {spec!r}")
    kind = spec.get("type", "zero")
    amp = float(spec.get("amplitude", 1.0))
    if kind == "zero":
        out = grid.zeros()
    elif kind == "constant":
        out = np.full(grid.shape, float(spec.get("value", amp)))
    elif kind in ("bump", "polybump"):
        builder = smooth_bump if spec.get("kind", "smooth") == "smooth" else cosine_bump
        out = amp * builder(grid, spec["center"], float(spec["radius"]))
        if kind == "polybump":
            sigma = tuple(np.atleast_1d(spec.get("sigma", [0] * grid.dim)).astype(int))
            out = out * monomial(grid, sigma, spec.get("origin", spec["center"]))
    elif kind == "sin":
        k = np.broadcast_to(np.asarray(spec.get("wavenumber", 1), dtype=float), (grid.dim,))
        out = amp * np.prod([np.sin(ki * x) for ki, x in zip(k, grid.coords())], axis=0)
    elif kind == "sum":
        out = sum((make_field(grid, t) for t in spec.get("terms", [])), grid.zeros())
    else:
        raise ParameterError(f"unknown field type {kind!r}")
    support = spec.get("support")
    masks = {
        "omega": grid.omega_mask,
        "exterior": grid.exterior_mask,
        "w1": grid.w1_mask,
        "w2": grid.w2_mask,
    }
    if support is not None:
        if support not in masks:
            raise ParameterError(f"unknown support {support!r}")
        out = np.where(masks[support], out, 0.0)
    return np.asarray(out, dtype=float)
