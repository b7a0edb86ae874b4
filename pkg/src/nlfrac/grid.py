"""Periodic box discretization, region masks and quadrature.

Fields are plain ``numpy`` arrays of shape ``grid.shape``; node ``i`` along an
axis sits at ``x_i = i * L / N``.  The unbounded space of the continuous model
is replaced by the periodic box, and "the exterior" is the discrete complement
of the domain inside the box.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from .errors import GridError

__all__ = [
    "GridSpec",
    "build_grid",
    "inner_product",
    "sobolev_norm",
    "l2_norm",
    "max_norm",
]


@dataclass(frozen=True, eq=False)
class GridSpec:
    dim: int
    points_per_dim: int
    box_length: float
    omega_mask: np.ndarray
    w1_mask: np.ndarray
    w2_mask: np.ndarray
    buffer_nodes: int = 4
    region_spec: Mapping[str, Any] = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("omega_mask", "w1_mask", "w2_mask"):
            arr = np.asarray(getattr(self, name), dtype=bool)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        ext = ~self.omega_mask
        ext.setflags(write=False)
        object.__setattr__(self, "exterior_mask", ext)

    # geometry -----------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return (self.points_per_dim,) * self.dim

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    def coords(self) -> tuple:
        """Node coordinates, one broadcastable array per axis (``ij`` indexing)."""
        if "coords" not in self._cache:
            x = np.arange(self.points_per_dim) * self.spacing
            self._cache["coords"] = tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))
        return self._cache["coords"]

    def wavenumbers(self) -> tuple:
        """Angular frequencies (2*pi/L)*{-N/2..N/2-1}, in FFT order, per axis."""
        if "xi" not in self._cache:
            k = np.fft.fftfreq(self.points_per_dim, d=1.0 / self.points_per_dim)
            k = k * (2.0 * np.pi / self.box_length)
            self._cache["xi"] = tuple(np.meshgrid(*([k] * self.dim), indexing="ij"))
        return self._cache["xi"]

    def xi_squared(self) -> np.ndarray:
        if "xi2" not in self._cache:
            self._cache["xi2"] = sum(k**2 for k in self.wavenumbers())
        return self._cache["xi2"]

    def symbol(self, s: float) -> np.ndarray:
        """|xi|^{2s} on grid frequencies, zero at the zero frequency."""
        key = ("symbol", float(s))
        if key not in self._cache:
            xi2 = self.xi_squared()
            sym = np.zeros_like(xi2)
            nz = xi2 > 0
            sym[nz] = xi2[nz] ** s
            self._cache[key] = sym
        return self._cache[key]

    # masks --------------------------------------------------------------
    @property
    def n_interior(self) -> int:
        return int(self.omega_mask.sum())

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def check_field(self, u, name: str = "field") -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape:
            raise GridError(f"{name} has shape {u.shape}, grid expects {self.shape}")
        if not np.all(np.isfinite(u)):
            raise GridError(f"{name} has non-finite values")
        return u

    def restrict_interior(self, u) -> np.ndarray:
        """Zero ``u`` on exterior nodes (interior-supported copy)."""
        return np.where(self.omega_mask, u, 0.0)

    def restrict_exterior(self, u) -> np.ndarray:
        """Zero ``u`` on domain nodes (exterior-supported copy)."""
        return np.where(self.omega_mask, 0.0, u)


def _box_mask(coords, lo, hi, closed: bool) -> np.ndarray:
    mask = np.ones(coords[0].shape, dtype=bool)
    for x, a, b in zip(coords, lo, hi):
        mask &= (x >= a) & (x <= b) if closed else (x > a) & (x < b)
    return mask


def _region_mask(coords, spec: Mapping[str, Any], dim: int, closed: bool) -> np.ndarray:
    kind = spec.get("type", "box")
    if kind == "box":
        lo = np.atleast_1d(np.asarray(spec["lo"], dtype=float))
        hi = np.atleast_1d(np.asarray(spec["hi"], dtype=float))
        if lo.size != dim or hi.size != dim:
            raise GridError(f"box bounds must have {dim} entries")
        if np.any(hi <= lo):
            raise GridError("box requires lo < hi on every axis")
        return _box_mask(coords, lo, hi, closed)
    if kind == "ball":
        c = np.atleast_1d(np.asarray(spec["center"], dtype=float))
        r = float(spec["radius"])
        if c.size != dim or r <= 0:
            raise GridError("ball needs a center with dim entries and radius > 0")
        d2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
        return d2 <= r * r if closed else d2 < r * r
    raise GridError(f"unknown region type {kind!r}")


def _dilate(mask: np.ndarray, width: int) -> np.ndarray:
    out = mask.copy()
    for axis in range(mask.ndim):
        grown = out.copy()
        for shift in range(1, width + 1):
            grown |= np.roll(out, shift, axis=axis) | np.roll(out, -shift, axis=axis)
        out = grown
    return out


def build_grid(
    dim: int,
    points_per_dim: int,
    box_length: float,
    region_spec: Mapping[str, Any],
    buffer_nodes: int = 4,
    window_gap: int = 1,
) -> GridSpec:
    """Build a periodic grid with masks for the domain and two exterior windows.

    ``region_spec`` has keys ``omega`` (box or ball, open), and optionally ``w1``
    and ``w2`` (closed boxes).  ``w2`` may coincide with ``w1``.  Windows must
    keep ``window_gap`` exterior nodes between themselves and the domain.
    """
    if dim not in (1, 2):
        raise GridError("dim must be 1 or 2")
    n = int(points_per_dim)
    if n < 8 or n & (n - 1):
        raise GridError("points_per_dim must be a power of two >= 8")
    if box_length <= 0:
        raise GridError("box_length must be positive")
    if "omega" not in region_spec:
        raise GridError("region_spec needs an 'omega' entry")

    x = np.arange(n) * (box_length / n)
    coords = tuple(np.meshgrid(*([x] * dim), indexing="ij"))
    omega = _region_mask(coords, region_spec["omega"], dim, closed=False)
    if not omega.any():
        raise GridError("omega contains no grid nodes")
    if omega.all():
        raise GridError("exterior empty")

    idx = np.nonzero(omega)
    for axis_idx in idx:
        if axis_idx.min() < buffer_nodes or axis_idx.max() > n - 1 - buffer_nodes:
            raise GridError(
                f"omega comes within {buffer_nodes} nodes of the box boundary (buffer violated)"
            )

    near_omega = _dilate(omega, window_gap)
    windows = []
    for key in ("w1", "w2"):
        spec = region_spec.get(key)
        if spec is None:
            windows.append(np.zeros_like(omega))
            continue
        w = _region_mask(coords, spec, dim, closed=True)
        if not w.any():
            raise GridError(f"window {key} contains no grid nodes")
        if (w & omega).any():
            raise GridError(f"window {key} overlaps omega")
        if (w & near_omega).any():
            raise GridError(f"window {key} is closer than {window_gap} node(s) to omega")
        windows.append(w)

    return GridSpec(
        dim=dim,
        points_per_dim=n,
        box_length=float(box_length),
        omega_mask=omega,
        w1_mask=windows[0],
        w2_mask=windows[1],
        buffer_nodes=buffer_nodes,
        region_spec=dict(region_spec),
    )


def inner_product(grid: GridSpec, u, v, mask: Optional[np.ndarray] = None) -> float:
    """Uniform-weight quadrature of ``u*v`` over ``mask`` (default: whole box)."""
    u = grid.check_field(u, "u")
    v = grid.check_field(v, "v")
    prod = u * v
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != grid.shape:
            raise GridError("mask shape does not match grid")
        prod = prod[mask]
    return float(grid.cell_volume * np.sum(prod))


def sobolev_norm(grid: GridSpec, u, a: float) -> float:
    """Discrete H^a norm with multiplier <xi>^a, computed through Parseval."""
    u = grid.check_field(u, "u")
    uh = np.fft.fftn(u)
    weight = (1.0 + grid.xi_squared()) ** a
    total = np.sum(weight * np.abs(uh) ** 2) / grid.size
    return float(np.sqrt(grid.cell_volume * total))


def l2_norm(grid: GridSpec, u, mask: Optional[np.ndarray] = None) -> float:
    return float(np.sqrt(max(inner_product(grid, u, u, mask), 0.0)))


def max_norm(u, mask: Optional[np.ndarray] = None) -> float:
    u = np.asarray(u)
    if mask is not None:
        u = u[np.asarray(mask, dtype=bool)]
    return float(np.max(np.abs(u))) if u.size else 0.0
