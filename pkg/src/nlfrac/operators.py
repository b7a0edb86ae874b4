"""Spectral fractional Laplacian, local derivatives, the nonlinearity and B_P."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import floor
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .errors import ConsistencyError, ParameterError, StandingAssumptionWarning
from .grid import GridSpec, inner_product
from .multiindex import derivative_indices, order

__all__ = [
    "FracParams",
    "Nonlinearity",
    "frac_laplacian",
    "partial_derivative",
    "apply_Pk",
    "eval_nonlinearity",
    "bilinear_form",
]

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class FracParams:
    """Order ``s`` of the leading operator, derivative order ``m``, degree bound ``K``."""

    s: float
    m: int = 0
    K: int = 2
    dim: int = 1
    derivative: str = "spectral"

    def __post_init__(self):
        if self.s <= 0:
            raise ParameterError("s must be positive")
        if abs(self.s - round(self.s)) < 1e-12:
            raise ParameterError("s must not be an integer")
        if self.m < 0:
            raise ParameterError("m must be >= 0")
        if self.K < 2:
            raise ParameterError("K must be >= 2")
        if self.derivative not in ("spectral", "fd2"):
            raise ParameterError("derivative must be 'spectral' or 'fd2'")

    @property
    def standing_assumption(self) -> bool:
        return floor(self.s) > max(self.m, self.dim / 2)

    def check_standing_assumption(self) -> bool:
        ok = self.standing_assumption
        if not ok:
            warnings.warn(
                f"floor(s)={floor(self.s)} does not exceed max(m, dim/2)={max(self.m, self.dim / 2)}",
                StandingAssumptionWarning,
                stacklevel=2,
            )
        return ok

    def sigmas(self) -> list:
        return derivative_indices(self.dim, self.m)


@dataclass
class Nonlinearity:
    """P(u) = sum_k u^k P_k(x,D) u with P_k = sum_sigma a_{sigma,k} D^sigma.

    ``coeffs`` maps ``(k, sigma)`` to an interior-supported coefficient field.
    Missing entries are zero.
    """

    params: FracParams
    grid: GridSpec
    coeffs: Dict[Tuple[int, tuple], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (k, sigma), a in self.coeffs.items():
            sigma = tuple(int(x) for x in np.atleast_1d(sigma))
            if not 1 <= k <= self.params.K - 1:
                raise ParameterError(f"coefficient level k={k} outside 1..K-1")
            if len(sigma) != self.grid.dim or order(sigma) > self.params.m or min(sigma) < 0:
                raise ParameterError(f"sigma={sigma} invalid for dim={self.grid.dim}, m={self.params.m}")
            a = self.grid.check_field(a, f"a[{k},{sigma}]")
            if not np.all(np.isfinite(a)):
                raise ParameterError(f"a[{k},{sigma}] is not finite")
            clean[(int(k), sigma)] = self.grid.restrict_interior(a)
        self.coeffs = clean

    @classmethod
    def zero(cls, params: FracParams, grid: GridSpec) -> "Nonlinearity":
        return cls(params, grid, {})

    @property
    def is_zero(self) -> bool:
        return all(not np.any(a) for a in self.coeffs.values())

    def coefficient(self, k: int, sigma) -> np.ndarray:
        a = self.coeffs.get((k, tuple(sigma)))
        return a if a is not None else self.grid.zeros()

    def level(self, k: int) -> Dict[tuple, np.ndarray]:
        return {sig: a for (kk, sig), a in self.coeffs.items() if kk == k}

    def replace_level(self, k: int, fields: Mapping[tuple, np.ndarray]) -> "Nonlinearity":
        coeffs = {key: a for key, a in self.coeffs.items() if key[0] != k}
        coeffs.update({(k, tuple(sig)): a for sig, a in fields.items()})
        return Nonlinearity(self.params, self.grid, coeffs)

    def without_levels(self, levels: Iterable[int]) -> "Nonlinearity":
        drop = set(levels)
        return Nonlinearity(
            self.params, self.grid, {key: a for key, a in self.coeffs.items() if key[0] not in drop}
        )

    def coefficient_sum(self) -> float:
        """C' = sum over k, sigma of max |a_{sigma,k}|."""
        return float(sum(np.max(np.abs(a)) for a in self.coeffs.values()))


def _real(grid: GridSpec, vals: np.ndarray, ref: np.ndarray, gain: float = 1.0) -> np.ndarray:
    # roundoff in the input is amplified by up to the largest multiplier entry
    scale = max(float(np.max(np.abs(ref))) * max(gain, 1.0), float(np.max(np.abs(vals.real))), 1e-300)
    resid = float(np.max(np.abs(vals.imag)))
    if resid > IMAG_TOL * scale:
        raise ConsistencyError(f"imaginary residue {resid:.3e} after inverse transform")
    return np.ascontiguousarray(vals.real)


def apply_multiplier(grid: GridSpec, u, mult: np.ndarray) -> np.ndarray:
    u = grid.check_field(u, "u")
    return _real(grid, np.fft.ifftn(mult * np.fft.fftn(u)), u, float(np.max(np.abs(mult))))


def frac_laplacian(grid: GridSpec, u, s: float) -> np.ndarray:
    """(-Delta)^s u through the multiplier |xi|^{2s}."""
    return apply_multiplier(grid, u, grid.symbol(s))


def _derivative_multiplier(grid: GridSpec, sigma: tuple) -> np.ndarray:
    key = ("dmult", sigma)
    if key not in grid._cache:
        n = grid.points_per_dim
        mult = np.ones(grid.shape, dtype=complex)
        for axis, (xi, p) in enumerate(zip(grid.wavenumbers(), sigma)):
            if p == 0:
                continue
            factor = (1j * xi) ** p
            if p % 2:
                # odd derivatives of the unpaired Nyquist mode are not real
                idx = [slice(None)] * grid.dim
                idx[axis] = n // 2
                factor = factor.copy()
                factor[tuple(idx)] = 0.0
            mult = mult * factor
        grid._cache[key] = mult
    return grid._cache[key]


def _fd2_derivative(grid: GridSpec, u: np.ndarray, sigma: tuple) -> np.ndarray:
    h = grid.spacing
    out = u
    for axis, p in enumerate(sigma):
        for _ in range(p // 2):
            out = (np.roll(out, -1, axis) - 2 * out + np.roll(out, 1, axis)) / h**2
        if p % 2:
            out = (np.roll(out, -1, axis) - np.roll(out, 1, axis)) / (2 * h)
    return out


def partial_derivative(grid: GridSpec, u, sigma, method: str = "spectral") -> np.ndarray:
    """D^sigma u; spectral by default, second-order central differences for ``fd2``."""
    sigma = tuple(int(x) for x in np.atleast_1d(sigma))
    u = grid.check_field(u, "u")
    if not any(sigma):
        return u.copy()
    if method == "fd2":
        return _fd2_derivative(grid, u, sigma)
    return apply_multiplier(grid, u, _derivative_multiplier(grid, sigma))


def apply_Pk(grid: GridSpec, u, k: int, P: Nonlinearity) -> np.ndarray:
    """P_k(x,D) u = sum_sigma a_{sigma,k} D^sigma u."""
    if not 1 <= k <= P.params.K - 1:
        raise ParameterError(f"k={k} outside 1..K-1")
    out = grid.zeros()
    for sigma, a in P.level(k).items():
        if not np.any(a):
            continue
        out += a * partial_derivative(grid, u, sigma, P.params.derivative)
    return out


def eval_nonlinearity(grid: GridSpec, u, P: Nonlinearity) -> np.ndarray:
    """P(u) = sum_{k=1}^{K-1} u^k P_k(x,D) u (interior-supported)."""
    u = grid.check_field(u, "u")
    out = grid.zeros()
    for k in range(1, P.params.K):
        if not P.level(k):
            continue
        out += u**k * apply_Pk(grid, u, k, P)
    return out


def bilinear_form(
    grid: GridSpec,
    u,
    v,
    q,
    P: Optional[Nonlinearity],
    s: float,
) -> float:
    """B_P(u, v) = <(-D)^{s/2}u, (-D)^{s/2}v> + int_Omega q u v + int_Omega P(u) v."""
    q = grid.check_field(q, "q")
    if np.any(q[grid.omega_mask] < -1e-12):
        warnings.warn("negative potential in bilinear form", stacklevel=2)
    half_u = frac_laplacian(grid, u, s / 2)
    half_v = frac_laplacian(grid, v, s / 2)
    total = inner_product(grid, half_u, half_v)
    total += inner_product(grid, q * u, v, grid.omega_mask)
    if P is not None and P.coeffs:
        total += inner_product(grid, eval_nonlinearity(grid, u, P), v, grid.omega_mask)
    return float(total)
