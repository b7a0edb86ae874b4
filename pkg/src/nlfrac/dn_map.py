"""DN-map pairings, DN matrices over exterior bases and their epsilon-derivatives."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ParameterError
from .grid import GridSpec, inner_product
from .linear_solver import interior_system
from .nonlinear_solver import ContractionConfig, solve_nlfse
from .operators import Nonlinearity, bilinear_form, eval_nonlinearity, frac_laplacian

__all__ = [
    "DNData",
    "quadratic_form",
    "dn_pair",
    "dn_matrix",
    "dn_derivative",
    "lemma_derivative_value",
]


def quadratic_form(grid: GridSpec, u, v, q, s: float) -> float:
    """<(-Delta)^s u, v> over the box plus int_Omega q u v (the P-free part of B_P)."""
    return inner_product(grid, frac_laplacian(grid, u, s), v) + inner_product(
        grid, q * u, v, grid.omega_mask
    )


def dn_pair(grid: GridSpec, f, g, q, P: Nonlinearity, cfg: ContractionConfig = ContractionConfig()) -> float:
    """<Lambda_P f, g> = B_P(u_f, g)."""
    u = solve_nlfse(grid, q, P, f, cfg).solution
    return bilinear_form(grid, u, g, q, P, P.params.s)


@dataclass
class DNData:
    basis_in: List[np.ndarray]
    basis_out: List[np.ndarray]
    pairings: np.ndarray
    deriv_pairings: Dict[str, float] = field(default_factory=dict)
    descriptors: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairings = np.asarray(self.pairings, dtype=float)
        if self.pairings.shape != (len(self.basis_in), len(self.basis_out)):
            raise ParameterError("pairing matrix does not match basis sizes")
        if not np.all(np.isfinite(self.pairings)):
            raise ParameterError("pairing matrix has non-finite entries")

    def to_json(self) -> str:
        doc = {
            "descriptors": self.descriptors,
            "shape": list(self.basis_in[0].shape) if self.basis_in else [],
            "basis_in": [b.ravel().tolist() for b in self.basis_in],
            "basis_out": [b.ravel().tolist() for b in self.basis_out],
            "pairings": self.pairings.tolist(),
            "deriv_pairings": self.deriv_pairings,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DNData":
        doc = json.loads(text)
        shape = tuple(doc["shape"])
        return cls(
            [np.asarray(b).reshape(shape) for b in doc["basis_in"]],
            [np.asarray(b).reshape(shape) for b in doc["basis_out"]],
            np.asarray(doc["pairings"], dtype=float).reshape(len(doc["basis_in"]), len(doc["basis_out"])),
            doc.get("deriv_pairings", {}),
            doc.get("descriptors", {}),
        )


def dn_matrix(
    grid: GridSpec,
    q,
    P: Nonlinearity,
    basis_in: Sequence[np.ndarray],
    basis_out: Sequence[np.ndarray],
    cfg: ContractionConfig = ContractionConfig(),
    check_support: bool = True,
) -> DNData:
    """pairings[i, j] = <Lambda_P f_i, g_j>; one nonlinear solve per input."""
    if check_support:
        for b in basis_in:
            if np.any(b[~grid.w1_mask]):
                raise ParameterError("input basis function not supported in W1")
        for b in basis_out:
            if np.any(b[~grid.w2_mask]):
                raise ParameterError("output basis function not supported in W2")
    s = P.params.s
    M = np.zeros((len(basis_in), len(basis_out)))
    for i, f in enumerate(basis_in):
        if not np.any(f):
            continue
        u = solve_nlfse(grid, q, P, f, cfg).solution
        for j, g in enumerate(basis_out):
            M[i, j] = bilinear_form(grid, u, g, q, P, s)
    return DNData(list(basis_in), list(basis_out), M)


def dn_derivative(
    alpha: Sequence[int],
    f_list: Sequence[np.ndarray],
    g,
    eps_step: float,
    grid: GridSpec,
    q,
    P: Nonlinearity,
    cfg: ContractionConfig = ContractionConfig(),
    split_linear: bool = True,
):
    """Mixed one-sided difference of eps -> <Lambda_P(eps . f), g> at eps = 0.

    ``g`` may be a single field or a list (one value returned per field).  With
    ``split_linear`` the pairing is evaluated as the linear DN part plus the
    nonlinear remainder; the linear part is differenced exactly, which leaves
    the result unchanged in exact arithmetic and removes cancellation noise.
    """
    alpha = tuple(int(a) for a in alpha)
    if any(a not in (0, 1) for a in alpha) or len(alpha) != len(f_list):
        raise ParameterError("alpha must be binary with one entry per data field")
    if eps_step <= 0:
        raise ParameterError("eps_step must be positive")
    single = isinstance(g, np.ndarray) and g.ndim == grid.dim
    gs = [g] if single else list(g)
    s = P.params.s
    support = [i for i, a in enumerate(alpha) if a]
    out = np.zeros(len(gs))
    if not support:
        return out[0] if single else out
    k = len(support)
    for r in range(1, k + 1):
        for S in itertools.combinations(support, r):
            f = sum((eps_step * f_list[i] for i in S), grid.zeros())
            rep = solve_nlfse(grid, q, P, f, cfg)
            sign = (-1) ** (k - r)
            if split_linear:
                v = rep.correction
                Pu = eval_nonlinearity(grid, rep.solution, P)
                Av = frac_laplacian(grid, v, s)
                for j, gj in enumerate(gs):
                    val = inner_product(grid, Av, gj) + inner_product(grid, q * v + Pu, gj, grid.omega_mask)
                    out[j] += sign * val
            else:
                for j, gj in enumerate(gs):
                    out[j] += sign * bilinear_form(grid, rep.solution, gj, q, P, s)
    out /= eps_step**k
    if split_linear and k == 1:
        v1 = interior_system(grid, s, q).solve(None, f_list[support[0]])
        for j, gj in enumerate(gs):
            out[j] += quadratic_form(grid, v1, gj, q, s)
    return out[0] if single else out


def lemma_derivative_value(grid: GridSpec, w_alpha, T_alpha, g, q, s: float) -> float:
    """<(-Delta)^{s/2} w, (-Delta)^{s/2} g> + int q w g + int_Omega T g."""
    return quadratic_form(grid, w_alpha, g, q, s) + inner_product(grid, T_alpha, g, grid.omega_mask)
