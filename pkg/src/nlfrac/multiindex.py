"""Multi-index bookkeeping: factorials, binomials, decompositions, permutations.

Multi-indices are plain tuples of nonnegative ints.  ``alpha``/``beta`` index
the small-parameter slots, ``sigma`` indexes spatial derivatives.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from math import factorial, prod
from typing import Iterator, Sequence

from .errors import ParameterError

MAX_ORDER = 12

MultiIndex = tuple


def order(alpha: Sequence[int]) -> int:
    return int(sum(alpha))


def mi_factorial(alpha: Sequence[int]) -> int:
    return prod(factorial(a) for a in alpha)


def unit(length: int, slot: int) -> MultiIndex:
    e = [0] * length
    e[slot] = 1
    return tuple(e)


def add(a: Sequence[int], b: Sequence[int]) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def sub(a: Sequence[int], b: Sequence[int]) -> MultiIndex:
    return tuple(x - y for x, y in zip(a, b))


def leq(a: Sequence[int], b: Sequence[int]) -> bool:
    return all(x <= y for x, y in zip(a, b))


def _guard(alpha: Sequence[int]) -> None:
    if any(a < 0 for a in alpha):
        raise ParameterError(f"negative multi-index entry in {tuple(alpha)}")
    if order(alpha) > MAX_ORDER:
        raise ParameterError(f"|alpha| = {order(alpha)} exceeds overflow guard {MAX_ORDER}")


def binomial(alpha: Sequence[int], beta: Sequence[int]) -> int:
    """alpha! / (beta! (alpha-beta)!) for beta <= alpha."""
    _guard(alpha)
    if not leq(beta, alpha):
        raise ParameterError(f"{tuple(beta)} is not <= {tuple(alpha)}")
    return mi_factorial(alpha) // (mi_factorial(beta) * mi_factorial(sub(alpha, beta)))


def multinomial(beta: Sequence[int], parts: Sequence[Sequence[int]]) -> int:
    """beta! / (beta_1! ... beta_l!) where the parts sum to beta."""
    _guard(beta)
    total = tuple(sum(col) for col in zip(*parts)) if parts else tuple(0 for _ in beta)
    if total != tuple(beta):
        raise ParameterError("parts do not sum to beta")
    return mi_factorial(beta) // prod(mi_factorial(p) for p in parts)


def multinomial_weight(alpha, beta, parts) -> int:
    """binom(alpha, beta) * multinom(beta; parts), exact integer."""
    return binomial(alpha, beta) * multinomial(beta, parts)


def multi_indices(length: int, max_order: int, min_order: int = 0) -> list:
    """All multi-indices with min_order <= |alpha| <= max_order, graded then lexicographic."""
    out = []
    for k in range(min_order, max_order + 1):
        out.extend(of_order(length, k))
    return out


@lru_cache(maxsize=None)
def _of_order(length: int, k: int) -> tuple:
    if length == 0:
        return ((),) if k == 0 else ()
    res = []
    for first in range(k, -1, -1):
        for rest in _of_order(length - 1, k - first):
            res.append((first,) + rest)
    return tuple(res)


def of_order(length: int, k: int) -> list:
    return list(_of_order(length, k))


def binary_indices(length: int, max_order: int, min_order: int = 1) -> list:
    return [a for a in multi_indices(length, max_order, min_order) if max(a, default=0) <= 1]


def sub_indices(alpha: Sequence[int], proper: bool = False) -> list:
    """All beta <= alpha (graded order); excludes alpha itself when ``proper``."""
    ranges = [range(a + 1) for a in alpha]
    out = [tuple(b) for b in itertools.product(*ranges)]
    if proper:
        out = [b for b in out if b != tuple(alpha)]
    return sorted(out, key=lambda b: (order(b), tuple(-x for x in b)))


def ordered_decompositions(alpha: Sequence[int], parts: int) -> Iterator[tuple]:
    """Ordered tuples of ``parts`` nonzero multi-indices summing to ``alpha``."""
    alpha = tuple(alpha)
    if parts == 1:
        if order(alpha) > 0:
            yield (alpha,)
        return
    for first in sub_indices(alpha):
        if order(first) == 0 or order(first) > order(alpha) - (parts - 1):
            continue
        for rest in ordered_decompositions(sub(alpha, first), parts - 1):
            yield (first,) + rest


def compositions(total: int, parts: int) -> Iterator[tuple]:
    """Ordered tuples of ``parts`` positive integers summing to ``total``."""
    if parts == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def derivative_indices(dim: int, m: int) -> list:
    """Spatial multi-indices sigma with |sigma| <= m, ordered by |sigma|."""
    return multi_indices(dim, m)


def monomial_derivative(sigma_prime: Sequence[int], sigma: Sequence[int]) -> int:
    """Coefficient c with D^{sigma'} x^sigma = c x^{sigma - sigma'}; zero unless sigma' <= sigma."""
    if not leq(sigma_prime, sigma):
        return 0
    return prod(factorial(s) // factorial(s - sp) for s, sp in zip(sigma, sigma_prime))


def permutation_diagonal_count(k: int, sigma: Sequence[int]) -> int:
    """Diagonal weight of the monomial-target functional for level k.

    With slot 0 carrying ``x^sigma`` and every other slot carrying the constant
    1, enumerate ``pi`` in S_k and add the value of
    ``h_{pi_1} ... h_{pi_{k-1}} D^sigma h_{pi_k}`` at the x^0 coefficient, i.e.
    the factor multiplying ``a_sigma`` in the reduced identity.
    """
    total = 0
    zero = tuple(0 for _ in sigma)
    for perm in itertools.permutations(range(k)):
        d_slot = perm[-1]
        if d_slot == 0:
            total += monomial_derivative(sigma, sigma)
        elif tuple(sigma) == zero:
            total += 1
    return total
