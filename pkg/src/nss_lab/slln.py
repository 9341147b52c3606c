"""Uniformization and dominated-coupling constructions for adapted sequences.

The pipeline: map an adapted sequence through its conditional CDFs (with atom
randomization) to i.i.d. uniforms, push the uniforms through a generalized
inverse CDF of a dominating law, and obtain an i.i.d. sequence that bounds the
original one pathwise.  Sample averages of the coupled sequence then control
the running averages of the original sequence from one side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "ConditionalCdf",
    "DominatingLaw",
    "CouplingViolationError",
    "uniformize",
    "inverse_cdf_inf",
    "inverse_cdf_sup",
    "dominated_coupling_upper",
    "dominated_coupling_lower",
]

_BISECT_TOL = 1e-12
_BRACKET_BUDGET = 200


class CouplingViolationError(RuntimeError):
    """Pathwise coupling inequality failed: the dominance hypothesis is wrong."""

    def __init__(self, index: int, x: float, z: float, side: str):
        super().__init__(
            f"coupling violated at index {index}: sample {x!r} vs coupled {z!r} "
            f"({side} dominance hypothesis does not hold)"
        )
        self.index = index


@dataclass(frozen=True)
class ConditionalCdf:
    """Conditional distribution of the next element given the history so far.

    ``eval(s, history)`` is P{X_n <= s | history}; ``left_limit`` its left
    limit in s.  For continuous laws the two coincide.
    """

    eval: Callable[[float, Tuple[float, ...]], float]
    left_limit: Callable[[float, Tuple[float, ...]], float]

    @classmethod
    def from_marginal(cls, cdf: Callable[[float], float],
                      left: Optional[Callable[[float], float]] = None) -> "ConditionalCdf":
        """History-independent (i.i.d.) conditional CDF from a marginal."""
        if left is None:
            left = cdf
        return cls(eval=lambda s, _h: cdf(s), left_limit=lambda s, _h: left(s))


@dataclass(frozen=True)
class DominatingLaw:
    """A fixed law given by its CDF and survival function."""

    cdf: Callable[[float], float]
    survival: Callable[[float], float]

    @classmethod
    def from_cdf(cls, cdf: Callable[[float], float]) -> "DominatingLaw":
        return cls(cdf=cdf, survival=lambda s: 1.0 - cdf(s))


def uniformize(x_n: float, history: Sequence[float], xi_n: float,
               g: ConditionalCdf) -> float:
    """One step of the atom-randomized probability integral transform.

    Returns ``g(x-) + xi * (g(x) - g(x-))``, which is U(0,1) when the
    conditional CDF is correct and xi is an independent uniform draw.
    """
    if not (0.0 <= xi_n <= 1.0):
        raise ValueError(f"xi_n={xi_n!r} outside [0, 1]")
    hist = tuple(history)
    lo = float(g.left_limit(x_n, hist))
    hi = float(g.eval(x_n, hist))
    if hi < lo - 1e-12:
        raise ValueError(
            f"conditional CDF not monotone at {x_n!r}: left limit {lo!r} > value {hi!r}"
        )
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, lo), 1.0)
    return lo + xi_n * (hi - lo)


def _expand_bracket(predicate, start: float, direction: float) -> float:
    """Geometric expansion from start until predicate holds; returns the point."""
    s = start
    for _ in range(_BRACKET_BUDGET):
        if predicate(s):
            return s
        s = s * 2.0 if s * direction > 0 else direction
    raise RuntimeError("bracket expansion budget exhausted (pathological CDF)")


def inverse_cdf_inf(y: float, f: DominatingLaw, tol: float = _BISECT_TOL) -> float:
    """Generalized inverse ``inf{s | F(s) >= y}`` by monotone bisection."""
    if not (0.0 < y < 1.0):
        raise ValueError(f"y={y!r} outside (0, 1)")
    hi = _expand_bracket(lambda s: f.cdf(s) >= y, 1.0, 1.0)
    lo = _expand_bracket(lambda s: f.cdf(s) < y, -1.0, -1.0)
    for _ in range(_BRACKET_BUDGET):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f.cdf(mid) >= y:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol:
            break
    return hi


def inverse_cdf_sup(y: float, f: DominatingLaw, tol: float = _BISECT_TOL) -> float:
    """Generalized inverse ``sup{s | F(s) <= y}``.

    Agrees with :func:`inverse_cdf_inf` except where the CDF has a flat
    stretch exactly at level y (a probability-zero event for uniform y).
    """
    if not (0.0 < y < 1.0):
        raise ValueError(f"y={y!r} outside (0, 1)")
    hi = _expand_bracket(lambda s: f.cdf(s) > y, 1.0, 1.0)
    lo = _expand_bracket(lambda s: f.cdf(s) <= y, -1.0, -1.0)
    for _ in range(_BRACKET_BUDGET):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f.cdf(mid) <= y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return lo


def _coupled_sequence(xs: Sequence[float], g: ConditionalCdf, f: DominatingLaw,
                      seed: int, upper: bool) -> np.ndarray:
    rng = np.random.default_rng(seed)
    history: list = []
    out = np.empty(len(xs))
    for n, x in enumerate(xs):
        x = float(x)
        xi = float(rng.uniform())
        y = uniformize(x, history, xi, g)
        if upper:
            z = inverse_cdf_sup(y, f)
            # F(x) <= y makes x a member of {s | F(s) <= y}, so the true
            # supremum is >= x; taking the max removes bisection round-off
            # without changing the mathematical value.
            if math.isfinite(x) and f.cdf(x) <= y:
                z = max(z, x)
            if z < x:
                raise CouplingViolationError(n, x, z, "upper")
        else:
            z = inverse_cdf_inf(y, f)
            if math.isfinite(x) and f.cdf(x) >= y:
                z = min(z, x)
            if z > x:
                raise CouplingViolationError(n, x, z, "lower")
        out[n] = z
        history.append(x)
    return out


def dominated_coupling_upper(xs: Sequence[float], g: ConditionalCdf,
                             f: DominatingLaw, seed: int) -> np.ndarray:
    """Couple an adapted sequence to i.i.d. draws from f with Z_n >= X_n.

    Valid when the conditional survival of every X_n is dominated by the
    survival of f (light-tail hypothesis); a pathwise violation raises
    :class:`CouplingViolationError` with the offending index.
    """
    return _coupled_sequence(xs, g, f, seed, upper=True)


def dominated_coupling_lower(xs: Sequence[float], g: ConditionalCdf,
                             f: DominatingLaw, seed: int) -> np.ndarray:
    """Mirror coupling with Z_n <= X_n; supports +inf entries in xs."""
    return _coupled_sequence(xs, g, f, seed, upper=False)
