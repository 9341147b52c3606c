"""Closed-form crossing-time bounds for exponentially dissipative stochastic systems.

Everything here is a pure function of the dissipation rate ``c``, the noise
gain ceiling ``gamma_max`` and the level pair ``(v0, v1)``, so the whole module
is testable without any simulation machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

__all__ = [
    "LevelPair",
    "BoundSet",
    "lambert_w_lower",
    "beta_star",
    "optimal_v0",
    "expected_up_cross",
    "expected_down_cross",
    "up_cross_survival_bound",
    "down_cross_survival_bound",
    "bound_b",
    "fractile_q",
    "occupancy_ratio_bound",
    "make_bound_set",
]

_BRANCH_POINT = -math.exp(-1.0)


def lambert_w_lower(x: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Lower branch of the Lambert W function on [-1/e, 0).

    Solves ``w * exp(w) = x`` for ``w <= -1`` by bracketed bisection on the
    log-domain residual ``w + ln(-w) - ln(-x)`` (safe against ``exp``
    underflow for tiny ``|x|``), followed by a short Halley polish.

    Raises
    ------
    ValueError
        If ``x`` lies outside ``[-1/e, 0)`` or ``tol <= 0``.
    RuntimeError
        If the iteration budget is exhausted before ``|w e^w - x| <= tol``.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    if not (_BRANCH_POINT <= x < 0.0):
        raise ValueError(f"x={x!r} outside the lower-branch domain [-1/e, 0)")
    if x == _BRANCH_POINT:
        return -1.0

    ln_neg_x = math.log(-x)

    def resid(w: float) -> float:
        # ln(-x) = w + ln(-w) on the lower branch; increasing in w for w < -1
        return w + math.log(-w) - ln_neg_x

    hi = -1.0
    lo = -2.0
    expansions = 0
    while resid(lo) > 0.0:
        lo *= 2.0
        expansions += 1
        if expansions > 64:
            raise RuntimeError("failed to bracket the lower branch")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if resid(mid) > 0.0:
            hi = mid
        else:
            lo = mid

    w = 0.5 * (lo + hi)
    if -700.0 < w < -1.01:
        # Halley refinement on f(w) = w e^w - x; skipped near the branch
        # point (w + 1 -> 0) and where e^w underflows.
        for _ in range(3):
            ew = math.exp(w)
            f = w * ew - x
            denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * (w + 1.0))
            if denom == 0.0:
                break
            step = f / denom
            w -= step
            if abs(step) <= 1e-16 * abs(w):
                break
    w = min(w, -1.0)

    if abs(w * math.exp(w) - x) > tol:
        raise RuntimeError(f"lambert_w_lower did not converge for x={x!r}")
    return w


_W_M2: float | None = None


def _w_at_minus_e2() -> float:
    """W_{-1}(-e^{-2}), the constant appearing in every occupancy bound."""
    global _W_M2
    if _W_M2 is None:
        _W_M2 = lambert_w_lower(-math.exp(-2.0))
    return _W_M2


def beta_star() -> float:
    """Level ratio maximizing the occupancy lower bound: -1 / W_{-1}(-e^{-2})."""
    return -1.0 / _w_at_minus_e2()


@dataclass(frozen=True)
class LevelPair:
    """Crossing levels ``gamma_max/c < v0 < v1`` with the system constants."""

    v0: float
    v1: float
    c: float
    gamma_max: float

    def __post_init__(self) -> None:
        if self.c <= 0.0:
            raise ValueError(f"c must be positive, got {self.c!r}")
        if self.gamma_max < 0.0:
            raise ValueError(f"gamma_max must be nonnegative, got {self.gamma_max!r}")
        if not (self.floor < self.v0 < self.v1):
            raise ValueError(
                f"levels must satisfy gamma_max/c < v0 < v1, got "
                f"floor={self.floor!r}, v0={self.v0!r}, v1={self.v1!r}"
            )

    @property
    def floor(self) -> float:
        """The noise floor ``gamma_max / c`` in Lyapunov units."""
        return self.gamma_max / self.c

    @property
    def beta(self) -> float:
        """Normalized level ratio ``(v0 - floor) / (v1 - floor)`` in (0, 1)."""
        return (self.v0 - self.floor) / (self.v1 - self.floor)


def optimal_v0(v1: float, c: float, gamma_max: float) -> float:
    """The v0 that maximizes the occupancy ratio bound for a given v1."""
    floor = gamma_max / c
    if v1 <= floor:
        raise ValueError(f"v1={v1!r} must exceed the noise floor {floor!r}")
    return floor + beta_star() * (v1 - floor)


def expected_up_cross(levels: LevelPair) -> float:
    """Mean of the law dominating up-cross times from below.

    Equals ``c^-1 (v1-v0)/(v1-floor) ln(v1/floor)``; infinite when the
    noise floor is zero (the band is then never re-entered from above in
    the dominating law).
    """
    g = levels.floor
    if g == 0.0:
        return math.inf
    return (
        (levels.v1 - levels.v0)
        / (levels.v1 - g)
        * math.log(levels.v1 / g)
        / levels.c
    )


def expected_down_cross(levels: LevelPair) -> float:
    """Mean of the law dominating down-cross times from above."""
    g = levels.floor
    return (1.0 + math.log((levels.v1 - g) / (levels.v0 - g))) / levels.c


def up_cross_survival_bound(s: float, levels: LevelPair) -> float:
    """Lower bound on P{up-cross time > s}; identically 1 for s < 0."""
    if s < 0.0:
        return 1.0
    g = levels.floor
    cs = levels.c * s
    if cs > 700.0:
        return 0.0
    return (levels.v1 - levels.v0) / (levels.v1 - g + g * math.exp(cs))


def down_cross_survival_bound(s: float, levels: LevelPair) -> float:
    """Upper bound on P{down-cross time >= s}: a capped exponential tail."""
    g = levels.floor
    cs = levels.c * s
    log_ratio = math.log((levels.v1 - g) / (levels.v0 - g))
    if cs <= log_ratio:
        return 1.0
    return math.exp(log_ratio - cs)


def bound_b(
    r: float, c: float, gamma_max: float, alpha1: Callable[[float], float]
) -> float:
    """Almost-sure lower bound on the time fraction spent inside radius r.

    Returns 0 below the domain edge ``alpha1(r) <= gamma_max / c`` (the
    vacuous valid bound), so the function is total on positive radii.

    Raises
    ------
    ValueError
        If ``alpha1(r)`` is not positive, which indicates a misuse (radii
        are positive and alpha1 is a class-K function).
    """
    a = alpha1(r)
    if a <= 0.0:
        raise ValueError(f"alpha1({r!r}) = {a!r} is not positive")
    g = gamma_max / c
    if g == 0.0:
        return 1.0
    if a <= g:
        return 0.0
    log_ratio = math.log(a / g)
    return log_ratio / (-_w_at_minus_e2() + log_ratio)


def fractile_q(
    k: float, c: float, gamma_max: float, alpha1_inv: Callable[[float], float]
) -> float:
    """The radius within which at least fraction k of time is spent."""
    if not (0.0 < k < 1.0):
        raise ValueError(f"k={k!r} outside (0, 1)")
    g = gamma_max / c
    return alpha1_inv(g * math.exp(-(k / (1.0 - k)) * _w_at_minus_e2()))


def occupancy_ratio_bound(levels: LevelPair) -> float:
    """t_uc / (t_uc + t_dc): lower bound on time spent below level v1."""
    t_uc = expected_up_cross(levels)
    if math.isinf(t_uc):
        return 1.0
    t_dc = expected_down_cross(levels)
    return t_uc / (t_uc + t_dc)


@dataclass(frozen=True)
class BoundSet:
    """All derived quantities for one level pair and alpha1 envelope."""

    levels: LevelPair
    t_uc: float
    t_dc: float
    ratio_bound: float
    beta_star: float
    b: Callable[[float], float] = field(repr=False)
    q: Callable[[float], float] = field(repr=False)


def make_bound_set(
    levels: LevelPair,
    alpha1: Callable[[float], float],
    alpha1_inv: Callable[[float], float],
) -> BoundSet:
    """Bundle the closed-form quantities derived from one LevelPair."""
    return BoundSet(
        levels=levels,
        t_uc=expected_up_cross(levels),
        t_dc=expected_down_cross(levels),
        ratio_bound=occupancy_ratio_bound(levels),
        beta_star=beta_star(),
        b=lambda r: bound_b(r, levels.c, levels.gamma_max, alpha1),
        q=lambda k: fractile_q(k, levels.c, levels.gamma_max, alpha1_inv),
    )
