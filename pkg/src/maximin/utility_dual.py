"""Utility families and the pointwise dual maximizer.

For a utility ``U`` on a convex domain ``D`` and a multiplier ``lam`` the
dual maximizer is

    F(z, lam) = argmax_{x in D}  z * U(x) - lam * x,      z > 0.

``F(., lam)`` is the optimal terminal claim written as a function of the
terminal value of the density process.  Every family here hands back a
:class:`Claim` object for a fixed ``lam``; the PDE engine integrates those
claims against a lognormal law, using a closed form whenever one exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import InvalidC0, InvalidDomain, InvalidUtility, UnboundedDual

GOLDEN_TOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


# --------------------------------------------------------------------------- #
# Domain
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class DomainInterval:
    """Closed convex interval ``[lower, upper]``; infinite ends allowed."""

    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise InvalidDomain("domain bounds must not be NaN")
        if not self.lower < self.upper:
            raise InvalidDomain(f"need lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.lower) & (x <= self.upper)

    def interior(self, x: float) -> bool:
        return self.lower < x < self.upper

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def require_interior(self, x0: float) -> None:
        if not self.interior(x0):
            raise InvalidDomain(
                f"initial wealth {x0} must lie strictly inside [{self.lower}, {self.upper}]"
            )


# --------------------------------------------------------------------------- #
# Terminal claims z -> F(z, lam)
# --------------------------------------------------------------------------- #

class Claim:
    """A terminal payoff as a function of the density-process value ``z``.

    Subclasses provide ``__call__``.  Optional capabilities:

    * ``derivative(z)`` -- pointwise derivative (``None`` when the claim jumps),
    * ``breakpoints()`` -- z-locations of jumps or kinks known analytically,
    * ``expectation(x, rho)`` / ``expectation_dx(x, rho)`` -- closed forms of
      ``E F(x * exp(-rho/2 + sqrt(rho) * N(0,1)))`` and its x-derivative.
    """

    has_jumps = False
    jumps_known = True

    def __call__(self, z):
        raise NotImplementedError

    def derivative(self, z):
        return None

    def breakpoints(self) -> tuple:
        return ()

    def jumps(self) -> tuple:
        return ()

    @property
    def has_closed_form(self) -> bool:
        return False

    def expectation(self, x, rho):
        raise NotImplementedError

    def expectation_dx(self, x, rho):
        raise NotImplementedError

    def lower_bound(self) -> float:
        return -math.inf


def _phi(x):
    return np.exp(-0.5 * np.asarray(x) ** 2) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class PowerClaim(Claim):
    """``F(z) = clip(offset + scale * z**power, lo, hi)``.

    Covers every concave family shipped here: log (power 1), power utility
    (power ``1/(1-delta)``) and quadratic utility (power -1), each clamped to
    the wealth domain.
    """

    offset: float
    scale: float
    power: float
    lo: float = -math.inf
    hi: float = math.inf

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(over="ignore"):
            raw = self.offset + self.scale * z**self.power
        return np.clip(raw, self.lo, self.hi)

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(over="ignore"):
            raw = self.offset + self.scale * z**self.power
            d = self.scale * self.power * z ** (self.power - 1.0)
        inside = (raw > self.lo) & (raw < self.hi)
        return np.where(inside, d, 0.0)

    def _level_crossing(self, level: float):
        if not math.isfinite(level) or self.scale == 0.0 or self.power == 0.0:
            return None
        v = (level - self.offset) / self.scale
        if v <= 0.0:
            return None
        return v ** (1.0 / self.power)

    def breakpoints(self) -> tuple:
        pts = [self._level_crossing(self.lo), self._level_crossing(self.hi)]
        return tuple(sorted(p for p in pts if p is not None))

    @property
    def has_closed_form(self) -> bool:
        return True

    def lower_bound(self) -> float:
        return self.lo

    def _pieces(self, x, rho):
        # log W = m + s*zeta with W = (x*Y)**power; returns the zeta-interval
        # where the clamp is inactive plus the clamped-region probabilities.
        x = np.asarray(x, dtype=float)
        sq = math.sqrt(rho)
        m = self.power * (np.log(x) - 0.5 * rho)
        s = self.power * sq
        inc = self.scale * s > 0.0

        def below(level):
            # returns zeta_c such that {u < level} is (-inf, zeta_c) when
            # increasing, (zeta_c, +inf) when decreasing
            if level == -math.inf:
                return np.where(inc, -np.inf, np.inf)
            if level == math.inf:
                return np.where(inc, np.inf, -np.inf)
            v = (level - self.offset) / self.scale
            if v <= 0.0:
                always_above = self.scale > 0.0
                if always_above:
                    return np.where(inc, -np.inf, np.inf)
                return np.where(inc, np.inf, -np.inf)
            return (math.log(v) - m) / s

        zl = below(self.lo)
        zh = below(self.hi)
        # increasing: mid = (zl, zh); decreasing: mid = (zh, zl)
        a = np.where(inc, zl, zh)
        b = np.where(inc, zh, zl)
        b = np.maximum(a, b)
        p_lo = np.where(inc, ndtr(zl), 1.0 - ndtr(zl))
        p_hi = np.where(inc, 1.0 - ndtr(zh), ndtr(zh))
        return m, s, a, b, p_lo, p_hi

    def expectation(self, x, rho):
        if rho <= 0.0 or self.scale == 0.0 or self.power == 0.0:
            return self(np.asarray(x, dtype=float))
        m, s, a, b, p_lo, p_hi = self._pieces(x, rho)
        p_mid = ndtr(b) - ndtr(a)
        with np.errstate(over="ignore"):
            w_mid = np.exp(m + 0.5 * s * s) * (ndtr(b - s) - ndtr(a - s))
        out = self.offset * p_mid + self.scale * w_mid
        if math.isfinite(self.lo):
            out = out + self.lo * p_lo
        if math.isfinite(self.hi):
            out = out + self.hi * p_hi
        return out

    def expectation_dx(self, x, rho):
        x = np.asarray(x, dtype=float)
        if rho <= 0.0 or self.scale == 0.0 or self.power == 0.0:
            return self.derivative(x)
        m, s, a, b, _, _ = self._pieces(x, rho)
        with np.errstate(over="ignore"):
            w_mid = np.exp(m + 0.5 * s * s) * (ndtr(b - s) - ndtr(a - s))
        return self.scale * self.power * w_mid / x


@dataclass(frozen=True)
class StepClaim(Claim):
    """Right-continuous-from-above step function.

    ``F(z) = base + sum_j steps[j] * 1{z > thresholds[j]}``; at a threshold the
    claim takes the lower-index value, which is the deterministic tie-break
    used for convex utilities.
    """

    base: float
    thresholds: tuple
    steps: tuple

    has_jumps = True

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, float(self.base))
        for th, dv in zip(self.thresholds, self.steps):
            out = out + dv * (z > th)
        return out

    def breakpoints(self) -> tuple:
        return tuple(sorted(float(t) for t in self.thresholds))

    def jumps(self) -> tuple:
        return self.breakpoints()

    @property
    def has_closed_form(self) -> bool:
        return True

    def lower_bound(self) -> float:
        vals = np.cumsum((self.base,) + tuple(self.steps))
        return float(vals.min())

    def expectation(self, x, rho):
        x = np.asarray(x, dtype=float)
        if rho <= 0.0:
            return self(x)
        sq = math.sqrt(rho)
        out = np.full(x.shape, float(self.base))
        for th, dv in zip(self.thresholds, self.steps):
            out = out + dv * ndtr((np.log(x / th) - 0.5 * rho) / sq)
        return out

    def expectation_dx(self, x, rho):
        x = np.asarray(x, dtype=float)
        if rho <= 0.0:
            return np.zeros(x.shape)
        sq = math.sqrt(rho)
        out = np.zeros(x.shape)
        for th, dv in zip(self.thresholds, self.steps):
            out = out + dv * _phi((np.log(x / th) - 0.5 * rho) / sq) / (x * sq)
        return out


def digital_claim(strike: float, low: float = 0.0, high: float = 1.0) -> StepClaim:
    """``low + (high-low) * 1{z > strike}``; handy as a test payoff."""
    return StepClaim(base=low, thresholds=(float(strike),), steps=(high - low,))


def linear_claim(scale: float = 1.0) -> PowerClaim:
    return PowerClaim(offset=0.0, scale=scale, power=1.0)


@dataclass(frozen=True)
class GoldenClaim(Claim):
    """Dual maximizer found numerically by golden-section search.

    Used for tabulated concave utilities.  Jump locations are supplied by
    the utility when it knows them (piecewise-linear ``U`` switches knots at
    ``z = lam / slope``).
    """

    utility: "UtilityFamily"
    lam: float
    known_jumps: tuple = ()

    has_jumps = True

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        lo, hi = self.utility.domain.lower, self.utility.domain.upper
        return _golden_argmax(self.utility.value, z, self.lam, lo, hi)

    def breakpoints(self) -> tuple:
        return tuple(sorted(self.known_jumps))

    def jumps(self) -> tuple:
        return self.breakpoints()

    def lower_bound(self) -> float:
        return self.utility.domain.lower


def _golden_argmax(U, z, lam, lo, hi, tol=GOLDEN_TOL):
    """Vectorized golden-section maximization of ``z*U(x) - lam*x`` on [lo, hi]."""
    z = np.asarray(z, dtype=float)
    a = np.full(z.shape, float(lo))
    b = np.full(z.shape, float(hi))

    def f(x):
        return z * U(x) - lam * x

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    n_iter = int(math.ceil(math.log(tol / (hi - lo)) / math.log(_INVPHI))) + 1
    for _ in range(max(n_iter, 1)):
        left = fc >= fd  # ties keep the lower bracket
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - _INVPHI * (b - a), d)
        d_new = np.where(left, c, a + _INVPHI * (b - a))
        f_probe = f(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_probe, fd), np.where(left, fc, f_probe)
        c, d = c_new, d_new
    x = 0.5 * (a + b)
    # endpoints beat interior when the maximum sits on the boundary
    cand = np.stack([np.full(z.shape, float(lo)), x, np.full(z.shape, float(hi))])
    vals = np.stack([f(cand[0]), f(cand[1]), f(cand[2])])
    best = np.argmax(vals, axis=0)
    return np.take_along_axis(cand, best[None], axis=0)[0]


# --------------------------------------------------------------------------- #
# Utility families
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class UtilityFamily:
    """Base class; concrete families below.

    ``growth_p`` and ``growth_q`` are the exponents of the polynomial growth
    and Hoelder bounds the theory asks of ``U``; they are only used by
    :func:`growth_check`.
    """

    domain: DomainInterval = field(default_factory=DomainInterval, kw_only=True)
    growth_p: float = field(default=2.0, kw_only=True)
    growth_q: float = field(default=1.0, kw_only=True)

    kind = "abstract"
    concave = True

    def __post_init__(self):
        if not 1.0 < self.growth_p <= 2.0:
            raise InvalidUtility(f"growth_p must be in (1, 2], got {self.growth_p}")
        if not 0.0 < self.growth_q <= 1.0:
            raise InvalidUtility(f"growth_q must be in (0, 1], got {self.growth_q}")

    def value(self, x):
        raise NotImplementedError

    def claim(self, lam: float) -> Claim:
        raise NotImplementedError

    def allows_negative_lambda(self) -> bool:
        return False

    def _upper_or_unbounded(self, lam) -> Claim:
        if math.isfinite(self.domain.upper):
            return PowerClaim(offset=self.domain.upper, scale=0.0, power=1.0)
        raise UnboundedDual(f"{self.kind}: dual objective unbounded for lambda={lam}")

    def _endpoint_claim(self, lam: float) -> Claim:
        # convex U: the maximum over a bounded interval sits at an endpoint
        if not self.domain.bounded:
            raise UnboundedDual(f"{self.kind}: convex utility needs a bounded domain")
        lo, hi = self.domain.lower, self.domain.upper
        du = float(self.value(hi) - self.value(lo))
        dx = hi - lo
        if du > 0.0:
            zstar = lam * dx / du
            if zstar <= 0.0:
                return PowerClaim(offset=hi, scale=0.0, power=1.0)
            return StepClaim(base=lo, thresholds=(zstar,), steps=(hi - lo,))
        if du == 0.0:
            return PowerClaim(offset=(hi if lam < 0 else lo), scale=0.0, power=1.0)
        # decreasing U: hi wins only when z*du > lam*dx, i.e. z < lam*dx/du
        zstar = lam * dx / du
        if zstar <= 0.0:
            return PowerClaim(offset=lo, scale=0.0, power=1.0)
        return StepClaim(base=hi, thresholds=(zstar,), steps=(lo - hi,))


@dataclass(frozen=True)
class LogUtility(UtilityFamily):
    domain: DomainInterval = field(default_factory=lambda: DomainInterval(0.0, math.inf), kw_only=True)
    kind = "log"

    def __post_init__(self):
        super().__post_init__()
        if self.domain.lower < 0.0:
            raise InvalidDomain("log utility needs domain.lower >= 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0.0, np.log(np.where(x > 0.0, x, 1.0)), -np.inf)

    def claim(self, lam: float) -> Claim:
        if lam <= 0.0:
            return self._upper_or_unbounded(lam)
        return PowerClaim(0.0, 1.0 / lam, 1.0, self.domain.lower, self.domain.upper)


@dataclass(frozen=True)
class PowerUtility(UtilityFamily):
    """``x**delta`` for ``0 < delta < 1``; ``-x**delta`` for ``delta < 0``.

    The sign flip keeps the utility increasing and concave on both sides of
    zero; for ``0 < delta < 1`` it is exactly ``x**delta``.
    """

    delta: float = 0.5
    domain: DomainInterval = field(default_factory=lambda: DomainInterval(0.0, math.inf), kw_only=True)
    kind = "power"

    def __post_init__(self):
        super().__post_init__()
        if not (self.delta < 1.0 and self.delta != 0.0):
            raise InvalidUtility(f"power utility needs delta < 1, delta != 0; got {self.delta}")
        if self.domain.lower < 0.0:
            raise InvalidDomain("power utility needs domain.lower >= 0")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        sign = 1.0 if self.delta > 0 else -1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            v = sign * np.power(np.where(x >= 0.0, x, 0.0), self.delta)
        return np.where(x >= 0.0, v, -np.inf)

    def claim(self, lam: float) -> Claim:
        if lam <= 0.0:
            return self._upper_or_unbounded(lam)
        g = 1.0 / (1.0 - self.delta)
        scale = (abs(self.delta) / lam) ** g
        return PowerClaim(0.0, scale, g, self.domain.lower, self.domain.upper)


@dataclass(frozen=True)
class QuadraticUtility(UtilityFamily):
    """``U(x) = -k x**2 + c x``; concave for ``k > 0``, convex otherwise."""

    k: float = 1.0
    c: float = 0.0
    kind = "quadratic"

    def __post_init__(self):
        super().__post_init__()
        if self.c < 0.0:
            raise InvalidUtility(f"quadratic utility needs c >= 0, got {self.c}")

    @property
    def concave(self) -> bool:  # type: ignore[override]
        return self.k > 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return -self.k * x * x + self.c * x

    def allows_negative_lambda(self) -> bool:
        return True

    def claim(self, lam: float) -> Claim:
        if self.k <= 0.0:
            return self._endpoint_claim(lam)
        return PowerClaim(
            self.c / (2.0 * self.k), -lam / (2.0 * self.k), -1.0,
            self.domain.lower, self.domain.upper,
        )


@dataclass(frozen=True)
class TabulatedUtility(UtilityFamily):
    """Piecewise-linear utility through ``(xs[i], us[i])`` on a bounded domain."""

    xs: tuple = (0.0, 1.0)
    us: tuple = (0.0, 1.0)
    domain: DomainInterval = field(default_factory=lambda: DomainInterval(0.0, 1.0), kw_only=True)
    kind = "tabulated"

    def __post_init__(self):
        super().__post_init__()
        xs = np.asarray(self.xs, dtype=float)
        us = np.asarray(self.us, dtype=float)
        if xs.ndim != 1 or xs.shape != us.shape or xs.size < 2:
            raise InvalidUtility("tabulated utility needs matching 1-d knot arrays (>= 2 knots)")
        if np.any(np.diff(xs) <= 0.0):
            raise InvalidUtility("tabulated knots must be strictly increasing")
        if not self.domain.bounded:
            raise InvalidUtility("tabulated utility needs a bounded domain")
        if xs[0] != self.domain.lower or xs[-1] != self.domain.upper:
            raise InvalidUtility("tabulated knots must span exactly the domain")
        slopes = np.diff(us) / np.diff(xs)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(slopes))))
        if not (np.all(np.diff(slopes) <= tol) or np.all(np.diff(slopes) >= -tol)):
            raise InvalidUtility("tabulated utility must be concave or convex")

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(np.asarray(self.us, float)) / np.diff(np.asarray(self.xs, float))

    @property
    def concave(self) -> bool:  # type: ignore[override]
        return bool(np.all(np.diff(self.slopes) <= 1e-12 * max(1.0, np.abs(self.slopes).max())))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        v = np.interp(x, self.xs, self.us)
        return np.where(self.domain.contains(x), v, -np.inf)

    def allows_negative_lambda(self) -> bool:
        return True

    def claim(self, lam: float) -> Claim:
        if not self.concave:
            return self._endpoint_claim(lam)
        jumps = ()
        if lam > 0.0:
            jumps = tuple(sorted({lam / s for s in self.slopes if s > 0.0}))
        return GoldenClaim(self, lam, jumps)


# --------------------------------------------------------------------------- #
# Public operations
# --------------------------------------------------------------------------- #

def eval_utility(u: UtilityFamily, x):
    """``U(x)``; -inf where ``U`` is undefined (log at x <= 0)."""
    out = u.value(x)
    return float(out) if np.ndim(out) == 0 else out


def dual_argmax(u: UtilityFamily, z, lam: float):
    """Maximizer over ``D`` of ``z*U(x) - lam*x``.

    Raises
    ------
    UnboundedDual
        if the dual objective is unbounded above for this ``lam``.
    """
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr <= 0.0):
        raise ValueError("dual_argmax needs z > 0")
    out = u.claim(lam)(z_arr)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class GrowthDiagnostic:
    passed: bool
    worst_ratio: float
    worst_z: float
    claim_ratio: float
    utility_ratio: float


def growth_check(u: UtilityFamily, lam: float, C: float, c0: float, R: float,
                 z_grid=None) -> GrowthDiagnostic:
    """Check ``|F(z, lam)| <= C z**(c0 log z)`` and ``|U(x)| <= C(|x|**p + 1)``.

    The claim bound is sampled on a log grid over ``[1e-6, 1e6]``.  The
    utility bound is a tail-growth statement and is sampled on the claim's
    range where ``|x| >= 1`` (log utility is singular at 0 by design).
    Advisory only: nothing raises on failure.
    """
    if not 0.0 < c0 < 1.0 / (2.0 * R):
        raise InvalidC0(f"c0={c0} must lie in (0, {1.0 / (2.0 * R)})")
    if z_grid is None:
        z_grid = np.logspace(-6.0, 6.0, 1201)
    z = np.asarray(z_grid, dtype=float)
    fz = np.asarray(u.claim(lam)(z), dtype=float)
    bound = C * np.exp(c0 * np.log(z) ** 2)
    claim_ratios = np.abs(fz) / bound
    i = int(np.argmax(claim_ratios))
    claim_ratio = float(claim_ratios[i])

    x = fz[np.abs(fz) >= 1.0]
    utility_ratio = 0.0
    if x.size:
        ux = np.asarray(u.value(x), dtype=float)
        ok = np.isfinite(ux)
        if ok.any():
            utility_ratio = float(np.max(np.abs(ux[ok]) / (C * (np.abs(x[ok]) ** u.growth_p + 1.0))))
    worst = max(claim_ratio, utility_ratio)
    return GrowthDiagnostic(
        passed=bool(worst <= 1.0),
        worst_ratio=worst,
        worst_z=float(z[i]),
        claim_ratio=claim_ratio,
        utility_ratio=utility_ratio,
    )
