"""Multiplier calibration: choose ``lam`` so the optimal claim costs ``X0``.

Under the martingale measure the terminal density satisfies
``log Z(T) ~ N(-R/2, R)``, so the price of ``F(Z(T), lam)`` is exactly
``H(1, 0, R, lam)`` for the heat-type problem solved in :mod:`pde_engine`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import CalibrationFailed, NoBracket, NonMonotonePrice, UnboundedDual
from .pde_engine import HSolution
from .utility_dual import UtilityFamily

N_PROBES = 60
LAM_MIN = 1e-12
LAM_MAX = 1e12
LAM_RTOL = 1e-10


@dataclass(frozen=True)
class CalibrationResult:
    lambda_hat: float
    achieved_price: float
    iterations: int
    bracket: tuple


def price_of_claim(u: UtilityFamily, lam: float, R: float, T: float = 1.0) -> float:
    """Martingale-measure price ``E* F(Z(T), lam)`` of the dual claim."""
    sol = HSolution(R, lam, u.claim(lam), T)
    return float(sol.h(1.0, 0.0))


def _probe_grid(u: UtilityFamily) -> np.ndarray:
    pos = np.logspace(math.log10(LAM_MIN), math.log10(LAM_MAX), N_PROBES)
    if not u.allows_negative_lambda():
        return pos
    return np.concatenate([-pos[::-1], [0.0], pos])


def calibrate_lambda(u: UtilityFamily, R: float, X0: float, T: float = 1.0,
                     check_monotone: bool = True) -> CalibrationResult:
    """Solve ``price_of_claim(u, lam, R) = X0`` for ``lam``.

    Scans a log-spaced probe grid for a sign change of the pricing residual
    and polishes the bracket with Brent's method (in ``log lam`` for positive
    brackets).

    Raises
    ------
    NoBracket
        ``X0`` lies outside the range of attainable prices.
    NonMonotonePrice
        The price is not nonincreasing in ``lam`` along the scan although the
        utility is concave.
    """
    if R <= 0.0:
        raise ValueError(f"calibration needs R > 0, got {R}")
    u.domain.require_interior(X0)

    lams, prices = [], []
    for lam in _probe_grid(u):
        try:
            p = price_of_claim(u, float(lam), R, T)
        except UnboundedDual:
            continue
        if math.isfinite(p):
            lams.append(float(lam))
            prices.append(p)
    if len(lams) < 2:
        raise NoBracket("fewer than two admissible multipliers on the probe grid")
    lams = np.array(lams)
    prices = np.array(prices)

    if check_monotone and u.concave:
        rises = np.diff(prices) > 1e-10 * np.maximum(1.0, np.abs(prices[:-1]))
        if np.any(rises):
            j = int(np.argmax(rises))
            raise NonMonotonePrice(
                f"price rises from {prices[j]:.6g} to {prices[j + 1]:.6g} "
                f"between lam={lams[j]:.3g} and lam={lams[j + 1]:.3g}")

    g = prices - X0
    exact = np.nonzero(g == 0.0)[0]
    if exact.size:
        j = int(exact[0])
        return CalibrationResult(float(lams[j]), float(prices[j]), 0, (lams[j], lams[j]))
    cross = np.nonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0]
    if cross.size == 0:
        raise NoBracket(
            f"X0={X0} outside attainable price range [{prices.min():.6g}, {prices.max():.6g}]")
    j = int(cross[0])
    lo, hi = float(lams[j]), float(lams[j + 1])

    count = [0]

    def resid(lam):
        count[0] += 1
        return price_of_claim(u, lam, R, T) - X0

    try:
        if lo > 0.0:
            s = brentq(lambda s: resid(math.exp(s)), math.log(lo), math.log(hi),
                       xtol=1e-15, rtol=LAM_RTOL * 1e-3, maxiter=500)
            lam_hat = math.exp(s)
        else:
            lam_hat = brentq(resid, lo, hi, xtol=1e-300, rtol=LAM_RTOL * 1e-3, maxiter=500)
    except (ValueError, RuntimeError) as exc:
        raise CalibrationFailed(str(exc)) from exc

    achieved = price_of_claim(u, lam_hat, R, T)
    if abs(achieved - X0) > 1e-8 * max(1.0, X0):
        raise CalibrationFailed(
            f"price residual {achieved - X0:.3e} after {count[0]} evaluations")
    return CalibrationResult(lam_hat, achieved, count[0], (lo, hi))
