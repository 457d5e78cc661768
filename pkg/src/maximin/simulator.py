"""Monte Carlo simulation of prices, density process and normalized wealth.

Normalized prices and the density process are stepped exactly (log-Euler is
exact for coefficients frozen over a step).  Wealth is stepped either by
plain Euler on ``dX = p pi^T (a_tilde dt + sigma dw)`` or, for domains with a
finite floor ``L``, by a cushion scheme that takes an exact lognormal step
for ``X - L`` with the exposure-to-cushion ratio frozen over the step.  The
cushion scheme keeps wealth above the floor by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch
from .market_model import ParamClass, replication_matrix, replication_residuals
from .strategy_engine import (
    PdeOptimal,
    StrategyState,
    Trivial,
    active_fraction,
    pde_exposure_scale,
    portfolio,
)
from .utility_dual import UtilityFamily, eval_utility

WEALTH_SCHEMES = ("euler", "cushion")


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 10_000
    n_steps: int = 256
    seed: int = 0
    antithetic: bool = False
    wealth_scheme: str = "euler"
    record_paths: bool = False

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1:
            raise ValueError("n_paths and n_steps must be positive")
        if self.wealth_scheme not in WEALTH_SCHEMES:
            raise ValueError(f"wealth_scheme must be one of {WEALTH_SCHEMES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class PathRecord:
    """Full time series for every simulated path (``record_paths=True``)."""

    times: np.ndarray
    S: np.ndarray            # (steps+1, P, n)
    Z: np.ndarray            # (steps+1, P)
    theta_sq_accum: np.ndarray
    X_tilde: np.ndarray
    pi: np.ndarray           # (steps, P, n), money amounts
    exposure: np.ndarray     # (steps, P, n), discounted amounts p * pi
    a_tilde: np.ndarray      # (steps, P, n)
    sigma_dw: np.ndarray     # (steps, P, n), sigma times the traded increment
    dt_eff: np.ndarray       # (steps, P), traded part of each step


@dataclass
class SimResult:
    X0: float
    X_T: np.ndarray
    Z_T: np.ndarray
    Z_stop: np.ndarray
    S_T: np.ndarray
    S0: np.ndarray
    log_B_T: np.ndarray
    theta_sq_accum: np.ndarray
    pi_sq_integral: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    record: PathRecord | None = None
    antithetic: bool = False

    @property
    def n_paths(self) -> int:
        return self.X_T.shape[0]


def _increments(rng, P, m, dt, antithetic):
    if not antithetic:
        return rng.standard_normal((P, m)) * math.sqrt(dt)
    half = (P + 1) // 2
    g = rng.standard_normal((half, m)) * math.sqrt(dt)
    return np.concatenate([g, -g])[:P]


def simulate_paths(cls: ParamClass, point: int, strategy, u: UtilityFamily, X0: float,
                   cfg: SimConfig) -> SimResult:
    """Simulate ``cfg.n_paths`` paths of the market at one class point.

    The Brownian increments depend only on ``(cfg.seed, n_paths, n_drivers,
    n_steps)``, so calls with different points or strategies share common
    random numbers.
    """
    if cfg.n_steps % cls.n_cells:
        raise DimensionMismatch(
            f"n_steps={cfg.n_steps} is not a multiple of the {cls.n_cells} coefficient cells")
    if not 0 <= point < len(cls.points):
        raise DimensionMismatch(f"point index {point} outside class of {len(cls.points)}")
    P, n, m = cfg.n_paths, cls.n_assets, cls.n_drivers
    steps = cfg.n_steps
    per_cell = steps // cls.n_cells
    dt = cls.T / steps
    floor = u.domain.lower
    use_cushion = cfg.wealth_scheme == "cushion" and math.isfinite(floor)

    rng = np.random.default_rng(cfg.seed)
    bridge_rng = np.random.default_rng([cfg.seed, 1])

    S = np.tile(cls.s0, (P, 1))
    logZ = np.zeros(P)
    acc = np.zeros(P)
    logB = np.zeros(P)
    X = np.full(P, float(X0))
    Z_stop = np.full(P, np.nan)
    pi_sq = np.zeros(P)
    diag = {"theta_residual": 0.0, "replication_residual": 0.0, "identity_residual": 0.0,
            "wealth_scheme": "cushion" if use_cushion else "euler"}

    rec = None
    if cfg.record_paths:
        rec = PathRecord(
            times=np.linspace(0.0, cls.T, steps + 1),
            S=np.empty((steps + 1, P, n)), Z=np.empty((steps + 1, P)),
            theta_sq_accum=np.empty((steps + 1, P)), X_tilde=np.empty((steps + 1, P)),
            pi=np.empty((steps, P, n)), exposure=np.empty((steps, P, n)),
            a_tilde=np.empty((steps, P, n)), sigma_dw=np.empty((steps, P, n)),
            dt_eff=np.empty((steps, P)))
        rec.S[0], rec.Z[0], rec.theta_sq_accum[0], rec.X_tilde[0] = S, 1.0, 0.0, X

    cached = {}
    for k in range(steps):
        t = k * dt
        cell = k // per_cell
        if cls.path_dependent:
            snap = cls.snapshot(point, cell, S)
        else:
            if cell not in cached:
                cached[cell] = cls.snapshot(point, cell)
            snap = cached[cell]
        a = np.broadcast_to(snap.a_tilde, (P, n))
        sig = np.broadcast_to(snap.sigma, (P, n, m))
        theta = np.broadcast_to(snap.theta, (P, m))
        tsq = np.broadcast_to(snap.theta_sq, (P,))
        res = np.max(np.abs(np.einsum("pij,pj->pi", sig, theta) - a), initial=0.0)
        diag["theta_residual"] = max(diag["theta_residual"], float(res))

        dw = _increments(rng, P, m, dt, cfg.antithetic)
        B = np.exp(logB)
        state = StrategyState(t, B, np.exp(logZ), acc, X, snap)
        pi = portfolio(state, strategy)
        exposure = pi / B[:, None]

        if isinstance(strategy, PdeOptimal):
            D = replication_matrix(snap.sigma)
            r1, r2 = replication_residuals(snap.sigma, snap.a_tilde, snap.theta, D)
            diag["replication_residual"] = max(diag["replication_residual"], r1, r2)
            hz = pde_exposure_scale(state, strategy)
            lhs = np.einsum("pi,pij->pj", exposure, sig)
            idr = np.max(np.abs(lhs - hz[:, None] * theta), initial=0.0)
            diag["identity_residual"] = max(diag["identity_residual"], float(idr))

        frac = active_fraction(strategy, acc, tsq, dt)
        partial = frac < 1.0
        if np.any(partial):
            # Brownian bridge: increment over the traded part of the step
            xi = bridge_rng.standard_normal((P, m))
            f = frac[:, None]
            dw_trade = np.where(partial[:, None],
                                f * dw + np.sqrt(np.maximum(f * (1.0 - f), 0.0) * dt) * xi, dw)
            dw_before_stop = dw_trade
        else:
            dw_trade = dw
            dw_before_stop = None
        dt_eff = frac * dt
        sdw = np.einsum("pij,pj->pi", sig, dw_trade)

        if use_cushion:
            cushion = X - floor
            safe = cushion > 0.0
            kappa = np.where(safe[:, None], exposure / np.where(safe, cushion, 1.0)[:, None], 0.0)
            vol = np.einsum("pi,pij->pj", kappa, sig)
            growth = (np.einsum("pi,pi->p", kappa, a) * dt_eff
                      + np.einsum("pi,pi->p", kappa, sdw)
                      - 0.5 * np.sum(vol**2, axis=1) * dt_eff)
            # a path sitting on the floor has no cushion left to trade with
            with np.errstate(over="ignore"):
                X_new = np.where(safe, floor + cushion * np.exp(growth), X)
        else:
            X_new = X + np.einsum("pi,pi->p", exposure, a * dt_eff[:, None] + sdw)

        if rec is not None:
            rec.pi[k], rec.exposure[k], rec.a_tilde[k] = pi, exposure, a
            rec.sigma_dw[k], rec.dt_eff[k] = sdw, dt_eff

        # density at the moment the budget runs out
        if dw_before_stop is not None:
            hit = partial & np.isnan(Z_stop)
            z_hit = logZ + np.einsum("pj,pj->p", theta, dw_before_stop) + 0.5 * tsq * dt_eff
            Z_stop = np.where(hit, np.exp(z_hit), Z_stop)

        vol_sq = np.sum(sig**2, axis=2)
        S = S * np.exp(a * dt - 0.5 * vol_sq * dt + np.einsum("pij,pj->pi", sig, dw))
        if cls.price_fn is not None:
            S = cls.price_fn(t + dt, S)
        logZ = logZ + np.einsum("pj,pj->p", theta, dw) + 0.5 * tsq * dt
        acc = acc + tsq * dt
        logB = logB + snap.r * dt
        pi_sq += np.sum(pi**2, axis=1) * dt_eff
        X = X_new

        if rec is not None:
            rec.S[k + 1], rec.Z[k + 1], rec.theta_sq_accum[k + 1], rec.X_tilde[k + 1] = \
                S, np.exp(logZ), acc, X

    Z_T = np.exp(logZ)
    Z_stop = np.where(np.isnan(Z_stop), Z_T, Z_stop)
    if isinstance(strategy, Trivial):
        Z_stop = Z_T
    return SimResult(float(X0), X, Z_T, Z_stop, S, cls.s0.copy(), logB, acc, pi_sq, diag, rec,
                     cfg.antithetic)


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int
    n_violations: int
    n_clipped: int


def estimate_value(result: SimResult, u: UtilityFamily) -> ValueEstimate:
    """Sample mean and standard error of ``U(X(T))``.

    Terminal wealth outside the domain by less than ``1e-6 X0`` is clipped
    onto it; larger excursions are counted as violations and left out of the
    mean.
    """
    X = result.X_T
    tol = 1e-6 * abs(result.X0)
    below = u.domain.lower - X
    above = X - u.domain.upper
    outside = np.maximum(below, above)
    clip = (outside > 0.0) & (outside <= tol)
    bad = outside > tol
    Xc = np.where(clip, u.domain.clip(X), X)
    n = int((~bad).sum())
    if n == 0:
        return ValueEstimate(math.nan, math.nan, 0, int(bad.sum()), int(clip.sum()))
    vals = np.where(bad, np.nan, np.asarray(eval_utility(u, np.where(bad, result.X0, Xc)), dtype=float))
    mean, se = mean_with_stderr(vals, result.antithetic)
    return ValueEstimate(mean, se, n, int(bad.sum()), int(clip.sum()))


def replication_error(result: SimResult, claim, stopped: bool = True) -> float:
    """RMS of ``X(T) - F(Z)`` with ``Z`` taken where the budget ran out
    (``stopped=True``) or at the horizon."""
    Z = result.Z_stop if stopped else result.Z_T
    diff = result.X_T - np.asarray(claim(Z), dtype=float)
    return float(np.sqrt(np.mean(diff**2)))


def mean_with_stderr(v, antithetic: bool = False) -> tuple[float, float]:
    """Mean and standard error, ignoring NaNs.

    With antithetic sampling path ``i`` and ``i + P/2`` are paired and the
    error is computed from pair averages.
    """
    v = np.asarray(v, dtype=float)
    fin = v[np.isfinite(v)]
    if fin.size and np.all(fin == fin[0]):
        # constant samples: skip the summation rounding
        return float(fin[0]), 0.0
    if antithetic and v.size >= 4 and v.size % 2 == 0:
        h = v.size // 2
        pairs = 0.5 * (v[:h] + v[h:])
        pairs = pairs[np.isfinite(pairs)]
        if pairs.size > 1:
            return float(pairs.mean()), float(pairs.std(ddof=1) / math.sqrt(pairs.size))
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def martingale_checks(result: SimResult) -> dict:
    """``E[1/Z(T)]`` and ``E[S_i(T)/Z(T)]`` with standard errors."""
    inv = 1.0 / result.Z_T
    anti = result.antithetic
    out = {"inv_Z": mean_with_stderr(inv, anti)}
    out["S_over_Z"] = [mean_with_stderr(result.S_T[:, i] * inv, anti)
                       for i in range(result.S_T.shape[1])]
    return out


def wealth_price(result: SimResult) -> tuple[float, float]:
    """Martingale-measure price of the terminal wealth, ``E[X(T)/Z(T)]``."""
    return mean_with_stderr(result.X_T / result.Z_T, result.antithetic)
