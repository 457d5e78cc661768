"""Portfolio rules: trivial, myopic, and the risk-budget (PDE) strategy.

Portfolios are money amounts ``pi`` (one entry per asset) evaluated for a
batch of paths at once.  The PDE strategy holds

    pi = B(t) * H_x(Z, tau) * Z * D theta,     tau = T * int_0^t |theta|^2 / R,

with ``D`` the replication matrix, which makes the normalized wealth follow
``dX = H_x(Z, tau) dZ`` and hence ``X(t) = H(Z(t), tau(t))``.  Once the
accumulated ``|theta|^2`` reaches ``R`` the claim ``F(Z)`` has been locked in
and the strategy stops trading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationResult, calibrate_lambda
from .errors import SingularCovariance
from .market_model import CoeffSnapshot, ParamClass, cumulative_r, replication_matrix
from .pde_engine import HSolution
from .utility_dual import UtilityFamily

R_ZERO = 1e-15


@dataclass(frozen=True)
class Trivial:
    kind = "trivial"


@dataclass(frozen=True)
class Myopic:
    nu: float
    C0: float = 0.0
    kind = "myopic"


@dataclass(frozen=True)
class PdeOptimal:
    """Risk-budget strategy for budget ``R`` and multiplier ``lambda_hat``.

    ``on_exhausted`` selects what happens once the budget is used up:
    ``"stop"`` (default) stops trading, ``"clamp"`` keeps trading with
    ``tau`` frozen at ``T``.
    """

    R: float
    lambda_hat: float
    hsol: HSolution = field(repr=False)
    calibration: CalibrationResult | None = field(default=None, repr=False)
    on_exhausted: str = "stop"
    kind = "pde"

    def __post_init__(self):
        if self.R <= 0.0:
            raise ValueError("PdeOptimal needs R > 0; use Trivial for R = 0")
        if abs(self.hsol.R - self.R) > 1e-12 * self.R or self.hsol.lam != self.lambda_hat:
            raise ValueError("HSolution does not match (R, lambda_hat)")
        if self.on_exhausted not in ("stop", "clamp"):
            raise ValueError(f"on_exhausted must be 'stop' or 'clamp', got {self.on_exhausted!r}")


StrategyKind = Trivial | Myopic | PdeOptimal


@dataclass
class StrategyState:
    """State of a batch of paths at the start of a time step."""

    t: float
    B: np.ndarray
    Z: np.ndarray
    theta_sq_accum: np.ndarray
    X_tilde: np.ndarray
    snapshot: CoeffSnapshot


def tau_time_change(theta_sq_accum, R: float, T: float):
    """``min(T, T * accum / R)``; vectorized."""
    acc = np.asarray(theta_sq_accum, dtype=float)
    out = np.minimum(T, T * acc / R)
    return float(out) if out.ndim == 0 else out


def _d_theta(snap: CoeffSnapshot) -> np.ndarray:
    D = replication_matrix(snap.sigma)
    return np.einsum("...ij,...j->...i", D, snap.theta)


def pde_exposure_scale(state: StrategyState, kind: PdeOptimal) -> np.ndarray:
    """``H_x(Z, tau) * Z`` per path, zero once the budget is exhausted."""
    Z = np.asarray(state.Z, dtype=float)
    P = Z.shape[0]
    acc = np.broadcast_to(np.asarray(state.theta_sq_accum, dtype=float), (P,))
    T = kind.hsol.T
    tau = np.minimum(T, T * acc / kind.R)
    hx = np.empty(P)
    for tv in np.unique(tau):
        sel = tau == tv
        hx[sel] = kind.hsol.hx(Z[sel], float(tv))
    scale = hx * Z
    if kind.on_exhausted == "stop":
        scale = np.where(acc >= kind.R * (1.0 - 1e-12), 0.0, scale)
    return scale


def pde_portfolio(state: StrategyState, kind: PdeOptimal) -> np.ndarray:
    """``B * H_x(Z, tau) * Z * D theta`` for every path; shape ``(P, n)``."""
    scale = np.asarray(state.B, dtype=float) * pde_exposure_scale(state, kind)
    dth = _d_theta(state.snapshot)
    dth = np.broadcast_to(dth, (scale.shape[0],) + dth.shape[-1:])
    return scale[:, None] * dth


def q_form_portfolio(state: StrategyState, kind: PdeOptimal) -> np.ndarray:
    """Same strategy written with ``a_tilde^T (sigma sigma^T)^-1``; needs ``n = m``."""
    Z = np.asarray(state.Z, dtype=float)
    P = Z.shape[0]
    T = kind.hsol.T
    acc = np.broadcast_to(np.asarray(state.theta_sq_accum, dtype=float), (P,))
    tau = np.minimum(T, T * acc / kind.R)
    hx = np.array([kind.hsol.hx(z, t) for z, t in zip(Z, tau)])
    return (np.asarray(state.B) * hx * Z)[:, None] * _merton_direction(state.snapshot, P)


def _merton_direction(snap: CoeffSnapshot, P: int) -> np.ndarray:
    sig = np.asarray(snap.sigma, dtype=float)
    cov = sig @ np.swapaxes(sig, -1, -2)
    eig = np.linalg.eigvalsh(cov)
    if np.min(eig) < 1e-10:
        raise SingularCovariance(f"sigma sigma^T has eigenvalue {np.min(eig):.3e} < 1e-10")
    d = np.linalg.solve(cov, np.asarray(snap.a_tilde, dtype=float)[..., None])[..., 0]
    return np.broadcast_to(d, (P,) + d.shape[-1:])


def myopic_portfolio(state: StrategyState, nu: float, C0: float) -> np.ndarray:
    """``nu * B * (X - C0) * (sigma sigma^T)^-1 a_tilde``; shape ``(P, n)``."""
    X = np.asarray(state.X_tilde, dtype=float)
    P = X.shape[0]
    if nu == 0.0:
        return np.zeros((P, state.snapshot.a_tilde.shape[-1]))
    mult = nu * np.asarray(state.B, dtype=float) * (X - C0)
    return mult[:, None] * _merton_direction(state.snapshot, P)


def portfolio(state: StrategyState, kind) -> np.ndarray:
    """Dispatch on the strategy kind."""
    if isinstance(kind, Trivial):
        n = np.asarray(state.snapshot.a_tilde).shape[-1]
        return np.zeros((np.asarray(state.Z).shape[0], n))
    if isinstance(kind, Myopic):
        return myopic_portfolio(state, kind.nu, kind.C0)
    if isinstance(kind, PdeOptimal):
        return pde_portfolio(state, kind)
    raise TypeError(f"unknown strategy kind {kind!r}")


def active_fraction(kind, theta_sq_accum, theta_sq, dt: float) -> np.ndarray:
    """Share of the next step during which the strategy still trades.

    Only a budget-limited PDE strategy ever trades for part of a step: the
    step on which the accumulated ``|theta|^2`` crosses ``R``.
    """
    acc = np.asarray(theta_sq_accum, dtype=float)
    if not (isinstance(kind, PdeOptimal) and kind.on_exhausted == "stop"):
        return np.ones_like(acc)
    inc = np.asarray(theta_sq, dtype=float) * dt
    left = np.maximum(kind.R - acc, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(inc > left, left / np.where(inc > 0.0, inc, 1.0), 1.0)
    return np.clip(f, 0.0, 1.0)


def myopic_parameters(u: UtilityFamily) -> tuple[float, float]:
    """``(nu, C0)`` of the myopic rule matching the PDE strategy of ``u``.

    Valid for the unconstrained log, power and quadratic families.
    """
    kind = u.kind
    if kind == "log":
        return 1.0, 0.0
    if kind == "power":
        return 1.0 / (1.0 - u.delta), 0.0
    if kind == "quadratic":
        return -1.0, u.c / (2.0 * u.k)
    raise ValueError(f"no myopic form for utility kind {kind!r}")


def pde_strategy(u: UtilityFamily, R: float, X0: float, T: float,
                 on_exhausted: str = "stop"):
    """Calibrated PDE strategy for budget ``R``; Trivial when ``R = 0``."""
    if R <= R_ZERO:
        return Trivial()
    cal = calibrate_lambda(u, R, X0, T)
    hsol = HSolution(R, cal.lambda_hat, u.claim(cal.lambda_hat), T)
    return PdeOptimal(R, cal.lambda_hat, hsol, cal, on_exhausted)


def r_min_of_class(cls: ParamClass) -> tuple[float, int]:
    """Smallest risk budget over the class; ties go to the lowest index."""
    Rs = [cumulative_r(cls, i) for i in range(len(cls.points))]
    j = int(np.argmin(Rs))
    return float(Rs[j]), j


def build_maximin_strategy(cls: ParamClass, u: UtilityFamily, X0: float,
                           on_exhausted: str = "stop"):
    """Worst-case optimal strategy: the PDE strategy at the class's smallest budget."""
    R_min, _ = r_min_of_class(cls)
    return pde_strategy(u, R_min, X0, cls.T, on_exhausted)


def build_point_strategy(cls: ParamClass, idx: int, u: UtilityFamily, X0: float,
                         on_exhausted: str = "stop"):
    """PDE strategy tuned to the budget of one point of the class."""
    return pde_strategy(u, cumulative_r(cls, idx), X0, cls.T, on_exhausted)


def strategy_norm_sq(pi_sq_integral: np.ndarray) -> float:
    """Monte Carlo ``E int |pi|^2 dt`` from per-path integrals."""
    v = np.asarray(pi_sq_integral, dtype=float)
    return float(v.mean()) if v.size else math.nan
