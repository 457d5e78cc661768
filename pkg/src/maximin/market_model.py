"""Parameter classes, market price of risk and the replication matrix.

A market is described by a finite list of parameter points and a coefficient
map ``(cell, t, point, S) -> (r, a_tilde, sigma)``.  Coefficients are frozen
on each cell of a uniform partition of ``[0, T]``.  Prices are handled in
normalized (bank-discounted) units throughout, so the normalized price of
asset ``i`` follows ``dS_i = S_i (a_tilde_i dt + sigma_i dw)``.

The builders at the bottom cover the reference scenarios: piecewise drift,
a two-regime volatility, a zero-coupon bond ladder, a stock with call and
put options, and a volatility change at an unknown time.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.special import ndtr

from .errors import (
    ArbitrageInconsistent,
    DegenerateVolatility,
    DimensionMismatch,
    ExpiredOption,
    InvalidGrid,
    InvalidMaturities,
    InvalidStrike,
    RandomR,
)

log = logging.getLogger(__name__)

SIGMA_MIN = 1e-8
RESIDUAL_TOL = 1e-6
ZERO_DRIFT_TOL = 1e-14


@dataclass(frozen=True)
class ParamPoint:
    coords: tuple
    label: str

    def __post_init__(self):
        c = tuple(float(v) for v in np.atleast_1d(self.coords))
        if not all(math.isfinite(v) for v in c):
            raise InvalidGrid(f"non-finite coordinates in point {self.label!r}")
        object.__setattr__(self, "coords", c)


@dataclass(frozen=True)
class CoeffSnapshot:
    """Coefficients at one instant, possibly batched over paths.

    ``a_tilde`` has shape ``(..., n)``, ``sigma`` ``(..., n, m)`` and
    ``theta`` ``(..., m)``.
    """

    r: float
    a_tilde: np.ndarray
    sigma: np.ndarray
    theta: np.ndarray
    theta_sq: np.ndarray
    pivots: np.ndarray | None = None


@dataclass(frozen=True)
class MixtureWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)


CoeffFn = Callable[[int, float, int, "np.ndarray | None"], tuple]


@dataclass(frozen=True)
class ParamClass:
    """Finite parameter class with a piecewise-constant coefficient map.

    Parameters
    ----------
    coeff_fn : callable
        ``coeff_fn(cell, t, idx, S)`` returns ``(r, a_tilde, sigma)`` for
        point ``idx`` on time cell ``cell`` (``t`` is the cell start).  ``S``
        is the ``(P, n)`` array of current normalized prices, or ``None`` for
        classes whose coefficients do not depend on the path.
    price_fn : callable, optional
        ``price_fn(t, S)`` overwrites the derived assets of ``S`` (options)
        from the primary ones; ``None`` when every asset is stepped from its
        own coefficients.
    """

    name: str
    points: tuple
    T: float
    n_cells: int
    n_assets: int
    n_drivers: int
    coeff_fn: CoeffFn = field(repr=False)
    s0: np.ndarray = field(repr=False)
    path_dependent: bool = False
    price_fn: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.points:
            raise InvalidGrid("a parameter class needs at least one point")
        if self.T <= 0.0:
            raise InvalidGrid(f"horizon must be positive, got {self.T}")
        if self.n_cells < 1:
            raise InvalidGrid(f"need at least one time cell, got {self.n_cells}")
        s0 = np.asarray(self.s0, dtype=float)
        if s0.shape != (self.n_assets,):
            raise DimensionMismatch(f"s0 has shape {s0.shape}, expected ({self.n_assets},)")
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "points", tuple(self.points))

    @property
    def dt_cell(self) -> float:
        return self.T / self.n_cells

    def cell_start(self, cell: int) -> float:
        return cell * self.dt_cell

    def labels(self) -> list:
        return [p.label for p in self.points]

    def coefficients(self, idx: int, cell: int, S=None):
        """Raw ``(r, a_tilde, sigma)`` as arrays."""
        r, a, sig = self.coeff_fn(cell, self.cell_start(cell), idx, S)
        return float(r), np.asarray(a, dtype=float), np.asarray(sig, dtype=float)

    def snapshot(self, idx: int, cell: int, S=None) -> CoeffSnapshot:
        r, a, sig = self.coefficients(idx, cell, S)
        if sig.shape[-2:] != (self.n_assets, self.n_drivers):
            raise DimensionMismatch(
                f"sigma has shape {sig.shape}, expected (..., {self.n_assets}, {self.n_drivers})")
        theta, piv = _theta_and_pivots(sig, a)
        return CoeffSnapshot(r, a, sig, theta, np.sum(theta**2, axis=-1), piv)


# ---------------------------------------------------------------------------
# market price of risk and replication matrix


def _pivot_rows(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Greedy pivot rows of a single ``n x m`` sigma; flags degeneracy."""
    n, m = sigma.shape
    if n < m:
        raise DegenerateVolatility(f"{n} assets cannot span {m} drivers")
    _, rr, piv = scipy.linalg.qr(sigma.T, pivoting=True, mode="economic")
    rows = np.sort(piv[:m])
    sub = sigma[rows, :]
    smin = np.linalg.svd(sub, compute_uv=False).min() if m else 1.0
    return rows, sub, smin < SIGMA_MIN


def _theta_single(sigma, a):
    rows, sub, degenerate = _pivot_rows(sigma)
    if degenerate:
        if np.max(np.abs(a), initial=0.0) <= ZERO_DRIFT_TOL:
            return np.zeros(sigma.shape[1]), rows
        raise DegenerateVolatility("no m-row subset of sigma is well conditioned")
    theta = np.linalg.solve(sub, a[rows])
    res = np.max(np.abs(sigma @ theta - a), initial=0.0)
    if res > RESIDUAL_TOL:
        raise ArbitrageInconsistent(f"sigma theta = a_tilde fails with residual {res:.3e}")
    return theta, rows


def _theta_and_pivots(sigma: np.ndarray, a: np.ndarray):
    if sigma.ndim == 2 and a.ndim == 1:
        theta, rows = _theta_single(sigma, a)
        return theta, rows
    sigma, a = np.broadcast_arrays(sigma, a[..., None])
    a = a[..., 0]
    batch = sigma.shape[:-2]
    n, m = sigma.shape[-2:]
    S2 = sigma.reshape(-1, n, m)
    A2 = a.reshape(-1, n)
    if m == 1:
        # one driver: the pivot is the largest |sigma| row, vectorized
        col = S2[:, :, 0]
        piv = np.argmax(np.abs(col), axis=1)
        k = np.arange(len(col))
        s = col[k, piv]
        ok = np.abs(s) >= SIGMA_MIN
        theta = np.where(ok, A2[k, piv] / np.where(ok, s, 1.0), 0.0)
        bad = ~ok & (np.max(np.abs(A2), axis=1) > ZERO_DRIFT_TOL)
        if np.any(bad):
            raise DegenerateVolatility("no asset loads on the driver")
        res = np.max(np.abs(col * theta[:, None] - A2), initial=0.0)
        if res > RESIDUAL_TOL:
            raise ArbitrageInconsistent(f"sigma theta = a_tilde fails with residual {res:.3e}")
        return theta.reshape(batch + (1,)), piv.reshape(batch + (1,))
    out = np.empty((len(S2), m))
    pivs = np.empty((len(S2), m), dtype=int)
    for k in range(len(S2)):
        out[k], pivs[k] = _theta_single(S2[k], A2[k])
    return out.reshape(batch + (m,)), pivs.reshape(batch + (m,))


def market_price_of_risk(sigma, a_tilde) -> np.ndarray:
    """Solve ``sigma theta = a_tilde`` through ``m`` pivot rows.

    Works on a single ``(n, m)`` matrix or a batch ``(..., n, m)``.  The
    system is checked over all ``n`` rows afterwards.

    Raises
    ------
    ArbitrageInconsistent
        When some asset's drift is not spanned by the pivot assets.
    DegenerateVolatility
        When no ``m``-row subset has smallest singular value ``>= 1e-8``
        (unless the drift is identically zero, in which case ``theta = 0``).
    """
    sigma = np.asarray(sigma, dtype=float)
    a = np.asarray(a_tilde, dtype=float)
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    if sigma.shape[-2] != a.shape[-1]:
        raise DimensionMismatch(f"sigma rows {sigma.shape[-2]} != a_tilde length {a.shape[-1]}")
    return _theta_and_pivots(sigma, a)[0]


def replication_matrix(sigma, rows=None) -> np.ndarray:
    """``n x m`` matrix ``D`` with ``D^T sigma = I_m`` supported on pivot rows.

    Hence ``theta^T D^T sigma = theta^T`` and ``D^T a_tilde = theta``
    whenever ``sigma theta = a_tilde``.  Batched input is accepted.  ``rows``
    forces a pivot set for a single matrix instead of the greedy QR choice.
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    if rows is not None:
        rows = np.sort(np.asarray(rows, dtype=int))
        sub = sigma[rows, :]
        if np.linalg.svd(sub, compute_uv=False).min() < SIGMA_MIN:
            raise DegenerateVolatility(f"pivot rows {list(rows)} are ill conditioned")
        D = np.zeros_like(sigma)
        D[rows, :] = np.linalg.inv(sub).T
        return D
    if sigma.ndim > 2:
        n, m = sigma.shape[-2:]
        flat = sigma.reshape(-1, n, m)
        if m == 1:
            col = flat[:, :, 0]
            piv = np.argmax(np.abs(col), axis=1)
            k = np.arange(len(col))
            s = col[k, piv]
            if np.any(np.abs(s) < SIGMA_MIN):
                raise DegenerateVolatility("no asset loads on the driver")
            D = np.zeros_like(flat)
            D[k, piv, 0] = 1.0 / s
            return D.reshape(sigma.shape)
        return np.stack([replication_matrix(s) for s in flat]).reshape(sigma.shape)
    rows, sub, degenerate = _pivot_rows(sigma)
    if degenerate:
        raise DegenerateVolatility("no m-row subset of sigma is well conditioned")
    D = np.zeros_like(sigma)
    D[rows, :] = np.linalg.inv(sub).T
    return D


def replication_residuals(sigma, a_tilde, theta, D) -> tuple[float, float]:
    """Max-abs residuals of ``theta^T D^T sigma = theta^T`` and ``D^T a = theta``."""
    sigma, a, theta, D = (np.asarray(v, dtype=float) for v in (sigma, a_tilde, theta, D))
    if sigma.ndim == 1:
        sigma = sigma[:, None]
    if D.ndim == 1:
        D = D[:, None]
    lhs = np.einsum("...j,...ij,...ik->...k", theta, D, sigma)
    r1 = float(np.max(np.abs(lhs - theta), initial=0.0))
    r2 = float(np.max(np.abs(np.einsum("...ij,...i->...j", D, a) - theta), initial=0.0))
    return r1, r2


# ---------------------------------------------------------------------------
# risk budget


def _probe_prices(cls: ParamClass, n_probe: int = 8, seed: int = 12345) -> np.ndarray:
    rng = np.random.default_rng(seed)
    S = cls.s0[None, :] * np.exp(rng.normal(0.0, 0.5, size=(n_probe, cls.n_assets)))
    return S


def cumulative_r(cls: ParamClass, point: "ParamPoint | int") -> float:
    """``sum_cells |theta|^2 dt`` for one point of the class.

    For path-dependent classes ``|theta|^2`` is evaluated along a few random
    price probes; any disagreement raises :class:`RandomR`.
    """
    idx = point if isinstance(point, (int, np.integer)) else cls.points.index(point)
    total = 0.0
    for cell in range(cls.n_cells):
        if cls.path_dependent:
            S = _probe_prices(cls)
            if cls.price_fn is not None:
                S = cls.price_fn(cls.cell_start(cell), S)
            tsq = np.atleast_1d(cls.snapshot(idx, cell, S).theta_sq)
            if np.ptp(tsq) > 1e-12 * max(1.0, float(np.max(tsq))):
                raise RandomR(f"|theta|^2 depends on the path in cell {cell} of {cls.name}")
            val = float(tsq[0])
        else:
            val = float(cls.snapshot(idx, cell).theta_sq)
        total += val * cls.dt_cell
    return total


# ---------------------------------------------------------------------------
# Black-Scholes in normalized units


def black_scholes(t: float, x, K: float, kind: str, vol: float, T: float):
    """Zero-rate Black-Scholes price and delta of a European call or put.

    ``x`` and ``K`` are in normalized units (for a bank rate ``r`` pass
    ``K * exp(-r T)``).  Vectorized over ``x``.
    """
    if K <= 0.0:
        raise InvalidStrike(f"strike must be positive, got {K}")
    if t >= T:
        raise ExpiredOption(f"option expired: t={t} >= T={T}")
    if vol == 0.0:
        raise ValueError("volatility must be nonzero")
    x = np.asarray(x, dtype=float)
    sd = abs(vol) * math.sqrt(T - t)
    d1 = (np.log(x / K) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    call = x * ndtr(d1) - K * ndtr(d2)
    if kind == "call":
        price, delta = call, ndtr(d1)
    elif kind == "put":
        price, delta = call - x + K, ndtr(d1) - 1.0
    else:
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")
    if price.ndim == 0:
        return float(price), float(delta)
    return price, delta


def _intrinsic(x, K, kind):
    return np.maximum(x - K, 0.0) if kind == "call" else np.maximum(K - x, 0.0)


# ---------------------------------------------------------------------------
# builders


def _check_count(name, v):
    if int(v) != v or v <= 0:
        raise InvalidGrid(f"{name} must be a positive integer, got {v}")
    return int(v)


def build_example_2_1(N: int, r: float, sigma: float, alphas: Sequence, T: float = 1.0,
                      s0: float = 1.0) -> ParamClass:
    """One stock, constant ``sigma``; each point is a vector of ``N`` cell drifts."""
    N = _check_count("N", N)
    pts = []
    for j, a in enumerate(alphas):
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if a.shape != (N,):
            raise DimensionMismatch(f"point {j} has {a.size} drifts, expected {N}")
        pts.append(ParamPoint(tuple(a), f"a{j}"))
    table = np.array([p.coords for p in pts])
    sig = np.array([[float(sigma)]])

    def coeff(cell, t, idx, S):
        return r, np.array([table[idx, cell]]), sig

    return ParamClass("example_2_1", tuple(pts), T, N, 1, 1, coeff, np.array([s0]))


def build_example_3_1(alpha1: float, alpha2: float, r: float, a_tilde: float, T: float = 1.0,
                      s0: float = 1.0) -> ParamClass:
    """Volatility ``alpha1`` before ``T/2``, then ``alpha1`` or ``alpha2``."""
    pts = (ParamPoint((alpha1,), "s1"), ParamPoint((alpha2,), "s2"))

    def coeff(cell, t, idx, S):
        vol = alpha1 if cell == 0 else pts[idx].coords[0]
        return r, np.array([a_tilde]), np.array([[vol]])

    return ParamClass("example_3_1", pts, T, 2, 1, 1, coeff, np.array([s0]))


def _as_time_fn(v):
    return v if callable(v) else (lambda t, _v=float(v): _v)


def build_example_4_1(maturities: Sequence[float], q=-0.3, sigma_bond=None, r=0.0,
                      n_cells: int = 64) -> ParamClass:
    """Zero-coupon bonds driven by one Brownian motion.

    Parameters
    ----------
    maturities : increasing list; the last one is the horizon.
    q : float, callable ``q(t)``, or a list of those (one point each).
    sigma_bond : callable ``(t, T_k) -> volatility``; default ``0.1 (T_k - t)``.
    r : float or callable short rate (deterministic).
    """
    mats = np.asarray(maturities, dtype=float)
    if mats.ndim != 1 or mats.size == 0 or mats[0] <= 0.0 or np.any(np.diff(mats) <= 0.0):
        raise InvalidMaturities(f"maturities must be positive and strictly increasing: {maturities}")
    T = float(mats[-1])
    n_cells = _check_count("n_cells", n_cells)
    if sigma_bond is None:
        sigma_bond = lambda t, Tk: 0.1 * (Tk - t)  # noqa: E731
    qs = list(q) if isinstance(q, (list, tuple)) else [q]
    qfns = [_as_time_fn(v) for v in qs]
    rfn = _as_time_fn(r)
    pts = tuple(ParamPoint((float(v) if not callable(v) else float(j),), f"q{j}")
                for j, v in enumerate(qs))
    n = mats.size

    def coeff(cell, t, idx, S):
        qv = qfns[idx](t)
        sig = np.array([sigma_bond(t, Tk) if t < Tk else 0.0 for Tk in mats])
        return rfn(t), -qv * sig, sig[:, None]

    # P(0, T_k) = exp(-int_0^{T_k} r) for deterministic r and q; normalized units
    dt = T / n_cells
    grid = np.arange(n_cells) * dt
    s0 = np.array([math.exp(-sum(rfn(s) * dt for s in grid if s < Tk)) for Tk in mats])
    return ParamClass("example_4_1", pts, T, n_cells, n, 1, coeff, s0)


def build_example_4_2(strikes: Sequence[float], r: float, sigma11: float, drifts: Sequence,
                      T: float = 1.0, s0: float = 1.0, n_cells: int | None = None) -> ParamClass:
    """Stock plus one call and one put per strike, all expiring at ``T``.

    ``drifts`` lists one point per entry: a float (constant excess drift of
    the stock) or a vector of per-cell drifts.  Option rows are the stock row
    scaled by the option delta evaluated at the current stock price, so the
    coefficients depend on the path while ``|theta|^2`` does not.
    """
    K = np.asarray(strikes, dtype=float).reshape(-1)
    if np.any(K <= 0.0):
        raise InvalidStrike(f"strikes must be positive: {list(K)}")
    if sigma11 == 0.0:
        raise DegenerateVolatility("stock volatility must be nonzero")
    N = K.size
    Kn = K * math.exp(-r * T)
    rows = [np.atleast_1d(np.asarray(d, dtype=float)) for d in drifts]
    if n_cells is None:
        n_cells = max(len(d) for d in rows) if rows else 1
    n_cells = _check_count("n_cells", n_cells)
    table = np.empty((len(rows), n_cells))
    for j, d in enumerate(rows):
        if d.size == 1:
            table[j] = d[0]
        elif d.size == n_cells:
            table[j] = d
        else:
            raise DimensionMismatch(f"drift point {j} has {d.size} cells, expected {n_cells}")
    pts = tuple(ParamPoint(tuple(table[j]), f"d{j}") for j in range(len(rows)))
    n = 1 + 2 * N

    def deltas(t, x):
        dc = np.stack([black_scholes(t, x, k, "call", sigma11, T)[1] for k in Kn], axis=-1) \
            if N else np.empty(x.shape + (0,))
        return np.concatenate([np.ones(x.shape + (1,)), dc, dc - 1.0], axis=-1)

    def coeff(cell, t, idx, S):
        a1 = table[idx, cell]
        if S is None:
            S = np.asarray(price_fn(t, s0_all[None, :]))
        x = np.asarray(S, dtype=float)[..., 0]
        scale = deltas(t, x)
        return r, a1 * scale, (sigma11 * scale)[..., None]

    def price_fn(t, S):
        S = np.array(S, dtype=float, copy=True)
        if N == 0:
            return S
        x = S[..., 0]
        for i, k in enumerate(Kn):
            if t < T:
                c, _ = black_scholes(t, x, k, "call", sigma11, T)
                p = c - x + k
            else:
                c, p = _intrinsic(x, k, "call"), _intrinsic(x, k, "put")
            S[..., 1 + i] = c
            S[..., 1 + N + i] = p
        return S

    s0_all = np.concatenate([[s0], np.zeros(2 * N)])
    s0_all = price_fn(0.0, s0_all[None, :])[0]
    return ParamClass("example_4_2", pts, T, n_cells, n, 1, coeff, s0_all,
                      path_dependent=N > 0, price_fn=price_fn)


def build_example_4_3(k: int, r: float, a_tilde: float, sigma_bar: float, T: float = 1.0,
                      s0: float = 1.0, keep_zero_vol: bool = False) -> ParamClass:
    """Volatility switches from ``sigma_bar`` to ``alpha_1`` at time ``alpha_2 T``.

    ``alpha_1`` runs over ``{0, +-1/k, ..., +-1}`` and ``alpha_2`` over
    ``{0, 1/k, ..., 1}``.  Points with ``alpha_1 = 0`` are dropped unless
    ``keep_zero_vol`` is set and ``a_tilde = 0``, since a zero volatility
    with nonzero drift has no market price of risk.
    """
    k = _check_count("k", k)
    levels = [j / k for j in range(-k, k + 1)]
    switch = [j / k for j in range(k + 1)]
    pts = []
    dropped = 0
    for a1 in levels:
        for a2 in switch:
            if a1 == 0.0 and not (keep_zero_vol and a_tilde == 0.0):
                dropped += 1
                continue
            pts.append(ParamPoint((a1, a2), f"v{a1:+.3g}@{a2:.3g}"))
    if dropped:
        log.warning("example_4_3: dropped %d zero-volatility points", dropped)
    if keep_zero_vol and a_tilde != 0.0:
        log.warning("example_4_3: keep_zero_vol ignored because a_tilde != 0")

    def coeff(cell, t, idx, S):
        a1, a2 = pts[idx].coords
        # cell j covers [jT/k, (j+1)T/k); the switch time is a multiple of T/k
        vol = sigma_bar if t < a2 * T - 1e-12 * T else a1
        return r, np.array([a_tilde]), np.array([[vol]])

    return ParamClass("example_4_3", tuple(pts), T, k, 1, 1, coeff, np.array([s0]))


def build_custom(a_tilde, sigma, r=0.0, T: float = 1.0, s0=None, labels=None,
                 name: str = "custom") -> ParamClass:
    """Class given by tables ``a_tilde[point][cell][asset]`` and
    ``sigma[point][cell][asset][driver]``."""
    A = np.asarray(a_tilde, dtype=float)
    S = np.asarray(sigma, dtype=float)
    if A.ndim != 3 or S.ndim != 4 or S.shape[:3] != A.shape:
        raise DimensionMismatch(f"incompatible table shapes {A.shape} and {S.shape}")
    n_pts, n_cells, n = A.shape
    m = S.shape[3]
    labels = labels or [f"p{j}" for j in range(n_pts)]
    if len(labels) != n_pts:
        raise DimensionMismatch("one label per point expected")
    pts = tuple(ParamPoint((float(j),), lab) for j, lab in enumerate(labels))
    rfn = _as_time_fn(r)
    s0 = np.ones(n) if s0 is None else np.asarray(s0, dtype=float)

    def coeff(cell, t, idx, _S):
        return rfn(t), A[idx, cell], S[idx, cell]

    return ParamClass(name, pts, T, n_cells, n, m, coeff, s0)


def single_stock(a_tilde: float | Sequence, sigma: float, r: float = 0.0, T: float = 1.0,
                 s0: float = 1.0) -> ParamClass:
    """One stock with constant volatility; one point per entry of ``a_tilde``."""
    drifts = np.atleast_1d(np.asarray(a_tilde, dtype=float))
    return build_example_2_1(1, r, sigma, [[d] for d in drifts], T=T, s0=s0)
