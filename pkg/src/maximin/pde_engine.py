"""Solver for the backward equation

    H_t + (R / 2T) x**2 H_xx = 0,   H(x, T) = F(x, lam),   x > 0,

whose solution drives the optimal strategy.  With ``rho = R (T - t) / T``,

    H(x, t) = E F(x * exp(-rho/2 + sqrt(rho) * N(0,1)), lam)

which is evaluated by Gaussian quadrature.  A Crank-Nicolson solver on a
log-spaced grid is kept as an independent cross-check, and claims with a
closed form are evaluated exactly in the hot simulation loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.linalg import LinAlgError, solve_banded

from .errors import QuadratureOverflow, SingularTridiagonal
from .utility_dual import Claim

GH_NODES = 64
GH_NODES_JUMP = 256
PIECE_NODES = 128
ZETA_RANGE = 14.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _gauss_hermite(n):
    t, w = hermegauss(n)
    return t, w / _SQRT_2PI


def _gauss_legendre(n):
    return leggauss(n)


_GH_CACHE: dict = {}
_GL_CACHE: dict = {}


def _gh(n):
    if n not in _GH_CACHE:
        _GH_CACHE[n] = _gauss_hermite(n)
    return _GH_CACHE[n]


def _gl(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = _gauss_legendre(n)
    return _GL_CACHE[n]


@dataclass(frozen=True)
class HSolution:
    """Evaluator for ``H(x, t, R, lam)`` with terminal claim ``claim``."""

    R: float
    lam: float
    claim: Claim
    T: float

    def __post_init__(self):
        if self.R < 0.0:
            raise ValueError(f"R must be nonnegative, got {self.R}")
        if self.T <= 0.0:
            raise ValueError(f"horizon must be positive, got {self.T}")

    def rho(self, t: float) -> float:
        """Remaining variance ``R (T - t) / T`` of the log density under P*."""
        t = min(float(t), self.T)
        return max(self.R * (self.T - t) / self.T, 0.0)

    def h(self, x, t):
        """``H(x, t)``; closed form when the claim has one, else quadrature."""
        if self.claim.has_closed_form:
            out = self.claim.expectation(np.asarray(x, dtype=float), self.rho(t))
            return float(out) if np.ndim(out) == 0 else out
        return h_quadrature(self, x, t)

    def hx(self, x, t):
        """``dH/dx (x, t)``; closed form when available, else quadrature."""
        if self.claim.has_closed_form:
            out = self.claim.expectation_dx(np.asarray(x, dtype=float), self.rho(t))
            return float(out) if np.ndim(out) == 0 else out
        return hx_quadrature(self, x, t)


def _integrate(f, x, rho, claim: Claim):
    """``E g(x, zeta)`` for ``g = f(x * exp(-rho/2 + sqrt(rho) zeta)) * weight``.

    ``f`` receives the terminal points ``z`` of shape ``(len(x), n)`` and the
    matching lognormal factors ``Y``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sq = math.sqrt(rho)
    bps = claim.breakpoints()
    if bps and claim.jumps_known:
        # split at the breakpoints; each piece is smooth so Gauss-Legendre
        # converges exponentially there
        br = (np.log(np.asarray(bps)[None, :] / x[:, None]) + 0.5 * rho) / sq
        br = np.clip(br, -ZETA_RANGE, ZETA_RANGE)
        edges = np.concatenate(
            [np.full((x.size, 1), -ZETA_RANGE), np.sort(br, axis=1),
             np.full((x.size, 1), ZETA_RANGE)], axis=1)
        t, w = _gl(PIECE_NODES)
        lo, hi = edges[:, :-1, None], edges[:, 1:, None]
        half = 0.5 * (hi - lo)
        zeta = (half * t + 0.5 * (hi + lo)).reshape(x.size, -1)
        wts = (half * w).reshape(x.size, -1) * np.exp(-0.5 * zeta**2) / _SQRT_2PI
    else:
        n = GH_NODES_JUMP if claim.has_jumps else GH_NODES
        t, w = _gh(n)
        zeta = np.broadcast_to(t, (x.size, n))
        wts = np.broadcast_to(w, (x.size, n))
    y = np.exp(-0.5 * rho + sq * zeta)
    z = x[:, None] * y
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(f(z, y), dtype=float)
    bad = ~np.isfinite(vals) & (wts > 0.0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise QuadratureOverflow(
            f"integrand not finite at node zeta={zeta[i, j]:.6g} (z={z[i, j]:.6g}, x={x[i]:.6g})"
        )
    vals = np.where(wts > 0.0, vals, 0.0)
    return np.sum(vals * wts, axis=1)


def _shape_like(out, x):
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def h_quadrature(sol: HSolution, x, t):
    """``H(x, t)`` by Gauss quadrature of the lognormal representation.

    Smooth claims use 64 Gauss-Hermite nodes.  Claims with analytically
    known jumps or kinks are integrated piecewise between them; claims with
    jumps at unknown places fall back to 256 Gauss-Hermite nodes.
    """
    if t > sol.T:
        raise ValueError(f"t={t} beyond horizon {sol.T}")
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0):
        raise ValueError("H is defined for x > 0 only")
    rho = sol.rho(t)
    if rho == 0.0:
        out = np.atleast_1d(np.asarray(sol.claim(xa), dtype=float))
        return _shape_like(out, x)
    out = _integrate(lambda z, y: sol.claim(z), xa.ravel(), rho, sol.claim)
    return _shape_like(out, x)


def hx_quadrature(sol: HSolution, x, t, diagnostics: dict | None = None):
    """``dH/dx`` by differentiating under the integral sign.

    Claims with jumps have no pathwise derivative; there a central difference
    of :func:`h_quadrature` with step ``max(1e-6 x, 1e-8)`` is used.  Pass a
    dict as ``diagnostics`` to learn which path was taken (key ``"method"``).
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0.0):
        raise ValueError("H is defined for x > 0 only")
    rho = sol.rho(t)
    claim = sol.claim
    deriv_ok = not claim.has_jumps and claim.derivative(np.ones(1)) is not None
    if deriv_ok:
        if diagnostics is not None:
            diagnostics["method"] = "pathwise"
        if rho == 0.0:
            out = np.atleast_1d(np.asarray(claim.derivative(xa), dtype=float))
            return _shape_like(out, x)
        out = _integrate(lambda z, y: claim.derivative(z) * y, xa.ravel(), rho, claim)
        return _shape_like(out, x)
    if diagnostics is not None:
        diagnostics["method"] = "central_difference"
    step = np.maximum(1e-6 * xa, 1e-8)
    up = np.asarray(h_quadrature(sol, xa + step, t), dtype=float)
    dn = np.asarray(h_quadrature(sol, xa - step, t), dtype=float)
    out = np.atleast_1d((up - dn) / (2.0 * step))
    return _shape_like(out, x)


# --------------------------------------------------------------------------- #
# Crank-Nicolson cross-check
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class FdGrid:
    """Uniform grid in ``y = log x`` with ``n_time`` backward steps.

    ``values[k, i]`` holds ``H(exp(y_i), k * T / n_time)`` once solved.
    """

    y_min: float
    y_max: float
    n_space: int
    n_time: int
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.n_space < 3 or self.n_time < 1:
            raise ValueError("FdGrid needs n_space >= 3 and n_time >= 1")
        if not self.y_min < self.y_max:
            raise ValueError("FdGrid needs y_min < y_max")

    @classmethod
    def centered(cls, x_center: float, R: float, n_space: int = 801, n_time: int = 400,
                 width: float = 8.0) -> "FdGrid":
        """Grid spanning ``log x_center +/- width * sqrt(R)``."""
        half = width * math.sqrt(R)
        y0 = math.log(x_center)
        return cls(y0 - half, y0 + half, n_space, n_time)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_space)

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.y)

    def times(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.n_time + 1)

    def middle_half(self) -> slice:
        q = (self.n_space - 1) // 4
        return slice(q, self.n_space - q)


def _smoothing_kernel(u):
    # fourth-order piecewise-cubic smoothing kernel supported on [-2, 2]
    a = np.abs(u)
    inner = 1.0 - 2.5 * a**2 + 1.5 * a**3
    outer = 0.5 * (2.0 - a) ** 2 * (1.0 - a)
    return np.where(a <= 1.0, inner, np.where(a <= 2.0, outer, 0.0))


def _terminal_row(claim: Claim, y: np.ndarray) -> np.ndarray:
    """Point values of F, smoothed near jumps so the compact scheme keeps its order."""
    row = np.asarray(claim(np.exp(y)), dtype=float).copy()
    jumps = claim.jumps()
    if not jumps or len(y) < 2:
        return row
    h = y[1] - y[0]
    m = 1024
    u = -2.0 + 4.0 * (np.arange(m) + 0.5) / m
    w = _smoothing_kernel(u) * (4.0 / m)
    for jz in jumps:
        if jz <= 0.0:
            continue
        jy = math.log(jz)
        for i in np.nonzero(np.abs(y - jy) < 2.0 * h)[0]:
            row[i] = float(np.dot(w, claim(np.exp(y[i] + h * u))))
    return row


def _extrapolation_weights(x0, x1, x2):
    # H(x0) from the straight line through (x1, H1), (x2, H2)
    a = (x2 - x0) / (x2 - x1)
    return a, 1.0 - a


def h_fd_solve(sol: HSolution, grid: FdGrid, rannacher_steps: int = 2) -> FdGrid:
    """Backward Crank-Nicolson sweep from ``t = T`` to ``t = 0``.

    Works on ``H_t + (R/2T)(H_yy - H_y) = 0`` in ``y = log x``.  The drift is
    removed with ``H = exp(y/2 - c s/4) v`` (``s = T - t``, ``c = R/2T``),
    leaving ``v_s = c v_yy``, which is discretized with the fourth-order
    compact three-point operator and Crank-Nicolson in time.  Both ends use
    linear extrapolation in x.  The first ``rannacher_steps`` steps are split
    into two implicit half steps to damp the oscillations a discontinuous
    terminal claim would otherwise excite.
    """
    y = grid.y
    x = np.exp(y)
    n = grid.n_space
    dt = sol.T / grid.n_time
    h = y[1] - y[0]
    c = sol.R / (2.0 * sol.T)

    # linear-in-x extrapolation H0 = a H1 + b H2, rewritten for v
    al, bl = _extrapolation_weights(x[0], x[1], x[2])
    au, bu = _extrapolation_weights(x[-1], x[-2], x[-3])
    wl = (al * math.exp(0.5 * (y[1] - y[0])), bl * math.exp(0.5 * (y[2] - y[0])))
    wu = (au * math.exp(0.5 * (y[-2] - y[-1])), bu * math.exp(0.5 * (y[-3] - y[-1])))

    def set_boundary(v):
        if n == 3:
            v[0] = v[1] * math.exp(0.5 * (y[1] - y[0]))
            v[-1] = v[1] * math.exp(0.5 * (y[1] - y[-1]))
        else:
            v[0] = wl[0] * v[1] + wl[1] * v[2]
            v[-1] = wu[0] * v[-2] + wu[1] * v[-3]
        return v

    def step(v, ds, theta):
        mu = c * ds / h**2
        d2 = v[:-2] - 2.0 * v[1:-1] + v[2:]
        mass = (v[:-2] + 10.0 * v[1:-1] + v[2:]) / 12.0
        rhs = mass + (1.0 - theta) * mu * d2
        off = 1.0 / 12.0 - theta * mu
        dia = 10.0 / 12.0 + 2.0 * theta * mu
        m = n - 2
        if n == 3:
            e0 = math.exp(0.5 * (y[1] - y[0]))
            e2 = math.exp(0.5 * (y[1] - y[2]))
            new = rhs / (dia + off * (e0 + e2))
            if not np.all(np.isfinite(new)):
                raise SingularTridiagonal("degenerate 3-node system")
            out = np.empty(3)
            out[1] = new[0]
            return set_boundary(out)
        diag = np.full(m, dia)
        sup = np.full(m, off)
        sub = np.full(m, off)
        # eliminate v[0] and v[n-1] through the boundary relations
        diag[0] += off * wl[0]
        sup[0] += off * wl[1]
        diag[-1] += off * wu[0]
        sub[-1] += off * wu[1]
        ab = np.zeros((3, m))
        ab[0, 1:] = sup[:-1]
        ab[1, :] = diag
        ab[2, :-1] = sub[1:]
        try:
            inner = solve_banded((1, 1), ab, rhs, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise SingularTridiagonal(str(exc)) from exc
        out = np.empty(n)
        out[1:-1] = inner
        return set_boundary(out)

    values = np.empty((grid.n_time + 1, n))
    F = _terminal_row(sol.claim, y)
    v = np.exp(-0.5 * y) * F
    values[-1] = F
    for j, k in enumerate(range(grid.n_time - 1, -1, -1)):
        if j < rannacher_steps:
            v = step(step(v, 0.5 * dt, 1.0), 0.5 * dt, 1.0)
        else:
            v = step(v, dt, 0.5)
        s_elapsed = (j + 1) * dt
        values[k] = np.exp(0.5 * y - 0.25 * c * s_elapsed) * v
    return replace(grid, values=values)
