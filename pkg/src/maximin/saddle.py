"""Payoff matrix of point-tuned strategies against true points.

Row ``i`` runs the PDE strategy tuned to point ``i`` (budget ``R_i``),
column ``j`` simulates the market at point ``j``.  From the matrix we read
off the worst case of every row, the best response in every column, and the
pure and mixed min-max values of the resulting finite game.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import CalibrationFailed, MaximinError
from .market_model import ParamClass, cumulative_r
from .simulator import SimConfig, estimate_value, simulate_paths
from .strategy_engine import pde_strategy
from .utility_dual import UtilityFamily

log = logging.getLogger(__name__)

SIMPLEX_STEP = 0.05
MAX_SIMPLEX_POINTS = 200_000

FOOTER = ("Duality gap computed on a finite parameter grid with simplex mixtures; "
          "it is Monte Carlo evidence for the saddle structure, not a proof.")


@dataclass
class SaddleReport:
    labels: list
    R: np.ndarray
    lambdas: np.ndarray
    payoff: np.ndarray
    stderr: np.ndarray
    maximin_row: int
    sup_inf: float
    inf_sup: float
    gap: float
    gap_stderr: float
    worst_mixture: np.ndarray
    mixture_value: float
    lp_value: float
    checks: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)
    violations: np.ndarray | None = None
    footer: str = FOOTER

    @property
    def R_min(self) -> float:
        return float(self.R[self.maximin_row])


def _simplex_grid(n: int, step: float):
    k = int(round(1.0 / step))
    n_pts = math.comb(k + n - 1, n - 1)
    if n_pts > MAX_SIMPLEX_POINTS:
        return None
    out = []
    for cuts in itertools.combinations(range(k + n - 1), n - 1):
        parts = np.diff(np.concatenate([[-1], cuts, [k + n - 1]])) - 1
        out.append(parts / k)
    return np.array(out)


def mixed_inf_sup(V: np.ndarray) -> tuple[float, np.ndarray]:
    """``min_w max_i (V w)_i`` over the probability simplex, by linear programming."""
    n_rows, n_cols = V.shape
    # variables (w_1..w_n, t); minimize t subject to V w - t <= 0
    c = np.zeros(n_cols + 1)
    c[-1] = 1.0
    A_ub = np.hstack([V, -np.ones((n_rows, 1))])
    A_eq = np.concatenate([np.ones(n_cols), [0.0]])[None, :]
    bounds = [(0.0, None)] * n_cols + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n_rows), A_eq=A_eq, b_eq=[1.0],
                  bounds=bounds, method="highs")
    if not res.success:
        raise MaximinError(f"mixture LP failed: {res.message}")
    return float(res.x[-1]), res.x[:-1]


def game_values(V: np.ndarray, step: float = SIMPLEX_STEP):
    """Pure sup-inf, grid inf-sup over column mixtures, and the LP value."""
    sup_inf = float(np.max(np.min(V, axis=1)))
    n = V.shape[1]
    best = float(np.min(np.max(V, axis=0)))
    w_best = np.eye(n)[int(np.argmin(np.max(V, axis=0)))]
    grid = _simplex_grid(n, step)
    if grid is not None:
        vals = np.max(grid @ V.T, axis=1)
        j = int(np.argmin(vals))
        if vals[j] < best:
            best, w_best = float(vals[j]), grid[j]
    lp, w_lp = mixed_inf_sup(V)
    if grid is None and lp < best:
        best, w_best = lp, w_lp
    return sup_inf, best, w_best, lp


def run_saddle(cls: ParamClass, u: UtilityFamily, X0: float, cfg: SimConfig,
               on_exhausted: str = "stop") -> SaddleReport:
    """Fill the payoff matrix and evaluate the saddle-point checks.

    Every cell uses the same seed, so all entries share common random
    numbers.  Points whose calibration fails are dropped with a warning.
    """
    labels, Rs, strategies, lambdas, keep, excluded = [], [], [], [], [], []
    for i, p in enumerate(cls.points):
        R = cumulative_r(cls, i)
        try:
            st = pde_strategy(u, R, X0, cls.T, on_exhausted)
        except (CalibrationFailed, MaximinError) as exc:
            log.warning("point %s excluded: %s", p.label, exc)
            excluded.append((p.label, str(exc)))
            continue
        keep.append(i)
        labels.append(p.label)
        Rs.append(R)
        strategies.append(st)
        lambdas.append(getattr(st, "lambda_hat", math.nan))
    if not keep:
        raise CalibrationFailed("no point of the class could be calibrated")

    n = len(keep)
    V = np.empty((n, n))
    E = np.empty((n, n))
    viol = np.zeros((n, n), dtype=int)
    for a, st in enumerate(strategies):
        for b, j in enumerate(keep):
            res = simulate_paths(cls, j, st, u, X0, cfg)
            est = estimate_value(res, u)
            V[a, b], E[a, b], viol[a, b] = est.mean, est.stderr, est.n_violations

    Rs = np.array(Rs)
    i_star = int(np.argmin(Rs))
    sup_inf, inf_sup, w, lp = game_values(V)
    gap = inf_sup - sup_inf
    a_si = int(np.argmax(np.min(V, axis=1)))
    b_si = int(np.argmin(V[a_si]))
    se_si = E[a_si, b_si]
    se_is = float(np.max(np.sqrt((w**2) @ (E.T**2))))
    gap_se = math.sqrt(se_si**2 + se_is**2)

    checks = {}
    row = V[i_star]
    checks["row_min_at_rmin"] = bool(
        np.all(row >= row[i_star] - 3.0 * np.hypot(E[i_star], E[i_star, i_star])))
    order = np.argsort(Rs, kind="stable")
    diag = np.diag(V)[order]
    dse = np.diag(E)[order]
    dR = np.diff(Rs[order])
    steps = np.diff(diag)
    step_se = np.hypot(dse[1:], dse[:-1])
    checks["diagonal_nondecreasing"] = bool(np.all((steps >= -3.0 * step_se) | (dR == 0.0)))
    checks["diagonal_strict"] = bool(np.all((steps > 3.0 * step_se) | (dR == 0.0)))
    best_resp = True
    for b in range(n):
        for a in range(n):
            if Rs[a] != Rs[b] and V[b, b] < V[a, b] - 3.0 * math.hypot(E[a, b], E[b, b]):
                best_resp = False
    checks["best_response"] = best_resp
    checks["gap_within_3se"] = bool(abs(gap) <= 3.0 * gap_se + 1e-15)
    checks["gap_nonnegative"] = bool(gap >= -3.0 * gap_se - 1e-15)
    mixture_value = float(V[i_star] @ w)
    return SaddleReport(labels, Rs, np.array(lambdas), V, E, i_star, sup_inf, inf_sup, gap,
                        gap_se, w, mixture_value, lp, checks, excluded, viol)
