"""Acceptance suite: one test per criterion, one summary line each.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest
from scipy.special import erf

from maximin.calibration import calibrate_lambda, price_of_claim
from maximin.market_model import (
    build_custom,
    build_example_2_1,
    build_example_3_1,
    build_example_4_1,
    build_example_4_2,
    build_example_4_3,
    cumulative_r,
    single_stock,
)
from maximin.pde_engine import FdGrid, HSolution, h_fd_solve, h_quadrature
from maximin.saddle import run_saddle
from maximin.simulator import (
    SimConfig,
    estimate_value,
    martingale_checks,
    replication_error,
    simulate_paths,
    wealth_price,
)
from maximin.strategy_engine import (
    StrategyState,
    Trivial,
    build_maximin_strategy,
    build_point_strategy,
    pde_portfolio,
)
from maximin.utility_dual import (
    DomainInterval,
    LogUtility,
    PowerUtility,
    QuadraticUtility,
    digital_claim,
    eval_utility,
)

pytestmark = pytest.mark.acceptance


def test_criterion_01_merton_equivalence(criterion):
    t0 = time.perf_counter()
    sigma, a = 0.2, 0.04
    cls = single_stock([a], sigma)
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    snap = cls.snapshot(0, 0)
    Z = np.exp(np.linspace(-1.5, 1.5, 20))
    worst = 0.0
    for t in np.linspace(0.0, 0.95, 20):
        acc = np.full(20, (a / sigma) ** 2 * t)
        X = np.asarray(st.hsol.h(Z, float(t)))  # wealth on the optimal path
        state = StrategyState(float(t), np.ones(20), Z, acc, X, snap)
        pi = pde_portfolio(state, st)[:, 0]
        merton = X * a / sigma**2
        worst = max(worst, float(np.max(np.abs(pi / merton - 1.0))))
    dt = time.perf_counter() - t0
    criterion(1, worst <= 1e-6 and dt < 1.0,
              f"max rel |pi - X a/sigma^2| = {worst:.2e} (tol 1e-6), {dt:.2f}s (< 1s)")


def test_criterion_02_log_value_formula(criterion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for R in (0.1, 0.4):
        sigma = 0.2
        cls = single_stock([sigma * math.sqrt(R)], sigma)
        st = build_point_strategy(cls, 0, LogUtility(), 1.0)
        res = simulate_paths(cls, 0, st, LogUtility(), 1.0,
                             SimConfig(n_paths=100_000, n_steps=512, seed=2024))
        est = estimate_value(res, LogUtility())
        z = (est.mean - R / 2.0) / est.stderr
        ok &= abs(z) <= 3.0
        parts.append(f"R={R}: {est.mean:.5f}+-{est.stderr:.5f} vs {R / 2:.3f} ({z:+.2f} se)")
    dt = time.perf_counter() - t0
    ok &= dt < 30.0
    criterion(2, ok, "; ".join(parts) + f"; {dt:.1f}s (< 30s)")


def test_criterion_03_pde_cross_validation(criterion):
    t0 = time.perf_counter()
    R = 1.0
    sol = HSolution(R, 1.0, digital_claim(1.0), 1.0)
    grid = h_fd_solve(sol, FdGrid.centered(1.0, R, 801, 400))
    mid = grid.middle_half()
    x = grid.x[mid]
    hq = np.asarray(h_quadrature(sol, x, 0.0))
    fd_err = float(np.max(np.abs(grid.values[0][mid] - hq) / np.abs(hq)))
    exact = 0.5 * (1.0 + erf((np.log(x) - R / 2.0) / math.sqrt(2.0 * R)))
    cf_err = float(np.max(np.abs(hq - exact) / exact))
    dt = time.perf_counter() - t0
    criterion(3, fd_err <= 1e-3 and cf_err <= 1e-6 and dt < 5.0,
              f"quad vs CN {fd_err:.2e} (tol 1e-3), quad vs normal CDF {cf_err:.2e} (tol 1e-6), "
              f"{dt:.2f}s (< 5s)")


def test_criterion_04_calibration_oracle(criterion):
    delta, X0, R = 0.5, 1.0, 0.25
    beta = 1.0 / (delta - 1.0)
    exact = delta * X0 ** (delta - 1.0) * math.exp(-R * (1.0 + beta) / 2.0)
    lam = calibrate_lambda(PowerUtility(delta), R, X0).lambda_hat
    err = abs(lam - exact)
    criterion(4, err <= 1e-8, f"lambda_hat={lam:.12f} closed form={exact:.12f} |diff|={err:.1e} "
                              f"(tol 1e-8)")


def test_criterion_05_replication_convergence(criterion):
    steps = np.array([128, 512, 2048])
    cls = single_stock([0.08], 0.2)
    parts, ok = [], True
    for name, u in (("log", LogUtility()), ("power", PowerUtility(0.5))):
        st = build_point_strategy(cls, 0, u, 1.0)
        rms = []
        for n in steps:
            res = simulate_paths(cls, 0, st, u, 1.0, SimConfig(n_paths=4000, n_steps=int(n), seed=5))
            rms.append(replication_error(res, st.hsol.claim))
        # order in the step size dt = T / n_steps
        slope = float(np.polyfit(np.log(1.0 / steps), np.log(rms), 1)[0])
        ok &= 0.35 <= slope <= 0.65
        parts.append(f"{name}: rms {', '.join(f'{v:.2e}' for v in rms)} slope {slope:.3f}")
    criterion(5, ok, "; ".join(parts) + " (slope in [0.35, 0.65])")


def test_criterion_06_saddle_point(criterion):
    sigma = 0.2
    # two cells; R = 0.1 (flat) and R = 0.4 (0.2 then 0.6 per unit time)
    alphas = [[sigma * math.sqrt(0.1)] * 2, [sigma * math.sqrt(0.2), sigma * math.sqrt(0.6)]]
    cls = build_example_2_1(2, 0.0, sigma, alphas)
    rep = run_saddle(cls, LogUtility(), 1.0, SimConfig(n_paths=100_000, n_steps=256, seed=11))
    i = rep.maximin_row
    c = rep.checks
    ok = c["row_min_at_rmin"] and c["diagonal_strict"] and c["gap_within_3se"]
    V = ", ".join(f"{v:.4f}" for v in rep.payoff.ravel())
    criterion(6, ok, f"R=[{rep.R[0]:.4g}, {rep.R[1]:.4g}] V=[{V}] row {i} min at col {i}: "
                     f"{c['row_min_at_rmin']}, diagonal strict: {c['diagonal_strict']}, "
                     f"gap {rep.gap:.2e} (3se={3 * rep.gap_stderr:.2e})")


def test_criterion_07_trivial_case(criterion):
    cls = build_custom([[[0.04]], [[0.0]], [[0.1]]],
                       [[[[0.2]]], [[[0.2]]], [[[0.3]]]])
    ok, parts = True, []
    for name, u, X0 in (("log", LogUtility(), 1.5), ("power", PowerUtility(0.5), 2.0),
                        ("quadratic", QuadraticUtility(1.0, 4.0), 1.0)):
        st = build_maximin_strategy(cls, u, X0)
        ok &= isinstance(st, Trivial)
        target = float(eval_utility(u, X0))
        for j in range(3):
            est = estimate_value(simulate_paths(cls, j, st, u, X0,
                                                SimConfig(n_paths=2000, n_steps=8, seed=j)), u)
            ok &= est.mean == target and est.stderr == 0.0
        parts.append(f"{name}: {type(st).__name__}, value == U(X0)={target:.6g}")
    criterion(7, ok, "; ".join(parts))


def test_criterion_08_degenerate_markets(criterion):
    cfg = SimConfig(n_paths=20_000, n_steps=128, seed=3)
    u = LogUtility()
    bonds = build_example_4_1([1.0, 2.0, 3.0], q=-0.3, n_cells=64)
    rb = simulate_paths(bonds, 0, build_point_strategy(bonds, 0, u, 1.0), u, 1.0, cfg)
    opts = build_example_4_2([0.9, 1.1], 0.0, 0.2, [0.08])
    ro = simulate_paths(opts, 0, build_point_strategy(opts, 0, u, 1.0), u, 1.0, cfg)
    theta_res = max(rb.diagnostics["theta_residual"], ro.diagnostics["theta_residual"])
    ident = max(rb.diagnostics["replication_residual"], ro.diagnostics["replication_residual"],
                rb.diagnostics["identity_residual"], ro.diagnostics["identity_residual"])
    # single-stock market with the same budget, independent random numbers
    stock = single_stock([0.08], 0.2)
    assert cumulative_r(stock, 0) == pytest.approx(cumulative_r(opts, 0))
    rs = simulate_paths(stock, 0, build_point_strategy(stock, 0, u, 1.0), u, 1.0,
                        SimConfig(n_paths=20_000, n_steps=128, seed=4))
    eo, es = estimate_value(ro, u), estimate_value(rs, u)
    se = math.hypot(eo.stderr, es.stderr)
    ok = theta_res <= 1e-8 and ident <= 1e-10 and abs(eo.mean - es.mean) <= 3.0 * se
    criterion(8, ok, f"theta residual {theta_res:.1e} (tol 1e-8), identities {ident:.1e} "
                     f"(tol 1e-10), mean U options {eo.mean:.5f} vs stock {es.mean:.5f} "
                     f"(|diff|={abs(eo.mean - es.mean):.1e}, 3se={3 * se:.1e})")


def shipped_classes():
    return {
        "example_2_1": build_example_2_1(2, 0.0, 0.2, [[0.04, 0.08], [0.08, 0.16]]),
        "example_3_1": build_example_3_1(0.2, 0.3, 0.0, 0.08),
        "example_4_1": build_example_4_1([1.0, 2.0, 3.0], q=-0.3, n_cells=64),
        "example_4_2": build_example_4_2([0.9, 1.1], 0.0, 0.2, [0.04, 0.08]),
        "example_4_3": build_example_4_3(1, 0.0, 0.04, 0.2),
        "single_stock": single_stock([0.04, 0.08], 0.2),
        "custom": build_custom([[[0.04, 0.02]], [[0.0, 0.05]]],
                               [[[[0.2, 0.0], [0.1, 0.3]]], [[[0.25, 0.0], [0.0, 0.2]]]]),
    }


def test_criterion_09_martingale_sanity(criterion):
    worst, n_checks, bad = 0.0, 0, []
    for name, cls in shipped_classes().items():
        for j in range(len(cls.points)):
            res = simulate_paths(cls, j, Trivial(), LogUtility(), 1.0,
                                 SimConfig(n_paths=40_000, n_steps=128, seed=17))
            mc = martingale_checks(res)
            pairs = [("1/Z", mc["inv_Z"], 1.0)]
            pairs += [(f"S{i}/Z", v, s0) for i, (v, s0) in enumerate(zip(mc["S_over_Z"], res.S0))]
            for what, (m, se), target in pairs:
                n_checks += 1
                # when sigma = theta the ratio is deterministic and se is pure rounding
                err = max(abs(m - target) - 1e-12 * abs(target), 0.0)
                z = err / se if se > 0 else (0.0 if err == 0.0 else math.inf)
                worst = max(worst, z)
                if z > 3.0:
                    bad.append(f"{name}[{j}] {what}: {z:.2f} se")
    criterion(9, not bad, f"{n_checks} checks over {len(shipped_classes())} classes, "
                          f"worst {worst:.2f} se (tol 3)" + (f"; failing {bad}" if bad else ""))


def test_criterion_10_floor_constraint(criterion):
    kappa, X0 = 0.5, 1.0
    u = LogUtility(domain=DomainInterval(kappa * X0, math.inf))
    cls = build_example_3_1(0.2, 0.3, 0.0, 0.08)
    st = build_maximin_strategy(cls, u, X0)
    quad_price = price_of_claim(u, st.lambda_hat, st.R, cls.T)
    ok, parts = abs(quad_price - X0) <= 1e-8, [f"quadrature price {quad_price:.10f}"]
    cfg = SimConfig(n_paths=100_000, n_steps=256, seed=21, wealth_scheme="cushion")
    for j in range(len(cls.points)):
        res = simulate_paths(cls, j, st, u, X0, cfg)
        low = float(res.X_T.min())
        p, se = wealth_price(res)
        ok &= low >= kappa * X0 - 1e-6 * X0 and abs(p - X0) <= 3.0 * se
        parts.append(f"point {j}: min X {low:.6f} (>= {kappa * X0 - 1e-6 * X0:.6f}), "
                     f"E[X/Z]={p:.5f}+-{se:.5f}")
    criterion(10, ok, "; ".join(parts))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
