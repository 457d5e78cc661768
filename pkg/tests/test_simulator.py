import math

import numpy as np
import pytest

from maximin.errors import DimensionMismatch
from maximin.market_model import build_example_2_1, build_example_4_1, single_stock
from maximin.simulator import (
    SimConfig,
    estimate_value,
    martingale_checks,
    mean_with_stderr,
    replication_error,
    simulate_paths,
    wealth_price,
)
from maximin.strategy_engine import (
    Myopic,
    Trivial,
    build_point_strategy,
    strategy_norm_sq,
)
from maximin.utility_dual import DomainInterval, LogUtility, PowerUtility


def test_seeded_reproducible():
    cls = single_stock([0.04], 0.2)
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    cfg = SimConfig(n_paths=200, n_steps=16, seed=3)
    a = simulate_paths(cls, 0, st, LogUtility(), 1.0, cfg)
    b = simulate_paths(cls, 0, st, LogUtility(), 1.0, cfg)
    assert np.array_equal(a.X_T, b.X_T)
    c = simulate_paths(cls, 0, st, LogUtility(), 1.0, SimConfig(n_paths=200, n_steps=16, seed=4))
    assert not np.array_equal(a.X_T, c.X_T)


def test_common_random_numbers_across_points():
    cls = single_stock([0.04, 0.08], 0.2)
    cfg = SimConfig(n_paths=100, n_steps=8, seed=1)
    a = simulate_paths(cls, 0, Trivial(), LogUtility(), 1.0, cfg)
    b = simulate_paths(cls, 1, Trivial(), LogUtility(), 1.0, cfg)
    # same dw: log Z differs only through theta
    assert np.allclose(np.log(b.Z_T) - 0.5 * 0.16, 2.0 * (np.log(a.Z_T) - 0.5 * 0.04))


def test_trivial_keeps_wealth():
    cls = single_stock([0.04], 0.2)
    res = simulate_paths(cls, 0, Trivial(), LogUtility(), 1.3, SimConfig(n_paths=50, n_steps=4))
    assert np.all(res.X_T == 1.3)
    est = estimate_value(res, LogUtility())
    assert est.mean == math.log(1.3) and est.stderr == 0.0


def test_steps_must_divide_cells():
    cls = build_example_2_1(3, 0.0, 0.2, [[0.1, 0.1, 0.1]])
    with pytest.raises(DimensionMismatch):
        simulate_paths(cls, 0, Trivial(), LogUtility(), 1.0, SimConfig(n_paths=10, n_steps=4))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_paths=0)
    with pytest.raises(ValueError):
        SimConfig(wealth_scheme="rk4")


def test_myopic_log_wealth_tracks_density():
    # log-optimal wealth is X0 Z for constant coefficients in continuous time
    cls = single_stock([0.04], 0.2)
    cfg = SimConfig(n_paths=2000, n_steps=256, seed=5)
    res = simulate_paths(cls, 0, Myopic(1.0), LogUtility(), 1.0, cfg)
    assert np.sqrt(np.mean((res.X_T - res.Z_T) ** 2)) < 5e-3


def test_pde_replicates_claim():
    cls = single_stock([0.08], 0.2)
    u = PowerUtility(0.5)
    st = build_point_strategy(cls, 0, u, 1.0)
    res = simulate_paths(cls, 0, st, u, 1.0, SimConfig(n_paths=2000, n_steps=512, seed=2))
    assert replication_error(res, st.hsol.claim) < 0.05
    assert res.diagnostics["identity_residual"] < 1e-10
    assert res.diagnostics["theta_residual"] < 1e-12


def test_stop_records_budget_crossing():
    cls = build_example_2_1(2, 0.0, 0.2, [[0.04, 0.0], [0.04, 0.04]])
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    res = simulate_paths(cls, 1, st, LogUtility(), 1.0, SimConfig(n_paths=500, n_steps=64, seed=1))
    # the strategy tuned to R=0.02 stops at t=1/2 on the R=0.04 truth
    assert np.allclose(res.X_T, res.Z_stop, rtol=0.05)
    assert not np.allclose(res.Z_stop, res.Z_T)


def test_cushion_respects_floor():
    u = LogUtility(domain=DomainInterval(0.5, math.inf))
    cls = single_stock([0.08], 0.2)
    st = build_point_strategy(cls, 0, u, 1.0)
    cfg = SimConfig(n_paths=4000, n_steps=64, seed=11, wealth_scheme="cushion")
    res = simulate_paths(cls, 0, st, u, 1.0, cfg)
    assert res.X_T.min() >= 0.5 - 1e-6
    assert res.diagnostics["wealth_scheme"] == "cushion"


def test_estimate_value_counts_violations():
    u = LogUtility(domain=DomainInterval(0.5, math.inf))
    cls = single_stock([0.08], 0.2)
    res = simulate_paths(cls, 0, Trivial(), u, 1.0, SimConfig(n_paths=4, n_steps=1))
    res.X_T = np.array([1.0, 0.5 - 1e-8, 0.4, 2.0])
    est = estimate_value(res, u)
    assert est.n_violations == 1 and est.n_clipped == 1 and est.n_paths == 3
    assert est.mean == pytest.approx((math.log(2.0) + math.log(0.5)) / 3)


def test_mean_with_stderr_antithetic():
    v = np.array([1.0, 2.0, 3.0, 3.0, 2.0, 1.0])
    m, se = mean_with_stderr(v, antithetic=True)
    assert m == 2.0 and se == 0.0
    m, se = mean_with_stderr(v)
    assert se > 0.0


def test_martingale_checks_bonds():
    cls = build_example_4_1([0.5, 1.0], q=-0.3, n_cells=16)
    res = simulate_paths(cls, 0, Trivial(), LogUtility(), 1.0,
                         SimConfig(n_paths=20000, n_steps=64, seed=9))
    mc = martingale_checks(res)
    m, se = mc["inv_Z"]
    assert abs(m - 1.0) < 4 * se
    for (v, s), s0 in zip(mc["S_over_Z"], res.S0):
        assert abs(v - s0) < 4 * s


def test_wealth_price_is_x0():
    cls = single_stock([0.04], 0.2)
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    res = simulate_paths(cls, 0, st, LogUtility(), 1.0, SimConfig(n_paths=4000, n_steps=64, seed=2))
    p, se = wealth_price(res)
    assert abs(p - 1.0) < 4 * se + 1e-3


def test_antithetic_reduces_stderr():
    cls = single_stock([0.08], 0.2)
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    se = []
    for anti in (False, True):
        res = simulate_paths(cls, 0, st, LogUtility(), 1.0,
                             SimConfig(n_paths=20000, n_steps=32, seed=4, antithetic=anti))
        se.append(estimate_value(res, LogUtility()).stderr)
    assert se[0] / se[1] > 1.0


def test_wealth_second_moment_bound():
    # E X(T)^2 <= c (E int |pi|^2 dt + X0^2) with one constant across budgets
    ratios = []
    for a in (0.02, 0.06, 0.1):
        cls = single_stock([a], 0.2)
        st = build_point_strategy(cls, 0, PowerUtility(0.5), 1.0)
        res = simulate_paths(cls, 0, st, PowerUtility(0.5), 1.0,
                             SimConfig(n_paths=4000, n_steps=64, seed=1))
        ratios.append(np.mean(res.X_T**2) / (strategy_norm_sq(res.pi_sq_integral) + 1.0))
    assert all(np.isfinite(ratios)) and max(ratios) < 10.0
