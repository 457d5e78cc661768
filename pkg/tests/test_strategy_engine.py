import numpy as np
import pytest

from maximin.errors import SingularCovariance
from maximin.market_model import build_custom, build_example_4_2, single_stock
from maximin.strategy_engine import (
    Myopic,
    PdeOptimal,
    StrategyState,
    Trivial,
    active_fraction,
    build_maximin_strategy,
    build_point_strategy,
    myopic_parameters,
    myopic_portfolio,
    pde_portfolio,
    pde_strategy,
    portfolio,
    q_form_portfolio,
    r_min_of_class,
    tau_time_change,
)
from maximin.utility_dual import (
    DomainInterval,
    LogUtility,
    PowerUtility,
    QuadraticUtility,
)


def state_for(cls, Z, X, t=0.0, acc=None, idx=0, cell=0):
    Z = np.asarray(Z, dtype=float)
    snap = cls.snapshot(idx, cell)
    acc = np.zeros_like(Z) if acc is None else np.asarray(acc, dtype=float)
    return StrategyState(t, np.ones_like(Z), Z, acc, np.asarray(X, dtype=float), snap)


def test_tau_time_change():
    assert tau_time_change(0.02, 0.04, 1.0) == pytest.approx(0.5)
    assert tau_time_change(0.08, 0.04, 1.0) == 1.0
    assert tau_time_change(np.array([0.0, 0.04]), 0.04, 2.0) == pytest.approx([0.0, 2.0])


def test_myopic_parameters():
    assert myopic_parameters(LogUtility()) == (1.0, 0.0)
    assert myopic_parameters(PowerUtility(0.5)) == (2.0, 0.0)
    assert myopic_parameters(QuadraticUtility(1.0, 2.0)) == (-1.0, 1.0)


def test_zero_budget_is_trivial():
    cls = build_custom([[[0.04]], [[0.0]]], [[[[0.2]]], [[[0.2]]]])
    assert r_min_of_class(cls) == (0.0, 1)
    st = build_maximin_strategy(cls, LogUtility(), 1.0)
    assert isinstance(st, Trivial)
    s = state_for(cls, [1.0, 2.0], [1.0, 1.0])
    assert np.all(portfolio(s, st) == 0.0)


def test_r_min_ties_to_lowest_index():
    cls = single_stock([0.04, -0.04, 0.08], 0.2)
    assert r_min_of_class(cls) == (pytest.approx(0.04), 0)


@pytest.mark.parametrize("u", [LogUtility(), PowerUtility(0.5), PowerUtility(-1.0),
                               QuadraticUtility(1.0, 3.0)])
def test_pde_matches_myopic_on_wealth_curve(u):
    cls = single_stock([0.04], 0.2)
    st = build_point_strategy(cls, 0, u, 1.0)
    nu, C0 = myopic_parameters(u)
    Z = np.exp(np.linspace(-1.0, 1.0, 9))
    for t in (0.0, 0.5):
        tau = t  # constant theta: tau equals calendar time
        X = np.asarray(st.hsol.h(Z, tau))
        s = state_for(cls, Z, X, t=t, acc=np.full(Z.shape, 0.04 * t))
        assert pde_portfolio(s, st) == pytest.approx(myopic_portfolio(s, nu, C0), rel=1e-8)


def test_q_form_agrees_with_pivot_form():
    cls = single_stock([0.06], 0.3)
    st = build_point_strategy(cls, 0, PowerUtility(0.5), 1.0)
    s = state_for(cls, [0.7, 1.0, 1.4], [1.0, 1.0, 1.0], acc=[0.01, 0.02, 0.03])
    assert q_form_portfolio(s, st) == pytest.approx(pde_portfolio(s, st), rel=1e-12)


def test_q_form_rejects_redundant_assets():
    cls = build_example_4_2([1.0], 0.0, 0.2, [0.04])
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    S = np.tile(cls.s0, (2, 1))
    snap = cls.snapshot(0, 0, S)
    s = StrategyState(0.0, np.ones(2), np.ones(2), np.zeros(2), np.ones(2), snap)
    with pytest.raises(SingularCovariance):
        q_form_portfolio(s, st)
    pi = pde_portfolio(s, st)
    assert np.all(pi[:, 1:] == 0.0)
    assert pi[:, 0] == pytest.approx(0.04 / 0.04)


def test_stop_after_budget():
    cls = single_stock([0.04], 0.2)
    st = build_point_strategy(cls, 0, LogUtility(), 1.0)
    s = state_for(cls, [1.0, 1.0], [1.0, 1.0], acc=[0.02, 0.04])
    pi = pde_portfolio(s, st)
    assert pi[0, 0] > 0.0 and pi[1, 0] == 0.0
    clamp = PdeOptimal(st.R, st.lambda_hat, st.hsol, on_exhausted="clamp")
    assert pde_portfolio(s, clamp)[1, 0] > 0.0


def test_active_fraction():
    st = pde_strategy(LogUtility(), 0.04, 1.0, 1.0)
    f = active_fraction(st, np.array([0.0, 0.039, 0.05]), np.array([0.04] * 3), 0.1)
    assert f == pytest.approx([1.0, 0.25, 0.0])
    assert np.all(active_fraction(Myopic(1.0), np.zeros(2), np.ones(2), 0.1) == 1.0)


def test_floor_strategy_exposure_vanishes_at_floor():
    u = LogUtility(domain=DomainInterval(0.5, np.inf))
    cls = single_stock([0.08], 0.2)
    st = build_point_strategy(cls, 0, u, 1.0)
    Z = np.array([1e-4, 1.0])
    pi = pde_portfolio(state_for(cls, Z, [0.5, 1.0], t=0.9, acc=[0.144, 0.144]), st)
    assert abs(pi[0, 0]) < 1e-6
    assert pi[1, 0] > 0.0


def test_pde_optimal_validation():
    st = pde_strategy(LogUtility(), 0.04, 1.0, 1.0)
    with pytest.raises(ValueError):
        PdeOptimal(0.05, st.lambda_hat, st.hsol)
    with pytest.raises(ValueError):
        PdeOptimal(st.R, st.lambda_hat, st.hsol, on_exhausted="bogus")
