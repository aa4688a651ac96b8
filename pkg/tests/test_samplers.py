import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from proxsampler.oracles import Ball, Box, FunctionBody, Interval, LiftedBody, NormPotential, QueryLedger
from proxsampler.rng import make_rng
from proxsampler.samplers import (
    TAU_CAP,
    ChainState,
    Constants,
    GaussTarget,
    SamplerConfig,
    StuckChainError,
    TauCapWarning,
    TiltedTarget,
    _ann_proposal,
    _gauss_proposal,
    backward_step_gauss,
    backward_step_uniform,
    boost_order_iterations,
    chi_from_renyi,
    derive_params_ann,
    derive_params_exp,
    derive_params_gauss,
    derive_params_unif,
    forward_step,
    lifted_start,
    ps_ann_iterate,
    ps_exp_iterate,
    ps_gauss_iterate,
    ps_unif_iterate,
    renyi_from_chi,
    renyi_from_lq_norm,
    sample_t_given_x,
)


def truncnorm_cdf(mean, var, a, b):
    sd = math.sqrt(var)
    return stats.truncnorm((a - mean) / sd, (b - mean) / sd, loc=mean, scale=sd).cdf


# ----------------------------------------------------------------------------
# forward and backward steps


def test_forward_step_zero_h_is_identity(rng):
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(forward_step(x, 0.0, rng), x)


def test_forward_step_moments(rng):
    Y = forward_step(np.zeros((100_000, 1)), 1.0, rng)
    assert abs(Y.mean()) < 4 / math.sqrt(1e5)
    assert abs(Y.var() - 1) < 0.02
    Y = forward_step(np.tile([3.0, -1.0], (100_000, 1)), 4.0, rng)
    assert np.all(np.abs(Y.mean(axis=0) - [3, -1]) < 4 * 2 / math.sqrt(1e5))


def test_backward_uniform_first_trial_acceptance(rng):
    body = Interval(-1, 1)
    n = 20_000
    first = sum(backward_step_uniform(body, np.zeros(1), 0.25, 10, rng).trials_used == 1 for _ in range(n))
    p = stats.norm.cdf(2) - stats.norm.cdf(-2)
    assert abs(first / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_backward_uniform_far_point_exhausts(rng):
    led = QueryLedger()
    out = backward_step_uniform(Interval(-1, 1), np.array([100.0]), 0.01, 1, rng, led)
    assert not out.accepted and out.status == "exhausted" and out.trials_used == 1
    assert led.membership_calls == 1 and led.proposals_drawn == 1


def test_backward_uniform_conditional_law(rng):
    body = Interval(-1, 1)
    draws = []
    while len(draws) < 20_000:
        out = backward_step_uniform(body, np.array([0.5]), 0.25, 50, rng)
        if out.accepted:
            draws.append(out.point[0])
    assert stats.kstest(draws, truncnorm_cdf(0.5, 0.25, -1, 1)).pvalue > 0.01


def test_gauss_proposal_limits():
    t = GaussTarget(Ball(2), 1e12)
    prop = _gauss_proposal(t, 1e-3)
    assert abs(prop.gain[0] - 1) < 1e-9
    prop = _gauss_proposal(GaussTarget(Ball(2), 1.0), 1.0)
    np.testing.assert_allclose(prop.mean(np.array([2.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(prop.std ** 2, [0.5, 0.5])


def test_backward_gauss_returns_inside_point(rng):
    out = backward_step_gauss(GaussTarget(Ball(2), 1.0), np.array([0.2, 0.1]), 0.1, 100, rng)
    assert out.accepted and np.linalg.norm(out.point) <= 1


def test_ann_proposal_shape():
    K = Box([1.0, 1.0])
    prop = _ann_proposal(TiltedTarget(K, 1.0, 1.0), 1.0)
    np.testing.assert_allclose(prop.gain, [0.5, 1.0])
    np.testing.assert_allclose(prop.std ** 2, [0.5, 1.0])
    np.testing.assert_allclose(prop.offset, [0.0, -1.0])
    # no tilt: the t-coordinate falls back to N(s, h)
    prop0 = _ann_proposal(TiltedTarget(K, 1.0, 0.0), 0.3)
    assert prop0.offset[-1] == 0 and prop0.gain[-1] == 1 and prop0.std[-1] ** 2 == pytest.approx(0.3)


def test_tilted_target_rejects_large_rho():
    with pytest.raises(ValueError):
        TiltedTarget(Box([1.0, 1.0]), 1.0, 1.5)


@pytest.mark.parametrize("y", [0.0, 0.5, 1.5])
def test_acceptance_probability_matches_normal_cdf(y, rng):
    h, n = 0.25, 20_000
    body = Interval(-1, 1)
    Z = y + math.sqrt(h) * rng.standard_normal((n, 1))
    est = body.contains(Z).mean()
    exact = stats.norm.cdf((1 - y) / math.sqrt(h)) - stats.norm.cdf((-1 - y) / math.sqrt(h))
    assert abs(est - exact) < 3 * math.sqrt(exact * (1 - exact) / n)


# ----------------------------------------------------------------------------
# iterations


def test_zero_iterations_leave_state_unchanged(rng):
    state = ChainState(np.array([0.1, 0.2]))
    cfg = SamplerConfig(0.1, 4)
    for out in (ps_unif_iterate(state, Ball(2), cfg, rng, 0),
                ps_gauss_iterate(state, GaussTarget(Ball(2), 1.0), cfg, rng, 0)):
        np.testing.assert_array_equal(out.x, state.x)
        assert out.iteration == 0


def test_single_chain_shape_and_counters(rng):
    state = ps_unif_iterate(ChainState(np.zeros(2)), Ball(2), SamplerConfig(0.05, 8), rng, 5)
    assert state.x.shape == (2,) and state.iteration == 5
    assert state.ledger.iterations_completed == 5


def test_stationarity_uniform_square(rng):
    X = rng.uniform(-1, 1, (20_000, 2))
    state = ps_unif_iterate(ChainState(X), Box([1.0, 1.0]), SamplerConfig(0.01, 64), rng, 50)
    for i in range(2):
        assert stats.kstest(state.x[:, i], stats.uniform(-1, 2).cdf).pvalue > 0.01


def test_stationarity_truncated_gaussian(rng):
    body = Interval(-1, 1)
    X = stats.truncnorm(-1, 1).rvs(size=(20_000, 1), random_state=rng)
    state = ps_gauss_iterate(ChainState(X), GaussTarget(body, 1.0), SamplerConfig(0.05, 10_000), rng, 20)
    assert stats.kstest(state.x[:, 0], truncnorm_cdf(0.0, 1.0, -1, 1)).pvalue > 0.01


def test_stuck_chain_cap(rng):
    cfg = SamplerConfig(0.01, 1, max_stages=50)
    with pytest.raises(StuckChainError):
        ps_unif_iterate(ChainState(np.array([50.0])), Interval(-1, 1), cfg, rng)


def test_ledger_matches_independent_counter(rng):
    calls = []

    def pred(X):
        calls.append(len(X))
        return np.all(np.abs(X) <= 1, axis=1)

    body = FunctionBody(2, pred, vectorized=True)
    state = ChainState(rng.uniform(-1, 1, (500, 2)))
    state = ps_unif_iterate(state, body, SamplerConfig(0.3, 2), rng, 7)
    led = state.ledger
    # the support re-check in test builds calls the predicate once per iteration outside the ledger
    assert led.membership_calls == sum(calls) - 7 * 500
    assert led.membership_calls == led.proposals_drawn
    assert led.iterations_completed <= led.proposals_drawn
    assert led.restarts * 2 <= led.proposals_drawn
    assert led.proposals_drawn == state.chain_trials.sum()
    assert led.restarts == state.chain_restarts.sum()


def test_determinism_same_seed():
    def run(seed):
        rng = make_rng(seed, 0)
        state = ChainState(rng.uniform(-1, 1, (100, 2)))
        return ps_unif_iterate(state, Box([1.0, 1.0]), SamplerConfig(0.2, 3), rng, 10)

    a, b = run(5), run(5)
    np.testing.assert_array_equal(a.x, b.x)
    assert a.ledger == b.ledger
    assert not np.array_equal(a.x, run(6).x)


@given(st.floats(0.01, 2.0), st.integers(1, 5), st.integers(0, 2 ** 32))
def test_support_invariant_property(h, tau, seed):
    rng = make_rng(seed)
    body = Ball(2)
    state = ChainState(np.zeros((50, 2)))
    state = ps_unif_iterate(state, body, SamplerConfig(h, tau), rng, 3)
    assert body._contains(state.x, None).all()
    led = state.ledger
    assert led.restarts * tau <= led.proposals_drawn


# ----------------------------------------------------------------------------
# lifting


def test_sample_t_given_x(rng):
    V = NormPotential(4)
    t = sample_t_given_x(V, np.zeros((100_000, 4)), 4, rng)
    assert abs(t.mean() - 0.25) < 0.005
    V1 = NormPotential(1)
    t = sample_t_given_x(V1, np.full((20_000, 1), 2.0), 1, rng)
    assert t.min() >= 2.0
    assert stats.kstest(t - 2.0, stats.expon.cdf).pvalue > 0.01


def test_lifted_start_is_inside(rng):
    V = NormPotential(2)
    Z = lifted_start(V, rng.standard_normal((100, 2)), rng)
    assert LiftedBody(V)._contains(Z, None).all()


def test_ps_exp_keeps_laplace_marginal(rng):
    V = NormPotential(1)
    Z = lifted_start(V, rng.laplace(size=(20_000, 1)), rng)
    state = ps_exp_iterate(ChainState(Z), LiftedBody(V), SamplerConfig(0.1, 10_000), rng, 10)
    assert stats.kstest(state.x[:, 0], stats.laplace.cdf).pvalue > 0.01
    assert state.ledger.evaluation_calls == state.ledger.proposals_drawn


def test_ps_ann_runs_on_box(rng):
    K = Box([1.0, 1.0], translation=[0.0, 1.0])
    state = ps_ann_iterate(ChainState(np.tile([0.0, 1.0], (200, 1))), TiltedTarget(K, 1.0, 1.0),
                           SamplerConfig(0.1, 100), rng, 5)
    assert K._contains(state.x, None).all()


# ----------------------------------------------------------------------------
# restart reweighting


def test_restart_reweights_forward_draw(rng):
    """With tau = 1 a stage succeeds with probability l(y), so the one-step law is N(x, 2h)|K.

    This differs from the exact proximal kernel whenever l(y) varies over the
    forward draws, here near the boundary with a large step.
    """
    body, x, h, n = Interval(-1, 1), 0.95, 0.25, 50_000
    start = np.full((n, 1), x)
    fast = ps_unif_iterate(ChainState(start), body, SamplerConfig(h, 1), rng, 1).x[:, 0]
    exact = ps_unif_iterate(ChainState(start), body, SamplerConfig(h, 10 ** 6), rng, 1).x[:, 0]
    assert stats.kstest(fast, truncnorm_cdf(x, 2 * h, -1, 1)).pvalue > 0.01
    assert stats.ks_2samp(fast, exact).pvalue < 1e-6


def test_restart_harmless_deep_inside(rng):
    body, n = Ball(2), 50_000
    start = np.zeros((n, 2))
    a = ps_unif_iterate(ChainState(start), body, SamplerConfig(0.01, 2), rng, 1).x
    b = ps_unif_iterate(ChainState(start), body, SamplerConfig(0.01, 10 ** 6), rng, 1).x
    for i in range(2):
        assert stats.ks_2samp(a[:, i], b[:, i]).pvalue > 0.01


# ----------------------------------------------------------------------------
# parameter formulas


def test_derive_params_unif_example():
    p = derive_params_unif(10, 1, 2, 1, 0.5)
    assert (p.h, p.tau, p.N) == (0.01, 3, 320)


def test_derive_params_preconditions():
    with pytest.raises(ValueError):
        derive_params_unif(10, 0, 2, 1, 0.5)
    with pytest.raises(ValueError):
        derive_params_unif(10, 1, 1.5, 1, 0.5)
    with pytest.raises(ValueError):
        derive_params_gauss(10, 1, 0.0, 2, 2, 0.5)
    with pytest.raises(ValueError):
        derive_params_ann(10, 1, 1.0, 2, 1.0, 0.5)
    assert derive_params_unif(10, 1, 2, 1, 1 - 1e-12).N == 1


def test_derive_params_gauss_and_ann_examples():
    p = derive_params_gauss(10, 1, 1, 2, 2, 0.5)
    assert (p.h, p.tau, p.N) == (0.01, 3, 139)
    assert derive_params_ann(10, 1, 2, 2, 2, 0.5).N == 278
    assert derive_params_ann(10, 1, 0.25, 2, 2, 0.5) == derive_params_gauss(10, 1, 1, 2, 2, 0.5)


def test_derive_params_exp_uses_lambda_floor():
    assert derive_params_exp(10, 1, 2, 0.2, 0.5).N == 320
    assert derive_params_exp(10, 1, 2, 4, 0.5).N == math.ceil(4 * 2 * 100 * math.log(10) * math.log(2))


def test_tau_cap_warns():
    with pytest.warns(TauCapWarning):
        p = derive_params_unif(2, 60, 2, 1, 0.5)
    assert p.tau == TAU_CAP and p.tau_capped
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not derive_params_unif(2, 20, 2, 1, 0.5).tau_capped


def test_boost_iterations():
    assert boost_order_iterations(0.01, 1, 2, 2) == 0
    assert boost_order_iterations(0.01, 1, 2, 4) == 159
    assert boost_order_iterations(0.01, 1, 3, 5) == 100
    with pytest.raises(ValueError):
        boost_order_iterations(0.01, 1, 3, 2)


@given(st.integers(1, 50), st.floats(0.01, 30), st.floats(2, 10), st.floats(0.01, 10), st.floats(1e-6, 0.99))
def test_derive_params_shape(d, M, q, lam, eps):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TauCapWarning)
        p = derive_params_unif(d, M, q, lam, eps)
        bigger = derive_params_unif(d + 1, M, q, lam, eps)
    assert 0 < p.h <= 1 and 1 <= p.tau <= TAU_CAP and p.N >= 1
    assert bigger.h <= p.h and bigger.N >= p.N


def test_constants_scale_formulas():
    c = Constants(c_h=0.5, c_tau=2.0, c_N=3.0)
    p = derive_params_unif(10, 1, 2, 1, 0.5, c)
    assert p.h == 0.005 and p.tau == math.ceil(2 * math.e)
    assert p.N == math.ceil(3 * 2 * 100 * math.log(10) * math.log(2))
    with pytest.raises(ValueError):
        Constants(c_h=0)


@given(st.floats(1.01, 10), st.floats(0, 5))
def test_renyi_conversions_round_trip(q, r):
    assert renyi_from_chi(q, chi_from_renyi(q, r)) == pytest.approx(r, abs=1e-9)
    norm = math.exp((q - 1) / q * r)
    assert renyi_from_lq_norm(q, norm) == pytest.approx(r, abs=1e-9)
