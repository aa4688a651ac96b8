import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from proxsampler.diagnostics import (
    CheckResult,
    GaussianLaw,
    GridDensity,
    UniformLaw,
    check_annealing_closeness,
    check_budget,
    check_concentration_uniform,
    check_hypercontractivity,
    check_sdpi_chiq,
    chi_q_gaussians_equal_var,
    chi_sq_decay_curve,
    concentration_bound,
    early_stop_curve,
    exact_uniform,
    interval_poincare,
    plugin_chi2,
    renyi_gaussians_closed_form,
    renyi_quadrature,
    stationarity_pvalue,
    write_check_csv,
)
from proxsampler.oracles import Ball, Box, QueryLedger
from proxsampler.samplers import ChainState, SamplerConfig, ps_unif_iterate


def gauss_grid(m, s, lo=-20.0, hi=20.0, n=None):
    return GridDensity.from_log_density(lambda x: -(x[:, 0] - m) ** 2 / (2 * s), lo, hi, n)


def test_grid_normalization_and_cdf():
    g = gauss_grid(0.3, 2.0)
    assert g.total_mass() == pytest.approx(1.0, abs=1e-9)
    x = np.linspace(-4, 4, 9)
    np.testing.assert_allclose(g.cdf(x), stats.norm.cdf(x, 0.3, math.sqrt(2)), atol=1e-6)
    h = g.half_resolution()
    assert h.resolution == g.resolution // 2 and h.total_mass() == pytest.approx(1.0, abs=1e-9)


def test_grid_2d_marginals_and_cells():
    g = GridDensity.from_log_density(lambda x: -0.5 * (x ** 2).sum(axis=1), [-9, -9], [9, 9], 256)
    assert g.total_mass() == pytest.approx(1.0, abs=1e-9)
    ex, ey = g.quantile_edges(4, 0), g.quantile_edges(4, 1)
    p = g.cell_probabilities(ex, ey)
    assert p.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(p, 1 / 16, atol=0.01)
    m = g.marginal(0)
    assert m.total_mass() == pytest.approx(1.0, abs=1e-9)


def test_grid_sample_matches_density(rng):
    g = gauss_grid(0.0, 1.0, -10, 10)
    x = g.sample(20_000, rng)[:, 0]
    assert stats.kstest(x, "norm").pvalue > 1e-3
    sq = GridDensity.from_log_density(lambda x: np.where(np.abs(x).max(1) <= 1, 0.0, -np.inf),
                                      [-1.5, -1.5], [1.5, 1.5], 64)
    pts = sq.sample(5000, rng, support=Box([1.0, 1.0]))
    assert np.all(np.abs(pts) <= 1)


def test_renyi_zero_for_equal_laws():
    g = gauss_grid(0.0, 1.0)
    assert renyi_quadrature(g, g, 2.0).value == pytest.approx(0, abs=1e-12)
    assert renyi_quadrature(g, g, math.inf).value == pytest.approx(0, abs=1e-12)


def test_renyi_gaussian_shift():
    # R_q(N(m, s) || N(0, s)) = q m^2 / (2 s)
    mu, nu = gauss_grid(0.5, 1.0), gauss_grid(0.0, 1.0)
    est = renyi_quadrature(mu, nu, 2.0)
    assert est.value == pytest.approx(0.25, abs=1e-6)
    assert est.error_bar < 1e-6
    assert est.chi == pytest.approx(math.expm1(0.25), abs=1e-6)


def test_renyi_monotone_in_order():
    mu, nu = gauss_grid(0.5, 0.8), gauss_grid(0.0, 1.0)
    vals = [renyi_quadrature(mu, nu, q).value for q in (1.5, 2, 3, 5, 8)]
    assert np.all(np.diff(vals) > 0)


def test_renyi_support_violation():
    nu = GridDensity.from_log_density(lambda x: np.where(np.abs(x[:, 0]) <= 1, 0.0, -np.inf), -2, 2, 1024)
    mu = GridDensity.from_log_density(lambda x: np.zeros(len(x)), -2, 2, 1024)
    est = renyi_quadrature(mu, nu, 2.0)
    assert est.infinite and est.value == math.inf
    with pytest.raises(ValueError):
        renyi_quadrature(mu, nu, 1.0)


def test_closed_form_examples():
    assert renyi_gaussians_closed_form(0.5, 1, 0, 1, 2) == pytest.approx(0.25)
    assert renyi_gaussians_closed_form(0, 3, 0, 1, 2) == math.inf  # s* = 2 - 3 < 0
    assert chi_q_gaussians_equal_var(0.5, 1.0, 2) == pytest.approx(math.expm1(0.25))


def test_closed_form_against_direct_integral():
    rng = np.random.default_rng(11)
    for _ in range(20):
        m1, m2 = rng.uniform(-1, 1, 2)
        s1, s2 = rng.uniform(0.5, 2, 2)
        q = rng.uniform(1.2, 3)
        if q * s2 + (1 - q) * s1 <= 0.2:
            continue
        def f(x):
            return math.exp(q * stats.norm.logpdf(x, m1, math.sqrt(s1))
                            + (1 - q) * stats.norm.logpdf(x, m2, math.sqrt(s2)))

        direct = math.log(integrate.quad(f, -30, 30, points=[m1, m2], epsabs=1e-13, limit=200)[0]) / (q - 1)
        assert renyi_gaussians_closed_form(m1, s1, m2, s2, q) == pytest.approx(direct, rel=1e-7, abs=1e-10)
        mu, nu = gauss_grid(m1, s1, -25, 25), gauss_grid(m2, s2, -25, 25)
        assert renyi_quadrature(mu, nu, q).value == pytest.approx(direct, abs=1e-6)


@given(st.floats(-2, 2), st.floats(0.2, 4), st.floats(1.1, 6))
def test_closed_form_equal_variance_identity(m, s, q):
    r = renyi_gaussians_closed_form(m, s, 0, s, q)
    assert math.expm1((q - 1) * r) == pytest.approx(chi_q_gaussians_equal_var(m, s, q), rel=1e-9, abs=1e-12)


def test_uniform_flow_density_integrates():
    law = UniformLaw(-1.0, 1.0)
    for t in (0.01, 0.5, 2.0):
        lo, hi = law.bounds(t)
        val = integrate.quad(lambda x: np.exp(law.flowed_logpdf(np.array([x]), t))[0], lo, hi, points=[-1, 1])[0]
        assert val == pytest.approx(1.0, abs=1e-8)
    # deep tails stay finite thanks to the log-space difference
    assert np.isfinite(law.flowed_logpdf(np.array([-8.0, 8.0]), 0.01)).all()


def test_sdpi_interval_and_gaussian():
    C = interval_poincare(2.0)
    assert C == pytest.approx(4 / math.pi ** 2)
    rows = check_sdpi_chiq(UniformLaw(-1, 1), UniformLaw(-1, 0), 2, [0, 0.1, 0.5, 1.0], C, n=4096)
    assert rows[0].measured == 1.0
    assert all(r.passed for r in rows)
    assert rows[-1].measured < rows[1].measured < 1
    g = check_sdpi_chiq(GaussianLaw(0, 1), GaussianLaw(0.5, 1), 3, [0.1, 0.5, 1.0], 1.0, n=4096)
    assert all(r.passed for r in g)
    with pytest.raises(ValueError):
        check_sdpi_chiq(GaussianLaw(0, 1), GaussianLaw(0.5, 1), 1.5, [0.1], 1.0)


def test_hypercontractivity_equality_at_zero():
    rows = check_hypercontractivity(2.0, 1.5, 0.7, [0.0, 0.5, 2.0])
    assert rows[0].measured == pytest.approx(rows[0].bound, abs=1e-12)
    assert all(r.passed for r in rows)
    assert rows[0].parameters["q_t"] == 2.0


def test_concentration_check(rng):
    assert concentration_bound(2, 0.01, 10.0) < 1e-300 or concentration_bound(2, 0.01, 10.0) == 0
    r = check_concentration_uniform(Box([1.0, 1.0]), 2, 0.01, 0.3, 20_000, rng)
    assert r.passed and r.measured <= r.bound
    with pytest.raises(ValueError):
        check_concentration_uniform(Box([1.0]), 1, 0.01, 0.0, 10, rng)


def test_exact_uniform(rng):
    X = exact_uniform(Ball(2), 20_000, rng)
    assert np.all((X ** 2).sum(1) <= 1)
    r2 = (X ** 2).sum(1)
    assert stats.kstest(r2, "uniform").pvalue > 1e-3  # |X|^2 is uniform on [0, 1] in the disk


def test_budget_certain_acceptance(rng):
    # a huge body: every proposal is accepted, one proposal per iteration
    body = Box([1e6, 1e6])
    state = ChainState(np.zeros((50, 2)))
    state = ps_unif_iterate(state, body, SamplerConfig(0.01, 1), rng, n_iter=20)
    row = check_budget(state.ledger, 1, 20, state.chain_trials)
    assert row.measured == 1.0 and row.passed
    assert state.ledger.restarts == 0


def test_budget_requires_complete_ledger():
    with pytest.raises(ValueError):
        check_budget(QueryLedger(proposals_drawn=10, iterations_completed=3), 2, 4)


def test_budget_cold_start_restarts(rng):
    # starting on the corner with tiny tau forces restarts
    body = Box([1.0, 1.0])
    state = ChainState(np.full((200, 2), 0.999))
    state = ps_unif_iterate(state, body, SamplerConfig(0.5, 1), rng, n_iter=3)
    assert state.ledger.restarts > 0
    row = check_budget(state.ledger, 1, 3, state.chain_trials)
    assert row.measured > 1


def test_annealing_closeness_rows():
    rows = check_annealing_closeness([0.1, 1.0], [0.0, 0.1], q_list=(2.0,), n=4096)
    assert len(rows) == 4 and all(r.passed for r in rows)
    assert rows[0].measured == pytest.approx(0, abs=1e-12)


def test_early_stop_curve_monotone():
    vals, row = early_stop_curve(np.geomspace(0.05, 20, 6), n=4096)
    assert row.passed and np.all(np.diff(vals) < 0) and vals[-1] < 1e-2


def test_stationarity_negative_control(rng):
    x = rng.normal(0.1, 1.0, 100_000)
    assert stationarity_pvalue(x, stats.norm.cdf).p_min < 1e-6
    assert stationarity_pvalue(rng.normal(size=5000), stats.norm.cdf).passed
    g = GridDensity.from_log_density(lambda x: np.zeros(len(x)), [-1, -1], [1, 1], 128)
    good = rng.uniform(-1, 1, (20_000, 2))
    assert stationarity_pvalue(good, g).passed
    bad = good.copy()
    bad[0] = 3.0
    assert stationarity_pvalue(bad, g).p_min == 0.0
    skew = np.column_stack([rng.beta(1.2, 1, 20_000) * 2 - 1, good[:, 1]])
    assert stationarity_pvalue(skew, g).p_min < 1e-6


def test_plugin_chi2_bias(rng):
    edges = np.linspace(-1, 1, 65)
    probs = np.full(64, 1 / 64)
    vals = [plugin_chi2(rng.uniform(-1, 1, 10_000), edges, probs)[0] for _ in range(40)]
    assert np.mean(vals) == pytest.approx(63 / 10_000, rel=0.15)
    half = rng.uniform(-1, 0, 100_000)
    c, se = plugin_chi2(half, edges, probs)
    assert c == pytest.approx(1.0, abs=0.01) and se > 0
    assert plugin_chi2(np.array([2.0]), edges, probs)[0] == math.inf


def test_decay_curve_small(rng):
    body = Box([1.0])
    cfg = SamplerConfig(0.05, 1000)

    def step(X, r):
        return ps_unif_iterate(ChainState(X), body, cfg, r).x

    series = chi_sq_decay_curve(step, UniformLaw(-1, 1), UniformLaw(-1, 0), 4, 0.05, rng, n_chains=50_000)
    assert series.chi2_start == pytest.approx(1.0, abs=1e-6)
    assert series.passed
    assert series.chi2[-1] < series.chi2[0]


def test_check_csv(tmp_path):
    rows = [CheckResult("x", "claim text", {"a": 1}, 0.5, 1.0, True)]
    p = tmp_path / "c.csv"
    write_check_csv(rows, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "check_id,claim,parameters,measured,bound,pass"
    assert lines[1].endswith(",1")
    assert rows[0].line().startswith("[PASS] x")
