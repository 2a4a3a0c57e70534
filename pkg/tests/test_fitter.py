import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nbgam.family import nb_deviance
from nbgam.fitter import (PirlsError, RankDeficientError, build_design, compare_models,
                          domain_violations, fit_fixed, gcv_score, is_nested, model_data,
                          pirls, predict, predict_frame, select_smoothing)
from nbgam.model_dsl import Family, OffsetRule, parse_formula
from nbgam.results import FitResult
from nbgam.simulate import SimConfig, simulate_panel

from oracles import newton_nb_glm


def glm_frame(n=1000, seed=3, phi=2.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    off = rng.uniform(-1, 1, n)
    eta = 1.0 + X @ np.array([0.4, -0.3, 0.2]) + off
    mu = np.exp(eta)
    y = rng.poisson(rng.gamma(phi, mu / phi)) if math.isfinite(phi) else rng.poisson(mu)
    return pd.DataFrame({"y": y, "a": X[:, 0], "b": X[:, 1], "c": X[:, 2], "off": off})


@pytest.fixture(scope="module")
def small_sim():
    return simulate_panel(SimConfig(n_units=40, n_months=12, surface="sine",
                                    seed=11))


@pytest.fixture(scope="module")
def small_fit(small_sim):
    return select_smoothing(parse_formula("deaths ~ s(x, k=6) + s(time, k=5)"),
                            small_sim.panel)


@pytest.mark.parametrize("phi", [0.5, 2.0, 10.0, 1e9])
def test_parametric_fit_matches_newton_oracle(phi):
    frame = glm_frame(phi=phi)
    spec = parse_formula("y ~ a + b + c", offset_rule=OffsetRule("column", "off"))
    fit = fit_fixed(spec, frame, [], phi)
    X = np.column_stack([np.ones(len(frame)), frame[["a", "b", "c"]].to_numpy()])
    ref = newton_nb_glm(X, frame["y"].to_numpy(float), frame["off"].to_numpy(), phi)
    np.testing.assert_allclose(fit.coefficients, ref, atol=1e-6, rtol=0)
    assert fit.edf_total == pytest.approx(4.0, abs=1e-8)


def test_pirls_validates_inputs():
    X = np.ones((5, 1))
    with pytest.raises(ValueError):
        pirls(X, [np.eye(1)], [], np.ones(5), np.zeros(5), 1.0)
    with pytest.raises(ValueError):
        pirls(X, [], [], -np.ones(5), np.zeros(5), 1.0)
    with pytest.raises(ValueError):
        pirls(X, [], [], np.ones(5), np.full(5, np.nan), 1.0)


def test_rank_deficient_design_raises():
    frame = glm_frame(n=200)
    frame["a2"] = 2 * frame["a"]
    spec = parse_formula("y ~ a + a2", offset_rule=OffsetRule("none"))
    with pytest.raises(RankDeficientError):
        fit_fixed(spec, frame, [], 2.0)


def test_pirls_iteration_limit_reports_trajectory():
    frame = glm_frame(n=300)
    X = np.column_stack([np.ones(300), frame[["a", "b"]].to_numpy()])
    with pytest.raises(PirlsError) as info:
        pirls(X, [], [], frame["y"].to_numpy(float), np.zeros(300), 2.0, max_iter=1)
    assert len(info.value.trajectory) >= 1


def _design(sim, text="deaths ~ s(x, k=6) + s(time, k=5)"):
    spec = parse_formula(text)
    md = model_data(spec, sim.panel)
    return build_design(spec, md), md


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-6, 12), min_size=2, max_size=2), st.sampled_from([0.7, 5.0, math.inf]))
def test_penalized_deviance_monotone(small_sim, log_lambdas, phi):
    d, md = _design(small_sim)
    r = pirls(d.X, d.penalties, log_lambdas, md.y, md.offset, phi, blocks=d.blocks)
    traj = np.asarray(r.trajectory)
    assert np.all(np.diff(traj) <= 1e-8 * (np.abs(traj[:-1]) + 0.1))
    # edf bounded by the penalty null space and the coefficient count
    assert 3.0 - 1e-6 <= r.edf_total <= d.X.shape[1] + 1e-6


def test_edf_decreases_with_lambda(small_sim):
    d, md = _design(small_sim, "deaths ~ s(x, k=8)")
    edfs = [pirls(d.X, d.penalties, [ll], md.y, md.offset, 5.0).edf_total
            for ll in np.linspace(-8, 14, 12)]
    assert np.all(np.diff(edfs) < 1e-9)
    assert edfs[0] > 7.5 and edfs[-1] < 2.05


def test_stationarity_gradient(small_sim):
    d, md = _design(small_sim)
    phi, ll = 4.0, [1.0, 2.0]
    r = pirls(d.X, d.penalties, ll, md.y, md.offset, phi)
    S = sum(math.exp(t) * P for t, P in zip(ll, d.penalties))
    mu = r.mu
    grad = -2 * d.X.T @ (phi * (md.y - mu) / (phi + mu)) + 2 * S @ r.coefficients
    scale = np.abs(d.X).T @ (md.y + mu)
    assert np.max(np.abs(grad) / scale) < 1e-7


def test_deviance_reported_matches_family(small_fit, small_sim):
    mu = small_fit.extra["fitted"]
    md = model_data(small_fit.spec, small_sim.panel)
    assert small_fit.deviance == pytest.approx(nb_deviance(md.y, mu, small_fit.phi), rel=1e-10)
    assert small_fit.gcv == pytest.approx(
        gcv_score(small_fit.deviance, small_fit.n_obs, small_fit.edf_total), rel=1e-10)


def test_row_order_invariance(small_fit, small_sim):
    frame = small_sim.panel.frame.sample(frac=1.0, random_state=5).reset_index(drop=True)
    other = select_smoothing(small_fit.spec, frame)
    np.testing.assert_allclose(other.coefficients, small_fit.coefficients, rtol=0, atol=1e-10)
    assert other.phi == small_fit.phi


def test_offset_scaling_leaves_rates(small_sim):
    spec = parse_formula("deaths ~ s(x, k=6)")
    base = select_smoothing(spec, small_sim.panel)
    frame = small_sim.panel.frame.copy()
    frame["popsize"] = frame["popsize"] * 10
    frame["offset"] = frame["offset"] + math.log(10)
    scaled = select_smoothing(spec, frame)
    grid = pd.DataFrame({"x": np.linspace(0.05, 0.95, 7)})
    # deaths stay the same, so the rate drops tenfold
    a = predict_frame(base, grid)["rate_per_100k_py"]
    b = predict_frame(scaled, grid)["rate_per_100k_py"]
    np.testing.assert_allclose(b * 10, a, rtol=1e-8)


def test_self_comparison(small_fit):
    res = compare_models(small_fit, small_fit)
    assert res.lrt_stat == 0.0 and res.lrt_p == 1.0 and res.approximate


def test_non_nested_rejected(small_sim, small_fit):
    other = select_smoothing(parse_formula("deaths ~ s(latitude, k=5)"), small_sim.panel)
    assert not is_nested(small_fit.spec, other.spec)
    with pytest.raises(ValueError, match="not nested"):
        compare_models(small_fit, other)


def test_nesting_rules():
    p = parse_formula
    assert is_nested(p("y ~ s(a) + s(b)"), p("y ~ te(a, b)"))
    assert is_nested(p("y ~ a"), p("y ~ s(a)"))
    assert not is_nested(p("y ~ te(a, b)"), p("y ~ s(a) + s(b)"))
    assert not is_nested(p("y ~ s(a)"), p("z ~ s(a)"))


def test_json_round_trip(small_fit):
    back = FitResult.from_json(small_fit.to_json())
    grid = pd.DataFrame({"x": [0.1, 0.5, 0.9], "time": [0.0, 5.0, 11.0]})
    np.testing.assert_array_equal(predict_frame(back, grid)["linear_predictor"],
                                  predict_frame(small_fit, grid)["linear_predictor"])
    assert back.to_json() == small_fit.to_json()
    doc = small_fit.to_dict()
    assert doc["schema"] == "nbgam.fit" and doc["version"] == 1
    with pytest.raises(ValueError):
        FitResult.from_dict({**doc, "version": 99})


def test_poisson_family_and_aic(small_sim):
    spec = parse_formula("deaths ~ s(x, k=5)", family=Family.POISSON)
    fit = select_smoothing(spec, small_sim.panel)
    assert math.isinf(fit.phi)
    assert fit.to_dict()["phi"] is None
    assert fit.aic == pytest.approx(-2 * fit.loglik + 2 * fit.edf_total)
    nb = select_smoothing(parse_formula("deaths ~ s(x, k=5)"), small_sim.panel)
    assert nb.aic == pytest.approx(-2 * nb.loglik + 2 * (nb.edf_total + 1))


def test_nb_dispersion_estimate(small_sim):
    # simulated with phi = 5
    fit = select_smoothing(parse_formula("deaths ~ s(x, k=6) + s(time, k=5)"),
                           simulate_panel(SimConfig(n_units=200, n_months=12, surface="sine",
                                                    seed=4)).panel)
    assert 3.0 < fit.phi < 8.0
    assert fit.converged


def test_constant_surface_shrinks(small_sim):
    sim = simulate_panel(SimConfig(n_units=100, n_months=12, surface="constant", seed=2))
    fit = select_smoothing(parse_formula("deaths ~ s(x, k=8)"), sim.panel)
    assert fit.edf_total < 2.5


def test_gcv_score_checks():
    assert gcv_score(10.0, 100, 5.0) == pytest.approx(100 * 10 / 95 ** 2)
    with pytest.raises(ValueError):
        gcv_score(1.0, 10, 10.0)


def test_prediction_and_domain(small_fit):
    rows = pd.DataFrame({"x": [0.5, 2.0], "time": [3.0, -1.0]})
    bad = domain_violations(small_fit, {c: rows[c] for c in rows})
    assert [(b[0], b[1]) for b in bad] == [(1, "time"), (1, "x")]
    good = predict(small_fit, rows.iloc[:1], fixed={"time": 4.0})
    assert good[0].covariate_values == {"x": 0.5, "time": 4.0}
    assert good[0].rate == pytest.approx(math.exp(good[0].linear_predictor))
    with pytest.raises(KeyError):
        predict_frame(small_fit, pd.DataFrame({"x": [0.5]}))


def test_missing_rows_dropped(small_sim):
    frame = small_sim.panel.frame.copy()
    frame.loc[[0, 5], "x"] = np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fit = select_smoothing(parse_formula("deaths ~ s(x, k=5)"), frame, phi=5.0)
    assert fit.n_dropped == 2 and fit.n_obs == len(frame) - 2


def test_missing_column_named():
    with pytest.raises(KeyError, match="median_age"):
        model_data(parse_formula("y ~ s(median_age)", offset_rule=OffsetRule("none")),
                   pd.DataFrame({"y": [1, 2]}))
