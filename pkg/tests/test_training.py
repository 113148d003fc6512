import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.stats import truncnorm

from psmlik.model import PairLikelihood, PairStructure
from psmlik.simulator import default_params, sample_observed, synthetic_corpus
from psmlik.training import (
    FitOptions,
    TrainingPair,
    density_edges,
    emission_labels,
    estimate_densities,
    estimate_logistic,
    estimate_sigma,
    fit,
)


def tn_negll(sigma, x, w):
    return -float(np.sum(truncnorm.logpdf(x, -w / sigma, w / sigma, scale=sigma)))


def test_sigma_many_draws():
    rng = np.random.default_rng(1)
    x = truncnorm.rvs(-2 / 0.16, 2 / 0.16, scale=0.16, size=10**5, random_state=rng)
    assert estimate_sigma(x, 2.0) == pytest.approx(0.16, rel=0.01)


def test_sigma_two_residuals_grid_oracle():
    est = estimate_sigma([-0.1, 0.1], 2.0)
    grid = np.linspace(0.05, 0.2, 150001)
    ref = grid[np.argmin([tn_negll(s, np.array([-0.1, 0.1]), 2.0) for s in grid])]
    assert est == pytest.approx(ref, abs=2e-6)
    assert est == pytest.approx(0.1, abs=1e-6)


@settings(max_examples=25)
@given(st.lists(st.floats(-0.99, 0.99), min_size=3, max_size=30), st.floats(1.0, 3.0))
def test_sigma_is_likelihood_maximum(x, w):
    x = np.array(x) * w
    if np.mean(x * x) < 1e-6:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        s = estimate_sigma(x, w)
    for t in (s * 0.99, s * 1.01):
        if 1e-4 <= t <= w:
            assert tn_negll(s, x, w) <= tn_negll(t, x, w) + 1e-9


def test_sigma_boundary_warns():
    with pytest.warns(RuntimeWarning, match="upper"):
        assert estimate_sigma([-2.0, 2.0], 2.0) == 2.0
    with pytest.warns(RuntimeWarning, match="zero"):
        estimate_sigma([0.0, 0.0], 2.0)
    with pytest.raises(ValueError):
        estimate_sigma([3.0, 0.0], 2.0)


def test_logistic_all_emitted_clamps():
    rng = np.random.default_rng(0)
    y2 = rng.uniform(0, 1.5, 200)
    z2 = (rng.random(200) < 1 / (1 + np.exp(-(-1 + 2 * y2)))).astype(float)
    with pytest.warns(RuntimeWarning, match="clamped"):
        beta, mus = estimate_logistic([np.ones(5), z2], [np.linspace(0, 1, 5), y2])
    assert mus[0] == 15.0
    assert abs(mus[1]) < 15.0 and math.isfinite(beta)


def test_logistic_balanced_labels_slope_near_zero():
    rng = np.random.default_rng(3)
    y = rng.uniform(0, 1.5, 4000)
    z = rng.random(4000) < 0.5
    beta, mus = estimate_logistic([z], [y])
    grid = np.linspace(-1, 1, 2001)

    def profile(b):
        from scipy.optimize import minimize_scalar
        f = lambda m: -float(np.sum(z * (m + b * y) - np.logaddexp(0, m + b * y)))
        return minimize_scalar(f, bounds=(-15, 15), method="bounded").fun
    ref = grid[np.argmin([profile(b) for b in grid])]
    assert abs(beta) < 0.2
    assert beta == pytest.approx(ref, abs=1e-3)


def test_logistic_recovers_slope():
    mu, beta_true = -1.240, 2.970
    corpus = synthetic_corpus(50, charge=1, seed=11)
    rng = np.random.default_rng(5)
    ys = [T.intensity for T in corpus]
    zs = [(rng.random(y.size) < 1 / (1 + np.exp(-(mu + beta_true * y)))).astype(float) for y in ys]
    beta, mus = estimate_logistic(zs, ys)
    assert abs(beta - beta_true) < 3 * 0.188


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_logistic_matches_scipy_oracle(seed):
    rng = np.random.default_rng(seed)
    G = int(rng.integers(2, 5))
    ys = [rng.uniform(0, 1.5, int(rng.integers(15, 40))) for _ in range(G)]
    zs = [(rng.random(y.size) < 1 / (1 + np.exp(-(rng.normal(-1, 0.5) + 2 * y)))).astype(float) for y in ys]
    if any(z.sum() in (0, z.size) for z in zs):
        return
    beta, mus = estimate_logistic(zs, ys)

    def nll(v):
        return -sum(float(np.sum(z * (v[1 + g] + v[0] * y) - np.logaddexp(0, v[1 + g] + v[0] * y)))
                    for g, (z, y) in enumerate(zip(zs, ys)))
    ref = minimize(nll, np.zeros(G + 1), method="L-BFGS-B", bounds=[(-50, 50)] + [(-15, 15)] * G,
                   options={"ftol": 1e-15, "gtol": 1e-10, "maxiter": 5000})
    assert nll(np.r_[beta, mus]) <= ref.fun + 1e-7
    assert beta == pytest.approx(ref.x[0], abs=1e-3)


def test_density_edges_structure():
    y = np.arange(1, 1001) / 1000.0
    edges = density_edges(y)
    assert edges.size == 11 and edges[0] == 0.0 and edges[-1] == 1.0
    assert edges[-2] == 0.99
    # lower 99% split into nine equal-count bins
    # bins are left-closed, so each quantile value opens the next bin
    counts = np.bincount(np.searchsorted(edges, y, side="right") - 1, minlength=11)[:9]
    assert counts.tolist() == [109] + [110] * 8
    with pytest.raises(ValueError, match="duplicate"):
        density_edges(np.ones(50))


def test_density_masses_follow_counts():
    rng = np.random.default_rng(2)
    y = rng.uniform(0, 1, 20000)
    lab = rng.random(y.size) < 0.3
    edges = density_edges(y)
    f0, f1 = estimate_densities(y[~lab], y[lab], edges)
    expect = np.diff(edges) / edges[-1]
    assert np.all(np.abs(f0.masses - expect) < 0.02)
    assert np.all(np.abs(f1.masses - expect) < 0.02)


def test_density_laplace_smoothing():
    edges = np.arange(11.0)
    f0, f1 = estimate_densities([0.5, 0.5, 3.2], [], edges)
    assert f0.masses[0] == pytest.approx(3 / 13) and f0.masses[1] == pytest.approx(1 / 13)
    assert np.allclose(f1.masses, 0.1)


def _sim_pairs(n, charge=2, seed=0):
    theta, mu = default_params(charge)
    corpus = synthetic_corpus(n, charge, seed=seed)
    rng = np.random.default_rng([seed, 99])
    sims = [sample_observed(T, theta, mu, rng=rng) for T in corpus]
    return [TrainingPair(s.observed, T) for s, T in zip(sims, corpus)], sims, theta


@pytest.fixture(scope="module")
def small_fit():
    pairs, sims, theta = _sim_pairs(12, seed=4)
    state = fit(pairs, FitOptions(r=theta.r, seed=7))
    return pairs, sims, theta, state


def test_fit_trace_monotone_and_converged(small_fit):
    _, _, _, state = small_fit
    tr = state.loglik_trace
    assert all(b >= a for a, b in zip(tr, tr[1:]))
    assert state.converged and state.iterations <= 100


def test_fit_is_componentwise_optimal(small_fit):
    pairs, _, _, state = small_fit
    for p, e, mu in zip(pairs, state.configs, state.mus):
        st_ = PairStructure(p.theoretical, p.observed, state.theta0.w)
        lik = PairLikelihood(st_, state.theta0)
        rows = st_.component_configs(e)
        here, k = lik.evaluate_rows(rows)
        for g, tw in enumerate(lik.table_weights):
            for r in range(tw.size):
                alt = list(rows)
                alt[g] = r
                assert lik.evaluate_rows(alt)[0] <= here + 1e-9


def test_fit_deterministic_and_thread_independent(small_fit):
    pairs, _, theta, state = small_fit
    again = fit(pairs, FitOptions(r=theta.r, seed=7, threads=2))
    assert again.loglik_trace == state.loglik_trace
    assert again.theta0.to_json() == state.theta0.to_json()
    assert all(np.array_equal(a, b) for a, b in zip(again.configs, state.configs))


def test_fit_exact_search_variant(small_fit):
    pairs, _, theta, _ = small_fit
    state = fit(pairs, FitOptions(r=theta.r, search="exact", max_iter=20))
    tr = state.loglik_trace
    assert all(b >= a for a, b in zip(tr, tr[1:]))


def test_fit_rejects_mixed_or_tiny_input(small_fit):
    pairs = small_fit[0]
    with pytest.raises(ValueError):
        fit(pairs[:1])
    p1, _, _ = _sim_pairs(2, charge=1, seed=1)
    with pytest.raises(ValueError, match="mix"):
        fit([pairs[0], p1[0]])


def test_emission_labels():
    labs = emission_labels([np.array([-1, 2, 0])], [4])
    assert labs[0][0].tolist() == [False, True, True]
    assert labs[0][1].tolist() == [True, False, True, False]
