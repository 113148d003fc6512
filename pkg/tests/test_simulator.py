import math

import numpy as np
import pytest
from scipy.stats import chisquare

from psmlik.model import NO_EMISSION, check_configuration, logistic_emission_prob
from psmlik.simulator import (
    SIM_TRUTH,
    classification_errors,
    default_params,
    sample_observed,
    synthetic_corpus,
)
from psmlik.spectra_io import Spectrum


def flat_theoretical(n=1000, y=1.0):
    return Spectrum("flat", 1, 200.0 + 5.0 * np.arange(n), np.full(n, y), "theoretical")


def test_truth_table():
    assert SIM_TRUTH[1] == (-1.240, 2.970, 0.390)
    assert SIM_TRUTH[2] == (-5.060, 4.740, 0.160)


def test_emission_frequency_matches_logistic():
    theta, _ = default_params(1)
    theta = theta.replace(r=6000.0)
    T = flat_theoretical()
    rng = np.random.default_rng(21)
    hits = sum(int(np.sum(sample_observed(T, theta, -1.240, 0, rng=rng).true_config != NO_EMISSION))
               for _ in range(100))
    assert abs(hits / 1e5 - float(logistic_emission_prob(1.0, -1.240, 2.970))) < 0.005


def test_noise_intensities_follow_f0():
    theta, mu = default_params(2)
    T = flat_theoretical(200, 0.0)
    theta = theta.replace(r=2000.0)
    rng = np.random.default_rng(3)
    obs = np.concatenate([sample_observed(T, theta, -15.0, 1000, rng=rng).observed.intensity
                          for _ in range(100)])
    assert obs.size >= 10**5
    counts = np.bincount(theta.f0.bin_index(obs), minlength=theta.f0.n_bins)
    # at mu=-15 emissions are vanishingly rare, so almost every peak is noise
    assert chisquare(counts, theta.f0.masses * counts.sum()).pvalue > 0.01


def test_sampled_configuration_is_valid():
    theta, mu = default_params(2)
    for T in synthetic_corpus(10, 2, seed=5):
        sim = sample_observed(T, theta, mu, seed=1)
        e = check_configuration(sim.true_config, T, sim.observed, theta.w)
        src = np.flatnonzero(e >= 0)
        assert np.all(np.abs(sim.observed.mz[e[src]] - T.mz[src]) <= theta.w)
        assert len(sim.observed) == src.size + math.floor(0.9 * len(T))
        assert sim.mz_range[1] - sim.mz_range[0] == pytest.approx(theta.r)


def test_sampler_seeded_determinism():
    theta, mu = default_params(1)
    T = synthetic_corpus(1, 1, seed=2)[0]
    a, b = sample_observed(T, theta, mu, seed=9), sample_observed(T, theta, mu, seed=9)
    assert a.observed == b.observed and np.array_equal(a.true_config, b.true_config)
    assert synthetic_corpus(3, 2, seed=4) == synthetic_corpus(3, 2, seed=4)


def test_range_mismatch_rejected():
    theta, mu = default_params(1)
    T = synthetic_corpus(1, 1)[0]
    with pytest.raises(ValueError, match="does not match"):
        sample_observed(T, theta, mu, mz_range=(0.0, 10.0))


def test_classification_errors_counts():
    truth = [np.array([0, -1, 1])]
    est = [np.array([0, 2, -1])]
    ce_t, ce_o = classification_errors(truth, est, [3])
    assert ce_t == pytest.approx(2 / 3)
    # observed emitted flags: truth {0, 1}, est {0, 2}
    assert ce_o == pytest.approx(2 / 3)


def test_saturated_emission():
    theta, _ = default_params(1)
    T = synthetic_corpus(1, 1, seed=3)[0]
    sim = sample_observed(T, theta, 50.0, 0, seed=1)
    assert len(sim.observed) == len(T) and np.all(sim.true_config >= 0)
    sim = sample_observed(T, theta, -50.0, 7, seed=1)
    assert len(sim.observed) == 7 and np.all(sim.true_config == NO_EMISSION)


def test_unambiguous_recovery_has_zero_error():
    from psmlik.simulator import run_recovery_experiment
    from psmlik.training import FitOptions
    theta, _ = default_params(2)
    corpus = [Spectrum(f"w{i}", 2, 200.0 + 50.0 * np.arange(15) + i, np.linspace(0.2, 1.6, 15), "theoretical")
              for i in range(10)]
    rep = run_recovery_experiment(corpus, theta, 50.0, replicates=1, seed=0, noise_frac=0.0,
                                  fit_options=FitOptions(max_iter=10))
    assert rep.rows[0][4] == 0.0 and rep.rows[0][5] == 0.0
