"""Draw observed spectra from the generative model and check parameter recovery."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import NO_EMISSION, GlobalParams, PiecewiseDensity, logistic_emission_prob
from .preprocess import preprocess
from .spectra_io import OBSERVED, THEORETICAL, Spectrum
from .training import FitOptions, TrainingPair, emission_labels, fit

# simulation truth per charge state: (mu, beta, sigma)
SIM_TRUTH = {
    1: (-1.240, 2.970, 0.390),
    2: (-5.060, 4.740, 0.160),
}

DEFAULT_EDGES = np.array([0.0, 0.35, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.3, 1.8])
DEFAULT_F0 = np.array([20, 18, 15, 13, 11, 9, 6, 4, 3, 1], dtype=float)
DEFAULT_F1 = np.array([3, 4, 6, 8, 10, 12, 14, 15, 16, 12], dtype=float)

# synthetic theoretical corpus
CORPUS_PEAKS = (20, 60)
CORPUS_MZ = (200.0, 1800.0)
CORPUS_LOGNORMAL_SD = 1.5
DEFAULT_MZ_RANGE = (150.0, 1850.0)


def default_params(charge: int = 2, w: float = 2.0) -> tuple[GlobalParams, float]:
    """Shared parameters and intercept for simulating charge ``charge`` data."""
    mu, beta, sigma = SIM_TRUTH[charge]
    f0 = PiecewiseDensity(DEFAULT_EDGES, DEFAULT_F0 / DEFAULT_F0.sum())
    f1 = PiecewiseDensity(DEFAULT_EDGES, DEFAULT_F1 / DEFAULT_F1.sum())
    r = DEFAULT_MZ_RANGE[1] - DEFAULT_MZ_RANGE[0]
    return GlobalParams(sigma, beta, f0, f1, w, r, charge), mu


def synthetic_theoretical(rng: np.random.Generator, charge: int = 2, spectrum_id: str = "SYN",
                          n_peaks: Sequence[int] = CORPUS_PEAKS,
                          mz_span: Sequence[float] = CORPUS_MZ, tol: float = 2.0) -> Spectrum:
    """A random theoretical spectrum, run through the standard preprocessing.

    Locations are uniform over ``mz_span``; raw intensities are lognormal.
    Clustering may leave slightly fewer than the drawn number of peaks.
    """
    n = int(rng.integers(n_peaks[0], n_peaks[1] + 1))
    mz = np.unique(np.round(rng.uniform(mz_span[0], mz_span[1], n), 4))
    inten = rng.lognormal(0.0, CORPUS_LOGNORMAL_SD, mz.size)
    raw = Spectrum(spectrum_id, charge, mz, inten, THEORETICAL)
    return preprocess(raw, tol)


def synthetic_corpus(n_spectra: int, charge: int = 2, seed: int = 0, prefix: str = "SYN") -> list[Spectrum]:
    rng = np.random.default_rng([seed, charge])
    return [synthetic_theoretical(rng, charge, f"{prefix}{charge}_{i:04d}") for i in range(n_spectra)]


@dataclass
class SimulationTruth:
    observed: Spectrum
    true_config: np.ndarray
    theta0: GlobalParams
    mu: float
    noise_count: int
    mz_range: tuple[float, float]


def _truncated_normal(rng, size, sigma, w):
    out = rng.normal(0.0, sigma, size)
    bad = np.abs(out) > w
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, int(bad.sum()))
        bad = np.abs(out) > w
    return out


def sample_observed(T: Spectrum, theta0: GlobalParams, mu: float, noise_count: Optional[int] = None,
                    mz_range: Optional[tuple[float, float]] = None, seed=None,
                    rng: Optional[np.random.Generator] = None,
                    spectrum_id: Optional[str] = None) -> SimulationTruth:
    """Generate one observed spectrum from theoretical spectrum ``T``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    n = len(T)
    if noise_count is None:
        noise_count = math.floor(0.9 * n)
    if noise_count < 0:
        raise ValueError("noise_count must be nonnegative")
    if mz_range is None:
        mid = 0.5 * (T.mz[0] + T.mz[-1])
        mz_range = (mid - 0.5 * theta0.r, mid + 0.5 * theta0.r)
    lo, hi = map(float, mz_range)
    if not math.isclose(hi - lo, theta0.r, rel_tol=1e-9):
        raise ValueError(f"mz_range length {hi - lo} does not match r={theta0.r}")

    p = logistic_emission_prob(T.intensity, mu, theta0.beta)
    emits = np.flatnonzero(rng.random(n) < p)
    k = emits.size
    mz = np.empty(k + noise_count)
    mz[:k] = T.mz[emits] + _truncated_normal(rng, k, theta0.sigma, theta0.w)
    mz[k:] = rng.uniform(lo, hi, noise_count)
    while True:
        # a nonpositive or repeated m/z is redrawn within its own process
        _, first = np.unique(mz, return_index=True)
        bad = np.ones(mz.size, dtype=bool)
        bad[first] = False
        bad |= mz <= 0
        if not bad.any():
            break
        for idx in np.flatnonzero(bad):
            if idx < k:
                mz[idx] = T.mz[emits[idx]] + _truncated_normal(rng, 1, theta0.sigma, theta0.w)[0]
            else:
                mz[idx] = rng.uniform(lo, hi)
    inten = np.concatenate([theta0.f1.sample(rng, k), theta0.f0.sample(rng, noise_count)])
    order = np.argsort(mz, kind="stable")
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    config = np.full(n, NO_EMISSION, dtype=np.intp)
    config[emits] = position[:k]
    O = Spectrum(spectrum_id or f"{T.id}_obs", T.charge, mz[order], inten[order], OBSERVED,
                 T.precursor_mz)
    return SimulationTruth(O, config, theta0, float(mu), int(noise_count), (lo, hi))


def classification_errors(true_configs, est_configs, n_observed) -> tuple[float, float]:
    """Pooled misclassification rates of emission status on theoretical and observed peaks."""
    truth = emission_labels(true_configs, n_observed)
    est = emission_labels(est_configs, n_observed)
    t_err = sum(int(np.sum(a[0] != b[0])) for a, b in zip(truth, est))
    o_err = sum(int(np.sum(a[1] != b[1])) for a, b in zip(truth, est))
    t_tot = sum(a[0].size for a in truth)
    o_tot = sum(a[1].size for a in truth)
    return t_err / t_tot, o_err / o_tot


@dataclass
class RecoveryReport:
    rows: list = field(default_factory=list)  # (replicate, mu_bar, beta, sigma, ce_t, ce_o)
    truth: tuple = ()
    fits: list = field(default_factory=list)  # (loglik_trace, iterations, converged) per replicate

    COLUMNS = ("mu", "beta", "sigma", "ce_t", "ce_o")

    def means(self) -> np.ndarray:
        return np.mean(np.array([r[1:] for r in self.rows]), axis=0)

    def sds(self) -> np.ndarray:
        a = np.array([r[1:] for r in self.rows])
        return np.std(a, axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])

    def to_tsv(self) -> str:
        def f(x):
            return repr(float(x))
        out = ["replicate\tmu\tbeta\tsigma\tce_t\tce_o"]
        out += ["\t".join([str(r[0])] + [f(x) for x in r[1:]]) for r in self.rows]
        mean, sd = self.means(), self.sds()
        out.append("\t".join(["mean"] + [f(x) for x in mean]))
        out.append("\t".join(["sd"] + [f(x) for x in sd]))
        if self.truth:
            out.append("\t".join(["truth"] + [f(x) for x in self.truth] + ["NA", "NA"]))
        return "\n".join(out) + "\n"


def run_recovery_experiment(corpus: Sequence[Spectrum], theta0: GlobalParams, mu: float,
                            replicates: int = 100, seed: int = 0, noise_frac: float = 0.9,
                            fit_options: Optional[FitOptions] = None) -> RecoveryReport:
    """Simulate one observed spectrum per theoretical spectrum, refit, repeat."""
    if len(corpus) < 2:
        raise ValueError("need at least two theoretical spectra")
    report = RecoveryReport(truth=(mu, theta0.beta, theta0.sigma))
    base = fit_options or FitOptions()
    for rep in range(replicates):
        rng = np.random.default_rng([seed, rep])
        sims = [sample_observed(T, theta0, mu, math.floor(noise_frac * len(T)), rng=rng)
                for T in corpus]
        pairs = [TrainingPair(s.observed, T) for s, T in zip(sims, corpus)]
        opts = FitOptions(**{**base.__dict__, "r": theta0.r, "w": theta0.w, "seed": seed + rep})
        state = fit(pairs, opts)
        ce_t, ce_o = classification_errors([s.true_config for s in sims], state.configs,
                                           [len(s.observed) for s in sims])
        report.rows.append((rep, float(np.mean(state.mus)), state.theta0.beta,
                            state.theta0.sigma, ce_t, ce_o))
        report.fits.append((list(state.loglik_trace), state.iterations, state.converged))
    return report
