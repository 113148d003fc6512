"""Supervised estimation of the shared parameters and per-spectrum intercepts.

``fit`` alternates two steps until the training objective stops improving:

* re-estimate sigma, the logistic slope (with all intercepts) and the two
  intensity densities given the current emission configurations;
* per spectrum, with shared parameters frozen, update the configuration
  component by component (random order) together with its intercept.

Every update is kept only if it does not lower the objective, so the
recorded trace is nondecreasing by construction.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit

from .model import (
    ENUM_BUDGET,
    MU_BOUND,
    NO_EMISSION,
    GlobalParams,
    PairLikelihood,
    PairStructure,
    PiecewiseDensity,
    complete_data_loglik,
    init_configuration,
    softplus,
)
from .parallel import map_ordered
from .spectra_io import Spectrum

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
N_BINS = 10


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingPair:
    observed: Spectrum
    theoretical: Spectrum

    def __post_init__(self):
        if self.observed.charge != self.theoretical.charge:
            raise ValueError(
                f"pair {self.observed.id!r}/{self.theoretical.id!r}: charge states differ "
                f"({self.observed.charge} vs {self.theoretical.charge})")


@dataclass
class FitOptions:
    w: float = 2.0
    r: Optional[float] = None
    seed: int = 0
    max_iter: int = 100
    rel_tol: float = 1e-6
    pseudo_count: float = 1.0
    n_bins: int = N_BINS
    search: str = "ascent"
    threads: int = 1
    budget: int = ENUM_BUDGET


@dataclass
class TrainingState:
    theta0: GlobalParams
    mus: np.ndarray
    configs: list
    loglik_trace: list
    pair_loglik: np.ndarray
    seed: int
    iterations: int = 0
    converged: bool = False
    notes: list = field(default_factory=list)


# --------------------------------------------------------------------- sigma


def _sigma_score(log_sigma: float, v: float, w: float) -> float:
    sigma = math.exp(log_sigma)
    a = w / sigma
    z = math.erf(a / math.sqrt(2.0))
    phi = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    return v / sigma**2 - 1.0 + 2.0 * a * phi / z


def estimate_sigma(residuals, w: float, lower: float = SIGMA_FLOOR, tol: float = 1e-10) -> float:
    """MLE of the scale of a zero-mean normal truncated to ``[-w, w]``.

    Solves the score equation by bisection on log(sigma) over
    ``[lower, w]``; boundary solutions raise a ``RuntimeWarning``.
    """
    x = np.asarray(residuals, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two residuals")
    if np.any(np.abs(x) > w):
        raise ValueError("residuals must lie within [-w, w]")
    v = float(np.mean(x * x))
    if v == 0.0:
        warnings.warn("all residuals are zero; sigma floored", RuntimeWarning, stacklevel=2)
        return lower
    lo, hi = math.log(lower), math.log(w)
    if _sigma_score(hi, v, w) >= 0:
        warnings.warn("sigma estimate reached the upper search bound w", RuntimeWarning, stacklevel=2)
        return w
    if _sigma_score(lo, v, w) <= 0:
        warnings.warn("sigma estimate reached the lower search bound", RuntimeWarning, stacklevel=2)
        return lower
    return math.exp(bisect(_sigma_score, lo, hi, args=(v, w), xtol=tol, maxiter=500))


# --------------------------------------------------------------------- logistic


def _solve_intercepts(targets, offsets, groups, n_groups, bound=MU_BOUND, mu0=None, tol=1e-12):
    """Vectorized :func:`psmlik.model.solve_intercept` over groups."""
    def grad(mu):
        return targets - np.bincount(groups, expit(mu[groups] + offsets), n_groups)

    lo = np.full(n_groups, -bound)
    hi = np.full(n_groups, bound)
    g_lo, g_hi = grad(lo), grad(hi)
    at_lo, at_hi = g_lo <= 0, g_hi >= 0
    mu = np.zeros(n_groups) if mu0 is None else np.clip(np.asarray(mu0, dtype=float), -bound, bound)
    for _ in range(200):
        p = expit(mu[groups] + offsets)
        g = targets - np.bincount(groups, p, n_groups)
        h = np.bincount(groups, p * (1 - p), n_groups)
        active = ~(at_lo | at_hi) & (np.abs(g) >= tol)
        if not active.any():
            break
        lo = np.where(active & (g > 0), mu, lo)
        hi = np.where(active & (g < 0), mu, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = mu + g / h
        bad = ~((lo < nxt) & (nxt < hi)) | ~np.isfinite(nxt)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        stalled = active & ((nxt == mu) | (hi - lo < 1e-15))
        mu = np.where(active, nxt, mu)
        if not (active & ~stalled).any():
            break
    mu = np.where(at_lo, -bound, np.where(at_hi, bound, mu))
    return mu


def _logistic_objective(z, y, groups, beta, mus):
    eta = mus[groups] + beta * y
    return float(np.sum(z * eta - softplus(eta)))


def estimate_logistic(labels: Sequence, intensities: Sequence, beta0: float = 0.0,
                      mus0=None, bound: float = MU_BOUND, tol: float = 1e-8,
                      max_iter: int = 500):
    """Grouped logistic regression: common slope, one clamped intercept per group.

    ``labels[s]`` and ``intensities[s]`` are the emission indicators and
    intensities of the theoretical peaks of spectrum ``s``. Alternates a
    Newton step on the slope (curvature of the intercept-profiled
    objective) with exact per-group intercept solves, until the projected
    gradient norm drops below ``tol``. Returns ``(beta, mus)``.
    """
    n_groups = len(labels)
    if any(len(a) == 0 for a in intensities):
        raise ValueError("every group needs at least one observation")
    z = np.concatenate([np.asarray(a, dtype=float) for a in labels])
    y = np.concatenate([np.asarray(a, dtype=float) for a in intensities])
    groups = np.repeat(np.arange(n_groups), [len(a) for a in labels])
    targets = np.bincount(groups, z, n_groups)

    beta = float(beta0)
    mus = _solve_intercepts(targets, beta * y, groups, n_groups, bound, mus0)
    obj = _logistic_objective(z, y, groups, beta, mus)
    for _ in range(max_iter):
        p = expit(mus[groups] + beta * y)
        resid = z - p
        g_beta = float(np.sum(resid * y))
        g_mu = np.bincount(groups, resid, n_groups)
        free = (np.abs(mus) < bound) | ((mus <= -bound) & (g_mu > 0)) | ((mus >= bound) & (g_mu < 0))
        gnorm = math.hypot(g_beta, float(np.linalg.norm(g_mu[free])))
        if gnorm < tol:
            break
        wts = p * (1 - p)
        h_bb = float(np.sum(wts * y * y))
        h_bm = np.bincount(groups, wts * y, n_groups)
        h_mm = np.bincount(groups, wts, n_groups)
        inner = (np.abs(mus) < bound) & (h_mm > 0)
        curv = h_bb - float(np.sum(h_bm[inner] ** 2 / h_mm[inner]))
        step = g_beta / curv if curv > 1e-300 else g_beta
        # backtrack on the intercept-profiled objective
        for _ in range(60):
            b_new = beta + step
            m_new = _solve_intercepts(targets, b_new * y, groups, n_groups, bound, mus)
            o_new = _logistic_objective(z, y, groups, b_new, m_new)
            if o_new >= obj:
                break
            step *= 0.5
        else:
            break
        if b_new == beta and np.array_equal(m_new, mus):
            break
        beta, mus, obj = b_new, m_new, o_new
    n_sep = int(np.sum(np.abs(mus) >= bound))
    if n_sep:
        warnings.warn(f"{n_sep} intercept(s) clamped at +-{bound} (separation)", RuntimeWarning,
                      stacklevel=2)
    return beta, mus


# --------------------------------------------------------------------- densities


def density_edges(intensities, n_bins: int = N_BINS) -> np.ndarray:
    """Bin edges: top 1% of intensities in the last bin, the rest split
    into equal-count bins, starting at zero."""
    y = np.sort(np.asarray(intensities, dtype=np.float64))
    if y.size == 0:
        raise ValueError("no intensities")
    n = y.size
    rank99 = (99 * n + 99) // 100
    lower = y[:rank99]
    L = lower.size
    nb = n_bins - 1
    inner = [lower[(b * L + nb - 1) // nb - 1] for b in range(1, nb)]
    edges = np.array([0.0, *inner, y[rank99 - 1], y[-1]])
    if np.any(np.diff(edges) <= 0):
        raise ValueError(
            f"duplicate bin edges {edges.tolist()}; need more distinct intensity values")
    return edges


def estimate_densities(noise_intensities, emitted_intensities, edges,
                       pseudo_count: float = 1.0) -> tuple[PiecewiseDensity, PiecewiseDensity]:
    """Laplace-smoothed histogram densities for noise (f0) and emitted (f1) peaks."""
    edges = np.asarray(edges, dtype=np.float64)
    probe = PiecewiseDensity(edges, np.full(edges.size - 1, 1.0 / (edges.size - 1)))
    out = []
    for vals in (noise_intensities, emitted_intensities):
        counts = np.bincount(probe.bin_index(np.asarray(vals, dtype=float)), minlength=probe.n_bins)
        masses = (counts + pseudo_count) / (counts.sum() + pseudo_count * probe.n_bins)
        out.append(PiecewiseDensity(edges, masses))
    return out[0], out[1]


# --------------------------------------------------------------------- fitting


def _prior(theta0: GlobalParams, pseudo: float) -> float:
    return pseudo * float(np.sum(np.log(theta0.f0.masses)) + np.sum(np.log(theta0.f1.masses)))


def _pair_lls(pairs, configs, theta0, mus) -> np.ndarray:
    out = np.array([
        complete_data_loglik(p.observed, p.theoretical, e, theta0, mu)
        for p, e, mu in zip(pairs, configs, mus)
    ])
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        p = pairs[bad[0]]
        raise TrainingError(f"non-finite log-likelihood for spectrum {p.observed.id!r} "
                            f"(candidate {p.theoretical.id!r})")
    return out


def _objective(lls, theta0, pseudo) -> float:
    return math.fsum(lls.tolist()) + _prior(theta0, pseudo)


def _sufficient_stats(pairs, configs):
    residuals, labels, intens, noise, emitted = [], [], [], [], []
    for p, e in zip(pairs, configs):
        T, O = p.theoretical, p.observed
        src = np.flatnonzero(e != NO_EMISSION)
        residuals.append(O.mz[e[src]] - T.mz[src])
        labels.append((e != NO_EMISSION).astype(float))
        intens.append(T.intensity)
        mask = np.zeros(len(O), dtype=bool)
        mask[e[src]] = True
        emitted.append(O.intensity[mask])
        noise.append(O.intensity[~mask])
    return (np.concatenate(residuals), labels, intens,
            np.concatenate(noise), np.concatenate(emitted))


def _update_pair(args):
    structure, theta0, e, mu, seed, search = args
    lik = PairLikelihood(structure, theta0)
    if search == "exact":
        res = lik.search_exact()
    else:
        rows = structure.component_configs(e)
        res = lik.coordinate_ascent(np.random.default_rng(seed), rows)
    return res.config, res.mu


def default_range(observed: Sequence[Spectrum]) -> float:
    lo = min(float(s.mz[0]) for s in observed)
    hi = max(float(s.mz[-1]) for s in observed)
    if not hi > lo:
        raise ValueError("observed peaks span an empty m/z range; pass r explicitly")
    return hi - lo


def fit(pairs: Sequence[TrainingPair], options: Optional[FitOptions] = None) -> TrainingState:
    opt = options or FitOptions()
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two training pairs")
    charges = {p.observed.charge for p in pairs}
    if len(charges) != 1:
        raise ValueError(f"training pairs mix charge states {sorted(charges)}")
    charge = charges.pop()
    observed = [p.observed for p in pairs]
    r = opt.r if opt.r is not None else default_range(observed)
    edges = density_edges(np.concatenate([s.intensity for s in observed]), opt.n_bins)
    structures = [PairStructure(p.theoretical, p.observed, opt.w, opt.budget) for p in pairs]
    configs = [init_configuration(st.partition, st.T, st.O) for st in structures]
    notes: list[str] = []

    def stats():
        return _sufficient_stats(pairs, configs)

    def est_sigma(res, fallback):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            if res.size < 2:
                notes.append("fewer than two emitted pairs; sigma kept")
                return fallback
            s = estimate_sigma(res, opt.w)
        notes.extend(str(c.message) for c in caught)
        return s

    def est_logistic(labels, intens, beta0, mus0):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            out = estimate_logistic(labels, intens, beta0, mus0)
        notes.extend(str(c.message) for c in caught)
        return out

    # initial shared parameters from the greedy configurations
    res, labels, intens, noise, emitted = stats()
    sigma = est_sigma(res, 0.5 * opt.w)
    beta, mus = est_logistic(labels, intens, 0.0, None)
    f0, f1 = estimate_densities(noise, emitted, edges, opt.pseudo_count)
    theta0 = GlobalParams(sigma, beta, f0, f1, opt.w, r, charge)
    lls = _pair_lls(pairs, configs, theta0, mus)
    obj = _objective(lls, theta0, opt.pseudo_count)

    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, opt.max_iter + 1):
        if it > 1:
            # step (a): guarded coordinate updates of the shared parameters
            res, labels, intens, noise, emitted = stats()
            cand = theta0.replace(sigma=est_sigma(res, theta0.sigma))
            c_lls = _pair_lls(pairs, configs, cand, mus)
            c_obj = _objective(c_lls, cand, opt.pseudo_count)
            if c_obj >= obj:
                theta0, lls, obj = cand, c_lls, c_obj
            b, m = est_logistic(labels, intens, theta0.beta, mus)
            cand = theta0.replace(beta=b)
            c_lls = _pair_lls(pairs, configs, cand, m)
            c_obj = _objective(c_lls, cand, opt.pseudo_count)
            if c_obj >= obj:
                theta0, mus, lls, obj = cand, m, c_lls, c_obj
            f0, f1 = estimate_densities(noise, emitted, edges, opt.pseudo_count)
            cand = theta0.replace(f0=f0, f1=f1)
            c_lls = _pair_lls(pairs, configs, cand, mus)
            c_obj = _objective(c_lls, cand, opt.pseudo_count)
            if c_obj >= obj:
                theta0, lls, obj = cand, c_lls, c_obj

        # step (b): per-spectrum configuration and intercept updates
        jobs = [(st, theta0, e, mu, [opt.seed, it, s], opt.search)
                for s, (st, e, mu) in enumerate(zip(structures, configs, mus))]
        results = map_ordered(_update_pair, jobs, opt.threads)
        mus = mus.copy()
        for s, (e_new, mu_new) in enumerate(results):
            p = pairs[s]
            ll_new = complete_data_loglik(p.observed, p.theoretical, e_new, theta0, mu_new)
            if not np.isfinite(ll_new):
                raise TrainingError(f"non-finite log-likelihood for spectrum {p.observed.id!r}")
            if ll_new >= lls[s]:
                configs[s], mus[s], lls[s] = e_new, mu_new, ll_new
        obj = _objective(lls, theta0, opt.pseudo_count)
        trace.append(obj)
        log.info("iteration %d: objective %.10g", it, obj)
        if len(trace) >= 2 and trace[-1] - trace[-2] < opt.rel_tol * abs(trace[-2]):
            converged = True
            break

    return TrainingState(theta0, np.asarray(mus, dtype=float), configs, trace, lls,
                         opt.seed, it, converged, notes)


def emission_labels(configs, n_observed: Sequence[int]):
    """Per-pair (theoretical, observed) boolean emission indicators."""
    out = []
    for e, m in zip(configs, n_observed):
        obs = np.zeros(m, dtype=bool)
        obs[e[e != NO_EMISSION]] = True
        out.append((e != NO_EMISSION, obs))
    return out
