"""Reference implementations written without the package's own machinery."""

import itertools
import math

import numpy as np
from scipy import integrate, stats


def tn_logpdf(x, center, sigma, w):
    d = x - center
    if abs(d) > w:
        return -math.inf
    return float(stats.truncnorm.logpdf(d, -w / sigma, w / sigma, loc=0.0, scale=sigma))


def hist_logpdf(y, edges, masses):
    b = int(np.searchsorted(edges, y, side="right")) - 1
    b = min(max(b, 0), len(masses) - 1)
    return math.log(masses[b] / (edges[b + 1] - edges[b]))


def complete_ll(Tmz, Ty, Omz, Oy, e, mu, sigma, beta, w, r, f0, f1):
    """Term-by-term log p(O, e | T) with plain Python loops."""
    n, m = len(Tmz), len(Omz)
    k = sum(1 for j in e if j >= 0)
    total = math.lgamma(m - k + 1) - math.lgamma(m + 1)
    used = set()
    for i, j in enumerate(e):
        g = 1.0 / (1.0 + math.exp(-(mu + beta * Ty[i])))
        if j >= 0:
            total += math.log(g) + tn_logpdf(Omz[j], Tmz[i], sigma, w) + hist_logpdf(Oy[j], *f1)
            used.add(j)
        else:
            total += math.log1p(-g)
    for j in range(m):
        if j not in used:
            total += -math.log(r) + hist_logpdf(Oy[j], *f0)
    return total


def all_configurations(Tmz, Omz, w):
    choices = [[-1] + [j for j in range(len(Omz)) if abs(Omz[j] - Tmz[i]) <= w]
               for i in range(len(Tmz))]
    for e in itertools.product(*choices):
        hit = [j for j in e if j >= 0]
        if len(hit) == len(set(hit)):
            yield e


def grid_max(Tmz, Ty, Omz, Oy, sigma, beta, w, r, f0, f1, step=1e-3, bound=15.0):
    """max over every configuration and every mu on a grid of spacing ``step``."""
    grid = np.linspace(-bound, bound, int(round(2 * bound / step)) + 1)
    eta = grid[:, None] + beta * np.asarray(Ty, dtype=float)[None, :]
    best = -math.inf
    for e in all_configurations(Tmz, Omz, w):
        emit = np.array([j >= 0 for j in e])
        at0 = complete_ll(Tmz, Ty, Omz, Oy, e, 0.0, sigma, beta, w, r, f0, f1)
        part = np.where(emit, -np.logaddexp(0, -eta), -np.logaddexp(0, eta)).sum(axis=1)
        part0 = float(np.where(emit, -np.logaddexp(0, -eta[grid.size // 2]),
                               -np.logaddexp(0, eta[grid.size // 2])).sum())
        best = max(best, at0 - part0 + float(part.max()))
    return best


def full_ll(Tmz, Ty, Omz, Oy, mu, sigma, beta, w, r, f0, f1):
    vals = [complete_ll(Tmz, Ty, Omz, Oy, e, mu, sigma, beta, w, r, f0, f1)
            for e in all_configurations(Tmz, Omz, w)]
    return float(np.logaddexp.reduce(vals))


def quad_integral(f, a, b, points=None):
    val, _ = integrate.quad(f, a, b, points=points, epsabs=1e-13, epsrel=1e-13, limit=500)
    return val
