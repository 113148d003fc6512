"""Probability model linking a theoretical spectrum to an observed one.

Each theoretical peak emits an observed peak with logistic probability in
its intensity; emitted peaks land at a truncated-normal offset from their
source with intensities from ``f1``; the remaining observed peaks are noise,
uniform in m/z over a range of length ``r`` with intensities from ``f0``.

An emission configuration is an int array ``e`` of length ``n`` where
``e[i]`` is the index of the observed peak emitted by theoretical peak ``i``
or ``NO_EMISSION`` (-1).
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit, gammaln, logsumexp

from .spectra_io import Spectrum

log = logging.getLogger(__name__)

NO_EMISSION = -1
MU_BOUND = 15.0
ENUM_BUDGET = 10**6
BRUTEFORCE_BUDGET = 10**5
PARAMS_FORMAT = "psmlik-params"
PARAMS_VERSION = 1

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class EnumerationOverflow(RuntimeError):
    pass


class InfeasibleConfigurationError(ValueError):
    pass


# --------------------------------------------------------------------- densities


@dataclass(frozen=True, eq=False)
class PiecewiseDensity:
    """Piecewise-constant density over transformed intensity.

    Bins are left-closed and right-open except the last, which is closed.
    Values outside ``[edges[0], edges[-1]]`` are evaluated in the nearest
    boundary bin.
    """

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=np.float64)
        masses = np.array(self.masses, dtype=np.float64)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise ValueError("need len(edges) == len(masses) + 1")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise ValueError(f"bin edges must be strictly increasing, got {edges.tolist()}")
        if np.any(masses < 0) or not np.all(np.isfinite(masses)):
            raise ValueError("bin masses must be finite and nonnegative")
        total = masses.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"bin masses sum to {total}, not 1")
        masses = masses / total
        edges.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)

    @property
    def n_bins(self) -> int:
        return self.masses.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def bin_index(self, y) -> np.ndarray:
        b = np.searchsorted(self.edges, np.asarray(y, dtype=np.float64), side="right") - 1
        return np.clip(b, 0, self.n_bins - 1)

    def logpdf(self, y):
        with np.errstate(divide="ignore"):
            logdens = np.log(self.masses) - np.log(self.widths)
        return logdens[self.bin_index(y)]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        b = rng.choice(self.n_bins, size=size, p=self.masses)
        return self.edges[b] + rng.random(size) * self.widths[b]

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "masses": self.masses.tolist()}


def piecewise_logpdf(y, d: PiecewiseDensity):
    return d.logpdf(y)


@dataclass(frozen=True, eq=False)
class GlobalParams:
    """Parameters shared by all spectra of one charge state."""

    sigma: float
    beta: float
    f0: PiecewiseDensity
    f1: PiecewiseDensity
    w: float = 2.0
    r: float = 1000.0
    charge: Optional[int] = None

    def __post_init__(self):
        for name in ("sigma", "w", "r"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if not np.array_equal(self.f0.edges, self.f1.edges):
            raise ValueError("f0 and f1 must share bin edges")

    def replace(self, **changes) -> "GlobalParams":
        kw = dict(sigma=self.sigma, beta=self.beta, f0=self.f0, f1=self.f1,
                  w=self.w, r=self.r, charge=self.charge)
        kw.update(changes)
        return GlobalParams(**kw)

    def to_json(self) -> str:
        doc = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "charge": self.charge,
            "sigma": self.sigma,
            "beta": self.beta,
            "w": self.w,
            "r": self.r,
            "edges": self.f0.edges.tolist(),
            "f0": self.f0.masses.tolist(),
            "f1": self.f1.masses.tolist(),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GlobalParams":
        doc = json.loads(text)
        if doc.get("format") != PARAMS_FORMAT:
            raise ValueError("not a parameter document")
        if doc.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported parameter document version {doc.get('version')}")
        edges = doc["edges"]
        return cls(
            sigma=float(doc["sigma"]), beta=float(doc["beta"]),
            f0=PiecewiseDensity(edges, doc["f0"]), f1=PiecewiseDensity(edges, doc["f1"]),
            w=float(doc["w"]), r=float(doc["r"]),
            charge=None if doc.get("charge") is None else int(doc["charge"]),
        )


# --------------------------------------------------------------------- elementwise pieces


def logistic_emission_prob(y, mu, beta):
    return expit(np.add(mu, np.multiply(beta, y)))


def softplus(x):
    return np.logaddexp(0.0, x)


def truncated_normal_logpdf(x, center, sigma: float, w: float):
    """Log density of a normal(center, sigma^2) truncated to |x - center| <= w."""
    d = np.subtract(x, center, dtype=np.float64)
    log_z = math.log(erf(w / (sigma * math.sqrt(2.0))))
    out = -0.5 * (d / sigma) ** 2 - _LOG_SQRT_2PI - math.log(sigma) - log_z
    out = np.where(np.abs(d) <= w, out, -np.inf)
    return out[()] if out.ndim == 0 else out


# --------------------------------------------------------------------- components


def feasible_pairs(T: Spectrum, O: Spectrum, w: float):
    """All (i, j) with |X^t_i - X^o_j| <= w, ordered by i then j."""
    lo = np.searchsorted(O.mz, T.mz - w, side="left")
    hi = np.searchsorted(O.mz, T.mz + w, side="right")
    ii, jj = [], []
    for i in range(len(T)):
        for j in range(lo[i], hi[i]):
            # searchsorted bounds can disagree with the subtraction by an ulp
            if abs(O.mz[j] - T.mz[i]) <= w:
                ii.append(i)
                jj.append(j)
    return np.array(ii, dtype=np.intp), np.array(jj, dtype=np.intp)


@dataclass(frozen=True)
class Component:
    """Theoretical peaks that compete for a shared set of observed peaks."""

    theo: tuple[int, ...]
    obs: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def adjacency(self) -> list[list[int]]:
        nbrs = {i: [] for i in self.theo}
        for i, j in self.edges:
            nbrs[i].append(j)
        return [sorted(nbrs[i]) for i in self.theo]

    def configuration_bound(self) -> int:
        return math.prod(len(a) + 1 for a in self.adjacency())

    def count_configurations(self, limit: Optional[int] = None) -> int:
        """Exact number of partial injections; stops early once past ``limit``."""
        if limit is not None and self.configuration_bound() <= limit:
            limit = None
        adj = self.adjacency()
        used: set[int] = set()
        count = 0

        def rec(p):
            nonlocal count
            if p == len(adj):
                count += 1
                if limit is not None and count > limit:
                    raise StopIteration
                return
            rec(p + 1)
            for j in adj[p]:
                if j not in used:
                    used.add(j)
                    rec(p + 1)
                    used.discard(j)

        try:
            rec(0)
        except StopIteration:
            pass
        return count


@dataclass(frozen=True)
class ComponentPartition:
    components: tuple[Component, ...]
    n: int
    m: int
    dropped: tuple[tuple[int, int], ...] = ()

    @property
    def n_exceeds_m(self) -> bool:
        return self.n > self.m


def _connected(theo: Sequence[int], edges: Sequence[tuple[int, int]], m_offset: int):
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in theo:
        parent[i] = i
    for i, j in edges:
        parent.setdefault(m_offset + j, m_offset + j)
    for i, j in edges:
        ra, rb = find(i), find(m_offset + j)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list] = {}
    for i in theo:
        groups.setdefault(find(i), []).append(i)
    by_root = {r: [] for r in groups}
    for e in edges:
        by_root[find(e[0])].append(e)
    comps = []
    for r, ts in groups.items():
        es = sorted(by_root[r])
        comps.append(Component(tuple(sorted(ts)), tuple(sorted({j for _, j in es})), tuple(es)))
    return comps


def build_components(T: Spectrum, O: Spectrum, w: float, budget: int = ENUM_BUDGET) -> ComponentPartition:
    """Connected components of the bipartite within-``w`` graph.

    Components whose configuration count exceeds ``budget`` are split by
    dropping their widest edges (largest |dX|) one at a time.
    """
    ii, jj = feasible_pairs(T, O, w)
    edges = list(zip(ii.tolist(), jj.tolist()))
    offset = len(T)
    pending = _connected(range(len(T)), edges, offset)
    done, dropped = [], []
    while pending:
        comp = pending.pop()
        if comp.configuration_bound() <= budget or comp.count_configurations(budget) <= budget:
            done.append(comp)
            continue
        widest = max(comp.edges, key=lambda e: (abs(O.mz[e[1]] - T.mz[e[0]]), e))
        log.warning("component with %d theoretical / %d observed peaks exceeds the enumeration "
                    "budget; dropping edge T%d-O%d (|dX|=%.4g)", len(comp.theo), len(comp.obs),
                    widest[0], widest[1], abs(O.mz[widest[1]] - T.mz[widest[0]]))
        dropped.append(widest)
        rest = [e for e in comp.edges if e != widest]
        pending.extend(_connected(comp.theo, rest, offset))
    done.sort(key=lambda c: c.theo[0])
    return ComponentPartition(tuple(done), len(T), len(O), tuple(sorted(dropped)))


def enumerate_configurations(c: Component, budget: int = ENUM_BUDGET) -> list[tuple[int, ...]]:
    """All partial injections of ``c.theo`` into feasible observed peaks.

    Each configuration is a tuple aligned with ``c.theo`` holding observed
    indices or ``NO_EMISSION``. The empty map comes first.
    """
    if c.configuration_bound() > budget and c.count_configurations(budget) > budget:
        raise EnumerationOverflow(
            f"component with {len(c.theo)} theoretical and {len(c.obs)} observed peaks has more "
            f"than {budget} configurations")
    adj = c.adjacency()
    out = []
    cur = [NO_EMISSION] * len(adj)
    used: set[int] = set()

    def rec(p):
        if p == len(adj):
            out.append(tuple(cur))
            return
        rec(p + 1)
        for j in adj[p]:
            if j not in used:
                used.add(j)
                cur[p] = j
                rec(p + 1)
                cur[p] = NO_EMISSION
                used.discard(j)

    rec(0)
    return out


def count_fully_connected(a: int, b: int) -> int:
    """Partial injections between ``a`` and ``b`` mutually feasible peaks."""
    return sum(math.comb(a, k) * math.comb(b, k) * math.factorial(k) for k in range(min(a, b) + 1))


# --------------------------------------------------------------------- likelihood


def check_configuration(e, T: Spectrum, O: Spectrum, w: float) -> np.ndarray:
    e = np.asarray(e, dtype=np.intp)
    if e.shape != (len(T),):
        raise InfeasibleConfigurationError(f"configuration has shape {e.shape}, expected ({len(T)},)")
    if np.any((e < NO_EMISSION) | (e >= len(O))):
        raise InfeasibleConfigurationError("configuration refers to a nonexistent observed peak")
    emit = np.flatnonzero(e >= 0)
    targets = e[emit]
    if np.unique(targets).size != targets.size:
        raise InfeasibleConfigurationError("configuration is not injective")
    if np.any(np.abs(O.mz[targets] - T.mz[emit]) > w):
        raise InfeasibleConfigurationError("configuration pairs peaks farther apart than w")
    return e


def complete_data_loglik(O: Spectrum, T: Spectrum, e, theta0: GlobalParams, mu):
    """log p(O | T, e) + log p(e | T), evaluated term by term.

    ``mu`` may be an array, in which case an array of the same shape is
    returned.
    """
    e = check_configuration(e, T, O, theta0.w)
    m = len(O)
    emit = e >= 0
    k = int(emit.sum())
    noise = np.ones(m, dtype=bool)
    noise[e[emit]] = False

    mu = np.asarray(mu, dtype=np.float64)
    eta = mu[..., None] + theta0.beta * T.intensity
    log_g = -softplus(-eta)
    log_1mg = -softplus(eta)
    total = gammaln(m - k + 1) - gammaln(m + 1)
    total = total + np.sum(np.where(emit, log_g, log_1mg), axis=-1)
    total = total + (m - k) * -math.log(theta0.r)
    total = total + np.sum(theta0.f0.logpdf(O.intensity[noise]))
    src = np.flatnonzero(emit)
    dst = e[src]
    total = total + np.sum(truncated_normal_logpdf(O.mz[dst], T.mz[src], theta0.sigma, theta0.w))
    total = total + np.sum(theta0.f1.logpdf(O.intensity[dst]))
    return total[()] if np.ndim(total) == 0 else total


def full_loglik_bruteforce(O: Spectrum, T: Spectrum, theta0: GlobalParams, mu: float,
                           budget: int = BRUTEFORCE_BUDGET) -> float:
    """log sum_e exp(complete_data_loglik), over the full joint configuration space."""
    part = build_components(T, O, theta0.w, budget=budget)
    if part.dropped:
        raise EnumerationOverflow("a component exceeds the brute-force budget")
    per_comp = [enumerate_configurations(c, budget) for c in part.components]
    total = math.prod(len(p) for p in per_comp)
    if total > budget:
        raise EnumerationOverflow(f"{total} joint configurations exceed the budget of {budget}")
    values = np.empty(total)
    e = np.full(len(T), NO_EMISSION, dtype=np.intp)
    for idx, combo in enumerate(itertools.product(*per_comp)):
        for comp, cfg in zip(part.components, combo):
            e[list(comp.theo)] = cfg
        values[idx] = complete_data_loglik(O, T, e, theta0, mu)
    return float(logsumexp(values))


def solve_intercept(target: float, offsets: np.ndarray, bound: float = MU_BOUND,
                    tol: float = 1e-12) -> float:
    """Maximize ``target*mu - sum(softplus(mu + offsets))`` over ``|mu| <= bound``.

    Safeguarded 1-D Newton on the concave objective; the stationary point
    satisfies ``sum(expit(mu + offsets)) == target``.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    lo, hi = -bound, bound
    if target - expit(lo + offsets).sum() <= 0:
        return lo
    if target - expit(hi + offsets).sum() >= 0:
        return hi
    frac = target / offsets.size
    mu = float(np.clip(math.log(frac / (1 - frac)) - offsets.mean(), lo, hi)) if 0 < frac < 1 else 0.0
    for _ in range(200):
        p = expit(mu + offsets)
        g = target - p.sum()
        if abs(g) < tol:
            break
        if g > 0:
            lo = mu
        else:
            hi = mu
        h = float((p * (1 - p)).sum())
        nxt = mu + g / h if h > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if nxt == mu or hi - lo < 1e-15:
            break
        mu = nxt
    return mu


class PairStructure:
    """Parameter-independent search structure for one (T, O) pair."""

    def __init__(self, T: Spectrum, O: Spectrum, w: float, budget: int = ENUM_BUDGET):
        self.T, self.O, self.w = T, O, w
        self.partition = build_components(T, O, w, budget)
        edge_id: dict[tuple[int, int], int] = {}
        for comp in self.partition.components:
            for e in comp.edges:
                edge_id[e] = len(edge_id)
        n_edges = len(edge_id)
        self.edge_i = np.array([e[0] for e in edge_id], dtype=np.intp)
        self.edge_j = np.array([e[1] for e in edge_id], dtype=np.intp)
        self.components = self.partition.components
        # per component: configuration matrix of edge ids, padded id n_edges = no emission
        self.tables = []
        for comp in self.components:
            cfgs = enumerate_configurations(comp, budget)
            mat = np.full((len(cfgs), len(comp.theo)), n_edges, dtype=np.intp)
            for r, cfg in enumerate(cfgs):
                for p, (i, j) in enumerate(zip(comp.theo, cfg)):
                    if j != NO_EMISSION:
                        mat[r, p] = edge_id[(i, j)]
            self.tables.append(mat)
        self.counts = [(mat < n_edges).sum(axis=1) for mat in self.tables]
        self.n_edges = n_edges

    @property
    def n(self) -> int:
        return len(self.T)

    @property
    def m(self) -> int:
        return len(self.O)

    def edge_residuals(self) -> np.ndarray:
        return self.O.mz[self.edge_j] - self.T.mz[self.edge_i]

    def component_configs(self, e: np.ndarray) -> list[int]:
        """Row index, in each component table, of configuration ``e``."""
        rows = []
        for comp, mat in zip(self.components, self.tables):
            want = np.full(len(comp.theo), self.n_edges, dtype=np.intp)
            for p, i in enumerate(comp.theo):
                if e[i] != NO_EMISSION:
                    hit = np.flatnonzero((self.edge_i == i) & (self.edge_j == e[i]))
                    if hit.size == 0:
                        raise InfeasibleConfigurationError(f"T{i}-O{e[i]} is not a searchable pair")
                    want[p] = hit[0]
            match = np.flatnonzero((mat == want).all(axis=1))
            rows.append(int(match[0]))
        return rows

    def assemble(self, rows: Sequence[int]) -> np.ndarray:
        e = np.full(self.n, NO_EMISSION, dtype=np.intp)
        for comp, mat, r in zip(self.components, self.tables, rows):
            ids = mat[r]
            for p, i in enumerate(comp.theo):
                if ids[p] < self.n_edges:
                    e[i] = self.edge_j[ids[p]]
        return e


@dataclass
class SearchResult:
    value: float
    mu: float
    config: np.ndarray
    k: int
    rows: list = field(default_factory=list)


class PairLikelihood:
    """Complete-data log-likelihood of one pair under fixed shared parameters.

    The value of configuration ``e`` at intercept ``mu`` decomposes as::

        const + lgamma(m-k+1) + sum_{(i,j) in e} a_ij + k*mu - sum_i softplus(mu + beta*y_i)

    with ``a_ij`` free of ``mu``. The intercept therefore only sees ``k``,
    and the best intercept for each ``k`` is precomputed.
    """

    def __init__(self, structure: PairStructure, theta0: GlobalParams):
        if structure.w != theta0.w:
            raise ValueError("structure was built with a different window w")
        self.s = structure
        self.theta0 = theta0
        T, O = structure.T, structure.O
        lf0 = theta0.f0.logpdf(O.intensity)
        lf1 = theta0.f1.logpdf(O.intensity)
        if np.any(np.isneginf(lf0)):
            raise ValueError("noise density f0 has zero mass at an observed intensity")
        m = structure.m
        self.offsets = theta0.beta * T.intensity
        self.const = float(-gammaln(m + 1) - m * math.log(theta0.r) + lf0.sum())
        i, j = structure.edge_i, structure.edge_j
        a = (self.offsets[i] + math.log(theta0.r)
             + truncated_normal_logpdf(O.mz[j] - T.mz[i], 0.0, theta0.sigma, theta0.w)
             + lf1[j] - lf0[j])
        self.pair_weight = np.append(a, 0.0)
        self.table_weights = [self.pair_weight[mat].sum(axis=1) for mat in structure.tables]
        kmax = min(structure.n, m, sum(int(c.max()) for c in structure.counts))
        self.k_mu = np.array([solve_intercept(k, self.offsets) for k in range(kmax + 1)])
        self.k_value = np.array([
            k * mu - softplus(mu + self.offsets).sum() + gammaln(m - k + 1)
            for k, mu in enumerate(self.k_mu)
        ])

    def value(self, weight_sum: float, k: int) -> float:
        return self.const + weight_sum + self.k_value[k]

    def mu_for(self, k: int) -> float:
        return float(self.k_mu[k])

    def evaluate_rows(self, rows: Sequence[int]) -> tuple[float, int]:
        wsum = sum(float(tw[r]) for tw, r in zip(self.table_weights, rows))
        k = sum(int(c[r]) for c, r in zip(self.s.counts, rows))
        return self.value(wsum, k), k

    def search_exact(self) -> SearchResult:
        """Global maximum over (e, mu), by best-per-k tables and max-plus convolution."""
        best = np.array([0.0])
        choices = []
        for tw, cnt in zip(self.table_weights, self.s.counts):
            kk = int(cnt.max())
            per_k = np.full(kk + 1, -np.inf)
            arg = np.zeros(kk + 1, dtype=np.intp)
            for k in range(kk + 1):
                idx = np.flatnonzero(cnt == k)
                if idx.size:
                    r = idx[int(np.argmax(tw[idx]))]
                    per_k[k], arg[k] = tw[r], r
            comb = np.full(best.size + kk, -np.inf)
            back = np.zeros(best.size + kk, dtype=np.intp)
            for kc in range(kk + 1):
                cand = best + per_k[kc]
                seg = comb[kc:kc + best.size]
                better = cand > seg
                seg[better] = cand[better]
                back[kc:kc + best.size][better] = kc
            choices.append((arg, back))
            best = comb
        kmax = min(best.size - 1, self.k_value.size - 1)
        totals = best[:kmax + 1] + self.k_value[:kmax + 1]
        k_star = int(np.argmax(totals))
        rows = [0] * len(choices)
        k = k_star
        for g in range(len(choices) - 1, -1, -1):
            arg, back = choices[g]
            kc = int(back[k])
            rows[g] = int(arg[kc])
            k -= kc
        value, k = self.evaluate_rows(rows)
        return SearchResult(value, self.mu_for(k), self.s.assemble(rows), k, rows)

    def coordinate_ascent(self, rng: np.random.Generator, rows: Optional[Sequence[int]] = None,
                          max_sweeps: int = 1000) -> SearchResult:
        """Component-wise ascent: for each component in a random order, take the
        configuration (with its best intercept) that maximizes the likelihood."""
        G = len(self.s.tables)
        rows = [0] * G if rows is None else list(rows)
        for _ in range(max_sweeps):
            wsum = sum(float(tw[r]) for tw, r in zip(self.table_weights, rows))
            k = sum(int(c[r]) for c, r in zip(self.s.counts, rows))
            changed = False
            for g in rng.permutation(G):
                tw, cnt = self.table_weights[g], self.s.counts[g]
                if tw.size == 1:
                    continue
                old = rows[g]
                w_rest = wsum - tw[old]
                k_rest = k - cnt[old]
                cand = w_rest + tw + self.k_value[k_rest + cnt]
                r = int(np.argmax(cand))
                # strict gain only, so rounding noise cannot cycle
                if r != old and cand[r] > cand[old] + 1e-12 * max(1.0, abs(cand[old])):
                    rows[g] = r
                    wsum = w_rest + tw[r]
                    k = int(k_rest + cnt[r])
                    changed = True
            if not changed:
                break
        value, k = self.evaluate_rows(rows)
        return SearchResult(value, self.mu_for(k), self.s.assemble(rows), k, rows)


def init_configuration(partition: ComponentPartition, T: Spectrum, O: Spectrum) -> np.ndarray:
    """Greedy nearest-pair matching inside each component.

    Repeatedly assigns the closest unmatched feasible pair; ties go to the
    lower theoretical index, then the lower observed index.
    """
    e = np.full(len(T), NO_EMISSION, dtype=np.intp)
    for comp in partition.components:
        ranked = sorted(comp.edges, key=lambda p: (abs(O.mz[p[1]] - T.mz[p[0]]), p[0], p[1]))
        used_t, used_o = set(), set()
        for i, j in ranked:
            if i not in used_t and j not in used_o:
                e[i] = j
                used_t.add(i)
                used_o.add(j)
    return e
