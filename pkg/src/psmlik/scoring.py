"""Candidate scoring and posterior identification probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import GlobalParams, PairLikelihood, PairStructure, init_configuration
from .spectra_io import Spectrum


class ChargeMismatchError(ValueError):
    pass


@dataclass
class ScoredMatch:
    candidate_id: str
    log_score: float
    mu_hat: float
    best_config: np.ndarray
    k: int
    n: int
    m: int

    @property
    def n_exceeds_m(self) -> bool:
        return self.n > self.m


@dataclass
class PosteriorSet:
    entries: list[tuple[str, float]]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)


def check_charge(s: Spectrum, theta0: GlobalParams) -> None:
    if theta0.charge is not None and s.charge != theta0.charge:
        raise ChargeMismatchError(
            f"spectrum {s.id!r} has charge {s.charge} but parameters were trained for "
            f"charge {theta0.charge}")


def score(O: Spectrum, T: Spectrum, theta0: GlobalParams, search: str = "exact",
          rng: Optional[np.random.Generator] = None,
          structure: Optional[PairStructure] = None) -> ScoredMatch:
    """Maximized complete-data log-likelihood of ``O`` given candidate ``T``.

    ``search="exact"`` returns the joint maximum over configurations and the
    intercept. ``search="ascent"`` runs the component-wise coordinate ascent
    from the greedy nearest-pair start instead, which may stop at a local
    optimum.
    """
    check_charge(O, theta0)
    check_charge(T, theta0)
    if len(O) == 0 or len(T) == 0:
        raise ValueError("cannot score an empty spectrum")
    if structure is None:
        structure = PairStructure(T, O, theta0.w)
    lik = PairLikelihood(structure, theta0)
    if search == "exact":
        res = lik.search_exact()
    elif search == "ascent":
        rng = np.random.default_rng(0) if rng is None else rng
        start = structure.component_configs(init_configuration(structure.partition, T, O))
        res = lik.coordinate_ascent(rng, start)
    else:
        raise ValueError(f"unknown search {search!r}")
    return ScoredMatch(T.id, res.value, res.mu, res.config, res.k, len(T), len(O))


def posteriors(scored: Sequence[ScoredMatch]) -> PosteriorSet:
    if not scored:
        raise ValueError("need at least one candidate")
    ls = np.array([s.log_score for s in scored], dtype=np.float64)
    p = np.exp(ls - logsumexp(ls))
    order = sorted(range(len(scored)), key=lambda i: -p[i])
    return PosteriorSet([(scored[i].candidate_id, float(p[i])) for i in order])
