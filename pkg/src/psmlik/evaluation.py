"""Identification accuracy, FDR / undetermined-rate curves and calibration tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

_CANON = str.maketrans({"L": "I", "Q": "K"})


def canonical_sequence(seq: str) -> str:
    return seq.strip().upper().translate(_CANON)


def is_correct(top_candidate: str, truth: str) -> bool:
    """Equal up to the indistinguishable swaps Ile/Leu and Lys/Gln."""
    return canonical_sequence(top_candidate) == canonical_sequence(truth)


@dataclass
class IdentificationRecord:
    spectrum_id: str
    candidates: list  # [(candidate_id, confidence)] best first
    truth: str

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"record {self.spectrum_id!r} has no candidates")
        if not all(math.isfinite(c) for _, c in self.candidates):
            raise ValueError(f"record {self.spectrum_id!r} has a non-finite confidence")

    @property
    def confidence(self) -> float:
        return self.candidates[0][1]

    @property
    def correct(self) -> bool:
        return is_correct(self.candidates[0][0], self.truth)


@dataclass
class CurveRow:
    threshold: float
    undetermined_rate: float
    fdr: Optional[float]
    n_called: int


def fdr_vs_undetermined(records: Sequence[IdentificationRecord],
                        thresholds: Iterable[float]) -> list[CurveRow]:
    """Calls are records whose confidence is at least the threshold."""
    conf = np.array([r.confidence for r in records], dtype=float)
    ok = np.array([r.correct for r in records], dtype=bool)
    n = conf.size
    rows = []
    for t in sorted(set(float(x) for x in thresholds)):
        called = conf >= t
        nc = int(called.sum())
        fdr = float(np.sum(called & ~ok)) / nc if nc else None
        rows.append(CurveRow(t, (n - nc) / n if n else float("nan"), fdr, nc))
    return rows


@dataclass
class CalibrationRow:
    lo: float
    hi: float
    mean_assigned: Optional[float]
    empirical: Optional[float]
    count: int


def calibration_bins(pairs: Sequence[tuple[float, bool]], n_bins: int = 10) -> list[CalibrationRow]:
    """Equal-width bins over [0, 1]; probability 1.0 falls in the last bin."""
    if not pairs:
        raise ValueError("no (probability, correct) pairs")
    p = np.array([a for a, _ in pairs], dtype=float)
    c = np.array([b for _, b in pairs], dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    b = np.minimum((p * n_bins).astype(int), n_bins - 1)
    rows = []
    for i in range(n_bins):
        sel = b == i
        cnt = int(sel.sum())
        rows.append(CalibrationRow(
            i / n_bins, (i + 1) / n_bins,
            float(p[sel].mean()) if cnt else None,
            float(c[sel].mean()) if cnt else None,
            cnt))
    return rows


def confidence_gap(scores: Sequence[float], normalized: bool = False) -> Optional[float]:
    """Best minus second-best score; ``normalized`` divides by the best (DeltaCn).

    A single candidate gives ``inf``. The normalized gap is ``None`` when the
    best score is not positive.
    """
    s = sorted((float(x) for x in scores), reverse=True)
    if not s:
        raise ValueError("no scores")
    if len(s) == 1:
        return math.inf
    gap = s[0] - s[1]
    if normalized:
        return gap / s[0] if s[0] > 0 else None
    return gap
