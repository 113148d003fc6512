"""Peak clustering, percentile normalization and fourth-root stabilization.

The same three stages are applied to observed and theoretical spectra.
"""

from __future__ import annotations

import numpy as np

from .spectra_io import Spectrum

DEFAULT_TOL = 2.0


class DegenerateSpectrumError(ValueError):
    pass


def cluster_peaks(s: Spectrum, tol: float = DEFAULT_TOL) -> Spectrum:
    """Pool chains of peaks whose consecutive m/z gaps are within ``tol``.

    Each cluster becomes one peak at the m/z of its most intense member
    (lowest m/z on ties) carrying the summed intensity of the cluster.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if len(s) == 0:
        return s
    mz, inten = s.mz, s.intensity
    starts = np.concatenate([[0], np.flatnonzero(np.diff(mz) > tol) + 1])
    ends = np.concatenate([starts[1:], [mz.size]])
    out_mz = np.empty(starts.size)
    out_int = np.empty(starts.size)
    for c, (a, b) in enumerate(zip(starts, ends)):
        apex = a + int(np.argmax(inten[a:b]))
        out_mz[c] = mz[apex]
        out_int[c] = inten[a:b].sum()
    return s.with_peaks(out_mz, out_int)


def percentile_divisor(intensity: np.ndarray, q: int = 90) -> float:
    """Nearest-rank ``q``-th percentile: the ceil(q*n/100)-th smallest value."""
    n = intensity.size
    rank = (q * n + 99) // 100
    return float(np.sort(intensity)[max(rank, 1) - 1])


def normalize(s: Spectrum) -> Spectrum:
    if len(s) == 0:
        raise DegenerateSpectrumError(f"spectrum {s.id!r} has no peaks")
    if not np.any(s.intensity > 0):
        raise DegenerateSpectrumError(f"spectrum {s.id!r} has only zero intensities")
    d = percentile_divisor(s.intensity)
    if d <= 0:
        raise DegenerateSpectrumError(f"spectrum {s.id!r}: 90th percentile intensity is zero")
    return s.with_peaks(s.mz, s.intensity / d)


def stabilize(s: Spectrum) -> Spectrum:
    return s.with_peaks(s.mz, s.intensity ** 0.25)


def preprocess(s: Spectrum, tol: float = DEFAULT_TOL) -> Spectrum:
    return stabilize(normalize(cluster_peaks(s, tol)))
