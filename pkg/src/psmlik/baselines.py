"""Comparison scores: the binned similarity index and an Xcorr reimplementation.

The Xcorr here only mirrors the lag-averaged cross-correlation formula on
whatever spectra it is given. It does not reproduce SEQUEST's own spectrum
processing.
"""

from __future__ import annotations

import math

import numpy as np

from .spectra_io import Spectrum

XCORR_LAGS = 75


def _binned(s: Spectrum, binwidth: float) -> dict[int, float]:
    idx = np.floor(s.mz / binwidth).astype(np.int64)
    out: dict[int, float] = {}
    for b, y in zip(idx.tolist(), s.intensity.tolist()):
        out[b] = out.get(b, 0.0) + y
    return out


def similarity_index(O: Spectrum, T: Spectrum, binwidth: float = 2.0) -> float:
    """sum_i sqrt(yo_i * yt_i) / (sqrt(sum yo) * sqrt(sum yt)) over m/z bins."""
    if not binwidth > 0:
        raise ValueError("binwidth must be positive")
    bo, bt = _binned(O, binwidth), _binned(T, binwidth)
    so = math.fsum(bo[b] for b in sorted(bo))
    st = math.fsum(bt[b] for b in sorted(bt))
    if so <= 0 or st <= 0:
        raise ValueError("similarity index undefined for an all-zero spectrum")
    num = math.fsum(math.sqrt(bo[b] * bt[b]) for b in sorted(bo.keys() & bt.keys()))
    # sqrt of the product keeps identical spectra at exactly 1
    return num / math.sqrt(so * st)


def xcorr(O: Spectrum, T: Spectrum, binwidth: float = 1.0, lags: int = XCORR_LAGS) -> float:
    """R_0 minus the mean of R_i over i = -lags..lags.

    ``R_i = sum_x o[x] * t[x + i]``, so shifting the observed spectrum up by
    ``d`` bins moves the correlation peak to lag ``-d``.
    """
    if not binwidth > 0:
        raise ValueError("binwidth must be positive")
    if len(O) == 0 or len(T) == 0:
        return 0.0
    io = np.floor(O.mz / binwidth).astype(np.int64)
    it = np.floor(T.mz / binwidth).astype(np.int64)
    base = min(io.min(), it.min()) - lags
    size = int(max(io.max(), it.max()) - base + lags + 1)
    o = np.zeros(size)
    t = np.zeros(size)
    np.add.at(o, io - base, O.intensity)
    np.add.at(t, it - base, T.intensity)
    R = np.array([np.dot(o[max(0, -i):size - max(0, i)], t[max(0, i):size - max(0, -i)])
                  for i in range(-lags, lags + 1)])
    return float(R[lags] - R.sum() / (2 * lags + 1))
