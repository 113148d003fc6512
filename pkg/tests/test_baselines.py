import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psmlik.baselines import similarity_index, xcorr
from psmlik.spectra_io import Spectrum


def S(mz, y, kind="observed"):
    return Spectrum("s", 1, mz, y, kind)


def test_similarity_example():
    val = similarity_index(S([100.0], [4.0]), S([100.0, 200.0], [1.0, 1.0], "theoretical"))
    assert val == pytest.approx(1 / math.sqrt(2), rel=1e-15)


peak_sets = st.lists(st.tuples(st.floats(50, 2000), st.floats(0.01, 1e4)), min_size=1, max_size=40,
                unique_by=lambda p: p[0])


@given(peak_sets)
def test_similarity_self_is_exactly_one(peaks):
    mz, y = zip(*peaks)
    s = S(list(mz), list(y))
    assert similarity_index(s, s) == 1.0


@given(peak_sets, peak_sets)
def test_similarity_bounded_and_symmetric(a, b):
    A, B = S(*map(list, zip(*a))), S(*map(list, zip(*b)))
    v = similarity_index(A, B)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert v == pytest.approx(similarity_index(B, A), rel=1e-12)


def test_xcorr_single_peak():
    s = S([500.3], [1.0])
    assert abs(xcorr(s, s) - (1 - 1 / 151)) <= 1e-12


def test_xcorr_shift_direction():
    T = S([500.0, 520.0, 547.0], [1.0, 2.0, 1.0], "theoretical")
    O = S([510.0, 530.0, 557.0], [1.0, 2.0, 1.0])
    # R_i = sum o[x] t[x+i]: shifting O up by 10 bins moves the self-match peak to lag -10;
    # the self-match off-lag terms sum to 2+2+2+2+1+1
    assert xcorr(O, T) < 0
    assert xcorr(S(O.mz - 10.0, O.intensity), T) == pytest.approx(6 - 16 / 151, rel=1e-12)


def test_xcorr_against_direct_sum():
    rng = np.random.default_rng(0)
    O = S(np.sort(rng.choice(np.arange(100.0, 400.0), 30, replace=False)), rng.uniform(0, 2, 30))
    T = S(np.sort(rng.choice(np.arange(100.0, 400.0), 20, replace=False)), rng.uniform(0, 2, 20),
          "theoretical")
    o = dict(zip(np.floor(O.mz).astype(int).tolist(), O.intensity.tolist()))
    t = dict(zip(np.floor(T.mz).astype(int).tolist(), T.intensity.tolist()))
    R = [sum(v * t.get(x + i, 0.0) for x, v in o.items()) for i in range(-75, 76)]
    assert xcorr(O, T) == pytest.approx(R[75] - sum(R) / 151, rel=1e-12, abs=1e-12)
