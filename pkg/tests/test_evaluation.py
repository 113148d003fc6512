import numpy as np
import pytest

from psmlik.evaluation import (
    IdentificationRecord,
    calibration_bins,
    confidence_gap,
    fdr_vs_undetermined,
    is_correct,
)


def test_isobaric_residues():
    assert is_correct("IVTDITK", "LVTDLTK")
    assert is_correct("PEPQ", "PEPK")
    assert not is_correct("PEPA", "PEPG")


def test_fdr_hand_count():
    recs = [IdentificationRecord(f"s{i}", [("PEP", 0.5 + 0.05 * i)], "PEP") for i in range(8)]
    recs += [IdentificationRecord(f"w{i}", [("BAD", 0.1 + 0.1 * i)], "PEP") for i in range(2)]
    rows = fdr_vs_undetermined(recs, [0.0, 0.3, 1.1])
    assert rows[0].fdr == pytest.approx(0.2) and rows[0].undetermined_rate == 0.0
    assert rows[1].fdr == 0.0 and rows[1].undetermined_rate == pytest.approx(0.2)
    assert rows[2].fdr is None and rows[2].n_called == 0


def test_calibration_on_calibrated_data():
    rng = np.random.default_rng(4)
    p = rng.random(20000)
    pairs = list(zip(p.tolist(), (rng.random(p.size) < p).tolist()))
    rows = calibration_bins(pairs)
    for r in rows:
        if r.count >= 200:
            assert abs(r.empirical - r.mean_assigned) < 0.05
    assert sum(r.count for r in rows) == p.size


def test_calibration_edge_probability():
    rows = calibration_bins([(1.0, True), (0.0, False)])
    assert rows[-1].count == 1 and rows[0].count == 1
    with pytest.raises(ValueError):
        calibration_bins([(1.5, True)])


def test_confidence_gap():
    assert confidence_gap([3.0, 1.0, 2.0]) == 1.0
    assert confidence_gap([4.0, 3.0], normalized=True) == 0.25
    assert confidence_gap([-1.0, -2.0], normalized=True) is None
    assert confidence_gap([1.0]) == float("inf")
