import math

import numpy as np
import pytest

from anosovlab import flow_core as fc
from anosovlab import leaves as lv
from anosovlab.errors import CoveringError, ParameterError


def test_adapted_frame_isometric_on_stable_direction(canonical_metric2, rng):
    fr = lv.build_adapted_frame(canonical_metric2, rng.random((3, 3)))
    assert np.abs(fr.isometry_defect()).max() < 1e-10


def test_leaf_text_round_trip(canonical_metric2, rng):
    lf = lv.random_leaves(canonical_metric2, rng.random((1, 3)), rng, M0=2.0)[0]
    back = lv.AdmissibleLeaf.from_text(lf.to_text(canonical_metric2))
    np.testing.assert_array_equal(back.coeffs, lf.coeffs)
    np.testing.assert_array_equal(back.center, lf.center)


def test_leaf_validation():
    with pytest.raises(ParameterError):
        lv.AdmissibleLeaf(np.zeros(3), np.ones((3, 3)))
    with pytest.raises(ParameterError):
        lv.AdmissibleLeaf(np.zeros(3), [[0, 0, 0], [1, 0, 0]], B=2.0)


def test_recenter_keeps_curve(canonical_metric2, rng):
    lf = lv.random_leaves(canonical_metric2, rng.random((1, 3)), rng, M0=3.0)[0]
    u0 = 0.3 * lf.delta
    sh = lv.recenter(lf, u0)
    u = np.linspace(-lf.delta, lf.delta, 5)
    np.testing.assert_allclose(sh.points(u - u0), lf.points(u), atol=1e-15)


def test_linear_jets_scale_exactly(canonical, canonical_metric2, rng):
    m, _ = canonical
    L = lv.random_leaves(canonical_metric2, rng.random((3, 3)), rng, M0=2.0)
    for lf in L:
        lf.coeffs[1] += 0.1 * fc.REF_FRAME[:, 1]
    t = 0.75
    res = lv.evolve_leaf(m, canonical_metric2, L, t, frame="splitting")
    for k in range(res.jets.shape[1]):
        want = res.jets_initial[:, k, 0] * fc.LAMBDA_PLUS ** (-(k + 2) * t)
        np.testing.assert_allclose(res.jets[:, k, 0], want, rtol=1e-9)


def test_series_matches_composition(canonical, canonical_metric2, rng):
    m, _ = canonical
    L = lv.random_leaves(canonical_metric2, rng.random((2, 3)), rng, M0=2.0)
    res = lv.evolve_leaf(m, canonical_metric2, L, 0.25)
    ser = lv.transport_jets(res.blocks, res.slope_initial, res.xi_map)
    np.testing.assert_allclose(ser, res.jets, atol=1e-12)


def test_jet_margins_and_calibration():
    jets = np.zeros((1, 4, 2))
    jets[0, 1:, 0] = [3.0, 9.0, 27.0]
    assert lv.calibrate_M([jets], M_start=0.25) == 4.0
    assert np.all(lv.jet_margins(jets, 3.0) >= -1e-12)


def test_interval_net_oracle():
    assert lv.interval_net_size(1.0, 0.3) == 4
    assert lv.interval_net_size(0.0, 0.3) == 1


def test_cover_on_straight_arc():
    delta, t, Lam = 1e-3, 1.0, 1.2
    B = lv.choose_B(0.8, Lam, [t])
    u = np.linspace(-B * delta, B * delta, 2001)
    s = math.exp(Lam * t) * u
    cov = lv.vitali_cover(s, u, t, Lam, delta, B)
    lv.partition_of_unity(cov, n=10001)
    rep = lv.verify_cover(cov)
    assert rep.passed, rep.failures()
    assert np.abs(cov.partition.sum(1) - 1).max() < 1e-12


def test_cover_rejects_bad_time():
    with pytest.raises(ParameterError):
        lv.vitali_cover(np.zeros(3), np.zeros(3), 0.0, 1.0, 1e-3, 4)


def test_cover_detects_gap():
    u = np.linspace(-0.05, 0.05, 101)
    with pytest.raises(CoveringError):
        lv.vitali_cover(1e3 * u, u, 1.0, 1e-6, 0.01, 3)
