import numpy as np

from anosovlab import cone_fields as cf
from anosovlab import flow_core as fc


def test_corollary_passes_inside_and_fails_outside(canonical, rng):
    m, p = canonical
    P = rng.random((10, 3))
    tg = np.round(np.arange(0, 2.01, 0.5), 10)
    grams = cf._corollary_grams(m, p, P, tg, 30.0)
    r0 = cf.calibrate_rho0(*grams, tg, fc.LOG_LAMBDA, n_dir=16)
    ok = cf.verify_cone_corollary(m, p, P, tg, 0.5 * r0, fc.LOG_LAMBDA, 16, grams=grams)
    assert ok.passed
    bad = cf.verify_cone_corollary(m, p, P, tg, min(2 * r0, 0.999), fc.LOG_LAMBDA, 16,
                                   grams=grams)
    assert not bad.passed or r0 >= 0.999


def test_smoothing_stays_close_and_push_improves(canonical, rng):
    m, p = canonical
    raw = cf.raw_distribution(m, p, "unstable", (6, 6, 6), seed_amplitude=0.05)
    sm = cf.smooth_distribution(raw, 0.05)
    assert sm.provenance["within_rho"]
    P = rng.random((8, 3))
    tg = [0.25, 0.5, 1.0]
    r0, _ = cf.flow_smoothness_ratios(p, sm, P, tg)
    r2, _ = cf.flow_smoothness_ratios(p, cf.build_pushed_foliation(sm, 2.0), P, tg)
    assert r2.max() < 0.5 * r0.max()


def test_good_expansion_exact_metric(canonical, canonical_metric2, rng):
    m, _ = canonical
    P = rng.random((4, 3))
    tg = [0.0, 0.5, 1.0]
    raw = cf.good_expansion_raw(m, canonical_metric2, P, tg, 0.25, 8)
    vs = cf.calibrate_varsigma(raw, tg, 0.25)
    assert vs > 0
    rep = cf.verify_good_expansion(m, canonical_metric2, fc.default_perturbation(), [0.0],
                                   P, tg, 0.25, 0.9 * vs, 8, raws={0.0: raw})
    assert rep.passed
