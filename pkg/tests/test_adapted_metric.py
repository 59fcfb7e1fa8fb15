import numpy as np
import pytest

from anosovlab import adapted_metric as am
from anosovlab import flow_core as fc
from anosovlab.errors import ParameterError


def test_params_satisfy_invariants(canonical):
    _, p = canonical
    assert p.check() == []
    assert 0.5 < p.a < 1
    assert p.beta * (1 - p.c_star ** -2 * np.exp(-2 * p.lam * p.L)) >= 0.5


def test_bad_rates_rejected():
    with pytest.raises(ParameterError):
        am.choose_averaging_params(fc.make_model("canonical"), -1.0, 0.5)


def test_canonical_lemma_with_exact_rate(canonical, rng):
    m, p = canonical
    P = rng.random((20, 3))
    tg = np.round(np.arange(0, 2.01, 0.25), 10)
    rep = am.verify_metric_lemma(m, p, P, tg, sigma=fc.LOG_LAMBDA)
    assert rep.passed, rep.failures()[:3]
    bad = am.verify_metric_lemma(m, p, P, tg, sigma=1.1 * fc.LOG_LAMBDA)
    assert not bad.passed


def test_calibrated_sigma_is_tight(canonical, rng):
    m, p = canonical
    P = rng.random((10, 3))
    tg = np.round(np.arange(0, 2.01, 0.25), 10)
    lr = am.metric_lemma_log_ratios(m, p, P, tg)
    sig = am.calibrate_sigma(lr, tg)
    assert abs(sig - fc.LOG_LAMBDA) < 1e-6
