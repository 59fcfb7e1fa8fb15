import math

import numpy as np
import pytest

from anosovlab import resolvent_probe as rp
from anosovlab.errors import ParameterError


def test_scalar_resolvent():
    s = rp.SemigroupSample.scalar(0.5)
    assert abs(rp.resolvent(1.0, s)[0, 0] - 1 / 1.5) < 1e-13


def test_scalar_head_closed_form():
    s = rp.SemigroupSample.scalar(1.0)
    for m in range(1, 5):
        sp = rp.split_head_tail(1.0, m, 1.0, s)
        assert abs(sp.head[0, 0].real - rp.check_scalar_head(1.0, 1.0, 1.0, m)) < 1e-12


def test_split_identity_random(rng):
    g = rp.SemigroupSample.random(5, rng)
    for m in (1, 3, 6):
        sp = rp.split_head_tail(0.8 + 0.5j, m, 1.0, g)
        assert sp.meta["reconstruction_error"] < 1e-9
        assert sp.meta["factorised_error"] < 1e-9


def test_head_bound_and_ratio(rng):
    g = rp.SemigroupSample.random(4, rng)
    rep = rp.verify_head_bound(g, 1.0, 0.7, range(1, 13))
    assert rep.passed
    assert any(r["lemma"] == "ratio-test" for r in rep.records)


def test_unbounded_generator_rejected():
    with pytest.raises(ParameterError):
        rp.SemigroupSample(np.array([[0.1]]))
    with pytest.raises(ParameterError):
        rp.resolvent(-1.0, rp.SemigroupSample.scalar(1.0))


def test_truncation_horizon_meets_tolerance():
    H = rp.truncation_horizon(1.0, 4, 1.0, 1e-12)
    assert H ** 3 * math.exp(-H) / 6 <= 1.01e-12


def test_decay_rates(rng):
    d = rp.SemigroupSample(np.diag([0.0, -1.0]))
    rep = rp.covering_radius_probe(d, 1.0, range(1, 11))
    assert rep.passed
    g8 = rp.SemigroupSample.random(6, rng, real_spectrum=True)
    assert rp.covering_radius_probe(g8, 1.0, range(5, 21)).passed
