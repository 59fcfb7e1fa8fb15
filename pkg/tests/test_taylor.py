import math

import numpy as np
import pytest

from anosovlab import taylor as T


def test_sin_cos_series():
    x = T.Jet.variable(0.3, 6)
    d = T.derivatives(T.sin(x))
    want = [math.sin(0.3), math.cos(0.3), -math.sin(0.3), -math.cos(0.3)] * 2
    np.testing.assert_allclose(d, want[:7], rtol=1e-13)


def test_reciprocal_and_product():
    x = T.Jet.variable(2.0, 5)
    y = (x * x + 1.0).reciprocal() * (x * x + 1.0)
    np.testing.assert_allclose(y.c, [1, 0, 0, 0, 0, 0], atol=1e-14)


def test_compose_revert_identity():
    g = T.Jet(np.array([0.0, 1.5, -0.3, 0.2, 0.05]))
    h = T.revert(g)
    gh = T.compose(g, h)
    np.testing.assert_allclose(gh.c, [0, 1, 0, 0, 0], atol=1e-14)


def test_compose_rejects_constant_term():
    with pytest.raises(ValueError):
        T.compose(T.Jet([1.0, 1.0]), T.Jet([0.1, 1.0]))


def test_derivative_round_trip():
    d = np.array([1.0, -2.0, 6.0, 24.0])
    np.testing.assert_allclose(T.derivatives(T.from_derivatives(d)), d)
