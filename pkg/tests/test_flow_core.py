import numpy as np
import pytest

from anosovlab import flow_core as fc
from anosovlab.errors import ParameterError


def test_canonical_flow_is_translation(rng):
    m = fc.make_model("canonical")
    P = rng.random((5, 3)) * [1, 1, 0.5]
    Q = fc.flow_map(m, P, 0.3)
    np.testing.assert_allclose(Q[:, 2], P[:, 2] + 0.3, atol=1e-14)
    np.testing.assert_allclose(Q[:, :2], P[:, :2], atol=1e-14)


def test_gluing_applies_cat_map():
    m = fc.make_model("canonical")
    x = np.array([0.2, 0.3, 0.9])
    y = fc.flow_map(m, x, 0.2)
    np.testing.assert_allclose(y[:2], (fc.CAT @ x[:2]) % 1.0, atol=1e-13)
    np.testing.assert_allclose(y[2], 0.1, atol=1e-13)


def test_canonical_tangent_map_eigenvalues():
    m = fc.make_model("canonical")
    J = fc.tangent_map(m, np.array([0.1, 0.2, 0.05]), 3.0, frame="reference")
    np.testing.assert_allclose(np.diag(J), [fc.LAMBDA_PLUS ** -3, fc.LAMBDA_PLUS ** 3, 1.0],
                               rtol=1e-12)


def test_deformed_tangent_matches_finite_differences(rng):
    m = fc.make_model("deformed")
    x = rng.random(3) * [1, 1, 0.2]
    J = fc.tangent_map(m, x, 0.7)
    h = 1e-6
    fd = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        P = np.array([x + e, x - e])
        Q, _ = fc.integrate(m, P, 0.7, wrap=False)
        fd[:, j] = (Q[0] - Q[1]) / (2 * h)
    np.testing.assert_allclose(J, fd, atol=1e-6)


def test_group_property(rng):
    m = fc.make_model("deformed")
    P = rng.random((4, 3))
    a = fc.flow_map(m, fc.flow_map(m, P, 0.4), 0.5)
    b = fc.flow_map(m, P, 0.9)
    d = np.abs(a - b)
    d = np.minimum(d, 1 - d)
    assert d.max() < 1e-9


def test_perturbation_amplitude_capped():
    spec = fc.default_perturbation(r=2, eta_cap=1e-3)
    with pytest.raises(ParameterError):
        spec.with_eta(1e-2)
    m = fc.perturbed_model(fc.make_model("canonical"), spec.with_eta(5e-4))
    assert not m.is_linear


def test_splitting_on_linear_model_is_exact():
    s = fc.invariant_splitting(fc.make_model("canonical"), [0.3, 0.4, 0.5])
    assert s.exact and s.residual == 0.0
    np.testing.assert_allclose(fc.CAT @ s.eu[:2], fc.LAMBDA_PLUS * s.eu[:2], atol=1e-12)


def test_unknown_model():
    with pytest.raises(ParameterError):
        fc.make_model("horseshoe")
