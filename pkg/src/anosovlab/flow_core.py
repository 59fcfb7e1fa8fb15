"""Suspension flows over the cat map and their tangent dynamics.

The phase space is the mapping torus of ``A = [[2, 1], [1, 1]]``: points are
``(x1, x2, s)`` in the unit cube, and ``(x, 1)`` is glued to ``(A x mod 1, 0)``.
The unperturbed vector field is ``d/ds``; a *deformed* model adds a small
horizontal component ``kappa * phi(s) * g(x)`` whose profile ``phi`` vanishes to
high order at the gluing, so the field stays smooth on the quotient.

Tangent vectors are carried internally in the *reference frame*
``R = [e_s | e_u | e_f]`` (stable and unstable eigenvectors of ``A`` plus the
roof direction).  In that frame one gluing acts as ``diag(1/lam, lam, 1)``,
which avoids the cancellation that powers of ``A`` would cause.

Integration uses a fixed-step explicit Runge-Kutta method of order 8 (the
Dormand-Prince 8(5,3) tableau shipped with scipy, used without its error
control).  The number of steps depends only on ``|t|`` so the flow map is a
smooth function of the initial point.  Stages that leave the unit interval in
``s`` evaluate the field in *lifted* coordinates, i.e. pulled back through the
gluing, and the gluing is applied once per completed step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from . import taylor as T
from .errors import IntegrationError, ParameterError, SplittingError

__all__ = [
    "LAMBDA_PLUS", "LOG_LAMBDA", "CAT", "REF_FRAME", "DECK_REF",
    "TrigTerm", "FlowModel", "PerturbationSpec", "SplittingFrame",
    "make_model", "default_perturbation", "perturbed_model", "cr_norm_bound",
    "vector_field", "vector_field_ref", "reference_gram", "normalize_points",
    "to_chart", "integrate", "flow_map", "tangent_map", "splitting_ref",
    "invariant_splitting", "orbit_blocks", "pull_back",
]

LAMBDA_PLUS = (3.0 + math.sqrt(5.0)) / 2.0
LOG_LAMBDA = math.log(LAMBDA_PLUS)
CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
_CAT_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])


def _reference_frame():
    mu = LAMBDA_PLUS - 2.0
    nrm = math.hypot(1.0, mu)
    eu = np.array([1.0, mu]) / nrm
    es = np.array([-mu, 1.0]) / nrm
    R = np.zeros((3, 3))
    R[:2, 0] = es
    R[:2, 1] = eu
    R[2, 2] = 1.0
    return R


REF_FRAME = _reference_frame()
DECK_REF = np.array([1.0 / LAMBDA_PLUS, LAMBDA_PLUS, 1.0])

# 12-stage order-8 tableau
_A = np.asarray(_dop.A[:_dop.N_STAGES, :_dop.N_STAGES])
_B = np.asarray(_dop.B)
_C = np.asarray(_dop.C[:_dop.N_STAGES])

T_MAX = 1000.0


def _cat_power(k):
    M = np.eye(2)
    base = CAT if k >= 0 else _CAT_INV
    for _ in range(abs(int(k))):
        M = base @ M
    return M


_POW_CACHE = {k: _cat_power(k) for k in range(-8, 9)}


def _cat_powers(k):
    """Stack of ``A^k`` for an integer array ``k``."""
    k = np.asarray(k, dtype=int)
    out = np.empty(k.shape + (2, 2))
    for kv in np.unique(k):
        M = _POW_CACHE.get(int(kv))
        if M is None:
            M = _cat_power(kv)
        out[k == kv] = M
    return out


@dataclass(frozen=True)
class TrigTerm:
    """One Fourier mode ``coef * sin(2 pi (m1 x1 + m2 x2) + phase)`` in component ``comp``."""

    comp: int
    coef: float
    m1: int
    m2: int
    phase: float = 0.0

    def scaled(self, factor):
        return replace(self, coef=self.coef * factor)


def _phi(s):
    return T.sin(np.pi * s) ** 6


def _dphi(s):
    sn = T.sin(np.pi * s)
    return (6.0 * np.pi) * (sn ** 5) * T.cos(np.pi * s)


@dataclass(frozen=True)
class FlowModel:
    """Anosov flow on the cat-map mapping torus.

    Parameters
    ----------
    name : str
        Identifier used in reports.
    metric : {"canonical", "wobbled"}
        Reference Riemannian metric.  Both are diagonal in the reference frame;
        the wobbled one is multiplied by ``1 + wobble sin(2 pi s) cos(2 pi x1)``.
    terms : tuple of TrigTerm
        Horizontal part of the vector field, multiplied by ``phi(s)``.
    step : float
        Maximal integrator step.
    """

    name: str = "canonical"
    metric: str = "canonical"
    terms: tuple = ()
    wobble: float = 0.3
    step: float = 1.0 / 32.0
    r: int = 2
    eta: float = 0.0
    eta_cap: float | None = None
    d_s: int = 1
    d_u: int = 1

    @property
    def dimension(self) -> int:
        return self.d_s + self.d_u + 1

    @property
    def is_linear(self) -> bool:
        return all(t.coef == 0.0 for t in self.terms)

    @property
    def exact_log_rate(self):
        return LOG_LAMBDA if self.is_linear else None

    @property
    def gluing_matrix(self):
        return CAT.copy()

    @cached_property
    def c1(self) -> float:
        """Constant with ``C1^-1/2 <= |V| <= C1^1/2`` on a sample grid."""
        g = np.linspace(0.0, 1.0, 17)[:-1] + 1.0 / 34.0
        P = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
        v = vector_field_ref(self, P)
        n2 = np.sum(reference_gram(self, P) * v * v, axis=1)
        if self.metric == "wobbled":
            # the conformal factor reaches 1 -/+ wobble on the grid's closure
            n2 = np.concatenate([n2, [1.0 - self.wobble, 1.0 + self.wobble]])
        return float(max(n2.max(), 1.0 / n2.min(), 1.0))

    # -- vector field -----------------------------------------------------
    def _horizontal(self, x1, x2, s, jac=False):
        v = [0.0, 0.0]
        dv = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        for term in self.terms:
            if term.coef == 0.0:
                continue
            arg = (2.0 * np.pi * term.m1) * x1 + (2.0 * np.pi * term.m2) * x2 + term.phase
            sn = T.sin(arg)
            v[term.comp] = sn * term.coef + v[term.comp]
            if jac:
                cs = T.cos(arg)
                dv[term.comp][0] = cs * (2.0 * np.pi * term.m1 * term.coef) + dv[term.comp][0]
                dv[term.comp][1] = cs * (2.0 * np.pi * term.m2 * term.coef) + dv[term.comp][1]
                dv[term.comp][2] = sn * term.coef + dv[term.comp][2]
        ph = _phi(s)
        v = [ph * c if not _is_zero(c) else c for c in v]
        if not jac:
            return v, None
        dph = _dphi(s)
        for i in range(2):
            for j in range(2):
                if not _is_zero(dv[i][j]):
                    dv[i][j] = ph * dv[i][j]
            if not _is_zero(dv[i][2]):
                dv[i][2] = dph * dv[i][2]
        return v, dv


def _is_zero(c):
    return isinstance(c, float) and c == 0.0


def make_model(name="canonical", *, kappa=0.05, wobble=0.3, step=1.0 / 32.0):
    """Build one of the shipped models.

    ``canonical``: linear suspension, canonical metric.
    ``wobbled``: linear suspension, conformally perturbed metric.
    ``deformed``: wobbled metric with the nonlinear field of amplitude ``kappa``.
    """
    if name == "canonical":
        return FlowModel(name="canonical", metric="canonical", step=step)
    if name == "wobbled":
        return FlowModel(name="wobbled", metric="wobbled", wobble=wobble, step=step)
    if name == "deformed":
        terms = (
            TrigTerm(0, kappa, 0, 1, 0.3),
            TrigTerm(0, 0.5 * kappa, 1, 1, 0.0),
            TrigTerm(1, 0.8 * kappa, 1, 0, 1.1),
            TrigTerm(1, 0.4 * kappa, 1, -1, 2.0),
        )
        return FlowModel(name="deformed", metric="wobbled", wobble=wobble,
                         terms=terms, step=step)
    raise ParameterError(f"unknown model {name!r}")


# -- perturbations ----------------------------------------------------------

def _phi_derivative_sups(order):
    s = np.linspace(0.0, 1.0, 4001)
    d = T.derivatives(_phi(T.Jet.variable(s, order)))
    return np.abs(d).max(axis=1)


def cr_norm_bound(terms, order):
    """Upper bound for the C^order norm of ``phi(s) * sum(terms)``.

    Every mixed partial of a product of ``phi(s)`` and a Fourier mode is a
    product of one-variable derivatives, so the sup of each is bounded by the
    product of the sups.
    """
    phs = _phi_derivative_sups(order)
    best = 0.0
    for comp in (0, 1):
        sub = [t for t in terms if t.comp == comp]
        for a in range(order + 1):
            for b1 in range(order + 1 - a):
                for b2 in range(order + 1 - a - b1):
                    tot = 0.0
                    for t in sub:
                        tot += (abs(t.coef) * phs[a] * (2 * np.pi * abs(t.m1)) ** b1
                                * (2 * np.pi * abs(t.m2)) ** b2)
                    best = max(best, tot)
    return best


@dataclass(frozen=True)
class PerturbationSpec:
    terms: tuple
    eta: float = 0.0
    eta_cap: float = 1.0
    norm_bound: float = field(default=float("nan"))

    def __post_init__(self):
        if abs(self.eta) > self.eta_cap * (1 + 1e-12):
            raise ParameterError(f"|eta|={abs(self.eta)} exceeds eta_0={self.eta_cap}")

    def with_eta(self, eta, eta_cap=None):
        return replace(self, eta=float(eta),
                       eta_cap=self.eta_cap if eta_cap is None else float(eta_cap))


def default_perturbation(r=2, eta=0.0, eta_cap=1.0):
    """Perturbing field normalised so its C^(r+1) bound equals one."""
    raw = (
        TrigTerm(0, 1.0, 1, 0, 0.5 * np.pi),
        TrigTerm(0, 0.6, 1, 1, 0.4),
        TrigTerm(1, 1.0, 0, 1, 0.5),
    )
    nb = cr_norm_bound(raw, r + 1)
    terms = tuple(t.scaled(1.0 / nb) for t in raw)
    return PerturbationSpec(terms=terms, eta=eta, eta_cap=eta_cap,
                            norm_bound=cr_norm_bound(terms, r + 1))


def perturbed_model(model: FlowModel, spec: PerturbationSpec) -> FlowModel:
    """Model with vector field ``X + eta X1`` and unchanged chart and metric."""
    if abs(spec.eta) > spec.eta_cap * (1 + 1e-12):
        raise ParameterError(f"|eta|={abs(spec.eta)} exceeds eta_0={spec.eta_cap}")
    extra = tuple(t.scaled(spec.eta) for t in spec.terms)
    return replace(model, terms=model.terms + extra, eta=float(spec.eta),
                   eta_cap=float(spec.eta_cap),
                   name=f"{model.name}[eta={spec.eta:.6g}]")


# -- geometry helpers -------------------------------------------------------

def _as_points(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _mod1(x):
    y = x - np.floor(x)
    y[y >= 1.0] -= 1.0
    return y


def normalize_points(P):
    """Periodic normalisation into the unit cube, applying the gluing in ``s``."""
    P = np.array(P, dtype=float, copy=True)
    k = np.floor(P[..., 2]).astype(int)
    M = _cat_powers(k)
    P[..., :2] = _mod1(np.einsum("...ij,...j->...i", M, P[..., :2]))
    P[..., 2] = P[..., 2] - k
    P[..., 2][P[..., 2] >= 1.0] -= 1.0
    return P


def to_chart(P, V=None):
    """Map lifted points (and lifted reference-frame vectors) to the chart.

    ``V`` has shape ``(n, 3)`` or ``(n, 3, m)``; rows index the reference frame.
    """
    P = np.asarray(P, dtype=float)
    k = np.floor(P[..., 2]).astype(int)
    Pc = normalize_points(P)
    if V is None:
        return Pc
    scale = DECK_REF[None, :] ** k[:, None]
    V = np.asarray(V, dtype=float)
    if V.ndim == P.ndim:
        return Pc, V * scale
    return Pc, V * scale[..., None]


def reference_gram(model: FlowModel, P):
    """Diagonal of the reference Gram matrix (reference frame) at chart points."""
    P = np.asarray(P, dtype=float)
    s = P[..., 2]
    g = np.stack([LAMBDA_PLUS ** (-2.0 * s), LAMBDA_PLUS ** (2.0 * s), np.ones_like(s)], -1)
    if model.metric == "wobbled":
        f = 1.0 + model.wobble * np.sin(2 * np.pi * s) * np.cos(2 * np.pi * P[..., 0])
        g = g * f[..., None]
    elif model.metric != "canonical":
        raise ParameterError(f"unknown metric {model.metric!r}")
    return g


def vector_field(model: FlowModel, x):
    """Generating vector field in chart coordinates."""
    P, single = _as_points(x)
    v, _ = model._horizontal(P[:, 0], P[:, 1], P[:, 2])
    out = np.zeros_like(P)
    for i in range(2):
        out[:, i] = v[i]
    out[:, 2] = 1.0
    return out[0] if single else out


def vector_field_ref(model: FlowModel, P):
    return vector_field(model, np.atleast_2d(P)) @ REF_FRAME


# -- lifted field -------------------------------------------------------------

def _term_tables(model):
    """Coefficient tables of the trig terms: value weights and gradient weights."""
    tab = _TABLES.get(model.terms)
    if tab is None:
        terms = [t for t in model.terms if t.coef != 0.0]
        m = np.array([[t.m1, t.m2] for t in terms], dtype=float).reshape(-1, 2)
        ph = np.array([t.phase for t in terms])
        C = np.zeros((len(terms), 2))
        for i, t in enumerate(terms):
            C[i, t.comp] = t.coef
        W = 2.0 * np.pi * C[:, :, None] * m[:, None, :]
        tab = _TABLES[model.terms] = (2.0 * np.pi * m, ph, C, W)
    return tab


_TABLES = {}
# vec(R^T D R) = vec(D) @ _CONJ
_CONJ = np.einsum("ia,jb->ijab", REF_FRAME, REF_FRAME).reshape(9, 9)


def _lifted_eval_array(model, P, jac):
    S = P[:, 2]
    k = np.floor(S).astype(int)
    has_k = bool(np.any(k))
    if has_k:
        X = np.einsum("nij,nj->ni", _cat_powers(k), P[:, :2])
        sc = S - k
    else:
        X, sc = P[:, :2], S
    X = X - np.floor(X)
    m2p, phase, C, W = _term_tables(model)
    arg = X @ m2p.T + phase
    sn = np.sin(arg)
    base = sn @ C
    sp = np.sin(np.pi * sc)
    ph = sp ** 6
    v = base * ph[:, None]
    if has_k:
        v = np.einsum("nij,nj->ni", _cat_powers(-k), v)
    F = np.empty_like(P)
    F[:, :2] = v
    F[:, 2] = 1.0
    if not jac:
        return F, None
    D = np.zeros((len(P), 3, 3))
    D[:, :2, :2] = np.einsum("nt,tij->nij", np.cos(arg), W) * ph[:, None, None]
    D[:, :2, 2] = base * ((6.0 * np.pi) * sp ** 5 * np.cos(np.pi * sc))[:, None]
    M = (D.reshape(-1, 9) @ _CONJ).reshape(-1, 3, 3)
    if has_k:
        d = DECK_REF[None, :] ** k[:, None]
        M = M * (d[:, None, :] / d[:, :, None])
    return F, M


def _lifted_eval(model, P, jac):
    """Field (reference-frame Jacobian) at lifted points; arrays or jets."""
    if not isinstance(P, T.Jet):
        return _lifted_eval_array(model, P, jac)
    X1, X2, S = P[:, 0], P[:, 1], P[:, 2]
    s0 = T.const(S)
    k = np.floor(s0).astype(int)
    has_k = bool(np.any(k != 0))
    if has_k:
        M = _cat_powers(k)
        y1 = X1 * M[:, 0, 0] + X2 * M[:, 0, 1]
        y2 = X1 * M[:, 1, 0] + X2 * M[:, 1, 1]
        sc = S - k.astype(float)
    else:
        y1, y2, sc = X1, X2, S
    x1 = y1 - np.floor(T.const(y1))
    x2 = y2 - np.floor(T.const(y2))
    v, dv = model._horizontal(x1, x2, sc, jac=jac)
    if has_k:
        Mi = _cat_powers(-k)
        v = [_lin2(Mi[:, i, 0], v[0], Mi[:, i, 1], v[1]) for i in range(2)]
    ones = np.ones(len(s0))
    zero = np.zeros(len(s0))
    F = T.stack([_fill(v[0], zero), _fill(v[1], zero), ones], axis=-1)
    if not jac:
        return F, None
    R = REF_FRAME
    # reference-frame Jacobian of the chart field, then conjugate by the deck power
    rows = []
    for a in range(3):
        row = []
        for b in range(3):
            acc = 0.0
            for i in range(2):
                if R[i, a] == 0.0:
                    continue
                for j in range(3):
                    if R[j, b] == 0.0 or _is_zero(dv[i][j]):
                        continue
                    acc = dv[i][j] * (R[i, a] * R[j, b]) + acc
            row.append(acc)
        rows.append(row)
    if has_k:
        d = DECK_REF[None, :] ** k[:, None]
        for a in range(3):
            for b in range(3):
                if not _is_zero(rows[a][b]):
                    rows[a][b] = rows[a][b] * (d[:, b] / d[:, a])
    Mj = T.stack([T.stack([_fill(rows[a][b], zero) for b in range(3)], axis=-1)
                  for a in range(3)], axis=-2)
    return F, Mj


def _lin2(a, u, b, w):
    if _is_zero(u) and _is_zero(w):
        return 0.0
    if _is_zero(u):
        return w * b
    if _is_zero(w):
        return u * a
    return u * a + w * b


def _fill(c, zero):
    return zero if _is_zero(c) else c


# -- integration ------------------------------------------------------------

def _deck(P, J):
    """Apply the gluing to points whose ``s`` left [0, 1) (arrays only)."""
    k = np.floor(P[:, 2]).astype(int)
    if not np.any(k):
        return P, J
    idx = np.nonzero(k)[0]
    M = _cat_powers(k[idx])
    P = P.copy()
    P[idx, :2] = _mod1(np.einsum("nij,nj->ni", M, P[idx, :2]))
    P[idx, 2] -= k[idx]
    if J is not None:
        J = J.copy()
        J[idx] *= (DECK_REF[None, :] ** k[idx, None])[:, :, None]
    return P, J


def _rk_step(model, P, J, h):
    hp = h[:, None]
    hj = h[:, None, None]
    KP, KJ = [], []
    for i in range(_dop.N_STAGES):
        Pi, Ji = P, J
        for j in range(i):
            a = _A[i, j]
            if a != 0.0:
                Pi = Pi + KP[j] * (hp * a)
                if J is not None:
                    Ji = Ji + KJ[j] * (hj * a)
        F, M = _lifted_eval(model, Pi, J is not None)
        KP.append(F)
        if J is not None:
            KJ.append(M @ Ji)
    for i in range(_dop.N_STAGES):
        P = P + KP[i] * (hp * _B[i])
        if J is not None:
            J = J + KJ[i] * (hj * _B[i])
    return P, J


def _take(x, idx):
    return x[idx] if not isinstance(x, T.Jet) else x[idx]


def _put(x, idx, val):
    if isinstance(x, T.Jet):
        c = x.c.copy()
        c[:, idx] = val.c
        return T.Jet(c)
    x = x.copy()
    x[idx] = val
    return x


def integrate(model: FlowModel, P, t, *, tangent=False, wrap=True, J0=None):
    """Integrate points (and optionally reference-frame tangent maps).

    Parameters
    ----------
    P : array (n, 3) or Jet
        Initial points; chart points when ``wrap`` is true, lifted otherwise.
    t : float or array (n,)
        Signed times.  Each point takes ``ceil(|t|/step)`` equal steps.
    wrap : bool
        Apply the gluing after each step and return chart points.  With
        ``wrap=False`` the result stays in lifted coordinates of the initial
        chart, which is what smooth families of points need.
    J0 : array (n, 3, 3), optional
        Initial tangent map (identity by default).

    Returns
    -------
    P_t, J_t
        ``J_t`` maps reference-frame vectors at ``P`` to reference-frame
        vectors at ``P_t`` (lifted frame when ``wrap=False``); ``None`` unless
        ``tangent``.
    """
    is_jet = isinstance(P, T.Jet)
    if is_jet and wrap:
        raise ParameterError("jets are only supported with wrap=False")
    n = P.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,)).copy()
    if np.any(np.abs(t) > T_MAX):
        raise ParameterError(f"|t| exceeds T_max={T_MAX}")
    if not is_jet:
        P = np.array(P, dtype=float, copy=True)
    J = None
    if tangent:
        if J0 is None:
            J = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            if is_jet:
                J = T.Jet.constant(J, P.degree)
        else:
            J = J0 if isinstance(J0, T.Jet) else np.array(J0, dtype=float, copy=True)
    if model.is_linear and not is_jet:
        return _linear_advance(P, J, t, wrap)
    m = np.ceil(np.abs(t) / model.step - 1e-12).astype(int)
    h = np.where(m > 0, t / np.maximum(m, 1), 0.0)
    nsteps = int(m.max()) if n else 0
    for k in range(nsteps):
        active = m > k
        if active.all():
            P, J = _rk_step(model, P, J, h)
            if wrap:
                P, J = _deck(P, J)
        else:
            idx = np.nonzero(active)[0]
            Pa, Ja = _rk_step(model, _take(P, idx), None if J is None else _take(J, idx), h[idx])
            if wrap:
                Pa, Ja = _deck(Pa, Ja)
            P = _put(P, idx, Pa)
            if J is not None:
                J = _put(J, idx, Ja)
    vals = T.const(P)
    if not np.all(np.isfinite(vals)):
        bad = ~np.all(np.isfinite(vals), axis=1)
        raise IntegrationError("non-finite state during integration",
                               time_reached=float(np.min(np.abs(t[bad]))))
    return P, J


def _linear_advance(P, J, t, wrap):
    P[:, 2] = P[:, 2] + t
    if not wrap:
        return P, J
    k = np.floor(P[:, 2]).astype(int)
    left = k.copy()
    while np.any(left):
        up = left > 0
        dn = left < 0
        if np.any(up):
            P[up, :2] = _mod1(P[up, :2] @ CAT.T)
            if J is not None:
                J[up] *= DECK_REF[None, :, None]
            left[up] -= 1
        if np.any(dn):
            P[dn, :2] = _mod1(P[dn, :2] @ _CAT_INV.T)
            if J is not None:
                J[dn] /= DECK_REF[None, :, None]
            left[dn] += 1
    P[:, 2] = P[:, 2] - k
    P[:, 2][P[:, 2] >= 1.0] -= 1.0
    P[:, 2][P[:, 2] < 0.0] = 0.0
    return P, J


def flow_map(model: FlowModel, x, t):
    """``T_t x`` in normalised chart coordinates."""
    P, single = _as_points(x)
    Pt, _ = integrate(model, P, t)
    return Pt[0] if single else Pt


def tangent_map(model: FlowModel, x, t, frame="chart"):
    """``D_x T_t`` as a 3x3 matrix (chart frame by default, or ``"reference"``)."""
    P, single = _as_points(x)
    _, J = integrate(model, P, t, tangent=True)
    if frame == "chart":
        J = REF_FRAME @ J @ REF_FRAME.T
    elif frame != "reference":
        raise ParameterError(f"unknown frame {frame!r}")
    return J[0] if single else J


# -- hyperbolic splitting -----------------------------------------------------

@dataclass(frozen=True)
class SplittingFrame:
    point: np.ndarray
    es: np.ndarray
    eu: np.ndarray
    ef: np.ndarray
    exact: bool
    residual: float

    def matrix(self):
        return np.column_stack([self.es, self.eu, self.ef])


def orbit_blocks(model, P, horizon, direction):
    """Unit-time tangent blocks along the orbit of ``P`` in direction ``+1``/``-1``."""
    lengths = [1.0] * int(math.floor(horizon + 1e-12))
    rem = horizon - len(lengths)
    if rem > 1e-12:
        lengths.append(rem)
    blocks = []
    Q = P
    for ln in lengths:
        Q, Jb = integrate(model, Q, direction * ln, tangent=True)
        blocks.append(Jb)
    return Q, blocks


def pull_back(blocks, v, skip_last=0):
    """Transport ``v`` from the far end of the blocks back to the start.

    Solves with each block in turn (well conditioned, unlike the product) and
    renormalises after every solve.  ``skip_last`` drops the outermost blocks.
    """
    use = blocks[: len(blocks) - skip_last] if skip_last else blocks
    v = np.array(v, dtype=float, copy=True)
    for Jb in reversed(use):
        v = np.linalg.solve(Jb, v[..., None])[..., 0]
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v


def _orient(v, axis):
    sgn = np.where(v[:, axis] < 0, -1.0, 1.0)
    return v * sgn[:, None]


def splitting_ref(model: FlowModel, P, horizon=30.0):
    """Splitting at chart points ``P`` as reference-frame columns ``(E^s, E^u, E^f)``.

    Returns ``(frames, residual)`` with ``frames`` of shape (n, 3, 3) and the
    per-point residual (angle change over the last unit of horizon).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = len(P)
    ef = vector_field_ref(model, P)
    if model.is_linear:
        frames = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return frames, np.zeros(n)
    _, back = orbit_blocks(model, P, horizon, -1.0)
    _, fwd = orbit_blocks(model, P, horizon, +1.0)
    e_u = np.broadcast_to([0.0, 1.0, 0.0], (n, 3))
    e_s = np.broadcast_to([1.0, 0.0, 0.0], (n, 3))
    eu = _orient(pull_back(back, e_u), 1)
    es = _orient(pull_back(fwd, e_s), 0)
    eu1 = _orient(pull_back(back[:-1], e_u), 1) if len(back) > 1 else e_u
    es1 = _orient(pull_back(fwd[:-1], e_s), 0) if len(fwd) > 1 else e_s
    res = np.maximum(_angle(eu, eu1), _angle(es, es1))
    frames = np.stack([es, eu, ef], axis=-1)
    return frames, res


def _angle(a, b):
    c = np.abs(np.sum(a * b, -1)) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.arccos(np.clip(c, -1.0, 1.0))


def invariant_splitting(model: FlowModel, x, horizon=30.0, *, horizon_min=5.0, threshold=1e-6):
    """Hyperbolic splitting at ``x`` as chart-frame vectors.

    Exact eigen-directions for linear models; otherwise pushed images of a
    generic frame along the orbit with ``residual`` the angle change over the
    last unit of horizon.
    """
    P, _ = _as_points(x)
    if not model.is_linear and horizon < horizon_min:
        raise ParameterError(f"horizon {horizon} below horizon_min={horizon_min}")
    frames, res = splitting_ref(model, P[:1], horizon)
    if res[0] > threshold:
        raise SplittingError(f"splitting residual {res[0]:.3e} above {threshold:.1e}")
    Fc = REF_FRAME @ frames[0]
    Fc[:, :2] /= np.linalg.norm(Fc[:, :2], axis=0)
    return SplittingFrame(point=P[0].copy(), es=Fc[:, 0], eu=Fc[:, 1], ef=Fc[:, 2],
                          exact=model.is_linear, residual=float(res[0]))
