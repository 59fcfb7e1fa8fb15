"""Cone fields, graph operators and approximate invariant foliations.

A subspace close to ``E^u(x)`` is stored as a *graph operator*: the
coefficients ``(a_s, a_f)`` of ``v_u + a_s v_s + a_f v_f`` where ``v_i`` are the
splitting vectors normalised to unit length in metric one.  The stable version
swaps the roles of ``s`` and ``u``.  In these coordinates the dynamics of an
invariant splitting acts diagonally, with the metric-one growth factors of the
three directions.

Approximate foliations are stored on a grid as graph coefficients over the
reference frame (``e_u + g_s e_s + g_f e_f``), which is smooth and globally
defined, mollified with a compactly supported bump kernel, and finally pushed
by the flow for a time ``N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import flow_core as fc
from .adapted_metric import (CHUNK, GHOST, _grid_points, _interp, _spline_coeffs,
                             energy_profile, gauss_legendre, window_gram)
from .errors import GraphBlowupError, ParameterError
from .report import VerificationReport

__all__ = [
    "ConeSpec", "cone_contains", "frame_window_grams", "corollary_margins",
    "calibrate_rho0", "verify_cone_corollary", "GraphOperator", "exact_graph_data",
    "graph_operator", "graph_action", "graph_norm_curve", "calibrate_contraction",
    "DistributionField", "raw_distribution", "smooth_distribution",
    "smoothing_exponent", "build_pushed_foliation", "flow_smoothness_ratios",
    "calibrate_push", "verify_flow_smoothness", "good_expansion_raw",
    "calibrate_varsigma", "verify_good_expansion", "calibrate_eta0",
]

_DOM = {"unstable": 1, "stable": 0}
_OTHERS = {"unstable": (0, 2), "stable": (1, 2)}
BOUNDARY_SHIFT = 1e-6
BLOWUP_COND = 1e12


def _check_kind(kind):
    if kind not in _DOM:
        raise ParameterError(f"kind must be 'unstable' or 'stable', got {kind!r}")


# -- cones -------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeSpec:
    """Stable cone ``|v^u| + |v^f| <= rho |v^s|`` (or its complement).

    ``splitting="exact"`` measures the blocks of the invariant splitting in
    metric one and adds the two norms; ``"smoothed"`` uses the approximate
    splitting, metric two, and the norm of ``v^u + v^f``.
    """

    rho: float
    splitting: str = "exact"
    complement: bool = False
    rho0: float | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError("cone aperture must be positive")
        if self.splitting not in ("exact", "smoothed"):
            raise ParameterError(f"unknown splitting {self.splitting!r}")
        if self.splitting == "smoothed" and self.rho0 is not None and self.rho >= self.rho0:
            raise ParameterError(f"rho={self.rho} must stay below rho0={self.rho0}")

    def with_rho(self, rho):
        return replace(self, rho=rho)


def cone_contains(spec: ConeSpec, frames, lengths, v):
    """Membership and signed margin of reference-frame vectors ``v`` (n, 3).

    ``frames`` (n, 3, 3) has columns ``(E^s, E^u, E^f)`` and ``lengths`` (n, 3)
    their norms in the metric of the cone.  The margin is
    ``rho |v^s| - |v^u + v^f|`` (negated for the complement cone).
    """
    v = np.atleast_2d(np.asarray(v, float))
    nv = np.linalg.norm(v, axis=1)
    if np.any(nv == 0.0):
        raise ParameterError("cone membership of the zero vector is undefined")
    c = np.linalg.solve(frames, v[..., None])[..., 0]
    b = np.abs(c) * lengths
    if spec.splitting == "exact":
        rest = b[:, 1] + b[:, 2]
    else:
        rest = np.hypot(b[:, 1], b[:, 2])
    margin = spec.rho * b[:, 0] - rest
    if spec.complement:
        margin = -margin
    return margin >= 0.0, margin


def frame_window_grams(model, params, P, frames, taus, q=None):
    """Metric-one Gram of ``DT_tau F`` at ``T_tau P`` for every ``tau``.

    One energy profile per point covers all windows ``[tau, tau + L]``.
    Returns an array (n, len(taus), k, k).
    """
    P = np.atleast_2d(np.asarray(P, float))
    taus = np.asarray(taus, float)
    L = params.L
    marks = np.unique(np.concatenate([taus, taus + L]))
    spacing = np.diff(marks).max() if len(marks) > 1 else L
    q = q or max(4, int(math.ceil(params.nodes_per_unit * min(1.0, spacing))))
    lo, hi = min(0.0, float(marks.min())), max(0.0, float(marks.max()))
    k = frames.shape[2]
    out = np.empty((len(P), len(taus), k, k))
    idx0 = np.searchsorted(marks, taus)
    idx1 = np.searchsorted(marks, taus + L)
    for i in range(0, len(P), CHUNK):
        sl = slice(i, i + CHUNK)
        e = energy_profile(model, P[sl], frames[sl], lo, hi, marks, q=q)
        out[sl] = (e[:, idx1] - e[:, idx0]) / L
    return out


def _directions(n_dir):
    th = 2.0 * np.pi * (np.arange(n_dir) + 0.5) / n_dir
    c, s = np.cos(th), np.sin(th)
    return np.stack([c, s], -1) / (np.abs(c) + np.abs(s))[:, None]


def corollary_margins(G, taus, t_grid, rho1, sigma, n_dir=64, shift=BOUNDARY_SHIFT):
    """Log-margins of the four cone-corollary inequalities.

    ``G`` is the output of :func:`frame_window_grams` for the exact splitting.
    Returns a dict of arrays (n, len(t_grid)) holding the worst margin over the
    boundary directions.
    """
    taus = list(np.asarray(taus, float))
    j0 = taus.index(0.0)
    n0 = np.sqrt(np.einsum("nii->ni", G[:, j0]))
    Gn = G / (n0[:, None, :, None] * n0[:, None, None, :])
    grow = np.sqrt(np.einsum("nmii->nmi", Gn))
    d = _directions(n_dir)

    def vecs(scale, with_axis):
        a = np.zeros((n_dir, 3))
        a[:, 0] = 1.0
        a[:, 1:] = scale * d
        if with_axis:
            pure = np.zeros((n_dir, 3))
            pure[:, 1:] = d
            a = np.concatenate([a, pure])
        return a

    inside = vecs(rho1 * (1.0 - shift), False)
    outside = vecs(rho1 * (1.0 + shift), True)
    wide = vecs((1.0 + shift) / rho1, True)

    def norms(a, j):
        return np.sqrt(np.einsum("ki,nij,kj->nk", a, Gn[:, j], a))

    def ratio(a, j):
        b = np.abs(a)[None] * grow[:, j][:, None, :]
        with np.errstate(divide="ignore"):
            return np.log(b[..., 1] + b[..., 2]) - np.log(b[..., 0])

    nin = np.sqrt(np.einsum("ki,nij,kj->nk", inside, Gn[:, j0], inside))
    nwide = np.sqrt(np.einsum("ki,nij,kj->nk", wide, Gn[:, j0], wide))
    out = {k: np.empty((G.shape[0], len(t_grid))) for k in
           ("backward-cone", "forward-complement", "backward-expansion", "forward-bound")}
    for m, t in enumerate(np.asarray(t_grid, float)):
        jm, jp = taus.index(-t if t else 0.0), taus.index(t)
        target = math.log(rho1) - 0.5 * sigma * t
        out["backward-cone"][:, m] = (target - ratio(inside, jm)).min(axis=1)
        r = ratio(outside, jp)
        out["forward-complement"][:, m] = np.where(np.isinf(r), np.inf, r - target).min(axis=1)
        out["backward-expansion"][:, m] = (np.log(norms(inside, jm)) - np.log(nin)
                                           - 0.75 * sigma * t).min(axis=1)
        out["forward-bound"][:, m] = (np.log(norms(wide, jp)) - np.log(nwide)
                                      + 0.5 * sigma * t).min(axis=1)
    return out


def _corollary_grams(model, params, points, t_grid, horizon):
    t_grid = np.asarray(t_grid, float)
    taus = np.unique(np.concatenate([t_grid, -t_grid, [0.0]]))
    frames, _ = fc.splitting_ref(model, points, horizon)
    return frame_window_grams(model, params, points, frames, taus), taus


def calibrate_rho0(G, taus, t_grid, sigma, n_dir=64, slack=1e-6, tol=1e-4):
    """Largest aperture in ``(0, 1)`` for which all four inequalities hold."""

    def ok(r):
        m = corollary_margins(G, taus, t_grid, r, sigma, n_dir)
        return all(np.all(v >= -slack) for v in m.values())

    lo, hi = 0.0, 1.0
    if ok(hi):
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def verify_cone_corollary(model, params, points, t_grid, rho1, sigma, n_dir=64,
                          slack=1e-6, horizon=30.0, grams=None, suite="cone_corollary"):
    """Check the four cone inequalities on boundary vectors of the cones.

    Vectors are built from the metric-one unit splitting vectors at
    ``1 -/+ 1e-6`` times the aperture; complement statements also use vectors
    with no stable part.
    """
    points = np.atleast_2d(np.asarray(points, float))
    G, taus = grams if grams is not None else _corollary_grams(model, params, points,
                                                               t_grid, horizon)
    margins = corollary_margins(G, taus, t_grid, rho1, sigma, n_dir)
    rep = VerificationReport(suite, {"model": model.name, "rho1": rho1, "sigma": sigma,
                                     "n_dir": n_dir, "slack": slack, **params.as_dict()})
    for lemma, m in margins.items():
        for j, t in enumerate(np.asarray(t_grid, float)):
            col = m[:, j]
            w = int(np.argmin(col))
            val = float(col[w]) if np.isfinite(col[w]) else 1e300
            rep.add(lemma, sample=w, margin=val, passed=bool(val >= -slack), t=float(t),
                    count=len(col) * n_dir)
    return rep


# -- graph operators -----------------------------------------------------------------

@dataclass
class GraphOperator:
    """Batch of graph operators over the metric-one unit splitting.

    ``coeffs[:, 0]`` multiplies the opposite hyperbolic direction and
    ``coeffs[:, 1]`` the flow direction.  ``gram`` is the metric-one Gram of
    the unit splitting vectors; ``norm`` is the exact operator norm.
    """

    points: np.ndarray
    kind: str
    coeffs: np.ndarray
    frames: np.ndarray
    lengths: np.ndarray
    gram: np.ndarray
    norm: np.ndarray = field(init=False)

    def __post_init__(self):
        _check_kind(self.kind)
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, float))
        o = _OTHERS[self.kind]
        Gs = self.gram[:, o][:, :, o]
        self.norm = np.sqrt(np.einsum("ni,nij,nj->n", self.coeffs, Gs, self.coeffs))

    def vectors(self):
        """Reference-frame vectors spanning the graphs."""
        unit = self.frames / self.lengths[:, None, :]
        o = _OTHERS[self.kind]
        v = unit[:, :, _DOM[self.kind]].copy()
        for j, col in enumerate(o):
            v += self.coeffs[:, j:j + 1] * unit[:, :, col]
        return v

    def with_coeffs(self, coeffs):
        return GraphOperator(self.points, self.kind, coeffs, self.frames, self.lengths, self.gram)


def exact_graph_data(model, params, P, horizon=30.0):
    """Exact splitting frames, their metric-one lengths and the unit-frame Gram."""
    P = np.atleast_2d(np.asarray(P, float))
    F, _ = fc.splitting_ref(model, P, horizon)
    G = window_gram(model, params, P, F)
    n = np.sqrt(np.einsum("nii->ni", G))
    return F, n, G / (n[:, :, None] * n[:, None, :])


def graph_operator(model, params, P, coeffs, kind="unstable", horizon=30.0, data=None):
    F, n, Gn = data if data is not None else exact_graph_data(model, params, P, horizon)
    coeffs = np.broadcast_to(np.asarray(coeffs, float), (len(F), 2))
    return GraphOperator(np.atleast_2d(np.asarray(P, float)), kind, coeffs, F, n, Gn)


def graph_coefficients(kind, frames, lengths, v):
    """Graph coefficients of the lines spanned by ``v`` (n, 3) over a unit frame."""
    _check_kind(kind)
    c = np.linalg.solve(frames, v[..., None])[..., 0] * lengths
    dom = c[:, _DOM[kind]]
    cond = np.linalg.norm(c, axis=1) / np.maximum(np.abs(dom), 1e-300)
    if np.any(cond > BLOWUP_COND):
        bad = int(np.argmax(cond))
        raise GraphBlowupError(f"graph transversality lost (condition {cond[bad]:.2e}) "
                               f"at sample {bad}")
    return c[:, list(_OTHERS[kind])] / dom[:, None]


def graph_action(model, params, U: GraphOperator, t):
    """``T*_t U``: the image subspaces as graphs over the pushed unit splitting.

    The target frame is the push of the stored frame, which is the splitting
    at ``T_t x`` whenever the stored frame is invariant.
    """
    t = float(t)
    if t == 0.0:
        return U.with_coeffs(U.coeffs.copy())
    Pt, J = fc.integrate(model, U.points, t, tangent=True)
    JF = J @ U.frames
    G = window_gram(model, params, U.points, U.frames, t0=t)
    m = np.sqrt(np.einsum("nii->ni", G))
    Jv = np.einsum("nij,nj->ni", J, U.vectors())
    a = graph_coefficients(U.kind, JF, m, Jv)
    return GraphOperator(Pt, U.kind, a, JF, m, G / (m[:, :, None] * m[:, None, :]))


def graph_norm_curve(G, taus, coeffs, kind):
    """``|T*_tau U|`` for all ``tau`` from precomputed frame window Grams.

    Uses the diagonal action of an invariant splitting:
    ``a_j -> a_j (g_j / g_dom)`` with ``g`` the metric-one growth factors.
    """
    taus = list(np.asarray(taus, float))
    j0 = taus.index(0.0)
    n0 = np.sqrt(np.einsum("nii->ni", G[:, j0]))
    m = np.sqrt(np.einsum("nmii->nmi", G))
    g = m / n0[:, None, :]
    dom, o = _DOM[kind], list(_OTHERS[kind])
    scale = g[:, :, o] / g[:, :, dom:dom + 1]
    a = coeffs[..., None, :] * scale[:, None] if coeffs.ndim == 3 else coeffs[:, None] * scale
    Gn = G / (m[..., :, None] * m[..., None, :])
    Gs = Gn[:, :, o][:, :, :, o]
    if coeffs.ndim == 3:
        return np.sqrt(np.einsum("nkmi,nmij,nkmj->nkm", a, Gs, a))
    return np.sqrt(np.einsum("nmi,nmij,nmj->nm", a, Gs, a))


def calibrate_contraction(model, params, points, rho, n_random=100, t_max=6.0, dt=0.05,
                          kind="unstable", seed=0, horizon=30.0):
    """Smallest grid time ``N_*`` after which ``|T*_t U| <= |U|/2`` for random ``U``.

    Returns ``(N_star, worst_ratio_at_N_star)``.
    """
    points = np.atleast_2d(np.asarray(points, float))
    taus = np.round(np.arange(0.0, t_max + 0.5 * dt, dt), 12)
    sgn = 1.0 if kind == "unstable" else -1.0
    frames, _ = fc.splitting_ref(model, points, horizon)
    G = frame_window_grams(model, params, points, frames, sgn * taus)
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((len(points), n_random, 2))
    # random operators with |U| <= rho at the base point
    n0 = graph_norm_curve(G[:, :1], [0.0], a, kind)[:, :, 0]
    a *= (rho * rng.random((len(points), n_random)) / n0)[..., None]
    curve = graph_norm_curve(G, sgn * taus, a, kind)
    ratio = (curve / curve[:, :, :1]).max(axis=(0, 1))
    ok = ratio <= 0.5
    bad = np.nonzero(~ok)[0]
    first = bad.max() + 1 if len(bad) else 0
    if first >= len(taus):
        raise ParameterError(f"no contraction by 1/2 up to t={t_max}")
    return float(taus[first]), float(ratio[first])


# -- distribution fields --------------------------------------------------------------

def _deck_factors(kind, k):
    """Lifted/chart ratio of graph coefficients after ``k`` gluings."""
    d = fc.DECK_REF
    dom, o = _DOM[kind], list(_OTHERS[kind])
    kk = np.asarray(k, float)[..., None]
    return d[o] ** (-kk) / d[dom] ** (-kk)


def seed_profile(P, amplitude):
    """Smooth test perturbation in unit-graph coordinates, ``|a_1| + |a_2| <= amplitude``.

    The ``sin^6`` profile vanishes to order five at the gluing.
    """
    P = np.atleast_2d(P)
    ph = np.sin(np.pi * P[:, 2]) ** 6
    a1 = 0.6 * np.cos(2 * np.pi * P[:, 0] + 0.4) * ph
    a2 = 0.4 * np.sin(2 * np.pi * P[:, 1] - 0.7) * ph
    return amplitude * np.stack([a1, a2], -1)


@dataclass
class DistributionField:
    """Line field stored as reference-frame graph coefficients on a lifted grid.

    ``coeffs`` has shape ``(n1, n2, n3 + 2*GHOST, 2)``; the line at a lifted
    grid point is spanned by ``e_dom + g_1 e_o1 + g_2 e_o2`` in the lifted
    reference frame.  With ``push_time > 0`` the field represents the image
    of the stored one under the flow for that time (forward for unstable
    fields, backward for stable ones).
    """

    kind: str
    model: fc.FlowModel
    shape: tuple
    coeffs: np.ndarray
    provenance: dict = field(default_factory=dict)
    push_time: float = 0.0
    order: int = 3

    def __post_init__(self):
        _check_kind(self.kind)
        self._spl = _spline_coeffs(self.coeffs)

    def grid_points(self):
        return _grid_points(self.shape)

    def coefficients(self, P_lifted):
        """Interpolated lifted coefficients at arbitrary lifted points."""
        P_lifted = np.atleast_2d(np.asarray(P_lifted, float))
        k = np.floor(P_lifted[:, 2]).astype(int)
        Pc = fc.normalize_points(P_lifted)
        return _interp(self._spl, self.shape, Pc) * _deck_factors(self.kind, k)

    def raw_vectors(self, P):
        """Unit reference vectors of the stored (unpushed) lines at chart points."""
        g = self.coefficients(P)
        v = np.zeros((len(g), 3))
        v[:, _DOM[self.kind]] = 1.0
        v[:, list(_OTHERS[self.kind])] = g
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def vectors(self, P):
        """Unit reference vectors spanning the (pushed) lines at chart points."""
        P = np.atleast_2d(np.asarray(P, float))
        N = self.push_time
        if N == 0.0:
            return self.raw_vectors(P)
        sgn = 1.0 if self.kind == "unstable" else -1.0
        Z, _ = fc.integrate(self.model, P, -sgn * N)
        v = self.raw_vectors(Z)
        _, w = fc.integrate(self.model, Z, sgn * N, tangent=True, J0=v[:, :, None])
        w = w[:, :, 0]
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    def lipschitz(self):
        """Finite-difference Lipschitz constant of the interior coefficients."""
        n1, n2, n3 = self.shape
        g = self.coeffs
        out = 0.0
        for ax, h in ((0, 1.0 / n1), (1, 1.0 / n2)):
            out = max(out, float(np.abs(np.roll(g, -1, axis=ax) - g).max() / h))
        ds = np.abs(np.diff(g[:, :, GHOST - 1:GHOST + n3 + 1], axis=2)).max() * n3
        return max(out, float(ds))


def _grid_data(model, params, shape, horizon):
    Pl = _grid_points(shape).reshape(-1, 3)
    Pc = fc.normalize_points(Pl)
    k = np.floor(Pl[:, 2]).astype(int)
    F, _ = fc.splitting_ref(model, Pc, horizon)
    G = window_gram(model, params, Pc, F)
    return Pl, Pc, k, F, G


def raw_distribution(model, params, kind="unstable", grid=(8, 8, 8), horizon=20.0,
                     seed_amplitude=0.0):
    """Invariant distribution sampled on a grid (the input of the smoothing).

    ``seed_amplitude`` adds :func:`seed_profile` in unit-graph coordinates; on
    the linear models the invariant distribution is constant and the seed
    stands in for the error of a generic approximate splitting.
    """
    _check_kind(kind)
    Pl, Pc, k, F, G = _grid_data(model, params, grid, horizon)
    n = np.sqrt(np.einsum("nii->ni", G))
    unit = F / n[:, None, :]
    dom, o = _DOM[kind], list(_OTHERS[kind])
    v = unit[:, :, dom].copy()
    if seed_amplitude:
        a = seed_profile(Pc, seed_amplitude)
        v += a[:, :1] * unit[:, :, o[0]] + a[:, 1:] * unit[:, :, o[1]]
    g = v[:, o] / v[:, dom:dom + 1] * _deck_factors(kind, k)
    shp = tuple(_grid_points(grid).shape[:3])
    fld = DistributionField(kind, model, tuple(grid), g.reshape(shp + (2,)),
                            provenance={"stage": "raw", "horizon": horizon,
                                        "seed_amplitude": seed_amplitude})
    fld._frame_data = (Pc, k, F, n, G / (n[:, :, None] * n[:, None, :]))
    return fld


def _unit_graph_from_ref(kind, g_lifted, k, F, n, Gn):
    """Unit-graph coefficients (over the exact splitting) and their operator norms."""
    v = np.zeros((len(g_lifted), 3))
    v[:, _DOM[kind]] = 1.0
    v[:, list(_OTHERS[kind])] = g_lifted / _deck_factors(kind, k)
    a = graph_coefficients(kind, F, n, v)
    o = list(_OTHERS[kind])
    Gs = Gn[:, o][:, :, o]
    return a, np.sqrt(np.einsum("ni,nij,nj->n", a, Gs, a))


def smooth_distribution(raw: DistributionField, rho_m, rho1=None, q=6):
    """Mollify the graph coefficients with a tensor bump kernel of width ``rho_m``.

    The convolution runs over lifted coordinates (periodic in ``x``, through
    the gluing in ``s``) with ``q`` Gauss-Legendre nodes per axis.  The
    provenance records ``sup |U_hat|`` in metric one, the reference-metric
    coefficient error and the Lipschitz constant.
    """
    cap = rho1 / 2.0 if rho1 is not None else 0.5
    if not 0.0 < rho_m < cap:
        raise ParameterError(f"mollifier width {rho_m} outside (0, {cap})")
    u, w = gauss_legendre(q)
    u = 2.0 * u - 1.0
    w = 2.0 * w * np.exp(-1.0 / (1.0 - u * u))
    w /= w.sum()
    offs = np.stack(np.meshgrid(u, u, u, indexing="ij"), -1).reshape(-1, 3) * rho_m
    wts = np.einsum("i,j,k->ijk", w, w, w).reshape(-1)
    Pl = _grid_points(raw.shape).reshape(-1, 3)
    acc = np.zeros((len(Pl), 2))
    for off, wt in zip(offs, wts):
        acc += wt * raw.coefficients(Pl + off)
    shp = tuple(_grid_points(raw.shape).shape[:3])
    out = DistributionField(raw.kind, raw.model, raw.shape, acc.reshape(shp + (2,)),
                            provenance={"stage": "smoothed", "rho": rho_m, "q": q,
                                        **{k: v for k, v in raw.provenance.items()
                                           if k != "stage"}})
    data = getattr(raw, "_frame_data", None)
    if data is not None:
        Pc, k, F, n, Gn = data
        interior = (Pl[:, 2] >= 0.0) & (Pl[:, 2] < 1.0)
        _, nrm = _unit_graph_from_ref(raw.kind, acc[interior], k[interior], F[interior],
                                      n[interior], Gn[interior])
        ref_err = np.abs(acc - raw.coeffs.reshape(-1, 2))[interior].max()
        out.provenance.update(sup_norm=float(nrm.max()), ref_error=float(ref_err),
                              within_rho=bool(nrm.max() <= rho_m))
        out._frame_data = data
    out.provenance["lipschitz"] = out.lipschitz()
    return out


def smoothing_exponent(raw, rhos=(0.1, 0.05, 0.025), q=6):
    """Fit ``|U_hat|_C1 ~ C rho^-varpi``; returns ``(varpi, slope, norms)``."""
    norms = np.array([smooth_distribution(raw, r, q=q).lipschitz() for r in rhos])
    slope = np.polyfit(np.log(rhos), np.log(np.maximum(norms, 1e-300)), 1)[0]
    return max(0.0, -float(slope)), float(slope), norms


def build_pushed_foliation(smoothed: DistributionField, N, N_eps=None):
    """``DT_N E_hat(T_-N x)`` (unstable) or ``DT_-N E_hat(T_N x)`` (stable)."""
    rho_m = smoothed.provenance.get("rho")
    if N < 0:
        raise ParameterError("push time must be non-negative")
    if N_eps is not None and rho_m is not None and N < N_eps * math.log(1.0 / rho_m) - 1e-9:
        raise ParameterError(f"N={N} below N_eps ln(1/rho)={N_eps * math.log(1.0 / rho_m):.3f}")
    out = DistributionField(smoothed.kind, smoothed.model, smoothed.shape, smoothed.coeffs,
                            provenance={**smoothed.provenance, "stage": "pushed", "N": N,
                                        "N_eps": N_eps}, push_time=float(N))
    if hasattr(smoothed, "_frame_data"):
        out._frame_data = smoothed._frame_data
    return out


# -- flow smoothness -----------------------------------------------------------------

def flow_smoothness_ratios(params, foliation: DistributionField, points, t_grid,
                           horizon=30.0):
    """``|T*_t U(x) - U(T_t x)| / t`` (metric one) for every sample and ``t > 0``."""
    model = foliation.model
    points = np.atleast_2d(np.asarray(points, float))
    t_grid = np.asarray([t for t in t_grid if t > 0], float)
    n, m = len(points), len(t_grid)
    vx = foliation.vectors(points)
    rows = np.repeat(points, m, axis=0)
    tt = np.tile(t_grid, n)
    Y, W = fc.integrate(model, rows, tt, tangent=True,
                        J0=np.repeat(vx, m, axis=0)[:, :, None])
    w1 = W[:, :, 0]
    w2 = foliation.vectors(Y)
    F, nn, Gn = exact_graph_data(model, params, Y, horizon)
    a1 = graph_coefficients(foliation.kind, F, nn, w1)
    a2 = graph_coefficients(foliation.kind, F, nn, w2)
    o = list(_OTHERS[foliation.kind])
    d = a1 - a2
    diff = np.sqrt(np.einsum("ni,nij,nj->n", d, Gn[:, o][:, :, o], d))
    return (diff / tt).reshape(n, m), t_grid


def calibrate_push(params, smoothed, points, t_grid, eps, n_star, horizon=30.0):
    """Push time from the contraction bound ``R_0 2^(-N/N_*) <= eps``.

    Returns ``(N, N_eps, R0)`` with ``R0`` the unpushed sup ratio and
    ``N_eps = N / ln(1/rho)``.
    """
    r0, _ = flow_smoothness_ratios(params, smoothed, points, t_grid, horizon)
    R0 = float(r0.max())
    N = max(1, int(math.ceil(n_star * math.log2(max(R0 / eps, 1.0)))))
    rho_m = smoothed.provenance["rho"]
    return N, N / math.log(1.0 / rho_m), R0


def verify_flow_smoothness(params, foliation, points, t_grid, eps, horizon=30.0,
                           ratios=None, suite="flow_smoothness"):
    """Records of ``sup_x |T*_t U(x) - U(T_t x)| / t`` against ``eps`` per ``t``."""
    r, tg = ratios if ratios is not None else flow_smoothness_ratios(
        params, foliation, points, t_grid, horizon)
    rep = VerificationReport(suite, {"model": foliation.model.name, "eps": eps,
                                     **{k: v for k, v in foliation.provenance.items()
                                        if isinstance(v, (int, float, str, bool))}})
    for j, t in enumerate(tg):
        w = int(np.argmax(r[:, j]))
        rep.add("flow-smoothness", sample=w, margin=float(eps - r[w, j]),
                passed=bool(r[w, j] <= eps), t=float(t), ratio=float(r[w, j]))
    rep.note("sup_ratio", float(r.max()))
    return rep


# -- good expansion ------------------------------------------------------------------

def _metric_two_coords(metric2, P, v):
    """Unit-frame coordinates of vectors ``v`` (n, 3, k) in metric two at ``P``."""
    F, n = metric2.frame(P)
    return np.linalg.solve(F, v) * n[:, :, None]


def good_expansion_raw(model, metric2, points, t_grid, rho, n_dir=64, shift=BOUNDARY_SHIFT):
    """Log growth rates and cone ratios behind the good-expansion inequalities.

    ``model`` is the (possibly perturbed) flow; ``metric2`` is fixed.  Returns
    a dict with arrays of shape (n, m[, n_dir]):

    ``"back"``   ``log(|DT_-t v|_2 / |v|_2)`` on the boundary of ``C*_rho``,
    ``"fwd_u"``  ``log(|DT_t v|_2 / |v|_2)`` for ``v`` in the unstable line,
    ``"ratio"``  ``|w^u + w^f|_2 / |w^s|_2`` for ``w = DT_-t v``.
    """
    points = np.atleast_2d(np.asarray(points, float))
    t_grid = np.asarray(t_grid, float)
    n, m = len(points), len(t_grid)
    F, nx = metric2.frame(points)
    d = _directions(n_dir)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    a = np.zeros((3, n_dir))
    a[0] = 1.0
    a[1:] = rho * (1.0 - shift) * d.T
    V = np.einsum("nij,nj,jk->nik", F, 1.0 / nx, a)
    norm0 = np.linalg.norm(a, axis=0)
    U = F[:, :, 1:2] / nx[:, None, 1:2]
    rows = np.repeat(points, m, axis=0)
    tt = np.tile(t_grid, n)
    out = {}
    Yb, Jb = fc.integrate(model, rows, -tt, tangent=True)
    c = _metric_two_coords(metric2, Yb, Jb @ np.repeat(V, m, axis=0))
    out["back"] = (np.log(np.linalg.norm(c, axis=1)) - np.log(norm0)).reshape(n, m, n_dir)
    out["ratio"] = (np.hypot(c[:, 1], c[:, 2]) / np.abs(c[:, 0])).reshape(n, m, n_dir)
    Yf, Jf = fc.integrate(model, rows, tt, tangent=True)
    cu = _metric_two_coords(metric2, Yf, Jf @ np.repeat(U, m, axis=0))
    out["fwd_u"] = np.log(np.linalg.norm(cu[:, :, 0], axis=1)).reshape(n, m)
    return out


def _good_expansion_margins(raw, t_grid, rho, varsigma):
    t = np.asarray(t_grid, float)[None, :]
    target = np.log(np.maximum(rho / 2.0, np.exp(-varsigma * t / 4.0) * rho))
    return {
        "backward-expansion": (raw["back"] - varsigma * t[..., None]).min(axis=2),
        "unstable-expansion": raw["fwd_u"] - varsigma * t,
        "cone-contraction": (target[..., None] - np.log(raw["ratio"])).min(axis=2),
    }


def calibrate_varsigma(raw, t_grid, rho, slack=1e-6):
    """Largest ``varsigma`` for which all three inequalities hold on ``raw``."""
    t = np.asarray(t_grid, float)
    pos = t > 0
    tp = t[pos][None, :]
    rates = [
        ((raw["back"][:, pos].min(axis=2) + slack) / tp).min(),
        ((raw["fwd_u"][:, pos] + slack) / tp).min(),
    ]
    lr = np.log(raw["ratio"][:, pos].max(axis=2) / rho)
    need = lr > math.log(0.5) + slack
    if np.any(need):
        rates.append(((-4.0 * (lr - slack)) / np.broadcast_to(tp, lr.shape))[need].min())
    return float(min(rates))


def verify_good_expansion(model, metric2, perturbation, etas, points, t_grid, rho,
                          varsigma, n_dir=64, slack=1e-6, raws=None,
                          suite="good_expansion"):
    """Records of the three good-expansion inequalities for each ``eta``.

    ``perturbation`` is a :class:`~anosovlab.flow_core.PerturbationSpec` whose
    amplitude is replaced by each ``eta``; metric two stays fixed.
    """
    rep = VerificationReport(suite, {"model": model.name, "rho": rho, "varsigma": varsigma,
                                     "etas": [float(e) for e in etas], "n_dir": n_dir,
                                     "slack": slack})
    raws = raws or {}
    for eta in etas:
        eta = float(eta)
        if eta not in raws:
            mdl = fc.perturbed_model(model, perturbation.with_eta(eta)) if eta else model
            raws[eta] = good_expansion_raw(mdl, metric2, points, t_grid, rho, n_dir)
        margins = _good_expansion_margins(raws[eta], t_grid, rho, varsigma)
        for lemma, mg in margins.items():
            for j, t in enumerate(np.asarray(t_grid, float)):
                w = int(np.argmin(mg[:, j]))
                rep.add(lemma, sample=w, margin=float(mg[w, j]),
                        passed=bool(mg[w, j] >= -slack), t=float(t), eta=eta)
    return rep


def calibrate_eta0(model, metric2, perturbation, points, t_grid, rho, varsigma,
                   n_dir=16, slack=1e-6, eta_hi=1e-2, decades=14, refine=8):
    """``eta_c`` = largest amplitude (both signs) keeping all margins; returns ``eta_c / 2``.

    A decade scan brackets ``eta_c`` and a bisection in ``log eta`` refines it.
    """
    def ok(eta):
        for e in (eta, -eta):
            mdl = fc.perturbed_model(model, perturbation.with_eta(e))
            raw = good_expansion_raw(mdl, metric2, points, t_grid, rho, n_dir)
            mg = _good_expansion_margins(raw, t_grid, rho, varsigma)
            if any(np.any(v < -slack) for v in mg.values()):
                return False
        return True

    hi = eta_hi
    lo = None
    for _ in range(decades):
        if ok(hi):
            lo = hi
            break
        hi /= 10.0
    if lo is None:
        raise ParameterError("no admissible perturbation amplitude found")
    if lo == eta_hi:
        return eta_hi / 2.0
    a, b = math.log(lo), math.log(lo * 10.0)
    for _ in range(refine):
        mid = 0.5 * (a + b)
        if ok(math.exp(mid)):
            a = mid
        else:
            b = mid
    return math.exp(a) / 2.0
