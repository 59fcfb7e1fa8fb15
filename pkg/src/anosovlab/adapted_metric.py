"""Time-averaged (adapted) metrics and the splitting-orthogonal metric.

Metric one averages the reference metric along a window of the orbit::

    <v, w>_1 = L^-1 int_0^L <DT_s v, DT_s w> ds .

The integrand is only piecewise smooth (the wobbled reference metric has a
kink at the gluing), so the quadrature is composite Gauss-Legendre with
breakpoints at the roof crossings ``s0 + tau = k``.  Everything is evaluated on
vectors, never on assembled Gram matrices, because the window Gram of the
coordinate basis has condition number ``~ lam^(2L)``.

Metric two declares the three directions of a splitting orthogonal and keeps
the metric-one length on each of them.

Grid-sampled fields store a local frame (the splitting) and the Gram matrix in
that frame; the latter is nearly diagonal, so componentwise interpolation is
well conditioned even when the Gram matrix in chart coordinates is not.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import flow_core as fc
from .errors import NumericalError, ParameterError
from .report import VerificationReport

__all__ = [
    "AveragingParams", "choose_averaging_params", "averaging_beta",
    "hyperbolicity_constants", "orbit_samples", "window_gram", "energy_profile",
    "metric_one", "MetricField", "build_metric_field", "verify_metric_lemma",
    "metric_lemma_log_ratios", "calibrate_sigma", "MetricTwo", "ProjectorField",
    "build_metric_two", "gauss_legendre",
]

CHUNK = 512


def averaging_beta(L, A, c_star, lam):
    """``beta`` from the proof, with ``a = 1 - A/L``."""
    q = A / L
    e = c_star ** 2 * math.exp(2.0 * lam * A)
    return e * q / (1.0 - q + q * e)


@dataclass(frozen=True)
class AveragingParams:
    L: float
    A: float
    K: float
    sigma: float
    a: float
    lam: float
    c_star: float
    beta: float
    nodes_per_unit: int = 12

    @property
    def sigma_A(self):
        return min(self.lam / 2.0, self.c_star ** 2 / (4.0 * self.A))

    def check(self):
        """List of violated invariants (empty when valid)."""
        bad = []
        if self.c_star * math.exp(self.lam * self.A / 2.0) < 1.0 - 1e-12:
            bad.append("C_* exp(lam A / 2) >= 1")
        if self.A < self.K * math.log(self.L) - 1e-12:
            bad.append("A >= K ln L")
        if self.L < 2.0 * self.K * math.log(self.L) - 1e-12:
            bad.append("L >= 2 K ln L")
        if not 0.5 < self.a < 1.0:
            bad.append("a in (1/2, 1)")
        if not 0.0 < self.sigma <= self.sigma_A * (1 + 1e-12):
            bad.append("0 < sigma <= min(lam/2, C_*^2/(4A))")
        if self.beta * (1.0 - self.c_star ** -2 * math.exp(-2.0 * self.lam * self.L)) < 0.5:
            bad.append("beta (1 - C_*^-2 exp(-2 lam L)) >= 1/2")
        return bad

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("L", "A", "K", "sigma", "a", "lam", "c_star", "beta", "nodes_per_unit")}


def choose_averaging_params(model, lam, c_star, K=4.0,
                            L_candidates=(8, 12, 16, 24, 32), nodes_per_unit=12):
    """Smallest admissible window length in ``L_candidates``.

    ``A = max(K ln L, 2 ln(1/C_*)/lam)`` and ``sigma = 0.9 min(lam/2, C_*^2/(4A))``.
    """
    if lam <= 0:
        raise ParameterError("lam must be positive")
    if not 0.0 < c_star <= 1.0:
        raise ParameterError("C_* must lie in (0, 1]")
    for L in sorted(L_candidates):
        L = float(L)
        A = max(K * math.log(L), 2.0 * math.log(1.0 / c_star) / lam)
        if L < 2.0 * K * math.log(L):
            continue
        a = 1.0 - A / L
        if not 0.5 < a < 1.0:
            continue
        beta = averaging_beta(L, A, c_star, lam)
        if beta * (1.0 - c_star ** -2 * math.exp(-2.0 * lam * L)) < 0.5:
            continue
        sigma = 0.9 * min(lam / 2.0, c_star ** 2 / (4.0 * A))
        p = AveragingParams(L=L, A=A, K=float(K), sigma=sigma, a=a, lam=float(lam),
                            c_star=float(c_star), beta=beta, nodes_per_unit=nodes_per_unit)
        assert not p.check(), p.check()
        return p
    raise ParameterError(f"no window length in {tuple(L_candidates)} satisfies the constraints "
                         f"(K={K}, lam={lam}, C_*={c_star})")


def hyperbolicity_constants(model, points=None, T=8.0, horizon=24.0):
    """Rate ``lam`` and constant ``C_*`` of the splitting in the reference metric.

    Exact for the linear models.  For nonlinear ones ``lam`` is 95% of the
    slowest mean rate over ``[0, T]`` and ``C_*`` the worst transient against it.
    """
    if model.is_linear:
        if model.metric == "canonical":
            return fc.LOG_LAMBDA, 1.0
        w = model.wobble
        return fc.LOG_LAMBDA, math.sqrt((1.0 - w) / (1.0 + w))
    if points is None:
        points = np.random.default_rng(12345).random((64, 3))
    frames, _ = fc.splitting_ref(model, points, horizon)
    ts = np.linspace(0.0, T, int(round(4 * T)) + 1)[1:]
    g0 = fc.reference_gram(model, points)

    def growth(col, sign):
        taus = np.broadcast_to(sign * ts, (len(points), len(ts)))
        Q, J = orbit_samples(model, points, taus)
        v = frames[:, :, col]
        Jv = np.einsum("nmij,nj->nmi", J, v)
        n2 = np.sum(fc.reference_gram(model, Q) * Jv * Jv, -1)
        n0 = np.sum(g0 * v * v, -1)
        return 0.5 * np.log(n2 / n0[:, None])

    gu = growth(1, +1.0)
    gs = growth(0, -1.0)
    lam = 0.95 * min(gu[:, -1].min(), gs[:, -1].min()) / T
    cu = np.exp(gu - lam * ts[None, :]).min()
    cs = np.exp(gs - lam * ts[None, :]).min()
    return float(lam), float(min(cu, cs, 1.0))


# -- orbit sampling and quadrature -------------------------------------------

def gauss_legendre(q):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def _linear_orbit(P, taus):
    n, m = taus.shape
    s0 = P[:, 2]
    tot = s0[:, None] + taus
    k = np.floor(tot).astype(int)
    Q = np.empty((n, m, 3))
    Q[..., 2] = tot - k
    kmin, kmax = int(k.min()), int(k.max())
    xs = {0: P[:, :2].copy()}
    x = P[:, :2].copy()
    for kk in range(1, kmax + 1):
        x = fc._mod1(x @ fc.CAT.T)
        xs[kk] = x
    x = P[:, :2].copy()
    for kk in range(-1, kmin - 1, -1):
        x = fc._mod1(x @ fc._CAT_INV.T)
        xs[kk] = x
    for kk in range(kmin, kmax + 1):
        sel = k == kk
        if np.any(sel):
            rows = np.nonzero(sel)[0]
            Q[sel, :2] = xs[kk][rows]
    d = fc.DECK_REF[None, None, :] ** k[..., None]
    J = np.zeros((n, m, 3, 3))
    J[..., 0, 0] = d[..., 0]
    J[..., 1, 1] = d[..., 1]
    J[..., 2, 2] = d[..., 2]
    return Q, J


def orbit_samples(model, P, taus):
    """Chart points and reference tangent maps at times ``taus`` (n, m).

    Columns are visited in order, each integration continuing from the
    previous column, so rows should be monotone in ``|tau|``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    taus = np.asarray(taus, dtype=float)
    if model.is_linear:
        return _linear_orbit(P, taus)
    n, m = taus.shape
    Q = np.empty((n, m, 3))
    J = np.empty((n, m, 3, 3))
    cur, Jc = P.copy(), np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    prev = np.zeros(n)
    for c in range(m):
        cur, Jc = fc.integrate(model, cur, taus[:, c] - prev, tangent=True, J0=Jc)
        prev = taus[:, c]
        Q[:, c] = cur
        J[:, c] = Jc
    return Q, J


def _side_breakpoints(P, t_end, marks):
    n = len(P)
    lo, hi = min(0.0, t_end), max(0.0, t_end)
    ks = np.arange(math.floor(lo) - 1, math.ceil(hi) + 2)
    cross = np.clip(ks[None, :] - P[:, 2:3], lo, hi)
    bps = np.concatenate([np.broadcast_to(marks, (n, len(marks))), cross,
                          np.full((n, 2), [lo, hi])], axis=1)
    bps = np.sort(bps, axis=1)
    return bps if t_end >= 0 else bps[:, ::-1]


def _side_profile(model, P, V, t_end, marks, q):
    """Signed integrals from 0 to each mark on one side of 0."""
    bps = _side_breakpoints(P, t_end, marks)
    xg, wg = gauss_legendre(q)
    a, b = bps[:, :-1], bps[:, 1:]
    taus = (a[..., None] + (b - a)[..., None] * xg).reshape(len(P), -1)
    wts = np.abs((b - a)[..., None] * wg).reshape(len(P), -1)
    Q, J = orbit_samples(model, P, taus)
    g = fc.reference_gram(model, Q)
    sg = np.sqrt(g)[..., None] * np.einsum("nmij,njk->nmik", J, V)
    dens = np.einsum("nmik,nmil->nmkl", sg, sg) * wts[..., None, None]
    k = V.shape[2]
    dens = dens.reshape(len(P), bps.shape[1] - 1, q, k, k).sum(axis=2)
    cum = np.concatenate([np.zeros((len(P), 1, k, k)), np.cumsum(dens, axis=1)], axis=1)
    idx = np.argmax(np.abs(bps[:, :, None] - marks[None, None, :]) <= 1e-13, axis=1)
    out = np.take_along_axis(cum, idx[:, :, None, None], axis=1)
    return out if t_end >= 0 else -out


def energy_profile(model, P, V, t_lo, t_hi, marks, q=6):
    """``int_0^m (J v)^T G (J w) dtau`` (signed) at each mark in ``[t_lo, t_hi]``.

    ``V`` has shape (n, 3, k); the result has shape (n, len(marks), k, k).
    Differences of the profile give window integrals.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    V = np.asarray(V, dtype=float)
    marks = np.asarray(marks, dtype=float)
    if not t_lo <= 0.0 <= t_hi:
        raise ParameterError("profile interval must contain 0")
    k = V.shape[2]
    out = np.zeros((len(P), len(marks), k, k))
    pos = marks > 0
    neg = marks < 0
    if np.any(pos):
        out[:, pos] = _side_profile(model, P, V, t_hi, marks[pos], q)
    if np.any(neg):
        out[:, neg] = _side_profile(model, P, V, t_lo, marks[neg], q)
    return out


def window_gram(model, params, P, V, t0=0.0, q=None):
    """Metric-one Gram matrices of the vector sets ``V`` (n, 3, k) at chart points.

    ``t0`` shifts the window to ``[t0, t0 + L]``, which equals the metric-one
    Gram of ``D T_t0 V`` at ``T_t0 P``.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    V = np.asarray(V, dtype=float)
    if V.ndim == 2:
        V = V[:, :, None]
    L = params.L
    q = q or params.nodes_per_unit
    out = np.empty((len(P), V.shape[2], V.shape[2]))
    for i in range(0, len(P), CHUNK):
        sl = slice(i, i + CHUNK)
        lo, hi = min(t0, 0.0), max(t0 + L, 0.0)
        marks = np.array([t0, t0 + L])
        e = energy_profile(model, P[sl], V[sl], lo, hi, marks, q=q)
        out[sl] = (e[:, 1] - e[:, 0]) / L
    return out


def metric_one(model, params, x, v, w):
    """``<v, w>_1`` at a single chart point, vectors in chart coordinates."""
    V = fc.REF_FRAME.T @ np.column_stack([v, w])
    G = window_gram(model, params, np.asarray(x, float)[None], V[None])
    return float(G[0, 0, 1])


# -- grid fields ---------------------------------------------------------------

GHOST = 3


def _grid_points(shape):
    n1, n2, n3 = shape
    g1 = (np.arange(n1) + 0.5) / n1
    g2 = (np.arange(n2) + 0.5) / n2
    g3 = np.arange(-GHOST, n3 + GHOST) / n3
    P = np.stack(np.meshgrid(g1, g2, g3, indexing="ij"), -1)
    return P


def _spline_coeffs(data):
    """Cubic B-spline coefficients: periodic in x, mirrored at the (ghost) s ends."""
    c = ndimage.spline_filter1d(data, 3, axis=0, mode="grid-wrap")
    c = ndimage.spline_filter1d(c, 3, axis=1, mode="grid-wrap")
    return ndimage.spline_filter1d(c, 3, axis=2, mode="mirror")


def _interp(coeffs, shape, P):
    n1, n2, n3 = shape
    P = np.atleast_2d(P)
    coords = np.stack([P[:, 0] * n1 - 0.5, P[:, 1] * n2 - 0.5, P[:, 2] * n3 + GHOST])
    out = np.empty((len(P),) + coeffs.shape[3:])
    flat = coeffs.reshape(coeffs.shape[:3] + (-1,))
    outf = out.reshape(len(P), -1)
    for j in range(flat.shape[3]):
        outf[:, j] = ndimage.map_coordinates(flat[..., j], coords, order=3,
                                             mode="grid-wrap", prefilter=False)
    return out


def lifted_to_chart_frame(P_lifted, V):
    """Chart point and reference-frame vectors for lifted points (deck twist)."""
    return fc.to_chart(P_lifted, V)


@dataclass
class MetricField:
    """Grid-sampled metric stored as ``(frame, Gram in frame)``.

    ``gram(P)`` returns the Gram matrix in reference-frame coordinates at
    arbitrary chart points.  Off-grid values interpolate the frame entries,
    the log-diagonal and the correlation entries with cubic splines and
    reassemble; the correlation block is projected to SPD.
    """

    which: str
    shape: tuple
    frames: np.ndarray      # (n1, n2, n3 + 2 GHOST, 3, 3)
    grams: np.ndarray       # Gram in the frame basis, same leading shape
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.sqrt(np.einsum("...ii->...i", self.grams))
        corr = self.grams / (d[..., :, None] * d[..., None, :])
        self._c_frame = _spline_coeffs(self.frames)
        self._c_logd = _spline_coeffs(np.log(d))
        self._c_corr = _spline_coeffs(corr)

    @property
    def grid_points(self):
        return _grid_points(self.shape)

    def interior(self, arr):
        return arr[:, :, GHOST:GHOST + self.shape[2]]

    def frame_gram(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        F = _interp(self._c_frame, self.shape, P)
        d = np.exp(_interp(self._c_logd, self.shape, P))
        C = _interp(self._c_corr, self.shape, P)
        C = 0.5 * (C + np.swapaxes(C, -1, -2))
        w, U = np.linalg.eigh(C)
        if np.any(w < 1e-12):
            w = np.maximum(w, 1e-12)
            C = np.einsum("nij,nj,nkj->nik", U, w, U)
        return F, d[..., :, None] * C * d[..., None, :]

    def gram(self, P):
        F, Gh = self.frame_gram(P)
        Fi = np.linalg.inv(F)
        return np.einsum("nji,njk,nkl->nil", Fi, Gh, Fi)

    def norm(self, P, v):
        """Norm of reference-frame vectors ``v`` (n, 3)."""
        F, Gh = self.frame_gram(P)
        c = np.linalg.solve(F, np.asarray(v, float)[..., None])[..., 0]
        return np.sqrt(np.einsum("ni,nij,nj->n", c, Gh, c))

    def equivalence_bounds(self, model):
        """Extreme generalised eigenvalues against the reference metric at grid points."""
        P = self.interior(self.grid_points).reshape(-1, 3)
        Fi = np.linalg.inv(self.interior(self.frames).reshape(-1, 3, 3))
        G = np.einsum("nji,njk,nkl->nil", Fi, self.interior(self.grams).reshape(-1, 3, 3), Fi)
        g = fc.reference_gram(model, P)
        s = 1.0 / np.sqrt(g)
        Gs = G * s[:, :, None] * s[:, None, :]
        w = np.linalg.eigvalsh(Gs)
        return float(w.min()), float(w.max())


def _frames_at(model, P, horizon):
    frames, _ = fc.splitting_ref(model, P, horizon)
    return frames


def build_metric_field(model, params, grid=(12, 12, 12), horizon=24.0):
    """Metric one sampled on a grid (with ghost layers in ``s``)."""
    if min(grid) < 8:
        raise ParameterError("grid resolution must be at least 8 per period")
    Pl = _grid_points(grid).reshape(-1, 3)
    Pc, _ = fc.to_chart(Pl, np.zeros_like(Pl))
    frames_c = _frames_at(model, Pc, horizon)
    Gh = window_gram(model, params, Pc, frames_c)
    # express the chart-point frame in the lifted frame of the grid layer
    k = np.floor(Pl[:, 2]).astype(int)
    scale = fc.DECK_REF[None, :] ** (-k[:, None])
    frames_l = frames_c * scale[:, :, None]
    w = np.linalg.eigvalsh(Gh)
    if np.any(w <= 0):
        bad = int(np.argmin(w.min(axis=1)))
        raise NumericalError(f"metric one not positive definite at grid point {Pl[bad].tolist()}")
    shp = tuple(_grid_points(grid).shape[:3])
    return MetricField(which="one", shape=tuple(grid), frames=frames_l.reshape(shp + (3, 3)),
                       grams=Gh.reshape(shp + (3, 3)),
                       provenance={"model": model.name, "params": params.as_dict(),
                                   "horizon": horizon})


# -- metric lemma ---------------------------------------------------------------

def metric_lemma_log_ratios(model, params, P, t_grid, horizon=30.0):
    """Log growth of the splitting vectors in metric one.

    Returns a dict with keys ``"u"``, ``"s"``, ``"f"`` of arrays (n, len(t_grid)):
    ``log |DT_t e_u|_1/|e_u|_1``, ``log |DT_-t e_s|_1/|e_s|_1`` and
    ``log |DT_t V|_1/|V|_1``.
    """
    P = np.atleast_2d(np.asarray(P, float))
    t_grid = np.asarray(t_grid, float)
    frames, _ = fc.splitting_ref(model, P, horizon)
    L = params.L
    tmax = float(t_grid.max())
    marks = np.unique(np.concatenate([t_grid, -t_grid, t_grid + L, L - t_grid]))
    spacing = np.diff(marks).max() if len(marks) > 1 else L
    q = max(4, int(math.ceil(params.nodes_per_unit * min(1.0, spacing))))
    out = {k: np.empty((len(P), len(t_grid))) for k in "usf"}
    for i in range(0, len(P), CHUNK):
        sl = slice(i, i + CHUNK)
        e = energy_profile(model, P[sl], frames[sl], -tmax, L + tmax, marks, q=q)
        diag = np.einsum("nmii->nmi", e)
        pos = {float(m): j for j, m in enumerate(marks)}

        def win(t0, col):
            return diag[:, pos[float(t0 + L)], col] - diag[:, pos[float(t0)], col]

        for j, t in enumerate(t_grid):
            t = float(t)
            out["u"][sl, j] = 0.5 * np.log(win(t, 1) / win(0.0, 1))
            out["s"][sl, j] = 0.5 * np.log(win(-t, 0) / win(0.0, 0))
            out["f"][sl, j] = 0.5 * np.log(win(t, 2) / win(0.0, 2))
    return out


def _metric_records(rep, lr, t_grid, sigma, c1, slack):
    t = np.asarray(t_grid, float)[None, :]
    mu = lr["u"] - sigma * t
    ms = lr["s"] - sigma * t
    lo = np.maximum(-math.log(c1), -sigma * t / 4.0)
    hi = np.minimum(math.log(c1), sigma * t / 4.0)
    mf = np.minimum(lr["f"] - lo, hi - lr["f"])
    for tag, m in (("unstable-expansion", mu), ("stable-expansion", ms), ("flow-bounds", mf)):
        for j, tv in enumerate(np.asarray(t_grid, float)):
            col = m[:, j]
            w = int(np.argmin(col))
            rep.add(tag, sample=w, margin=float(col[w]), passed=bool(col[w] >= -slack),
                    t=float(tv), count=len(col))


def verify_metric_lemma(model, params, points, t_grid, sigma=None, slack=1e-6,
                        horizon=30.0, log_ratios=None, suite="metric_lemma"):
    """Check the three inequalities of the adapted-metric lemma on samples.

    Margins are ``log|DT v|_1 - log|v|_1 - sigma t`` (and the two-sided bounds
    on the flow direction); a record passes when its worst margin is
    ``>= -slack``.
    """
    sigma = params.sigma if sigma is None else float(sigma)
    lr = log_ratios if log_ratios is not None else metric_lemma_log_ratios(
        model, params, points, t_grid, horizon)
    rep = VerificationReport(suite=suite, params={"model": model.name, "sigma": sigma,
                                                   "slack": slack, **params.as_dict(),
                                                   "C1": model.c1})
    _metric_records(rep, lr, t_grid, sigma, model.c1, slack)
    return rep


def calibrate_sigma(log_ratios, t_grid, slack=0.0, tol=1e-10):
    """Largest sigma keeping the expansion margins above ``-slack`` (bisection)."""
    t = np.asarray(t_grid, float)
    pos = t > 0
    lo, hi = 0.0, 10.0

    def ok(sig):
        for key in ("u", "s"):
            if np.any(log_ratios[key][:, pos] - sig * t[pos] < -slack):
                return False
        return True

    if not ok(lo):
        raise NumericalError("no positive expansion rate certified")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- metric two -------------------------------------------------------------------

class MetricTwo:
    """Metric in which ``(E_s, E_u, V)`` of a splitting are orthogonal.

    ``fol_s`` and ``fol_u`` are callables mapping chart points (n, 3) to
    reference-frame vectors (n, 3); lengths along each direction are the
    metric-one lengths.
    """

    def __init__(self, model, params, fol_s, fol_u, min_transversality=1e-3):
        self.model = model
        self.params = params
        self.fol_s = fol_s
        self.fol_u = fol_u
        self.min_transversality = min_transversality

    def frame(self, P):
        """Frame columns ``(E_s, E_u, V)`` (n, 3, 3) and metric-one lengths (n, 3)."""
        P = np.atleast_2d(np.asarray(P, float))
        es = self.fol_s(P)
        eu = self.fol_u(P)
        ef = fc.vector_field_ref(self.model, P)
        F = np.stack([es / np.linalg.norm(es, axis=1, keepdims=True),
                      eu / np.linalg.norm(eu, axis=1, keepdims=True), ef], axis=-1)
        sv = np.linalg.svd(F, compute_uv=False)
        tr = sv[:, -1] / sv[:, 0]
        if np.any(tr < self.min_transversality):
            raise NumericalError(f"splitting degenerate: transversality {tr.min():.2e}")
        G = window_gram(self.model, self.params, P, F)
        n = np.sqrt(np.einsum("nii->ni", G))
        return F, n

    def gram(self, P):
        F, n = self.frame(P)
        Fi = np.linalg.inv(F)
        return np.einsum("nji,nj,njl->nil", Fi, n ** 2, Fi)

    @staticmethod
    def block_norms(F, n, v):
        """``(|v^s|_2, |v^u|_2, |v^f|_2)`` for reference-frame vectors ``v`` (n, 3[, k])."""
        v = np.asarray(v, float)
        if v.ndim == 2:
            c = np.linalg.solve(F, v[..., None])[..., 0]
            return np.abs(c) * n
        c = np.linalg.solve(F, v)
        return np.abs(c) * n[:, :, None]


@dataclass
class ProjectorField:
    shape: tuple
    frames: np.ndarray

    def projectors(self):
        """``(Pi_s, Pi_u, Pi_f)`` at every grid point, shape (n, 3, 3, 3)."""
        F = self.frames.reshape(-1, 3, 3)
        Fi = np.linalg.inv(F)
        return np.stack([np.einsum("nj,nk->njk", F[:, :, i], Fi[:, i, :]) for i in range(3)], 1)


def build_metric_two(metric2: MetricTwo, grid=(12, 12, 12)):
    """Metric two and its projector field on a grid."""
    if min(grid) < 8:
        raise ParameterError("grid resolution must be at least 8 per period")
    Pl = _grid_points(grid).reshape(-1, 3)
    Pc, _ = fc.to_chart(Pl, np.zeros_like(Pl))
    F, n = metric2.frame(Pc)
    k = np.floor(Pl[:, 2]).astype(int)
    scale = fc.DECK_REF[None, :] ** (-k[:, None])
    Fl = F * scale[:, :, None]
    Fl = Fl / np.linalg.norm(Fl, axis=1, keepdims=True)
    # lengths of the rescaled columns: metric one is deck invariant
    col_scale = np.linalg.norm(F * scale[:, :, None], axis=1)
    n_l = n / col_scale
    shp = tuple(_grid_points(grid).shape[:3])
    G = np.zeros((len(Pl), 3, 3))
    G[:, [0, 1, 2], [0, 1, 2]] = n_l ** 2
    field2 = MetricField(which="two", shape=tuple(grid), frames=Fl.reshape(shp + (3, 3)),
                         grams=G.reshape(shp + (3, 3)),
                         provenance={"model": metric2.model.name,
                                     "params": metric2.params.as_dict()})
    return field2, ProjectorField(shape=tuple(grid), frames=Fl.reshape(shp + (3, 3)))
