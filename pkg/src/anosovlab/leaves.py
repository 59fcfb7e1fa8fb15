"""Admissible leaves, adapted frames, the graph transform and leaf covers.

Leaves are one-dimensional (``d_s = 1``).  A leaf is stored as a polynomial
displacement ``u -> beta(u)`` (reference-frame vector, ``beta(0) = 0``) about
a center point; the parameter ``u`` is the first adapted coordinate at the
center.  Keeping displacements separate from the base point matters: metric
two stretches the unstable direction by many orders of magnitude, so leaf
curvature that is of order one in adapted coordinates is far below the
rounding level of absolute positions.

Derivatives along a leaf are propagated with truncated Taylor series
(:mod:`anosovlab.taylor`).  Jets at the image of the center depend only on
jets at the center, so composing steps is exact up to rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import flow_core as fc
from . import taylor as T
from .errors import CoveringError, GraphBlowupError, NumericalError, ParameterError
from .report import VerificationReport

__all__ = [
    "AdaptedFrame", "AdmissibleLeaf", "TransformBlocks", "LeafTransport", "CoverResult",
    "frame_data", "build_adapted_frame", "random_leaves", "cone_slopes",
    "admissible_delta", "recenter", "evolve_leaf",
    "transport_jets", "slope_oracle", "oracle_errors", "jet_margins", "calibrate_M",
    "sigma_jet_tables", "verify_sigma_invariance", "leaf_image_arcs", "expansion_rates", "choose_B",
    "vitali_cover", "partition_of_unity", "interval_net_size", "verify_cover",
]

R = fc.REF_FRAME
DELTA = 0.002
JET_ORDER = 3           # r + 1 with r = 2
BLOWUP = 1e-12
SERIES_TOL = 1e-12


# -- frames ------------------------------------------------------------------------

def frame_data(metric2, P):
    """Splitting columns at lifted points ``P`` (lifted reference frame) and their lengths.

    Column ``i`` of the returned frame has metric-two length ``n[:, i]``.
    """
    P = np.atleast_2d(np.asarray(P, float))
    F, n = metric2.frame(fc.to_chart(P))
    k = np.floor(P[:, 2]).astype(int)
    F = F / (fc.DECK_REF[None, :] ** k[:, None])[:, :, None]
    return F, n


def _gram2(F, n):
    Fi = np.linalg.inv(F)
    return np.einsum("nji,nj,njl->nil", Fi, n ** 2, Fi)


@dataclass
class AdaptedFrame:
    """Affine frames ``y -> point + theta y`` at a batch of lifted points.

    ``theta`` has columns (leaf tangent, unstable direction, flow direction),
    each of unit length in metric two; the flow column is ``X / |X|_2`` so that
    moving ``|X|_2 t`` along the third axis follows the flow for time ``t``.
    """

    point: np.ndarray
    theta: np.ndarray
    gram: np.ndarray
    flow_speed: np.ndarray

    @cached_property
    def inverse(self):
        return np.linalg.inv(self.theta)

    def to_frame(self, d):
        """Frame coordinates of reference-frame displacements ``d`` (n, 3)."""
        return np.einsum("nij,nj->ni", self.inverse, d)

    def __call__(self, y):
        """Lifted points ``Theta(y)``."""
        return self.point + np.einsum("nij,nj->ni", self.theta, y) @ R.T

    def isometry_defect(self):
        """``Theta^T G_2 Theta - I``; vanishes when the leaf tangent is ``E^s``."""
        G = np.einsum("nji,njk,nkl->nil", self.theta, self.gram, self.theta)
        return G - np.eye(3)


def build_adapted_frame(metric2, P, E=None, min_det=1e-8, data=None):
    """Adapted frames at lifted points ``P``.

    ``E`` is the leaf tangent (reference frame, (n, 3)); ``None`` uses the
    stable direction of metric two, which gives an orthonormal frame.
    ``data`` may carry a precomputed ``frame_data(metric2, P)``.
    """
    P = np.atleast_2d(np.asarray(P, float))
    F, n = frame_data(metric2, P) if data is None else data
    G = _gram2(F, n)
    if E is None:
        e1 = F[:, :, 0] / n[:, :1]
    else:
        E = np.atleast_2d(np.asarray(E, float))
        e1 = E / np.sqrt(np.einsum("ni,nij,nj->n", E, G, E))[:, None]
    theta = np.stack([e1, F[:, :, 1] / n[:, 1:2], F[:, :, 2] / n[:, 2:3]], axis=-1)
    det = np.abs(np.linalg.det(np.einsum("nji,njk,nkl->nil", theta, G, theta)))
    if np.any(det < min_det):
        raise NumericalError(f"leaf tangent not transverse to E^u + X (gram det {det.min():.2e})")
    return AdaptedFrame(point=P, theta=theta, gram=G, flow_speed=n[:, 2].copy())


# -- leaves ------------------------------------------------------------------------

@dataclass
class AdmissibleLeaf:
    """Polynomial leaf ``u -> center + beta(u)`` with ``|u| <= B delta``.

    ``coeffs[k]`` is the reference-frame coefficient of ``u**k``; ``coeffs[0]``
    must vanish.  ``W`` is the part ``|u| <= 2 delta`` and ``W+`` the whole
    parameter range.
    """

    center: np.ndarray
    coeffs: np.ndarray
    delta: float = DELTA
    B: float = 12.0
    M: float = math.inf
    rho: float = 0.25

    def __post_init__(self):
        self.center = np.asarray(self.center, float).reshape(3)
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, float))
        if self.coeffs.shape[1] != 3 or len(self.coeffs) < 2:
            raise ParameterError("coeffs must have shape (degree + 1, 3), degree >= 1")
        if np.any(self.coeffs[0] != 0.0):
            raise ParameterError("leaf displacement must vanish at u = 0")
        if not self.B > 2.0:
            raise ParameterError("B must exceed 2")

    @property
    def half_width(self):
        return self.B * self.delta

    def displacement(self, u):
        return npoly.polyval(np.asarray(u, float), self.coeffs).T

    def tangent(self, u):
        return npoly.polyval(np.asarray(u, float), npoly.polyder(self.coeffs)).T

    def points(self, u):
        return self.center + self.displacement(u) @ R.T

    def mesh(self, n=17, radius=None):
        """Chebyshev-spaced parameters over ``[-radius, radius]`` (default ``B delta``)."""
        radius = self.half_width if radius is None else radius
        k = np.arange(n)
        return radius * np.cos(np.pi * (2 * k + 1) / (2 * n))[::-1]

    def to_chart(self):
        """Same leaf with the center moved to the fundamental domain."""
        k = int(np.floor(self.center[2]))
        Pc = fc.to_chart(self.center[None])[0]
        return AdmissibleLeaf(Pc, self.coeffs * fc.DECK_REF[None, :] ** k, self.delta,
                              self.B, self.M, self.rho)

    def to_text(self, metric2=None, n_mesh=17):
        """Text serialisation; with ``metric2`` the mesh rows carry ``xi, F(xi)``."""
        lines = ["# leaf v1",
                 "center " + " ".join(repr(float(v)) for v in self.center),
                 f"delta {self.delta!r}", f"B {self.B!r}", f"M {self.M!r}", f"rho {self.rho!r}",
                 f"degree {len(self.coeffs) - 1}"]
        lines += ["coeff " + " ".join(repr(float(v)) for v in row) for row in self.coeffs]
        if metric2 is not None:
            fr = build_adapted_frame(metric2, self.center[None], self.coeffs[1][None])
            u = self.mesh(n_mesh)
            y = np.einsum("ij,nj->ni", fr.inverse[0], self.displacement(u))
            lines += ["mesh " + " ".join(repr(float(v)) for v in row) for row in y]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kw, coeffs = {}, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, *vals = line.split()
            if key == "center":
                kw["center"] = [float(v) for v in vals]
            elif key in ("delta", "B", "M", "rho"):
                kw[key] = float(vals[0])
            elif key == "coeff":
                coeffs.append([float(v) for v in vals])
            elif key not in ("degree", "mesh"):
                raise ParameterError(f"unknown leaf field {key!r}")
        return cls(coeffs=np.array(coeffs), **kw)


def random_leaves(metric2, centers, rng, M0=1.0, degree=5, delta=DELTA, B=12.0, rho=0.25):
    """Leaves through ``centers`` tangent to ``E^s`` with jets ``|D^a S(0)| <= M0^|a|``."""
    centers = np.atleast_2d(np.asarray(centers, float))
    theta = build_adapted_frame(metric2, centers).theta
    out = []
    for c, th in zip(centers, theta):
        coeffs = np.zeros((degree + 1, 3))
        coeffs[1] = th[:, 0]
        for k in range(2, degree + 1):
            d = rng.uniform(-1.0, 1.0, 2)
            d *= M0 ** (k - 1) / max(np.linalg.norm(d), 1.0)
            # D^(k-1) S(0) = k! a_k
            coeffs[k] = th[:, 1:] @ (d / math.factorial(k))
        out.append(AdmissibleLeaf(c, coeffs, delta, B, M0, rho))
    return out


def cone_slopes(metric2, leaf: AdmissibleLeaf, n_mesh=17, radius=None):
    """Metric-two slope ``|v^u + v^f|_2 / |v^s|_2`` of the leaf tangent at mesh points.

    Each slope is taken against the splitting at the mesh point itself, so a
    value ``<= rho`` means the tangent lies in ``C*_rho`` there.
    """
    u = leaf.mesh(n_mesh, radius)
    F, n = frame_data(metric2, leaf.points(u))
    c = np.linalg.solve(F, leaf.tangent(u)[..., None])[..., 0] * n
    return np.hypot(c[:, 1], c[:, 2]) / np.abs(c[:, 0])


def admissible_delta(M, B, rho):
    """Leaf scale ``delta = rho / (2 B M)``: keeps ``W+`` inside the cone at jet size ``M``."""
    return rho / (2.0 * B * M)


def recenter(leaf: AdmissibleLeaf, u0):
    """Leaf re-expanded about the point with parameter ``u0`` (parameter ``u - u0``)."""
    c = leaf.coeffs
    deg = len(c) - 1
    out = np.zeros_like(c)
    for k in range(deg + 1):
        for j in range(k, deg + 1):
            out[k] += math.comb(j, k) * u0 ** (j - k) * c[j]
    shift = out[0].copy()
    out[0] = 0.0
    return AdmissibleLeaf(leaf.center + shift @ R.T, out, leaf.delta, leaf.B, leaf.M, leaf.rho)


# -- graph transform ------------------------------------------------------------------

@dataclass
class TransformBlocks:
    """Blocks of ``Dphi`` in adapted coordinates, as Taylor coefficients in ``xi``.

    ``dphi`` has shape (degree + 1, n, 3, 3); ``A``..``b`` are views of it and
    ``flow`` is the (2, 2) entry, equal at ``xi = 0`` to ``|X(T_-t z)|_2 / |X(z)|_2``.
    """

    dphi: np.ndarray

    @property
    def A(self):
        return self.dphi[..., 0, 0]

    @property
    def B(self):
        return self.dphi[..., 0, 1]

    @property
    def C(self):
        return self.dphi[..., 1, 0]

    @property
    def D(self):
        return self.dphi[..., 1, 1]

    @property
    def a(self):
        return self.dphi[..., 2, 0]

    @property
    def b(self):
        return self.dphi[..., 2, 1]

    @property
    def flow(self):
        return self.dphi[..., 2, 2]

    @property
    def B_tilde(self):
        return self.dphi[..., 0, 1:]

    @property
    def C_tilde(self):
        return self.dphi[..., 1:, 0]

    @property
    def D_tilde(self):
        return self.dphi[..., 1:, 1:]

    def at_zero(self):
        d = self.dphi[0]
        return {"A": d[:, 0, 0], "B": d[:, 0, 1], "C": d[:, 1, 0], "D": d[:, 1, 1],
                "a": d[:, 2, 0], "b": d[:, 2, 1], "flow": d[:, 2, 2],
                "flow_column": d[:, :2, 2]}


@dataclass
class LeafTransport:
    """Result of moving leaves backward by the flow.

    ``jets[:, k]`` is ``D^k S_{z,t}(0)`` (2-vectors) from the matrix formula,
    ``jets_direct`` the same read off the image curve, ``jets_initial`` the
    input jets ``D^k S_z(0)``.
    """

    t: float
    leaves: list
    jets: np.ndarray
    jets_direct: np.ndarray
    jets_initial: np.ndarray
    blocks: TransformBlocks
    source: AdaptedFrame
    target: AdaptedFrame
    xi_map: np.ndarray
    slope_initial: np.ndarray = field(repr=False, default=None)


def _stack_leaves(leaves, degree):
    Z = np.array([lf.center for lf in leaves])
    C = np.zeros((degree + 1, len(leaves), 3))
    for i, lf in enumerate(leaves):
        d = min(degree, len(lf.coeffs) - 1)
        C[: d + 1, i] = lf.coeffs[: d + 1]
    return Z, C


def _frame_coords(inv, c):
    return np.einsum("mij,dmj->dmi", inv, c)


def _series_in_xi(y):
    """Re-parametrise a frame-coordinate curve by its first coordinate."""
    xi = T.Jet(y.c[..., 0])
    back = T.revert(xi)
    return T.compose(y, back)


def _derivative(c):
    d = len(c) - 1
    k = np.arange(1, d + 1).reshape((-1,) + (1,) * (c.ndim - 1))
    return c[1:] * k


def _graph_formula(dphi, S):
    """``(C~ + D~ S)(A + B~ S)^-1`` on coefficient arrays (d_s = 1)."""
    A = T.Jet(dphi[..., 0, 0])
    Bt = T.Jet(dphi[..., 0, 1:])
    Ct = T.Jet(dphi[..., 1:, 0])
    Dt = T.Jet(dphi[..., 1:, 1:])
    Sj = T.Jet(S)
    den = A + (Bt * Sj).sum(-1)
    if np.any(np.abs(den.c[0]) < BLOWUP):
        raise GraphBlowupError("denominator block A + B~S is singular")
    num = Ct + (Dt * Sj[:, None, :]).sum(-1)
    return (num * den.reciprocal()[:, None]).c


def _step(model, metric2, leaves, t, order, frame, src_data=None):
    deg = order + 1
    Z, C = _stack_leaves(leaves, deg)
    src = build_adapted_frame(metric2, Z, None if frame == "splitting" else C[1], data=src_data)
    y = _series_in_xi(T.Jet(_frame_coords(src.inverse, C)))
    S = _derivative(y.c[..., 1:])
    # points along the leaf as a series in xi
    pc = np.einsum("mij,dmj->dmi", src.theta, y.c) @ R.T
    pc[0] += Z
    Pt, J = fc.integrate(model, T.Jet(pc), -float(t), tangent=True, wrap=False)
    Zt = Pt.c[0].copy()
    # image displacement from d/dxi T(p(xi)) = J(xi) p'(xi), never through chart
    # coordinates: the unstable component would drown in rounding
    dp = T.Jet(_derivative(np.einsum("mij,dmj->dmi", src.theta, y.c)))
    ddisp = (T.Jet(J.c[:deg]) @ dp[..., None])[..., 0].c
    d_img = np.zeros((deg + 1,) + ddisp.shape[1:])
    d_img[1:] = ddisp[:deg] / np.arange(1, deg + 1).reshape(-1, 1, 1)
    Et = d_img[1]
    tgt_data = frame_data(metric2, Zt)
    tgt = build_adapted_frame(metric2, Zt, None if frame == "splitting" else Et, data=tgt_data)
    dphi = np.einsum("mij,dmjk,mkl->dmil", tgt.inverse, J.c[:deg], src.theta)
    St = _graph_formula(dphi, S)
    yt = T.Jet(_frame_coords(tgt.inverse, d_img))
    back = T.revert(T.Jet(yt.c[..., 0]))
    yt_xi = T.compose(yt, back)
    back_s = T.Jet(back.c[:deg])
    jets = T.derivatives(T.compose(T.Jet(St), back_s))
    jets_direct = T.derivatives(T.Jet(_derivative(yt_xi.c[..., 1:])))
    new_coeffs = np.einsum("mij,dmj->dmi", tgt.theta, yt_xi.c)
    new_coeffs[0] = 0.0
    new = [AdmissibleLeaf(Zt[i], new_coeffs[:, i], lf.delta, lf.B, lf.M, lf.rho)
           for i, lf in enumerate(leaves)]
    return tgt_data, LeafTransport(
        t=float(t), leaves=new, jets=np.moveaxis(jets, 0, 1),
        jets_direct=np.moveaxis(jets_direct, 0, 1),
        jets_initial=np.moveaxis(T.derivatives(T.Jet(S)), 0, 1),
        blocks=TransformBlocks(dphi), source=src, target=tgt, xi_map=yt.c[..., 0],
        slope_initial=S)


def evolve_leaf(model, metric2, leaves, t, order=JET_ORDER, t_step=0.25, frame="adapted"):
    """Move leaves by ``T_-t`` and return jets of the image slope at the image centers.

    Long times are composed from steps of at most ``t_step``, re-framing after
    each step.  ``frame="splitting"`` aligns the first axis with ``E^s`` rather
    than with the leaf tangent, so slopes need not vanish at the center.
    With several steps the returned blocks and source frame are those of the
    last step; ``jets_initial`` always refers to the input leaves.
    """
    if frame not in ("adapted", "splitting"):
        raise ParameterError(f"unknown frame {frame!r}")
    single = isinstance(leaves, AdmissibleLeaf)
    leaves = [leaves] if single else list(leaves)
    n_steps = max(1, math.ceil(abs(t) / t_step - 1e-12))
    h = t / n_steps
    out, first, data = None, None, None
    for _ in range(n_steps):
        # image centers stay lifted between steps so their frames can be reused
        data, out = _step(model, metric2, leaves, h, order, frame, data)
        first = first if first is not None else out.jets_initial
        leaves = out.leaves
    out.t = float(t)
    out.jets_initial = first
    out.leaves = [lf.to_chart() for lf in out.leaves]
    return out


def transport_jets(blocks: TransformBlocks, S, xi_map, order=JET_ORDER, k_max=None):
    """Jets of the image slope from the block series.

    ``S`` are Taylor coefficients of the input slope in ``xi``, shape
    (degree + 1, n, 2), and ``xi_map`` the coefficients of the image
    coordinate ``xi'(xi)``.  The formula is expanded as
    ``D0 S A0^-1 + sum_k (-1)^k Omega q^k`` with ``q = B~ S A^-1`` and
    ``Omega = (C~ + (D~ - D0) S) A^-1 - D0 S A0^-1 (1 - A0 A^-1 + q)``,
    truncated at ``k_max`` terms (chosen from the size of ``q`` when omitted).
    """
    deg = order
    dphi = blocks.dphi[: deg + 1]
    S = np.asarray(S, float)[: deg + 1]
    A = T.Jet(dphi[..., 0, 0])
    A0 = dphi[0, :, 0, 0]
    Bt = T.Jet(dphi[..., 0, 1:])
    Ct = T.Jet(dphi[..., 1:, 0])
    Dt = T.Jet(dphi[..., 1:, 1:])
    D0 = dphi[0, :, 1:, 1:]
    Sj = T.Jet(S)
    Ainv = A.reciprocal()
    q = (Bt * Sj).sum(-1) * Ainv
    lin = T.Jet(np.einsum("mij,dmj->dmi", D0, S) / A0[None, :, None])
    corr = 1.0 - Ainv * A0 + q
    omega = (Ct + ((Dt - D0) * Sj[:, None, :]).sum(-1)) * Ainv[:, None] - lin * corr[:, None]
    if k_max is None:
        qs = float(np.max(np.abs(q.c[0]))) if q.c.size else 0.0
        if qs >= 1.0:
            raise NumericalError("series ratio |B~ S A^-1| >= 1")
        nz = np.any(np.abs(S[0]) > 0)
        k_max = deg + 1 if not nz else deg + 1 + int(math.ceil(
            math.log(SERIES_TOL) / math.log(max(qs, 1e-300))))
    total = lin
    term = omega
    for k in range(k_max + 1):
        total = total + term * (1.0 if k % 2 == 0 else -1.0)
        term = term * q[:, None]
    if np.any(np.abs(term.c) > SERIES_TOL * max(1.0, np.abs(total.c).max())):
        raise NumericalError("series tail above tolerance; raise k_max")
    back = T.revert(T.Jet(np.asarray(xi_map, float)))
    back = T.Jet(back.c[: deg + 1])
    return np.moveaxis(T.derivatives(T.compose(total, back)), 0, 1)


# -- pointwise oracle -------------------------------------------------------------------

def _image_displacements(model, P, D, t, base):
    """Image points, tangent maps and displacements from the images of ``base``."""
    Pt, J = fc.integrate(model, P, -t, tangent=True, wrap=False)
    if model.is_linear:
        # the lifted linear flow is a translation
        return Pt, J, D - D[base]
    return Pt, J, (Pt - Pt[base]) @ R


def slope_oracle(model, metric2, leaves, t, width=None, n_nodes=16, fit_degree=12,
                 h=1e-3, order=JET_ORDER):
    """Pointwise image slopes and a polynomial-fit jet oracle for each leaf.

    The formula slope at each source node is compared with a central
    difference of the composed map; jets come from a least-squares
    polynomial in the image coordinate.  Returns a dict of arrays with a
    leading leaf axis.
    """
    leaves = [leaves] if isinstance(leaves, AdmissibleLeaf) else list(leaves)
    nl = len(leaves)
    k = np.arange(n_nodes)
    cheb = np.concatenate([[0.0], np.cos(np.pi * (2 * k + 1) / (2 * n_nodes))])
    nu = len(cheb)
    P, D, U, base = [], [], [], []
    for i, lf in enumerate(leaves):
        w = 0.5 * lf.half_width if width is None else width
        u = w * cheb
        uu = np.concatenate([u, u + h * w, u - h * w])
        d = lf.displacement(uu)
        P.append(lf.center + d @ R.T)
        D.append(d)
        U.append(u)
        base.append(np.full(len(uu), i * 3 * nu))
    P, D, base = np.concatenate(P), np.concatenate(D), np.concatenate(base)
    Pt, J, Dt = _image_displacements(model, P, D, t, base)
    heads = np.arange(nl) * 3 * nu
    E0 = np.array([lf.tangent(0.0) for lf in leaves])
    src = build_adapted_frame(metric2, np.array([lf.center for lf in leaves]), E0)
    tgt = build_adapted_frame(metric2, Pt[heads], np.einsum("nij,nj->ni", J[heads], E0))
    out = {"xi": [], "slope": [], "slope_fd": [], "jets": [], "u": U}
    for i, lf in enumerate(leaves):
        sl = slice(heads[i], heads[i] + 3 * nu)
        Ji, Di = J[sl][:nu], Dt[sl]
        ys = np.einsum("ij,nj->ni", src.inverse[i], lf.tangent(U[i]))
        S = ys[:, 1:] / ys[:, :1]
        dphi = np.einsum("ij,njk,kl->nil", tgt.inverse[i], Ji, src.theta[i])
        den = dphi[:, 0, 0] + np.einsum("ni,ni->n", dphi[:, 0, 1:], S)
        if np.any(np.abs(den) < BLOWUP):
            raise GraphBlowupError("denominator block A + B~S is singular")
        St = (dphi[:, 1:, 0] + np.einsum("nij,nj->ni", dphi[:, 1:, 1:], S)) / den[:, None]
        yt = np.einsum("ij,nj->ni", tgt.inverse[i], Di)
        y0, yp, ym = yt[:nu], yt[nu:2 * nu], yt[2 * nu:]
        xi = y0[:, 0]
        scale = np.max(np.abs(xi))
        coef = npoly.polyfit(xi / scale, St, fit_degree)
        jets = np.array([npoly.polyval(0.0, npoly.polyder(coef, j)) / scale ** j
                         for j in range(order + 1)])
        out["xi"].append(xi)
        out["slope"].append(St)
        out["slope_fd"].append((yp[:, 1:] - ym[:, 1:]) / (yp[:, :1] - ym[:, :1]))
        out["jets"].append(jets)
    return {key: np.array(v) for key, v in out.items()}


def oracle_errors(transport: LeafTransport, oracle, order=JET_ORDER):
    """Relative slope error (formula vs FD) and per-order jet errors (transport vs fit).

    Jet errors are relative to the largest component of the oracle jet of the
    same order; returns ``(slope_err (n,), jet_err (n, order))``.
    """
    sl = oracle["slope"]
    scale = np.maximum(np.abs(sl).max(axis=(1, 2)), 1e-300)
    slope_err = np.abs(sl - oracle["slope_fd"]).max(axis=(1, 2)) / scale
    a = transport.jets[:, 1:order + 1]
    b = oracle["jets"][:, 1:order + 1]
    jet_err = np.abs(a - b).max(-1) / np.maximum(np.abs(b).max(-1), 1e-300)
    return slope_err, jet_err


# -- invariance of Sigma -------------------------------------------------------------------

def jet_margins(jets, M, order=JET_ORDER):
    """``log(M^k) - log|D^k S(0)|`` for ``k = 1..order``, shape (n, order)."""
    nrm = np.linalg.norm(np.asarray(jets)[:, 1:order + 1], axis=-1)
    k = np.arange(1, order + 1)
    with np.errstate(divide="ignore"):
        return k * math.log(M) - np.log(nrm)


def calibrate_M(jet_tables, M_start=0.25, max_doublings=80, order=JET_ORDER):
    """Smallest ``M`` on the grid ``M_start * 2^j`` bounding every jet table."""
    tabs = [np.asarray(j)[:, :order + 1] for j in jet_tables]
    M = M_start
    for _ in range(max_doublings):
        if all(np.all(jet_margins(j, M, order) >= 0) for j in tabs):
            return M
        M *= 2.0
    raise ParameterError("jet bound calibration did not converge")


def _sample_leaves(leaves, n_points):
    """Leaves re-centered at ``n_points`` parameters spread over ``W``."""
    out, owner = [], []
    for i, lf in enumerate(leaves):
        for u0 in np.linspace(-2 * lf.delta, 2 * lf.delta, n_points):
            out.append(recenter(lf, float(u0)) if u0 else lf)
            owner.append(i)
    return out, np.array(owner)


def sigma_jet_tables(model, metric2, perturbation, etas, leaves, t_grid, n_points=3,
                     order=JET_ORDER, t_step=0.25):
    """Jets ``D^k S_{z,eta,t}(0)`` keyed by ``(eta, t)``, plus ``(None, 0)`` for the input."""
    pts, owner = _sample_leaves(leaves, n_points)
    tables = {}
    t_grid = sorted(float(t) for t in t_grid)
    for eta in etas:
        eta = float(eta)
        mdl = fc.perturbed_model(model, perturbation.with_eta(eta)) if eta else model
        cur, t_now = pts, 0.0
        for t in t_grid:
            res = evolve_leaf(mdl, metric2, cur, t - t_now, order, t_step)
            if (None, 0.0) not in tables:
                tables[(None, 0.0)] = res.jets_initial
            tables[(eta, t)] = res.jets
            cur, t_now = res.leaves, t
    return tables, owner


def verify_sigma_invariance(tables, owner, M, etas, t_grid, order=JET_ORDER, fit_orders=(1, 2),
                            C_fit=None, spread=0.2, suite="sigma_invariance"):
    """Jet bounds of evolved leaves and the perturbation comparison.

    ``tables`` comes from :func:`sigma_jet_tables`.  When ``C_fit`` is None it
    is fitted as the largest ratio ``|D^k S_eta - D^k S_0| / (|eta| t M^k)``
    and recorded; the fits on the two halves of the leaf set must agree to
    within ``spread`` (relative).
    """
    etas = [float(e) for e in etas]
    rep = VerificationReport(suite, {"M": M, "etas": etas, "t_grid": [float(t) for t in t_grid],
                                     "order": order})
    init = jet_margins(tables[(None, 0.0)], M, order)
    w = np.unravel_index(np.argmin(init), init.shape)
    rep.add("initial-jet-bound", sample=int(owner[w[0]]), margin=float(init[w]),
            passed=bool(init[w] >= 0), t=0.0, order=int(w[1]) + 1)
    for eta in etas:
        for t in sorted(float(t) for t in t_grid):
            mg = jet_margins(tables[(eta, t)], M, order)
            w = np.unravel_index(np.argmin(mg), mg.shape)
            rep.add("jet-bound", sample=int(owner[w[0]]), margin=float(mg[w]),
                    passed=bool(mg[w] >= 0), t=t, eta=eta, order=int(w[1]) + 1)
    ratios = {k: [] for k in fit_orders}
    for eta in etas:
        if eta == 0.0:
            continue
        for t in sorted(float(t) for t in t_grid):
            diff = np.linalg.norm(tables[(eta, t)] - tables[(0.0, t)], axis=-1)
            for k in fit_orders:
                ratios[k].append(diff[:, k] / (abs(eta) * t * M ** k))
    fits = {}
    for k in fit_orders:
        if not ratios[k]:
            continue
        r = np.stack(ratios[k], 1)
        leaves_ids = np.unique(owner)
        half = np.isin(owner, leaves_ids[: max(1, len(leaves_ids) // 2)])
        c_all = float(r.max())
        c_a = float(r[half].max())
        c_b = float(r[~half].max()) if np.any(~half) else c_a
        C = c_all if C_fit is None else float(C_fit)
        fits[k] = {"C": c_all, "C_first_half": c_a, "C_second_half": c_b}
        dev = abs(c_a / c_b - 1.0)
        rep.add("perturbation-fit-stability", sample=0, margin=spread - dev,
                passed=bool(dev <= spread), order=k, C_first_half=c_a, C_second_half=c_b)
        worst = float(np.min(np.log(C) - np.log(np.maximum(r, 1e-300))))
        rep.add("perturbation-bound", sample=0, margin=worst, passed=bool(worst >= -1e-12),
                order=k)
    rep.note("fitted_C", {str(k): v for k, v in fits.items()})
    return rep


# -- covers -----------------------------------------------------------------------------

def leaf_image_arcs(model, metric2, leaves, t_grid, n=9, tol=1e-8, max_n=129, n_out=2001):
    """Intrinsic metric-two arc length along ``T_-t W+`` for every leaf and time.

    The image tangent length is a smooth function of the leaf parameter; it
    is interpolated at Chebyshev points and integrated exactly, doubling the
    degree until every total length changes by less than ``tol`` (relative).
    Returns a dict keyed by ``(leaf index, t)`` of ``(u, s, stretch)`` on a
    uniform parameter grid, with ``s(0) = 0`` at the image of the center and
    ``stretch = |DT_-t beta'|_2 / |beta'|_2``.
    """
    Ch = np.polynomial.Chebyshev
    leaves = list(leaves)
    t_grid = [float(t) for t in t_grid]
    keys = [(i, t) for i in range(len(leaves)) for t in t_grid]

    def lengths(n):
        x = np.cos(np.pi * (np.arange(n) + 0.5) / n)
        P, V, tt, U = [], [], [], []
        for i, t in keys:
            lf = leaves[i]
            u = lf.half_width * x
            P.append(lf.points(u))
            V.append(lf.tangent(u))
            tt.append(np.full(n, t))
            U.append(u)
        P, V, tt = np.concatenate(P), np.concatenate(V), np.concatenate(tt)
        Pt, J = fc.integrate(model, P, -tt, tangent=True, wrap=False)
        V1 = np.einsum("nij,nj->ni", J, V)
        F, nn = frame_data(metric2, np.concatenate([Pt, P]))
        c = np.linalg.solve(F, np.concatenate([V1, V])[..., None])[..., 0] * nn
        ln = np.linalg.norm(c, axis=1)
        m = len(P)
        return U, ln[:m].reshape(len(keys), n), ln[m:].reshape(len(keys), n)

    prev = None
    while True:
        U, l1, l0 = lengths(n)
        fits = []
        for j, (i, t) in enumerate(keys):
            dom = [-leaves[i].half_width, leaves[i].half_width]
            c1 = Ch.fit(U[j], l1[j], n - 1, domain=dom)
            c0 = Ch.fit(U[j], l0[j], n - 1, domain=dom)
            fits.append((c1, c0, c1.integ()))
        total = np.array([f[2](leaves[i].half_width) - f[2](-leaves[i].half_width)
                          for f, (i, _) in zip(fits, keys)])
        if prev is not None and np.all(np.abs(total - prev) <= tol * total):
            break
        if n >= max_n:
            raise CoveringError("arc length did not converge; increase max_n")
        prev, n = total, 2 * n - 1
    out = {}
    for (c1, c0, arc), (i, t) in zip(fits, keys):
        ug = np.linspace(-leaves[i].half_width, leaves[i].half_width, n_out)
        out[(i, t)] = (ug, arc(ug) - arc(0.0), c1(ug) / c0(ug))
    return out


def expansion_rates(stretches, t):
    """Min and max log stretch per unit time."""
    lr = np.log(np.concatenate([np.ravel(s) for s in stretches])) / t
    return float(lr.min()), float(lr.max())


def choose_B(varsigma, Lam, t_grid):
    """Smallest integer ``B > 2`` with ``e^{vs t} B - 2(e^{L t} - e^{-L t}) >= B`` on the grid."""
    t = np.asarray(t_grid, float)
    t = t[t > 0]
    need = np.concatenate([2 * (np.exp(Lam * t) - np.exp(-Lam * t)) / np.expm1(varsigma * t),
                           [4 * Lam / varsigma]])
    return float(max(3, math.floor(need.max()) + 1))


@dataclass
class CoverResult:
    """Net on the image of one leaf and its partition of unity (arc-length coordinates)."""

    t: float
    Lam: float
    alpha: float
    delta: float
    B: float
    centers: np.ndarray
    arc_W: tuple
    arc_Wplus: tuple
    omega: tuple
    overlap: int = 0
    partition_grid: np.ndarray = None
    partition: np.ndarray = None

    @property
    def size(self):
        return len(self.centers)

    @property
    def ell_max(self):
        Lt = self.Lam * self.t
        return int(math.floor(20.0 * (math.exp(Lt) - math.exp(-Lt)) / Lt)) + 1

    def centers_csv(self):
        return "j,arc\n" + "".join(f"{j},{c!r}\n" for j, c in enumerate(self.centers))


def vitali_cover(s, u, t, Lam, delta, B):
    """Greedy ``alpha``-net (``alpha = Lam t delta / 5``) of the middle piece of an image leaf.

    ``s`` is the arc-length coordinate of ``T_-t W+`` at parameters ``u``.
    Points are visited in mesh order and kept when at distance at least
    ``alpha`` from every kept point.
    """
    if t <= 0:
        raise ParameterError("cover needs t > 0")
    alpha = Lam * t * delta / 5.0
    rad = 2.0 * (math.exp(Lam * t) - math.exp(-Lam * t)) * delta
    inW = np.abs(u) <= 2.0 * delta
    lo_W, hi_W = float(s[inW].min()), float(s[inW].max())
    lo, hi = max(-rad, lo_W), min(rad, hi_W)
    # fine mesh along the arc so the net is not limited by the sampling
    grid = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / (alpha * 1e-3))) + 1))
    centers = []
    for p in grid:
        if not centers or p - centers[-1] >= alpha:
            centers.append(float(p))
    cover = CoverResult(t=float(t), Lam=float(Lam), alpha=alpha, delta=float(delta),
                        B=float(B), centers=np.array(centers), arc_W=(lo_W, hi_W),
                        arc_Wplus=(float(s.min()), float(s.max())), omega=(lo, hi))
    w = np.linspace(lo_W, hi_W, 4001)
    dist = np.min(np.abs(w[:, None] - cover.centers[None, :]), axis=1)
    if np.any(dist >= 2.0 * delta):
        raise CoveringError("net does not cover the image leaf; increase Lambda")
    wp = np.linspace(*cover.arc_Wplus, 8001)
    cover.overlap = int(np.max(np.sum(np.abs(wp[:, None] - cover.centers[None, :]) < 2 * delta, 1)))
    return cover


def _bump(x):
    out = np.zeros_like(x)
    m = np.abs(x) < 1.0
    out[m] = np.exp(-1.0 / (1.0 - x[m] ** 2))
    return out


def partition_of_unity(cover: CoverResult, n=20001, floor=1e-30):
    """Fill ``rho_j = b_j / sum_k b_k`` on a uniform arc grid over ``T_-t W``."""
    w = np.linspace(*cover.arc_W, n)
    b = _bump((w[:, None] - cover.centers[None, :]) / (2.0 * cover.delta))
    tot = b.sum(1)
    if np.any(tot <= floor):
        raise CoveringError("partition denominator below floor; covering margin too thin")
    cover.partition_grid = w
    cover.partition = b / tot[:, None]
    return cover


def interval_net_size(length, alpha):
    """Size of the left-to-right ``alpha``-net of an interval (brute force)."""
    count, p = 0, 0.0
    while p <= length * (1 + 1e-12):
        count += 1
        p += alpha
    return count


def _partition_cr_norm(cover, order):
    """Largest ``|d^k rho_j / d(s/delta)^k|`` for ``k <= order`` (finite differences)."""
    h = (cover.partition_grid[1] - cover.partition_grid[0]) / cover.delta
    best = float(np.max(np.abs(cover.partition)))
    d = cover.partition
    for _ in range(order):
        d = np.gradient(d, h, axis=0)
        best = max(best, float(np.max(np.abs(d[order:-order]))))
    return best


def verify_cover(cover: CoverResult, C_cover=80, C_part=1e4, order=JET_ORDER, rep=None,
                 sample=0):
    """Records for the four cover items, net separation and the 1D net oracle."""
    rep = rep or VerificationReport("covering")
    t, d = cover.t, cover.delta
    w = np.linspace(*cover.arc_W, 4001)
    dist = np.min(np.abs(w[:, None] - cover.centers[None, :]), axis=1)
    rep.add("covering", sample=sample, margin=float(2 * d - dist.max()) / d,
            passed=bool(dist.max() < 2 * d), t=t)
    lo, hi = cover.arc_Wplus
    room = np.minimum(cover.centers - lo, hi - cover.centers) - cover.B * d
    rep.add("containment", sample=sample, margin=float(room.min()) / d,
            passed=bool(room.min() >= 0), t=t)
    rep.add("overlap", sample=sample, margin=float(C_cover - cover.overlap),
            passed=bool(cover.overlap <= C_cover), t=t, overlap=cover.overlap)
    if cover.partition is None:
        partition_of_unity(cover)
    err = float(np.max(np.abs(cover.partition.sum(1) - 1.0)))
    rep.add("partition-sum", sample=sample, margin=1e-10 - err, passed=bool(err <= 1e-10), t=t)
    outside = np.abs(cover.partition_grid[:, None] - cover.centers[None, :]) >= 2 * d
    leak = float(np.max(np.abs(cover.partition[outside]), initial=0.0))
    rep.add("partition-support", sample=sample, margin=-leak, passed=bool(leak == 0.0), t=t)
    cr = _partition_cr_norm(cover, order)
    rep.add("partition-norm", sample=sample, margin=float(math.log(C_part / cr)),
            passed=bool(cr <= C_part), t=t, norm=cr)
    sep = float(np.min(np.diff(cover.centers))) if cover.size > 1 else math.inf
    rep.add("net-separation", sample=sample,
            margin=float(min(sep - cover.alpha, 1e300)) / d,
            passed=bool(sep >= cover.alpha * (1 - 1e-12)), t=t)
    oracle = interval_net_size(cover.omega[1] - cover.omega[0], cover.alpha)
    rep.add("net-size-oracle", sample=sample, margin=float(1 - abs(cover.size - oracle)),
            passed=bool(abs(cover.size - oracle) <= 1), t=t, size=cover.size, oracle=oracle)
    rep.add("net-size-bound", sample=sample, margin=float(cover.ell_max - cover.size),
            passed=bool(cover.size <= cover.ell_max), t=t)
    return rep
