"""Resolvents of matrix semigroups by quadrature, and the head/tail split.

For a bounded semigroup ``L_t = exp(t G)`` and ``Re z > 0``,

    R(z)^m = 1/(m-1)! int_0^inf t^(m-1) e^(-z t) L_t dt,

and the integral splits at ``3K`` into a head ``Q_{K,m}`` (the window
``[0, 3K]``) and a tail ``R_{K,m}``.  Everything here is finite dimensional;
closed forms ``(z - G)^-1`` serve as oracles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import NumericalError, ParameterError
from .report import VerificationReport

__all__ = [
    "SemigroupSample", "ResolventSplit", "resolvent", "resolvent_closed_form",
    "power_integral", "split_head_tail", "head_norms", "verify_head_bound",
    "covering_radius_probe", "verify_resolvent_identities", "truncation_horizon",
]

GL_NODES = 24


@dataclass
class SemigroupSample:
    """Semigroup generated by ``G`` with uniform bound ``C_L = sup_t |L_t|``.

    ``C_L`` is measured on a time grid reaching well past the slowest
    non-zero decay; for a normal generator it equals one.
    """

    generator: np.ndarray
    C_L: float = field(default=None)
    name: str = "sample"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.generator))
        if G.shape[0] != G.shape[1]:
            raise ParameterError("generator must be square")
        self.generator = G
        ev = np.linalg.eigvals(G)
        if np.max(ev.real) > 1e-12:
            raise ParameterError(f"spectral abscissa {np.max(ev.real):.3g} > 0: semigroup unbounded")
        self.eigenvalues = ev[np.lexsort((ev.imag, -ev.real))]
        if self.C_L is None:
            self.C_L = self._measure_bound()

    @property
    def dim(self):
        return self.generator.shape[0]

    def _measure_bound(self, n_t=400):
        neg = self.eigenvalues.real[self.eigenvalues.real < -1e-12]
        span = 20.0 / np.min(-neg) if len(neg) else 20.0
        ts = np.linspace(0.0, span, n_t)
        return float(max(1.0, np.max(np.linalg.norm(self(ts), ord=2, axis=(1, 2)))))

    def __call__(self, t):
        """``L_t`` for an array of times, shape (n_t, d, d)."""
        t = np.atleast_1d(np.asarray(t, float))
        return np.stack([linalg.expm(ti * self.generator) for ti in t])

    def semigroup_defect(self, rng, n=8, t_max=3.0):
        """``max |L_s L_t - L_{s+t}|`` over random pairs."""
        s, t = rng.uniform(0.0, t_max, (2, n))
        Ls, Lt, Lst = self(s), self(t), self(s + t)
        return float(np.max(np.abs(Ls @ Lt - Lst)))

    @classmethod
    def scalar(cls, b):
        return cls(np.array([[-float(b)]]), name=f"scalar(b={b})")

    @classmethod
    def random(cls, dim, rng, damping=0.0, real_spectrum=False, spread=3.0):
        """Random generator with spectral abscissa ``-damping``.

        ``real_spectrum`` builds ``V diag(-d) V^-1`` with real ``d >= damping``
        and a well-conditioned random ``V``.
        """
        if real_spectrum:
            d = np.sort(rng.uniform(0.0, spread, dim))
            d = d - d[0] + damping
            V = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim)) / math.sqrt(dim)
            G = V @ np.diag(-d) @ np.linalg.inv(V)
        else:
            A = rng.standard_normal((dim, dim)) / math.sqrt(dim)
            G = A - (np.max(np.linalg.eigvals(A).real) + damping) * np.eye(dim)
        return cls(G, name=f"random{dim}")


@dataclass
class ResolventSplit:
    z: complex
    m: int
    K: float
    head: np.ndarray
    tail: np.ndarray
    meta: dict


def _check_z(z):
    if not np.real(z) > 0:
        raise ParameterError(f"Re z = {np.real(z)} must be positive")


def truncation_horizon(a, m, C_L, tol, lo=1.0, iters=60):
    """``H`` with ``C_L H^(m-1) e^(-a H) / ((m-1)! a) <= tol`` by fixed-point iteration."""
    H = max(lo, 1.0 / a)
    c = math.log(C_L / (tol * a * math.factorial(m - 1)))
    for _ in range(iters):
        Hn = max(lo, ((m - 1) * math.log(max(H, 1.0)) + c) / a)
        if abs(Hn - H) < 1e-12 * H:
            break
        H = Hn
    return H


def _panels(lo, hi, width):
    n = max(1, int(math.ceil((hi - lo) / width)))
    return np.linspace(lo, hi, n + 1)


def _gl_nodes(edges, q=GL_NODES):
    x, w = np.polynomial.legendre.leggauss(q)
    a, b = edges[:-1, None], edges[1:, None]
    t = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    wt = 0.5 * (b - a) * w[None, :]
    return t.ravel(), wt.ravel()


def _weighted_sum(sample, z, m, t, w, shift=0.0):
    """``sum_k w_k (t_k + shift)^(m-1) e^(-z (t_k + shift)) L_(t_k + shift) / (m-1)!``."""
    tt = t + shift
    logc = (m - 1) * np.log(np.maximum(tt, 1e-300)) - math.lgamma(m)
    coef = w * np.exp(logc - z * tt) if m > 1 else w * np.exp(-z * tt)
    return np.tensordot(coef, sample(tt), axes=1)


def power_integral(sample, z, m, lo, hi=math.inf, tol=1e-13, width=None):
    """``1/(m-1)! int_lo^hi t^(m-1) e^(-z t) L_t dt`` by composite Gauss-Legendre.

    An infinite upper limit is cut at the truncation horizon; the remainder
    beyond it is added with Gauss-Laguerre nodes.  Returns ``(value, meta)``.
    """
    _check_z(z)
    a = float(np.real(z))
    scale = max(1.0, abs(z), float(np.linalg.norm(sample.generator, 2)))
    width = width or min(1.0, 4.0 / scale)
    meta = {"lo": lo, "hi": hi}
    if math.isinf(hi):
        H = max(lo, truncation_horizon(a, m, sample.C_L, tol))
        meta["horizon"] = H
        edges = _panels(lo, H, width)
        t, w = _gl_nodes(edges)
        val = _weighted_sum(sample, z, m, t, w)
        # remainder past H: substitute t = H + s/a, weight e^-s
        xs, ws = special.roots_laguerre(24)
        tail = _weighted_sum(sample, z, m, xs / a, ws * np.exp(xs) / a, shift=H)
        meta["tail_norm"] = float(np.linalg.norm(tail, 2))
        val = val + tail
        meta["nodes"] = int(len(t) + len(xs))
    else:
        edges = _panels(lo, hi, width)
        t, w = _gl_nodes(edges)
        val = _weighted_sum(sample, z, m, t, w)
        meta["nodes"] = int(len(t))
    return val, meta


def resolvent_closed_form(sample, z):
    return np.linalg.inv(z * np.eye(sample.dim) - sample.generator)


def resolvent(z, sample, tol=1e-13):
    """``R(z) = int_0^inf e^(-z t) L_t dt`` by quadrature."""
    R, _ = power_integral(sample, z, 1, 0.0, math.inf, tol)
    return R


def split_head_tail(z, m, K, sample, tol=1e-13):
    """Head ``Q_{K,m}`` on ``[0, 3K]`` and tail ``R_{K,m}`` on ``[3K, inf)``.

    ``meta`` records the reconstruction error against ``(z - G)^-m`` and the
    mismatch of the factorised tail ``L_K [e^(-2Kz)/(m-1)! int_K^inf
    (t + 2K)^(m-1) e^(-z t) L_t dt] L_K``.
    """
    if m < 1 or K <= 0:
        raise ParameterError("need m >= 1 and K > 0")
    _check_z(z)
    head, mh = power_integral(sample, z, m, 0.0, 3.0 * K, tol)
    tail, mt = power_integral(sample, z, m, 3.0 * K, math.inf, tol)
    Rm = np.linalg.matrix_power(resolvent_closed_form(sample, z), m)
    scale = max(1.0, float(np.linalg.norm(Rm, 2)))
    # factorised tail: inner integral over [K, inf) with shifted polynomial weight
    a = float(np.real(z))
    H = max(K, truncation_horizon(a, m, sample.C_L, tol))
    edges = _panels(K, H + 2.0 * K, min(1.0, 4.0 / max(1.0, abs(z))))
    t, w = _gl_nodes(edges)
    logc = (m - 1) * np.log(t + 2.0 * K) - math.lgamma(m)
    inner = np.tensordot(w * np.exp(logc - z * t), sample(t), axes=1)
    LK = sample([K])[0]
    fact = LK @ (np.exp(-2.0 * K * z) * inner) @ LK
    meta = {"head": mh, "tail": mt,
            "reconstruction_error": float(np.linalg.norm(head + tail - Rm, 2)) / scale,
            "factorised_error": float(np.linalg.norm(fact - tail, 2)) / scale}
    return ResolventSplit(z=z, m=m, K=float(K), head=head, tail=tail, meta=meta)


def head_norms(sample, z, K, m_grid, tol=1e-13):
    """Spectral norms ``|Q_{K,m}(z)|`` for ``m`` in ``m_grid``."""
    return np.array([np.linalg.norm(power_integral(sample, z, int(m), 0.0, 3.0 * K, tol)[0], 2)
                     for m in m_grid])


def verify_head_bound(sample, z, K, m_grid, ratio_tol=0.1, rep=None, suite="resolvent"):
    """Head bound ``|Q_{K,m}| <= C_L (3K)^m / m!`` and the factorial ratio test.

    The ratio test checks ``|Q_{m+1}| / |Q_m| <= 3K/(m+1) (1 + ratio_tol)`` on
    the upper half of ``m_grid`` (consecutive values only).
    """
    rep = rep or VerificationReport(suite)
    m_grid = [int(m) for m in m_grid]
    q = head_norms(sample, z, K, m_grid)
    for m, qm in zip(m_grid, q):
        bound = math.log(sample.C_L) + m * math.log(3.0 * K) - math.lgamma(m + 1)
        mg = bound - math.log(qm)
        rep.add("head-bound", sample=m, margin=mg, passed=bool(mg >= 0), m=m, K=float(K),
                sample_name=sample.name)
    half = m_grid[len(m_grid) // 2]
    for (m0, q0), (m1, q1) in zip(zip(m_grid, q), zip(m_grid[1:], q[1:])):
        if m1 != m0 + 1 or m0 < half:
            continue
        lim = 3.0 * K / m1 * (1.0 + ratio_tol)
        mg = math.log(lim) - math.log(q1 / q0)
        rep.add("ratio-test", sample=m0, margin=mg, passed=bool(mg >= 0), m=m0, K=float(K),
                sample_name=sample.name)
    rep.note(f"head_norms/{sample.name}/K={K!r}",
             [[m, float(v)] for m, v in zip(m_grid, q)])
    return rep


def verify_resolvent_identities(sample, zs, tol=1e-9, rep=None, suite="resolvent", rng=None):
    """Closed form, spectral radius, resolvent identity and semigroup law."""
    rep = rep or VerificationReport(suite)
    Rs = []
    for i, z in enumerate(zs):
        R = resolvent(z, sample)
        Rc = resolvent_closed_form(sample, z)
        err = float(np.linalg.norm(R - Rc, 2))
        rep.add("closed-form", sample=i, margin=tol - err, passed=bool(err <= tol),
                sample_name=sample.name, error=err)
        rad = float(np.max(np.abs(np.linalg.eigvals(R))))
        lim = 1.0 / np.real(z) + tol
        rep.add("spectral-radius", sample=i, margin=lim - rad, passed=bool(rad <= lim),
                sample_name=sample.name)
        Rs.append(R)
    for i in range(len(zs) - 1):
        z, w = zs[i], zs[i + 1]
        lhs = Rs[i] - Rs[i + 1]
        rhs = (w - z) * Rs[i] @ Rs[i + 1]
        err = float(np.linalg.norm(lhs - rhs, 2))
        rep.add("resolvent-identity", sample=i, margin=tol - err, passed=bool(err <= tol),
                sample_name=sample.name)
    if rng is not None:
        err = sample.semigroup_defect(rng)
        rep.add("semigroup-law", sample=0, margin=1e-12 - err, passed=bool(err <= 1e-12),
                sample_name=sample.name)
    return rep


def _lattice_count(s1, s2, eps):
    """Points of ``eps Z^2`` inside the ellipse with semi-axes ``s1, s2``."""
    k1 = int(math.floor(s1 / eps))
    i = np.arange(-k1, k1 + 1) * eps
    rest = np.clip(1.0 - (i / s1) ** 2, 0.0, None)
    return int(np.sum(2 * np.floor(s2 * np.sqrt(rest) / eps) + 1))


def covering_radius_probe(sample, z, n_grid, eps_grid=(1e-1, 1e-2), rate_tol=0.1,
                          fit_tol=1e-3, rep=None, suite="resolvent"):
    """Decay of ``R(z)^n`` (unit ball) and of its part off the top eigenspace.

    Radii are the top singular values; lattice counts on the top two singular
    directions give an upper-bound probe of covering numbers.  The fitted
    rates are compared with ``1/a`` and with the oracle
    ``1/|z - lambda_2|`` (``= 1/(a + |Re lambda_2|)`` for real spectra).
    Rates are fitted on the upper half of ``n_grid``; ``|R^n|^(1/n)``
    approaches the spectral radius from above, hence the relative ``fit_tol``
    on the comparison with ``1/a``.
    """
    rep = rep or VerificationReport(suite)
    a = float(np.real(z))
    R = resolvent_closed_form(sample, z)
    ev = sample.eigenvalues
    n_grid = [int(n) for n in n_grid]
    # spectral projector onto the top eigenvalue of G
    w, V = np.linalg.eig(sample.generator)
    top = np.isclose(w, ev[0], atol=1e-9)
    Vi = np.linalg.inv(V)
    P = (V[:, top] @ Vi[top, :])
    Q = np.eye(sample.dim) - P
    rad, rad_c, counts = [], [], []
    for n in n_grid:
        Rn = np.linalg.matrix_power(R, n)
        s = np.linalg.svd(Rn, compute_uv=False)
        rad.append(s[0])
        rad_c.append(np.linalg.svd(Q @ Rn, compute_uv=False)[0] if np.any(~top) else 0.0)
        s2 = s[1] if len(s) > 1 else s[0] * 0.0
        counts.append([_lattice_count(s[0], max(s2, 1e-300), e) for e in eps_grid])
    n = np.array(n_grid, float)
    rad = np.array(rad)
    late = slice(len(n) // 2, None)
    rate = math.exp(np.polyfit(n[late], np.log(rad[late]), 1)[0])
    lim = (1.0 / a) * (1 + fit_tol)
    rep.add("decay-rate", sample=0, margin=lim - rate, passed=bool(rate <= lim),
            sample_name=sample.name, rate=rate)
    if np.any(~top):
        rate_c = math.exp(np.polyfit(n[late], np.log(np.array(rad_c)[late]), 1)[0])
        lam2 = ev[~np.isclose(ev, ev[0], atol=1e-9)][0]
        oracle = 1.0 / abs(z - lam2)
        gap = float(ev[0].real - lam2.real)
        rel = abs(rate_c / oracle - 1.0)
        rep.add("restricted-rate", sample=0, margin=rate_tol - rel, passed=bool(rel <= rate_tol),
                sample_name=sample.name, rate=rate_c, oracle=oracle)
        bound = 1.0 / (a + gap)
        rep.add("restricted-bound", sample=0, margin=bound * (1 + rate_tol) - rate_c,
                passed=bool(rate_c <= bound * (1 + rate_tol)), sample_name=sample.name)
        rep.note(f"gap/{sample.name}", gap)
    else:
        rep.note(f"gap/{sample.name}", "inf")
    rep.note(f"covering/{sample.name}", {"n": n_grid, "radii": [float(r) for r in rad],
                                         "counts": counts, "eps": list(eps_grid)})
    return rep


def check_scalar_head(b, z, K, m):
    """Closed form ``gamma(m, 3K(z+b)) / (z+b)^m`` (regularised gamma times ``(z+b)^-m``)."""
    c = z + b
    if np.imag(c) != 0:
        raise NumericalError("closed form implemented for real z + b only")
    c = float(np.real(c))
    return special.gammainc(m, 3.0 * K * c) / c ** m
