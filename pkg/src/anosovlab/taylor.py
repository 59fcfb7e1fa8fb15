"""Truncated univariate Taylor series with array-valued coefficients.

A :class:`Jet` stores the normalized Taylor coefficients ``c[k] = f^{(k)}(0)/k!``
of a function of one real parameter, for a whole batch of functions at once.
Coefficients live in an array of shape ``(degree + 1, *shape)``; arithmetic
broadcasts over ``shape`` exactly like numpy, so code written against plain
arrays can be pushed through with jets to obtain derivatives of the result
along a curve ("jet transport").
"""
from __future__ import annotations

import math

import numpy as np

__all__ = ["Jet", "sin", "cos", "stack", "where", "const", "inv", "compose",
           "revert", "derivatives", "from_derivatives"]


class Jet:
    # make numpy return NotImplemented so the reflected Jet operators run
    __array_ufunc__ = None

    def __init__(self, coeffs):
        self.c = np.asarray(coeffs, dtype=float)

    @classmethod
    def variable(cls, x0, degree):
        """The identity curve ``x0 + tau`` truncated at ``degree``."""
        x0 = np.asarray(x0, dtype=float)
        c = np.zeros((degree + 1,) + x0.shape)
        c[0] = x0
        if degree >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value, degree):
        value = np.asarray(value, dtype=float)
        c = np.zeros((degree + 1,) + value.shape)
        c[0] = value
        return cls(c)

    @property
    def degree(self) -> int:
        return self.c.shape[0] - 1

    @property
    def shape(self):
        return self.c.shape[1:]

    @property
    def ndim(self):
        return self.c.ndim - 1

    def __repr__(self):
        return f"Jet(degree={self.degree}, shape={self.shape})"

    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.c[(slice(None),) + key])

    def __len__(self):
        return self.shape[0]

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.c + other.c)
        c = self.c.copy() + np.zeros_like(np.asarray(other, dtype=float))
        c[0] = c[0] + other
        return Jet(c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other, dtype=float))
        a, b = self.c, other.c
        d = self.degree
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
        for k in range(d + 1):
            acc = a[0] * b[k]
            for i in range(1, k + 1):
                acc = acc + a[i] * b[k - i]
            out[k] = acc
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.c / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = Jet.constant(np.ones(self.shape), self.degree)
        base = self
        while n:
            if n & 1:
                out = out * base
            n >>= 1
            if n:
                base = base * base
        return out

    def __matmul__(self, other):
        a = self.c
        b = other.c if isinstance(other, Jet) else None
        if b is None:
            return Jet(a @ np.asarray(other, dtype=float))
        d = self.degree
        out = None
        for k in range(d + 1):
            acc = a[0] @ b[k]
            for i in range(1, k + 1):
                acc = acc + a[i] @ b[k - i]
            if out is None:
                out = np.zeros((d + 1,) + acc.shape)
            out[k] = acc
        return Jet(out)

    def __rmatmul__(self, other):
        return Jet(np.asarray(other, dtype=float) @ self.c)

    def reciprocal(self):
        a = self.c
        b = np.zeros_like(a)
        b[0] = 1.0 / a[0]
        for k in range(1, self.degree + 1):
            acc = a[1] * b[k - 1]
            for i in range(2, k + 1):
                acc = acc + a[i] * b[k - i]
            b[k] = -acc * b[0]
        return Jet(b)

    def swap_trailing(self):
        """Transpose the last two coefficient axes (matrix transpose)."""
        return Jet(np.swapaxes(self.c, -1, -2))

    def sum(self, axis):
        axis = axis if axis < 0 else axis + 1
        return Jet(self.c.sum(axis=axis))


def _sincos(x: Jet):
    a = x.c
    s = np.zeros_like(a)
    c = np.zeros_like(a)
    s[0] = np.sin(a[0])
    c[0] = np.cos(a[0])
    for k in range(1, x.degree + 1):
        ss = 0.0
        cc = 0.0
        for j in range(1, k + 1):
            ss = ss + j * a[j] * c[k - j]
            cc = cc + j * a[j] * s[k - j]
        s[k] = ss / k
        c[k] = -cc / k
    return Jet(s), Jet(c)


def sin(x):
    if isinstance(x, Jet):
        return _sincos(x)[0]
    return np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return _sincos(x)[1]
    return np.cos(x)


def const(x):
    """Value at the expansion point (the constant coefficient)."""
    return x.c[0] if isinstance(x, Jet) else np.asarray(x)


def stack(items, axis=-1):
    items = list(items)
    if not any(isinstance(v, Jet) for v in items):
        return np.stack(items, axis=axis)
    degree = next(v.degree for v in items if isinstance(v, Jet))
    shape = np.broadcast_shapes(*(v.shape if isinstance(v, Jet) else np.shape(v) for v in items))
    cs = []
    for v in items:
        c = v.c if isinstance(v, Jet) else Jet.constant(v, degree).c
        cs.append(np.broadcast_to(c, (degree + 1,) + shape))
    axis = axis if axis < 0 else axis + 1
    return Jet(np.stack(cs, axis=axis))


def where(mask, a, b):
    """Select between ``a`` and ``b`` per batch element; ``mask`` is a plain boolean array."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.where(mask, a, b)
    degree = a.degree if isinstance(a, Jet) else b.degree
    ca = a.c if isinstance(a, Jet) else Jet.constant(a, degree).c
    cb = b.c if isinstance(b, Jet) else Jet.constant(b, degree).c
    return Jet(np.where(mask, ca, cb))


def inv(m: Jet) -> Jet:
    """Inverse of a square-matrix-valued series (trailing two axes)."""
    a = m.c
    b = np.zeros_like(a)
    b[0] = np.linalg.inv(a[0])
    for k in range(1, m.degree + 1):
        acc = a[1] @ b[k - 1]
        for i in range(2, k + 1):
            acc = acc + a[i] @ b[k - i]
        b[k] = -b[0] @ acc
    return Jet(b)


def compose(f: Jet, g: Jet) -> Jet:
    """Series of ``f(g(tau))`` where ``g`` has zero constant term.

    ``f`` is a series in its own variable; ``g`` is scalar-valued with a shape
    broadcastable against ``f.shape``'s leading part.
    """
    if np.any(np.abs(g.c[0]) > 0):
        raise ValueError("inner series must vanish at the expansion point")
    d = f.degree
    gc = g.c
    extra = f.c.ndim - gc.ndim
    gcb = gc.reshape(gc.shape + (1,) * extra)
    # Horner in the inner series
    out = Jet.constant(f.c[d], d)
    gj = Jet(gcb)
    for k in range(d - 1, -1, -1):
        out = out * gj + f.c[k]
    return out


def revert(g: Jet) -> Jet:
    """Compositional inverse ``h`` of a scalar series with ``g(0) = 0``, ``g'(0) != 0``."""
    d = g.degree
    g1 = g.c[1]
    h = np.zeros_like(g.c)
    if d >= 1:
        h[1] = 1.0 / g1
    hj = Jet(h)
    ident = np.zeros_like(g.c)
    if d >= 1:
        ident[1] = 1.0
    for _ in range(d):
        resid = compose(g, hj).c - ident
        hj = Jet(hj.c - resid / g1)
    return hj


def derivatives(x: Jet) -> np.ndarray:
    """Derivatives ``f^{(k)}(0)`` for ``k = 0..degree``."""
    fact = np.array([math.factorial(k) for k in range(x.degree + 1)], dtype=float)
    return x.c * fact.reshape((-1,) + (1,) * (x.c.ndim - 1))


def from_derivatives(d) -> Jet:
    d = np.asarray(d, dtype=float)
    fact = np.array([math.factorial(k) for k in range(d.shape[0])], dtype=float)
    return Jet(d / fact.reshape((-1,) + (1,) * (d.ndim - 1)))
