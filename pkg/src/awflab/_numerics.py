"""Shared numerical kernels: Gauss-Legendre rules, cancellation-free power
differences and vectorised monotone root finding."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_nodes(a, b, n):
    """Map an n-point Gauss rule onto [a, b] (broadcasting over a, b).

    Returns nodes and weights with a trailing axis of length n.
    """
    x, w = gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_nodes(breaks, n):
    """Gauss nodes on every sub-interval of sorted break points.

    ``breaks`` has shape (..., k); the result has trailing size (k-1)*n.
    Zero-length pieces get zero weight, so padded break lists are fine.
    """
    breaks = np.asarray(breaks, dtype=float)
    t, w = panel_nodes(breaks[..., :-1], breaks[..., 1:], n)
    shape = breaks.shape[:-1] + (-1,)
    return t.reshape(shape), w.reshape(shape)


def pow_diff(p, q, beta):
    """p**beta - q**beta for p, q > 0 without catastrophic cancellation."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return q**beta * np.expm1(beta * np.log1p((p - q) / q))


def root_shift(q, d, beta):
    """(q**beta + d)**(1/beta) - q, accurate when |d| << q**beta.

    Returns nan where q**beta + d < 0.
    """
    q = np.asarray(q, dtype=float)
    d = np.asarray(d, dtype=float)
    ratio = d / q**beta
    with np.errstate(invalid="ignore", divide="ignore"):
        out = q * np.expm1(np.log1p(ratio) / beta)
    return np.where(ratio < -1.0, np.nan, np.where(ratio == -1.0, -q, out))


def signed_pow(t, beta):
    t = np.asarray(t, dtype=float)
    return np.sign(t) * np.abs(t) ** beta


def bisect_monotone(fun, lo, hi, iters=100, xtol=0.0):
    """Vectorised bisection for functions with opposite signs at lo and hi.

    Entries without a sign change are returned as nan.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = fun(lo)
    fhi = fun(hi)
    ok = np.sign(flo) * np.sign(fhi) <= 0
    rising = flo < fhi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        go_right = np.where(rising, fm < 0, fm > 0)
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if np.all((hi - lo) <= np.maximum(xtol, 4e-16 * np.abs(hi))):
            break
    root = 0.5 * (lo + hi)
    return np.where(ok, root, np.nan)


def pow_delta(q, d, beta):
    """(q + d)**beta - q**beta for q > 0, q + d >= 0, computed from the
    increment d so that nothing large is subtracted."""
    q = np.asarray(q, dtype=float)
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = q**beta * np.expm1(beta * np.log1p(d / q))
    return np.where(d == -q, -(q**beta), out)
