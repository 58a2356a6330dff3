"""Adapted rectangles, their translates along the curve, and the sets where a
forward translate of Q meets a backward translate of P.

Coordinates
-----------
Near P the absolute second coordinate is of size (A2 l)^beta, so every hot
path works with offsets: ``xi = x - u`` for points of Q and ``zeta = z - v``
for points of P (u, v the lower-left corners).  Intervals are computed
relative to a reference parameter (A1 l or A2 l) so no large quantities are
ever subtracted.  The public functions taking absolute points are thin
wrappers around these offset kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from ._numerics import pow_delta, root_shift
from .curve import NormalizedCurve, eval_curve

__all__ = [
    "GeometryError", "IntersectionError", "GammaRect", "AwfGeometry", "WSet",
    "WSetDescriptor", "Interval", "c_beta", "make_geometry", "eta",
    "solve_intersection", "solve_offsets", "solve_offsets_rel", "interval_x_W1",
    "interval_y_P", "interval_y_Q", "membership_W", "layer_index", "eta_layer", "measure_W1",
    "w_set", "residual_sign_changes", "width_ratio_bound", "width_ratio_samples",
]


class GeometryError(ValueError):
    pass


class IntersectionError(RuntimeError):
    """No sign change on the bracket: the uniqueness lemma would be violated."""


@dataclass(frozen=True)
class GammaRect:
    corner: tuple
    ell: float

    def __post_init__(self):
        if not self.ell > 0:
            raise GeometryError("side length must be positive")
        object.__setattr__(self, "corner", (float(self.corner[0]), float(self.corner[1])))

    def sides(self, beta):
        return self.ell, self.ell**beta

    def area(self, beta):
        return self.ell ** (1.0 + beta)

    def vertices(self, beta):
        u1, u2 = self.corner
        l1, l2 = self.sides(beta)
        return {"lb": (u1, u2), "rb": (u1 + l1, u2), "lt": (u1, u2 + l2), "rt": (u1 + l1, u2 + l2)}

    def contains(self, pt, beta, slack=1e-12):
        l1, l2 = self.sides(beta)
        d1 = np.asarray(pt[0], dtype=float) - self.corner[0]
        d2 = np.asarray(pt[1], dtype=float) - self.corner[1]
        s1, s2 = slack * l1, slack * max(l2, 1.0)
        return (d1 >= -s1) & (d1 <= l1 + s1) & (d2 >= -s2) & (d2 <= l2 + s2)

    def translate(self, vec):
        return GammaRect((self.corner[0] + vec[0], self.corner[1] + vec[1]), self.ell)


def c_beta(beta):
    return 3.0 ** (beta / (beta - 1.0)) + 10.0


@dataclass(frozen=True)
class AwfGeometry:
    curve: NormalizedCurve
    Q: GammaRect
    A1: float
    A2: float = field(init=False)
    C_beta: float = field(init=False)
    V1: GammaRect = field(init=False)
    P: GammaRect = field(init=False)
    V2: GammaRect = field(init=False)

    def __post_init__(self):
        if not self.A1 > 10:
            raise GeometryError(f"A1 must exceed 10, got {self.A1}")
        cb = c_beta(self.curve.beta)
        a2 = cb * self.A1
        ell = self.Q.ell
        set_ = object.__setattr__
        set_(self, "C_beta", cb)
        set_(self, "A2", a2)
        set_(self, "V1", self.Q.translate(eval_curve(self.curve, self.A1 * ell)))
        set_(self, "P", self.V1.translate(eval_curve(self.curve, a2 * ell)))
        set_(self, "V2", self.P.translate(eval_curve(self.curve, -self.A1 * ell)))

    @property
    def beta(self):
        return self.curve.beta

    @property
    def ell(self):
        return self.Q.ell

    @property
    def a1(self):
        return self.A1 * self.Q.ell

    @property
    def a2(self):
        return self.A2 * self.Q.ell

    @property
    def u(self):
        return self.Q.corner

    @property
    def v(self):
        return self.P.corner

    @property
    def v_lt(self):
        return self.P.vertices(self.beta)["lt"]

    @property
    def v_rb(self):
        return self.P.vertices(self.beta)["rb"]

    @property
    def side2(self):
        return self.Q.ell**self.beta

    def closing_corner(self):
        """Corner of V2 + gamma(-A2 l); equals Q's corner up to rounding."""
        return self.V2.translate(eval_curve(self.curve, -self.A2 * self.ell)).corner

    def reflected(self):
        """Geometry of the point reflection x -> -x: Q' = -P, P' = -Q."""
        l1, l2 = self.P.sides(self.beta)
        corner = (-(self.v[0] + l1), -(self.v[1] + l2))
        return AwfGeometry(self.curve, GammaRect(corner, self.ell), self.A1)

    def to_record(self):
        return {
            "beta": self.beta, "ell": self.ell, "A1": self.A1, "A2": self.A2,
            "C_beta": self.C_beta,
            "Q": list(self.Q.corner), "V1": list(self.V1.corner),
            "P": list(self.P.corner), "V2": list(self.V2.corner),
            "v_lt": list(self.v_lt), "v_rb": list(self.v_rb),
        }


def make_geometry(curve, Q, A1):
    if not isinstance(curve, NormalizedCurve):
        raise GeometryError("geometry needs a normalised curve")
    return AwfGeometry(curve, Q, float(A1))


class WSet(str, Enum):
    W1 = "W1"
    W2 = "W2"


@dataclass(frozen=True)
class WSetDescriptor:
    which: WSet
    geometry: AwfGeometry
    t_range: tuple
    s_range: tuple


def a1_window(geom):
    return (geom.A1 - 2.0) * geom.ell, (geom.A1 + 2.0) * geom.ell


def a2_window(geom):
    return (geom.A2 - 3.0) * geom.ell, (geom.A2 + 3.0) * geom.ell


def w_set(geom, which="W1"):
    which = WSet(which)
    if which is WSet.W1:
        return WSetDescriptor(which, geom, a1_window(geom), a2_window(geom))
    return WSetDescriptor(which, geom, a2_window(geom), a1_window(geom))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    @property
    def empty(self):
        return not self.hi >= self.lo

    @property
    def width(self):
        return 0.0 if self.empty else self.hi - self.lo

    def __contains__(self, t):
        return self.lo <= t <= self.hi


# ---------------------------------------------------------------------------
# intersection equation


def eta(geom, x, xprime, t):
    """t^beta + (rho - t)^beta with rho = (A1+A2) l + x1' - x1."""
    b = geom.beta
    rho = (geom.A1 + geom.A2) * geom.ell + (xprime[0] - x[0])
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > rho / 2 * (1 + 1e-15)):
        raise GeometryError("t outside the monotone range [0, rho/2]")
    out = t**b + (rho - t) ** b
    return float(out) if out.ndim == 0 else out


def _residual_rel(geom, dx1, d2, dt):
    """eta(t) - eta(root) written through increments around (A1 l, A2 l),
    with t = A1 l + dt.

    dx1 = x1' - x1 and d2 = x2' - x2, with x' = y - gamma(A1 l) - gamma(A2 l).
    """
    a1, a2, b = geom.a1, geom.a2, geom.beta
    return pow_delta(a1, dt, b) + pow_delta(a2, dx1 - dt, b) - d2


def _residual(geom, dx1, d2, t):
    return _residual_rel(geom, dx1, d2, t - geom.a1)


def _residual_slope_rel(geom, dx1, dt):
    a1, a2, b = geom.a1, geom.a2, geom.beta
    return b * ((a1 + dt) ** (b - 1) - (a2 + (dx1 - dt)) ** (b - 1))


def _residual_slope(geom, dx1, t):
    return _residual_slope_rel(geom, dx1, t - geom.a1)


def solve_offsets_rel(geom, dx1, d2, max_iter=60):
    """Vectorised root of the intersection equation, relative to (A1 l, A2 l).

    The residual is convex and decreasing in t, so a Newton step from any
    point of the bracket lands at or left of the root and the iterates then
    increase monotonically.  The start is the linearisation about
    (t, |s|) = (A1 l, A2 l).  Returns ``(dt, dsigma)`` with t = A1 l + dt and
    |s| = A2 l + dsigma, nan where the A1 window holds no root.

    Working in increments keeps the digits that matter: for large A1 the
    widths |I(y, P)| are tiny next to A2 l, and forming t or |s| in absolute
    terms would round them away.
    """
    dx1 = np.asarray(dx1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    ell = geom.ell
    lo, hi = -2.0 * ell, 2.0 * ell
    a1, a2, b = geom.a1, geom.a2, geom.beta
    ok = (_residual_rel(geom, dx1, d2, lo) >= 0) & (_residual_rel(geom, dx1, d2, hi) <= 0)
    slope0 = b * (a1 ** (b - 1) - a2 ** (b - 1))
    dt = np.clip(-(b * a2 ** (b - 1) * dx1 - d2) / slope0, lo, hi)
    dt = np.where(ok, dt, lo)
    for _ in range(max_iter):
        f = _residual_rel(geom, dx1, d2, dt)
        step = -f / _residual_slope_rel(geom, dx1, dt)
        step = np.where(ok, step, 0.0)
        dt_new = np.clip(dt + step, lo, hi)
        moved = np.abs(dt_new - dt)
        dt = dt_new
        # quadratic convergence: after a step below 1e-12 l the error is
        # far under one ulp, and waiting for a zero step can cycle
        if np.all(moved <= 1e-12 * ell):
            break
    return np.where(ok, dt, np.nan), np.where(ok, dx1 - dt, np.nan)


def solve_offsets(geom, dx1, d2, max_iter=60):
    """:func:`solve_offsets_rel` in absolute terms: ``(t, sigma)`` with
    sigma = |s|."""
    dt, ds = solve_offsets_rel(geom, dx1, d2, max_iter)
    return geom.a1 + dt, geom.a2 + ds


def solve_residual(geom, dx1, d2, t):
    """Residual of the intersection equation in units of t: |F| / |F'|."""
    return np.abs(_residual(geom, dx1, d2, t) / _residual_slope(geom, dx1, t))


def residual_sign_changes(geom, dx1, d2, n=10_000):
    """Sign changes of the intersection residual on an n-point grid of the
    A1 window (vectorised over the offset pairs)."""
    lo, hi = a1_window(geom)
    t = np.linspace(lo, hi, n)
    F = _residual(geom, np.asarray(dx1, float)[..., None], np.asarray(d2, float)[..., None], t)
    sg = np.sign(F)
    return np.count_nonzero(sg[..., 1:] * sg[..., :-1] < 0, axis=-1) + np.count_nonzero(sg == 0, axis=-1)


def _offsets(geom, x, y):
    xi = (x[0] - geom.u[0], x[1] - geom.u[1])
    zeta = (y[0] - geom.v[0], y[1] - geom.v[1])
    return xi, zeta


def solve_intersection(geom, x, y, xtol=None):
    """The unique (t, s), t > 0 > s, with x + gamma(t) = y + gamma(s).

    ``x`` must lie in Q and ``y`` in P.  Uses Brent's method on the bracket
    given by the A1 window and raises :class:`IntersectionError` if the
    bracket shows no sign change.
    """
    b = geom.beta
    if not geom.Q.contains(x, b):
        raise GeometryError(f"x={x} is not in Q")
    if not geom.P.contains(y, b):
        raise GeometryError(f"y={y} is not in P")
    xi, zeta = _offsets(geom, x, y)
    return solve_offset_pair(geom, xi, zeta, xtol=xtol)


def solve_offset_pair(geom, xi, zeta, xtol=None):
    """Scalar solve from offsets xi = x - u, zeta = y - v."""
    dx1 = zeta[0] - xi[0]
    d2 = zeta[1] - xi[1]
    lo, hi = a1_window(geom)
    f = lambda t: float(_residual(geom, dx1, d2, t))  # noqa: E731
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi):
        raise IntersectionError(
            f"no sign change on [{lo}, {hi}]: F(lo)={flo:.3e}, F(hi)={fhi:.3e}, "
            f"xi={xi}, zeta={zeta}, beta={geom.beta}, A1={geom.A1}")
    t = brentq(f, lo, hi, xtol=xtol or 1e-14 * geom.ell, rtol=4 * np.finfo(float).eps,
               maxiter=200)
    sigma = geom.a2 + (geom.a1 - t) + dx1
    return t, -sigma


# ---------------------------------------------------------------------------
# parameter intervals in closed form


def _forward_rel(m1, m2, r, ell, beta):
    """{u > 0: y + gamma(u) in R} relative to r, where R has sides (l, l^beta)
    and corner(R) - y = (r + m1, r^beta + m2).  Returns (lo - r, hi - r)."""
    ell2 = ell**beta
    lo2 = root_shift(r, m2, beta)
    lo2 = np.where(np.isnan(lo2), -r, lo2)
    hi2 = root_shift(r, m2 + ell2, beta)
    hi2 = np.where(np.isnan(hi2), -np.inf, hi2)
    lo = np.maximum(np.maximum(m1, lo2), -r)
    hi = np.minimum(m1 + ell, hi2)
    return lo, hi


def _backward_rel(m1, m2, r, ell, beta):
    """{t > 0: y - gamma(t) in R} relative to r, where
    y - corner(R) = (r + m1, r^beta + m2)."""
    return _forward_rel(m1 - ell, m2 - ell**beta, r, ell, beta)


def _clip(lo, hi, window, r):
    return np.maximum(lo, window[0] - r), np.minimum(hi, window[1] - r)


def interval_P_rel_x(geom, xi1, xi2, dt):
    """I(y,P) - A2 l for y = x + gamma(A1 l + dt), x = u + xi (A2 window
    applied)."""
    a2, b = geom.a2, geom.beta
    m1 = -dt - xi1
    m2 = -pow_delta(geom.a1, dt, b) - xi2
    return _clip(*_forward_rel(m1, m2, a2, geom.ell, b), a2_window(geom), a2)


def interval_P_rel_z(geom, zeta1, zeta2, dsigma):
    """I(y,P) - A2 l for y = z + gamma(-(A2 l + dsigma)), z = v + zeta."""
    a2, b = geom.a2, geom.beta
    m1 = dsigma - zeta1
    m2 = pow_delta(a2, dsigma, b) - zeta2
    return _clip(*_forward_rel(m1, m2, a2, geom.ell, b), a2_window(geom), a2)


def width_P_from_x(geom, xi1, xi2, t):
    """|I(y,P)| for y = x + gamma(t), x = u + xi (A2 window applied)."""
    lo, hi = interval_P_rel_x(geom, xi1, xi2, np.asarray(t) - geom.a1)
    return np.maximum(hi - lo, 0.0)


def interval_P_from_x(geom, xi1, xi2, t):
    lo, hi = interval_P_rel_x(geom, xi1, xi2, np.asarray(t) - geom.a1)
    return geom.a2 + lo, geom.a2 + hi


def interval_P_from_z(geom, zeta1, zeta2, sigma):
    """I(y,P) for y = z + gamma(-sigma), z = v + zeta; absolute endpoints."""
    lo, hi = interval_P_rel_z(geom, zeta1, zeta2, np.asarray(sigma) - geom.a2)
    return geom.a2 + lo, geom.a2 + hi


def interval_Q_from_x(geom, xi1, xi2, t):
    """I(y,Q) for y = x + gamma(t), x = u + xi (A1 window applied)."""
    a1, b = geom.a1, geom.beta
    dt = np.asarray(t) - a1
    m1 = dt + xi1
    m2 = xi2 + pow_delta(a1, dt, b)
    lo, hi = _clip(*_backward_rel(m1, m2, a1, geom.ell, b), a1_window(geom), a1)
    return a1 + lo, a1 + hi


def interval_Q_from_z(geom, zeta1, zeta2, sigma):
    """I(y,Q) for y = z + gamma(-sigma), z = v + zeta."""
    a1, a2, b = geom.a1, geom.a2, geom.beta
    ds = np.asarray(sigma) - a2
    m1 = zeta1 - ds
    m2 = zeta2 - pow_delta(a2, ds, b)
    lo, hi = _clip(*_backward_rel(m1, m2, a1, geom.ell, b), a1_window(geom), a1)
    return a1 + lo, a1 + hi


def _y_offsets(geom, y):
    return (np.asarray(y[0], dtype=float) - geom.u[0],
            np.asarray(y[1], dtype=float) - geom.u[1])


def _interval_P_rel(geom, y, window):
    """I(y,P) from Y = y - u, relative to A2 l."""
    a1, a2, b = geom.a1, geom.a2, geom.beta
    Y1, Y2 = _y_offsets(geom, y)
    m1 = a1 - Y1
    m2 = a1**b - Y2
    return _clip(*_forward_rel(m1, m2, a2, geom.ell, b), window, a2)


def _interval_Q_rel(geom, y, window):
    a1, b = geom.a1, geom.beta
    Y1, Y2 = _y_offsets(geom, y)
    return _clip(*_backward_rel(Y1 - a1, Y2 - a1**b, a1, geom.ell, b), window, a1)


def _as_interval(lo, hi, r):
    lo, hi = r + lo, r + hi
    if np.ndim(lo) == 0:
        return Interval(float(lo), float(hi))
    return lo, hi


def interval_y_P(geom, y, window=None):
    """{u in window: y + gamma(u) in P}; the A2 window by default."""
    window = a2_window(geom) if window is None else window
    return _as_interval(*_interval_P_rel(geom, y, window), geom.a2)


def interval_y_Q(geom, y, window=None):
    """{t in window: y - gamma(t) in Q}; the A1 window by default."""
    window = a1_window(geom) if window is None else window
    return _as_interval(*_interval_Q_rel(geom, y, window), geom.a1)


def interval_x_W1(geom, x):
    """I(x, W1) = [t1, t1 + h]: the ends solve against P's left-top and
    right-bottom vertices."""
    if not geom.Q.contains(x, geom.beta):
        raise GeometryError(f"x={x} is not in Q")
    xi = (x[0] - geom.u[0], x[1] - geom.u[1])
    return Interval(*interval_W1_offsets(geom, xi[0], xi[1]))


def interval_W1_offsets(geom, xi1, xi2):
    """Vectorised I(x, W1) from Q-offsets."""
    ell, ell2 = geom.ell, geom.side2
    t1, _ = solve_offsets(geom, 0.0 - xi1, ell2 - xi2)
    t2, _ = solve_offsets(geom, ell - xi1, 0.0 - xi2)
    return t1, t2


def sigma_range_offsets(geom, zeta1, zeta2):
    """Range of |s| over I(z, W1) for z = v + zeta: extremes come from Q's
    left-top (smallest) and right-bottom (largest) vertices."""
    ell, ell2 = geom.ell, geom.side2
    _, s_lo = solve_offsets(geom, zeta1 - 0.0, zeta2 - ell2)
    _, s_hi = solve_offsets(geom, zeta1 - ell, zeta2 - 0.0)
    return s_lo, s_hi


def width_ratio_bound(geom):
    """Lower end L of the two-sided bound L <= |I(z - gamma(s'), P)| /
    |I(z - gamma(s), P)| <= 1/L for s, s' in the sigma-range of z."""
    b, A2 = geom.beta, geom.A2
    return (((A2 - 3.0) ** b - 1.0) / ((A2 + 3.0) ** b + 1.0)) ** (1.0 - 1.0 / b)


def width_ratio_samples(geom, n, rng):
    """Ratios |I(z - gamma(s'), P)| / |I(z - gamma(s), P)| for random z in P
    and s, s' in its sigma-range."""
    zeta1 = rng.uniform(0.0, geom.ell, n)
    zeta2 = rng.uniform(0.0, geom.side2, n)
    s_lo, s_hi = sigma_range_offsets(geom, zeta1, zeta2)
    s = s_lo + rng.uniform(0, 1, n) * (s_hi - s_lo)
    sp = s_lo + rng.uniform(0, 1, n) * (s_hi - s_lo)
    lo, hi = interval_P_from_z(geom, zeta1, zeta2, s)
    lo2, hi2 = interval_P_from_z(geom, zeta1, zeta2, sp)
    w, w2 = np.maximum(hi - lo, 0.0), np.maximum(hi2 - lo2, 0.0)
    keep = (w > 0) & (w2 > 0)
    return w2[keep] / w[keep]


def membership_W(desc, y, slack=1e-12):
    geom = desc.geometry
    ell = geom.ell
    if desc.which is WSet.W1:
        qlo, qhi = _interval_Q_rel(geom, y, desc.t_range)
        plo, phi = _interval_P_rel(geom, y, desc.s_range)
    else:
        qlo, qhi = _clip(*_backward_rel(*_rel_Q_ref(geom, y, geom.a2), geom.a2, ell, geom.beta),
                         desc.t_range, geom.a2)
        plo, phi = _clip(*_forward_rel(*_rel_P_ref(geom, y, geom.a1), geom.a1, ell, geom.beta),
                         desc.s_range, geom.a1)
    tol = slack * ell
    out = (qhi >= qlo - tol) & (phi >= plo - tol)
    return bool(out) if np.ndim(out) == 0 else out


def _rel_Q_ref(geom, y, r):
    b = geom.beta
    Y1, Y2 = _y_offsets(geom, y)
    return Y1 - r, Y2 - r**b


def _rel_P_ref(geom, y, r):
    # corner(P) - y relative to (r, r^beta); only used on W2 where y is near
    # V2, so the absolute subtraction is harmless at desk scale
    b = geom.beta
    D1 = geom.v[0] - np.asarray(y[0], dtype=float)
    D2 = geom.v[1] - np.asarray(y[1], dtype=float)
    return D1 - r, D2 - r**b


# ---------------------------------------------------------------------------
# layers and measure


def layer_from_width(geom, width):
    return -np.log2(width * geom.beta * geom.A2 ** (geom.beta - 1) / geom.ell)


def layer_index(geom, y):
    """r(y) = -log2(|I(y,P)| beta A2^(beta-1) / l) for y in W1."""
    if not np.all(membership_W(w_set(geom, "W1"), y)):
        raise GeometryError("layer index is only defined on W1")
    lo, hi = _interval_P_rel(geom, y, a2_window(geom))
    out = layer_from_width(geom, np.maximum(hi - lo, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def sample_W1(geom, n, rng):
    """Points of W1 as (xi1, xi2, t): x uniform in Q, t uniform in I(x,W1)."""
    xi1 = rng.uniform(0.0, geom.ell, n)
    xi2 = rng.uniform(0.0, geom.side2, n)
    t1, t2 = interval_W1_offsets(geom, xi1, xi2)
    t = t1 + rng.uniform(0.0, 1.0, n) * (t2 - t1)
    return xi1, xi2, t


def eta_layer(geom, samples=10_000, seed=0):
    """max(0, -min r) over sampled points of W1."""
    rng = np.random.default_rng(seed)
    xi1, xi2, t = sample_W1(geom, samples, rng)
    w = width_P_from_x(geom, xi1, xi2, t)
    w = w[w > 0]
    return max(0.0, -float(np.min(layer_from_width(geom, w))))


def measure_W1(geom, sample_count=100_000, seed=0, chunk=200_000):
    """Monte Carlo |W1| over the bounding box of W1.

    Returns the estimate, its standard error ``sigma`` and the two-sided
    envelope ``lower = |Q|`` (V1 lies in W1) and ``upper = box area``.
    """
    if sample_count < 10_000:
        raise GeometryError("need at least 1e4 samples")
    b, ell = geom.beta, geom.ell
    w1 = (geom.A1 + 3.0) * ell
    w2 = ((geom.A1 + 2.0) ** b + 1.0) * ell**b
    box = w1 * w2
    desc = w_set(geom, "W1")
    rng = np.random.default_rng(seed)
    hits = 0
    left = sample_count
    while left > 0:
        m = min(chunk, left)
        y1 = geom.u[0] + rng.uniform(0.0, w1, m)
        y2 = geom.u[1] + rng.uniform(0.0, w2, m)
        hits += int(np.count_nonzero(membership_W(desc, (y1, y2))))
        left -= m
    p = hits / sample_count
    return {
        "estimate": box * p,
        "sigma": box * np.sqrt(p * (1 - p) / sample_count),
        "lower": geom.Q.area(b),
        "upper": box,
    }
