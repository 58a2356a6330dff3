"""Auxiliary weight on W1 and the one- and two-stage factorisation of a
function on Q.

Everything is evaluated in the canonical offset frame of ``geometry``: a
point of Q is ``u + xi``, a point of P is ``v + zeta``, and a point of W1 is
addressed either as ``x + gamma(t)`` (from Q) or as ``z - gamma(sigma)``
(from P, sigma = |s|).  Inputs ``f`` are callables of the Q-offsets.

Stage 1 (input f on Q)::

    G     = H* g_W1                on Q
    h_Q   = f / G                  on Q
    h_W1  = g_W1 H h_Q / H g_P     on W1
    ft_P  = g_P H* (g_W1 H h_Q / H g_P)   on P

Stage 2 is stage 1 for the point-reflected geometry (Q' = -P, P' = -Q); in
offsets the reflection is ``xi -> (l, l^beta) - xi``, so the same machinery
is reused with input ``ft_P`` mirrored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from scipy.interpolate import RegularGridInterpolator

from ._numerics import bisect_monotone, composite_nodes, pow_delta, root_shift
from .geometry import (
    _backward_rel, _clip, _forward_rel, a1_window, a2_window, interval_P_from_x,
    interval_P_from_z, interval_Q_from_x, interval_Q_from_z, interval_W1_offsets,
    interval_P_rel_x, interval_P_rel_z, sample_W1, sigma_range_offsets, solve_offset_pair,
    solve_offsets, solve_offsets_rel, width_P_from_x,
    interval_y_P, membership_W, w_set,
)

log = logging.getLogger(__name__)

__all__ = [
    "AwfError", "AwfWeight", "StageSettings", "Stage", "StageTwo", "AwfDecomposition",
    "GridField", "NodeSet", "WeightedNodes", "select_M", "eval_gW1", "sample_P_cen",
    "uniform_nodes", "graded_axes", "graded_nodes", "strip_nodes", "w1_nodes", "w1_sections",
    "jacobian_det", "theta_z", "two_bump", "reflect_offsets", "h_W1_y", "h_W1_max",
    "commutator_pairings", "division_guard", "awf_decompose", "awf_two_stage",
    "pairing_identity_check", "reconstruction_check", "C_z", "kernel_ratio_diagnostic",
]


class AwfError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# weight


def _kappa(geom):
    return geom.beta * geom.A2 ** (geom.beta - 1) / geom.ell


@dataclass(frozen=True)
class AwfWeight:
    """g_W1 = min(1, 2^M kappa |I(y,P)|) on W1, kappa = beta A2^(beta-1) / l."""

    geometry: object
    M: float
    kind: str = "gW1"

    @property
    def cap(self):
        return 2.0**self.M * _kappa(self.geometry)

    def from_width(self, w):
        return np.minimum(1.0, self.cap * w)


def sample_P_cen(geom, n, rng):
    """Offsets of points of P outside the two first-layer corner strips."""
    ell, ell2 = geom.ell, geom.side2
    strip = ell / (2 * _kappa(geom) * ell)
    out1, out2 = [], []
    need = n
    while need > 0:
        z1 = rng.uniform(0, ell, 2 * need)
        z2 = rng.uniform(0, ell2, 2 * need)
        lt = (z1 <= strip) & (z2 >= ell2 / 2)
        rb = (z1 >= ell - strip) & (z2 <= ell2 / 2)
        keep = ~(lt | rb)
        out1.append(z1[keep][:need])
        out2.append(z2[keep][:need])
        need -= out1[-1].size
    return np.concatenate(out1), np.concatenate(out2)


def select_M(geom, sample_count=10_000, seed=0, max_M=64.0):
    """Smallest M >= 1 with g_W1 = 1 on sampled points of W1^cen.

    W1^cen points are z - gamma(sigma) with z in P^cen and sigma in the
    range of |s| over I(z, W1).
    """
    if sample_count < 1000:
        raise AwfError("select_M needs at least 1e3 samples")
    rng = np.random.default_rng(seed)
    z1, z2 = sample_P_cen(geom, sample_count, rng)
    s_lo, s_hi = sigma_range_offsets(geom, z1, z2)
    sig = s_lo + rng.uniform(0, 1, z1.size) * (s_hi - s_lo)
    lo, hi = interval_P_from_z(geom, z1, z2, sig)
    # also the two ends of each sigma range, where widths are extreme
    lo_a, hi_a = interval_P_from_z(geom, z1, z2, s_lo)
    lo_b, hi_b = interval_P_from_z(geom, z1, z2, s_hi)
    w = np.concatenate([hi - lo, hi_a - lo_a, hi_b - lo_b])
    w = w[np.isfinite(w)]
    wmin = float(np.min(w))
    if wmin <= 0:
        raise AwfError("W1^cen sample produced an empty I(y,P)")
    M = max(1.0, -np.log2(wmin * _kappa(geom)))
    if M > max_M:
        raise AwfError(f"no M <= {max_M} makes g_W1 = 1 on W1^cen (need {M:.2f})")
    # a hair above the minimum so the cap is not decided by rounding
    return float(M + 1e-9)


def eval_gW1(weight, y):
    """g_W1 at absolute points y; exactly 0 off W1."""
    geom = weight.geometry
    inside = membership_W(w_set(geom, "W1"), y)
    iv = interval_y_P(geom, y)
    lo, hi = (iv.lo, iv.hi) if hasattr(iv, "lo") else iv
    w = np.maximum(np.asarray(hi) - np.asarray(lo), 0.0)
    out = np.where(inside, weight.from_width(w), 0.0)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# change of variables (t, s) -> x = z + gamma(s) - gamma(t)


def jacobian_det(curve, t, s):
    """beta (t^(beta-1) - |s|^(beta-1)); negative when t < |s|."""
    b = curve.beta
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = b * (t ** (b - 1) - np.abs(s) ** (b - 1))
    return float(out) if out.ndim == 0 else out


def theta_z(curve, t, s):
    """1 / (det * t * s), positive on pairs with 0 < t < |s|."""
    return 1.0 / (jacobian_det(curve, t, s) * np.asarray(t) * np.asarray(s))


# ---------------------------------------------------------------------------
# test input


def two_bump(geom, centres=((0.3, 0.35), (0.7, 0.65)), radius=0.22):
    """Smooth mean-zero function on Q: a positive and a negative copy of the
    same compactly supported bump, in coordinates scaled to the unit square."""
    ell, ell2 = geom.ell, geom.side2

    def bump(r2):
        inside = r2 < 1.0
        return np.where(inside, np.exp(1.0 - 1.0 / np.where(inside, 1.0 - r2, 1.0)), 0.0)

    (c1, c2), (d1, d2) = centres

    def f(xi1, xi2):
        a1 = np.asarray(xi1) / ell
        a2 = np.asarray(xi2) / ell2
        r = ((a1 - c1) ** 2 + (a2 - c2) ** 2) / radius**2
        s = ((a1 - d1) ** 2 + (a2 - d2) ** 2) / radius**2
        return bump(r) - bump(s)

    return f


def reflect_offsets(geom, fun):
    """Input for the reflected stage: xi' -> fun((l, l^beta) - xi')."""
    ell, ell2 = geom.ell, geom.side2
    return lambda a, b: fun(ell - np.asarray(a), ell2 - np.asarray(b))


# ---------------------------------------------------------------------------
# quadrature node sets on a rectangle of the geometry


@dataclass(frozen=True)
class NodeSet:
    x1: np.ndarray
    x2: np.ndarray
    w: np.ndarray

    @property
    def size(self):
        return self.x1.size


class WeightedNodes(NodeSet):
    """Nodes on Q whose weights already carry the factor h_Q."""


def _tensor(b1, b2, order):
    q1, w1 = composite_nodes(b1, order)
    q2, w2 = composite_nodes(b2, order)
    X1, X2 = np.meshgrid(q1, q2, indexing="ij")
    return NodeSet(X1.ravel(), X2.ravel(), np.outer(w1, w2).ravel())


def uniform_nodes(geom, n=128, panels=8):
    """Tensor Gauss rule on the offset rectangle [0, l] x [0, l^beta]."""
    e = np.linspace(0.0, 1.0, panels + 1)
    return _tensor(geom.ell * e, geom.side2 * e, n // panels)


def graded_breaks(length, width, levels, uniform=8):
    """Break points on [0, length] refined geometrically toward both ends,
    from ``width`` down to width * 2^-levels, plus a uniform background."""
    fine = width * 2.0 ** -np.arange(levels + 1)
    mid = np.geomspace(width, length / 2, max(2, int(np.ceil(np.log2(length / 2 / width))) + 1)) \
        if width < length / 2 else np.array([length / 2])
    left = np.concatenate([[0.0], fine, mid, np.linspace(0, length, uniform + 1)])
    left = left[(left >= 0) & (left <= length / 2)]
    br = np.concatenate([left, length - left])
    return np.unique(br)


def graded_axes(geom, order=4, levels=8, uniform=8):
    """Gauss nodes and weights per axis for the graded tensor rule."""
    ell, ell2 = geom.ell, geom.side2
    q1, w1 = composite_nodes(graded_breaks(ell, 1.0 / _kappa(geom), levels, uniform), order)
    q2, w2 = composite_nodes(graded_breaks(ell2, ell2 / 2, levels, uniform), order)
    return q1, w1, q2, w2


def graded_nodes(geom, order=6, levels=10, uniform=8):
    """Tensor Gauss rule resolving the edge strips of width
    l / (beta A2^(beta-1)) in the first coordinate and the dyadic corner
    layers in the second."""
    q1, w1, q2, w2 = graded_axes(geom, order, levels, uniform)
    X1, X2 = np.meshgrid(q1, q2, indexing="ij")
    return NodeSet(X1.ravel(), X2.ravel(), np.outer(w1, w2).ravel())


def strip_nodes(geom, order=6, levels=8, uniform=8):
    """Composite rule adapted to the layer structure of f~_P on P.

    Two edge columns of width 2 l / (beta A2^(beta-1)) get breaks at the
    dyadic strip widths in the first coordinate and at the dyadic heights
    1 - 2^-k (left) or 2^-k (right) in the second; the interior is covered
    by a uniform tensor rule.
    """
    ell, ell2 = geom.ell, geom.side2
    d = ell / (_kappa(geom) * ell)
    e = np.linspace(0.0, 1.0, uniform + 1)
    dy = 2.0 ** -np.arange(1, levels + 1)
    col = np.concatenate([[0.0], d * 2.0 ** -np.arange(levels, -1, -1), [2 * d]])
    rows_left = np.unique(np.concatenate([ell2 * e, ell2 * (1 - dy)]))
    rows_right = np.unique(np.concatenate([ell2 * e, ell2 * dy]))
    parts = [
        _tensor(np.unique(col), rows_left, order),
        _tensor(np.unique(ell - col), rows_right, order),
        _tensor(2 * d + (ell - 4 * d) * e, ell2 * e, order),
    ]
    return NodeSet(*(np.concatenate([getattr(p, k) for p in parts]) for k in ("x1", "x2", "w")))


# ---------------------------------------------------------------------------
# stage machinery


@dataclass(frozen=True)
class StageSettings:
    order_t: int = 12       # Gauss nodes per piece for H* g_W1
    order_inner: int = 8    # nodes per panel on I(y, Q) and I(y, P)
    inner_panels: int = 4
    order_sigma: int = 12   # nodes per piece along z - gamma(sigma)
    chunk: int = 4096


def _panels(lo, hi, n):
    """Break rows splitting [lo, hi] into n equal panels."""
    e = np.linspace(0.0, 1.0, n + 1)
    lo = np.asarray(lo, dtype=float)[..., None]
    return lo + (np.asarray(hi, dtype=float)[..., None] - lo) * e


def _sorted_breaks(*cols):
    return np.sort(np.stack(cols, axis=-1), axis=-1)


def _fill(a, lo, hi):
    return np.clip(np.where(np.isfinite(a), a, lo), lo, hi)


def _argmax_golden(fun, lo, hi, iters=60):
    """Vectorised golden-section search for the maximiser of a unimodal
    function on [lo, hi]."""
    r = 0.5 * (np.sqrt(5.0) - 1.0)
    a, b = np.array(lo, dtype=float), np.array(hi, dtype=float)
    c, d = b - r * (b - a), a + r * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - r * (b - a)
        d_new = a + r * (b - a)
        c, d = np.where(left, c_new, d), np.where(left, c, d_new)
        f_new = fun(np.where(left, c, d))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
    return 0.5 * (a + b)


def _cap_roots(fun, knots, cap):
    """Roots of cap*w - 1 between consecutive knots.  The width w is
    unimodal on each piece, so each piece is split at its maximiser and the
    two monotone halves are bisected separately."""
    roots = []
    for k in range(knots.shape[-1] - 1):
        lo, hi = knots[..., k], knots[..., k + 1]
        top = _argmax_golden(fun, lo, hi)
        for a, b in ((lo, top), (top, hi)):
            r = bisect_monotone(lambda t: cap * fun(t) - 1.0, a, b, iters=80,
                                xtol=1e-15 * np.max(np.abs(b)))
            roots.append(_fill(r, a, b))
    return roots


@dataclass
class Stage:
    """One stage of the factorisation for an input ``f`` of Q-offsets."""

    weight: AwfWeight
    f: object
    settings: StageSettings = field(default_factory=StageSettings)

    @property
    def geom(self):
        return self.weight.geometry

    # -- H* g_W1 on Q ------------------------------------------------------

    def _w_x(self, xi1, xi2):
        geom = self.geom
        return lambda t: width_P_from_x(geom, xi1, xi2, t)

    def t_breaks(self, xi1, xi2):
        """Break points of t -> g_W1(x + gamma(t)) on I(x, W1)."""
        geom = self.geom
        ell, ell2 = geom.ell, geom.side2
        xi1 = np.asarray(xi1, dtype=float)
        xi2 = np.asarray(xi2, dtype=float)
        t1, t2 = interval_W1_offsets(geom, xi1, xi2)
        t_lb, _ = solve_offsets(geom, -xi1, -xi2)
        t_rt, _ = solve_offsets(geom, ell - xi1, ell2 - xi2)
        knots = _sorted_breaks(t1, _fill(t_lb, t1, t2), _fill(t_rt, t1, t2), t2)
        caps = _cap_roots(self._w_x(xi1, xi2), knots, self.weight.cap)
        return np.sort(np.concatenate([knots, np.stack(caps, -1)], -1), -1)

    def G(self, xi1, xi2):
        """H* g_W1 at u + xi (kink-aware composite Gauss)."""
        return self._chunked(self._G, xi1, xi2)

    def _G(self, xi1, xi2):
        br = self.t_breaks(xi1, xi2)
        t, w = composite_nodes(br, self.settings.order_t)
        g = self.weight.from_width(width_P_from_x(self.geom, xi1[:, None], xi2[:, None], t))
        return np.sum(g * w / t, axis=-1)

    def G_reference(self, xi1, xi2, panels=400, order=4):
        """H* g_W1 by uniform panels that ignore the kinks (second route)."""
        xi1 = np.atleast_1d(np.asarray(xi1, dtype=float))
        xi2 = np.atleast_1d(np.asarray(xi2, dtype=float))
        out = np.empty(xi1.shape)
        for sl in _slices(xi1.size, max(1, 200_000 // (panels * order))):
            t1, t2 = interval_W1_offsets(self.geom, xi1[sl], xi2[sl])
            br = t1[:, None] + (t2 - t1)[:, None] * np.linspace(0, 1, panels + 1)
            t, w = composite_nodes(br, order)
            g = self.weight.from_width(width_P_from_x(self.geom, xi1[sl, None], xi2[sl, None], t))
            out[sl] = np.sum(g * w / t, axis=-1)
        return out

    def h_Q(self, xi1, xi2):
        f = self.f(xi1, xi2)
        return np.where(f != 0, f / self.G(xi1, xi2), 0.0)

    # -- H h_Q and H g_P on W1 ----------------------------------------------

    def _Hh_Q(self, x1, x2, lo, hi):
        """int_{I(y,Q)} h_Q(y - gamma(t')) dt'/t' where y - gamma(t') has
        Q-offsets (x1(t'), x2(t')) supplied as callables."""
        tp, w = composite_nodes(_panels(lo, hi, self.settings.inner_panels), self.settings.order_inner)
        ok = (hi > lo)[..., None]
        a, b = x1(tp), x2(tp)
        fv = self.f(a, b)
        hq = np.zeros_like(fv)
        nz = (fv != 0) & ok
        if np.any(nz):
            hq[nz] = fv[nz] / self.G(a[nz], b[nz])
        return np.sum(np.where(ok, hq * w / tp, 0.0), axis=-1)

    def Hh_Q_x(self, xi1, xi2, t):
        """H h_Q at y = x + gamma(t), x = u + xi."""
        geom = self.geom
        a1 = geom.a1
        lo, hi = interval_Q_from_x(geom, xi1, xi2, t)
        t_ = np.asarray(t)[..., None]
        xi1_ = np.asarray(xi1)[..., None]
        xi2_ = np.asarray(xi2)[..., None]
        dt = pow_delta(a1, t_ - a1, geom.beta)
        return self._Hh_Q(lambda tp: xi1_ + t_ - tp,
                          lambda tp: xi2_ + dt - pow_delta(a1, tp - a1, geom.beta), lo, hi)

    def Hh_Q_z(self, z1, z2, sigma):
        """H h_Q at y = z - gamma(sigma), z = v + zeta."""
        geom = self.geom
        a1, a2, b = geom.a1, geom.a2, geom.beta
        lo, hi = interval_Q_from_z(geom, z1, z2, sigma)
        s_ = np.asarray(sigma)[..., None]
        z1_ = np.asarray(z1)[..., None]
        z2_ = np.asarray(z2)[..., None]
        ds = pow_delta(a2, s_ - a2, b)
        return self._Hh_Q(lambda tp: a1 + a2 + z1_ - s_ - tp,
                          lambda tp: z2_ - ds - pow_delta(a1, tp - a1, b), lo, hi)

    def _Hg_P(self, lo, hi):
        # int over t in -[a2 + lo, a2 + hi] of dt/t, endpoints relative to A2 l
        w = np.maximum(hi - lo, 0.0)
        return -np.log1p(w / (self.geom.a2 + lo))

    def ratio_z(self, z1, z2, sigma):
        """(g_W1 / H g_P)(z - gamma(sigma)); this is C_z."""
        return self._ratio_rel(*interval_P_rel_z(self.geom, z1, z2, np.asarray(sigma) - self.geom.a2))

    def ratio_x(self, xi1, xi2, t):
        return self.ratio_x_rel(xi1, xi2, np.asarray(t) - self.geom.a1)

    def ratio_x_rel(self, xi1, xi2, dt):
        """:meth:`ratio_x` at t = A1 l + dt."""
        return self._ratio_rel(*interval_P_rel_x(self.geom, xi1, xi2, dt))

    def _ratio(self, lo, hi):
        return self._ratio_rel(lo - self.geom.a2, hi - self.geom.a2)

    def _ratio_rel(self, lo, hi):
        # g / H g_P on I(y, P) = A2 l + [lo, hi], with the w -> 0 limit
        # -cap * (A2 l + lo) where the interval is a point
        w = np.maximum(hi - lo, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.weight.from_width(w) / self._Hg_P(lo, hi)
        # an empty interval (hi < lo) means y is not in W1
        return np.where(hi > lo, r, np.where(hi == lo, -self.weight.cap * (self.geom.a2 + lo), 0.0))

    def h_W1_x(self, xi1, xi2, t):
        return self.ratio_x(xi1, xi2, t) * self.Hh_Q_x(xi1, xi2, t)

    # -- f~_P on P ------------------------------------------------------------

    def sigma_breaks(self, z1, z2):
        geom = self.geom
        a2, b, ell, ell2 = geom.a2, geom.beta, geom.ell, geom.side2
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        s_lo, s_hi = sigma_range_offsets(geom, z1, z2)

        def m(s):
            return s - a2 - z1, pow_delta(a2, s - a2, b) - z2

        def a_switch(s):
            m1, m2 = m(s)
            return m1 - root_shift(a2, m2, b)

        def b_switch(s):
            m1, m2 = m(s)
            return m1 + ell - root_shift(a2, m2 + ell2, b)

        sa = _fill(bisect_monotone(a_switch, s_lo, s_hi, iters=80, xtol=1e-15 * a2), s_lo, s_hi)
        sb = _fill(bisect_monotone(b_switch, s_lo, s_hi, iters=80, xtol=1e-15 * a2), s_lo, s_hi)
        knots = _sorted_breaks(s_lo, sa, sb, s_hi)

        def wfun(s):
            lo, hi = interval_P_from_z(geom, z1, z2, s)
            return np.maximum(hi - lo, 0.0)

        caps = _cap_roots(wfun, knots, self.weight.cap)
        return np.sort(np.concatenate([knots, np.stack(caps, -1)], -1), -1)

    def centre_measure(self, xi1, xi2):
        """|{t in I(x, W1): g_W1(x + gamma(t)) = 1}| at u + xi."""
        xi1 = np.atleast_1d(np.asarray(xi1, dtype=float))
        xi2 = np.atleast_1d(np.asarray(xi2, dtype=float))
        br = self.t_breaks(xi1, xi2)
        mid = 0.5 * (br[:, 1:] + br[:, :-1])
        g = self.weight.from_width(width_P_from_x(self.geom, xi1[:, None], xi2[:, None], mid))
        return np.sum(np.where(g >= 1.0, np.diff(br, axis=-1), 0.0), axis=-1)

    def f_tilde_P(self, z1, z2):
        """g_P H*(g_W1 H h_Q / H g_P) at v + zeta, by nested quadrature."""
        return self._chunked(self._f_tilde_P, z1, z2)

    def _f_tilde_P(self, z1, z2):
        br = self.sigma_breaks(z1, z2)
        s, w = composite_nodes(br, self.settings.order_sigma)
        Z1 = np.broadcast_to(z1[:, None], s.shape)
        Z2 = np.broadcast_to(z2[:, None], s.shape)
        val = self.ratio_z(Z1, Z2, s) * self.Hh_Q_z(Z1, Z2, s)
        return -np.sum(np.where(w > 0, val * w / s, 0.0), axis=-1)

    def kernel_nodes(self, nodes=None, project_mean=False, values=None):
        """Quadrature nodes on Q carrying h_Q, for the kernel route.

        With ``project_mean`` the input is replaced by f - m on the node set,
        m being its discrete mean, so that the rule sees an exactly mean-zero
        input.  ``values`` supplies f at the nodes when already known.
        """
        nodes = nodes or uniform_nodes(self.geom)
        fv = self.f(nodes.x1, nodes.x2) if values is None else np.asarray(values, dtype=float)
        if project_mean:
            fv = fv - np.sum(nodes.w * fv) / np.sum(nodes.w)
        keep = fv != 0
        x1, x2, w = nodes.x1[keep], nodes.x2[keep], nodes.w[keep]
        return WeightedNodes(x1, x2, w * fv[keep] / self.G(x1, x2))

    def f_tilde_P_kernel(self, z1, z2, nodes=None, pair_budget=2_000_000):
        """f~_P at v + zeta as int_Q h_Q(x) K(z, x) dx, where x ranges over
        z - gamma(sigma) - gamma(t) and K = -C_z theta_z.

        ``nodes`` is a NodeSet from :meth:`kernel_nodes` (weights already
        multiplied by h_Q) or None for the default uniform rule.
        """
        if not isinstance(nodes, WeightedNodes):
            nodes = self.kernel_nodes(nodes)
        geom = self.geom
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        z1, z2 = np.broadcast_arrays(z1, z2)
        shape = z1.shape
        z1, z2 = z1.ravel(), z2.ravel()
        out = np.empty(z1.shape)
        X1, X2, WH = nodes.x1[None, :], nodes.x2[None, :], nodes.w[None, :]
        step = max(1, pair_budget // max(1, nodes.x1.size))
        for sl in _slices(z1.size, step):
            dt, ds = solve_offsets_rel(geom, z1[sl, None] - X1, z2[sl, None] - X2)
            c = self.ratio_x_rel(X1, X2, dt)
            th = theta_z(geom.curve, geom.a1 + dt, -(geom.a2 + ds))
            out[sl] = -np.sum(WH * c * th, axis=-1)
        return out.reshape(shape)

    def _chunked(self, fn, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a, b = np.broadcast_arrays(a, b)
        shape = a.shape
        a, b = a.ravel(), b.ravel()
        out = np.empty(a.shape)
        for sl in _slices(a.size, self.settings.chunk):
            out[sl] = fn(a[sl], b[sl])
        return out.reshape(shape)


def _slices(n, step):
    return [slice(i, min(i + step, n)) for i in range(0, n, step)]


# ---------------------------------------------------------------------------
# W1 as a set of y: iterated integration over sections


def _section_bounds(geom, y1):
    b, ell, ell2 = geom.beta, geom.ell, geom.side2
    a1, a2 = geom.a1, geom.a2
    lo1, hi1 = a1_window(geom)
    lo2, hi2 = a2_window(geom)
    y1 = np.asarray(y1, dtype=float)
    tmin, tmax = np.maximum(y1 - ell, lo1), np.minimum(y1, hi1)
    umin = np.maximum(a1 + a2 - y1, lo2)
    umax = np.minimum(a1 + a2 - y1 + ell, hi2)
    q_lo = a1**b + pow_delta(a1, tmin - a1, b)
    q_hi = ell2 + a1**b + pow_delta(a1, tmax - a1, b)
    p_lo = a1**b - pow_delta(a2, umax - a2, b)
    p_hi = a1**b + ell2 - pow_delta(a2, umin - a2, b)
    return q_lo, q_hi, p_lo, p_hi, (tmax < tmin) | (umax < umin)


def w1_sections(geom, y1):
    """Second-coordinate section [L, U] of W1 over Y1 = y1 - u1 (offsets of
    Q's corner); empty sections have U < L."""
    q_lo, q_hi, p_lo, p_hi, empty = _section_bounds(geom, y1)
    L = np.maximum(q_lo, p_lo)
    U = np.minimum(q_hi, p_hi)
    return L, np.where(empty, L - 1.0, U)


def _w1_y1_breaks(geom, scan=4001):
    """Ends of the Y1-support of W1 and the kinks of its sections."""
    ell = geom.ell
    y = geom.a1 + ell * np.linspace(-2.0, 3.0, scan)
    q_lo, q_hi, p_lo, p_hi, empty = _section_bounds(geom, y)

    def diffs(v):
        q_lo, q_hi, p_lo, p_hi, empty = _section_bounds(geom, v)
        L, U = np.maximum(q_lo, p_lo), np.minimum(q_hi, p_hi)
        return [np.where(empty, -1.0, U - L), q_lo - p_lo, q_hi - p_hi]

    knots = []
    for k, d in enumerate(diffs(y)):
        idx = np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]
        if idx.size:
            r = bisect_monotone(lambda v, k=k: diffs(v)[k], y[idx], y[idx + 1], iters=100)
            knots.append(r[np.isfinite(r)])
    ends = knots[0] if knots else np.array([])
    if ends.size < 2:
        raise AwfError("could not bracket the support of W1")
    lo1, hi1 = a1_window(geom)
    lo2, hi2 = a2_window(geom)
    s = geom.a1 + geom.a2
    fixed = np.array([lo1 + ell, hi1, s - lo2, s + ell - hi2, geom.a1, geom.a1 + ell])
    allk = np.concatenate(knots + [fixed])
    lo, hi = ends.min(), ends.max()
    return np.unique(np.concatenate([[lo, hi], allk[(allk > lo) & (allk < hi)]]))


def _m2_kinks(m1, r, ell, ell2, beta, window_rel):
    """Values of m2 at which the endpoints of _forward_rel(m1, m2, ...)
    switch between their competing constraints."""
    out = []
    for c in (m1, m1 + ell, np.full_like(m1, window_rel[0]), np.full_like(m1, window_rel[1])):
        c = np.maximum(c, -r)
        p = pow_delta(r, c, beta)
        out += [p, p - ell2]
    return out


def _y2_breaks(geom, y1, L, U, cap):
    b, ell, ell2 = geom.beta, geom.ell, geom.side2
    a1, a2 = geom.a1, geom.a2
    lo1, hi1 = a1_window(geom)
    lo2, hi2 = a2_window(geom)
    cand = [a1**b - m for m in _m2_kinks(a1 - y1, a2, ell, ell2, b, (lo2 - a2, hi2 - a2))]
    cand += [m + a1**b + ell2 for m in
             _m2_kinks(y1 - a1 - ell, a1, ell, ell2, b, (lo1 - a1, hi1 - a1))]
    knots = np.sort(np.stack([L, U] + [np.clip(c, L, U) for c in cand], -1), -1)

    def width(y2):
        lo, hi = _clip(*_forward_rel(a1 - y1, a1**b - y2, a2, ell, b), (lo2, hi2), a2)
        return np.maximum(hi - lo, 0.0)

    caps = _cap_roots(width, knots, cap)
    return np.sort(np.concatenate([knots, np.stack(caps, -1)], -1), -1)


def _with_background(br, n):
    """Merge each row of knots with n uniform panels over its range."""
    e = np.linspace(0.0, 1.0, n + 1)
    lo, hi = br[..., :1], br[..., -1:]
    return np.sort(np.concatenate([br, lo + (hi - lo) * e], -1), -1)


def w1_nodes(geom, n1=32, n2=48, order=6, cap=None):
    """Iterated Gauss rule on W1 in Q-corner offsets (Y1, Y2).

    The Y1 range is the support of W1; each section [L, U] is split at the
    switches of the interval constraints and, given ``cap``, where
    cap * |I(y,P)| = 1.  Both directions add ``n1`` / ``n2`` uniform panels.
    """
    cap = _kappa(geom) * 2.0 if cap is None else cap
    br1 = _with_background(_w1_y1_breaks(geom), n1)
    y1, w1 = composite_nodes(br1, order)
    L, U = w1_sections(geom, y1)
    ok = U > L
    y1, w1, L, U = y1[ok], w1[ok], L[ok], U[ok]
    br2 = _with_background(_y2_breaks(geom, y1, L, U, cap), n2)
    y2, w2 = composite_nodes(br2, order)
    Y1 = np.broadcast_to(y1[:, None], y2.shape)
    return NodeSet(Y1.ravel().copy(), y2.ravel(), (w1[:, None] * w2).ravel())


def _on_W1(stage, Y1, Y2):
    """g, g/H g_P and H h_Q at W1 points with Q-corner offsets (Y1, Y2)."""
    geom = stage.geom
    b, ell, a1, a2 = geom.beta, geom.ell, geom.a1, geom.a2
    plo, phi = _clip(*_forward_rel(a1 - Y1, a1**b - Y2, a2, ell, b), a2_window(geom), a2)
    w = np.maximum(phi - plo, 0.0)
    g = stage.weight.from_width(w)
    qlo, qhi = _clip(*_backward_rel(Y1 - a1, Y2 - a1**b, a1, ell, b), a1_window(geom), a1)
    qlo, qhi = a1 + qlo, a1 + qhi
    sett = stage.settings
    tq, wq = composite_nodes(_panels(qlo, qhi, sett.inner_panels), sett.order_inner)
    okq = (qhi > qlo)[:, None]
    X1 = Y1[:, None] - tq
    X2 = Y2[:, None] - (a1**b + pow_delta(a1, tq - a1, b))
    fv = np.where(okq, stage.f(X1, X2), 0.0)
    hq = np.zeros_like(fv)
    nz = fv != 0
    if np.any(nz):
        hq[nz] = fv[nz] / stage.G(X1[nz], X2[nz])
    kq = np.where(okq, wq / tq, 0.0)
    out = {"g": g, "ratio": stage._ratio_rel(plo, phi), "Hh_Q": np.sum(hq * kq, -1)}
    return out


def h_W1_max(stage, nodes=None, chunk=4096):
    nodes = nodes or w1_nodes(stage.geom, cap=stage.weight.cap)
    hmax = 0.0
    for sl in _slices(nodes.size, chunk):
        d = _on_W1(stage, nodes.x1[sl], nodes.x2[sl])
        hmax = max(hmax, float(np.max(np.abs(d["ratio"] * d["Hh_Q"]), initial=0.0)))
    return hmax


def h_W1_y(stage, Y1, Y2):
    """h_W1 at Q-corner offsets (Y1, Y2); zero off W1."""
    Y1, Y2 = np.broadcast_arrays(np.asarray(Y1, dtype=float), np.asarray(Y2, dtype=float))
    shape = Y1.shape
    out = np.empty(Y1.size)
    a, b = Y1.ravel(), Y2.ravel()
    for sl in _slices(a.size, stage.settings.chunk):
        d = _on_W1(stage, a[sl], b[sl])
        out[sl] = d["ratio"] * d["Hh_Q"]
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# sampled f~_P and the second stage


@dataclass
class GridField:
    """Values on a tensor Gauss grid over [0, l] x [0, l^beta], linearly
    interpolated (and extrapolated to the edges), zero off the rectangle."""

    q1: np.ndarray
    w1: np.ndarray
    q2: np.ndarray
    w2: np.ndarray
    values: np.ndarray
    ell: float
    ell2: float

    def __post_init__(self):
        self._interp = RegularGridInterpolator((self.q1, self.q2), self.values,
                                               bounds_error=False, fill_value=None)

    def __call__(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        inside = (a >= 0) & (a <= self.ell) & (b >= 0) & (b <= self.ell2)
        out = np.zeros(a.shape)
        if np.any(inside):
            out[inside] = self._interp(np.stack([a[inside], b[inside]], axis=-1))
        return out

    def nodes(self):
        X1, X2 = np.meshgrid(self.q1, self.q2, indexing="ij")
        return NodeSet(X1.ravel(), X2.ravel(), np.outer(self.w1, self.w2).ravel())

    def integral(self, absolute=False):
        v = np.abs(self.values) if absolute else self.values
        return float(np.sum(np.outer(self.w1, self.w2) * v))

    def reflected(self):
        """The field xi -> F((l, l^beta) - xi)."""
        return GridField(self.ell - self.q1[::-1], self.w1[::-1].copy(),
                         self.ell2 - self.q2[::-1], self.w2[::-1].copy(),
                         self.values[::-1, ::-1].copy(), self.ell, self.ell2)


def _reflection_Y(geom):
    """c with Y' = c - Y mapping stage-1 Q-corner offsets to stage-2 ones."""
    b = geom.beta
    return (geom.a1 + geom.a2 + geom.ell, geom.a1**b + geom.a2**b + geom.side2)


@dataclass
class StageTwo:
    """Stage 1 run on the reflected geometry with input f' = f~_P o R."""

    stage: Stage
    nodes: WeightedNodes
    raw_nodes: WeightedNodes
    field: GridField

    def u_P(self, z1, z2):
        ell, ell2 = self.field.ell, self.field.ell2
        return self.stage.h_Q(ell - np.asarray(z1, dtype=float), ell2 - np.asarray(z2, dtype=float))

    def u_W2(self, Y1, Y2):
        c1, c2 = _reflection_Y(self.stage.geom)
        return h_W1_y(self.stage, c1 - np.asarray(Y1, dtype=float), c2 - np.asarray(Y2, dtype=float))

    def f_tilde_Q(self, xi1, xi2, projected=True):
        ell, ell2 = self.field.ell, self.field.ell2
        nodes = self.nodes if projected else self.raw_nodes
        return self.stage.f_tilde_P_kernel(ell - np.asarray(xi1, dtype=float),
                                           ell2 - np.asarray(xi2, dtype=float), nodes=nodes)


def _in_rect(a, b, ell, ell2):
    return (a >= 0) & (a <= ell) & (b >= 0) & (b <= ell2)


@dataclass
class AwfDecomposition:
    """Pieces of the factorisation as callables of offset coordinates:
    h_Q and f~_Q of Q-offsets, f~_P and u_P of P-offsets, h_W1 and u_W2 of
    Q-corner offsets Y = y - u."""

    stage: Stage
    nodes: WeightedNodes
    diagnostics: dict
    stage2: StageTwo | None = None

    @property
    def geometry(self):
        return self.stage.geom

    def h_Q(self, xi1, xi2):
        g = self.geometry
        xi1, xi2 = np.broadcast_arrays(np.asarray(xi1, dtype=float), np.asarray(xi2, dtype=float))
        return np.where(_in_rect(xi1, xi2, g.ell, g.side2), self.stage.h_Q(xi1, xi2), 0.0)

    def h_W1(self, Y1, Y2):
        return h_W1_y(self.stage, Y1, Y2)

    def f_tilde_P(self, z1, z2):
        g = self.geometry
        z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=float), np.asarray(z2, dtype=float))
        inside = _in_rect(z1, z2, g.ell, g.side2)
        out = np.zeros(z1.shape)
        if np.any(inside) and self.nodes.size:
            out[inside] = self.stage.f_tilde_P_kernel(z1[inside], z2[inside], nodes=self.nodes)
        return out


def division_guard(stage, xi1, xi2, G=None):
    """Smallest ratio of H* g_W1 to half its proven lower bound
    |{g_W1 = 1} cap I(x, W1)| / ((A1 + 2) l) over the given points."""
    geom = stage.geom
    G = stage.G(xi1, xi2) if G is None else G
    bound = 0.5 * stage.centre_measure(xi1, xi2) / ((geom.A1 + 2.0) * geom.ell)
    with np.errstate(divide="ignore"):
        return float(np.min(G / bound, initial=np.inf))


def awf_decompose(geom, weight=None, f=None, settings=None, *, nodes=None,
                  eval_nodes=None, diagnostics=True, guard=True):
    """Stage-1 factorisation of ``f`` (a callable of Q-offsets, default the
    mean-zero two-bump function).

    ``nodes`` is the rule on Q used for the kernel route; ``eval_nodes`` the
    rule on P on which max |f~_P| and int f~_P are measured.
    """
    weight = weight or AwfWeight(geom, select_M(geom))
    f = f or two_bump(geom)
    stage = Stage(weight, f, settings or StageSettings())
    base = nodes or uniform_nodes(geom)
    fv = f(base.x1, base.x2)
    keep = fv != 0
    kx1, kx2 = base.x1[keep], base.x2[keep]
    G = stage.G(kx1, kx2) if kx1.size else np.zeros(0)
    diag = {"M": weight.M, "beta": geom.beta, "A1": geom.A1, "ell": geom.ell}
    if guard and kx1.size:
        margin = division_guard(stage, kx1, kx2, G)
        diag["guard_margin"] = margin
        if not margin >= 1.0:
            raise AwfError(f"H* g_W1 below half its lower bound (margin {margin:.3g}); "
                           "quadrature for G has failed")
    wn = WeightedNodes(kx1, kx2, base.w[keep] * fv[keep] / G if kx1.size else np.zeros(0))
    decomp = AwfDecomposition(stage, wn, diag)
    if not diagnostics:
        return decomp
    fmax = float(np.max(np.abs(fv), initial=0.0))
    diag["max_f"] = fmax
    diag["int_f"] = float(np.sum(base.w * fv))
    if fmax == 0.0:
        diag.update(max_h_Q=0.0, max_h_W1=0.0, max_f_tilde_P=0.0, int_f_tilde_P=0.0,
                    int_abs_f_tilde_P=0.0)
        return decomp
    hq = fv[keep] / G
    diag["max_h_Q"] = float(np.max(np.abs(hq)))
    diag["C_h_Q"] = diag["max_h_Q"] / (geom.A1 * fmax)
    diag["max_h_W1"] = h_W1_max(stage, w1_nodes(geom, 8, 12, 4, cap=weight.cap))
    diag["C_h_W1"] = diag["max_h_W1"] / (geom.A1 * fmax)
    ev = eval_nodes or strip_nodes(geom)
    fp = stage.f_tilde_P_kernel(ev.x1, ev.x2, nodes=wn)
    diag["max_f_tilde_P"] = float(np.max(np.abs(fp)))
    diag["int_f_tilde_P"] = float(np.sum(ev.w * fp))
    diag["int_abs_f_tilde_P"] = float(np.sum(ev.w * np.abs(fp)))
    diag["eps_P"] = diag["max_f_tilde_P"] / fmax
    return decomp


def awf_two_stage(geom, weight=None, f=None, settings=None, *, grid=(4, 8, 8),
                  project_mean=True, eval_nodes=None, stage1=None, diagnostics=True):
    """Stage 1 followed by the same construction applied to f~_P on the
    reflected geometry, producing u_P, u_W2 and f~_Q.

    f~_P is tabulated by the kernel route on a graded tensor grid of P
    (``grid`` = (order, levels, uniform)); the second stage integrates over
    exactly these nodes.  With ``project_mean`` its discrete mean, which
    vanishes for the exact f~_P, is removed before the second stage; the
    unprojected f~_Q is reported alongside.
    """
    d = stage1 or awf_decompose(geom, weight, f, settings, diagnostics=diagnostics)
    weight = d.stage.weight
    q1, w1, q2, w2 = graded_axes(geom, *grid)
    X1, X2 = np.meshgrid(q1, q2, indexing="ij")
    V = d.f_tilde_P(X1, X2)
    field = GridField(q1, w1, q2, w2, V, geom.ell, geom.side2)
    fprime = field.reflected()
    s2 = Stage(weight, fprime, d.stage.settings)
    gn = fprime.nodes()
    vals = fprime.values.ravel()
    nodes = s2.kernel_nodes(gn, project_mean=project_mean, values=vals)
    raw = s2.kernel_nodes(gn, values=vals) if project_mean else nodes
    two = StageTwo(s2, nodes, raw, field)
    d.stage2 = two
    if not diagnostics:
        return d
    diag = d.diagnostics
    fmax = diag.get("max_f", 0.0)
    diag["grid_int_f_tilde_P"] = field.integral()
    diag["grid_max_f_tilde_P"] = float(np.max(np.abs(V), initial=0.0))
    if fmax == 0.0 or diag["grid_max_f_tilde_P"] == 0.0:
        diag.update(max_f_tilde_Q=0.0, int_f_tilde_Q=0.0, chain_C=0.0)
        return d
    ev = eval_nodes or strip_nodes(geom, order=3, uniform=6)
    fq = two.f_tilde_Q(ev.x1, ev.x2)
    diag["max_f_tilde_Q"] = float(np.max(np.abs(fq)))
    diag["int_f_tilde_Q"] = float(np.sum(ev.w * fq))
    eps = diag["max_f_tilde_P"] / fmax
    diag["chain_C"] = diag["max_f_tilde_Q"] / fmax / eps**2
    diag["ratio_Q_over_P"] = diag["max_f_tilde_Q"] / diag["max_f_tilde_P"]
    if project_mean:
        fq_raw = two.f_tilde_Q(ev.x1, ev.x2, projected=False)
        diag["max_f_tilde_Q_unprojected"] = float(np.max(np.abs(fq_raw)))
        diag["chain_C_unprojected"] = diag["max_f_tilde_Q_unprojected"] / fmax / eps**2
    fpmax = diag["grid_max_f_tilde_P"]
    G2 = s2.G(gn.x1, gn.x2)
    diag["max_u_P"] = float(np.max(np.abs(vals / G2)))
    diag["C_u_P"] = diag["max_u_P"] / (geom.A1 * fpmax)
    diag["max_u_W2"] = h_W1_max(s2, w1_nodes(geom, 8, 12, 4, cap=weight.cap))
    diag["C_u_W2"] = diag["max_u_W2"] / (geom.A1 * fpmax)
    return d


# ---------------------------------------------------------------------------
# identities and diagnostics


def commutator_pairings(stage, nodes, b, chunk=512):
    """-int_W1 g_W1 [b,H] h_Q and int_W1 h_W1 [b,H] g_P for one stage.

    Both are integrals over W1 of something times H h_Q, so they are
    evaluated by Fubini as int_Q h_Q(x) int_{I(x,W1)} (...)(x + gamma(t)) dt/t dx,
    with h_Q carried by the weights of ``nodes`` (WeightedNodes).  Here

        [b,H] h_Q (y) = int_{I(y,Q)} (b(y) - b(y - gamma(t))) h_Q(y - gamma(t)) dt/t
        [b,H] g_P (y) = -int_{I(y,P)} (b(y) - b(y + gamma(u))) du/u

    and ``b`` is a callable of Q-corner offsets.
    """
    geom = stage.geom
    be, a1, a2 = geom.beta, geom.a1, geom.a2
    sett = stage.settings
    t1 = t2 = 0.0
    for sl in _slices(nodes.size, chunk):
        x1, x2, wh = nodes.x1[sl], nodes.x2[sl], nodes.w[sl]
        t, wt = composite_nodes(stage.t_breaks(x1, x2), sett.order_t)
        X1, X2 = x1[:, None], x2[:, None]
        Y1 = X1 + t
        Y2 = X2 + a1**be + pow_delta(a1, t - a1, be)
        g = stage.weight.from_width(width_P_from_x(geom, X1, X2, t))
        by, bx = b(Y1, Y2), b(X1, X2)
        t1 -= float(np.sum(wh[:, None] * wt / t * g * (by - bx)))
        rlo, rhi = interval_P_rel_x(geom, X1, X2, t - a1)
        lo, hi = a2 + rlo, a2 + np.maximum(rhi, rlo)
        u, wu = composite_nodes(_panels(lo, hi, sett.inner_panels), sett.order_inner)
        Z1 = Y1[..., None] + u
        Z2 = Y2[..., None] + a2**be + pow_delta(a2, u - a2, be)
        comm = -np.sum((by[..., None] - b(Z1, Z2)) * wu / u, axis=-1)
        ratio = stage._ratio_rel(rlo, rhi)
        t2 += float(np.sum(wh[:, None] * wt / t * np.where(wt > 0, ratio * comm, 0.0)))
    return t1, t2


def pairing_identity_check(b, decomp, *, lhs_n=128, eval_nodes=None):
    """Both sides of

        int_Q b f = -int g_W1 [b,H] h_Q + int h_W1 [b,H] g_P
                    + int u_P [b,H] g_W2 - int g_Q [b,H] u_W2 + int_Q b f~_Q

    for a symbol ``b`` of Q-corner offsets Y = y - u.  The two stage-2
    terms are the stage-1 terms of the reflected problem for the symbol
    b(c - Y'), where c maps stage-1 to stage-2 offsets.
    """
    two = decomp.stage2
    if two is None:
        raise AwfError("pairing identity needs a two-stage decomposition")
    geom = decomp.geometry
    st = decomp.stage
    ln = uniform_nodes(geom, lhs_n)
    bl = b(ln.x1, ln.x2)
    lhs = float(np.sum(ln.w * bl * st.f(ln.x1, ln.x2)))
    t1, t2 = commutator_pairings(st, decomp.nodes, b)
    c1, c2 = _reflection_Y(geom)

    def b_reflected(Y1, Y2):
        return b(c1 - Y1, c2 - Y2)

    t3, t4 = commutator_pairings(two.stage, two.raw_nodes, b_reflected)
    ev = eval_nodes or strip_nodes(geom, order=3, uniform=6)
    fq = two.f_tilde_Q(ev.x1, ev.x2, projected=False)
    bq = b(ev.x1, ev.x2)
    t5 = float(np.sum(ev.w * bq * fq))
    mean_b = float(np.sum(ln.w * bl) / np.sum(ln.w))
    t5_centred = float(np.sum(ev.w * (bq - mean_b) * fq))
    # int_P b f~_P directly, to be matched by the three stage-2 terms
    pn = two.field.nodes()
    off1, off2 = geom.a1 + geom.a2, geom.a1**geom.beta + geom.a2**geom.beta
    bP = float(np.sum(pn.w * b(pn.x1 + off1, pn.x2 + off2) * two.field.values.ravel()))
    terms = (t1, t2, t3, t4, t5)
    rhs = float(sum(terms))
    gap = abs(lhs - rhs)
    return {
        "lhs": lhs, "rhs": rhs, "terms": terms, "abs_gap": gap,
        "rel_gap": gap / abs(lhs) if lhs != 0 else gap,
        "int_P_b_f_tilde_P": bP, "stage2_sum": t3 + t4 + t5,
        "t5_centred": t5_centred,
    }


def reconstruction_check(decomp, q_grid=256, p_grid=24, w1_points=4096, direct=None, seed=0):
    """Pointwise residuals of the stage-1 identity on validation points
    disjoint from the construction nodes, relative to max |f|.

    On Q the sum reduces to h_Q H* g_W1, checked against a second
    quadrature of H* g_W1.  On P it reduces to f~_P - g_P H* h_W1 = 0, i.e.
    the kernel route against the nested route at high order.  On W1 it is
    h_W1 H g_P - g_W1 H h_Q, with H g_P by Gauss quadrature instead of the
    closed form.
    """
    geom = decomp.geometry
    st = decomp.stage
    ell, ell2 = geom.ell, geom.side2
    c = (np.arange(q_grid) + 0.5) / q_grid
    X1, X2 = np.meshgrid(ell * c, ell2 * c, indexing="ij")
    x1, x2 = X1.ravel(), X2.ravel()
    f = st.f(x1, x2)
    fmax = float(np.max(np.abs(f)))
    if fmax == 0.0:
        return {"Q": 0.0, "P": 0.0, "W1": 0.0, "max": 0.0}
    nz = f != 0
    rec = np.zeros_like(f)
    rec[nz] = f[nz] / st.G(x1[nz], x2[nz]) * st.G_reference(x1[nz], x2[nz])
    res_Q = float(np.max(np.abs(rec - f))) / fmax

    c = (np.arange(p_grid) + 0.5) / p_grid
    Z1, Z2 = np.meshgrid(ell * c, ell2 * c, indexing="ij")
    direct = direct or StageSettings(order_t=st.settings.order_t, order_sigma=40, chunk=64)
    ref = Stage(st.weight, st.f, direct)
    res_P = float(np.max(np.abs(decomp.f_tilde_P(Z1, Z2) - ref.f_tilde_P(Z1.ravel(), Z2.ravel()).reshape(Z1.shape)))) / fmax

    rng = np.random.default_rng(seed)
    xi1, xi2, t = sample_W1(geom, w1_points, rng)
    Y1 = xi1 + t
    Y2 = xi2 + geom.a1**geom.beta + pow_delta(geom.a1, t - geom.a1, geom.beta)
    d = _on_W1(st, Y1, Y2)
    lo, hi = _clip(*_forward_rel(geom.a1 - Y1, geom.a1**geom.beta - Y2, geom.a2, ell, geom.beta),
                   a2_window(geom), geom.a2)
    lo, hi = geom.a2 + lo, geom.a2 + np.maximum(hi, lo)
    u, wu = composite_nodes(np.stack([lo, hi], -1), 16)
    HgP = -np.sum(wu / u, axis=-1)
    g = st.weight.from_width(np.maximum(hi - lo, 0.0))
    res_W = float(np.max(np.abs(d["ratio"] * d["Hh_Q"] * HgP - g * d["Hh_Q"]))) / fmax
    return {"Q": res_Q, "P": res_P, "W1": res_W, "max": max(res_Q, res_P, res_W)}


def C_z(stage, z1, z2, t, sigma):
    """(g_W1 / H g_P)(z - gamma(sigma)) / H* g_W1(z - gamma(sigma) - gamma(t))
    at P-offsets z; pairs off F_z raise AwfError."""
    geom = stage.geom
    b, ell, ell2 = geom.beta, geom.ell, geom.side2
    z1, z2, t, sigma = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z1, z2, t, sigma)))
    s_lo, s_hi = sigma_range_offsets(geom, z1, z2)
    x1 = geom.a1 + geom.a2 + z1 - sigma - t
    x2 = z2 - pow_delta(geom.a2, sigma - geom.a2, b) - pow_delta(geom.a1, t - geom.a1, b)
    tol = 1e-9
    ok = (sigma >= s_lo - tol * geom.a2) & (sigma <= s_hi + tol * geom.a2)
    ok &= (x1 >= -tol * ell) & (x1 <= ell * (1 + tol)) & (x2 >= -tol * ell2) & (x2 <= ell2 * (1 + tol))
    if not np.all(ok):
        raise AwfError(f"{int(np.sum(~ok))} pair(s) outside F_z")
    x1 = np.clip(x1, 0.0, ell)
    x2 = np.clip(x2, 0.0, ell2)
    return stage.ratio_z(z1, z2, sigma) / stage.G(x1, x2)


def kernel_ratio_diagnostic(stage, z, pairs=None, n_pairs=256, seed=0):
    """Spread max |C_z(t,s) - C_z(t0,s0)| / |C_z(t0,s0)| over pairs (t, s)
    in F_z, with (t0, s0) the intersection pair of the centre of Q and z.

    ``pairs`` is an array of (t, s) with s < 0; by default the pairs come
    from uniformly sampled x in Q.
    """
    geom = stage.geom
    z1, z2 = float(z[0]), float(z[1])
    t0, s0 = solve_offset_pair(geom, (geom.ell / 2, geom.side2 / 2), (z1, z2))
    if pairs is None:
        rng = np.random.default_rng(seed)
        xi1 = rng.uniform(0, geom.ell, n_pairs)
        xi2 = rng.uniform(0, geom.side2, n_pairs)
        t, sig = solve_offsets(geom, z1 - xi1, z2 - xi2)
    else:
        pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
        t, sig = pairs[:, 0], -pairs[:, 1]
    c0 = float(C_z(stage, z1, z2, t0, -s0))
    c = C_z(stage, z1, z2, t, sig)
    return {
        "C0": c0, "C0_scaled": abs(c0) / geom.A1 ** (geom.beta + 1),
        "spread": float(np.max(np.abs(c - c0)) / abs(c0)), "pair0": (float(t0), float(s0)),
    }
