"""Hilbert transforms along curves, their adjoints, truncations, commutators
and lower estimates of operator norms.

Point evaluations split the t-line at every parameter where the translated
point crosses a grid line of the input's support, so each quadrature piece
sees a smooth integrand.  Integrals that straddle t = 0 are folded,
int_{-d}^{d} F(t) dt/t = int_0^d (F(t) - F(-t)) dt/t, which is the
principal value itself rather than an extrapolation toward it.

For operator norms the transform is discretised on a cell grid with
piecewise constant inputs; the matrix entries are then exact logarithms of
ratios of crossing parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from ._numerics import gauss_legendre
from .curve import MonomialCurve, NormalizedCurve, eval_curve

log = logging.getLogger(__name__)

__all__ = [
    "TransformError", "SampledFunction", "Indicator", "Analytic", "QuadratureConfig",
    "QuadResult", "hilbert_gamma", "hilbert_gamma_adjoint", "hilbert_truncated",
    "commutator_apply", "assemble_hilbert_matrix", "commutator_matrix",
    "operator_norm_lower", "operator_norm_dense", "probe_vectors",
]


class TransformError(ValueError):
    pass


# ---------------------------------------------------------------------------
# function carriers


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Grid samples on box = (x1_lo, x1_hi, x2_lo, x2_hi); zero outside."""

    box: tuple
    values: np.ndarray
    interpolation: str = "bilinear"
    _interp: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or min(vals.shape) < 2:
            raise TransformError("need an n1 x n2 grid with n1, n2 >= 2")
        if not np.all(np.isfinite(vals)):
            raise TransformError("sampled values must be finite")
        if self.interpolation not in ("nearest", "bilinear"):
            raise TransformError(f"unknown interpolation {self.interpolation!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))
        method = "linear" if self.interpolation == "bilinear" else "nearest"
        g1, g2 = self.axes
        interp = RegularGridInterpolator((g1, g2), vals, method=method,
                                         bounds_error=False, fill_value=0.0)
        object.__setattr__(self, "_interp", interp)

    @classmethod
    def from_callable(cls, fun, box, resolution, interpolation="bilinear"):
        g1 = np.linspace(box[0], box[1], resolution[0])
        g2 = np.linspace(box[2], box[3], resolution[1])
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        return cls(box, fun(X1, X2), interpolation)

    @property
    def resolution(self):
        return self.values.shape

    @property
    def axes(self):
        n1, n2 = self.values.shape
        return (np.linspace(self.box[0], self.box[1], n1),
                np.linspace(self.box[2], self.box[3], n2))

    def grid_lines(self):
        g1, g2 = self.axes
        if self.interpolation == "nearest":
            g1 = np.concatenate([[g1[0]], 0.5 * (g1[1:] + g1[:-1]), [g1[-1]]])
            g2 = np.concatenate([[g2[0]], 0.5 * (g2[1:] + g2[:-1]), [g2[-1]]])
        return g1, g2

    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        shape = np.broadcast(x1, x2).shape
        pts = np.stack(np.broadcast_arrays(x1, x2), axis=-1).reshape(-1, 2)
        return self._interp(pts).reshape(shape)

    def times(self, other):
        """Pointwise product formed on this function's grid."""
        X1, X2 = np.meshgrid(*self.axes, indexing="ij")
        return SampledFunction(self.box, self.values * other(X1, X2), self.interpolation)

    def sup(self):
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class Indicator:
    """Exact indicator of a closed axis-parallel rectangle."""

    box: tuple

    def __call__(self, x1, x2):
        a1, b1, a2, b2 = self.box
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        return ((x1 >= a1) & (x1 <= b1) & (x2 >= a2) & (x2 <= b2)).astype(float)

    def grid_lines(self):
        return np.array(self.box[:2]), np.array(self.box[2:])


@dataclass(frozen=True)
class Analytic:
    """Smooth callable supported in ``box`` (or everywhere if box is None)."""

    fun: object
    box: tuple | None = None
    lines: tuple = ((), ())

    def __call__(self, x1, x2):
        return self.fun(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))

    def grid_lines(self):
        l1, l2 = self.lines
        if self.box is not None:
            l1 = tuple(l1) + tuple(self.box[:2])
            l2 = tuple(l2) + tuple(self.box[2:])
        return np.asarray(l1, dtype=float), np.asarray(l2, dtype=float)


@dataclass(frozen=True)
class QuadratureConfig:
    pv_cutoff: float = 1e-3
    panels: int = 64
    tol: float = 1e-8
    t_domain: tuple | None = None
    order: int = 8
    max_depth: int = 12

    def __post_init__(self):
        if not self.pv_cutoff > 0:
            raise TransformError("pv_cutoff must be positive")
        if not self.tol > 0:
            raise TransformError("tol must be positive")
        if self.panels < 8:
            raise TransformError("need at least 8 panels")


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    converged: bool


# ---------------------------------------------------------------------------
# curves as pairs of odd monotone components


def _exponents(curve):
    if isinstance(curve, NormalizedCurve):
        return 1.0, curve.beta
    if isinstance(curve, MonomialCurve):
        if not curve.is_odd:
            raise TransformError("transforms are implemented for the odd sign pattern")
        return curve.beta1, curve.beta2
    raise TransformError(f"unsupported curve {curve!r}")


def _sgnroot(y, e):
    y = np.asarray(y, dtype=float)
    return np.sign(y) * np.abs(y) ** (1.0 / e)


def _crossings(x, lines, exps, sign):
    """Parameters t with x - sign*gamma(t) on one of the grid lines."""
    l1, l2 = lines
    t1 = _sgnroot(sign * (x[0] - np.asarray(l1)), exps[0])
    t2 = _sgnroot(sign * (x[1] - np.asarray(l2)), exps[1])
    return np.concatenate([np.ravel(t1), np.ravel(t2)])


def _support_range(x, box, exps, sign):
    """{t: x - sign*gamma(t) in box} as an interval (possibly empty)."""
    if box is None:
        return -np.inf, np.inf
    a1, b1, a2, b2 = box
    r1 = _sgnroot(sign * (x[0] - np.array([b1, a1])), exps[0])
    r2 = _sgnroot(sign * (x[1] - np.array([b2, a2])), exps[1])
    lo = max(r1.min(), r2.min())
    hi = min(r1.max(), r2.max())
    return lo, hi


# ---------------------------------------------------------------------------
# adaptive composite Gauss on a list of break points


def _adaptive(g, breaks, order, tol, max_depth):
    """Integrate g over consecutive break points, splitting pieces whose
    order-n and order-2n estimates disagree."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    if breaks.size < 2:
        return QuadResult(0.0, 0.0, True)
    a, b = breaks[:-1], breaks[1:]
    total = 0.0
    err = 0.0
    xs, ws = gauss_legendre(order)
    xl, wl = gauss_legendre(2 * order)
    for depth in range(max_depth + 1):
        half = 0.5 * (b - a)
        mid = 0.5 * (b + a)
        lo_est = np.sum(g(mid[:, None] + half[:, None] * xs) * ws, axis=1) * half
        hi_val = g(mid[:, None] + half[:, None] * xl)
        hi_est = np.sum(hi_val * wl, axis=1) * half
        scale = np.sum(np.abs(hi_val) * wl, axis=1) * half
        diff = np.abs(hi_est - lo_est)
        bad = diff > tol * np.maximum(scale, 1e-300)
        if depth == max_depth:
            bad[:] = False
        total += float(np.sum(hi_est[~bad]))
        err += float(np.sum(diff[~bad]))
        if not bad.any():
            break
        a, b = a[bad], b[bad]
        m = 0.5 * (a + b)
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
    converged = err <= tol * max(abs(total), 1.0) * 10 or depth < max_depth
    return QuadResult(total, err, converged)


def _pv_integral(F, lo, hi, cuts, q):
    """p.v. int_lo^hi F(t) dt/t with break points ``cuts``."""
    if q.t_domain is not None:
        lo, hi = max(lo, q.t_domain[0]), min(hi, q.t_domain[1])
    if not hi > lo:
        return QuadResult(0.0, 0.0, True)
    cuts = np.asarray(cuts, dtype=float)
    pieces = []
    if lo < 0 < hi:
        d = min(-lo, hi)
        inner = np.concatenate([[0.0, d], np.abs(cuts[(np.abs(cuts) < d) & (cuts != 0)]),
                                np.linspace(0.0, d, max(q.panels // 4, 2) + 1)])
        inner = np.concatenate([inner, d * np.geomspace(q.pv_cutoff, 1.0, 8)])
        pieces.append(_adaptive(lambda t: (F(t) - F(-t)) / t, inner[inner <= d],
                                q.order, q.tol, q.max_depth))
        rest = (d, hi) if hi > d else (lo, -d)
    else:
        rest = (lo, hi)
    r0, r1 = rest
    if r1 > r0:
        br = np.concatenate([[r0, r1], cuts[(cuts > r0) & (cuts < r1)],
                             np.linspace(r0, r1, q.panels + 1)])
        if r0 > 0 or r1 < 0:
            # geometric grading toward the singular end when it is near 0
            near, far = (r0, r1) if r0 >= 0 else (r1, r0)
            if abs(near) < 0.5 * abs(far) and near != 0:
                br = np.concatenate([br, np.sign(far) * np.geomspace(abs(near), abs(far), 16)])
        pieces.append(_adaptive(lambda t: F(t) / t, br, q.order, q.tol, q.max_depth))
    return QuadResult(sum(p.value for p in pieces), sum(p.error for p in pieces),
                      all(p.converged for p in pieces))


def _transform(f, curve, x, q, sign, full_output):
    exps = _exponents(curve)
    box = getattr(f, "box", None)
    lo, hi = _support_range(x, box, exps, sign)
    if box is None:
        if q.t_domain is None:
            raise TransformError("unbounded support needs q.t_domain")
        lo, hi = q.t_domain
    cuts = _crossings(x, f.grid_lines(), exps, sign)

    def F(t):
        c1, c2 = eval_curve(curve, t)
        return f(x[0] - sign * c1, x[1] - sign * c2)

    res = _pv_integral(F, lo, hi, cuts, q)
    if not res.converged:
        log.warning("quadrature did not converge at x=%s (err %.2e)", x, res.error)
    return res if full_output else res.value


def hilbert_gamma(f, curve, x, q=None, full_output=False):
    """p.v. int f(x - gamma(t)) dt/t."""
    return _transform(f, curve, x, q or QuadratureConfig(), 1.0, full_output)


def hilbert_gamma_adjoint(f, curve, x, q=None, full_output=False):
    """H* f(x) = p.v. int f(x + gamma(t)) dt/t, the formal adjoint of H."""
    return _transform(f, curve, x, q or QuadratureConfig(), -1.0, full_output)


def hilbert_truncated(f, curve_map, x, t_window, q=None, full_output=False):
    """int_{window} f(x - gamma(t)) dt/t for an arbitrary curve map.

    ``t_window`` is (lo, hi) with 0 < lo < hi, meaning lo <= |t| <= hi, or
    (0, hi) meaning the symmetric truncation |t| <= hi.
    """
    q = q or QuadratureConfig()
    lo, hi = t_window
    if not (0 <= lo < hi):
        raise TransformError("window must satisfy 0 <= lo < hi")

    def F(t):
        c1, c2 = curve_map(t)
        return f(x[0] - c1, x[1] - c2)

    br = np.linspace(lo, hi, q.panels + 1)
    if lo == 0:
        br = np.concatenate([br, hi * np.geomspace(q.pv_cutoff, 1.0, 12)])
    res = _adaptive(lambda t: (F(t) - F(-t)) / t, br, q.order, q.tol, q.max_depth)
    return res if full_output else res.value


def commutator_apply(b, f, curve, x, q=None):
    """b(x) H f(x) - H(b f)(x), with b f sampled on f's grid."""
    q = q or QuadratureConfig()
    bf = f.times(b) if isinstance(f, SampledFunction) else Analytic(
        lambda y1, y2: b(y1, y2) * f(y1, y2), getattr(f, "box", None))
    bx = float(b(x[0], x[1]))
    return bx * hilbert_gamma(f, curve, x, q) - hilbert_gamma(bf, curve, x, q)


# ---------------------------------------------------------------------------
# discretised operators


def cell_grid(box, shape):
    """Cell edges and centres of a uniform grid on box."""
    e1 = np.linspace(box[0], box[1], shape[0] + 1)
    e2 = np.linspace(box[2], box[3], shape[1] + 1)
    c1 = 0.5 * (e1[1:] + e1[:-1])
    c2 = 0.5 * (e2[1:] + e2[:-1])
    return (e1, e2), (c1, c2)


def assemble_hilbert_matrix(curve, box, shape, adjoint=False):
    """Sparse matrix of H (or H*) on piecewise constant cell functions.

    Row i is evaluated at cell centre i, column j integrates dt/t over the
    parameters whose translate lies in cell j; entries are exact.
    """
    exps = _exponents(curve)
    (e1, e2), (c1, c2) = cell_grid(box, shape)
    n1, n2 = shape
    sign = -1.0 if adjoint else 1.0
    rows, cols, vals = [], [], []
    h1, h2 = e1[1] - e1[0], e2[1] - e2[0]
    for i1 in range(n1):
        for i2 in range(n2):
            x = (c1[i1], c2[i2])
            lo, hi = _support_range(x, box, exps, sign)
            if not hi > lo:
                continue
            cuts = _crossings(x, (e1, e2), exps, sign)
            ts = np.unique(np.concatenate([[lo, hi], cuts[(cuts > lo) & (cuts < hi)]]))
            ta, tb = ts[:-1], ts[1:]
            tm = 0.5 * (ta + tb)
            g1, g2 = eval_curve(curve, tm)
            j1 = np.floor((x[0] - sign * g1 - e1[0]) / h1).astype(int)
            j2 = np.floor((x[1] - sign * g2 - e2[0]) / h2).astype(int)
            keep = (j1 >= 0) & (j1 < n1) & (j2 >= 0) & (j2 < n2)
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.log(np.abs(tb) / np.abs(ta))
            w = np.where(np.isfinite(w), w, 0.0)
            rows.append(np.full(keep.sum(), i1 * n2 + i2))
            cols.append(j1[keep] * n2 + j2[keep])
            vals.append(w[keep])
    N = n1 * n2
    if not rows:
        return sp.csr_matrix((N, N))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


def commutator_matrix(b_values, H):
    """[b, H] = diag(b) H - H diag(b) for cell values b."""
    D = sp.diags(np.ravel(b_values))
    return (D @ H - H @ D).tocsr()


def operator_norm_dense(M):
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    return float(np.linalg.norm(M, 2))


def probe_vectors(shape, beta, rng, count=40):
    """Indicators of adapted sub-rectangles, mean-zero pairs of them, and
    random fields, as flattened cell vectors."""
    n1, n2 = shape
    out = []
    for k in range(count):
        w1 = max(1, int(rng.integers(1, max(2, n1 // 2))))
        w2 = max(1, min(n2, int(round(n2 * (w1 / n1) ** beta)) or 1))
        a1 = int(rng.integers(0, n1 - w1 + 1))
        a2 = int(rng.integers(0, n2 - w2 + 1))
        f = np.zeros(shape)
        f[a1:a1 + w1, a2:a2 + w2] = 1.0
        if k % 3 == 1:
            b1 = int(rng.integers(0, n1 - w1 + 1))
            b2 = int(rng.integers(0, n2 - w2 + 1))
            f[b1:b1 + w1, b2:b2 + w2] -= 1.0
        elif k % 3 == 2:
            f = rng.standard_normal(shape)
        out.append(f.ravel())
    return out


def _pnorm(v, p):
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


def operator_norm_lower(op, p, size=None, budget=200, shape=None, beta=2.0, seed=0):
    """Lower estimate of the l^p -> l^p norm of a linear map on cell vectors.

    ``op`` is a matrix (dense or sparse) or a callable v -> op v.  For p = 2
    this runs power iteration on op^T op and returns the final Rayleigh ratio;
    otherwise it returns the best ratio over a structured test library (and
    the p = 2 maximiser).  On a uniform grid the cell-area factors cancel.
    """
    if not (1 < p < np.inf):
        raise TransformError("p must lie in (1, inf)")
    if callable(op) and not hasattr(op, "shape"):
        apply, applyT = op, None
        if size is None:
            raise TransformError("callable operators need size")
    else:
        M = op
        size = M.shape[1]
        apply, applyT = (lambda v: M @ v), (lambda v: M.T @ v)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    best = 0.0
    if applyT is not None:
        for _ in range(budget):
            w = applyT(apply(v))
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            v = w / nw
        best = np.linalg.norm(apply(v)) / np.linalg.norm(v)
        if p == 2:
            return float(best)
        best = _pnorm(apply(v), p) / _pnorm(v, p)
    if shape is None:
        side = int(round(np.sqrt(size)))
        shape = (side, size // side)
    for f in probe_vectors(shape, beta, rng):
        nf = _pnorm(f, p)
        if nf > 0:
            best = max(best, _pnorm(apply(f), p) / nf)
    return float(best)
