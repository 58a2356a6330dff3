"""Mean oscillation over gamma-adapted rectangles, sampled BMO_gamma
estimates and the commutator lower-bound experiment.

A rectangle is adapted when its sides are (l, l^beta); optionally it is
mapped by an orthonormal frame O (the rectangles O P of the torsion section).
Oscillations are grid quadratures with the grid mean as the average, so
constants give exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transform import SampledFunction, assemble_hilbert_matrix, commutator_matrix, operator_norm_lower

__all__ = [
    "BmoError", "AdaptedRect", "RectSampler", "dilate", "mean_oscillation", "oscillation_profile",
    "bmo_norm_estimate", "bmo_scan", "john_nirenberg_ratio", "scale_robustness",
    "gradient_peaks", "lower_bound_experiment", "symbol_library",
]


class BmoError(ValueError):
    pass


@dataclass(frozen=True)
class AdaptedRect:
    """corner + [0, l] x [0, l^beta], mapped by ``frame`` about the corner."""

    corner: tuple
    ell: float
    beta: float
    frame: np.ndarray | None = None

    @property
    def sides(self):
        return self.ell, self.ell**self.beta

    @property
    def area(self):
        return self.ell ** (1.0 + self.beta)

    def points(self, n):
        """Cell-centre grid of n x n points (two arrays of shape (n, n))."""
        c = (np.arange(n) + 0.5) / n
        s1, s2 = self.sides
        P1, P2 = np.meshgrid(s1 * c, s2 * c, indexing="ij")
        if self.frame is not None:
            O = np.asarray(self.frame, dtype=float)
            P1, P2 = O[0, 0] * P1 + O[0, 1] * P2, O[1, 0] * P1 + O[1, 1] * P2
        return self.corner[0] + P1, self.corner[1] + P2

    def bounding_box(self):
        s1, s2 = self.sides
        cor = np.array([[0, 0], [s1, 0], [0, s2], [s1, s2]], dtype=float)
        if self.frame is not None:
            cor = cor @ np.asarray(self.frame, dtype=float).T
        lo, hi = cor.min(0), cor.max(0)
        return (self.corner[0] + lo[0], self.corner[0] + hi[0],
                self.corner[1] + lo[1], self.corner[1] + hi[1])

    def dilated(self, lam):
        """Image under (x1, x2) -> (lam x1, lam^beta x2); frame must be None."""
        if self.frame is not None:
            raise BmoError("parabolic dilation is only defined for unrotated rectangles")
        return AdaptedRect((lam * self.corner[0], lam**self.beta * self.corner[1]),
                           lam * self.ell, self.beta)


def dilate(b, lam, beta):
    """The symbol b o delta_lam, delta_lam(x1, x2) = (lam x1, lam^beta x2)."""
    return lambda x1, x2: b(lam * np.asarray(x1), lam**beta * np.asarray(x2))


def _values(b, rect, n):
    if isinstance(b, SampledFunction):
        x1lo, x1hi, x2lo, x2hi = rect.bounding_box()
        B = b.box
        tol = 1e-12 * max(1.0, *(abs(v) for v in B))
        if x1lo < B[0] - tol or x1hi > B[1] + tol or x2lo < B[2] - tol or x2hi > B[3] + tol:
            raise BmoError(f"rectangle {rect.bounding_box()} leaves the sampled box {B}")
    X1, X2 = rect.points(n)
    v = np.asarray(b(X1, X2), dtype=float)
    if not np.all(np.isfinite(v)):
        raise BmoError("symbol is not finite on the rectangle grid")
    return v


def _osc(v, ps):
    # shift by one sample first so that constant data give exact zeros
    d = v - v.flat[0]
    d = np.abs(d - d.mean())
    top = d.max()
    if top == 0.0:
        return [0.0 for _ in ps]
    r = d / top
    return [float(top * np.mean(r**p) ** (1.0 / p)) for p in ps]


def mean_oscillation(b, rect, p=1.0, n=64):
    """(avg_R |b - <b>_R|^p)^(1/p) on the n x n cell-centre grid of R."""
    if p < 1:
        raise BmoError("p must be >= 1")
    return _osc(_values(b, rect, n), [p])[0]


def oscillation_profile(b, rect, ps, n=64):
    """Mean oscillations of one rectangle for several exponents."""
    return _osc(_values(b, rect, n), list(ps))


@dataclass
class RectSampler:
    """Adapted rectangles on a dyadic scale ladder with random placement.

    For every scale l (capped at ``max_scale``) ``per_scale`` corners are
    drawn so that the rectangle lies in ``region``; ``centres`` adds one
    rectangle per scale centred at each given point (e.g. large-gradient
    points of the symbol), clipped into the region.
    """

    scales: list
    per_scale: int
    region: tuple
    beta: float
    frame: np.ndarray | None = None
    max_scale: float | None = None
    seed: int = 0
    centres: list = field(default_factory=list)

    @classmethod
    def dyadic(cls, K, per_scale, region, beta, **kw):
        return cls([2.0**-k for k in range(K + 1)], per_scale, region, beta, **kw)

    def restricted(self, tau):
        """Same sampler with scales above ``tau`` removed."""
        return RectSampler([s for s in self.scales if s <= tau], self.per_scale, self.region,
                           self.beta, self.frame, self.max_scale, self.seed, list(self.centres))

    def rects(self):
        rng = np.random.default_rng(self.seed)
        x1lo, x1hi, x2lo, x2hi = self.region
        out = []
        for ell in self.scales:
            if self.max_scale is not None and ell > self.max_scale:
                continue
            proto = AdaptedRect((0.0, 0.0), ell, self.beta, self.frame)
            b1lo, b1hi, b2lo, b2hi = proto.bounding_box()
            lo1, hi1 = x1lo - b1lo, x1hi - b1hi
            lo2, hi2 = x2lo - b2lo, x2hi - b2hi
            if hi1 < lo1 or hi2 < lo2:
                continue
            c1 = rng.uniform(lo1, hi1, self.per_scale)
            c2 = rng.uniform(lo2, hi2, self.per_scale)
            out += [AdaptedRect((a, b), ell, self.beta, self.frame) for a, b in zip(c1, c2)]
            mid1, mid2 = 0.5 * (b1lo + b1hi), 0.5 * (b2lo + b2hi)
            for p1, p2 in self.centres:
                out.append(AdaptedRect((float(np.clip(p1 - mid1, lo1, hi1)),
                                        float(np.clip(p2 - mid2, lo2, hi2))),
                                       ell, self.beta, self.frame))
        return out


def gradient_peaks(b, region, count=4, n=128):
    """Points of largest finite-difference gradient of b on a grid."""
    x1 = np.linspace(region[0], region[1], n)
    x2 = np.linspace(region[2], region[3], n)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    v = np.asarray(b(X1, X2), dtype=float)
    g1, g2 = np.gradient(v, x1, x2)
    mag = np.hypot(g1, g2)
    mag[~np.isfinite(mag)] = 0.0
    idx = np.argsort(mag.ravel())[::-1][:count]
    return [(float(X1.flat[i]), float(X2.flat[i])) for i in idx]


def bmo_scan(b, sampler, p=1.0, n=64):
    """(rect, oscillation) for every sampled rectangle."""
    return [(r, mean_oscillation(b, r, p, n)) for r in sampler.rects()]


def bmo_norm_estimate(b, sampler, p=1.0, n=64):
    """Max of the mean oscillation over the sampled rectangles (a lower
    estimate of the BMO_gamma norm)."""
    vals = [o for _, o in bmo_scan(b, sampler, p, n)]
    return float(max(vals, default=0.0))


def john_nirenberg_ratio(b, sampler, p, n=64):
    """sup_R p-oscillation / sup_R 1-oscillation over the sampled family."""
    if p <= 1:
        raise BmoError("p must exceed 1")
    rects = sampler.rects()
    prof = np.array([oscillation_profile(b, r, (1.0, p), n) for r in rects]).reshape(-1, 2)
    base = prof[:, 0].max(initial=0.0)
    if base == 0.0:
        return 0.0
    return float(prof[:, 1].max() / base)


def scale_robustness(b, sampler, tau=0.25, p=1.0, n=64):
    """estimate over all scales / estimate over scales <= tau."""
    full = bmo_norm_estimate(b, sampler, p, n)
    small = bmo_norm_estimate(b, sampler.restricted(tau), p, n)
    if full == 0.0:
        return 0.0
    return float(full / small) if small > 0 else float("inf")


def lower_bound_experiment(b, curve, p, sampler, box, shape=(48, 48), n=64, budget=200, seed=0):
    """Sampled BMO_gamma estimate of b, a lower estimate of the l^p norm of
    the discretised commutator [b, H_gamma] on ``box``, and their ratio."""
    from .transform import cell_grid

    bmo = bmo_norm_estimate(b, sampler, 1.0, n)
    c1, c2 = cell_grid(box, shape)[1]
    X1, X2 = np.meshgrid(c1, c2, indexing="ij")
    bv = np.asarray(b(X1, X2), dtype=float).ravel()
    H = assemble_hilbert_matrix(curve, box, shape)
    C = commutator_matrix(bv, H)
    comm = operator_norm_lower(C, p, shape=shape, budget=budget, seed=seed)
    ratio = bmo / comm if comm > 0 else 0.0
    return {"bmo_est": bmo, "comm_norm_est": comm, "ratio": ratio}


def symbol_library(beta, scale=1.0):
    """Named symbols of the lower-bound experiment."""

    def log_abs(x1, x2):
        return np.log(np.maximum(np.abs(np.asarray(x1, dtype=float)), 1e-300)) + 0.0 * np.asarray(x2)

    def bump(x1, x2):
        return np.exp(-((np.asarray(x1) / scale) ** 2 + (np.asarray(x2) / scale**beta) ** 2) * 8.0)

    def checker(x1, x2):
        return np.sign(np.sin(4 * np.pi * np.asarray(x1) / scale) * np.sin(4 * np.pi * np.asarray(x2) / scale**beta))

    def indicator(x1, x2):
        return ((np.asarray(x1) > 0) & (np.asarray(x2) > 0)).astype(float)

    return {"log_abs_x1": log_abs, "bump": bump, "checkerboard": checker, "quadrant": indicator}
