"""Desk-scale experiments shared by the CLI and the acceptance suite.

Every function returns a plain dict of measured values plus ``checks``, a
mapping from check name to bool.  Nothing here prints.
"""

from __future__ import annotations

import time

import numpy as np

from . import awf, bmo, geometry, torsion
from .curve import NormalizedCurve
from .geometry import GammaRect, make_geometry

SCAN_POINTS = 10_000


def unit_geometry(beta, A1, ell=1.0, corner=(0.0, 0.0)):
    return make_geometry(NormalizedCurve(float(beta)), GammaRect(tuple(map(float, corner)), float(ell)), float(A1))


def _timed(fun):
    def run(*a, **kw):
        t0 = time.perf_counter()
        out = fun(*a, **kw)
        out["seconds"] = time.perf_counter() - t0
        return out
    run.__name__ = fun.__name__
    run.__doc__ = fun.__doc__
    return run


# ---------------------------------------------------------------------------
# geometry


@_timed
def intersection_uniqueness(beta, A1, n=1000, seed=0, scan=SCAN_POINTS, corner=(0.0, 0.0), ell=1.0):
    """Scalar bracketed solves for random (x, y) in Q x P, with residuals,
    windows, a grid sign-change scan and the vectorised Newton route."""
    g = unit_geometry(beta, A1, ell, corner)
    rng = np.random.default_rng(seed)
    ell, ell2 = g.ell, g.side2
    xi = np.column_stack([rng.uniform(0, ell, n), rng.uniform(0, ell2, n)])
    ze = np.column_stack([rng.uniform(0, ell, n), rng.uniform(0, ell2, n)])
    ts = np.empty(n)
    ss = np.empty(n)
    for i in range(n):
        x = (g.u[0] + xi[i, 0], g.u[1] + xi[i, 1])
        y = (g.v[0] + ze[i, 0], g.v[1] + ze[i, 1])
        ts[i], ss[i] = geometry.solve_intersection(g, x, y)
    dx1 = ze[:, 0] - xi[:, 0]
    d2 = ze[:, 1] - xi[:, 1]
    resid = geometry.solve_residual(g, dx1, d2, ts)
    lo1, hi1 = geometry.a1_window(g)
    lo2, hi2 = geometry.a2_window(g)
    in_t = (ts > lo1) & (ts < hi1)
    in_s = (-ss > lo2) & (-ss < hi2)
    changes = geometry.residual_sign_changes(g, dx1, d2, scan)
    tn, _ = geometry.solve_offsets(g, dx1, d2)
    return {
        "beta": beta, "A1": A1, "n": n,
        "max_residual_over_ell": float(resid.max() / ell),
        "frac_t_window": float(in_t.mean()), "frac_s_window": float(in_s.mean()),
        "sign_changes_min": int(changes.min()), "sign_changes_max": int(changes.max()),
        "newton_vs_brent": float(np.max(np.abs(tn - ts)) / ell),
        "checks": {
            "residual<=1e-10*ell": bool(resid.max() <= 1e-10 * ell),
            "windows": bool(in_t.all() and in_s.all()),
            "one_sign_change": bool(np.all(changes == 1)),
        },
    }


@_timed
def width_limit(A1=800.0, beta=2.0, n=1000, seed=0):
    """Sampled |I(x, W1)| / l against C^(b-1)/(C^(b-1) - 1) (19/18 at b=2)."""
    g = unit_geometry(beta, A1)
    rng = np.random.default_rng(seed)
    xi1 = rng.uniform(0, g.ell, n)
    xi2 = rng.uniform(0, g.side2, n)
    t1, t2 = geometry.interval_W1_offsets(g, xi1, xi2)
    w = (t2 - t1) / g.ell
    cb = geometry.c_beta(beta) ** (beta - 1)
    limit = cb / (cb - 1)
    mean = float(w.mean())
    return {
        "beta": beta, "A1": A1, "limit": limit, "mean_width": mean,
        "rel_dev": abs(mean / limit - 1), "max_over_min": float(w.max() / w.min()),
        "checks": {"mean_within_5pct": abs(mean / limit - 1) <= 0.05,
                   "max_over_min<=1.02": float(w.max() / w.min()) <= 1.02},
    }


def _scan_interval_P(g, Y1, Y2, lo, hi, points):
    """Membership scan of {u: y + gamma(u) in P} on [lo, hi]."""
    b = g.beta
    u = np.linspace(lo, hi, points)
    p1 = Y1 + u - g.a1 - g.a2
    p2 = Y2 + u**b - g.a1**b - g.a2**b
    inside = (p1 >= 0) & (p1 <= g.ell) & (p2 >= 0) & (p2 <= g.side2)
    inside &= (u > geometry.a2_window(g)[0]) & (u < geometry.a2_window(g)[1])
    if not inside.any():
        return None
    idx = np.nonzero(inside)[0]
    return u[idx[0]], u[idx[-1]], u[1] - u[0]


@_timed
def interval_closed_forms(beta=2.0, A1=20.0, n_y=100, scan=1_000_000, n_ratio=1000, seed=0):
    """Closed-form I(y, P) against a membership scan, and the two-sided
    width-ratio bound along the sigma-range."""
    g = unit_geometry(beta, A1)
    rng = np.random.default_rng(seed)
    xi1, xi2, t = geometry.sample_W1(g, n_y, rng)
    Y1 = xi1 + t
    Y2 = xi2 + t**beta
    worst = 0.0
    spacing = 0.0
    stray = 0
    for i in range(n_y):
        iv = geometry.interval_y_P(g, (g.u[0] + Y1[i], g.u[1] + Y2[i]))
        lo2, hi2 = geometry.a2_window(g)
        coarse = _scan_interval_P(g, Y1[i], Y2[i], lo2, hi2, 100_001)
        if iv.empty:
            stray += coarse is not None
            continue
        pad = max(iv.width, 1e-3 * g.ell)
        fine = _scan_interval_P(g, Y1[i], Y2[i], iv.lo - pad, iv.hi + pad, scan)
        if fine is None:
            stray += 1
            continue
        a, b, h = fine
        if coarse is not None and (coarse[0] < iv.lo - pad or coarse[1] > iv.hi + pad):
            stray += 1
        worst = max(worst, abs(a - iv.lo), abs(b - iv.hi))
        spacing = max(spacing, h)
    ratios = geometry.width_ratio_samples(g, n_ratio, rng)
    L = geometry.width_ratio_bound(g)
    return {
        "beta": beta, "A1": A1, "max_endpoint_gap_over_ell": worst / g.ell,
        "scan_spacing_over_ell": spacing / g.ell, "stray": stray,
        "ratio_min": float(ratios.min()), "ratio_max": float(ratios.max()), "ratio_bound": L,
        "n_ratio": int(ratios.size),
        "checks": {"endpoints<=1e-6*ell": worst <= 1e-6 * g.ell and stray == 0,
                   "ratio_bound": bool(ratios.min() >= L and ratios.max() <= 1 / L)},
    }


# ---------------------------------------------------------------------------
# factorisation


def pairing_symbols(g):
    """Three symbols of Q-corner offsets: linear, a wide Gaussian and a smooth
    checkerboard on the scale of Q."""
    ell, ell2, be = g.ell, g.side2, g.beta
    A = g.A1 * ell
    return {
        "linear": lambda Y1, Y2: Y1 / ell,
        "gauss": lambda Y1, Y2: np.exp(-(Y1 / A) ** 2 - (Y2 / A**be) ** 2),
        "checker": lambda Y1, Y2: np.tanh(4 * np.sin(2 * np.pi * Y1 / ell) * np.cos(2 * np.pi * Y2 / ell2)),
    }


@_timed
def awf_record(beta, A1, *, reconstruction=False, pairing=False, kernel=True, project_mean=True,
               q_grid=256, fields=False, corner=(0.0, 0.0), ell=1.0):
    """Two-stage factorisation of the two-bump f with its diagnostics and,
    optionally, the reconstruction, pairing and kernel-ratio checks.

    With ``fields`` the record carries ``field_rows``: (xi1, xi2, f~_P, f~_Q)
    on the stage-2 node grid of P (resp. Q), for plotting.
    """
    g = unit_geometry(beta, A1, ell, corner)
    d = awf.awf_two_stage(g, project_mean=project_mean)
    diag = {k: (float(v) if np.isscalar(v) else v) for k, v in d.diagnostics.items()}
    fmax = diag["max_f"]
    out = {"beta": beta, "A1": A1, "diagnostics": diag,
           "eps_P": diag["max_f_tilde_P"] / fmax,
           "eps_Q": diag["max_f_tilde_Q"] / fmax,
           "chain_C": diag["chain_C"], "chain_C_unprojected": diag.get("chain_C_unprojected"),
           "C_h_Q": diag["C_h_Q"], "C_h_W1": diag["C_h_W1"], "checks": {}}
    area = g.Q.area(beta)
    out["int_f_tilde_P_scaled"] = abs(diag["int_f_tilde_P"]) / (fmax * area)
    if kernel:
        kr = awf.kernel_ratio_diagnostic(d.stage, (0.5 * g.ell, 0.5 * g.side2))
        out["C_z_scaled"] = kr["C0_scaled"]
        out["C_z_spread"] = kr["spread"]
    if reconstruction:
        rc = awf.reconstruction_check(d, q_grid=q_grid)
        out["reconstruction"] = rc
        out["checks"]["reconstruction<=1e-3"] = rc["max"] <= 1e-3
        out["checks"]["int_f_tilde_P<=1e-6"] = out["int_f_tilde_P_scaled"] <= 1e-6
    if pairing:
        res = {}
        for name, b in pairing_symbols(g).items():
            r = awf.pairing_identity_check(b, d)
            res[name] = {"lhs": r["lhs"], "rhs": r["rhs"], "rel_gap": r["rel_gap"],
                         "terms": list(r["terms"])}
        out["pairing"] = res
        out["checks"]["pairing_rel_gap<=1e-2"] = all(v["rel_gap"] <= 1e-2 for v in res.values())
    if fields:
        fld = d.stage2.field
        X1, X2 = np.meshgrid(fld.q1, fld.q2, indexing="ij")
        fq = d.stage2.f_tilde_Q(X1.ravel(), X2.ravel())
        out["field_rows"] = list(zip(X1.ravel().tolist(), X2.ravel().tolist(),
                                     fld.values.ravel().tolist(), fq.tolist()))
    return out


def chain_summary(records, A1_list, betas, C_max=10.0, A1_final=400.0):
    """Strict decrease of eps_P along A1 per beta and the eps^2 chain constant
    at the final A1."""
    checks = {}
    table = {}
    for be in betas:
        eps = [next(r["eps_P"] for r in records if r["beta"] == be and r["A1"] == a) for a in A1_list]
        Cs = [next(r["chain_C"] for r in records if r["beta"] == be and r["A1"] == a) for a in A1_list]
        table[str(be)] = {"eps_P": eps, "chain_C": Cs}
        checks[f"eps_P_decreasing[beta={be}]"] = bool(all(b < a for a, b in zip(eps, eps[1:])))
        cf = next(r["chain_C"] for r in records if r["beta"] == be and r["A1"] == A1_final)
        checks[f"chain_C<={C_max}[beta={be}]"] = bool(cf <= C_max)
    return {"table": table, "checks": checks}


def size_constants(records, bound=100.0):
    """Largest measured size constants across the sweep."""
    h_q = max(r["C_h_Q"] for r in records)
    h_w = max(r["C_h_W1"] for r in records)
    cz = max(r.get("C_z_scaled", 0.0) for r in records)
    return {"C_h_Q": h_q, "C_h_W1": h_w, "C_z": cz,
            "checks": {f"C_h_Q<={bound:g}": h_q <= bound, f"C_h_W1<={bound:g}": h_w <= bound,
                       f"C_z<={bound:g}": cz <= bound}}


# ---------------------------------------------------------------------------
# torsion


@_timed
def torsion_frames(n=100, seed=0):
    """Orthonormality on random curves R(t + a t^2, b t + t^2 + ...) and the
    rotated-parabola frame recovery."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a, b = rng.uniform(-2, 2, 2)
        while abs(1 - a * b) < 1e-3:
            a, b = rng.uniform(-2, 2, 2)
        cv = torsion.polynomial_curve([[1.0, b], [a, 1.0], rng.normal(size=2)], rotation=rng.uniform(0, 2 * np.pi))
        worst = max(worst, torsion.taylor_frame(cv).orthonormality_defect())
    th = np.pi / 6
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    rec = float(np.max(np.abs(torsion.taylor_frame(torsion.rotated_parabola(th)).O - R)))
    return {"max_defect": worst, "rotation_recovery": rec,
            "checks": {"orthonormal<=1e-12": worst <= 1e-12, "recovery<=1e-10": rec <= 1e-10}}


@_timed
def multiplier_decay(curve="circle-arc", scales=None, theta=torsion.DEFAULT_THETA,
                     big_theta=torsion.DEFAULT_BIG_THETA, envelope_factor=10.0, per_decade=6, angles=16):
    cv = torsion.builtin_curve(curve)
    fr = torsion.taylor_frame(cv)
    scales = scales or [2.0**-k for k in range(3, 9)]
    rows = torsion.norm_decay_experiment(
        cv, fr, scales, xi_grid=lambda l: torsion.default_xi_grid(l, per_decade=per_decade, angles=angles,
                                                   theta=theta, big_theta=big_theta),
        theta=theta, big_theta=big_theta)
    sup = [r["sup_K"] for r in rows]
    return {"curve": curve, "theta": theta, "big_theta": big_theta, "rows": rows,
            "checks": {"sup_K_strictly_decreasing": bool(all(b < a for a, b in zip(sup, sup[1:]))),
                       f"K<={envelope_factor:g}x_envelope": bool(max(r["max_envelope_ratio"] for r in rows)
                                                                <= envelope_factor),
                       "quadrature_converged": all(r["converged"] for r in rows)}}


@_timed
def vdc_run(seed=0, bound=5.0):
    rows = []
    for name, ph, amp, iv, mode, k, der in torsion.vdc_battery(seed):
        r = torsion.vdc_bound_check(ph, amp, iv, mode, k=k, derivative=der)
        rows.append({"case": name, "mode": mode, "k": k, **{kk: r[kk] for kk in ("lhs", "rhs_envelope", "ratio")}})
    worst = max(r["ratio"] for r in rows)
    modes = {r["mode"] for r in rows}
    inv_t = any(name.startswith("1/t") for name in (r["case"] for r in rows))
    return {"rows": rows, "max_ratio": worst,
            "checks": {f"ratio<={bound:g}": worst <= bound, "both_modes": len(modes) == 2,
                       "has_1/t": inv_t, "fifty_cases": len(rows) == 50}}


# ---------------------------------------------------------------------------
# BMO


def _random_symbol(rng, beta):
    kind = rng.integers(0, 3)
    c = rng.uniform(-1, 1, 2)
    if kind == 0:
        w = rng.uniform(0.3, 2.0)
        return lambda x1, x2: np.exp(-((np.asarray(x1) - c[0]) ** 2 + (np.asarray(x2) - c[1]) ** 2) / w)
    if kind == 1:
        k = rng.uniform(1, 6, 2)
        return lambda x1, x2: np.sin(k[0] * np.asarray(x1)) * np.cos(k[1] * np.asarray(x2))
    return lambda x1, x2: np.log(np.abs(np.asarray(x1) - c[0]) + 0.1) + 0.0 * np.asarray(x2)


@_timed
def bmo_machinery(beta=2.0, K=6, per_scale=256, seed=0, n=64, tau=0.25, robust_bound=10.0):
    region = (-1.0, 1.0, -1.0, 1.0)
    lib = bmo.symbol_library(beta)
    rng = np.random.default_rng(seed)

    # constants on axis-parallel and rotated families
    rot = torsion.taylor_frame(torsion.rotated_parabola(0.4)).O
    const_max = 0.0
    for cval in (0.0, 1.0, -3.7, np.pi * 1e6):
        for fr in (None, rot):
            s = bmo.RectSampler.dyadic(3, 16, region, beta, frame=fr, seed=seed)
            const_max = max(const_max, bmo.bmo_norm_estimate(lambda x1, x2, c=cval: np.full(np.shape(x1), c), s, 1.0, n))

    # p-monotonicity on every sampled rectangle, exactly on grid values
    ps = (1.0, 1.5, 2.0, 3.0, 4.0)
    mono_fail = 0
    mono_rects = 0
    for b in lib.values():
        for r in bmo.RectSampler.dyadic(K, 16, region, beta, seed=seed).rects():
            prof = bmo.oscillation_profile(b, r, ps, n)
            mono_rects += 1
            mono_fail += any(q < p for p, q in zip(prof, prof[1:]))

    # dilation covariance on random (b, R, lambda)
    worst_dil = 0.0
    for _ in range(100):
        b = _random_symbol(rng, beta)
        lam = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
        ell = float(np.exp(rng.uniform(np.log(0.05), np.log(1.0))))
        R = bmo.AdaptedRect(tuple(rng.uniform(-1, 1, 2)), ell, beta)
        p = float(rng.choice(ps))
        lhs = bmo.mean_oscillation(bmo.dilate(b, lam, beta), R, p, n)
        rhs = bmo.mean_oscillation(b, R.dilated(lam), p, n)
        worst_dil = max(worst_dil, abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs else abs(lhs))

    # scale robustness for tau = 1/4 with feature seeding
    robust = {}
    estimates = {}
    for name, b in lib.items():
        s = bmo.RectSampler.dyadic(K, per_scale, region, beta, seed=seed,
                                   centres=bmo.gradient_peaks(b, region))
        robust[name] = bmo.scale_robustness(b, s, tau, 1.0, n)
        estimates[name] = bmo.bmo_norm_estimate(b, s, 1.0, n)
    return {
        "constant_max": const_max, "monotonicity_failures": mono_fail, "monotonicity_rects": mono_rects,
        "dilation_max_rel": worst_dil, "scale_robustness": robust, "bmo_estimates": estimates,
        "checks": {"constants_exactly_0": const_max == 0.0, "p_monotone": mono_fail == 0,
                   "dilation<=1e-6": worst_dil <= 1e-6,
                   f"robustness<={robust_bound:g}": max(robust.values()) <= robust_bound},
    }


@_timed
def bmo_lower_bound(beta=2.0, p=2.0, K=5, per_scale=64, shape=(48, 48), seed=0):
    """BMO estimate, commutator norm lower estimate and ratio per symbol."""
    region = (-1.0, 1.0, -1.0, 1.0)
    rows = {}
    for name, b in bmo.symbol_library(beta).items():
        s = bmo.RectSampler.dyadic(K, per_scale, region, beta, seed=seed, centres=bmo.gradient_peaks(b, region))
        rows[name] = bmo.lower_bound_experiment(b, NormalizedCurve(beta), p, s, region, shape=shape, seed=seed)
    return {"rows": rows, "max_ratio": max(r["ratio"] for r in rows.values()),
            "checks": {"ratios_finite": all(np.isfinite(r["ratio"]) for r in rows.values())}}
