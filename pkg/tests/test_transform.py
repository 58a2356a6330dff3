import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from awflab import geometry as G
from awflab import transform as T
from awflab.curve import MonomialCurve, NormalizedCurve, eval_curve
from awflab.experiments import unit_geometry

PARABOLA = NormalizedCurve(2.0)


def bump(c1=0.0, c2=0.0, a=1.0, b=1.0, amp=1.0):
    def fun(x1, x2):
        r2 = ((np.asarray(x1) - c1) / a) ** 2 + ((np.asarray(x2) - c2) / b) ** 2
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(r2 < 1, amp * np.exp(-1.0 / np.maximum(1 - r2, 1e-300)), 0.0)
    return T.Analytic(fun, (c1 - a, c1 + a, c2 - b, c2 + b))


def quad_oracle(f, curve, x, sign=1.0, span=20.0):
    """p.v. int f(x - sign*gamma(t)) dt/t by scipy's adaptive quad, folded at 0."""
    def F(t):
        g1, g2 = eval_curve(curve, t)
        return float(f(x[0] - sign * g1, x[1] - sign * g2))

    odd = lambda t: (F(t) - F(-t)) / t  # noqa: E731
    pts = np.linspace(0, span, 41)
    return sum(quad(odd, a, b, epsabs=1e-14, epsrel=1e-12, limit=400)[0] for a, b in zip(pts, pts[1:]))


def test_zero_input():
    f = T.Analytic(lambda x1, x2: 0.0 * x1, (-1, 1, -1, 1))
    assert T.hilbert_gamma(f, PARABOLA, (0.2, 0.3)) == 0.0
    assert T.hilbert_gamma_adjoint(f, PARABOLA, (0.2, 0.3)) == 0.0
    assert T.hilbert_truncated(f, lambda t: eval_curve(PARABOLA, t), (0.2, 0.3), (0.1, 0.5)) == 0.0


def test_indicator_of_P_on_W1(rng):
    g = unit_geometry(2.0, 20)
    P = T.Indicator((g.v[0], g.v[0] + 1, g.v[1], g.v[1] + 1))
    xi1, xi2, t = G.sample_W1(g, 20, rng)
    for k in range(20):
        y = (xi1[k] + t[k], xi2[k] + t[k] ** 2)
        w = G.interval_y_P(g, y).width
        val = T.hilbert_gamma(P, g.curve, y)
        assert val < 0
        assert w / ((g.A2 + 3) * g.ell) * (1 - 1e-9) <= -val <= w / ((g.A2 - 3) * g.ell) * (1 + 1e-9)


@pytest.mark.parametrize("x", [(0.3, 0.1), (-0.4, 0.7), (1.2, 0.9), (0.0, 0.0)])
def test_bump_pinned_by_refined_oracle(x):
    f = bump(0.1, 0.2, 0.8, 0.6)
    val = T.hilbert_gamma(f, PARABOLA, x, T.QuadratureConfig(tol=1e-11))
    ref = quad_oracle(f, PARABOLA, x, span=3.0)
    assert val == pytest.approx(ref, rel=1e-6, abs=1e-10)


def test_adjoint_is_reflected_transform():
    f = bump(0.1, 0.2, 0.8, 0.6)
    x = (0.3, 0.5)
    assert T.hilbert_gamma_adjoint(f, PARABOLA, x) == pytest.approx(
        quad_oracle(f, PARABOLA, x, sign=-1.0, span=3.0), rel=1e-6, abs=1e-10)


def test_duality(rng):
    # <H f, g> = <f, H* g> by tensor Gauss rules over the supports
    xs, ws = np.polynomial.legendre.leggauss(14)
    worst = 0.0
    for _ in range(10):
        c = rng.uniform(-0.5, 0.5, 4)
        f = bump(c[0], c[1], 0.5, 0.5)
        gf = bump(c[2], c[3], 0.5, 0.5)

        def pair(fa, fb, adjoint):
            a1, b1, a2, b2 = fb.box
            p1 = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * xs
            p2 = 0.5 * (a2 + b2) + 0.5 * (b2 - a2) * xs
            w = np.outer(ws, ws) * 0.25 * (b1 - a1) * (b2 - a2)
            op = T.hilbert_gamma_adjoint if adjoint else T.hilbert_gamma
            vals = np.array([[op(fa, PARABOLA, (u, v)) * float(fb(u, v)) for v in p2] for u in p1])
            return float(np.sum(w * vals))

        lhs = pair(f, gf, False)
        rhs = pair(gf, f, True)
        n1 = np.sqrt(pair_norm(f)) * np.sqrt(pair_norm(gf))
        worst = max(worst, abs(lhs - rhs) / n1)
    assert worst < 1e-4


def pair_norm(f):
    xs, ws = np.polynomial.legendre.leggauss(40)
    a1, b1, a2, b2 = f.box
    p1 = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * xs
    p2 = 0.5 * (a2 + b2) + 0.5 * (b2 - a2) * xs
    X1, X2 = np.meshgrid(p1, p2, indexing="ij")
    return float(np.sum(np.outer(ws, ws) * f(X1, X2) ** 2) * 0.25 * (b1 - a1) * (b2 - a2))


def test_truncated_odd_cancellation():
    one = T.Analytic(lambda x1, x2: np.ones_like(x1))
    assert T.hilbert_truncated(one, lambda t: eval_curve(PARABOLA, t), (0.3, 0.2), (0.0, 1.0)) == 0.0
    assert T.hilbert_truncated(one, lambda t: eval_curve(PARABOLA, t), (0.3, 0.2), (0.2, 0.9)) == 0.0


def test_truncated_parabola_vs_perturbed():
    f = bump(0.0, 0.0, 0.7, 0.7)
    x = (0.35, 0.25)
    perturbed = lambda t: (np.asarray(t) + 0.3 * np.asarray(t) ** 3, np.sign(t) * np.asarray(t) ** 2)  # noqa: E731

    def oracle(cmap):
        def F(t):
            c1, c2 = cmap(t)
            return float(f(x[0] - c1, x[1] - c2))
        return quad(lambda t: (F(t) - F(-t)) / t, 0.1, 0.5, epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    q = T.QuadratureConfig(tol=1e-11)
    a = T.hilbert_truncated(f, lambda t: eval_curve(PARABOLA, t), x, (0.1, 0.5), q)
    b = T.hilbert_truncated(f, perturbed, x, (0.1, 0.5), q)
    assert a == pytest.approx(oracle(lambda t: eval_curve(PARABOLA, t)), rel=1e-8, abs=1e-12)
    assert b == pytest.approx(oracle(perturbed), rel=1e-8, abs=1e-12)
    assert abs(a - b) > 1e-6


def test_truncated_rejects_bad_window():
    one = T.Analytic(lambda x1, x2: np.ones_like(x1))
    with pytest.raises(T.TransformError):
        T.hilbert_truncated(one, lambda t: (t, t), (0, 0), (0.5, 0.1))


def test_commutator_constant_symbol():
    f = bump(0.1, 0.1, 0.5, 0.5)
    assert T.commutator_apply(lambda a, b: 3.0 + 0 * np.asarray(a), f, PARABOLA, (0.3, 0.4)) == pytest.approx(0.0, abs=1e-14)


def test_commutator_support_separation():
    box = (0.0, 1.0, 0.0, 1.0)
    f = T.Indicator(box)
    ind = T.Indicator(box)
    assert T.commutator_apply(ind, f, PARABOLA, (50.0, -40.0)) == 0.0


def test_commutator_linear_symbol_pinned():
    f = bump(0.0, 0.0, 0.6, 0.6)
    b = lambda a, c: np.asarray(a, dtype=float)  # noqa: E731
    x = (0.4, 0.3)
    val = T.commutator_apply(b, f, PARABOLA, x, T.QuadratureConfig(tol=1e-11))
    # [x1, H] f(x) = p.v. int gamma_1(t) f(x - gamma(t)) dt/t = int f(x - gamma(t)) dt
    def F(t):
        return float(f(x[0] - t, x[1] - np.sign(t) * t**2))
    ref = quad(F, -2, 2, points=[0.0], epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    assert val == pytest.approx(ref, rel=1e-6)


def test_sampled_function_validation():
    with pytest.raises(T.TransformError):
        T.SampledFunction((0, 1, 0, 1), np.zeros((1, 5)))
    with pytest.raises(T.TransformError):
        T.SampledFunction((0, 1, 0, 1), np.full((3, 3), np.nan))
    with pytest.raises(T.TransformError):
        T.SampledFunction((0, 1, 0, 1), np.zeros((3, 3)), interpolation="cubic")
    with pytest.raises(T.TransformError):
        T.QuadratureConfig(pv_cutoff=0)


def test_sampled_function_zero_outside():
    s = T.SampledFunction.from_callable(lambda a, b: 1 + a + b, (0, 1, 0, 1), (5, 5))
    assert s(2.0, 0.5) == 0.0
    assert s(0.5, 0.5) == pytest.approx(2.0)
    assert s.sup() == pytest.approx(3.0)


def test_grid_convergence():
    smooth = lambda a, b: np.cos(2 * a) * np.sin(3 * b + 0.2)  # noqa: E731
    box = (-1.0, 1.0, -1.0, 1.0)
    exact = T.Analytic(smooth, box)
    x = (0.3, 0.2)
    q = T.QuadratureConfig(tol=1e-10)
    ref = T.hilbert_gamma(exact, PARABOLA, x, q)
    errs = [abs(T.hilbert_gamma(T.SampledFunction.from_callable(smooth, box, (n, n)), PARABOLA, x, q) - ref)
            for n in (17, 33, 65)]
    assert errs[0] / errs[1] >= 1.5 and errs[1] / errs[2] >= 1.5


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(-3, 3), c=st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)),
       x=st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_linearity(alpha, c, x):
    f = bump(c[0], c[1], 0.6, 0.6)
    g = bump(-c[1], c[0], 0.5, 0.7)
    box = (-1.0, 1.0, -1.0, 1.0)
    h = T.Analytic(lambda a, b: alpha * f(a, b) + g(a, b), box)
    q = T.QuadratureConfig(tol=1e-10)
    lhs = T.hilbert_gamma(h, PARABOLA, x, q)
    rhs = alpha * T.hilbert_gamma(f, PARABOLA, x, q) + T.hilbert_gamma(g, PARABOLA, x, q)
    assert lhs == pytest.approx(rhs, rel=2e-9, abs=2e-10 * (1 + abs(alpha)))


@pytest.mark.parametrize("b1, b2", [(2.0, 4.0), (3.0, 4.0)])
def test_change_of_variables(b1, b2, rng):
    f = bump(0.1, 0.0, 0.7, 0.7)
    mono = MonomialCurve(b1, b2)
    norm = NormalizedCurve(b2 / b1)
    q = T.QuadratureConfig(tol=1e-10)
    for _ in range(20):
        x = tuple(rng.uniform(-0.8, 0.8, 2))
        a = T.hilbert_gamma(f, mono, x, q)
        b = T.hilbert_gamma(f, norm, x, q) / b1
        assert a == pytest.approx(b, rel=1e-8, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(x=st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
def test_reflection_antisymmetry(x):
    f = bump(0.2, -0.1, 0.6, 0.8)
    fr = T.Analytic(lambda a, b: f(-a, -b), (-0.8, 0.4, -0.7, 0.9))
    q = T.QuadratureConfig(tol=1e-10)
    a = T.hilbert_gamma(f, PARABOLA, x, q)
    b = T.hilbert_gamma(fr, PARABOLA, (-x[0], -x[1]), q)
    assert a == pytest.approx(-b, rel=2e-9, abs=2e-10)


# --- discretised operators ------------------------------------------------


def test_operator_norm_examples():
    N = 64
    import scipy.sparse as sp
    assert T.operator_norm_lower(sp.csr_matrix((N, N)), 2.0) == 0.0
    assert T.operator_norm_lower(3 * sp.identity(N, format="csr"), 2.0) >= 3 * (1 - 1e-12)
    assert T.operator_norm_lower(3 * sp.identity(N, format="csr"), 3.0) >= 3 * (1 - 1e-12)
    with pytest.raises(T.TransformError):
        T.operator_norm_lower(sp.identity(N, format="csr"), 1.0)


def test_power_iteration_matches_dense_norm():
    box = (-1.0, 1.0, -1.0, 1.0)
    H = T.assemble_hilbert_matrix(PARABOLA, box, (20, 20))
    dense = T.operator_norm_dense(H)
    assert T.operator_norm_lower(H, 2.0, budget=400) == pytest.approx(dense, rel=1e-3)


def test_commutator_norm_envelope():
    box = (-1.0, 1.0, -1.0, 1.0)
    shape = (24, 24)
    H = T.assemble_hilbert_matrix(PARABOLA, box, shape)
    _, (c1, c2) = T.cell_grid(box, shape)
    X1, X2 = np.meshgrid(c1, c2, indexing="ij")
    b = ((X1 > 0) & (X2 > 0)).astype(float)
    C = T.commutator_matrix(b.ravel(), H)
    est = T.operator_norm_lower(C, 2.0, budget=300)
    assert 0 < est <= 2 * 1.0 * T.operator_norm_dense(H) * (1 + 1e-9)
    assert est <= T.operator_norm_dense(C) * (1 + 1e-9)


def test_matrix_rows_match_point_evaluation():
    # a row of the matrix applied to a cell indicator is H of that indicator
    box = (-1.0, 1.0, -1.0, 1.0)
    shape = (8, 8)
    H = T.assemble_hilbert_matrix(PARABOLA, box, shape)
    (e1, e2), (c1, c2) = T.cell_grid(box, shape)
    j = 3 * 8 + 5
    cell = T.Indicator((e1[3], e1[4], e2[5], e2[6]))
    col = H[:, j].toarray().ravel()
    q = T.QuadratureConfig(tol=1e-11)
    for i in (0, 10, 27, 40, 63):
        x = (c1[i // 8], c2[i % 8])
        assert col[i] == pytest.approx(T.hilbert_gamma(cell, PARABOLA, x, q), rel=1e-7, abs=1e-10)
