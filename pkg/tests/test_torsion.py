import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from awflab import torsion as T


def _direct_K(curve, frame, xi, lo, hi):
    """|int (e^{i phi_model} - e^{i phi}) dt/t| over +-[lo, hi] by plain quad."""
    Ainv = frame.A_inv
    xi = np.asarray(xi, float)

    def f(t):
        g = Ainv @ curve(np.array([t])).reshape(2)
        ph = -2 * np.pi * xi @ g
        pm = -2 * np.pi * (xi[0] * t + xi[1] * t**2)
        return (np.exp(1j * pm) - np.exp(1j * ph)) / t

    tot = 0j
    for a, b in ((lo, hi), (-hi, -lo)):
        re = integrate.quad(lambda t: f(t).real, a, b, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
        im = integrate.quad(lambda t: f(t).imag, a, b, epsabs=1e-14, epsrel=1e-12, limit=500)[0]
        tot += re + 1j * im
    return abs(tot)


# -------------------------------------------------------------------- frames


def test_parabola_frame_is_identity():
    fr = T.taylor_frame(T.parabola())
    for M in (fr.A, fr.B, fr.O):
        assert np.allclose(M, np.eye(2), atol=1e-15)
    assert fr.c == 1.0


def test_circle_frame():
    fr = T.taylor_frame(T.circle_arc())
    assert np.allclose(fr.A, [[1, 0], [0, 0.5]], atol=1e-15)
    assert fr.c == pytest.approx(2.0, rel=1e-15)
    assert np.allclose(fr.B, np.diag([1.0, 2.0]), atol=1e-15)
    assert np.allclose(fr.O, np.eye(2), atol=1e-15)


@given(theta=st.floats(-np.pi, np.pi))
@settings(max_examples=40, deadline=None)
def test_rotated_parabola_frame_recovers_rotation(theta):
    fr = T.taylor_frame(T.rotated_parabola(theta))
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert np.allclose(fr.O, R, atol=1e-12)
    assert fr.orthonormality_defect() < 1e-12


@given(c=st.lists(st.floats(-3, 3), min_size=6, max_size=6), rot=st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_frame_orthonormal_for_polynomials(c, rot):
    C = np.array(c).reshape(3, 2)
    d1, d2 = C[0], C[1]
    if abs(d1[0] * d2[1] - d1[1] * d2[0]) < 1e-3 or np.linalg.norm(d1) < 1e-2:
        return
    fr = T.taylor_frame(T.polynomial_curve(C, rot))
    assert fr.orthonormality_defect() < 1e-12
    # B is upper triangular and O = A B
    assert fr.B[1, 0] == 0.0
    assert np.allclose(fr.A @ fr.B, fr.O, atol=1e-12)


def test_degenerate_curve_rejected():
    with pytest.raises(T.TorsionError):
        T.TorsionCurve(lambda t: np.stack([t, 2 * t]), (1.0, 2.0), (2.0, 4.0))


# ----------------------------------------------------------------- remainder


def test_remainder_examples():
    assert np.all(T.remainder(T.parabola(), np.linspace(-1, 1, 11)) == 0.0)
    t = 0.1
    r = T.remainder(T.circle_arc(), t)
    assert r[0] == pytest.approx(np.sin(t) - t, rel=1e-13)
    assert r[1] == pytest.approx(1 - np.cos(t) - t**2 / 2, rel=1e-12)


@given(t=st.floats(-1, 1).filter(lambda x: x != 0))
@settings(max_examples=50, deadline=None)
def test_circle_remainder_stable_for_small_t(t):
    # series oracle: sin t - t = -t^3/6 + ..., 1 - cos t - t^2/2 = -t^4/24 + ...
    r = T.remainder(T.circle_arc(), t)
    s3 = sum((-1) ** k * t ** (2 * k + 1) / math.factorial(2 * k + 1) for k in range(1, 12))
    s4 = sum((-1) ** (k + 1) * t ** (2 * k) / math.factorial(2 * k) for k in range(2, 12))
    assert r[0] == pytest.approx(s3, rel=1e-12)
    assert r[1] == pytest.approx(s4, rel=1e-12)


def test_remainder_outside_domain():
    with pytest.raises(T.TorsionError):
        T.remainder(T.circle_arc(), 1.5)


def test_remainder_derivative_constant():
    # circle: |R'(t)| / |t| = |(cos t - 1, sin t - t)| / |t| grows like t/2
    assert T.remainder_derivative_constant(T.parabola()) == 0.0
    c = T.remainder_derivative_constant(T.circle_arc(), h=0.5)
    h = 0.5
    assert c == pytest.approx(np.hypot(np.cos(h) - 1, np.sin(h) - h) / h, rel=1e-10)


def test_eps_of_scale_circle():
    # |R(t)| / t^2 is increasing in |t| for the circle
    ell = 0.25
    eps = T.eps_of_scale(T.circle_arc(), ell)
    r = T.remainder(T.circle_arc(), ell)
    assert eps == pytest.approx(np.hypot(*r) / ell**2, rel=1e-12)


# --------------------------------------------------------------------- K


def test_K_zero_at_origin_and_for_parabola():
    fr = T.taylor_frame(T.circle_arc())
    assert T.multiplier_difference_K(T.circle_arc(), fr, (0.0, 0.0), (0.05, 0.1)) == 0.0
    par = T.parabola()
    assert T.multiplier_difference_K(par, T.taylor_frame(par), (300.0, 2000.0), (0.05, 0.1)) == 0.0


@pytest.mark.parametrize("xi", [(30.0, 200.0), (-80.0, 40.0), (5.0, -600.0)])
def test_K_against_plain_quadrature(xi):
    c = T.circle_arc()
    fr = T.taylor_frame(c)
    oracle = _direct_K(c, fr, xi, 0.0625, 0.125)
    for method in ("filon", "gauss"):
        got = T.multiplier_difference_K(c, fr, xi, (0.0625, 0.125), method=method, full_output=True)
        assert got["converged"]
        assert got["K"] == pytest.approx(oracle, rel=1e-7, abs=1e-13)


def test_filon_and_gauss_agree_at_high_frequency():
    c = T.circle_arc()
    fr = T.taylor_frame(c)
    xi = (3e4, 2e5)
    a = T.multiplier_difference_K(c, fr, xi, (1 / 32, 1 / 16), method="filon")
    b = T.multiplier_difference_K(c, fr, xi, (1 / 32, 1 / 16), method="gauss")
    assert a == pytest.approx(b, rel=1e-6, abs=1e-12)


def test_filon_quadratic_fresnel():
    lam = 100.0
    val, err, ok = T.filon_quadratic(lambda t: np.ones_like(t), 0.0, lam / 2, -1.0, 1.0)
    # int_{-1}^{1} e^{i lam t^2 / 2} dt through the Fresnel integrals
    z = np.sqrt(lam / np.pi)
    S, C = special.fresnel(z)
    exact = 2 * np.sqrt(np.pi / lam) * (C + 1j * S)
    assert ok
    assert abs(val - exact) < 1e-10


def test_K_window_validation():
    fr = T.taylor_frame(T.circle_arc())
    with pytest.raises(T.TorsionError):
        T.multiplier_difference_K(T.circle_arc(), fr, (1.0, 1.0), (0.0, 0.5))
    with pytest.raises(T.TorsionError):
        T.multiplier_difference_K(T.circle_arc(), fr, (1.0, 1.0), (0.1, 0.5), method="trapezoid")


def test_envelope_formula():
    ell, eps = 0.1, 0.01
    xi = np.array([[0.0, 100.0], [100.0, 0.0], [50.0, 50.0]])
    env = T.k_envelope(xi, ell, eps)
    assert env[0] == pytest.approx(min(eps * 100 * ell**2, 100**-0.5 / ell))
    assert env[1] == pytest.approx(min(eps * 100 * ell**2, 1 / (100 * ell) + ell))
    r = np.hypot(50, 50)
    assert env[2] == pytest.approx(min(eps * r * ell**2, r**-0.5 / ell + 1 / (r * ell) + ell))


def test_stationary_family_in_grid():
    ell = 0.125
    g = T.default_xi_grid(ell, per_decade=2, angles=4)
    d = g / np.linalg.norm(g, axis=1)[:, None]
    t0 = 0.5 * ell
    want = np.array([-2 * t0, 1.0]) / np.hypot(2 * t0, 1.0)
    assert np.min(np.linalg.norm(d - want, axis=1)) < 1e-12


# ----------------------------------------------------------------- vdC


def test_vdc_linear_phase_exact():
    lam = 50.0
    res = T.vdc_bound_check(lambda t: lam * t, lambda t: np.ones_like(t), (0.0, 1.0))
    exact = abs((np.exp(1j * lam) - 1) / (1j * lam))
    assert res["lhs"] == pytest.approx(exact, rel=1e-10)
    assert res["lambda"] == pytest.approx(lam, rel=1e-10)
    assert res["ratio"] <= 2.0


def test_vdc_one_over_t_envelope():
    ell = 1 / 16
    xi = 1 / ell**2
    res = T.vdc_bound_check(lambda t: -2 * np.pi * xi * (0.3 * t + t**2), lambda t: 1 / t, (ell / 2, ell),
                            mode="kth_derivative", k=2, derivative=lambda t: -4 * np.pi * xi * np.ones_like(t))
    # sup |1/t| + variation = 2/l + 1/l
    assert res["rhs_envelope"] == pytest.approx((4 * np.pi * xi) ** -0.5 * 3 / ell, rel=1e-6)
    assert res["ratio"] < 5.0


def test_vdc_hypothesis_violations():
    with pytest.raises(T.TorsionError):
        T.vdc_bound_check(lambda t: t**2, lambda t: np.ones_like(t), (-1.0, 1.0), lam=1.0)
    with pytest.raises(T.TorsionError):
        # phase' = 3 t^2 + 1 >= 1 but is not monotone on [-1, 1]
        T.vdc_bound_check(lambda t: t**3 + t, lambda t: np.ones_like(t), (-1.0, 1.0), lam=1.0)


def test_vdc_battery_shape():
    cases = T.vdc_battery()
    assert len(cases) == 50
    assert {c[4] for c in cases} == {"first_derivative", "kth_derivative"}


# -------------------------------------------------------- small-scale pieces


def test_i_q_zero_for_parabola():
    par = T.parabola()
    scales = [2.0**-k for k in range(3, 9)]
    assert T.i_q_smallness(par, T.taylor_frame(par), 0.5, scales) == [0.0] * 6


def test_disjoint_window_sum_bound():
    c = T.circle_arc()
    fr = T.taylor_frame(c)
    cut = 0.2
    scales = [2.0**-k for k in range(0, 12)]
    m = T.i_q_smallness(c, fr, cut, scales)
    assert T.disjoint_window_sum(m, scales) <= 2 * (1 - cut) + 1e-12
    assert T.disjoint_window_sum([1.0, 1.0, 1.0], [1.0, 0.5, 0.125]) == 2.0


def test_second_derivative_floor():
    c = T.circle_arc()
    fr = T.taylor_frame(c)
    d1 = T.measure_delta1(c, fr)
    assert 0 < d1 <= 1
    xis = np.array([[0.3, 1.0], [-1.0, 2.0], [1.0, 0.5]])
    assert T.second_derivative_floor(c, fr, d1, xis) >= 1.5 - 1e-9
    par = T.parabola()
    assert T.measure_delta1(par, T.taylor_frame(par)) == 1.0


def test_transport_trivial_frame():
    par = T.parabola()
    res = T.transport_pair(lambda a, b: np.sin(3 * a) + b, T.taylor_frame(par), (0.1, 0.2), 0.3)
    assert res["osc_R"] == pytest.approx(res["osc_AQ1"], rel=1e-12)
    assert res["osc_R"] == pytest.approx(res["osc_R2"], rel=1e-12)
    assert res["cover1"] == pytest.approx(1.0) and res["cover2"] == pytest.approx(1.0)


def test_builtin_curves():
    assert T.builtin_curve("parabola").name == "parabola"
    assert T.builtin_curve("rotated-parabola", theta=0.3).name == "rotated-parabola"
    with pytest.raises(T.TorsionError):
        T.builtin_curve("spiral")
