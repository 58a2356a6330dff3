import numpy as np
import pytest
from scipy import integrate, optimize

from awflab import awf as W
from awflab import geometry as G
from awflab import transform as T
from awflab._numerics import composite_nodes
from awflab.experiments import pairing_symbols, unit_geometry


@pytest.fixture(scope="module")
def two_stage():
    """One full two-stage run at beta = 2, A1 = 50 (about a minute)."""
    return W.awf_two_stage(unit_geometry(2.0, 50))


def _stage(A1, beta=2.0):
    g = unit_geometry(beta, A1)
    return W.Stage(W.AwfWeight(g, W.select_M(g)), W.two_bump(g))


def _centre_grid(n=64):
    c = (np.arange(n) + 0.5) / n
    X1, X2 = np.meshgrid(c, c, indexing="ij")
    return X1.ravel(), X2.ravel()


# ---------------------------------------------------------------- small pieces


def test_jacobian_det_examples():
    g = unit_geometry(2.0, 50)
    assert W.jacobian_det(g.curve, 1.0, -1.0) == 0.0
    assert W.jacobian_det(g.curve, 2.0, -3.0) == pytest.approx(-2.0, abs=1e-14)


def test_theta_z_positive_on_admissible_pairs():
    g = unit_geometry(2.0, 50)
    t = np.array([49.0, 50.0, 51.0])
    s = -np.array([900.0, 950.0, 1000.0])
    assert np.all(W.theta_z(g.curve, t, s) > 0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_change_of_variables_signed():
    """int int f(h_z(t,s)) / (t s) over F_z equals -int_Q f theta_z, by two
    independent quadratures (pairs parametrised by u = t + sigma, v = t on
    one side, points of Q pushed through the solver on the other)."""
    g = unit_geometry(2.0, 20)
    f = W.two_bump(g)
    b, a1, a2 = g.beta, g.a1, g.a2
    z1, z2 = 0.5, 0.5
    lo, hi = G.a1_window(g)

    def x_of(t, sig):
        return a1 + a2 + z1 - sig - t, z2 - (sig**b - a2**b) - (t**b - a1**b)

    def vlim(u, target):
        h = lambda v: x_of(v, u - v)[1] - target  # noqa: E731
        return optimize.brentq(h, lo, min(hi, u / 2), xtol=1e-15)

    def inner(u):
        va, vb = vlim(u, 0.0), vlim(u, g.side2)
        return integrate.quad(lambda v: f(*x_of(v, u - v)) / (v * (v - u)), va, vb,
                              epsabs=0, epsrel=1e-10, limit=200)[0]

    u0 = a1 + a2 + z1
    lhs = integrate.quad(inner, u0 - g.ell, u0, epsabs=0, epsrel=1e-10, limit=200)[0]
    q, w = composite_nodes(np.linspace(0, 1, 33), 8)
    X1, X2 = np.meshgrid(q, q, indexing="ij")
    t, sig = G.solve_offsets(g, z1 - X1, z2 - X2)
    rhs = np.sum(f(X1, X2) * W.theta_z(g.curve, t, -sig) * np.outer(w, w))
    assert lhs != 0
    assert lhs == pytest.approx(-rhs, rel=1e-6)


def test_two_bump_mean_zero():
    g = unit_geometry(2.0, 50)
    q, w = composite_nodes(np.linspace(0, 1, 17), 8)
    X1, X2 = np.meshgrid(q, q, indexing="ij")
    assert abs(np.sum(W.two_bump(g)(X1, X2) * np.outer(w, w))) < 1e-12


@pytest.mark.parametrize("A1", [20, 50])
def test_select_M_makes_centre_weight_one(A1):
    g = unit_geometry(2.0, A1)
    M = W.select_M(g)
    assert M >= 1.0
    w = W.AwfWeight(g, M)
    rng = np.random.default_rng(1)
    z1, z2 = W.sample_P_cen(g, 2000, rng)
    lo, hi = G.sigma_range_offsets(g, z1, z2)
    sig = lo + rng.uniform(0.01, 0.99, z1.size) * (hi - lo)
    # W1^cen points z - gamma(sigma) in absolute coordinates, fresh seed
    Y = (g.a1 + g.a2 + z1 - sig, g.a1**g.beta + g.a2**g.beta + z2 - sig**g.beta)
    v = W.eval_gW1(w, Y)
    assert np.mean(v == 1.0) >= 0.999
    assert np.min(v) > 0.99


def test_weight_from_width_layers():
    g = unit_geometry(2.0, 50)
    w = W.AwfWeight(g, W.select_M(g))
    width = 1.0 / (8.0 * w.cap)
    assert w.from_width(width) == pytest.approx(2.0**-3, rel=1e-12)
    assert w.from_width(10 * w.cap) == 1.0
    assert w.from_width(0.0) == 0.0


def test_eval_gW1_zero_off_W1():
    g = unit_geometry(2.0, 50)
    w = W.AwfWeight(g, W.select_M(g))
    # Q itself and far points are never in W1
    assert W.eval_gW1(w, (0.5, 0.5)) == 0.0
    assert W.eval_gW1(w, (1e6, -1e6)) == 0.0


def test_f_zero_gives_zero_diagnostics():
    g = unit_geometry(2.0, 20)
    d = W.awf_decompose(g, f=lambda a, b: np.zeros(np.broadcast(a, b).shape))
    for key in ("max_h_Q", "max_h_W1", "max_f_tilde_P", "int_f_tilde_P"):
        assert d.diagnostics[key] == 0.0
    assert np.all(d.f_tilde_P(*_centre_grid(8)) == 0.0)


# ------------------------------------------------------------ H* g_W1 on Q


def test_G_matches_transform_adjoint():
    """Stage.G against the general adaptive PV integrator applied to g_W1."""
    g = unit_geometry(2.0, 20)
    st = _stage(20)
    fW = T.Analytic(lambda y1, y2: W.eval_gW1(st.weight, (y1, y2)))
    q = T.QuadratureConfig(t_domain=G.a1_window(g), tol=1e-10, panels=64, max_depth=16)
    for xi in [(0.3, 0.4), (0.5, 0.5), (0.9, 0.1)]:
        a = float(st.G(np.array([xi[0]]), np.array([xi[1]]))[0])
        b = T.hilbert_gamma_adjoint(fW, g.curve, xi, q)
        assert a == pytest.approx(b, rel=1e-9)


@pytest.mark.parametrize("A1", [20, 50])
def test_G_bounds(A1):
    g = unit_geometry(2.0, A1)
    st = _stage(A1)
    x1, x2 = _centre_grid(16)
    Gv = st.G(x1, x2)
    width = np.array([G.interval_x_W1(g, (a, b)).width for a, b in zip(x1, x2)])
    assert np.all(Gv <= width / ((A1 - 2) * g.ell) * (1 + 1e-12))
    assert np.all(Gv >= st.centre_measure(x1, x2) / ((A1 + 2) * g.ell) * (1 - 1e-12))
    assert W.division_guard(st, x1, x2, Gv) >= 1.0


def test_G_reference_agrees():
    st = _stage(50)
    x1, x2 = _centre_grid(4)
    # the kink-blind uniform rule converges slowly (3e-5 at 400 panels)
    Gv = st.G(x1, x2)
    err = [np.max(np.abs(st.G_reference(x1, x2, panels=p) / Gv - 1)) for p in (400, 6400)]
    assert err[1] < 1e-5
    assert err[1] < err[0] / 4


@pytest.mark.parametrize("A1", [50, 100, 200])
def test_h_Q_size_constant(A1):
    # max |h_Q| / (A1 max |f|) pinned near 0.95 and stable in A1
    st = _stage(A1)
    x1, x2 = _centre_grid(64)
    f = st.f(x1, x2)
    nz = f != 0
    C = np.max(np.abs(f[nz] / st.G(x1[nz], x2[nz]))) / (A1 * np.max(np.abs(f)))
    assert 0.9 < C < 1.0


# ------------------------------------------------------------- kernel ratio


def test_C_z_off_F_z_raises():
    st = _stage(50)
    g = st.geom
    with pytest.raises(W.AwfError):
        W.C_z(st, 0.5, 0.5, g.a1, 10 * g.a2)


def test_kernel_ratio_single_pair_has_zero_spread():
    st = _stage(50)
    g = st.geom
    t0, s0 = G.solve_offset_pair(g, (0.5, 0.5), (0.5, 0.5))
    kr = W.kernel_ratio_diagnostic(st, (0.5, 0.5), pairs=[(t0, s0)])
    assert kr["spread"] == 0.0


def test_kernel_ratio_spread_shrinks():
    spread = [W.kernel_ratio_diagnostic(_stage(A1), (0.5, 0.5))["spread"] for A1 in (50, 100, 200)]
    # pinned: 9.85e-3, 4.93e-3, 2.46e-3 (halves with A1)
    assert spread[0] == pytest.approx(9.8547e-3, rel=1e-3)
    assert spread[1] < 0.55 * spread[0]
    assert spread[2] < 0.55 * spread[1]


def test_weight_ratio_limit():
    """g_W1 / width varies less across an interval of P as A1 grows."""
    rng = np.random.default_rng(0)
    dev = []
    for A1 in (50, 100, 200, 400):
        g = unit_geometry(2.0, A1)
        w = W.AwfWeight(g, W.select_M(g))
        n = 2000
        z1, z2 = rng.uniform(0.01, 0.99, n), rng.uniform(0.01, 0.99, n)
        lo, hi = G.sigma_range_offsets(g, z1, z2)
        s = lo + rng.uniform(0, 1, n) * (hi - lo)
        sp = lo + rng.uniform(0, 1, n) * (hi - lo)
        a, b = G.interval_P_from_z(g, z1, z2, s)
        a2, b2 = G.interval_P_from_z(g, z1, z2, sp)
        wa, wb = np.maximum(b - a, 0), np.maximum(b2 - a2, 0)
        k = (wa > 0) & (wb > 0)
        r = w.from_width(wa[k]) / w.from_width(wb[k]) * wb[k] / wa[k]
        dev.append(np.max(np.abs(r - 1)))
    assert dev[0] < 1e-4
    assert all(dev[i + 1] < dev[i] * 1.05 for i in range(3))


def test_relative_solve_matches_brent():
    g = unit_geometry(3.0, 400)
    rng = np.random.default_rng(3)
    xi = rng.uniform(0, 1, (50, 2))
    ze = rng.uniform(0, 1, (50, 2))
    dt, ds = G.solve_offsets_rel(g, ze[:, 0] - xi[:, 0], ze[:, 1] - xi[:, 1])
    for i in range(50):
        t, s = G.solve_offset_pair(g, tuple(xi[i]), tuple(ze[i]))
        assert g.a1 + dt[i] == pytest.approx(t, abs=1e-11)
        assert g.a2 + ds[i] == pytest.approx(-s, abs=1e-11)


@pytest.mark.slow
def test_kernel_route_stable_at_large_A1():
    """Near the edge of P at beta = 3, A1 = 400 the widths |I(y, P)| are
    about 5e-9 while A2 l is about 6e3.  The kernel value must converge under
    refinement, and tiny shifts of z must leave it within the rounding floor
    of the widths (about 1e-3 of the value here); absolute parameters gave
    changes of order one."""
    g = unit_geometry(3.0, 400)
    st = W.Stage(W.AwfWeight(g, W.select_M(g)), W.two_bump(g))
    z1, z2 = 0.9999999996703122, 0.47882558665414154
    coarse = st.kernel_nodes(W.uniform_nodes(g, 128, 8))
    fine = st.kernel_nodes(W.uniform_nodes(g, 256, 16))
    a = st.f_tilde_P_kernel(np.array([z1]), np.array([z2]), nodes=coarse)[0]
    b = st.f_tilde_P_kernel(np.array([z1]), np.array([z2]), nodes=fine)[0]
    shifts = z1 - np.array([1e-15, 1e-14, 1e-13, 1e-12])
    c = st.f_tilde_P_kernel(shifts, np.full(4, z2), nodes=coarse)
    assert b == pytest.approx(a, rel=5e-3)
    assert np.max(np.abs(c - a)) < 5e-3 * abs(a)


# ------------------------------------------------------- full decomposition


@pytest.mark.slow
def test_reconstruction(two_stage):
    r = W.reconstruction_check(two_stage)
    assert r["max"] <= 1e-3


@pytest.mark.slow
def test_mean_zero_outputs(two_stage):
    d = two_stage.diagnostics
    fmax = d["max_f"]
    assert abs(d["int_f_tilde_P"]) <= 1e-6 * fmax
    assert abs(d["int_f_tilde_Q"]) <= 1e-6 * fmax


@pytest.mark.slow
def test_supports(two_stage):
    g = two_stage.geometry
    out = np.array([-0.1, 1.1, 0.5, 0.5]), np.array([0.5, 0.5, -0.1, 1.1])
    assert np.all(two_stage.h_Q(*out) == 0.0)
    assert np.all(two_stage.f_tilde_P(*out) == 0.0)
    # Q itself is not in W1
    assert np.all(two_stage.h_W1(np.array([0.5]), np.array([0.5])) == 0.0)
    assert g.A1 == 50


@pytest.mark.slow
def test_decay_ratio_tracks_epsilon(two_stage):
    d = two_stage.diagnostics
    eps = d["eps_P"]
    assert 0 < eps < 1
    assert d["ratio_Q_over_P"] / eps < 5 and eps / d["ratio_Q_over_P"] < 5


@pytest.mark.slow
def test_pairing_identity(two_stage):
    g = two_stage.geometry
    for name, b in pairing_symbols(g).items():
        r = W.pairing_identity_check(b, two_stage)
        assert r["rel_gap"] < 1e-3, name


@pytest.mark.slow
def test_pairing_constant_symbol(two_stage):
    r = W.pairing_identity_check(lambda Y1, Y2: np.full(np.shape(Y1), 3.0), two_stage)
    assert abs(r["lhs"]) < 1e-10
    assert all(abs(t) < 1e-10 for t in r["terms"][:4])


@pytest.mark.slow
def test_pairing_last_term_ignores_mean_of_b(two_stage):
    b = pairing_symbols(two_stage.geometry)["linear"]
    r = W.pairing_identity_check(b, two_stage)
    scale = max(abs(t) for t in r["terms"])
    assert abs(r["terms"][4] - r["t5_centred"]) <= 1e-4 * scale
