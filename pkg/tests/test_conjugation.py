import numpy as np
import pytest

from mvlab import conjugation as cj
from mvlab import noise, sode
from mvlab.measures import EmpiricalMeasure, dirac


def linear_sigma_model():
    """d = m = 1, sigma(x) = x, b = -x: closed-form u(z, x) = x e^z."""
    return sode.SodeModel(
        d=1,
        m=1,
        b=lambda x, mu: -x,
        sigma=lambda x: x[..., None],
        dsigma=lambda x: np.ones(x.shape[:-1] + (1, 1, 1)),
    )


def zero_sigma_model():
    return sode.SodeModel(
        d=1,
        m=1,
        b=lambda x, mu: -x,
        sigma=lambda x: np.zeros(x.shape + (1,)),
        dsigma=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
    )


def ou_on(path, eta=5.0):
    return noise.ou_path(path, eta)


def test_solve_u_linear_closed_form():
    s = cj.ConjugationSolver(linear_sigma_model())
    for z, x in [(0.4, 1.0), (-1.2, 2.0), (2.0, -0.3)]:
        u, du = s.solve_u(np.array([z]), np.array([x]))
        assert u[0] == pytest.approx(x * np.exp(z), rel=1e-9)
        assert du[0, 0] == pytest.approx(np.exp(z), rel=1e-9)


def test_solve_u_identity_at_zero():
    s = cj.ConjugationSolver(linear_sigma_model())
    u, du = s.solve_u(np.array([0.0]), np.array([3.0]))
    assert u[0] == 3.0 and du[0, 0] == 1.0


def test_solve_u_example_growth_bound():
    # |u(z, x)| <= |x| e^{(3/2)|z|} on a probe grid
    s = cj.ConjugationSolver(sode.make_example_model())
    for x in (-4.0, -0.5, 0.8, 3.0):
        for z in (-1.5, -0.4, 0.3, 1.0):
            u, _ = s.solve_u(np.array([z]), np.array([x]))
            assert abs(u[0]) <= abs(x) * np.exp(1.5 * abs(z)) + 1e-12


def test_conjugate_trivial_when_sigma_zero():
    model = zero_sigma_model()
    path = noise.sample_wiener(-1.0, 1.0, 0.01, 1, seed=3)
    s = cj.ConjugationSolver(model)
    z = ou_on(path)
    x = np.array([1.7])
    assert np.array_equal(s.conjugate(z, 0.5, x), x)


def test_conjugate_linear_matches_exponential():
    model = linear_sigma_model()
    path = noise.sample_wiener(-1.0, 1.0, 0.01, 1, seed=5)
    z = ou_on(path)
    s = cj.ConjugationSolver(model)
    for t in (-0.5, 0.0, 0.75):
        zt = z.value(t)[0]
        got = s.conjugate(z, t, np.array([2.0]))[0]
        assert got == pytest.approx(2.0 * np.exp(zt), rel=1e-8)


def test_round_trip_inverse():
    model = sode.make_example_model()
    path = noise.sample_wiener(-1.0, 1.0, 0.01, 1, seed=7)
    z = ou_on(path)
    s = cj.ConjugationSolver(model)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        t = float(rng.integers(-100, 101)) * 0.01
        x = rng.uniform(-4, 4, size=1)
        y = s.conjugate(z, t, x)
        back = s.conjugate_inverse(z, t, y)
        worst = max(worst, float(np.abs(back - x)[0]))
    assert worst <= 1e-8


def test_transform_stationarity_exact():
    # T_t(w) == T_0(theta_t w): both read the same OU value
    model = sode.make_example_model()
    path = noise.sample_wiener(-2.0, 2.0, 0.01, 1, seed=11)
    z = ou_on(path)
    s = cj.ConjugationSolver(model)
    x = np.array([1.3])
    for t in (-1.0, 0.25, 1.5):
        a = s.conjugate(z, t, x)
        b = s.conjugate(z.shift(t), 0.0, x)
        assert np.array_equal(a, b)


def test_random_ode_rhs_reductions():
    # sigma = 0 -> g = b;  z = 0 snapshot -> g = b
    m0 = zero_sigma_model()
    path = noise.sample_wiener(-1.0, 1.0, 0.01, 1, seed=13)
    z = ou_on(path)
    s0 = cj.ConjugationSolver(m0)
    x, mu = np.array([0.9]), dirac(0.0)
    g = s0.random_ode_rhs(z, 0.3, x, mu)
    assert g[0] == pytest.approx(-0.9, rel=1e-12)
    # closed form for sigma(x) = x: g = e^{-z} b(x e^z, mu) + eta x z
    ml = linear_sigma_model()
    sl = cj.ConjugationSolver(ml)
    t = 0.42
    zt = z.value(t)[0]
    g = sl.random_ode_rhs(z, t, x, mu)
    expect = np.exp(-zt) * (-(x[0] * np.exp(zt))) + z.eta * x[0] * zt
    assert g[0] == pytest.approx(expect, rel=1e-8)


def test_integrate_chi_constant_when_coefficients_vanish():
    model = zero_sigma_model()
    model.b = lambda x, mu: np.zeros_like(x)
    path = noise.sample_wiener(0.0, 1.0, 0.01, 1, seed=17)
    z = ou_on(path)
    s = cj.ConjugationSolver(model)
    times, chi = s.integrate_chi(z, dirac(0.0), np.array([1.1]), 0.0, 1.0)
    assert chi[0, 0] == 1.1
    assert np.all(chi == 1.1)


def test_chi_flow_law_restart_exact():
    model = sode.make_example_model()
    path = noise.sample_wiener(0.0, 0.5, 1e-2, 1, seed=19)
    z = ou_on(path)
    s = cj.ConjugationSolver(model)
    law = sode.simulate_measure_flow(model, dirac(0.4), path, [0.0, 0.5])
    _, full = s.integrate_chi(z, law, np.array([0.8]), 0.0, 0.5)
    # restart from the grid state at s = 0.25 with the shifted noise and advanced law
    _, head = s.integrate_chi(z, law, np.array([0.8]), 0.0, 0.25)
    _, tail = s.integrate_chi(z, law, head[-1], 0.25, 0.5)
    assert float(np.abs(tail[-1] - full[-1])[0]) <= 1e-6


def test_conjugacy_residual_zero_at_t0():
    model = sode.make_example_model()
    path = noise.sample_wiener(0.0, 0.1, 1e-2, 1, seed=23)
    times, _, res = cj.conjugacy_residual_series(model, path, dirac(0.3), np.array([1.0]), 0.1, eta=5.0)
    assert res[0] <= 1e-9


def test_conjugacy_trivial_sigma_zero():
    # with sigma = 0 both sides are deterministic integrators of the same ODE
    model = zero_sigma_model()
    path = noise.sample_wiener(0.0, 1.0, 1e-3, 1, seed=29)
    r = cj.conjugacy_residual(model, path, dirac(0.0), np.array([1.0]), 1.0, eta=5.0)
    assert r <= 1e-6


def test_conjugacy_residual_refines_with_dt():
    model = sode.make_example_model()
    from tests.test_sode import coarsen

    fine = noise.sample_wiener(0.0, 1.0, 2.5e-3, 1, seed=31)
    mu0 = EmpiricalMeasure(np.array([-0.5, 0.5]))
    res = []
    for factor in (4, 2, 1):
        path = coarsen(fine, factor) if factor > 1 else fine
        res.append(cj.conjugacy_residual(model, path, mu0, np.array([1.0]), 1.0, eta=5.0))
    assert res[2] < res[0]
    order = np.log2(res[0] / res[2]) / 2.0
    assert order >= 0.5
    assert res[2] <= 1e-2


def test_birkhoff_constant():
    path = noise.sample_wiener(-50.0, 0.0, 0.01, 1, seed=37)
    z = ou_on(path, eta=1.0)
    r = cj.birkhoff_average(lambda v: -1.0, z, 50.0)
    assert r.time_average == -1.0
    assert r.gauss_hermite == pytest.approx(-1.0, rel=1e-12)


def test_birkhoff_linear_zero_mean():
    eta = 1.0
    path = noise.sample_wiener(-1000.0, 0.0, 0.05, 1, seed=41)
    z = ou_on(path, eta)
    r = cj.birkhoff_average(lambda v: float(v[0]), z, 1000.0)
    se = np.sqrt(1.0 / (eta**2 * 1000.0))
    assert abs(r.time_average) < 4 * se
    assert abs(r.gauss_hermite) < 1e-12


def test_birkhoff_quadratic():
    eta = 2.0
    T = 1000.0 / eta
    path = noise.sample_wiener(-T, 0.0, 0.01, 1, seed=43)
    z = ou_on(path, eta)
    r = cj.birkhoff_average(lambda v: float(v[0] ** 2), z, T)
    assert r.gauss_hermite == pytest.approx(1.0 / (2 * eta), rel=1e-10)
    assert abs(r.time_average - 1.0 / (2 * eta)) < 0.05 / (2 * eta)


def test_birkhoff_short_horizon_rejected():
    path = noise.sample_wiener(-10.0, 0.0, 0.01, 1, seed=43)
    z = ou_on(path, eta=0.5)
    with pytest.raises(Exception):
        cj.birkhoff_average(lambda v: 1.0, z, 1.0)


def test_random_radius_constant_k_and_l():
    path = noise.sample_wiener(-40.0, 0.0, 0.005, 1, seed=47)
    z = ou_on(path, eta=1.0)
    r = cj.random_radius(lambda v: -1.0, lambda v: 1.0, z, 40.0)
    assert r.gamma == pytest.approx(1.0, rel=1e-3)
    assert not r.diverging
    rc = cj.random_radius(lambda v: -1.0, lambda v: 3.5, z, 40.0)
    assert rc.gamma == pytest.approx(3.5, rel=1e-3)


def test_random_radius_quadratic_monte_carlo():
    # K = -2, L = z^2, eta = 1: E gamma = (1/2) int e^{-2r} = 1/4
    vals = []
    for i in range(300):
        path = noise.sample_wiener(-20.0, 0.0, 0.01, 1, seed=noise.derive_seed(1000, i))
        z = ou_on(path, eta=1.0)
        r = cj.random_radius(lambda v: -2.0, lambda v: float(v[0] ** 2), z, 20.0)
        vals.append(r.gamma)
    assert abs(np.mean(vals) - 0.25) < 0.025


def test_random_radius_divergence_warning():
    path = noise.sample_wiener(-20.0, 0.0, 0.01, 1, seed=53)
    z = ou_on(path, eta=1.0)
    with pytest.warns(RuntimeWarning):
        r = cj.random_radius(lambda v: 1.0, lambda v: 1.0, z, 20.0)
    assert r.diverging


def test_negativity_scan_example_gauges():
    scan = cj.negativity_scan(cj.example_k1, cj.example_k2, alpha=8.0)
    assert scan["negative_exists"]
    assert scan["best"]["value"] < 0.0
