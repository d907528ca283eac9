import numpy as np
import pytest

from mvlab import noise
from mvlab import reaction_diffusion as rd
from mvlab.errors import ConfigurationError
from mvlab.measures import EmpiricalMeasure, dirac, second_moment, wasserstein


def small_config(**kw):
    base = dict(k_modes=8, c0=0.1, dt=1e-3, n_particles=128)
    base.update(kw)
    return rd.RdConfig(**base)


def field_dirac(coeffs):
    return EmpiricalMeasure(np.asarray(coeffs, dtype=float)[None, :])


def test_config_rejects_large_c0():
    with pytest.raises(ConfigurationError):
        rd.RdConfig(c0=0.5)
    with pytest.raises(ConfigurationError):
        rd.RdConfig(c0=1.0)
    assert rd.RdConfig(c0=0.49).contraction_rate == pytest.approx(2 - 4 * 0.49)


def test_drift_zero_state_zero_measure():
    cfg = small_config()
    u = np.zeros(cfg.k_modes)
    out = rd.rd_drift(u, field_dirac(np.zeros(cfg.k_modes)), cfg)
    assert np.all(out == 0.0)


def test_drift_single_mode_formula():
    cfg = small_config(c0=0.1)
    u = np.zeros(cfg.k_modes)
    u[0] = 1.0
    out = rd.rd_drift(u, field_dirac(np.zeros(cfg.k_modes)), cfg)
    assert out[0] == pytest.approx(-1.0 + 0.1, rel=1e-14)
    assert np.all(out[1:] == 0.0)


def test_drift_drag_vanishes_at_mean():
    cfg = small_config()
    u = np.linspace(1, 0.1, cfg.k_modes)
    out = rd.rd_drift(u, field_dirac(u), cfg)
    np.testing.assert_allclose(out, -cfg.lam * u, rtol=1e-14)


def test_heat_decay_noise_off():
    cfg = small_config(c0=1e-9, noise_scale=0.0)  # c0 > 0 required; use negligible drag
    om = noise.sample_wiener(0.0, 1.0, 1e-3, cfg.k_modes, seed=1)
    u0 = np.zeros(cfg.k_modes)
    u0[2] = 1.0  # mode k=3
    out = rd.simulate_rd_frozen_flow(cfg, u0, field_dirac(np.zeros(cfg.k_modes)), om, 0.0, 1.0)
    assert out["terminal"][2] == pytest.approx(np.exp(-9.0), rel=1e-9)


def test_energy_identity_deterministic():
    # d/dt ||u||^2 = 2 sum a_k (drift)_k on noise-free runs
    cfg = small_config(noise_scale=0.0)
    om = noise.sample_wiener(0.0, 0.1, 1e-4, cfg.k_modes, seed=2)
    rng = np.random.default_rng(0)
    u0 = rng.standard_normal(cfg.k_modes)
    mu = field_dirac(rng.standard_normal(cfg.k_modes))
    out = rd.simulate_rd_frozen_flow(cfg, u0, mu, om, 0.0, 0.1, checkpoints=[0.05, 0.05 + 1e-4])
    a = out["checkpoints"][0.05]
    b = out["checkpoints"][0.05 + 1e-4]
    fd = (rd.h_norm(b) ** 2 - rd.h_norm(a) ** 2) / 1e-4
    expect = 2.0 * float(np.sum(a * rd.rd_drift(a[0], mu, cfg)))
    assert abs(fd - expect) < 2e-2 * max(1.0, abs(expect))


def test_linear_stability_norm_never_increases():
    cfg = small_config(c0=1e-12, noise_scale=0.0)
    om = noise.sample_wiener(0.0, 0.5, 1e-2, cfg.k_modes, seed=3)
    rng = np.random.default_rng(1)
    u0 = rng.standard_normal(cfg.k_modes)
    ts = [k * 0.05 for k in range(11)]
    out = rd.simulate_rd_frozen_flow(cfg, u0, field_dirac(np.zeros(cfg.k_modes)), om, 0.0, 0.5, checkpoints=ts)
    norms = [rd.h_norm(out["checkpoints"][t]) for t in ts]
    assert all(norms[i + 1] <= norms[i] + 1e-14 for i in range(len(norms) - 1))


def test_measure_flow_bitwise_and_moment_plateau():
    cfg = small_config(n_particles=256)
    om = noise.sample_wiener(0.0, 8.0, 1e-3, cfg.k_modes, seed=4)
    grid = [0.0, 2.0, 4.0, 6.0, 8.0]
    a = rd.simulate_rd_measure_flow(cfg, field_dirac(np.zeros(cfg.k_modes)), om, grid)
    b = rd.simulate_rd_measure_flow(cfg, field_dirac(np.zeros(cfg.k_modes)), om, grid)
    assert np.array_equal(a.means, b.means)
    m2 = [second_moment(a.measure_at(t)) for t in grid[1:]]
    # long-run second moment plateaus: late values agree within 25%
    assert abs(m2[-1] - m2[-2]) <= 0.25 * m2[-1]
    assert m2[-1] < 10.0


def test_frozen_flow_restart_composition_exact():
    cfg = small_config(n_particles=64)
    om = noise.sample_wiener(-1.0, 0.0, 1e-3, cfg.k_modes, seed=5)
    adapter = rd.make_rd_adapter(cfg)
    mu0 = field_dirac(np.zeros(cfg.k_modes))
    x0 = np.ones(cfg.k_modes)
    mu_d, x_d = adapter.advance(-1.0, 0.0, om, mu0, x0)
    mu_m, x_m = adapter.advance(-1.0, -0.5, om, mu0, x0)
    mu_c, x_c = adapter.advance(-0.5, 0.0, om, mu_m, x_m)
    assert np.array_equal(x_d, x_c)
    assert np.array_equal(mu_d.particles, mu_c.particles)


def test_batched_xi_matches_single_run():
    cfg = small_config(n_particles=64)
    dt = 1e-3
    base_seed = 99
    driver = noise.sample_wiener(-1.0, 0.0, dt, cfg.k_modes, seed=noise.derive_seed(base_seed, "law-driver"))
    law = rd.simulate_rd_measure_flow(cfg, field_dirac(np.zeros(cfg.k_modes)), driver, [-1.0, 0.0], stream_tag=7)
    seeds = [noise.derive_seed(base_seed, "xi-omega", i) for i in range(3)]
    batch = rd._batched_xi_runs(cfg, law, seeds, -1.0, 0.0, dt)
    om1 = noise.sample_wiener(-1.0, 0.0, dt, cfg.k_modes, seed=seeds[1])
    single = rd.simulate_rd_frozen_flow(cfg, np.zeros(cfg.k_modes), law, om1, -1.0, 0.0)["terminal"]
    assert np.array_equal(batch[1], single)


def test_contraction_identical_measures_floor():
    cfg = small_config(n_particles=128)
    om = noise.sample_wiener(0.0, 1.0, 1e-3, cfg.k_modes, seed=6)
    mu = field_dirac(np.zeros(cfg.k_modes))
    out = rd.contraction_test(cfg, mu, mu, om, [0.0, 0.5, 1.0])
    assert out["status"] == "inconclusive"  # identically zero curve: below floor


def test_contraction_dirac_pair_slope():
    cfg = small_config(n_particles=256)
    om = noise.sample_wiener(0.0, 3.0, 1e-3, cfg.k_modes, seed=7)
    e1 = np.zeros(cfg.k_modes)
    e1[0] = 1.0
    out = rd.contraction_test(cfg, field_dirac(np.zeros(cfg.k_modes)), field_dirac(e1), om, np.linspace(0, 3, 7))
    assert out["status"] == "ok"
    assert out["passed"]
    # synchronous translate decays like e^{-t}: slope of log w2^2 near -2
    assert out["slope"] == pytest.approx(-2.0, abs=0.15)


def test_pullback_xi_heat_limit_zero():
    # noise off, negligible drag: every probe flows to 0
    cfg = small_config(c0=1e-9, noise_scale=0.0, n_particles=32)
    om = noise.sample_wiener(-8.0, 0.0, 1e-3, cfg.k_modes, seed=8)
    rng = np.random.default_rng(2)
    probes = rng.standard_normal((4, cfg.k_modes))
    out = rd.pullback_xi(cfg, om, [1.0, 2.0, 4.0, 8.0], probes, [field_dirac(np.zeros(cfg.k_modes))])
    assert np.linalg.norm(out["xi"]) < 1e-3
    assert out["diameters"][-1] < 1e-3


def test_pullback_xi_full_system_contracts():
    cfg = small_config(n_particles=128)
    om = noise.sample_wiener(-8.0, 0.0, 1e-3, cfg.k_modes, seed=9)
    rng = np.random.default_rng(3)
    probes = np.vstack([np.zeros(cfg.k_modes), rng.standard_normal((3, cfg.k_modes))])
    measures = [field_dirac(np.zeros(cfg.k_modes)), EmpiricalMeasure(0.3 * rng.standard_normal((16, cfg.k_modes)))]
    out = rd.pullback_xi(cfg, om, [1.0, 2.0, 4.0, 8.0], probes, measures)
    assert out["diameters"][-1] <= 1e-2
    assert np.linalg.norm(out["xi"]) > 0.0  # nontrivial random point
    # probe-order permutation leaves the estimate bitwise unchanged
    out2 = rd.pullback_xi(cfg, om, [1.0, 2.0, 4.0, 8.0], probes[::-1].copy(), measures)
    assert np.allclose(np.sort(out["cloud"][:4], axis=0), np.sort(out2["cloud"][:4], axis=0), atol=0)


def test_law_of_xi_noise_off_collapses():
    cfg = small_config(c0=1e-9, noise_scale=0.0, n_particles=32)
    out = rd.law_of_xi_test(cfg, base_seed=17, n_omega=8, t_pull=4.0)
    assert out["w2_xi_to_mu_inf"] <= 1e-3
    assert out["w2_control_between_mu_inf"] <= 1e-6


def test_law_of_xi_small_scale():
    cfg = small_config(n_particles=256)
    out = rd.law_of_xi_test(cfg, base_seed=23, n_omega=64, t_pull=8.0)
    # law identification: distance within noise floor + margin
    assert out["w2_xi_to_mu_inf"] <= out["w2_control_between_mu_inf"] + 0.15
    assert out["w2_xi_to_mu_inf"] < 0.5
