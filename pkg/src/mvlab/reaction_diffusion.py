"""Spectral Galerkin solver for the McKean-Vlasov stochastic reaction-diffusion
system on (0, pi) with Dirichlet boundary and Stokes-drag mean-field coupling.

Fields are truncated sine-series coefficient vectors a_1..a_K (orthonormal
basis, eigenvalues k^2, first eigenvalue lambda_* = 1); by Parseval the
coefficient l2-norm is the exact L2 norm, so particle clouds over fields plug
directly into the Wasserstein machinery.

Drift: Delta u + F(u, mu) with F(u, mu) = c0 (u - mean(mu)).  Expanding the
monotonicity pairing 2<F(u,mu) - F(v,nu), u - v> and applying Young's
inequality plus the coupling bound ||mean(mu) - mean(nu)|| <= W2(mu, nu)
gives the contraction constants C1 = c0 and C2 = 3 c0; the standing
requirement C1 + C2 < 2 lambda_* therefore forces c0 < 1/2.

Time stepping is Lawson exponential Euler per mode,
a+ = exp(-k^2 dt) (a + dt F_k + q_k dB_k): the stiff Laplacian is integrated
exactly (noise-free c0=0 runs decay by exactly exp(-k^2 t)), and the scheme is
unconditionally stable for the linear part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import noise
from .errors import ConfigurationError, DomainError, SimulationDivergedError
from .measures import EmpiricalMeasure, mean, wasserstein

LAMBDA_STAR = 1.0  # first Dirichlet eigenvalue of -Laplacian on (0, pi)


@dataclass
class RdConfig:
    k_modes: int = 16
    c0: float = 0.1
    dt: float = 1e-3
    n_particles: int = 2048
    q_decay: float = 2.0  # q_k = k^{-q_decay}
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.k_modes < 1 or self.dt <= 0 or self.n_particles < 1:
            raise ConfigurationError("k_modes, dt, n_particles must be positive")
        if self.c0 <= 0:
            raise ConfigurationError("c0 must be positive")
        if self.contraction_rate <= 0:
            raise ConfigurationError(
                f"need C1 + C2 = 4 c0 < 2 lambda_* = 2, i.e. c0 < 1/2; got c0 = {self.c0}"
            )
        k = np.arange(1, self.k_modes + 1, dtype=float)
        if not np.isfinite(np.sum((1 + k**2) * k ** (-2 * self.q_decay))):
            raise ConfigurationError("noise is not H^1_0-valued")

    @property
    def C1(self):
        return self.c0

    @property
    def C2(self):
        return 3.0 * self.c0

    @property
    def contraction_rate(self):
        return 2.0 * LAMBDA_STAR - self.C1 - self.C2

    @property
    def lam(self):
        return np.arange(1, self.k_modes + 1, dtype=float) ** 2

    @property
    def q(self):
        return self.noise_scale * np.arange(1, self.k_modes + 1, dtype=float) ** (-self.q_decay)


def h_norm(coeffs):
    """L2 norm of a field (or batch of fields) from its coefficients."""
    return np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))


def v_norm(coeffs):
    """H^1_0 norm: sum (1 + k^2) a_k^2."""
    coeffs = np.asarray(coeffs)
    k = np.arange(1, coeffs.shape[-1] + 1, dtype=float)
    return np.sqrt(np.sum((1 + k**2) * coeffs**2, axis=-1))


def rd_drift(u, mu, config):
    """Coefficients of Delta u + c0 (u - mean(mu)): per mode -k^2 a_k + c0 (a_k - mbar_k)."""
    u = np.asarray(u, dtype=float)
    mbar = mean(mu) if isinstance(mu, EmpiricalMeasure) else np.asarray(mu)
    return -config.lam * u + config.c0 * (u - mbar)


class RdLawPath:
    """Measure flow of the reaction-diffusion Y-system.

    Only the mean trajectory (all the drag force needs) is stored at full
    resolution; particle snapshots are kept at the requested grid times plus
    the endpoints, so restarts and Wasserstein diagnostics stay exact without
    holding every intermediate ensemble.
    """

    def __init__(self, t0, dt, means, snapshots, weights):
        self.t0 = float(t0)
        self.dt = float(dt)
        self.means = means  # (n_steps + 1, K)
        self.snapshots = snapshots  # {step index: ensemble array}
        self.weights = weights
        self._cache = {}

    def index_of(self, t):
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)) or kr < 0 or kr >= len(self.means):
            raise DomainError(f"time {t} not on the stored law grid")
        return kr

    def mean_at_index(self, k):
        return self.means[k]

    def measure_at(self, t):
        k = self.index_of(t)
        if k not in self._cache:
            if k not in self.snapshots:
                raise DomainError(f"no particle snapshot stored at t={t}")
            self._cache[k] = EmpiricalMeasure(self.snapshots[k], self.weights)
        return self._cache[k]

    def final_measure(self):
        return self.measure_at(self.t0 + (len(self.means) - 1) * self.dt)


def _resample(mu, n, seed_parts):
    """Blow a measure up to an n-particle uniform cloud (deterministic draw)."""
    if mu.n == n and mu.is_uniform:
        return np.array(mu.particles, copy=True)
    rng = np.random.Generator(np.random.Philox(key=noise.derive_seed(*seed_parts)))
    idx = rng.choice(mu.n, size=n, p=mu.weights)
    return np.array(mu.particles[idx], copy=True)


_CHUNK = 512  # noise-generation chunk (steps per batch)


def _particle_noise_chunks(omega, g0, g1, n, k_modes, tag):
    """Yield (start_step, (chunk, N, K) unit normals) over global steps g0..g1."""
    for a in range(g0, g1, _CHUNK):
        b = min(a + _CHUNK, g1)
        block = np.empty((b - a, n, k_modes))
        for i in range(n):
            s = noise.derive_seed(omega.seed, "rd-particle", tag, i)
            block[:, i, :] = noise.unit_normals(s, a, b, k_modes)
        yield a - g0, block


def simulate_rd_measure_flow(config, mu0, omega, t_grid, stream_tag=0):
    """Particle approximation of the reaction-diffusion measure flow.

    Each particle is an independent copy of the SPDE driven by its own
    H^1_0-valued Wiener process (counter streams derived from omega.seed and
    stream_tag); the live ensemble's empirical mean feeds the drag force.
    Returns an RdLawPath with snapshots at t_grid.
    """
    t_grid = [float(t) for t in t_grid]
    t0, t1 = t_grid[0], t_grid[-1]
    g0, g1 = omega.gindex(t0), omega.gindex(t1)
    dt = omega.dt
    K = config.k_modes
    y = _resample(mu0, config.n_particles, (omega.seed, "rd-resample", stream_tag))
    if y.shape[1] != K:
        raise DomainError("mu0 dimension must equal k_modes")
    n = y.shape[0]
    w = np.full(n, 1.0 / n)
    decay = np.exp(-config.lam * dt)
    q_root_dt = config.q * np.sqrt(dt)
    steps = g1 - g0
    means = np.empty((steps + 1, K))
    means[0] = y.mean(axis=0)
    snap_steps = {omega.gindex(t) - g0 for t in t_grid}
    snapshots = {0: np.array(y, copy=True)} if 0 in snap_steps else {}
    for off, block in _particle_noise_chunks(omega, g0, g1, n, K, stream_tag):
        for j in range(block.shape[0]):
            k = off + j
            drag = config.c0 * (y - means[k])
            y = decay * (y + dt * drag + q_root_dt * block[j])
            if not np.all(np.isfinite(y)):
                raise SimulationDivergedError("rd ensemble diverged", t_bad=t0 + (k + 1) * dt)
            means[k + 1] = y.mean(axis=0)
            if k + 1 in snap_steps:
                snapshots[k + 1] = np.array(y, copy=True)
    return RdLawPath(t0, dt, means, snapshots, w)


def simulate_rd_frozen_flow(config, x0, law, omega, t_start, t_end, checkpoints=()):
    """X-flow driven by omega itself along a frozen law (RdLawPath or constant
    mean vector/measure).  x0: (K,) or batch (P, K).  Returns dict with the
    terminal states and any requested checkpoint states."""
    g0, g1 = omega.gindex(t_start), omega.gindex(t_end)
    dt = omega.dt
    K = config.k_modes
    if omega.dim != K:
        raise DomainError("omega.dim must equal k_modes")
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    squeeze = np.asarray(x0).ndim == 1
    decay = np.exp(-config.lam * dt)
    qvec = config.q
    dw = omega.inc[g0 - omega.g_lo : g1 - omega.g_lo]
    if isinstance(law, RdLawPath):
        mean_at = lambda k: law.mean_at_index(law.index_of(t_start) + k)
    elif isinstance(law, EmpiricalMeasure):
        mbar = mean(law)
        mean_at = lambda k: mbar
    else:
        mbar = np.asarray(law, dtype=float)
        mean_at = lambda k: mbar
    want = {omega.gindex(t) - g0 for t in checkpoints}
    saved = {}
    if 0 in want:
        saved[t_start] = np.array(x, copy=True)
    for k in range(g1 - g0):
        drag = config.c0 * (x - mean_at(k))
        x = decay * (x + dt * drag + qvec * dw[k])
        if not np.all(np.isfinite(x)):
            raise SimulationDivergedError("rd X-flow diverged", t_bad=t_start + (k + 1) * dt)
        if k + 1 in want:
            saved[t_start + (k + 1) * dt] = np.array(x, copy=True)
    if squeeze:
        x = x[0]
    return {"terminal": x, "checkpoints": saved}


def make_rd_adapter(config):
    """Cocycle adapter exposing the RD system to the pullback machinery."""
    from .attractor import CocycleAdapter

    def advance_measure(t0, t1, omega, mu):
        return simulate_rd_measure_flow(config, mu, omega, [t0, t1])

    def advance_states(t0, t1, omega, law, states):
        return simulate_rd_frozen_flow(config, states, law, omega, t0, t1)["terminal"]

    def advance(t0, t1, omega, mu, x):
        law = advance_measure(t0, t1, omega, mu)
        x_end = advance_states(t0, t1, omega, law, np.atleast_2d(np.asarray(x, dtype=float)))[0]
        return law.final_measure(), x_end

    return CocycleAdapter(advance=advance, advance_measure=advance_measure, advance_states=advance_states)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _pair_clouds(a, b, seed_parts):
    """Index pairing for the synchronous coupling, by optimal assignment when
    affordable (N <= 512), trivially for degenerate clouds, by sorted first
    coefficient otherwise."""
    n = a.shape[0]
    if np.ptp(a, axis=0).max() == 0.0 or np.ptp(b, axis=0).max() == 0.0:
        return a, b
    if n <= 512:
        from scipy.optimize import linear_sum_assignment
        from scipy.spatial.distance import cdist

        rows, cols = linear_sum_assignment(cdist(a, b, "sqeuclidean"))
        return a[rows], b[cols]
    order_a = np.argsort(a[:, 0], kind="stable")
    order_b = np.argsort(b[:, 0], kind="stable")
    return a[order_a], b[order_b]


def contraction_test(config, mu, nu, omega, t_checkpoints, slope_tol=0.2):
    """Synchronous-coupling Wasserstein contraction test.

    Runs the two measure flows with identical particle streams (particles
    paired by optimal coupling of the initial clouds) and fits the decay of
    log W2(P*_t mu, P*_t nu)^2 against the bound -(2 lambda_* - C1 - C2).
    """
    t_checkpoints = [float(t) for t in t_checkpoints]
    a = _resample(mu, config.n_particles, (omega.seed, "ctr-a"))
    b = _resample(nu, config.n_particles, (omega.seed, "ctr-b"))
    a, b = _pair_clouds(a, b, ())
    law_a = simulate_rd_measure_flow(config, EmpiricalMeasure(a), omega, t_checkpoints, stream_tag=0)
    law_b = simulate_rd_measure_flow(config, EmpiricalMeasure(b), omega, t_checkpoints, stream_tag=0)
    w2 = np.array([wasserstein(law_a.measure_at(t), law_b.measure_at(t), 2.0) for t in t_checkpoints])
    usable = w2 > 1e-8
    rate_bound = config.contraction_rate
    result = {
        "t": t_checkpoints,
        "w2_sq": (w2**2).tolist(),
        "rate_bound": rate_bound,
        "slope_tol": slope_tol,
    }
    if np.count_nonzero(usable) < 3:
        result.update(status="inconclusive", slope=None, passed=None)
        return result
    ts = np.asarray(t_checkpoints)[usable]
    slope = float(np.polyfit(ts, np.log(w2[usable] ** 2), 1)[0])
    result.update(status="ok", slope=slope, passed=bool(slope <= -rate_bound + slope_tol))
    return result


def pullback_xi(config, omega, pullback_times, probe_states, probe_measures):
    """Common-limit estimate of the singleton attractor xi(omega).

    Runs all (state, measure) probes pullback-style over the schedule and
    returns the terminal cloud centroid, per-time diameters, and the report.
    Probe order does not affect the estimate (each probe runs independently).
    """
    from .attractor import run_pullback_experiment, singleton_test

    adapter = make_rd_adapter(config)
    report = run_pullback_experiment(adapter, omega, pullback_times, probe_states, probe_measures)
    cloud = report.terminal_cloud()
    return {
        "xi": cloud.mean(axis=0),
        "diameters": report.diameters,
        "report": report,
        "cloud": cloud,
    }


def estimate_mu_infinity(config, omega, stream_tag, t_equilibrate=None):
    """Long-run measure flow from delta_0; terminal cloud approximates the
    unique invariant law."""
    if t_equilibrate is None:
        t_equilibrate = 20.0 / config.contraction_rate
    t_eq = round(t_equilibrate / omega.dt) * omega.dt
    mu0 = EmpiricalMeasure(np.zeros((1, config.k_modes)))
    law = simulate_rd_measure_flow(config, mu0, omega, [0.0, t_eq], stream_tag=stream_tag)
    return law.final_measure()


def _batched_xi_runs(config, law, seeds, t0, t1, dt):
    """Time-0 states of one X-flow per seed (each row its own realization).

    Bitwise-identical to running simulate_rd_frozen_flow on the WienerPath
    sampled from each seed: the increments are the same counter streams.
    """
    K = config.k_modes
    g0, g1 = int(round(t0 / dt)), int(round(t1 / dt))
    x = np.zeros((len(seeds), K))
    decay = np.exp(-config.lam * dt)
    root_dt = np.sqrt(dt)
    k_off = law.index_of(t0)
    for a in range(g0, g1, _CHUNK):
        b = min(a + _CHUNK, g1)
        blk = np.empty((b - a, len(seeds), K))
        for i, s in enumerate(seeds):
            blk[:, i, :] = noise.unit_normals(s, a, b, K)
        for j in range(b - a):
            k = a - g0 + j
            drag = config.c0 * (x - law.mean_at_index(k_off + k))
            x = decay * (x + dt * drag + config.q * (root_dt * blk[j]))
    return x


def law_of_xi_test(config, base_seed, n_omega, t_pull=16.0, dt=None):
    """Compare the law of xi across independent realizations with mu_infinity.

    xi(omega_i) is the time-0 pullback limit from -t_pull (state 0, law from
    delta_0); the frozen law is omega-independent, so one measure flow serves
    all realizations.  Reports W2(xi-cloud, mu_inf estimate) alongside the
    self-consistency control W2 between two independent mu_inf estimates.
    """
    dt = config.dt if dt is None else dt
    K = config.k_modes
    driver = noise.sample_wiener(-t_pull, 0.0, dt, K, seed=noise.derive_seed(base_seed, "law-driver"))
    law = simulate_rd_measure_flow(
        config, EmpiricalMeasure(np.zeros((1, K))), driver, [-t_pull, 0.0], stream_tag=7
    )
    seeds = [noise.derive_seed(base_seed, "xi-omega", i) for i in range(n_omega)]
    xis = _batched_xi_runs(config, law, seeds, -t_pull, 0.0, dt)
    xi_cloud = EmpiricalMeasure(xis)
    om_a = noise.sample_wiener(0.0, 20.0 / config.contraction_rate + 1.0, dt, K, seed=noise.derive_seed(base_seed, "muinf-a"))
    om_b = noise.sample_wiener(0.0, 20.0 / config.contraction_rate + 1.0, dt, K, seed=noise.derive_seed(base_seed, "muinf-b"))
    mu_a = estimate_mu_infinity(config, om_a, stream_tag=11)
    mu_b = estimate_mu_infinity(config, om_b, stream_tag=13)
    d_xi = wasserstein(xi_cloud, mu_a, 2.0)
    d_ctrl = wasserstein(mu_a, mu_b, 2.0)
    return {
        "w2_xi_to_mu_inf": d_xi,
        "w2_control_between_mu_inf": d_ctrl,
        "xi_cloud": xi_cloud,
        "mu_inf": mu_a,
        "n_omega": n_omega,
        "t_pull": t_pull,
    }
