"""Finite-dimensional decoupled McKean-Vlasov system.

Simulates the self-consistent Y-particle system (whose empirical law stands
in for the measure flow P*_t mu) and the X-flow driven by a frozen law, in
either Ito (Euler-Maruyama on the corrected drift) or Stratonovich (Heun)
form.  Also houses the worked example with cubic-in-state, quintic-in-moment
drift and piecewise-linear multiplicative noise, together with its Lyapunov
certificate machinery.

Coefficient contract: model callables are numpy-vectorized over a leading
batch axis; states are arrays of shape (..., d), noise matrices (..., d, m).

Particle-to-noise coupling: particle i of a measure flow consumes the
counter-based stream derive_seed(path.seed, "particle", i) read at the global
grid indices of the simulated window.  Restarting a flow mid-way therefore
consumes bitwise-identical increments, which makes the discrete flow property
exact.  Individual particle paths are not exchangeable under permutation of
the initial cloud unless stream_key="sorted_position" is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import noise
from .errors import CapabilityError, DomainError, SimulationDivergedError
from .measures import EmpiricalMeasure, second_moment, wasserstein

DIVERGENCE_RADIUS = 1e8


@dataclass
class SodeModel:
    """Coefficient bundle for a d-dimensional SODE with m-dimensional noise.

    b(x, mu): Stratonovich drift, (N, d) x measure -> (N, d).
    sigma(x): (N, d) -> (N, d, m);  dsigma(x): (N, d) -> (N, m, d, d) with
    dsigma[n, i, k, l] = d sigma_{k i} / d x_l.
    V and its closed-form derivatives (optional) feed the Lyapunov generator:
    dV_x -> (N, d), dV_xx -> (N, d, d), dV_mu(x, mu, y) -> (Ny, d) per probe x,
    dV_y_mu(x, mu, y) -> (Ny, d, d).
    """

    d: int
    m: int
    b: Callable
    sigma: Callable
    dsigma: Callable
    V: Callable | None = None
    dV_x: Callable | None = None
    dV_xx: Callable | None = None
    dV_mu: Callable | None = None
    dV_y_mu: Callable | None = None
    alpha: float = 0.0
    lyap_M: float = 0.0
    name: str = "sode"


def ito_drift(model):
    """Ito-corrected drift bbar = b + (1/2) sum_i (d_x sigma_i) sigma_i."""

    def bbar(x, mu):
        drift = model.b(x, mu)
        sig = model.sigma(x)
        dsig = model.dsigma(x)
        corr = 0.5 * np.einsum("...ikl,...li->...k", dsig, sig)
        return drift + corr

    return bbar


def sigma_consistency_error(model, xs, h=1e-6):
    """Max abs deviation of dsigma from central differences of sigma at probe states."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    worst = 0.0
    for l in range(model.d):
        e = np.zeros(model.d)
        e[l] = h
        fd = (model.sigma(xs + e) - model.sigma(xs - e)) / (2 * h)  # (N, d, m)
        an = model.dsigma(xs)[:, :, :, l]  # (N, m, d) -> d sigma_{k i}/d x_l
        worst = max(worst, float(np.max(np.abs(fd - np.swapaxes(an, 1, 2)))))
    return worst


# ---------------------------------------------------------------------------
# Worked example: b(x, mu) = -x^3 m2(mu)^5 - 10 x with piecewise noise
# ---------------------------------------------------------------------------


def _hermite(x, x0, x1, y0, y1, s0, s1):
    h = x1 - x0
    t = (x - x0) / h
    t2, t3 = t * t, t * t * t
    return (
        y0 * (2 * t3 - 3 * t2 + 1)
        + s0 * h * (t3 - 2 * t2 + t)
        + y1 * (-2 * t3 + 3 * t2)
        + s1 * h * (t3 - t2)
    )


def _hermite_deriv(x, x0, x1, y0, y1, s0, s1):
    h = x1 - x0
    t = (x - x0) / h
    t2 = t * t
    return (
        y0 * (6 * t2 - 6 * t) / h
        + s0 * (3 * t2 - 4 * t + 1)
        + y1 * (-6 * t2 + 6 * t) / h
        + s1 * (3 * t2 - 2 * t)
    )


def make_example_model(M_cut=2.0, eps=0.5):
    """The 1-d example model with nonlinear multiplicative Stratonovich noise.

    sigma is x/2 - M/2 on the far left, x in the middle band, 3x/2 - M/2 on the
    far right, joined by monotone cubic Hermite interpolants on the bands
    [-M-eps, -M+eps] and [M-eps, M+eps] (value and slope matched, hence C^1 and
    strictly increasing).  The Lyapunov pair is V(x, mu) = x^8 + m2(mu)^45 with
    alpha = 8, M = 0.
    """
    if not (0 < eps < M_cut):
        raise DomainError("need 0 < eps < M_cut")
    M = float(M_cut)
    e = float(eps)
    # band endpoints: value/slope from the adjacent closed-form branches
    l0, l1 = -M - e, -M + e
    r0, r1 = M - e, M + e
    ly0, ly1, ls0, ls1 = l0 / 2 - M / 2, l1, 0.5, 1.0
    ry0, ry1, rs0, rs1 = r0, 1.5 * r1 - M / 2, 1.0, 1.5

    def sigma_scalar(x):
        return np.select(
            [x < l0, x <= l1, x < r0, x <= r1],
            [
                0.5 * x - 0.5 * M,
                _hermite(x, l0, l1, ly0, ly1, ls0, ls1),
                x,
                _hermite(x, r0, r1, ry0, ry1, rs0, rs1),
            ],
            default=1.5 * x - 0.5 * M,
        )

    def dsigma_scalar(x):
        return np.select(
            [x < l0, x <= l1, x < r0, x <= r1],
            [
                0.5,
                _hermite_deriv(x, l0, l1, ly0, ly1, ls0, ls1),
                1.0,
                _hermite_deriv(x, r0, r1, ry0, ry1, rs0, rs1),
            ],
            default=1.5,
        )

    def b(x, mu):
        m2 = second_moment(mu)
        return -x**3 * m2**5 - 10.0 * x

    def sigma(x):
        return sigma_scalar(x)[..., None]  # (..., d=1, m=1)

    def dsigma(x):
        return dsigma_scalar(x[..., 0])[..., None, None, None]  # (..., 1, 1, 1)

    def V(x, mu):
        m2 = second_moment(mu)
        return x[..., 0] ** 8 + m2**45

    def dV_x(x, mu):
        return 8.0 * x**7

    def dV_xx(x, mu):
        return (56.0 * x[..., 0] ** 6)[..., None, None]

    def dV_mu(x, mu, y):
        m2 = second_moment(mu)
        return 90.0 * m2**44 * y

    def dV_y_mu(x, mu, y):
        m2 = second_moment(mu)
        return np.broadcast_to(90.0 * m2**44, y.shape[:-1])[..., None, None]

    return SodeModel(
        d=1,
        m=1,
        b=b,
        sigma=sigma,
        dsigma=dsigma,
        V=V,
        dV_x=dV_x,
        dV_xx=dV_xx,
        dV_mu=dV_mu,
        dV_y_mu=dV_y_mu,
        alpha=8.0,
        lyap_M=0.0,
        name="example",
    )


def example_sigma_exact_outside_bands(model_sigma, M_cut, eps, xs):
    """Max deviation of sigma from the closed forms outside the smoothing bands."""
    xs = np.asarray(xs, dtype=float)
    closed = np.select(
        [xs < -M_cut - eps, xs < -M_cut + eps, xs < M_cut - eps, xs <= M_cut + eps],
        [0.5 * xs - 0.5 * M_cut, np.nan, xs, np.nan],
        default=1.5 * xs - 0.5 * M_cut,
    )
    keep = ~np.isnan(closed)
    vals = model_sigma(xs[keep][:, None])[:, 0, 0]
    return float(np.max(np.abs(vals - closed[keep])))


# ---------------------------------------------------------------------------
# Measure flow (Y-particle system) and frozen-law flow (X-equation)
# ---------------------------------------------------------------------------


class LawPath:
    """Measure flow stored at full grid resolution.

    Wraps an (n_nodes, N, d) ensemble array; indexing by time yields cached
    EmpiricalMeasure views, so every consumer of the same LawPath sees the
    same measure objects (and their cached moments) bitwise.
    """

    def __init__(self, t0, dt, ensembles, weights, t_grid=None):
        self.t0 = float(t0)
        self.dt = float(dt)
        self.ensembles = ensembles
        self.weights = weights
        self.t_grid = list(t_grid) if t_grid is not None else [t0 + k * dt for k in range(len(ensembles))]
        self._cache = {}

    @property
    def t_end(self):
        return self.t0 + (len(self.ensembles) - 1) * self.dt

    def index_of(self, t):
        k = (t - self.t0) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)) or kr < 0 or kr >= len(self.ensembles):
            raise DomainError(f"time {t} not on the stored law grid")
        return kr

    def measure_at_index(self, k):
        if k not in self._cache:
            self._cache[k] = EmpiricalMeasure(self.ensembles[k], self.weights)
        return self._cache[k]

    def measure_at(self, t):
        return self.measure_at_index(self.index_of(t))

    def __len__(self):
        return len(self.t_grid)

    def __getitem__(self, i):
        return self.measure_at(self.t_grid[i])

    def final_measure(self):
        return self.measure_at_index(len(self.ensembles) - 1)


def _law_lookup(law, t):
    if isinstance(law, LawPath):
        return law.measure_at(t)
    if isinstance(law, EmpiricalMeasure):
        return law
    return law(t)


def _particle_increments(path, g0, g1, n_particles, m):
    """(steps, N, m) Brownian increments; column i is the stream of particle i."""
    steps = g1 - g0
    out = np.empty((steps, n_particles, m))
    root_dt = np.sqrt(path.dt)
    for i in range(n_particles):
        s = noise.derive_seed(path.seed, "particle", i)
        out[:, i, :] = root_dt * noise.unit_normals(s, g0, g1, m)
    return out


def _guard(y, t):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_RADIUS:
        raise SimulationDivergedError(f"ensemble left |x| <= {DIVERGENCE_RADIUS:g} at t={t:.6g}", t_bad=t)


def simulate_measure_flow(model, mu0, path, t_grid, stream_key="index"):
    """Euler-Maruyama particle approximation of the measure flow P*_t mu0.

    The empirical law of the live ensemble is substituted for the true law at
    every step.  Returns a LawPath spanning [t_grid[0], t_grid[-1]] at the
    path's resolution (t_grid must lie on the path grid).
    """
    t_grid = [float(t) for t in t_grid]
    if sorted(t_grid) != t_grid:
        raise DomainError("t_grid must be increasing")
    t0, t1 = t_grid[0], t_grid[-1]
    g0, g1 = path.gindex(t0), path.gindex(t1)
    dt = path.dt
    y = np.array(mu0.particles, dtype=float, copy=True)
    w = mu0.weights.copy()
    if stream_key == "sorted_position":
        order = np.lexsort(y.T[::-1])
        y, w = y[order], w[order]
    elif stream_key != "index":
        raise DomainError(f"unknown stream_key {stream_key!r}")
    if y.shape[1] != model.d:
        raise DomainError("mu0 dimension does not match model.d")
    n = y.shape[0]
    dw = _particle_increments(path, g0, g1, n, model.m)
    bbar = ito_drift(model)
    ens = np.empty((g1 - g0 + 1, n, model.d))
    ens[0] = y
    law = LawPath(t0, dt, ens, w, t_grid=t_grid)
    for k in range(g1 - g0):
        mu_k = law.measure_at_index(k)
        y = y + dt * bbar(y, mu_k) + np.einsum("ndm,nm->nd", model.sigma(y), dw[k])
        _guard(y, t0 + (k + 1) * dt)
        ens[k + 1] = y
    return law


def simulate_frozen_law_flow(model, x0, law, path, t_start, t_end, scheme="euler_ito"):
    """Integrate the X-equation along the given (frozen) law, driven by `path`.

    law: LawPath, a constant EmpiricalMeasure, or a callable t -> measure.
    scheme "euler_ito" steps the Ito form with the corrected drift;
    "heun_stratonovich" integrates the Stratonovich form by the Heun
    predictor-corrector (both converge to the same limit for commuting noise).
    x0 may be a single state (d,) or a batch (P, d).  Returns (times, states).
    """
    if path.dim != model.m:
        raise DomainError("path.dim must equal model.m")
    g0, g1 = path.gindex(t_start), path.gindex(t_end)
    dt = path.dt
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    squeeze = np.asarray(x0).ndim == 1
    steps = g1 - g0
    dw = path.inc[g0 - path.g_lo : g1 - path.g_lo]
    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    bbar = ito_drift(model) if scheme == "euler_ito" else None
    if scheme not in ("euler_ito", "heun_stratonovich"):
        raise DomainError(f"unknown scheme {scheme!r}")
    for k in range(steps):
        t_k = t_start + k * dt
        mu_k = _law_lookup(law, t_k)  # left-node law for every stage of the step
        dwk = dw[k]
        if scheme == "euler_ito":
            x = x + dt * bbar(x, mu_k) + model.sigma(x) @ dwk
        else:
            b0 = model.b(x, mu_k)
            s0 = model.sigma(x) @ dwk
            xp = x + dt * b0 + s0
            b1 = model.b(xp, mu_k)
            s1 = model.sigma(xp) @ dwk
            x = x + 0.5 * dt * (b0 + b1) + 0.5 * (s0 + s1)
        _guard(x, t_k + dt)
        out[k + 1] = x
    times = t_start + dt * np.arange(steps + 1)
    if squeeze:
        out = out[:, 0, :]
    return times, out


def check_flow_property(model, x0, mu0, path, s, r, t):
    """Residual of the discrete stochastic flow property at grid times s <= r <= t.

    Contract: exactly 0, because the restarted runs consume bitwise-identical
    increments and ensemble states.
    """
    if not (s <= r <= t):
        raise DomainError("need s <= r <= t")
    law_direct = simulate_measure_flow(model, mu0, path, [s, r, t])
    _, x_direct = simulate_frozen_law_flow(model, x0, law_direct, path, s, t)
    # composed route: stop at r, restart from the intermediate ensemble/state
    mu_r = law_direct.measure_at(r)
    law_tail = simulate_measure_flow(model, mu_r, path, [r, t])
    _, x_head = simulate_frozen_law_flow(model, x0, law_direct, path, s, r)
    _, x_tail = simulate_frozen_law_flow(model, x_head[-1], law_tail, path, r, t)
    state_res = float(np.linalg.norm(x_direct[-1] - x_tail[-1]))
    meas_res = wasserstein(law_direct.final_measure(), law_tail.final_measure(), 2.0)
    return state_res + meas_res


# ---------------------------------------------------------------------------
# Lyapunov generator diagnostics
# ---------------------------------------------------------------------------


def generator_V(model, x, mu):
    """The generator L V(x, mu) evaluated with exact weighted sums over mu.

    L V = <d_x V, bbar(x, mu)> + (1/2) sum_i sigma_i(x)^T d_xx V sigma_i(x)
        + int [ <d_mu V(x, mu)(y), bbar(y, mu)>
                + (1/2) sum_i sigma_i(y)^T d_y d_mu V(x, mu)(y) sigma_i(y) ] mu(dy)
    """
    for name in ("V", "dV_x", "dV_xx", "dV_mu", "dV_y_mu"):
        if getattr(model, name) is None:
            raise CapabilityError(f"model lacks closed form {name}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    bbar = ito_drift(model)
    t1 = np.einsum("nd,nd->n", model.dV_x(x, mu), bbar(x, mu))
    sig_x = model.sigma(x)
    t2 = 0.5 * np.einsum("ndm,nde,nem->n", sig_x, model.dV_xx(x, mu), sig_x)
    y = mu.particles
    w = mu.weights
    by = bbar(y, mu)
    out = np.empty(x.shape[0])
    sig_y = model.sigma(y)
    for j in range(x.shape[0]):
        xj = x[j : j + 1]
        t3 = np.dot(w, np.einsum("nd,nd->n", model.dV_mu(xj, mu, y), by))
        t4 = 0.5 * np.dot(w, np.einsum("ndm,nde,nem->n", sig_y, model.dV_y_mu(xj, mu, y), sig_y))
        out[j] = t1[j] + t2[j] + t3 + t4
    return out if out.size > 1 else float(out[0])


def lyapunov_drift_residual(model, probe_set):
    """Worst constraint residual max(L V + alpha V - M) over (x, mu) probes.

    A nonpositive value certifies the drift condition on the probe set.
    """
    worst = -np.inf
    for x, mu in probe_set:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lv = np.atleast_1d(generator_V(model, x, mu))
        v = np.atleast_1d(model.V(x, mu))
        worst = max(worst, float(np.max(lv + model.alpha * v - model.lyap_M)))
    return worst
