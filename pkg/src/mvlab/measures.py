"""Empirical probability measures on R^d and Wasserstein-p distances.

The measure class is the computational stand-in for the p-integrable
probability measures used throughout: a weighted particle cloud whose
moments are exact weighted sums.  Clouds over spectral fields use the
coefficient l2-norm as the ambient norm, which by Parseval is the exact
Galerkin distance.

Backend policy for wasserstein(): exact quantile coupling in one dimension,
exact optimal assignment for equal-size uniform clouds up to N=512, debiased
entropic (Sinkhorn) approximation beyond that.  The selection is explicit in
the returned info and logged, never silent.
"""

from __future__ import annotations

import csv
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import DomainError

logger = logging.getLogger("mvlab.measures")

ASSIGNMENT_MAX_N = 512
SINKHORN_REG_SCALE = 1e-3


class EmpiricalMeasure:
    """Weighted particle cloud: N points in R^d with nonnegative weights summing to 1."""

    __slots__ = ("particles", "weights", "_cache")

    def __init__(self, particles, weights=None):
        pts = np.asarray(particles, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise DomainError("particles must be a nonempty (N, d) array")
        n = pts.shape[0]
        if weights is None:
            w = np.full(n, 1.0 / n)
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (n,):
                raise DomainError("weights must have shape (N,)")
            if np.any(w < 0):
                raise DomainError("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise DomainError(f"weights sum to {w.sum()!r}, not 1 within 1e-12")
        self.particles = pts
        self.weights = w
        self._cache = {}

    @property
    def n(self):
        return self.particles.shape[0]

    @property
    def dim(self):
        return self.particles.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def norms(self):
        if "norms" not in self._cache:
            self._cache["norms"] = np.sqrt(np.einsum("ij,ij->i", self.particles, self.particles))
        return self._cache["norms"]

    def to_csv(self, fname):
        """One row per particle: weight, x_1 .. x_d."""
        with open(fname, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["weight"] + [f"x_{j + 1}" for j in range(self.dim)])
            for w, x in zip(self.weights, self.particles):
                writer.writerow([repr(w)] + [repr(v) for v in x])


def dirac(x):
    """Point mass at x."""
    return EmpiricalMeasure(np.atleast_1d(np.asarray(x, dtype=float))[None, :])


def scale_measure(mu, s):
    """Push-forward of mu by x -> s x."""
    return EmpiricalMeasure(s * mu.particles, mu.weights.copy())


def moment(mu, p):
    """mu(||.||^p) as an exact weighted sum."""
    if p < 1:
        raise DomainError("p must be >= 1")
    return float(np.dot(mu.weights, mu.norms() ** p))


def mean(mu):
    """Barycenter of the cloud, a point in R^d."""
    return mu.weights @ mu.particles


def second_moment(mu):
    """m2(mu) = integral of ||y||^2; cached, reused heavily by drift evaluations."""
    if "m2" not in mu._cache:
        mu._cache["m2"] = float(np.dot(mu.weights, np.einsum("ij,ij->i", mu.particles, mu.particles)))
    return mu._cache["m2"]


# ---------------------------------------------------------------------------
# Wasserstein backends
# ---------------------------------------------------------------------------


def _wasserstein_1d(mu, nu, p):
    """Exact quantile (CDF inverse) coupling for d=1 with general weights."""
    x = mu.particles[:, 0]
    y = nu.particles[:, 0]
    ix, iy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    xs, ws = x[ix], mu.weights[ix]
    ys, wt = y[iy], nu.weights[iy]
    cx = np.cumsum(ws)
    cy = np.cumsum(wt)
    qs = np.union1d(cx, cy)
    qs = qs[qs <= 1.0 + 1e-15]
    dq = np.diff(np.concatenate(([0.0], qs)))
    # quantile of each measure is constant on (qs[k-1], qs[k]]; evaluate at qs[k]
    jx = np.minimum(np.searchsorted(cx, qs, side="left"), len(xs) - 1)
    jy = np.minimum(np.searchsorted(cy, qs, side="left"), len(ys) - 1)
    cost = np.dot(dq, np.abs(xs[jx] - ys[jy]) ** p)
    return cost ** (1.0 / p)


def _wasserstein_assignment(mu, nu, p):
    """Exact optimal matching for equal-size clouds with uniform weights."""
    cost = cdist(mu.particles, nu.particles) ** p
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols])) ** (1.0 / p)


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _eps_schedule(cost, eps):
    e = max(float(np.max(cost)) / 8.0, eps)
    schedule = []
    while e > eps * 1.5:
        schedule.append(e)
        e /= 2.0
    schedule.append(eps)
    return schedule


def _sinkhorn_cost(cost, a, b, eps, max_iter=200, mass_tol=1e-6):
    """Log-domain Sinkhorn with epsilon scaling; returns <pi, cost> (sharp value).

    Stops when the a-marginal violation drops below mass_tol (the b-marginal is
    exact after each g-update); |f_new - f| / eps bounds that violation.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    for e in _eps_schedule(cost, eps):
        iters = max_iter if e == eps else 5
        for _ in range(iters):
            f_new = -e * _logsumexp((g[None, :] - cost) / e + log_b[None, :], axis=1)
            g = -e * _logsumexp((f_new[:, None] - cost) / e + log_a[:, None], axis=0)
            err = float(np.max(np.abs(f_new - f)))
            f = f_new
            if err < mass_tol * e:
                break
    log_pi = (f[:, None] + g[None, :] - cost) / eps + log_a[:, None] + log_b[None, :]
    return float(np.sum(np.exp(log_pi) * cost))


def _sinkhorn_self_cost(cost, a, eps, max_iter=50, mass_tol=1e-6):
    """Symmetric Sinkhorn fixed point for the debiasing terms S_eps(mu, mu)."""
    log_a = np.log(a)
    f = np.zeros_like(a)
    for e in _eps_schedule(cost, eps):
        iters = max_iter if e == eps else 3
        for _ in range(iters):
            f_new = 0.5 * (f - e * _logsumexp((f[None, :] - cost) / e + log_a[None, :], axis=1))
            err = float(np.max(np.abs(f_new - f)))
            f = f_new
            if err < mass_tol * e:
                break
    log_pi = (f[:, None] + f[None, :] - cost) / eps + log_a[:, None] + log_a[None, :]
    return float(np.sum(np.exp(log_pi) * cost))


def _wasserstein_sinkhorn(mu, nu, p):
    """Debiased entropic approximation: S_eps(mu,nu) - (S_eps(mu,mu) + S_eps(nu,nu))/2."""
    sq = cdist(mu.particles, nu.particles, "sqeuclidean")
    eps = SINKHORN_REG_SCALE * max(float(np.median(sq)), 1e-30)
    cost_ab = sq ** (p / 2.0) if p != 2 else sq
    s_ab = _sinkhorn_cost(cost_ab, mu.weights, nu.weights, eps)
    caa = cdist(mu.particles, mu.particles, "sqeuclidean") ** (p / 2.0)
    cbb = cdist(nu.particles, nu.particles, "sqeuclidean") ** (p / 2.0)
    s_aa = _sinkhorn_self_cost(caa, mu.weights, eps)
    s_bb = _sinkhorn_self_cost(cbb, nu.weights, eps)
    val = max(s_ab - 0.5 * (s_aa + s_bb), 0.0)
    return val ** (1.0 / p), eps


def wasserstein(mu, nu, p=2.0, backend="auto", return_info=False):
    """Wasserstein-p distance between two empirical measures.

    backend: "auto" picks exact_1d (d=1), assignment (equal uniform clouds,
    N <= 512), else sinkhorn.  With return_info=True also returns a dict
    naming the backend (and the regularization used, if entropic).
    """
    if p < 1:
        raise DomainError("p must be >= 1")
    if mu.dim != nu.dim:
        raise DomainError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if backend == "auto":
        if mu.dim == 1:
            backend = "exact_1d"
        elif (
            mu.n == nu.n
            and mu.n <= ASSIGNMENT_MAX_N
            and mu.is_uniform
            and nu.is_uniform
        ):
            backend = "assignment"
        else:
            backend = "sinkhorn"
    info = {"backend": backend, "p": p}
    if backend == "exact_1d":
        if mu.dim != 1:
            raise DomainError("exact_1d backend requires d=1")
        val = _wasserstein_1d(mu, nu, p)
    elif backend == "assignment":
        if mu.n != nu.n or not (mu.is_uniform and nu.is_uniform):
            raise DomainError("assignment backend requires equal-size uniform clouds")
        val = _wasserstein_assignment(mu, nu, p)
    elif backend == "sinkhorn":
        val, eps = _wasserstein_sinkhorn(mu, nu, p)
        info["epsilon"] = eps
    else:
        raise DomainError(f"unknown backend {backend!r}")
    logger.debug("wasserstein p=%s backend=%s -> %.6g", p, backend, val)
    if return_info:
        return float(val), info
    return float(val)
