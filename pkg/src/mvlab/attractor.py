"""System-agnostic pullback-attractor experiments over a cocycle interface.

A pullback experiment runs the product-space map Phi(t_n, theta_{-t_n} w) on a
set of (measure, state) initial pairs, always against the same noise
realization, and records how the time-0 clouds contract as the start time
recedes.  The reported "attractor estimate" is the cloud at the largest
pullback time together with its diameter and Hausdorff-convergence log; no
invariance claim is made beyond these measured diagnostics (the set-valued
backward extension of the measure semigroup is not computable from forward
runs, and is flagged as untested).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from . import sode
from .errors import DomainError
from .measures import EmpiricalMeasure, wasserstein


@dataclass
class CocycleAdapter:
    """Bundle of callables exposing one system to the pullback machinery.

    advance(t0, t1, omega, mu, x) -> (mu_end, x_end) is the contract; the
    batched fields (advance_measure + advance_states) let experiments share
    one measure flow across many initial states.
    """

    advance: Callable
    advance_measure: Callable
    advance_states: Callable
    state_dist: Callable = staticmethod(lambda a, b: float(np.linalg.norm(np.asarray(a) - np.asarray(b))))
    measure_dist: Callable = staticmethod(lambda a, b: wasserstein(a, b, 2.0))


def make_sode_adapter(model, scheme="euler_ito"):
    """Adapter for the finite-dimensional decoupled system."""

    def advance_measure(t0, t1, omega, mu):
        return sode.simulate_measure_flow(model, mu, omega, [t0, t1])

    def advance_states(t0, t1, omega, law, states):
        _, xs = sode.simulate_frozen_law_flow(model, states, law, omega, t0, t1, scheme)
        return xs[-1]

    def advance(t0, t1, omega, mu, x):
        law = advance_measure(t0, t1, omega, mu)
        x_end = advance_states(t0, t1, omega, law, np.atleast_2d(np.asarray(x, dtype=float)))[0]
        return law.final_measure(), x_end

    return CocycleAdapter(advance=advance, advance_measure=advance_measure, advance_states=advance_states)


def hausdorff(cloud_a, cloud_b):
    """Symmetric Hausdorff distance between two finite point clouds."""
    a = np.atleast_2d(np.asarray(cloud_a, dtype=float))
    b = np.atleast_2d(np.asarray(cloud_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DomainError("hausdorff distance of an empty cloud")
    if a.shape[1] != b.shape[1]:
        raise DomainError("dimension mismatch")
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def diameter(cloud):
    c = np.atleast_2d(np.asarray(cloud, dtype=float))
    if c.shape[0] < 2:
        return 0.0
    return float(cdist(c, c).max())


def pullback_cloud(adapter, omega, t_n, initial_states, initial_measures):
    """Evaluate {Phi(t_n, theta_{-t_n} w)(mu, x)} by running every pair from
    time -t_n to 0 on the same realization.

    Returns (states cloud (n_mu * n_x, d), list of terminal measures); row
    i * n_x + j of the cloud belongs to (measure i, state j).
    """
    states = np.atleast_2d(np.asarray(initial_states, dtype=float))
    if states.shape[0] == 0 or len(initial_measures) == 0:
        raise DomainError("initial sets must be nonempty")
    if t_n == 0:
        cloud = np.tile(states, (len(initial_measures), 1))
        return cloud, list(initial_measures)
    clouds = []
    measures = []
    for mu in initial_measures:
        law = adapter.advance_measure(-t_n, 0.0, omega, mu)
        clouds.append(adapter.advance_states(-t_n, 0.0, omega, law, states))
        measures.append(law.final_measure() if hasattr(law, "final_measure") else law)
    return np.concatenate(clouds, axis=0), measures


@dataclass
class PullbackReport:
    """Diagnostics of one pullback experiment (one noise realization)."""

    pullback_times: list
    diameters: list
    hausdorff_to_final: list
    measure_cauchy: list  # max over initial measures of W2 between consecutive t_n
    clouds: list = field(repr=False)  # terminal state clouds per t_n
    final_measures: list = field(repr=False, default_factory=list)

    def terminal_cloud(self):
        return self.clouds[-1]

    def to_json_dict(self):
        return {
            "schema": "mvlab.pullback_report.v1",
            "pullback_times": [float(t) for t in self.pullback_times],
            "diameters": [float(d) for d in self.diameters],
            "hausdorff_to_final": [float(h) for h in self.hausdorff_to_final],
            "measure_cauchy": [float(c) for c in self.measure_cauchy],
            "terminal_cloud": np.asarray(self.terminal_cloud()).tolist(),
            "invariance": "untested (backward set-valued extension not computable from forward runs)",
        }

    def save_json(self, fname):
        with open(fname, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def run_pullback_experiment(adapter, omega, schedule, initial_states, initial_measures):
    """Pullback clouds over an increasing schedule of start times, one omega."""
    schedule = [float(t) for t in schedule]
    if sorted(schedule) != schedule:
        raise DomainError("schedule must be increasing")
    clouds, meas_per_tn = [], []
    for t_n in schedule:
        cloud, measures = pullback_cloud(adapter, omega, t_n, initial_states, initial_measures)
        clouds.append(cloud)
        meas_per_tn.append(measures)
    diams = [diameter(c) for c in clouds]
    haus = [hausdorff(c, clouds[-1]) for c in clouds]
    cauchy = []
    for k in range(1, len(schedule)):
        pair = [
            adapter.measure_dist(a, b)
            for a, b in zip(meas_per_tn[k - 1], meas_per_tn[k])
        ]
        cauchy.append(max(pair))
    return PullbackReport(
        pullback_times=schedule,
        diameters=diams,
        hausdorff_to_final=haus,
        measure_cauchy=cauchy,
        clouds=clouds,
        final_measures=meas_per_tn[-1],
    )


def measure_attractor_estimate(pstar_step, seed_measures, tol, t_max, checkpoint_dt=1.0):
    """Iterate the measure semigroup from several seeds and log Cauchy increments.

    pstar_step(mu, t0, t1) -> measure at t1.  Convergence is declared when the
    per-seed increments stay below tol for 3 consecutive checkpoints; if that
    never happens before t_max the status is "inconclusive" (not an error).
    """
    current = list(seed_measures)
    log = {"t": [], "increments": [], "spread": []}
    t = 0.0
    streak = 0
    status = "inconclusive"
    while t < t_max - 1e-12:
        t_next = min(t + checkpoint_dt, t_max)
        advanced = [pstar_step(mu, t, t_next) for mu in current]
        incs = [wasserstein(a, b, 2.0) for a, b in zip(current, advanced)]
        spread = 0.0
        for i in range(len(advanced)):
            for j in range(i + 1, len(advanced)):
                spread = max(spread, wasserstein(advanced[i], advanced[j], 2.0))
        current = advanced
        t = t_next
        log["t"].append(t)
        log["increments"].append(max(incs))
        log["spread"].append(spread)
        streak = streak + 1 if max(incs) < tol else 0
        if streak >= 3:
            status = "converged"
            break
    return {"measures": current, "status": status, "log": log, "t_final": t}


def singleton_test(report, threshold):
    """True iff the terminal pullback diameter is below threshold and the
    diameters are eventually (last half of the schedule) nonincreasing."""
    diams = report.diameters
    terminal = diams[-1]
    half = diams[len(diams) // 2 :]
    eventually_decreasing = all(half[i + 1] <= half[i] + 1e-12 for i in range(len(half) - 1))
    passed = bool(terminal < threshold and eventually_decreasing)
    return passed, threshold - terminal
