"""Two-sided Wiener paths and stationary Ornstein-Uhlenbeck trajectories.

Paths live on a fixed uniform grid and carry *global* integer indices, so
that the same model time always reads the same underlying noise regardless
of the window a path object happens to cover.  Increment generation is
counter-based (Philox keyed by seed and block index): extending a window
leftward or rightward never perturbs already-generated values, which is
what pullback experiments need when they restart the same realization from
ever-earlier times.

Time-shift semantics follow theta_s w = w(s + .) - w(s): a shift moves the
local origin along the global grid and re-anchors values at the new origin.
Shift composition is bitwise exact because shifted paths recompute their
values from the identical increment floats in the identical order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

_MASK64 = (1 << 64) - 1
_BLOCK = 1024  # grid steps per counter block


def derive_seed(*parts):
    """Deterministically hash a tuple of ints/floats/strings into a 64-bit seed.

    Floats contribute their IEEE-754 bit pattern, so distinct parameter
    values (eta, say) always produce distinct streams.
    """
    entropy = []
    for p in parts:
        if isinstance(p, (bool, int, np.integer)):
            entropy.append(int(p) & _MASK64)
        elif isinstance(p, (float, np.floating)):
            entropy.append(struct.unpack("<Q", struct.pack("<d", float(p)))[0])
        elif isinstance(p, str):
            b = p.encode("utf8")
            entropy.extend(int.from_bytes(b[i : i + 8], "little") for i in range(0, len(b), 8))
        else:
            raise TypeError(f"cannot derive seed from {type(p)!r}")
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def _block_key(seed, blk):
    # 128-bit Philox key: seed in the high word, block index (two's complement)
    # in the low word.  Distinct per (seed, block).
    return ((int(seed) & _MASK64) << 64) | (int(blk) & _MASK64)


def unit_normals(seed, g0, g1, dim):
    """Standard-normal variates for global grid steps g0..g1-1, shape (g1-g0, dim).

    Pure function of (seed, global index, coordinate): any window covering a
    step reproduces the same floats bitwise.
    """
    if g1 <= g0:
        return np.empty((0, dim))
    out = np.empty((g1 - g0, dim))
    blk_lo = g0 // _BLOCK
    blk_hi = (g1 - 1) // _BLOCK
    for blk in range(blk_lo, blk_hi + 1):
        rng = np.random.Generator(np.random.Philox(key=_block_key(seed, blk)))
        block = rng.standard_normal((_BLOCK, dim))
        a = max(g0, blk * _BLOCK)
        b = min(g1, (blk + 1) * _BLOCK)
        out[a - g0 : b - g0] = block[a - blk * _BLOCK : b - blk * _BLOCK]
    return out


def _values_from_increments(inc, origin_idx):
    """Anchor cumulative sums at origin_idx: returns values with value[origin_idx]=0.

    Canonical summation order (rightward and leftward from the origin), so the
    result is a pure function of the increment floats and the origin.
    """
    n = inc.shape[0] + 1
    vals = np.zeros((n, inc.shape[1]))
    if origin_idx < n - 1:
        vals[origin_idx + 1 :] = np.cumsum(inc[origin_idx:], axis=0)
    if origin_idx > 0:
        vals[:origin_idx] = -np.cumsum(inc[:origin_idx][::-1], axis=0)[::-1]
    return vals


@dataclass(frozen=True)
class WienerPath:
    """A two-sided Brownian trajectory on a uniform grid, anchored at its origin.

    inc[j] is the increment over global step g_lo + j; values[k] is the path at
    global node g_lo + k relative to the origin node.  In the path's own clock,
    local time t sits at global index origin + t/dt.  Immutable; safe to share
    across threads.
    """

    seed: int
    dt: float
    dim: int
    origin: int  # global grid index of local time 0
    g_lo: int
    g_hi: int
    inc: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def t_min(self):
        return (self.g_lo - self.origin) * self.dt

    @property
    def t_max(self):
        return (self.g_hi - self.origin) * self.dt

    @property
    def n_nodes(self):
        return self.g_hi - self.g_lo + 1

    def gindex(self, t):
        """Global grid index of local time t (must sit on the grid)."""
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
            raise DomainError(f"time {t} is not on the dt={self.dt} grid")
        g = self.origin + kr
        if g < self.g_lo or g > self.g_hi:
            raise DomainError(f"time {t} outside sampled window [{self.t_min}, {self.t_max}]")
        return g

    def value(self, t):
        """Path value at local time t (exact zero at t=0)."""
        return self.values[self.gindex(t) - self.g_lo]

    def increments(self, t0, t1):
        """Increment array for the grid steps covering [t0, t1], shape (steps, dim)."""
        a, b = self.gindex(t0), self.gindex(t1)
        if b < a:
            raise DomainError("t1 < t0")
        return self.inc[a - self.g_lo : b - self.g_lo]

    def raw_unit_normals(self, t0, t1):
        """Unit normals behind the increments over [t0, t1] (counter stream, exact)."""
        return unit_normals(self.seed, self.gindex(t0), self.gindex(t1), self.dim)


def sample_wiener(t_min, t_max, dt, dim, seed):
    """Sample a Wiener path on [t_min, t_max] with grid spacing dt.

    Increments are independent N(0, dt I_dim); the value at time 0 is exactly
    the zero vector (canonical-space anchoring).  Same seed, same floats.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    if dim < 1:
        raise DomainError("dim must be >= 1")
    if not (t_min <= 0 <= t_max) or t_min == t_max:
        raise ConfigurationError("window must contain 0 with t_min < t_max")
    k_lo = t_min / dt
    k_hi = t_max / dt
    if abs(k_lo - round(k_lo)) > 1e-9 * max(1.0, abs(k_lo)) or abs(k_hi - round(k_hi)) > 1e-9 * max(1.0, abs(k_hi)):
        raise ConfigurationError("t_min and t_max must be integer multiples of dt")
    g_lo, g_hi = int(round(k_lo)), int(round(k_hi))
    inc = np.sqrt(dt) * unit_normals(seed, g_lo, g_hi, dim)
    vals = _values_from_increments(inc, -g_lo)
    return WienerPath(seed=int(seed), dt=float(dt), dim=int(dim), origin=0, g_lo=g_lo, g_hi=g_hi, inc=inc, values=vals)


def extend(path, t_min, t_max):
    """Return a path covering at least [t_min, t_max] (local clock); values on
    the overlap are bitwise unchanged (counter-based regeneration)."""
    k_lo = min(path.g_lo, path.origin + int(round(t_min / path.dt)))
    k_hi = max(path.g_hi, path.origin + int(round(t_max / path.dt)))
    inc = np.sqrt(path.dt) * unit_normals(path.seed, k_lo, k_hi, path.dim)
    vals = _values_from_increments(inc, path.origin - k_lo)
    return WienerPath(seed=path.seed, dt=path.dt, dim=path.dim, origin=path.origin, g_lo=k_lo, g_hi=k_hi, inc=inc, values=vals)


def shift(path, s):
    """theta_s: returns p' with p'(r) = p(s + r) - p(s) on the overlapping grid.

    s must be a grid multiple.  The shifted path shares the parent's increment
    floats, so shift(shift(p, a), b) is bitwise identical to shift(p, a + b).
    """
    k = s / path.dt
    kr = int(round(k))
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise DomainError(f"shift {s} is not a multiple of dt={path.dt}")
    if kr == 0:
        return path
    new_origin = path.origin + kr
    if new_origin < path.g_lo or new_origin > path.g_hi:
        raise DomainError("shifted origin leaves the sampled window; extend the path first")
    vals = _values_from_increments(path.inc, new_origin - path.g_lo)
    return WienerPath(seed=path.seed, dt=path.dt, dim=path.dim, origin=new_origin, g_lo=path.g_lo, g_hi=path.g_hi, inc=path.inc, values=vals)


@dataclass(frozen=True)
class OUPath:
    """Stationary OU trajectory z driven by a WienerPath, dz = -eta z dt + dW.

    Discrete recursion: z(t+dt) = exp(-eta dt) z(t) + s_eff G_t with the unit
    normals G_t shared with the base path's increments and
    s_eff^2 = (1 - exp(-2 eta dt)) / (2 eta), so every marginal is exactly
    N(0, 1/(2 eta) I).  The initial value is an exact stationary draw keyed by
    (base.seed, eta).

    Values are indexed globally like the base path; .shift returns a view onto
    the same array, which makes shift-stationarity identities exact.  Build the
    base window to cover the whole experiment before deriving the OU path:
    re-deriving after an extension re-anchors the stationary draw.
    """

    eta: float
    base: WienerPath
    origin: int
    values: np.ndarray = field(repr=False)

    @property
    def dt(self):
        return self.base.dt

    @property
    def dim(self):
        return self.base.dim

    @property
    def t_min(self):
        return (self.base.g_lo - self.origin) * self.dt

    @property
    def t_max(self):
        return (self.base.g_hi - self.origin) * self.dt

    def gindex(self, t):
        k = t / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
            raise DomainError(f"time {t} is not on the dt={self.dt} grid")
        g = self.origin + kr
        if g < self.base.g_lo or g > self.base.g_hi:
            raise DomainError(f"time {t} outside sampled window")
        return g

    def value(self, t):
        return self.values[self.gindex(t) - self.base.g_lo]

    def shift(self, s):
        """theta_s view sharing the same value array: z'(r) = z(s + r) exactly."""
        k = s / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
            raise DomainError(f"shift {s} is not a multiple of dt={self.dt}")
        return OUPath(eta=self.eta, base=self.base, origin=self.origin + kr, values=self.values)


def ou_path(base, eta):
    """Stationary OU trajectory on the base path's window.

    The improper integral int_{-inf}^t e^{-eta(t-s)} dW_s is realized by an
    exact stationary Gaussian initialization (variance 1/(2 eta) per
    coordinate) at the window's left edge; no burn-in error.
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    dt = base.dt
    n_steps = base.g_hi - base.g_lo
    rng = np.random.Generator(np.random.Philox(key=_block_key(derive_seed(base.seed, float(eta), "ou-init"), 0)))
    z0 = rng.standard_normal(base.dim) / np.sqrt(2.0 * eta)
    decay = np.exp(-eta * dt)
    s_eff = np.sqrt((1.0 - np.exp(-2.0 * eta * dt)) / (2.0 * eta))
    g = unit_normals(base.seed, base.g_lo, base.g_hi, base.dim)
    vals = np.empty((n_steps + 1, base.dim))
    vals[0] = z0
    for i in range(n_steps):
        vals[i + 1] = decay * vals[i] + s_eff * g[i]
    return OUPath(eta=float(eta), base=base, origin=base.origin, values=vals)


_HEADER = struct.Struct("<dddqQ")  # t_min, t_max, dt, dim, seed


def dump_path(path, fname):
    """Binary dump: little-endian 64-bit header fields (t_min, t_max, dt, dim,
    seed) followed by raw float64 values, row-major by time then coordinate."""
    with open(fname, "wb") as fh:
        fh.write(_HEADER.pack(path.t_min, path.t_max, path.dt, path.dim, path.seed & _MASK64))
        fh.write(np.ascontiguousarray(path.values, dtype="<f8").tobytes())


def load_path_dump(fname):
    """Parse a dump_path file; returns (header dict, values array)."""
    with open(fname, "rb") as fh:
        raw = fh.read()
    t_min, t_max, dt, dim, seed = _HEADER.unpack_from(raw, 0)
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(-1, dim).copy()
    return {"t_min": t_min, "t_max": t_max, "dt": dt, "dim": dim, "seed": seed}, vals
