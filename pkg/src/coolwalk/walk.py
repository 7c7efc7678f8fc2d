"""Exact quenched laws and Monte Carlo sampling for static and cooling walks.

Positions live on dense windows ``[-n, n]``; array index ``i`` is site
``i - n``.  A cooling walk is assembled from static pieces, one per refresh
interval, each reading its own environment ``omega_k``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .env import sample_environment
from .errors import WindowTooSmall
from .rng import ENV_TAG, WALK_TAG, derive_seed, generator

RECENTERED = "recentered"
ABSOLUTE = "absolute"
FRAMES = (RECENTERED, ABSOLUTE)


@dataclass(eq=False)
class LatticePmf:
    """Probability mass on consecutive sites ``offset, offset+1, ...``."""

    offset: int
    weights: np.ndarray

    @classmethod
    def delta(cls, x=0):
        return cls(int(x), np.ones(1))

    @property
    def sites(self):
        return np.arange(self.offset, self.offset + len(self.weights))

    def mass(self, x):
        i = x - self.offset
        return float(self.weights[i]) if 0 <= i < len(self.weights) else 0.0

    def total(self):
        return math.fsum(self.weights)

    def mean(self):
        return float(np.dot(self.sites, self.weights))

    def as_dict(self, tol=0.0):
        return {int(x): float(w) for x, w in zip(self.sites, self.weights) if w > tol}

    def convolve(self, other):
        """Law of the sum of independent positions."""
        return LatticePmf(self.offset + other.offset, np.convolve(self.weights, other.weights))

    def tv_distance(self, other):
        lo = min(self.offset, other.offset)
        hi = max(self.offset + len(self.weights), other.offset + len(other.weights))
        a = np.zeros(hi - lo)
        b = np.zeros(hi - lo)
        a[self.offset - lo:self.offset - lo + len(self.weights)] = self.weights
        b[other.offset - lo:other.offset - lo + len(other.weights)] = other.weights
        return 0.5 * float(np.abs(a - b).sum())

    def to_csv(self, path, header=""):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["site", "mass"])
            for x, w in zip(self.sites, self.weights):
                writer.writerow([int(x), repr(float(w))])

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") or line.startswith("site"):
                    continue
                x, w = line.strip().split(",")
                rows.append((int(x), float(w)))
        return cls(rows[0][0], np.array([w for _, w in rows]))


@dataclass(eq=False)
class Trajectory:
    positions: np.ndarray
    seed: int

    def __len__(self):
        return len(self.positions)

    @property
    def endpoint(self):
        return int(self.positions[-1])

    def to_csv(self, path, header=""):
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed}{' ' + header if header else ''}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "position"])
            for t, x in enumerate(self.positions):
                writer.writerow([t, int(x)])


@dataclass(frozen=True)
class Censored:
    """The walk did not reach its target within ``cap`` steps."""

    cap: int


def _site_window(env, n):
    """omega on [-n, n] as an array aligned with the DP grid.

    Only sites -(n-1) .. n-1 are ever read; the two end slots are padding.
    """
    w = np.full(2 * n + 1, 0.5)
    if n >= 1:
        w[1:2 * n] = env.window(-(n - 1), n - 1)
    return w


def _advance(p, w, steps, a, b):
    """Run ``steps`` kernel steps on ``p`` (last axis), mass currently on
    index slice ``[a, b)``.  Returns the new array and slice."""
    size = p.shape[-1]
    for _ in range(steps):
        if a == 0 or b == size:
            raise WindowTooSmall("mass reached the edge of the DP window")
        seg = p[..., a:b]
        up = seg * w[..., a:b]
        q = np.zeros_like(p)
        q[..., a + 1:b + 1] += up
        q[..., a - 1:b - 1] += seg - up
        p, a, b = q, a - 1, b + 1
    return p, a, b


def evolve_pmf(env, n):
    """Exact law of ``Z_n`` under ``P_0^omega`` by forward DP."""
    if n == 0:
        return LatticePmf.delta(0)
    w = _site_window(env, n)
    p = np.zeros(2 * n + 1)
    p[n] = 1.0
    p, _, _ = _advance(p, w, n, n, n + 1)
    return LatticePmf(-n, p)


def _logmgf_path(w, n, lam):
    """``log E[exp(lam Z_t)]`` for t = 0..n over the leading batch axes of ``w``.

    Tilted DP renormalised to unit mass after every step; the log of each
    normaliser is the conditional one-step MGF, so partial sums give the
    whole path.
    """
    batch = w.shape[:-1]
    out = np.zeros(batch + (n + 1,))
    if lam == 0 or n == 0:
        return out
    eu, ed = math.exp(lam), math.exp(-lam)
    p = np.zeros(batch + (2 * n + 1,))
    p[..., n] = 1.0
    a, b = n, n + 1
    acc = np.zeros(batch)
    for t in range(n):
        seg = p[..., a:b]
        ws = w[..., a:b]
        up = seg * ws * eu
        down = seg * (1.0 - ws) * ed
        q = np.zeros_like(p)
        q[..., a + 1:b + 1] += up
        q[..., a - 1:b - 1] += down
        z = q.sum(axis=-1)
        acc = acc + np.log(z)
        out[..., t + 1] = acc
        p = q / z[..., None]
        a, b = a - 1, b + 1
    return out


def quenched_logmgf_path(env, n, lam):
    return _logmgf_path(_site_window(env, n), n, lam)


def quenched_logmgf(env, n, lam):
    """Unnormalised ``log E_0^omega[exp(lam Z_n)]``."""
    return float(quenched_logmgf_path(env, n, lam)[-1])


def _walk(w_list, lo, uniforms, start=0):
    """Nearest-neighbour walk reading ``w_list[x - lo]``; returns positions."""
    pos = start
    out = [pos]
    size = len(w_list)
    for u in uniforms:
        i = pos - lo
        if not 0 <= i < size:
            raise WindowTooSmall(f"walk left the environment window at site {pos}")
        pos += 1 if u < w_list[i] else -1
        out.append(pos)
    return out


def _path_window(env, n, center=0):
    if env.dist is not None:
        return center - n, env.window(center - n, center + n)
    return env.lo, env.values


def sample_path(env, n, seed):
    """Monte Carlo path of ``n`` steps from 0 in ``env``.

    Uses one uniform per step from ``generator(seed)``, so the path for a
    smaller ``n`` is a prefix of the path for a larger one.
    """
    lo, w = _path_window(env, n)
    u = generator(seed).random(n)
    return Trajectory(np.array(_walk(w.tolist(), lo, u.tolist()), dtype=np.int64), int(seed))


def sample_hitting(env, level, seed, cap):
    """First time the walk from 0 reaches ``level``, or ``Censored(cap)``."""
    if cap < level:
        raise ValueError("cap must be >= level")
    rng = generator(seed)
    lazy = env.dist is not None
    left = -min(cap, 256) if lazy else env.lo
    right = level - 1
    w = (env.window(left, right) if lazy else env.values[: max(0, right - env.lo + 1)]).tolist()
    pos, t = 0, 0
    chunk = 1024
    while t < cap:
        for u in rng.random(min(chunk, cap - t)).tolist():
            i = pos - left
            if i < 0:
                if not lazy or left <= -cap:
                    raise WindowTooSmall(f"walk left the environment window at site {pos}")
                new_left = max(-cap, 2 * left)
                w = env.window(new_left, left - 1).tolist() + w
                left = new_left
                i = pos - left
            elif i >= len(w):
                raise WindowTooSmall(f"walk left the environment window at site {pos}")
            pos += 1 if u < w[i] else -1
            t += 1
            if pos == level:
                return t
        chunk = min(2 * chunk, 1 << 16)
    return Censored(cap)


def interval_environment(dist, seed, k, lo, length):
    """Window of the ``k``-th refreshed environment ``omega_k``."""
    return sample_environment(dist, lo, length, derive_seed(seed, ENV_TAG, k))


def interval_walk_seed(seed, k):
    return derive_seed(seed, WALK_TAG, k)


def rwcre_pmf(dist, cmap, n, seed, frame=RECENTERED):
    """Exact quenched law of ``X_n`` for the cooling walk.

    ``recentered``: the walk of interval ``k`` reads ``omega_k`` relative to
    its own starting point, so ``X_n`` is the convolution of static pieces.
    ``absolute``: the kernel reads ``omega_k`` at the absolute position.
    The two frames share the same annealed law.
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    segments = [(k, t) for k, t in cmap.segments(n) if t > 0]
    if frame == RECENTERED:
        out = LatticePmf.delta(0)
        for k, t in segments:
            env = interval_environment(dist, seed, k, -t, 2 * t + 1)
            out = out.convolve(evolve_pmf(env, t))
        return out
    p = np.zeros(2 * n + 1)
    p[n] = 1.0
    a, b = n, n + 1
    for k, t in segments:
        w = np.full(2 * n + 1, 0.5)
        w[1:2 * n] = interval_environment(dist, seed, k, -(n - 1), 2 * n - 1).values
        p, a, b = _advance(p, w, t, a, b)
    return LatticePmf(-n, p)


def rwcre_sample(dist, cmap, n, seed, frame=RECENTERED, walk_seed=None):
    """Monte Carlo path of the cooling walk up to time ``n``.

    Interval ``k`` uses environment seed ``derive_seed(seed, ENV_TAG, k)``
    and walk seed ``derive_seed(walk_seed, WALK_TAG, k)``; its increment
    depends on nothing else.  ``walk_seed`` defaults to ``seed``; passing it
    separately keeps the environments fixed while the walk is resampled.
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    positions = [0]
    for k, t in cmap.segments(n):
        if t == 0:
            continue
        start = positions[-1] if frame == ABSOLUTE else 0
        env = interval_environment(dist, seed, k, start - t, 2 * t + 1)
        u = generator(interval_walk_seed(seed if walk_seed is None else walk_seed, k)).random(t).tolist()
        piece = _walk(env.values.tolist(), start - t, u, start=start)
        if frame == RECENTERED:
            base = positions[-1]
            positions.extend(base + x for x in piece[1:])
        else:
            positions.extend(piece[1:])
    return Trajectory(np.array(positions, dtype=np.int64), int(seed))
