"""Harness for cooling sums of triangular arrays.

Given an array ``psi[k][n]`` (row ``k`` independent of the others, bounded
increments in ``n``) and a cooling map, the cooling sum at time ``n`` is::

    (1/n) * (sum_{k < ell} psi[k][T_k] + psi[ell][bar_t])

This module evaluates it and splits ``total - L`` into refreshed (R),
boundary (B) and deterministic (D) parts.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import MeansUnavailable
from .rng import CELL_TAG, derive_seed, generator
from .walk import (
    _logmgf_path,
    _site_window,
    evolve_pmf,
    interval_environment,
    interval_walk_seed,
    sample_path,
)


class ArrayProvider:
    """Supplier of ``psi[k][n]``.

    Subclasses implement :meth:`value` and, when available, :meth:`mean`
    returning ``E[psi[k][n] / n]`` (conditional on whatever the provider
    treats as fixed, e.g. the environment of row ``k``).  Set
    ``exact_means = False`` to have the harness estimate means from
    ``replicas`` independent seeds instead.
    """

    increment_bound = math.inf
    limit: Optional[float] = None
    exact_means = True
    replicas = 0

    def value(self, k, n, seed):
        raise NotImplementedError

    def mean(self, k, n, seed):
        raise MeansUnavailable(f"{type(self).__name__} has no exact means")


class DeterministicProvider(ArrayProvider):
    """``psi[k][n] = n * L_k`` with ``L_k`` a constant or a function of k."""

    increment_bound = None

    def __init__(self, rows, limit):
        self.rows = rows if callable(rows) else (lambda k, c=float(rows): c)
        self.limit = float(limit)

    def value(self, k, n, seed):
        return n * self.rows(k)

    def mean(self, k, n, seed):
        return self.rows(k)


class IIDSumProvider(ArrayProvider):
    """``psi[k][n]`` = sum of ``n`` i.i.d. draws uniform on ``{low, high}``."""

    def __init__(self, low=0.0, high=1.0):
        self.low, self.high = float(low), float(high)
        self.limit = 0.5 * (self.low + self.high)
        self.increment_bound = max(abs(self.low), abs(self.high))

    def value(self, k, n, seed):
        draws = generator(derive_seed(seed, CELL_TAG, k)).random(n) < 0.5
        hits = int(np.count_nonzero(draws))
        return hits * self.high + (n - hits) * self.low

    def mean(self, k, n, seed):
        return self.limit


class DisplacementProvider(ArrayProvider):
    """Row ``k`` is a static walk in ``omega_k``: ``psi[k][n] = Z_n``.

    Seeds match :func:`coolwalk.walk.rwcre_sample`, so the cooling sum equals
    ``X_n / n`` of the cooling walk with the same master seed.  Means are
    quenched (given ``omega_k``) and computed exactly by the forward DP.
    """

    increment_bound = 1.0

    def __init__(self, dist, limit=None):
        from .env import speed

        self.dist = dist
        self.limit = speed(dist) if limit is None else float(limit)

    def _env(self, k, n, seed):
        return interval_environment(self.dist, seed, k, -n, 2 * n + 1)

    def value(self, k, n, seed):
        if n == 0:
            return 0.0
        return float(sample_path(self._env(k, n, seed), n, interval_walk_seed(seed, k)).endpoint)

    def mean(self, k, n, seed):
        if n == 0:
            return 0.0
        return evolve_pmf(self._env(k, n, seed), n).mean() / n


class LogMGFProvider(ArrayProvider):
    """``psi[k][n] = log E^{omega_k}[exp(lam Z_n)]``, deterministic given
    ``omega_k``; ``limit`` should be ``I*(lam)``."""

    increment_bound = None

    def __init__(self, dist, lam, limit=None):
        self.dist = dist
        self.lam = float(lam)
        self.increment_bound = abs(self.lam)
        self.limit = limit

    def value(self, k, n, seed):
        if n == 0:
            return 0.0
        env = interval_environment(self.dist, seed, k, -n, 2 * n + 1)
        return float(_logmgf_path(_site_window(env, n), n, self.lam)[-1])

    def mean(self, k, n, seed):
        return self.value(k, n, seed) / n if n else 0.0


def _row_mean(provider, k, n, seed):
    if provider.exact_means:
        return provider.mean(k, n, seed)
    if provider.replicas < 1:
        raise MeansUnavailable("provider has neither exact means nor replicas")
    vals = [provider.value(k, n, derive_seed(seed, CELL_TAG, k, r)) for r in range(provider.replicas)]
    return math.fsum(vals) / (len(vals) * n)


def cooling_weights(cmap, n):
    """Exact weights ``[(k, T_k/n), ...] + [(ell, bar_t/n)]`` as Fractions."""
    if n < 1:
        raise ValueError("cooling sums are defined for n >= 1")
    return [(k, Fraction(t, n)) for k, t in cmap.segments(n)]


def cooling_sum(provider, cmap, n, seed):
    """Value of the cooling sum at time ``n`` for master ``seed``."""
    segs = cmap.segments(n)
    terms = [provider.value(k, t, seed) for k, t in segs if t > 0]
    return math.fsum(terms) / n


@dataclass
class CETRow:
    n: int
    seed: int
    total: float
    R: float
    B: float
    D: float
    limit: float

    @property
    def deviation(self):
        return self.total - self.limit


def rbd_decompose(provider, cmap, n, L, seed):
    """Split ``total - L`` into refreshed, boundary and deterministic parts."""
    segs = cmap.segments(n)
    *full, (ell, bar_t) = segs
    R_terms, D_terms, totals = [], [], []
    for k, t in full:
        psi = provider.value(k, t, seed)
        Lk = _row_mean(provider, k, t, seed)
        gamma = t / n
        totals.append(psi)
        R_terms.append((psi - t * Lk) / n)
        D_terms.append(gamma * (Lk - L))
    B = 0.0
    if bar_t > 0:
        psi = provider.value(ell, bar_t, seed)
        Lbar = _row_mean(provider, ell, bar_t, seed)
        gbar = bar_t / n
        totals.append(psi)
        B = (psi - bar_t * Lbar) / n
        D_terms.append(gbar * (Lbar - L))
    total = math.fsum(totals) / n
    return CETRow(n, seed, total, math.fsum(R_terms), B, math.fsum(D_terms), L)


def count_inversions(values):
    """Adjacent increases along a sequence that should be non-increasing."""
    return sum(1 for a, b in zip(values, values[1:]) if b > a)


@dataclass
class CETReport:
    rows: list
    limit: float
    means: str
    limit_estimate: float
    median_abs_deviation: dict = field(default_factory=dict)
    inversions: int = 0
    decay_exponent: Optional[float] = None
    no_cooling: bool = False

    def to_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            meta = {"limit": self.limit, "means": self.means, "limit_estimate": self.limit_estimate,
                    "inversions": self.inversions, "decay_exponent": self.decay_exponent,
                    "no_cooling": self.no_cooling}
            meta.update(header or {})
            for key in sorted(meta):
                fh.write(f"# {key}={meta[key]}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "seed", "total", "R", "B", "D", "deviation"])
            for r in self.rows:
                writer.writerow([r.n, r.seed] + [repr(float(v)) for v in (r.total, r.R, r.B, r.D, r.deviation)])


def convergence_report(provider, cmap, n_grid, seeds, with_rbd=True, pmap=map):
    """Tabulate cooling sums (and R/B/D when means exist) over ``n_grid``
    and ``seeds``.  ``pmap`` may be an order-preserving parallel map."""
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be increasing")
    L = provider.limit
    if L is None:
        raise ValueError("provider has no limit L")
    cells = [(n, s) for s in seeds for n in n_grid]

    def run(cell):
        n, s = cell
        if with_rbd:
            return rbd_decompose(provider, cmap, n, L, s)
        return CETRow(n, s, cooling_sum(provider, cmap, n, s), math.nan, math.nan, math.nan, L)

    rows = list(pmap(run, cells))
    med = {n: statistics.median(abs(r.deviation) for r in rows if r.n == n) for n in n_grid}
    seq = [med[n] for n in n_grid]
    decay = None
    if len(n_grid) >= 2 and all(v > 0 for v in seq):
        decay = float(-np.polyfit(np.log(n_grid), np.log(seq), 1)[0])
    last = [r.total for r in rows if r.n == n_grid[-1]]
    means = "exact" if provider.exact_means else f"estimated({provider.replicas})"
    return CETReport(
        rows=rows,
        limit=L,
        means=means if with_rbd else "none",
        limit_estimate=math.fsum(last) / len(last),
        median_abs_deviation=med,
        inversions=count_inversions(seq),
        decay_exponent=decay,
        no_cooling=cmap.no_cooling,
    )
