"""Quenched cumulant generating functions and rate functions.

The hitting-time chain runs ``J*`` (continued-fraction sweep) -> ``J``
(convex conjugate) -> ``I`` (``x J(1/x)`` on the right, shifted ``J`` on the
left) -> ``I*`` (conjugate restricted to ``[-1, 1]``).

Passage-time recursion.  Let ``phi_x(lam) = E^omega_x[exp(lam * tau_x)]`` with
``tau_x`` the passage time from ``x`` to ``x + 1``.  Conditioning on the first
step gives::

    phi_x = omega_x e^lam / (1 - (1 - omega_x) e^lam phi_{x-1})

and ``H_n = tau_0 + ... + tau_{n-1}`` with independent summands, so
``log E^omega_0[exp(lam H_n)] = sum_x log phi_x``.  A non-positive denominator
means the moment generating function is infinite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .env import rho_moments, sample_environment, speed
from .errors import EmptyFinitePart, ValidationError

CONVEX_TOL = 1e-9
DEFAULT_WARMUP = 1000


@dataclass(eq=False)
class GridFunction:
    """Piecewise-linear function on a strictly increasing grid.

    ``ys`` may hold ``+inf``; the finite values must be contiguous.
    """

    xs: np.ndarray
    ys: np.ndarray
    convex: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.shape != self.ys.shape or self.xs.ndim != 1:
            raise ValidationError("xs and ys must be 1-d arrays of equal length", field="grid")
        if np.any(np.diff(self.xs) <= 0):
            raise ValidationError("grid must be strictly increasing", field="xs")
        if np.any(np.isnan(self.ys)) or np.any(self.ys == -np.inf):
            raise ValidationError("values must be finite or +inf", field="ys")
        idx = np.flatnonzero(self.finite)
        if len(idx) and idx[-1] - idx[0] + 1 != len(idx):
            raise ValidationError("finite values must be contiguous", field="ys")

    @property
    def finite(self):
        return np.isfinite(self.ys)

    def finite_part(self):
        m = self.finite
        return self.xs[m], self.ys[m]

    def __call__(self, x):
        """Linear interpolation on the finite part, ``+inf`` outside it."""
        fx, fy = self.finite_part()
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.inf)
        if len(fx):
            inside = (x >= fx[0]) & (x <= fx[-1])
            out[inside] = np.interp(x[inside], fx, fy)
        return out if out.ndim else float(out)

    def second_differences(self):
        """Divided second differences of the finite part (uneven grids allowed)."""
        x, y = self.finite_part()
        if len(x) < 3:
            return np.empty(0)
        slopes = np.diff(y) / np.diff(x)
        return np.diff(slopes)

    def is_convex(self, tol=CONVEX_TOL):
        return bool(np.all(self.second_differences() >= -tol))

    def to_csv(self, path, header=None):
        with open(path, "w", newline="") as fh:
            meta = dict(self.meta)
            if header:
                meta.update(header)
            for key in sorted(meta):
                fh.write(f"# {key}={meta[key]}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "is_infinite"])
            for x, y in zip(self.xs, self.ys):
                inf = not math.isfinite(y)
                writer.writerow([repr(float(x)), "" if inf else repr(float(y)), int(inf)])

    @classmethod
    def from_csv(cls, path):
        xs, ys, meta = [], [], {}
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    meta[key] = val
                    continue
                if line.startswith("x,"):
                    continue
                x, y, inf = line.strip().split(",")
                xs.append(float(x))
                ys.append(math.inf if inf == "1" else float(y))
        return cls(np.array(xs), np.array(ys), meta=meta)


@dataclass(frozen=True)
class CFState:
    phi: float
    diverged: bool = False


def hitting_cf_step(prev, omega_x, lam):
    """One step of the passage-time continued fraction."""
    if prev.diverged:
        raise ValueError("cannot step from a diverged state")
    e = math.exp(lam)
    denom = 1.0 - (1.0 - omega_x) * e * prev.phi
    if denom <= 0:
        return CFState(math.inf, True)
    return CFState(omega_x * e / denom, False)


def homogeneous_fixed_point(p, lam):
    """Passage MGF in the homogeneous environment ``p``; ``inf`` if none.

    Smallest root of ``(1-p) e^lam phi^2 - phi + p e^lam = 0``.
    """
    q = 1.0 - p
    e = math.exp(lam)
    disc = 1.0 - 4.0 * p * q * e * e
    if disc < 0:
        return math.inf
    if q == 0:
        return p * e
    return (1.0 - math.sqrt(disc)) / (2.0 * q * e)


def _initial_phi(p, lam):
    phi = homogeneous_fixed_point(p, lam)
    # No homogeneous fixed point: start from the reflecting-boundary value.
    return p * math.exp(lam) if not math.isfinite(phi) else phi


def _sweep_scalar(omega, lam, warmup):
    e = math.exp(lam)
    phi = _initial_phi(omega[0], lam)
    total = 0.0
    for i, w in enumerate(omega):
        denom = 1.0 - (1.0 - w) * e * phi
        if denom <= 0:
            return math.inf
        phi = w * e / denom
        if i >= warmup:
            total += math.log(phi)
    return total


def _sweep_batch(omega, lam, warmup):
    """Continued-fraction sweep vectorised over trailing axes.

    ``omega`` has shape ``(sites, *batch)``; ``lam`` broadcasts against
    ``batch``.  Returns the summed ``log phi`` over sites ``warmup..`` with
    ``+inf`` where any step diverged.
    """
    lam = np.asarray(lam, dtype=float)
    shape = np.broadcast_shapes(omega.shape[1:], lam.shape)
    e = np.broadcast_to(np.exp(lam), shape)
    p0 = np.broadcast_to(omega[0], shape)
    q0 = 1.0 - p0
    disc = 1.0 - 4.0 * p0 * q0 * e * e
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(disc >= 0, (1.0 - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * q0 * e), p0 * e)
    dead = np.zeros(shape, dtype=bool)
    total = np.zeros(shape)
    for i in range(omega.shape[0]):
        w = omega[i]
        denom = 1.0 - (1.0 - w) * e * phi
        dead |= denom <= 0
        phi = np.where(dead, 1.0, w * e / np.where(dead, 1.0, denom))
        if i >= warmup:
            total += np.log(phi)
    return np.where(dead, np.inf, total)


def _zero_at_origin(dist, lam):
    # At lam = 0 the passage time is a.s. finite when <log rho> <= 0.
    return lam == 0 and rho_moments(dist).mean_log_rho <= 0


def hitting_logmgf_rate(dist, n, lam, warmup=DEFAULT_WARMUP, seed=0):
    """``(1/n) log E_0^omega[exp(lam H_n)]`` on the environment drawn from
    ``seed`` (sites ``-warmup .. n-1``); ``inf`` if the MGF diverges."""
    if _zero_at_origin(dist, lam):
        return 0.0
    omega = sample_environment(dist, -warmup, warmup + n, seed).values.tolist()
    return _sweep_scalar(omega, lam, warmup) / n


def hitting_logmgf_batch(dist, n, lam, seeds, warmup=DEFAULT_WARMUP):
    """:func:`hitting_logmgf_rate` for many environments at once."""
    if _zero_at_origin(dist, lam):
        return np.zeros(len(seeds))
    omega = np.stack([sample_environment(dist, -warmup, warmup + n, s).values for s in seeds], axis=1)
    return _sweep_batch(omega, lam, warmup) / n


def jstar_curve(dist, lambdas, n, seed, warmup=DEFAULT_WARMUP):
    """Scaled hitting-time CGF on a shared environment.

    Everything from the first diverged grid point on is ``+inf``; the
    critical point is reported in ``meta`` as the bracket
    ``[last finite lambda, first diverged lambda]``.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.diff(lambdas) <= 0):
        raise ValidationError("lambda grid must be strictly increasing", field="lambdas")
    omega = sample_environment(dist, -warmup, warmup + n, seed).values
    ys = _sweep_batch(omega[:, None], lambdas[None, :], warmup)[0] / n
    if rho_moments(dist).mean_log_rho <= 0:
        ys[lambdas == 0] = 0.0
    detected = _divergence_bracket(lambdas, ys)
    if dist.rhos.max() > 1:
        # Arbitrarily long stretches of sites with rho > 1 trap the walk for
        # exponentially long times, so the limit is +inf for every lam > 0
        # even where a finite sample has not diverged yet.
        ys[lambdas > 0] = np.inf
    bracket = _divergence_bracket(lambdas, ys)
    if bracket is not None:
        ys[np.searchsorted(lambdas, bracket[1]):] = np.inf
    out = GridFunction(lambdas, ys, meta={"n": n, "seed": seed, "warmup": warmup, "dist_id": dist.dist_id})
    out.convex = out.is_convex()
    out.meta["lambda_c"] = bracket
    out.meta["lambda_c_detected"] = detected
    return out


def _divergence_bracket(lambdas, ys):
    bad = np.flatnonzero(~np.isfinite(ys))
    if not len(bad):
        return None
    first = bad[0]
    return (float(lambdas[first - 1]) if first > 0 else -math.inf, float(lambdas[first]))


def legendre(f, out_grid):
    """Discrete convex conjugate ``g(y) = max_i [y x_i - f(x_i)]``.

    Grid points where ``f`` is ``+inf`` are excluded.  The result is the exact
    conjugate of the piecewise-linear interpolant of ``f``.
    """
    x, y = f.finite_part()
    if not len(x):
        raise EmptyFinitePart("function has no finite values")
    out_grid = np.asarray(out_grid, dtype=float)
    g = np.empty(len(out_grid))
    step = max(1, 4_000_000 // len(x))
    for s in range(0, len(out_grid), step):
        block = out_grid[s:s + step]
        g[s:s + step] = np.max(block[:, None] * x[None, :] - y[None, :], axis=1)
    return GridFunction(out_grid, g, convex=True)


def jtilde(J, mean_log_rho):
    """Rate function for hitting times to the left: ``J - <log rho>``."""
    ys = np.where(J.finite, J.ys - mean_log_rho, np.inf)
    return GridFunction(J.xs.copy(), ys, convex=J.convex, meta=dict(J.meta))


_SNAP = 1e-9


def reciprocal_grid(x_grid):
    """Sorted ``1/|x|`` over the non-zero points of ``x_grid``.

    Points closer than a relative ``1e-9`` (e.g. ``1/0.3`` and ``1/-0.3``
    from a grid that is symmetric only up to rounding) are merged.
    """
    x = np.abs(np.asarray(x_grid, dtype=float))
    u = np.unique(1.0 / x[x > 0])
    keep = np.concatenate([[True], np.diff(u) > _SNAP * u[1:]])
    return u[keep]


def _snap(u, grid):
    """Move each ``u`` onto ``grid`` when within a relative ``1e-9``."""
    i = np.clip(np.searchsorted(grid, u), 1, len(grid) - 1)
    near = np.where(np.abs(grid[i - 1] - u) <= np.abs(grid[i] - u), grid[i - 1], grid[i])
    return np.where(np.abs(near - u) <= _SNAP * np.abs(u), near, u)


def rate_I_from_J(J, mean_log_rho=0.0, x_grid=None, at_zero=0.0):
    """Displacement rate function from the hitting-time one.

    ``I(x) = x J(1/x)`` on ``(0, 1]``, ``I(0) = at_zero`` and
    ``I(x) = |x| Jtilde(1/|x|)`` on ``[-1, 0)``.  ``J`` is interpolated, so a
    ``J`` grid built with :func:`reciprocal_grid` makes every lookup exact.

    ``at_zero`` is the right end of the finiteness domain of ``J*``, which
    is 0 for nested laws; reference laws without traps (e.g. a drifted
    homogeneous walk) have a positive value there.
    """
    if x_grid is None:
        x_grid = np.linspace(-1.0, 1.0, 401)
    x = np.asarray(x_grid, dtype=float)
    Jt = jtilde(J, mean_log_rho)
    ys = np.full(len(x), float(at_zero))
    pos, neg = x > 0, x < 0
    ys[pos] = x[pos] * np.asarray(J(_snap(1.0 / x[pos], J.xs)))
    ys[neg] = -x[neg] * np.asarray(Jt(_snap(1.0 / -x[neg], J.xs)))
    out = GridFunction(x, ys)
    out.convex = out.is_convex()
    return out


def finiteness_edge(jstar):
    """Right end of the finite part of ``J*``, floored at 0."""
    bracket = jstar.meta.get("lambda_c")
    if bracket is not None:
        return max(0.0, bracket[0])
    fx, _ = jstar.finite_part()
    return max(0.0, float(fx[-1]))


def istar_from_I(I, lambdas):
    """``I*(lam) = sup_{|x| <= 1} [lam x - I(x)]``."""
    m = (I.xs >= -1.0) & (I.xs <= 1.0)
    restricted = GridFunction(I.xs[m], I.ys[m])
    return legendre(restricted, lambdas)


def clustered_grid(lo, hi, points, center=0.0):
    """Grid on ``[lo, hi]`` with quadratic clustering at ``center``.

    Cumulant generating functions of hitting times have a square-root
    singularity at the origin in the recurrent case; clustering keeps the
    conjugate accurate near slope infinity.
    """
    half = max(2, points // 2)
    u = np.linspace(0.0, 1.0, half + 1)
    left = center + (lo - center) * u[::-1] ** 2 if lo < center else np.empty(0)
    right = center + (hi - center) * u[1:] ** 2 if hi > center else np.empty(0)
    return np.unique(np.concatenate([left, right]))


@dataclass(eq=False)
class RateChain:
    jstar: GridFunction
    J: GridFunction
    I: GridFunction
    istar: GridFunction
    mean_log_rho: float
    speed: float


def rate_chain(
    dist,
    n,
    seed,
    lambdas=None,
    x_grid=None,
    istar_grid=None,
    warmup=DEFAULT_WARMUP,
):
    """Compute ``J*``, ``J``, ``I`` and ``I*`` for ``dist`` in one go."""
    if lambdas is None:
        lambdas = clustered_grid(-3.0, 3.0, 401)
    if x_grid is None:
        x_grid = np.linspace(-1.0, 1.0, 401)
    if istar_grid is None:
        istar_grid = np.linspace(-3.0, 3.0, 401)
    mlr = rho_moments(dist).mean_log_rho
    js = jstar_curve(dist, lambdas, n, seed, warmup)
    J = legendre(js, reciprocal_grid(x_grid))
    I = rate_I_from_J(J, mlr, x_grid, finiteness_edge(js))
    Is = istar_from_I(I, istar_grid)
    return RateChain(js, J, I, Is, mlr, speed(dist))


@dataclass(frozen=True)
class Block:
    lo: float
    hi: float
    closed_left: bool
    mass: float


def empirical_block_rate(pmf, n, N, v=0.0):
    """Block masses of ``Z_n / n`` over the partition of ``[-1, 1]`` into
    ``2N`` blocks, with the blocks covering ``(0, floor(vN + 1)/N]`` merged
    when ``v > 0``.  Rates are ``-(1/n) log mass`` (``inf`` if empty).
    """
    sites = pmf.sites
    if np.any(np.abs(sites[pmf.weights > 0]) > n):
        raise ValidationError("pmf has mass outside [-n, n]", field="pmf")
    # Block i holds x/n in (i/N, (i+1)/N]; block -N also holds x/n = -1.
    idx = -((-sites * N) // n) - 1
    idx = np.maximum(idx, -N)
    masses = np.zeros(2 * N)
    np.add.at(masses, idx + N, pmf.weights)
    bounds = [(i / N, (i + 1) / N, i == -N) for i in range(-N, N)]
    if v > 0:
        m = min(math.floor(v * N + 1), N)
        merged = masses[N:N + m].sum()
        masses = np.concatenate([masses[:N], [merged], masses[N + m:]])
        bounds = bounds[:N] + [(0.0, m / N, False)] + bounds[N + m:]
    out = []
    for (lo, hi, closed), mass in zip(bounds, masses):
        rate = -math.log(mass) / n if mass > 0 else math.inf
        out.append((Block(lo, hi, closed, float(mass)), rate))
    return out
