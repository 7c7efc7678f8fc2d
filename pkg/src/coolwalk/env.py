"""Environment laws, sampled environments and cooling maps.

Site probabilities follow a finite-support law ``alpha``; ``rho = (1-p)/p``
is the left/right ratio at a site.  All scalar characteristics of the static
model (rho moments, the speed, the flat-piece exponent ``s``) are computed
here from the atoms.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import (
    EllipticityViolated,
    NotNested,
    PreconditionFlatPiece,
    PreconditionNested,
    ValidationError,
    WeightSum,
    WindowTooSmall,
)
from .rng import site_uniforms

WEIGHT_TOL = 1e-12

RECURRENT = "recurrent"
ZERO_SPEED = "transient-zero-speed"
POSITIVE_SPEED = "transient-positive-speed"


def _exact(x):
    # Decimal literals such as 0.8 are taken at face value (4/5), so derived
    # rationals like <rho> = 7/8 come out exact.
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class AlphaDistribution:
    """Finite-support law of a single site probability.

    Build validated instances with :func:`validate_alpha`; the constructor
    itself performs no checks so reference laws (e.g. homogeneous ones) can
    be expressed directly.
    """

    atoms: tuple
    ellipticity_c: float
    validated: bool = False

    @classmethod
    def homogeneous(cls, p):
        """Single-atom reference law; not basic, bypasses validation."""
        p = float(p)
        return cls(((p, 1.0),), min(p, 1.0 - p), validated=False)

    @property
    def probs(self):
        return np.array([a[0] for a in self.atoms], dtype=float)

    @property
    def weights(self):
        return np.array([a[1] for a in self.atoms], dtype=float)

    @property
    def rhos(self):
        return np.array([float((1 - _exact(p)) / _exact(p)) for p, _ in self.atoms])

    @property
    def dist_id(self):
        text = ";".join(f"{p!r}:{w!r}" for p, w in self.atoms) + f"|c={self.ellipticity_c!r}"
        return "alpha-" + hashlib.sha256(text.encode()).hexdigest()[:12]

    def reflected(self):
        """Law of ``1 - omega(x)``: mirror image of the walk."""
        atoms = tuple((float(1 - _exact(p)), w) for p, w in self.atoms)
        return AlphaDistribution(atoms, self.ellipticity_c, self.validated)

    def to_spec(self):
        return {"atoms": [[p, w] for p, w in self.atoms], "c": self.ellipticity_c}


def validate_alpha(atoms, c):
    """Validate ``atoms = [(p, w), ...]`` as a basic law with ellipticity ``c``.

    Raises :class:`WeightSum`, :class:`EllipticityViolated` or
    :class:`NotNested` naming the offending atom.
    """
    atoms = tuple((float(p), float(w)) for p, w in atoms)
    if not atoms:
        raise ValidationError("distribution has no atoms", field="atoms")
    for i, (p, w) in enumerate(atoms):
        if not w > 0:
            raise ValidationError(f"atom {i} {(p, w)} has non-positive weight", field=f"atoms[{i}]")
    c = float(c)
    if not 0 < c <= 0.5:
        raise ValidationError(f"ellipticity constant {c} not in (0, 1/2]", field="c")
    total = math.fsum(w for _, w in atoms)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise WeightSum(f"weights sum to {total!r}, not 1", field="weights")
    for i, (p, w) in enumerate(atoms):
        if not c <= p <= 1 - c:
            raise EllipticityViolated(
                f"atom {i} p={p} outside [{c}, {1 - c}]", field=f"atoms[{i}]"
            )
    rhos = [(1 - _exact(p)) / _exact(p) for p, _ in atoms]
    if not min(rhos) < 1:
        i = rhos.index(min(rhos))
        raise NotNested(f"rho_min = {float(min(rhos))} is not < 1 (atom {i})", field=f"atoms[{i}]")
    if not max(rhos) > 1:
        i = rhos.index(max(rhos))
        raise NotNested(f"rho_max = {float(max(rhos))} is not > 1 (atom {i})", field=f"atoms[{i}]")
    return AlphaDistribution(atoms, c, validated=True)


@dataclass(frozen=True)
class RhoMoments:
    mean_rho: float
    mean_log_rho: float
    rho_min: float
    rho_max: float
    regime: str
    # True when <log rho> > 0 and the regime refers to the mirrored walk.
    reflected: bool = False


def _mean_rho_exact(dist):
    return sum(_exact(w) * (1 - _exact(p)) / _exact(p) for p, w in dist.atoms)


def _mean_log_rho(dist):
    terms = []
    for p, w in dist.atoms:
        q = float(1 - _exact(p))
        terms.append(w * (math.log(q) - math.log(p)))
    value = math.fsum(terms)
    return 0.0 if abs(value) < 1e-15 else value


def _regime(mean_rho, mean_log_rho):
    if mean_log_rho == 0:
        return RECURRENT
    if mean_rho >= 1:
        return ZERO_SPEED
    return POSITIVE_SPEED


def rho_moments(dist):
    mlr = _mean_log_rho(dist)
    rhos = dist.rhos
    if mlr > 0:
        refl = dist.reflected()
        regime = _regime(_mean_rho_exact(refl), -mlr)
        reflected = True
    else:
        regime = _regime(_mean_rho_exact(dist), mlr)
        reflected = False
    return RhoMoments(
        mean_rho=float(_mean_rho_exact(dist)),
        mean_log_rho=mlr,
        rho_min=float(rhos.min()),
        rho_max=float(rhos.max()),
        regime=regime,
        reflected=reflected,
    )


def speed(dist):
    """Almost-sure speed of the static walk.

    Zero when ``<rho> >= 1``, else ``(1 - <rho>)/(1 + <rho>)``.  Laws with
    ``<log rho> > 0`` are handled through the mirrored law and the result is
    negated; :func:`rho_moments` reports that case via ``reflected``.
    """
    if _mean_log_rho(dist) > 0:
        return -speed(dist.reflected())
    m = _mean_rho_exact(dist)
    if m >= 1:
        return 0.0
    return float((1 - m) / (1 + m))


def solve_s(dist, tol=1e-12):
    """Root ``s > 1`` of ``<rho^s> = 1`` by bisection."""
    if _mean_rho_exact(dist) >= 1:
        raise PreconditionFlatPiece("<rho> >= 1: no flat piece, s undefined")
    rhos, w = dist.rhos, dist.weights
    if rhos.max() <= 1:
        raise PreconditionNested("rho_max <= 1: <rho^s> < 1 for every s > 0")

    def excess(s):
        return math.fsum(w * rhos**s) - 1.0

    lo, hi = 1.0, 2.0
    while excess(hi) <= 0:
        lo, hi = hi, 2 * hi
    while True:
        mid = 0.5 * (lo + hi)
        g = excess(mid)
        if abs(g) <= tol or hi - lo <= 4 * np.finfo(float).eps * hi:
            return mid
        if g < 0:
            lo = mid
        else:
            hi = mid


@dataclass(frozen=True, eq=False)
class Environment:
    """Site probabilities ``omega(x)`` for ``x = lo .. lo+len-1``.

    Sampled environments remember ``dist`` and ``seed`` and can hand out any
    other window through :meth:`window`; explicit ones cannot.
    """

    lo: int
    values: np.ndarray
    seed: Optional[int] = None
    dist_id: Optional[str] = None
    dist: Optional[AlphaDistribution] = field(default=None, repr=False)

    @classmethod
    def from_values(cls, values, lo=0):
        arr = np.array(values, dtype=float)
        arr.setflags(write=False)
        return cls(int(lo), arr)

    def __len__(self):
        return len(self.values)

    @property
    def hi(self):
        """Last covered site (inclusive)."""
        return self.lo + len(self.values) - 1

    def covers(self, a, b):
        return self.lo <= a and b <= self.hi

    def window(self, a, b):
        """Values on sites ``a .. b`` inclusive."""
        if b < a:
            return np.empty(0)
        if self.covers(a, b):
            return self.values[a - self.lo:b - self.lo + 1]
        if self.dist is None:
            raise WindowTooSmall(f"environment covers [{self.lo}, {self.hi}], need [{a}, {b}]")
        return sample_environment(self.dist, a, b - a + 1, self.seed).values

    def __call__(self, x):
        return float(self.window(x, x)[0])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# lo={self.lo} len={len(self)} seed={self.seed} dist_id={self.dist_id}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["site", "omega"])
            for i, v in enumerate(self.values):
                writer.writerow([self.lo + i, repr(float(v))])

    @classmethod
    def from_csv(cls, path):
        meta = {}
        sites, values = [], []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    for tok in line[1:].split():
                        key, _, val = tok.partition("=")
                        meta[key] = val
                    continue
                if line.startswith("site"):
                    continue
                s, v = line.strip().split(",")
                sites.append(int(s))
                values.append(float(v))
        seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
        dist_id = None if meta.get("dist_id") in (None, "None") else meta["dist_id"]
        arr = np.array(values)
        arr.setflags(write=False)
        return cls(sites[0] if sites else int(meta.get("lo", 0)), arr, seed, dist_id)


def sample_environment(dist, lo, length, seed):
    """Draw ``omega(x)`` i.i.d. from ``dist`` for ``length`` sites from ``lo``.

    The value at ``x`` depends only on ``(seed, x)``, so overlapping windows
    agree site by site.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    u = site_uniforms(seed, lo, length)
    cum = np.cumsum(dist.weights)
    idx = np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), len(cum) - 1)
    values = dist.probs[idx]
    values.setflags(write=False)
    return Environment(int(lo), values, int(seed), dist.dist_id, dist)


class CoolingMap:
    """Refresh schedule ``tau`` with ``tau(0) = 0`` and increments ``T_k``.

    Kinds: ``polynomial`` (``T_k = max(1, floor(k**a))``), ``exponential``
    (``T_k = max(1, floor(exp(b*k)))``), ``explicit`` (given increments, the
    last one repeating once the list is exhausted) and ``constant``.  The
    constant kind violates ``T_k -> inf`` and is flagged :attr:`no_cooling`.
    """

    KINDS = ("polynomial", "exponential", "explicit", "constant")

    def __init__(self, kind, param):
        if kind not in self.KINDS:
            raise ValidationError(f"unknown cooling map kind {kind!r}", field="map.kind")
        if kind == "explicit":
            param = tuple(int(t) for t in param)
            if not param or min(param) < 1:
                raise ValidationError("explicit increments must be positive integers", field="map.increments")
        elif kind == "constant":
            if int(param) != param or param < 1:
                raise ValidationError("constant increment must be an integer >= 1", field="map.T")
            param = int(param)
        else:
            if not param > 0:
                raise ValidationError(f"{kind} map parameter must be > 0", field="map")
            param = float(param)
        self.kind = kind
        self.param = param
        self._taus = [0]

    @classmethod
    def polynomial(cls, a):
        return cls("polynomial", a)

    @classmethod
    def exponential(cls, b):
        return cls("exponential", b)

    @classmethod
    def explicit(cls, increments):
        return cls("explicit", increments)

    @classmethod
    def constant(cls, T):
        return cls("constant", T)

    @property
    def no_cooling(self):
        return self.kind == "constant"

    def __repr__(self):
        return f"CoolingMap({self.kind!r}, {self.param!r})"

    def __eq__(self, other):
        return isinstance(other, CoolingMap) and (self.kind, self.param) == (other.kind, other.param)

    def __hash__(self):
        return hash((self.kind, self.param))

    def increment(self, k):
        """``T_k`` for ``k >= 1``."""
        if k < 1:
            raise ValueError("increments are indexed from k = 1")
        if self.kind == "polynomial":
            return max(1, math.floor(k ** self.param))
        if self.kind == "exponential":
            return max(1, math.floor(math.exp(self.param * k)))
        if self.kind == "explicit":
            return self.param[min(k, len(self.param)) - 1]
        return self.param

    def increments(self, k_max):
        return [self.increment(k) for k in range(1, k_max + 1)]

    def tau(self, k):
        while len(self._taus) <= k:
            self._taus.append(self._taus[-1] + self.increment(len(self._taus)))
        return self._taus[k]

    def locate(self, n):
        """Return ``(ell, bar_t)``: the interval index of time ``n`` and the
        time already spent in it."""
        if n < 0:
            raise ValueError("n must be non-negative")
        while self._taus[-1] <= n:
            self.tau(len(self._taus))
        ell = bisect.bisect_right(self._taus, n)
        return ell, n - self._taus[ell - 1]

    def segments(self, n):
        """``[(k, length), ...]`` for the full intervals before time ``n``
        followed by the running interval ``(ell, bar_t)``."""
        ell, bar_t = self.locate(n)
        return [(k, self.increment(k)) for k in range(1, ell)] + [(ell, bar_t)]

    def to_spec(self):
        key = {"polynomial": "a", "exponential": "b", "explicit": "increments", "constant": "T"}[self.kind]
        value = list(self.param) if self.kind == "explicit" else self.param
        return {"kind": self.kind, key: value}

    @classmethod
    def from_spec(cls, spec):
        spec = dict(spec)
        kind = spec.pop("kind", None)
        key = {"polynomial": "a", "exponential": "b", "explicit": "increments", "constant": "T"}.get(kind)
        if key is None:
            raise ValidationError(f"unknown cooling map kind {kind!r}", field="map.kind")
        if key not in spec:
            raise ValidationError(f"{kind} map needs '{key}'", field=f"map.{key}")
        value = spec.pop(key)
        if spec:
            raise ValidationError(f"unknown map keys {sorted(spec)}", field="map")
        return cls(kind, value)
