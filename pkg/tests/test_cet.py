import math
import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from coolwalk.cet import (
    ArrayProvider,
    DeterministicProvider,
    DisplacementProvider,
    IIDSumProvider,
    LogMGFProvider,
    convergence_report,
    cooling_sum,
    cooling_weights,
    count_inversions,
    rbd_decompose,
)
from coolwalk.env import CoolingMap, validate_alpha
from coolwalk.errors import MeansUnavailable
from coolwalk.rng import CELL_TAG, derive_seed
from coolwalk.walk import rwcre_sample

MAPS = [CoolingMap.polynomial(1.5), CoolingMap.polynomial(0.7), CoolingMap.exponential(0.4),
        CoolingMap.explicit([3, 1, 4, 1, 5]), CoolingMap.constant(7)]
# Positive speed with s > 2: Gaussian-scale fluctuations of the static walk.
FAST = validate_alpha([(0.8, 0.5), (0.45, 0.5)], 0.2)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(MAPS), st.integers(1, 10**6))
def test_weights_sum_to_one(cmap, n):
    w = cooling_weights(cmap, n)
    assert sum(g for _, g in w) == Fraction(1)


def test_weights_vanish_for_fixed_k():
    cmap = CoolingMap.polynomial(1.5)
    grid = [10**3, 10**4, 10**5, 10**6]
    for k in (1, 2, 5):
        gammas = [dict(cooling_weights(cmap, n)).get(k, 0) for n in grid]
        assert all(b < a for a, b in zip(gammas, gammas[1:]))
        assert gammas[-1] < 1e-3


def test_cooling_sum_requires_positive_n():
    with pytest.raises(ValueError):
        cooling_weights(MAPS[0], 0)


@pytest.mark.parametrize("cmap", MAPS)
def test_deterministic_constant(cmap):
    p = DeterministicProvider(0.3, 0.3)
    for n in (1, 2, 17, 1000, 12345):
        assert cooling_sum(p, cmap, n, 0) == pytest.approx(0.3, abs=1e-15)
        row = rbd_decompose(p, cmap, n, 0.3, 0)
        assert row.R == 0.0 and row.B == 0.0
        assert abs(row.deviation) < 1e-15


def test_deterministic_report_zero():
    rep = convergence_report(DeterministicProvider(0.25, 0.25), MAPS[0], [10, 100, 1000], [1, 2])
    assert all(abs(r.deviation) < 1e-15 for r in rep.rows)


def toeplitz_direct(cmap, n, L):
    total = Fraction(0)
    for k, g in cooling_weights(cmap, n):
        if g:
            total += g * Fraction(1, k)
    return float(total)


@pytest.mark.parametrize("cmap", [CoolingMap.polynomial(1.5), CoolingMap.exponential(0.4)])
def test_toeplitz_rows(cmap):
    L = 0.5
    p = DeterministicProvider(lambda k: L + 1 / k, L)
    grid = [10, 100, 1000, 10**4, 10**5]
    Ds = []
    for n in grid:
        row = rbd_decompose(p, cmap, n, L, 0)
        assert row.R == 0.0 and row.B == 0.0
        assert row.D == pytest.approx(toeplitz_direct(cmap, n, L), abs=1e-12)
        Ds.append(row.D)
    assert all(b < a for a, b in zip(Ds, Ds[1:]))
    # exponential maps decay only like 1/ell(n) ~ 1/log n
    assert Ds[-1] < 0.25 * Ds[0]


@pytest.mark.parametrize("provider", [
    IIDSumProvider(-1.0, 2.0),
    DisplacementProvider(FAST),
    LogMGFProvider(FAST, -0.5, limit=-0.2),
])
def test_rbd_identity_exact_means(provider):
    for cmap in MAPS[:3]:
        for n in (1, 5, 64, 777):
            for seed in (0, 9):
                row = rbd_decompose(provider, cmap, n, provider.limit, seed)
                assert abs(row.total - provider.limit - (row.R + row.B + row.D)) < 1e-12


def test_rbd_identity_estimated_means():
    class Noisy(IIDSumProvider):
        exact_means = False
        replicas = 8

    p = Noisy(0.0, 1.0)
    row = rbd_decompose(p, MAPS[0], 300, p.limit, 4)
    assert abs(row.total - p.limit - (row.R + row.B + row.D)) < 1e-12


def test_means_unavailable():
    class Bare(ArrayProvider):
        limit = 0.0
        exact_means = False

        def value(self, k, n, seed):
            return 0.0

    with pytest.raises(MeansUnavailable):
        rbd_decompose(Bare(), MAPS[0], 10, 0.0, 0)
    with pytest.raises(MeansUnavailable):
        ArrayProvider().mean(1, 1, 0)


@pytest.mark.parametrize("cmap", [CoolingMap.polynomial(1.5), CoolingMap.constant(3)])
def test_displacement_sum_equals_walk(cmap):
    p = DisplacementProvider(FAST)
    for seed in (1, 2, 3):
        for n in (1, 50, 999):
            assert cooling_sum(p, cmap, n, seed) == rwcre_sample(FAST, cmap, n, seed).endpoint / n


def test_increment_bound_spot_check(rng):
    for p in (IIDSumProvider(-1.0, 2.0), DisplacementProvider(FAST), LogMGFProvider(FAST, 0.7)):
        for _ in range(10):
            k, n, seed = int(rng.integers(1, 50)), int(rng.integers(1, 200)), int(rng.integers(2**32))
            assert abs(p.value(k, n + 1, seed) - p.value(k, n, seed)) <= p.increment_bound + 1e-12


def test_rows_independent_seeds():
    p = IIDSumProvider(0.0, 1.0)
    a = [p.value(k, 200, 5) for k in range(1, 6)]
    assert len(set(a)) > 1


def test_iid_sum_converges():
    p = IIDSumProvider(0.0, 1.0)
    n = 10**5
    vals = [cooling_sum(p, CoolingMap.polynomial(1.5), n, derive_seed(3, CELL_TAG, s)) for s in range(100)]
    se = 0.5 / math.sqrt(n) / math.sqrt(len(vals))
    assert abs(statistics.fmean(vals) - 0.5) < 4 * se


def test_iid_rb_shrink():
    p = IIDSumProvider(-1.0, 1.0)
    grid = [100, 1000, 10**4, 10**5]
    seeds = [derive_seed(1, CELL_TAG, s) for s in range(20)]
    rep = convergence_report(p, CoolingMap.polynomial(1.5), grid, seeds)
    for attr in ("R", "B"):
        med = [statistics.median(abs(getattr(r, attr)) for r in rep.rows if r.n == n) for n in grid]
        assert count_inversions(med) <= 1
        assert med[-1] < med[0]
    assert rep.means == "exact"


def test_displacement_report_band():
    seeds = [derive_seed(0, CELL_TAG, s) for s in range(20)]
    rep = convergence_report(DisplacementProvider(FAST), CoolingMap.polynomial(1.5), [1000, 10000, 100000],
                             seeds, with_rbd=False)
    final = [abs(r.deviation) for r in rep.rows if r.n == 100000]
    assert sum(d < 0.02 for d in final) >= 18
    assert rep.inversions <= 1 and rep.decay_exponent > 0


def test_constant_map_flagged():
    rep = convergence_report(IIDSumProvider(0.0, 1.0), CoolingMap.constant(5), [100, 1000], [1, 2, 3],
                             with_rbd=False)
    assert rep.no_cooling and rep.means == "none"


def test_report_csv(tmp_path):
    rep = convergence_report(DeterministicProvider(0.1, 0.1), MAPS[0], [5, 50], [1])
    path = tmp_path / "cet.csv"
    rep.to_csv(path, header={"seed": 1})
    lines = path.read_text().splitlines()
    assert "n,seed,total,R,B,D,deviation" in lines
    assert sum(not l.startswith("#") for l in lines) == 3


def test_report_rejects_bad_grid():
    with pytest.raises(ValueError):
        convergence_report(DeterministicProvider(0.1, 0.1), MAPS[0], [50, 5], [1])


def test_count_inversions():
    assert count_inversions([3, 2, 2, 1]) == 0
    assert count_inversions([3, 4, 2, 5]) == 2
