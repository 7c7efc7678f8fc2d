import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coolwalk.env import AlphaDistribution, rho_moments, sample_environment, speed, validate_alpha
from coolwalk.errors import EmptyFinitePart, ValidationError
from coolwalk.ratefn import (
    CFState,
    GridFunction,
    _sweep_scalar,
    clustered_grid,
    empirical_block_rate,
    hitting_cf_step,
    hitting_logmgf_batch,
    hitting_logmgf_rate,
    homogeneous_fixed_point,
    jstar_curve,
    jtilde,
    legendre,
    rate_chain,
    rate_I_from_J,
)
from coolwalk.walk import Censored, evolve_pmf, sample_hitting

FAIR = AlphaDistribution.homogeneous(0.5)


def fair_closed_form(lam):
    e = math.exp(lam)
    return math.log((1 - math.sqrt(1 - e * e)) / e)


def lower_hull(x, y):
    """Monotone-chain lower convex hull evaluated back on ``x``."""
    hull = []
    for p in zip(x, y):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    hx, hy = zip(*hull)
    return np.interp(x, hx, hy)


def cramer_fair(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > -1, (1 + x) / 2 * np.log1p(x), 0.0)
        b = np.where(x < 1, (1 - x) / 2 * np.log1p(-x), 0.0)
    return a + b


def test_cf_step_zero_lambda():
    for p in (0.5, 0.6, 0.9):
        assert hitting_cf_step(CFState(1.0), p, 0.0).phi == pytest.approx(1.0, abs=1e-15)


def test_cf_step_fair_fixed_point():
    phi = homogeneous_fixed_point(0.5, -0.1)
    assert phi == pytest.approx(0.634637, abs=1e-6)
    nxt = hitting_cf_step(CFState(phi), 0.5, -0.1)
    assert nxt.phi == pytest.approx(phi, abs=1e-14) and not nxt.diverged


def test_cf_step_diverges():
    assert math.isinf(homogeneous_fixed_point(0.5, 0.1))
    state = CFState(1.0)
    for _ in range(100):
        state = hitting_cf_step(state, 0.5, 0.1)
        if state.diverged:
            break
    assert state.diverged
    with pytest.raises(ValueError):
        hitting_cf_step(state, 0.5, 0.1)


def test_cf_matches_absorbed_walk(ref_dist):
    # validates the recursion itself against a brute-force first-passage law
    warmup, n, lam, horizon = 15, 8, -0.05, 1500
    omega = sample_environment(ref_dist, -warmup, warmup + n, 99).values
    sites = np.arange(-warmup - horizon, n + 1)
    w = np.full(len(sites), omega[0])
    w[horizon:horizon + warmup + n] = omega
    p = np.zeros(len(sites))
    p[horizon + warmup] = 1.0
    target = len(sites) - 1
    mgf = 0.0
    for t in range(1, horizon + 1):
        q = np.zeros_like(p)
        q[1:] += p[:-1] * w[:-1]
        q[:-1] += p[1:] * (1 - w[1:])
        mgf += q[target] * math.exp(lam * t)
        q[target] = 0.0
        p = q
    direct = math.log(mgf)
    assert _sweep_scalar(omega.tolist(), lam, warmup) == pytest.approx(direct, abs=1e-10)


def test_fair_rate_closed_form():
    val = hitting_logmgf_rate(FAIR, 10**4, -0.1)
    assert abs(val - fair_closed_form(-0.1)) < 1e-6
    assert math.isinf(hitting_logmgf_rate(FAIR, 10**4, 0.1))
    assert hitting_logmgf_rate(FAIR, 10**4, 0.0) == 0.0


def test_warmup_doubling(ref_dist):
    for lam in (-1.0, -0.3, 0.05):
        a = hitting_logmgf_rate(ref_dist, 10**4, lam, warmup=1000, seed=3)
        b = hitting_logmgf_rate(ref_dist, 10**4, lam, warmup=2000, seed=3)
        if math.isfinite(a):
            assert abs(a - b) < 1e-9
    a = hitting_logmgf_rate(FAIR, 10**4, -0.1, warmup=1000)
    b = hitting_logmgf_rate(FAIR, 10**4, -0.1, warmup=2000)
    assert abs(a - b) < 1e-9


def test_lambda_zero_exact(ref_dist):
    assert hitting_logmgf_rate(ref_dist, 500, 0.0, seed=1) == 0.0
    assert np.all(hitting_logmgf_batch(ref_dist, 500, 0.0, [1, 2, 3]) == 0.0)


def test_batch_matches_scalar(ref_dist):
    seeds = [11, 12, 13]
    batch = hitting_logmgf_batch(ref_dist, 3000, -0.4, seeds, warmup=500)
    for s, b in zip(seeds, batch):
        assert b == pytest.approx(hitting_logmgf_rate(ref_dist, 3000, -0.4, 500, s), rel=1e-12)


def test_self_averaging(ref_dist):
    a, b = hitting_logmgf_batch(ref_dist, 10**6, -0.5, [1, 2])
    assert abs(a - b) < 1e-3


def test_monte_carlo_hitting(ref_dist):
    m, lam, seed = 40, -0.1, 21
    rate = hitting_logmgf_rate(ref_dist, m, lam, warmup=2000, seed=seed)
    env = sample_environment(ref_dist, 0, m, seed)
    cap = 50000
    vals = []
    for s in range(3000):
        h = sample_hitting(env, m, s, cap)
        vals.append(0.0 if isinstance(h, Censored) else math.exp(lam * h))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - math.exp(m * rate)) < 4 * se + math.exp(lam * cap)


def test_jstar_curve_reference(ref_dist):
    lams = clustered_grid(-3, 3, 201)
    js = jstar_curve(ref_dist, lams, 20000, 5)
    assert js(0.0) == 0.0
    fx, fy = js.finite_part()
    assert np.all(np.diff(fy) >= -1e-12)
    assert js.convex and js.is_convex()
    lo, hi = js.meta["lambda_c"]
    assert lo < hi and hi > 0 and math.isinf(js(hi))


def test_jstar_rejects_unsorted(ref_dist):
    with pytest.raises(ValidationError):
        jstar_curve(ref_dist, [0.0, -1.0], 100, 0)


def test_legendre_quadratic():
    xs = np.linspace(-3, 3, 601)
    h = xs[1] - xs[0]
    g = legendre(GridFunction(xs, xs**2 / 2), xs)
    assert g.convex
    assert np.max(np.abs(g.ys - xs**2 / 2)) <= h * h


def test_legendre_abs():
    xs = np.linspace(-3, 3, 601)
    g = legendre(GridFunction(xs, np.abs(xs)), xs)
    inner = np.abs(xs) <= 1
    assert np.all(np.abs(g.ys[inner]) < 1e-12)
    assert np.all(np.diff(g.ys[xs >= 1]) > 0)


def test_legendre_empty():
    with pytest.raises(EmptyFinitePart):
        legendre(GridFunction([0.0, 1.0], [np.inf, np.inf]), [0.0])


def test_legendre_skips_infinite_points():
    xs = np.linspace(-1, 1, 5)
    f = GridFunction(xs, [np.inf, 0.5, 0.0, 0.5, np.inf])
    g = legendre(f, [2.0])
    assert g.ys[0] == pytest.approx(2.0 * 0.5 - 0.5)


def biconjugate_error(rng):
    xs = np.linspace(-1, 1, 81)
    h = xs[1] - xs[0]
    ys = rng.normal(size=len(xs)).cumsum() * h + rng.uniform(0, 1, len(xs))
    slope = np.max(np.abs(np.diff(ys))) / h
    lams = np.linspace(-slope - 1, slope + 1, 4001)
    f = GridFunction(xs, ys)
    bi = legendre(legendre(f, lams), xs)
    hull = lower_hull(xs, ys)
    return np.max(np.abs(bi.ys[1:-1] - hull[1:-1])), h


def test_biconjugate_is_hull(rng):
    for _ in range(20):
        err, h = biconjugate_error(rng)
        assert err <= 2 * h


def test_jtilde():
    xs = np.linspace(1, 3, 5)
    J = GridFunction(xs, xs - 1)
    assert np.array_equal(jtilde(J, 0.0).ys, J.ys)
    mlr = rho_moments(validate_alpha([(0.8, 0.7), (0.3, 0.3)], 0.2)).mean_log_rho
    shifted = jtilde(J, mlr)
    assert shifted.ys - J.ys == pytest.approx(np.full(5, 0.716216), abs=1e-6)
    assert np.all(shifted.ys >= J.ys)


def test_rate_I_endpoints():
    xs = np.linspace(1, 10, 91)
    J = GridFunction(xs, (xs - 2) ** 2)
    # 1/0.1 overshoots 10 by an ulp; the lookup must still land on the grid
    I = rate_I_from_J(J, -0.3, np.linspace(-1, 1, 21))
    assert I(0.0) == 0.0
    assert I(1.0) == pytest.approx(J(1.0))
    assert I(-1.0) == pytest.approx(J(1.0) + 0.3)


@pytest.fixture(scope="module")
def fair_chain():
    return rate_chain(FAIR, 10**5, 0)


def test_fair_chain_I(fair_chain):
    x = np.linspace(-0.9, 0.9, 181)
    assert np.max(np.abs(fair_chain.I(x) - cramer_fair(x))) < 1e-3


def test_fair_chain_istar(fair_chain):
    lam = np.linspace(-2, 2, 161)
    assert np.max(np.abs(fair_chain.istar(lam) - np.log(np.cosh(lam)))) < 1e-3
    assert fair_chain.istar(0.0) == pytest.approx(0.0, abs=1e-12)


def test_chain_biconjugate_consistency(ref_dist):
    chain = rate_chain(ref_dist, 20000, 1)
    for g in (chain.jstar, chain.J, chain.I, chain.istar):
        assert g.is_convex()
    back = legendre(chain.istar, chain.I.xs)
    hull = lower_hull(chain.I.xs, chain.I.ys)
    h = chain.I.xs[1] - chain.I.xs[0]
    assert np.max(np.abs(back.ys - hull)[1:-1]) <= 2 * h


def test_reference_flat_piece(ref_dist):
    chain = rate_chain(ref_dist, 20000, 1)
    v = speed(ref_dist)
    x = chain.I.xs
    flat = (x >= 0) & (x <= v)
    # flat piece: I vanishes on [0, v] up to the finite-sample speed error
    assert np.max(np.abs(chain.I.ys[flat])) < 5e-3
    assert chain.I(0.5) > 0.01 and chain.I(-0.5) > chain.I(0.5)
    assert chain.istar(0.0) == pytest.approx(0.0, abs=1e-12)


def test_grid_function_validation(tmp_path):
    with pytest.raises(ValidationError):
        GridFunction([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValidationError):
        GridFunction([0.0, 1.0, 2.0], [1.0, np.inf, 2.0])
    g = GridFunction([0.0, 1.0, 2.0], [1.0, 0.5, np.inf], meta={"n": 3})
    path = tmp_path / "g.csv"
    g.to_csv(path)
    back = GridFunction.from_csv(path)
    assert np.array_equal(back.xs, g.xs) and np.array_equal(back.ys, g.ys)
    assert back.meta["n"] == "3"
    assert math.isinf(g(5.0)) and g(0.5) == 0.75


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=30))
def test_legendre_output_convex(vals):
    xs = np.linspace(-1, 1, len(vals))
    g = legendre(GridFunction(xs, vals), np.linspace(-10, 10, 101))
    assert g.is_convex()


def test_block_rate_masses(ref_dist):
    n, N = 12, 4
    env = sample_environment(ref_dist, -n, 2 * n + 1, 2)
    pmf = evolve_pmf(env, n)
    blocks = empirical_block_rate(pmf, n, N)
    assert math.fsum(b.mass for b, _ in blocks) == pytest.approx(1.0, abs=1e-14)
    for b, rate in blocks:
        direct = sum(pmf.mass(x) for x in range(-n, n + 1)
                     if (b.lo < x / n <= b.hi) or (b.closed_left and x / n == b.lo))
        assert b.mass == pytest.approx(direct, abs=1e-15)
        assert rate == (math.inf if b.mass == 0 else pytest.approx(-math.log(b.mass) / n))


def test_block_rate_merged_flat_piece(ref_dist):
    n, N = 12, 10
    pmf = evolve_pmf(sample_environment(ref_dist, -n, 2 * n + 1, 2), n)
    blocks = empirical_block_rate(pmf, n, N, v=0.25)
    assert len(blocks) == 2 * N - 2
    merged = [b for b, _ in blocks if b.lo == 0.0][0]
    assert merged.hi == pytest.approx(0.3)
    assert math.fsum(b.mass for b, _ in blocks) == pytest.approx(1.0, abs=1e-14)


def test_block_rate_concentrates():
    d = AlphaDistribution.homogeneous(0.75)
    rates = []
    for n in (100, 400, 1600):
        pmf = evolve_pmf(sample_environment(d, -n, 2 * n + 1, 0), n)
        blocks = empirical_block_rate(pmf, n, 8)
        rates.append([r for b, r in blocks if b.lo < 0.5 <= b.hi][0])
    assert rates[0] > rates[1] > rates[2]
    assert rates[-1] < 1e-3
