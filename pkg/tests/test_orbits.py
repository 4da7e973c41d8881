import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import Polynomial
from scipy.optimize import brentq

from lambdamev.distributions import TruncatedNormal, Uniform
from lambdamev.dynamics import MarketInstance, iterate_kernel, step
from lambdamev.errors import PreconditionError, SearchExhausted
from lambdamev.orbits import (
    ChaosWitness,
    bifurcation_scan,
    chaos_witness,
    eta_axis,
    find_periodic_points,
    iterate_k,
    piecewise_update,
    range_axis,
    sharkovsky_implied,
    sharkovsky_implies,
    sharkovsky_key,
    turning_points,
)

U = MarketInstance(Uniform(0, 1), Uniform(0, 1), 1.0)
NORMAL = MarketInstance(TruncatedNormal(0.4, 0.01), TruncatedNormal(0.5, 0.01), 1.6)


def _cubic(eta):
    # the Full map for U never clamps for these eta: x + eta x (1-x)(1-2x)
    x = Polynomial([0, 1])
    return x + eta * x * (1 - x) * (1 - 2 * x)


def _poly_periodic(eta, k):
    h = _cubic(eta)
    p = Polynomial([0, 1])
    for _ in range(k):
        p = h(p)
    roots = (p - Polynomial([0, 1])).roots()
    real = roots[np.abs(roots.imag) < 1e-7].real
    return np.sort(real[(real > 1e-6) & (real < 1 - 1e-6)])


@pytest.mark.parametrize("eta,k", [(3.0, 1), (4.5, 2), (5.0, 2), (7.0, 2)])
def test_periodic_points_match_polynomial_roots(eta, k):
    rep = find_periodic_points(U, "h", eta, k, tol=1e-10)
    oracle = _poly_periodic(eta, k)
    # merge polynomial roots that are numerically the same
    merged = [oracle[0]] if len(oracle) else []
    for r in oracle[1:]:
        if r - merged[-1] > 1e-7:
            merged.append(r)
    assert len(rep.fixed_points) == len(merged)
    np.testing.assert_allclose(rep.fixed_points, merged, atol=1e-7)


def _grid_periodic(inst, eta, k, n=10**6):
    xs = np.linspace(1e-6, 1 - 1e-6, n)
    g = lambda x: iterate_k(inst, "h", eta, k, x) - x  # noqa: E731
    gs = iterate_kernel(*inst.kernel_args, 0, eta, 1.0, k, xs) - xs
    idx = np.flatnonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) < 0)
    return np.array([brentq(g, xs[i], xs[i + 1], xtol=1e-15) for i in idx])


@pytest.mark.parametrize("eta,k", [(7.0, 3), (7.5, 4), (6.0, 5)])
def test_periodic_points_match_dense_grid(eta, k):
    rep = find_periodic_points(U, "h", eta, k, tol=1e-10)
    oracle = _grid_periodic(U, eta, k)
    assert len(rep.fixed_points) >= len(oracle)
    for r in oracle:
        assert np.min(np.abs(np.array(rep.fixed_points) - r)) < 1e-8


def test_report_invariants():
    rep = find_periodic_points(U, "h", 5.5, 6, tol=1e-10)
    for x in rep.fixed_points:
        assert 6 % rep.least_periods[x] == 0
        assert abs(iterate_k(U, "h", 5.5, 6, x) - x) <= 10 * rep.tol
        assert rep.stability[x] in ("stable", "unstable", "marginal")
    assert rep.has_least_period(1)
    assert rep.periods_found == sorted(set(rep.least_periods.values()))
    rows = list(rep.rows())
    assert len(rows) == len(rep.fixed_points)


def test_fixed_point_stability():
    # h'(1/2) = 1 - eta/2 for the uniform cubic
    rep = find_periodic_points(U, "h", 1.0, 1)
    assert rep.fixed_points == pytest.approx([0.5])
    assert rep.stability[rep.fixed_points[0]] == "stable"
    assert rep.multipliers[rep.fixed_points[0]] == pytest.approx(0.5)
    rep = find_periodic_points(U, "h", 5.0, 1)
    assert rep.stability[rep.fixed_points[0]] == "unstable"


def test_period_two_cycle_closes():
    rep = find_periodic_points(U, "h", 5.0, 2)
    two = rep.with_least_period(2)
    assert len(two) == 2
    a, b = two
    assert step(U, "h", a, 5.0) == pytest.approx(b, abs=1e-9)
    assert step(U, "h", b, 5.0) == pytest.approx(a, abs=1e-9)


def test_periodic_preconditions():
    with pytest.raises(PreconditionError):
        find_periodic_points(U, "h", 1.0, 0)
    with pytest.raises(PreconditionError):
        find_periodic_points(U, "h", 1.0, 1, grid_n=10)


def test_turning_points_uniform_cubic():
    # critical points of x + eta x (1-x)(1-2x): 6 eta x^2 - 6 eta x + eta + 1 = 0
    eta = 5.0
    disc = np.sqrt(36 * eta**2 - 24 * eta * (eta + 1))
    expected = sorted([(6 * eta - disc) / (12 * eta), (6 * eta + disc) / (12 * eta)])
    np.testing.assert_allclose(turning_points(U, "h", eta), expected, atol=1e-9)


# --- Sharkovsky ---------------------------------------------------------------

ORDER = [3, 5, 7, 9, 6, 10, 14, 12, 20, 24, 16, 8, 4, 2, 1]


def test_sharkovsky_order_sample():
    keys = [sharkovsky_key(n) for n in ORDER]
    assert keys == sorted(keys)


@given(st.integers(1, 4096), st.integers(1, 4096))
def test_sharkovsky_total_order(m, l):
    if m == l:
        assert not sharkovsky_implies(m, l)
    else:
        assert sharkovsky_implies(m, l) != sharkovsky_implies(l, m)


@given(st.integers(1, 2000), st.integers(1, 2000), st.integers(1, 2000))
def test_sharkovsky_transitive(a, b, c):
    if sharkovsky_implies(a, b) and sharkovsky_implies(b, c):
        assert sharkovsky_implies(a, c)


def test_three_forces_everything():
    forced = sharkovsky_implied(3)
    assert all(forced(n) for n in range(1, 200) if n != 3)
    assert not sharkovsky_implied(1)(2)
    assert sharkovsky_implied(2)(1)
    with pytest.raises(ValueError):
        sharkovsky_key(0)


# --- chaos witness ------------------------------------------------------------


def test_piecewise_update_matches_step():
    a, b, eta, w = 0.1, 0.35, 2.0, 1.3
    inst = MarketInstance(Uniform(a, b), Uniform(a, b), w)
    for lam in np.linspace(0, 1, 201):
        assert piecewise_update(lam, a, b, eta, w) == pytest.approx(
            step(inst, "h", lam, eta), abs=1e-14)


@pytest.mark.parametrize("eta", [0.1, 1.0, 5.0])
def test_chaos_witness_certified(eta):
    wit = chaos_witness(eta, 1.0)
    assert isinstance(wit, ChaosWitness)
    assert wit.lambda3 <= wit.lambda0 < wit.lambda1 < wit.lambda2
    assert all(wit.recheck().values())
    rec = wit.record()
    assert rec["construction"] in ("proof", "edge")


def test_chaos_witness_exhaustion():
    with pytest.raises(SearchExhausted) as info:
        chaos_witness(0.1, 1.0, search_steps=1)
    assert isinstance(info.value.state, dict)


def test_chaos_witness_preconditions():
    with pytest.raises(PreconditionError):
        chaos_witness(0.0, 1.0)


# --- scans --------------------------------------------------------------------


def test_bifurcation_scan_shape():
    tab = bifurcation_scan(eta_axis(NORMAL), np.linspace(0.1, 2.0, 5), burn_in=50, n_record=30)
    assert tab.lambdas.shape == (5, 30)
    assert tab.band_width.shape == (5,)
    rows = list(tab.rows())
    assert len(rows) == 150
    assert rows[0][1] == 51


def test_bifurcation_scan_converges_at_small_eta():
    tab = bifurcation_scan(eta_axis(NORMAL), [0.3, 0.5])
    assert np.all(tab.band_width < 1e-4)
    np.testing.assert_allclose(tab.lambdas[:, -1], NORMAL.lambda_star, atol=1e-9)


def test_range_axis():
    inst, eta = range_axis(1.5)(0.2)
    assert inst.users == Uniform(0.3, 0.7)
    assert inst.miners.lo == pytest.approx(0.2)
    assert eta == 1.5


def test_scan_needs_two_points():
    with pytest.raises(PreconditionError):
        bifurcation_scan(eta_axis(NORMAL), [0.5])
