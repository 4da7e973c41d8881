"""Acceptance checks, one test per criterion. Each test records a PASS/FAIL
line that is printed in the terminal summary and to stdout."""

import os
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import VERDICTS
from lambdamev.analysis import (
    attracting_range,
    convergence_threshold,
    deviation_bound,
    liveness_threshold,
)
from lambdamev.cli import main
from lambdamev.distributions import Beta, TruncatedNormal, Uniform, beta_kernel, beta_kernel_max
from lambdamev.dynamics import (
    BurnPolicy,
    MarketInstance,
    delta,
    lambda_star,
    simulate,
    simulate_many,
    step,
)
from lambdamev.errors import PreconditionError
from lambdamev.orbits import (
    bifurcation_scan,
    chaos_witness,
    eta_axis,
    find_periodic_points,
    piecewise_update,
    range_axis,
    sharkovsky_implied,
)
from lambdamev.scenarios import (
    RegimeConfig,
    StressConfig,
    default_regimes,
    regime_tail_check,
    run_regime,
    run_stress,
)
from pool import beta_pool, instance_pool

NORMAL = MarketInstance(TruncatedNormal(0.4, 0.01), TruncatedNormal(0.5, 0.01), 1.6)


def record(num, ok, detail):
    verdict = "PASS" if ok else "FAIL"
    VERDICTS[num] = (verdict, detail)
    print(f"criterion {num}: {verdict}  {detail}")
    return ok


@pytest.fixture(scope="module")
def pool():
    return instance_pool()


# 1 -----------------------------------------------------------------------------


def test_c01_uniform_fixed_points():
    u1 = MarketInstance(Uniform(0, 1), Uniform(0, 1), 1.0)
    u3 = MarketInstance(Uniform(0, 1), Uniform(0, 1), 3.0)
    lambda_star(u1)  # compile outside the timed region
    times, errs = [], []
    for inst, exact in ((u1, 0.5), (u3, 0.25)):
        t0 = time.perf_counter()
        val = lambda_star(inst)
        times.append(time.perf_counter() - t0)
        errs.append(abs(val - exact))
    ok = max(errs) <= 1e-12 and max(times) < 1e-3
    assert record(1, ok, f"errors={errs}, max runtime={max(times) * 1e3:.3f} ms")


# 2 -----------------------------------------------------------------------------


def test_c02_liveness(pool):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    hits = 0
    for inst in pool:
        eta = 0.99 * liveness_threshold(inst)
        starts = rng.uniform(0.0, 1.0, 100)
        starts = starts[(starts > 0) & (starts < 1)]
        orbits = simulate_many(inst, "h", starts, eta, 10**4)
        hits += int(np.sum((orbits <= 0.0) | (orbits >= 1.0)))
    elapsed = time.perf_counter() - t0
    ok = hits == 0 and elapsed < 30
    assert record(2, ok, f"boundary hits={hits}, runtime={elapsed:.1f} s")


# 3 -----------------------------------------------------------------------------

# lambda_t counts as lambda* within this distance: converged orbits settle on
# a two-point cycle a few ulps wide around the floating-point root.
AT_STAR = 1e-12


@pytest.mark.xfail(strict=True, reason="convergence bound can exceed the liveness bound; "
                                       "orbits then get absorbed at 1 (see README)")
def test_c03_convergence(pool):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    bad_final, bad_potential, failing = 0, 0, []
    for i, inst in enumerate(pool):
        ls = inst.lambda_star
        eta = 0.99 * convergence_threshold(inst)
        starts = rng.uniform(0.0, 1.0, 10)
        starts = starts[(starts > 0) & (starts < 1)]
        orbits = simulate_many(inst, "h", starts, eta, 10**5)
        err = np.abs(orbits[:, -1] - ls)
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.log1p((orbits - ls) / ls) ** 2
        away = np.abs(orbits[:, :-1] - ls) > AT_STAR
        # nan (log of 0) or a non-decrease both count against the potential
        decreasing = phi[:, 1:] < phi[:, :-1]
        nb = int(np.sum(away & ~decreasing))
        nf = int(np.sum(err > 1e-6))
        bad_final += nf
        bad_potential += nb
        if nf or nb:
            failing.append(i)
    elapsed = time.perf_counter() - t0
    ok = bad_final == 0 and bad_potential == 0 and elapsed < 60
    assert record(3, ok, f"orbits off lambda*={bad_final}, potential non-decreases={bad_potential}, "
                         f"failing instances={failing}, runtime={elapsed:.1f} s")


# 4 -----------------------------------------------------------------------------


def test_c04_attracting_band(pool):
    rng = np.random.default_rng(4)
    violations, entered = 0, 0
    for _ in range(10**4):
        inst = pool[rng.integers(len(pool))]
        eta = rng.uniform(0.0, 5.0)
        if eta == 0.0:
            continue
        lo, hi = attracting_range(inst, eta)
        tr = simulate(inst, "h", rng.uniform(0.0, 1.0), eta, T=2000)
        inside = (tr.lambdas >= lo) & (tr.lambdas <= hi)
        first = np.flatnonzero(inside)
        if first.size == 0 or first[0] + 1000 > tr.T:
            continue
        entered += 1
        violations += int(np.sum(~inside[first[0]:first[0] + 1001]))
    ok = violations == 0 and entered > 9000
    assert record(4, ok, f"triples entering the band={entered}, exits={violations}")


# 5 -----------------------------------------------------------------------------


def _grid_kernel_max(a, b, p, q):
    return beta_kernel(a, b, np.linspace(p, q, 10**6)).max()


def test_c05_bounded_deviations():
    rng = np.random.default_rng(5)
    violations, points, worst_rel = 0, 0, 0.0
    for inst in beta_pool():
        ls = inst.lambda_star
        eta_max = min(4 * ls / inst.w, 4 * (1 - ls))
        eta = rng.uniform(0.05, 0.99) * eta_max
        p, q = ls - inst.w * eta / 4, ls + eta / 4
        bound = deviation_bound(inst, eta)
        tr = simulate(inst, "h", rng.uniform(p, q), eta, T=10**5)
        inside = (tr.lambdas > p) & (tr.lambdas < q)
        points += int(inside.sum())
        violations += int(np.sum(np.abs(tr.deltas[inside]) > bound))
        for dist in (inst.users, inst.miners):
            exact = beta_kernel_max(dist.a, dist.b, p, q).value
            grid = _grid_kernel_max(dist.a, dist.b, p, q)
            worst_rel = max(worst_rel, abs(exact - grid) / grid)
    ok = violations == 0 and worst_rel <= 1e-9
    assert record(5, ok, f"points checked={points}, violations={violations}, "
                         f"kernel max rel. error={worst_rel:.2e}")


# 6 -----------------------------------------------------------------------------


def test_c06_chaos_witness():
    t0 = time.perf_counter()
    problems = []
    for eta in (0.1, 0.5, 1.0, 2.0, 5.0):
        wit = chaos_witness(eta, 1.0)
        h = lambda x: piecewise_update(x, wit.a, wit.b, eta, 1.0)  # noqa: E731
        l1, l2, l3 = h(wit.lambda0), h(wit.lambda1), h(wit.lambda2)
        if not (abs(l1 - wit.lambda1) <= 1e-10 and abs(l2 - wit.lambda2) <= 1e-10
                and abs(l3 - wit.lambda3) <= 1e-10):
            problems.append(f"eta={eta}: re-evaluation mismatch")
        if not (l3 <= wit.lambda0 < l1 < l2):
            problems.append(f"eta={eta}: ordering fails")
        inst = wit.instance()
        forced = sharkovsky_implied(3)
        for k in range(1, 17):
            if k != 3 and not forced(k):
                problems.append(f"period {k} not forced by 3")
            rep = find_periodic_points(inst, "h", eta, k, tol=1e-8)
            if not rep.has_least_period(k):
                problems.append(f"eta={eta}: least period {k} not found")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 120
    assert record(6, ok, f"problems={problems or 'none'}, runtime={elapsed:.1f} s")


# 7 -----------------------------------------------------------------------------


@pytest.mark.xfail(strict=True, reason="at eta=0.6 the instance converges to its fixed point; "
                                       "periods 5 and 7 appear only near eta=1.45 (see README)")
def test_c07_periodic_window():
    found = {}
    for k in (3, 5, 7):
        rep = find_periodic_points(NORMAL, "h", 0.6, k, grid_n=max(10**5, 200 * k))
        found[k] = rep.with_least_period(k)
    ok = bool(found[5]) and bool(found[7]) and not found[3]
    assert record(7, ok, "least-period points: " +
                  ", ".join(f"k={k}: {len(v)}" for k, v in found.items()))


# 8 -----------------------------------------------------------------------------


def _label(row):
    if np.all(row == 0.0) or np.all(row == 1.0):
        return "A"
    width = row.max() - row.min()
    if width < 1e-4:
        return "C"
    if width > 1e-3 and np.all((row > 0) & (row < 1)):
        return "B"
    return "?"


def test_c08_bifurcation_regimes():
    etas = np.linspace(0.05, 3.0, 400)
    tab = bifurcation_scan(eta_axis(NORMAL), etas, burn_in=200, n_record=200)
    labels = "".join(_label(row) for row in tab.lambdas)
    core = labels.replace("?", "")
    # C...C B...B A...A with each block non-empty
    runs = [c for i, c in enumerate(core) if i == 0 or core[i - 1] != c]
    ok = runs == ["C", "B", "A"]
    firsts = {c: float(etas[labels.index(c)]) for c in "CBA" if c in labels}
    assert record(8, ok, f"regime sequence={''.join(runs)}, first eta per regime={firsts}, "
                         f"unclassified={labels.count('?')}")


# 9 -----------------------------------------------------------------------------


def test_c09_range_scan():
    rs = np.linspace(0.05, 0.4, 71)
    tab = bifurcation_scan(range_axis(1.5, 1.0), rs, burn_in=200, n_record=200)
    width = tab.band_width
    rises = [i for i in range(len(rs) - 1) if width[i + 1] > 1.05 * width[i]]
    ok = not rises and width[-1] < 1e-4
    assert record(9, ok, f"eta=1.5, r in [0.05, 0.4]: widths {width[0]:.3g} -> {width[-1]:.3g}, "
                         f"rises beyond 5% at {[float(rs[i]) for i in rises]}")


# 10 ----------------------------------------------------------------------------


def test_c10_regime_scenario():
    r1, r2 = default_regimes()
    cfg = RegimeConfig(r1, r2, theta=0.408, T=5000)
    results = []
    for lam0 in (0.1, 0.3, 0.5, 0.7, 0.9):
        ok, which = regime_tail_check(run_regime(cfg, lam0), cfg, tail=1000)
        results.append((lam0, ok, which))
    ok = all(r[1] for r in results)
    assert record(10, ok, f"(lambda0, settled, regime)={results}")


# 11 ----------------------------------------------------------------------------


def test_c11_stress():
    rng = np.random.default_rng(11)
    outside, violations = 0, 0
    for seed in range(50):
        res = run_stress(StressConfig(seed=seed), rng.uniform(0.05, 0.95))
        lam = res.trace.lambdas
        outside += int(np.sum((lam <= 0) | (lam >= 1)))
        violations += res.band_violations
    ok = outside == 0 and violations == 0
    assert record(11, ok, f"points outside (0,1)={outside}, band exits={violations}")


# 12 ----------------------------------------------------------------------------


def test_c12_burn():
    pool = instance_pool(30, seed=12)
    identical = True
    for inst in pool[:10] + [NORMAL]:
        a = simulate(inst, "h", 0.3, 1.0, T=2000)
        b = simulate(inst.with_burn(BurnPolicy.constant(1.0)), "h", 0.3, 1.0, T=2000)
        identical &= np.array_equal(a.lambdas, b.lambdas) and np.array_equal(a.deltas, b.deltas)

    rng = np.random.default_rng(12)
    burned = []
    for inst in pool + [NORMAL]:
        inst = inst.with_burn(BurnPolicy.constant(0.9))
        try:
            ls = inst.lambda_star
        except PreconditionError:
            continue
        oracle = brentq(lambda x: delta(inst, x), 0.0, 1.0, xtol=1e-15)
        assert abs(ls - oracle) < 1e-9
        burned.append(inst)
    wrong, tested = 0, 0
    for _ in range(10**4):
        inst = burned[rng.integers(len(burned))]
        ls = inst.lambda_star
        lam = float(np.clip(ls + rng.uniform(-0.25, 0.25), 1e-9, 1 - 1e-9))
        eta = rng.uniform(0.01, 5.0)
        nxt = step(inst, "h", lam, eta)
        if lam == ls or nxt == lam:
            continue
        tested += 1
        wrong += int(np.sign(nxt - lam) != -np.sign(lam - ls))
    ok = identical and wrong == 0 and tested > 9000
    assert record(12, ok, f"k=1 bit-identical={identical}, k=0.9 sign test: "
                          f"{tested} points, {wrong} wrong")


# 13 ----------------------------------------------------------------------------

CLI_RUNS = [
    ["simulate", "--set", 'mev={"mode": "sampled", "lo": 0.5, "hi": 1.5}'],
    ["thresholds", "--set", "precision.grid_n=100000"],
    ["bifurcate", "--set", "points=40"],
    ["periods", "--set", "k=[1,2,3,4]"],
    ["chaos-witness"],
    ["scenario", "--set", "kind=regime"],
    ["scenario", "--set", "kind=stress", "--set", "stress.n_epochs=20"],
    ["scenario", "--set", "kind=burn"],
    ["scenario", "--set", "kind=rules"],
]


def _csvs(folder):
    return {name: open(os.path.join(folder, name), "rb").read()
            for name in sorted(os.listdir(folder)) if name.endswith(".csv")}


def test_c13_determinism(tmp_path):
    mismatched = []
    for i, argv in enumerate(CLI_RUNS):
        outs = []
        for rep in range(2):
            out = str(tmp_path / f"{i}_{rep}")
            assert main(argv + ["--seed", "42", "--out", out]) == 0
            outs.append(_csvs(out))
        again = str(tmp_path / f"{i}_echo")
        assert main([argv[0], "--config", os.path.join(out, "config.json"), "--out", again]) == 0
        outs.append(_csvs(again))
        if not outs[0] or outs[0] != outs[1] or outs[0] != outs[2]:
            mismatched.append(" ".join(argv))
    ok = not mismatched
    assert record(13, ok, f"{len(CLI_RUNS)} command configurations, "
                          f"mismatched={mismatched or 'none'}")
