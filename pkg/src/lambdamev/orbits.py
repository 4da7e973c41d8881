"""Periodic orbits, Sharkovsky ordering, period-3 chaos witnesses and
bifurcation scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np
from numba import njit

from .distributions import Uniform
from .dynamics import (
    MarketInstance,
    Rule,
    derivative_kernel,
    delta_kernel,
    iterate_kernel,
    orbit_kernel,
    step,
    step_kernel,
)
from .errors import PreconditionError, SearchExhausted

SCAN_EDGE = 1e-6
MARGINAL = 1e-8


def iterate_k(inst: MarketInstance, rule, eta, k, lam):
    """k-fold composition of the update map; scalar or array lam."""
    if k < 1:
        raise PreconditionError(f"k must be at least 1, got {k}")
    rule = Rule.parse(rule)
    args = (*inst.kernel_args, int(rule), float(eta), float(inst.burn.reference_k), int(k))
    if np.ndim(lam) == 0:
        return float(iterate_kernel(*args, np.array([float(lam)]))[0])
    xs = np.ascontiguousarray(lam, dtype=np.float64)
    return iterate_kernel(*args, xs.ravel()).reshape(xs.shape)


@njit(cache=True)
def _g(fc, fp, gc, gp, w, rule, eta, kb, times, x):
    y = x
    for _ in range(times):
        y = step_kernel(fc, fp, gc, gp, w, rule, y, eta, kb)
    return y - x


@njit(cache=True)
def _preimage_in_lap(fc, fp, gc, gp, w, rule, eta, kb, j, x0, x1, y0, y1, c):
    # h^j is monotone on [x0, x1] with c strictly between y0 and y1; Illinois
    # regula falsi with a bisection fallback for h^j(x) = c
    f0 = y0 - c
    f1 = y1 - c
    side = 0
    for _ in range(100):
        if not x1 - x0 > 4e-16 * max(abs(x0), abs(x1), 1e-300):
            break
        xm = (x0 * f1 - x1 * f0) / (f1 - f0)
        if not x0 < xm < x1:
            xm = 0.5 * (x0 + x1)
            if xm <= x0 or xm >= x1:
                break
        fm = _iter(fc, fp, gc, gp, w, rule, eta, kb, j, xm) - c
        if fm == 0.0:
            return xm
        if (fm > 0.0) == (f0 > 0.0):
            x0, f0 = xm, fm
            if side == -1:
                f1 *= 0.5
            side = -1
        else:
            x1, f1 = xm, fm
            if side == 1:
                f0 *= 0.5
            side = 1
    return x0 if abs(f0) <= abs(f1) else x1


@njit(cache=True)
def _lap_brackets(fc, fp, gc, gp, w, rule, eta, kb, times, turning, lo, hi, max_pieces):
    """Split [lo, hi] into laps on which h^k is monotone by pulling the
    turning points of h back through each monotone piece; return the laps
    where h^k(x) - x changes sign, exact zeros on constant laps, and whether
    the piece budget ran out."""
    los = []
    his = []
    zeros = []
    cuts = [lo]
    for c in turning:
        if lo < c < hi:
            cuts.append(c)
    cuts.append(hi)
    stack = []
    for i in range(len(cuts) - 1):
        a = cuts[i]
        b = cuts[i + 1]
        stack.append((a, b, 1, step_kernel(fc, fp, gc, gp, w, rule, a, eta, kb),
                      step_kernel(fc, fp, gc, gp, w, rule, b, eta, kb)))
    pieces = 0
    truncated = False
    while len(stack) > 0:
        x0, x1, j, y0, y1 = stack.pop()
        pieces += 1
        if pieces > max_pieces:
            truncated = True
            break
        if y0 == y1:
            # h^j is constant on the lap, so h^k is too
            v = y0
            for _ in range(times - j):
                v = step_kernel(fc, fp, gc, gp, w, rule, v, eta, kb)
            if x0 <= v <= x1:
                zeros.append(v)
            continue
        if j == times:
            g0 = y0 - x0
            g1 = y1 - x1
            if g0 == 0.0:
                zeros.append(x0)
            elif g1 == 0.0:
                zeros.append(x1)
            elif (g0 > 0.0) != (g1 > 0.0):
                los.append(x0)
                his.append(x1)
            continue
        ylo = min(y0, y1)
        yhi = max(y0, y1)
        xs = [x0]
        ys = [y0]
        for c in turning:
            if ylo < c < yhi:
                xs.append(_preimage_in_lap(fc, fp, gc, gp, w, rule, eta, kb, j,
                                           x0, x1, y0, y1, c))
                ys.append(c)
        xs.append(x1)
        ys.append(y1)
        if y0 > y1 and len(xs) > 3:
            # decreasing lap: preimages of increasing c come in decreasing x
            inner_x = xs[1:-1]
            inner_y = ys[1:-1]
            inner_x.reverse()
            inner_y.reverse()
            xs = [x0] + inner_x + [x1]
            ys = [y0] + inner_y + [y1]
        # images one step further are carried forward instead of recomputed
        for i in range(len(xs) - 1):
            if xs[i + 1] > xs[i]:
                stack.append((xs[i], xs[i + 1], j + 1,
                              step_kernel(fc, fp, gc, gp, w, rule, ys[i], eta, kb),
                              step_kernel(fc, fp, gc, gp, w, rule, ys[i + 1], eta, kb)))
    return np.array(los), np.array(his), np.array(zeros), truncated


@njit(cache=True)
def _iter(fc, fp, gc, gp, w, rule, eta, kb, times, x):
    for _ in range(times):
        x = step_kernel(fc, fp, gc, gp, w, rule, x, eta, kb)
    return x


@njit(cache=True)
def _refine_brackets(fc, fp, gc, gp, w, rule, eta, kb, times, los, his):
    # Shrink every sign-change bracket of h^k(x) - x to a few ulps (Illinois
    # regula falsi, bisection when the secant leaves the bracket) and return
    # the better end with its residual.
    n = los.shape[0]
    roots = np.empty(n)
    resid = np.empty(n)
    for i in range(n):
        lo = los[i]
        hi = his[i]
        glo = _g(fc, fp, gc, gp, w, rule, eta, kb, times, lo)
        ghi = _g(fc, fp, gc, gp, w, rule, eta, kb, times, hi)
        flo = glo
        fhi = ghi
        side = 0
        for it in range(300):
            if glo == 0.0 or ghi == 0.0:
                break
            if it % 4 == 3:
                mid = 0.5 * (lo + hi)
            else:
                mid = (lo * fhi - hi * flo) / (fhi - flo)
                if not lo < mid < hi:
                    mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            gm = _g(fc, fp, gc, gp, w, rule, eta, kb, times, mid)
            if gm == 0.0:
                lo = mid
                glo = 0.0
                break
            if (gm > 0.0) == (glo > 0.0):
                lo, glo, flo = mid, gm, gm
                if side == -1:
                    fhi *= 0.5
                side = -1
            else:
                hi, ghi, fhi = mid, gm, gm
                if side == 1:
                    flo *= 0.5
                side = 1
        if abs(glo) <= abs(ghi):
            roots[i] = lo
            resid[i] = abs(glo)
        else:
            roots[i] = hi
            resid[i] = abs(ghi)
    return roots, resid


@njit(cache=True)
def _g_and_slope(fc, fp, gc, gp, w, rule, eta, kb, times, x):
    y = x
    der = 1.0
    for _ in range(times):
        der *= derivative_kernel(fc, fp, gc, gp, w, rule, y, eta, kb)
        y = step_kernel(fc, fp, gc, gp, w, rule, y, eta, kb)
    return y - x, der - 1.0


@njit(cache=True)
def _polish(fc, fp, gc, gp, w, rule, eta, kb, d, x):
    # a few Newton steps on h^d(x) - x, kept only while the residual drops
    g, dg = _g_and_slope(fc, fp, gc, gp, w, rule, eta, kb, d, x)
    for _ in range(8):
        if g == 0.0 or dg == 0.0 or not math.isfinite(dg):
            break
        xn = x - g / dg
        if not 0.0 < xn < 1.0:
            break
        gn, dgn = _g_and_slope(fc, fp, gc, gp, w, rule, eta, kb, d, xn)
        if not abs(gn) < abs(g):
            break
        x, g, dg = xn, gn, dgn
    return x, abs(g)


@njit(cache=True)
def _classify(fc, fp, gc, gp, w, rule, eta, kb, x, divisors, thresh):
    """Least period of x among the divisors (0 if none qualifies), the
    multiplier of its cycle, the worst orbit residual and the polished x.

    For a divisor d the orbit points are generated forward from x and each
    is polished as a root of h^d, since forward iteration alone inflates
    the residual by the expansion along the orbit. d qualifies when every
    polished point has residual within thresh, consecutive points map onto
    each other within thresh, and the points are pairwise more than thresh
    apart.
    """
    for j in range(divisors.shape[0]):
        d = divisors[j]
        x0, r0 = _polish(fc, fp, gc, gp, w, rule, eta, kb, d, x)
        if r0 > thresh or abs(x0 - x) > thresh:
            continue
        pts = np.empty(d)
        pts[0] = x0
        worst = r0
        ok = True
        for i in range(1, d):
            p = step_kernel(fc, fp, gc, gp, w, rule, pts[i - 1], eta, kb)
            q, r = _polish(fc, fp, gc, gp, w, rule, eta, kb, d, p)
            if r > thresh or abs(q - p) > thresh:
                ok = False
                break
            pts[i] = q
            worst = max(worst, r)
        if not ok:
            continue
        if abs(step_kernel(fc, fp, gc, gp, w, rule, pts[d - 1], eta, kb) - pts[0]) > thresh:
            continue
        srt = np.sort(pts)
        for i in range(d - 1):
            if srt[i + 1] - srt[i] <= thresh:
                ok = False
                break
        if not ok:
            continue
        m = 1.0
        for i in range(d):
            m *= derivative_kernel(fc, fp, gc, gp, w, rule, pts[i], eta, kb)
        return d, m, worst, x0
    return 0, np.nan, np.inf, x


def _divisors(k):
    return [d for d in range(1, k + 1) if k % d == 0]


@dataclass
class PeriodReport:
    """Solutions of h^k(x) = x in (0, 1) with their least periods.

    ``stability`` maps each point to "stable", "unstable" or "marginal"
    according to |multiplier| of its cycle. ``tangential`` lists grid points
    where |h^k(x) - x| < tol without a sign change (possible roots the scan
    cannot bracket); ``rejected`` counts brackets whose refined root failed
    the residual check (jumps too steep to resolve in double precision);
    ``truncated`` is set when the lap decomposition hit its piece budget.
    """

    k: int
    fixed_points: List[float]
    least_periods: Dict[float, int]
    multipliers: Dict[float, float]
    stability: Dict[float, str]
    grid_n: int
    tol: float
    tangential: List[float] = field(default_factory=list)
    rejected: int = 0
    truncated: bool = False

    @property
    def stable(self):
        return {x: s == "stable" for x, s in self.stability.items()}

    def with_least_period(self, d):
        return [x for x in self.fixed_points if self.least_periods[x] == d]

    def has_least_period(self, d):
        return any(p == d for p in self.least_periods.values())

    @property
    def periods_found(self):
        return sorted(set(self.least_periods.values()))

    def rows(self):
        for x in self.fixed_points:
            yield self.k, x, self.least_periods[x], self.stability[x]


def default_grid_n(k):
    return max(1000, 200 * 2 ** math.ceil(math.log2(k)))


def turning_points(inst: MarketInstance, rule, eta, grid_n=200_001):
    """Points where the update map changes monotonicity, including the edges
    of flat (clamped) stretches, located by bisection on the slope sign."""
    rule = Rule.parse(rule)
    args = (*inst.kernel_args, int(rule))
    kb = float(inst.burn.reference_k)
    xs = np.linspace(0.0, 1.0, grid_n)
    sg = _slope_sign(_slope_array(*args, float(eta), kb, xs))
    out = []
    for i in np.flatnonzero(sg[:-1] != sg[1:]):
        lo, hi, s_lo = float(xs[i]), float(xs[i + 1]), sg[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            dm = derivative_kernel(*args, mid, float(eta), kb)
            if _slope_sign(np.array([dm]))[0] == s_lo:
                lo = mid
            else:
                hi = mid
        out.append(0.5 * (lo + hi))
    return np.array(sorted(set(out)))


def _slope_sign(ds):
    return np.sign(np.nan_to_num(ds, nan=0.0, posinf=1.0, neginf=-1.0))


@njit(cache=True)
def _slope_array(fc, fp, gc, gp, w, rule, eta, kb, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = derivative_kernel(fc, fp, gc, gp, w, rule, xs[i], eta, kb)
    return out


def find_periodic_points(inst: MarketInstance, rule, eta, k, grid_n=None, tol=1e-10,
                         laps=True, max_pieces=5_000_000):
    """Solve h^k(x) = x on (1e-6, 1 - 1e-6) and classify the solutions.

    g(x) = h^k(x) - x is sampled on a uniform grid and every sign change is
    bisected to adjacent doubles. With ``laps`` the scan is complemented by a
    lap decomposition: the turning points of h are pulled back k times, which
    splits the interval into pieces where h^k is monotone, and sign changes
    of g on every piece are bisected as well. This catches the short laps of
    strongly expanding maps that fall between grid points. Roots closer than
    10 tol are merged and least periods are read off the divisors of k with
    the residual threshold 10 tol.
    """
    if k < 1:
        raise PreconditionError(f"k must be at least 1, got {k}")
    if not tol > 0:
        raise PreconditionError("tol must be positive")
    rule = Rule.parse(rule)
    grid_n = int(grid_n or default_grid_n(k))
    if grid_n < 1000:
        raise PreconditionError("grid_n must be at least 1000")
    args = (*inst.kernel_args, int(rule), float(eta), float(inst.burn.reference_k))
    grid = np.linspace(SCAN_EDGE, 1.0 - SCAN_EDGE, grid_n)
    gs = iterate_kernel(*args, int(k), grid) - grid
    change = np.flatnonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) < 0)
    los, his = grid[change], grid[change + 1]
    zeros = grid[gs == 0.0]
    truncated = False
    if laps:
        tps = turning_points(inst, rule, eta)
        llo, lhi, lz, truncated = _lap_brackets(*args, int(k), tps, SCAN_EDGE,
                                                1.0 - SCAN_EDGE, int(max_pieces))
        los = np.concatenate([los, llo])
        his = np.concatenate([his, lhi])
        zeros = np.concatenate([zeros, lz])
    roots, _ = _refine_brackets(*args, int(k), los, his)
    cands = np.concatenate([zeros, roots])

    sign_change = np.zeros(grid_n, dtype=bool)
    sign_change[change] = True
    sign_change[change + 1] = True
    tangential = [float(x) for x in grid[(np.abs(gs) < tol) & (gs != 0.0) & ~sign_change]]

    thresh = 10.0 * tol
    divisors = np.array(_divisors(int(k)), dtype=np.int64)
    order = np.argsort(cands, kind="stable")
    points, periods, mults, stab = [], {}, {}, {}
    rejected = 0
    for idx in order:
        x = float(cands[idx])
        if points and x - points[-1] <= thresh:
            continue
        d, m, _, x = _classify(*args, x, divisors, thresh)
        if d == 0:
            rejected += 1
            continue
        if points and x - points[-1] <= thresh:
            continue
        x = float(x)
        m = float(m)
        points.append(x)
        periods[x] = int(d)
        mults[x] = m
        if not math.isfinite(m):
            stab[x] = "unstable"
        elif abs(abs(m) - 1.0) <= MARGINAL:
            stab[x] = "marginal"
        else:
            stab[x] = "stable" if abs(m) < 1.0 else "unstable"
    return PeriodReport(int(k), points, periods, mults, stab, grid_n, tol, tangential, rejected,
                        bool(truncated))


# --- Sharkovsky ordering ----------------------------------------------------


def sharkovsky_key(n):
    """Sort key placing n in the Sharkovsky order 3, 5, 7, ..., 2*3, 2*5, ...,
    ..., 2^2, 2, 1 (earlier means stronger)."""
    if n < 1:
        raise ValueError("periods are positive integers")
    s = 0
    q = int(n)
    while q % 2 == 0:
        q //= 2
        s += 1
    if q > 1:
        return (0, s, q)
    return (1, -s, 1)


def sharkovsky_implies(m, l):
    """True when a point of least period m forces one of least period l."""
    return sharkovsky_key(m) < sharkovsky_key(l)


def sharkovsky_implied(m) -> Callable[[int], bool]:
    """Predicate over l: does least period m force least period l?"""
    key = sharkovsky_key(m)
    return lambda l: key < sharkovsky_key(l)


# --- period-3 chaos witness -------------------------------------------------


def piecewise_update(lam, a, b, eta, w):
    """The Full update for F = G = Uniform[a, b], written out branch by branch
    and projected onto [0, 1]."""
    if lam < a:
        x = lam * (-eta * lam + eta + 1.0)
    elif lam < b:
        d = (b + w * a - lam * (1.0 + w)) / (b - a)
        x = lam * (-eta * lam * d + eta * d + 1.0)
    else:
        x = lam * (eta * w * lam - eta * w + 1.0)
    return min(max(x, 0.0), 1.0)


@dataclass
class ChaosWitness:
    """Points with lambda3 <= lambda0 < lambda1 < lambda2 under the update for
    F = G = Uniform[a, b]; by the Li-Yorke theorem the map then has a point
    of least period 3.

    ``construction`` is "proof" when lambda1 = a (so lambda2 = a + eta a (1-a)),
    or "edge" when lambda2 = b and lambda1 is the point of the steep segment
    that maps onto b.
    """

    a: float
    b: float
    lambda0: float
    lambda1: float
    lambda2: float
    lambda3: float
    eta: float
    w: float
    construction: str

    def instance(self):
        return MarketInstance(Uniform(self.a, self.b), Uniform(self.a, self.b), self.w)

    def recheck(self, tol=1e-10):
        """Re-evaluate the branch formulas at the witness points."""
        h = lambda x: piecewise_update(x, self.a, self.b, self.eta, self.w)  # noqa: E731
        return {
            "h(lambda0)=lambda1": abs(h(self.lambda0) - self.lambda1) <= tol,
            "h(lambda1)=lambda2": abs(h(self.lambda1) - self.lambda2) <= tol,
            "h(lambda2)=lambda3": abs(h(self.lambda2) - self.lambda3) <= tol,
            "lambda3<=lambda0": h(self.lambda2) <= self.lambda0,
            "lambda0<lambda1": self.lambda0 < self.lambda1,
            "lambda1<lambda2": self.lambda1 < self.lambda2,
            "a<=lambda1<b": self.a <= self.lambda1 < self.b,
        }

    @property
    def certified(self):
        return all(self.recheck().values())

    def record(self):
        return {
            "eta": self.eta, "w": self.w, "a": self.a, "b": self.b,
            "lambda0": self.lambda0, "lambda1": self.lambda1,
            "lambda2": self.lambda2, "lambda3": self.lambda3,
            "construction": self.construction,
        }


def _preimage(h, target, lo, hi):
    """Bisection for h(x) = target on [lo, hi], h(lo) and h(hi) on opposite
    sides of target."""
    slo = h(lo) - target > 0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (h(mid) - target > 0) == slo:
            lo = mid
        else:
            hi = mid
    return lo if abs(h(lo) - target) <= abs(h(hi) - target) else hi


def chaos_witness(eta, w, a0=0.1, search_steps=200):
    """Search for a period-3 forcing configuration with uniform tolerances on
    a shrinking interval [a, b].

    The first pass tries lambda1 = a for b_j = a + (b_0 - a) 2^-j; when the
    steep segment throws h(a) beyond b this can fail for small eta, and a
    second pass over the same schedule pins lambda2 = b instead.
    """
    if not (eta > 0 and w > 0):
        raise PreconditionError("eta and w must be positive")
    if not 0.0 < a0 < 1.0:
        raise PreconditionError("a0 must lie in (0, 1)")
    a = float(a0)
    while a + eta * a * (1.0 - a) >= 1.0:
        a *= 0.5
    b0 = min(1.0, a + 0.5)
    last = {}
    for construction in ("proof", "edge"):
        for j in range(search_steps):
            b = a + (b0 - a) * 2.0 ** (-j)
            if not a < b < 1.0:
                continue
            inst = MarketInstance(Uniform(a, b), Uniform(a, b), w)
            h = lambda x: step(inst, Rule.FULL, x, eta)  # noqa: E731
            if construction == "proof":
                l1 = a
            else:
                if h(a) <= b:
                    continue
                l1 = _preimage(h, b, a, b)
            if not h(a) > l1:
                continue
            l0 = _preimage(h, l1, 0.0, a)
            l2 = h(l1)
            l3 = h(l2)
            last = {"a": a, "b": b, "lambda0": l0, "lambda1": l1, "lambda2": l2,
                    "lambda3": l3, "construction": construction}
            if l3 <= l0 < l1 < l2 < 1.0:
                wit = ChaosWitness(a, b, l0, l1, l2, l3, float(eta), float(w), construction)
                if wit.certified:
                    return wit
    raise SearchExhausted(
        f"no period-3 configuration found for eta={eta}, w={w} in {search_steps} steps",
        last,
    )


# --- bifurcation scans ------------------------------------------------------


@dataclass
class ScanTable:
    """Recorded tail of each orbit in a parameter sweep."""

    params: np.ndarray
    lambdas: np.ndarray
    deltas: np.ndarray
    burn_in: int

    @property
    def n_record(self):
        return self.lambdas.shape[1]

    @property
    def mean_lambda(self):
        return self.lambdas.mean(axis=1)

    @property
    def mean_delta(self):
        return self.deltas.mean(axis=1)

    @property
    def band_width(self):
        return self.lambdas.max(axis=1) - self.lambdas.min(axis=1)

    def rows(self):
        ts = np.arange(self.burn_in + 1, self.burn_in + self.n_record + 1)
        for i, p in enumerate(self.params):
            for j, t in enumerate(ts):
                yield p, t, self.lambdas[i, j], self.deltas[i, j]


def eta_axis(inst: MarketInstance):
    """Parameter -> (instance, eta) for a sweep over the intensity."""
    return lambda eta: (inst, float(eta))


def range_axis(eta, w=1.0, users_center=0.5, miners_center=0.4):
    """Parameter r -> uniform tolerances [c - r, c + r] at fixed eta."""

    def case(r):
        users = Uniform(users_center - r, users_center + r)
        miners = Uniform(miners_center - r, miners_center + r)
        return MarketInstance(users, miners, w), float(eta)

    return case


def bifurcation_scan(case, params, rule=Rule.FULL, burn_in=200, n_record=200, lambda0=0.3):
    """Simulate burn_in + n_record steps at every parameter value and keep
    the last n_record points."""
    if len(params) < 2:
        raise PreconditionError("a scan needs at least two parameter values")
    if burn_in < 1 or n_record < 1:
        raise PreconditionError("burn_in and n_record must be positive")
    rule = Rule.parse(rule)
    params = np.asarray(params, dtype=np.float64)
    T = burn_in + n_record
    lams = np.empty((params.size, n_record))
    dels = np.empty((params.size, n_record))
    buf_l = np.empty(T + 1)
    buf_d = np.empty(T + 1)
    for i, p in enumerate(params):
        inst, eta = case(float(p))
        if not rule.admissible(lambda0):
            raise PreconditionError(f"lambda0={lambda0} not admissible for {rule.label}")
        ks = inst.burn.factors(T + 1)
        etas = np.full(T + 1, eta)
        orbit_kernel(*inst.kernel_args, int(rule), float(lambda0), etas, ks,
                     inst.burn.mode != "sampled", buf_l, buf_d)
        lams[i] = buf_l[burn_in + 1:]
        dels[i] = buf_d[burn_in + 1:]
    return ScanTable(params, lams, dels, burn_in)


def _kernel_delta(inst, lam):  # used by tests to bypass the Python wrapper
    return delta_kernel(*inst.kernel_args, inst.burn.reference_k, lam)
