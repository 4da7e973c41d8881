"""Closed-form thresholds and bounds for the Full update rule.

* liveness: eta < min{1/(w(1-lambda*)), 1/lambda*} keeps orbits off {0, 1}
* convergence: eta <= inf over lam != lambda* of
  (lambda* + lam) / (lam^2 (1-lam) |K(lam)|), K(lam) = Delta(lam)/(lam - lambda*)
* attracting band: [max{0, lambda* - w eta/4}, min{lambda* + eta/4, 1}]
* deviation bound for Beta/Beta markets:
  |Delta| <= eta (1+w)/4 * (max f + w max g) over the band
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .distributions import Beta, beta_density_max
from .dynamics import MarketInstance, delta, delta_slope
from .errors import PreconditionError

EDGE_MARGIN = 1e-9
NEAR_STAR = 1e-8


def liveness_threshold(inst: MarketInstance):
    ls = inst.lambda_star
    return min(1.0 / (inst.w * (1.0 - ls)), 1.0 / ls)


def _convergence_expr(inst, ls, k_star, lam):
    """(lambda* + lam) / (lam^2 (1 - lam) |K(lam)|) on an array of lam."""
    lam = np.asarray(lam, dtype=np.float64)
    gap = lam - ls
    near = np.abs(gap) < NEAR_STAR
    safe_gap = np.where(near, 1.0, gap)
    K = np.where(near, k_star, delta(inst, lam) / safe_gap)
    with np.errstate(divide="ignore"):
        return (ls + lam) / (lam * lam * (1.0 - lam) * np.abs(K))


def convergence_threshold(inst: MarketInstance, grid_n=10**6, refine=True):
    """Grid infimum of the convergence expression, refined by a bounded
    scalar minimization around the best grid point.

    The value is an upper estimate of the true infimum.
    """
    if grid_n < 10**4:
        raise ValueError("grid_n must be at least 10^4")
    ls = inst.lambda_star
    k_star = float(delta_slope(inst, ls))
    grid = np.linspace(EDGE_MARGIN, 1.0 - EDGE_MARGIN, int(grid_n))
    vals = _convergence_expr(inst, ls, k_star, grid)
    vals[~np.isfinite(vals)] = np.inf
    i = int(np.argmin(vals))
    best = float(vals[i])
    # the lam -> lambda* limit is part of the infimum
    limit = 2.0 / (ls * (1.0 - ls) * abs(k_star))
    best = min(best, limit)
    if refine and 0 < i < len(grid) - 1:
        res = minimize_scalar(
            lambda x: float(_convergence_expr(inst, ls, k_star, np.array([x]))[0]),
            bounds=(grid[i - 1], grid[i + 1]),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if np.isfinite(res.fun):
            best = min(best, float(res.fun))
    return best


def attracting_range(inst: MarketInstance, eta):
    if not eta > 0:
        raise PreconditionError(f"eta must be positive, got {eta}")
    ls = inst.lambda_star
    return max(0.0, ls - inst.w * eta / 4.0), min(ls + eta / 4.0, 1.0)


def deviation_bound(inst: MarketInstance, eta):
    """eta (1+w)/4 * (max f + w max g) over [p, q] for Beta/Beta markets."""
    if not (isinstance(inst.users, Beta) and isinstance(inst.miners, Beta)):
        raise PreconditionError("the deviation bound needs Beta tolerances for both sides")
    ls = inst.lambda_star
    p = ls - inst.w * eta / 4.0
    q = ls + eta / 4.0
    if p <= 0.0:
        raise PreconditionError(f"range clamp engaged: lower side (lambda* - w eta/4 = {p})")
    if q >= 1.0:
        raise PreconditionError(f"range clamp engaged: upper side (lambda* + eta/4 = {q})")
    fmax = beta_density_max(inst.users, p, q)
    gmax = beta_density_max(inst.miners, p, q)
    return eta * (1.0 + inst.w) / 4.0 * (fmax + inst.w * gmax)


@dataclass
class ThresholdReport:
    lambda_star: float
    liveness_eta_max: float
    convergence_eta_max: float
    attracting_lo: float
    attracting_hi: float
    eta_used: float
    deviation_bound: Optional[float] = None
    deviation_reason: str = ""

    @property
    def liveness_exceeded(self):
        return self.eta_used >= self.liveness_eta_max

    @property
    def convergence_exceeded(self):
        return self.eta_used > self.convergence_eta_max

    def record(self):
        rec = asdict(self)
        if self.deviation_bound is None:
            rec["deviation_bound"] = f"absent: {self.deviation_reason}"
        rec.pop("deviation_reason")
        rec["liveness_exceeded"] = self.liveness_exceeded
        rec["convergence_exceeded"] = self.convergence_exceeded
        return rec

    def to_text(self):
        return "".join(f"{key}={_fmt(val)}\n" for key, val in self.record().items())

    def csv_header(self):
        return ",".join(self.record())

    def csv_row(self):
        return ",".join(_fmt(v) for v in self.record().values())


def _fmt(value):
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report(inst: MarketInstance, eta, grid_n=10**6):
    lo, hi = attracting_range(inst, eta)
    dev, reason = None, ""
    try:
        dev = deviation_bound(inst, eta)
    except PreconditionError as exc:
        reason = str(exc)
    return ThresholdReport(
        lambda_star=inst.lambda_star,
        liveness_eta_max=liveness_threshold(inst),
        convergence_eta_max=convergence_threshold(inst, grid_n),
        attracting_lo=lo,
        attracting_hi=hi,
        eta_used=float(eta),
        deviation_bound=dev,
        deviation_reason=reason,
    )


def in_band(values, lo, hi):
    """Elementwise lo <= v <= hi."""
    v = np.asarray(values)
    return (v >= lo) & (v <= hi)


def first_entry(values, lo, hi):
    """Index of the first value inside [lo, hi], or None."""
    idx = np.flatnonzero(in_band(values, lo, hi))
    return int(idx[0]) if idx.size else None

