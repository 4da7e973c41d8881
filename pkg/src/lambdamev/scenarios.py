"""Experiments on top of the core dynamics: update-rule comparison, MEV-burn
runs, two-regime markets with a threshold trigger, and a randomized stress
test with per-epoch parameters and periodically redrawn Beta tolerances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .analysis import attracting_range
from .distributions import Beta
from .dynamics import (
    BurnPolicy,
    MarketInstance,
    OrbitTrace,
    Rule,
    delta_kernel,
    orbit_kernel,
    simulate,
    step_kernel,
)
from .errors import PreconditionError


@dataclass(frozen=True)
class Regime:
    instance: MarketInstance
    eta: float

    @property
    def w(self):
        return self.instance.w


def default_regimes():
    """Illustrative two-regime market: regime 1 settles below 0.408, regime 2
    above it."""
    r1 = Regime(MarketInstance(Beta(4.0, 5.0), Beta(3.0, 5.0), 1.1), 0.9)
    r2 = Regime(MarketInstance(Beta(5.0, 4.0), Beta(4.0, 4.0), 0.9), 1.0)
    return r1, r2


@dataclass(frozen=True)
class RegimeConfig:
    regime1: Regime
    regime2: Regime
    theta: float = 0.408
    T: int = 5000
    epoch_len: int = 50

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise PreconditionError(f"theta must lie in (0, 1), got {self.theta}")
        if self.T < 1 or self.epoch_len < 1:
            raise PreconditionError("T and epoch_len must be positive")


@dataclass(frozen=True)
class StressConfig:
    n_epochs: int = 100
    blocks_per_epoch: int = 50
    eta_range: Tuple[float, float] = (0.4, 1.0)
    w_range: Tuple[float, float] = (0.5, 2.0)
    beta_perturb_every: int = 10
    beta_param_ranges: Tuple[Tuple[float, float], ...] = ((1.5, 6.0),) * 4
    seed: int = 0

    def __post_init__(self):
        if self.n_epochs < 1 or self.blocks_per_epoch < 1 or self.beta_perturb_every < 1:
            raise PreconditionError("epoch counts and perturbation period must be positive")
        lo, hi = self.eta_range
        if not 0.0 < lo <= hi:
            raise PreconditionError(f"bad eta range {self.eta_range}")
        lo, hi = self.w_range
        if not 0.0 < lo <= hi:
            raise PreconditionError(f"bad w range {self.w_range}")
        if len(self.beta_param_ranges) != 4:
            raise PreconditionError("need ranges for a_u, b_u, a_m, b_m")
        for lo, hi in self.beta_param_ranges:
            # shapes above 1 keep the densities bounded and Delta strictly decreasing
            if not 1.0 < lo <= hi:
                raise PreconditionError(f"Beta shape range {(lo, hi)} must lie above 1")
        if self.seed < 0:
            raise PreconditionError("seed must be nonnegative")

    @property
    def T(self):
        return self.n_epochs * self.blocks_per_epoch


@dataclass
class Segment:
    """A run of steps with constant (eta, w, distributions)."""

    epoch: int
    start: int
    stop: int  # steps start..stop-1; the orbit points start..stop
    eta: float
    instance: MarketInstance
    regime: int = 1

    def record(self):
        rec = {"epoch": self.epoch, "eta": self.eta, "w": self.instance.w}
        u, m = self.instance.users, self.instance.miners
        if isinstance(u, Beta) and isinstance(m, Beta):
            rec.update(a_u=u.a, b_u=u.b, a_m=m.a, b_m=m.b)
        else:
            rec.update(a_u=None, b_u=None, a_m=None, b_m=None)
        return rec


@dataclass
class ScenarioResult:
    trace: OrbitTrace
    regimes: np.ndarray  # regime id used for step t (the last entry repeats)
    segments: List[Segment]
    band_violations: int = 0
    band_fraction: float = 0.0
    extras: Dict[str, object] = field(default_factory=dict)

    @property
    def min_lambda(self):
        return float(self.trace.lambdas.min())

    @property
    def max_lambda(self):
        return float(self.trace.lambdas.max())

    @property
    def max_abs_delta(self):
        return float(np.abs(self.trace.deltas).max())

    def summary(self):
        return {
            "min_lambda": self.min_lambda,
            "max_lambda": self.max_lambda,
            "max_abs_delta": self.max_abs_delta,
            "band_fraction": self.band_fraction,
            "band_violations": self.band_violations,
        }

    def trace_rows(self):
        tr = self.trace
        for t in range(len(tr.lambdas)):
            yield t, tr.lambdas[t], tr.deltas[t], tr.etas[t], int(self.regimes[t])

    def epoch_rows(self):
        for seg in self.segments:
            yield seg.record()


def _band_check(lambdas, segments):
    """Count band exits after first entry within each segment; also the
    fraction of orbit points that sit inside their segment's band."""
    violations = 0
    inside = 0
    total = 0
    for seg in segments:
        lo, hi = attracting_range(seg.instance, seg.eta)
        pts = lambdas[seg.start:seg.stop + 1]
        ok = (pts >= lo) & (pts <= hi)
        inside += int(ok[:-1].sum())
        total += len(pts) - 1
        entered = np.flatnonzero(ok)
        if entered.size:
            violations += int((~ok[entered[0]:]).sum())
    return violations, (inside / total if total else 0.0)


def _check_interior(lambda0):
    if not 0.0 < lambda0 < 1.0:
        raise PreconditionError(f"lambda0 must lie in (0, 1), got {lambda0}")


def run_regime(cfg: RegimeConfig, lambda0, seed=0) -> ScenarioResult:
    """Two-regime market: regime 1 applies when lambda_t <= theta, regime 2
    otherwise. The seed is accepted for interface symmetry; the run is
    deterministic."""
    _check_interior(float(lambda0))
    regs = (cfg.regime1, cfg.regime2)
    args = [r.instance.kernel_args for r in regs]
    ks = [r.instance.burn.reference_k for r in regs]
    T = int(cfg.T)
    lambdas = np.empty(T + 1)
    deltas = np.empty(T + 1)
    etas = np.empty(T + 1)
    ids = np.empty(T + 1, dtype=np.int64)
    lam = float(lambda0)
    for t in range(T + 1):
        i = 0 if lam <= cfg.theta else 1
        d = delta_kernel(*args[i], ks[i], lam)
        lambdas[t], deltas[t], etas[t], ids[t] = lam, d, regs[i].eta, i + 1
        if t < T:
            lam = float(step_kernel(*args[i], 0, lam, regs[i].eta, ks[i]))
    segments = []
    start = 0
    for t in range(1, T + 1):
        if t == T or ids[t] != ids[start]:
            r = regs[ids[start] - 1]
            segments.append(Segment(start // cfg.epoch_len, start, t, r.eta, r.instance,
                                    int(ids[start])))
            start = t
    trace = OrbitTrace(lambdas, deltas, etas, Rule.FULL,
                       {"regime1": cfg.regime1.instance.describe(),
                        "regime2": cfg.regime2.instance.describe(), "theta": cfg.theta})
    viol, frac = _band_check(lambdas, segments)
    return ScenarioResult(trace, ids, segments, viol, frac)


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def run_stress(cfg: StressConfig, lambda0) -> ScenarioResult:
    """Per epoch, eta ~ U(eta_range) and w ~ U(w_range) from the substream
    (0, epoch); every beta_perturb_every blocks the four Beta shapes are
    redrawn from the substream (1, event). Segment boundaries are the union of
    epoch starts and perturbation times."""
    lambda0 = float(lambda0)
    _check_interior(lambda0)
    T = cfg.T
    bpe, every = cfg.blocks_per_epoch, cfg.beta_perturb_every
    cuts = sorted(set(range(0, T, bpe)) | set(range(0, T, every)) | {T})
    lambdas = np.empty(T + 1)
    deltas = np.empty(T + 1)
    etas = np.empty(T + 1)
    segments = []
    lam = lambda0
    epoch_params = {}
    event_params = {}
    for start, stop in zip(cuts[:-1], cuts[1:]):
        epoch = start // bpe
        if epoch not in epoch_params:
            rng = _stream(cfg.seed, 0, epoch)
            epoch_params[epoch] = (float(rng.uniform(*cfg.eta_range)),
                                   float(rng.uniform(*cfg.w_range)))
        event = start // every
        if event not in event_params:
            rng = _stream(cfg.seed, 1, event)
            event_params[event] = [float(rng.uniform(lo, hi)) for lo, hi in cfg.beta_param_ranges]
        eta, w = epoch_params[epoch]
        a_u, b_u, a_m, b_m = event_params[event]
        inst = MarketInstance(Beta(a_u, b_u), Beta(a_m, b_m), w)
        n = stop - start
        seg_l = np.empty(n + 1)
        seg_d = np.empty(n + 1)
        orbit_kernel(*inst.kernel_args, 0, lam, np.full(n + 1, eta), np.ones(n + 1), True,
                     seg_l, seg_d)
        lambdas[start:stop] = seg_l[:-1]
        deltas[start:stop] = seg_d[:-1]
        etas[start:stop] = eta
        lam = float(seg_l[-1])
        segments.append(Segment(epoch, start, stop, eta, inst))
    last = segments[-1]
    lambdas[T] = lam
    deltas[T] = delta_kernel(*last.instance.kernel_args, 1.0, lam)
    etas[T] = last.eta
    trace = OrbitTrace(lambdas, deltas, etas, Rule.FULL, {"stress_seed": cfg.seed})
    viol, frac = _band_check(lambdas, segments)
    return ScenarioResult(trace, np.ones(T + 1, dtype=np.int64), segments, viol, frac)


def run_burn(inst: MarketInstance, burn: BurnPolicy, eta, lambda0, T, seed=0) -> ScenarioResult:
    """Full-rule run of the burned dynamics; sampled burn factors come from
    ``seed``."""
    if burn.mode == "none":
        raise PreconditionError("run_burn needs a constant or sampled burn policy")
    if burn.mode == "sampled":
        burn = BurnPolicy.sampled(burn.lo, burn.hi, seed)
    burned = inst.with_burn(burn)
    trace = simulate(burned, Rule.FULL, lambda0, eta, T=T)
    seg = Segment(0, 0, int(T), float(eta), burned)
    extras = {}
    if burn.mode == "constant":
        viol, frac = _band_check(trace.lambdas, [seg])
    else:
        viol, frac = 0, float("nan")
        extras["k_min"] = float(trace.ks.min())
        extras["k_max"] = float(trace.ks.max())
    return ScenarioResult(trace, np.ones(int(T) + 1, dtype=np.int64), [seg], viol, frac, extras)


def run_rule_comparison(inst: MarketInstance, eta, lambda0, T) -> Dict[Rule, OrbitTrace]:
    """All four update rules from the same start, same eta and same length."""
    return {rule: simulate(inst, rule, lambda0, eta, T=T) for rule in Rule}


def regime_tail_check(result: ScenarioResult, cfg: RegimeConfig, tail: Optional[int] = None):
    """Whether the last ``tail`` orbit points (default: final 20%) sit on one
    side of theta and inside the attracting band of that side's regime."""
    tail = tail or max(1, cfg.T // 5)
    pts = result.trace.lambdas[-tail:]
    below = pts <= cfg.theta
    if below.all():
        reg = cfg.regime1
    elif not below.any():
        reg = cfg.regime2
    else:
        return False, None
    lo, hi = attracting_range(reg.instance, reg.eta)
    return bool(np.all((pts >= lo) & (pts <= hi))), 1 if reg is cfg.regime1 else 2
