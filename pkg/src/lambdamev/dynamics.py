"""The extraction-rate update rule and its variants.

The target function is Delta(lam) = 1 - F(lam) - w * G(k * lam), where k is
the MEV-burn factor (k = 1 without burn). The update maps are

    Full         h (lam) = lam + eta * lam * (1 - lam) * Delta(lam)   clamp to [0, 1]
    MinerScaled  h1(lam) = lam + eta * lam * Delta(lam)               clamp below at 0
    UserScaled   h2(lam) = lam + eta * (1 - lam) * Delta(lam)         clamp above at 1
    Plain        h3(lam) = lam + eta * Delta(lam)                     no projection

with eta replaced by eta_t = eta * m_t when the MEV sequence m_t varies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .distributions import ToleranceDistribution, cdf_kernel, pdf_kernel
from .errors import PreconditionError

# |Delta| below this counts as the interior fixed point; the step is skipped.
SNAP = 1e-15

_BISECT_MAXIT = 200


class Rule(enum.IntEnum):
    FULL = 0
    MINER_SCALED = 1
    USER_SCALED = 2
    PLAIN = 3

    @property
    def label(self):
        return ("h", "h1", "h2", "h3")[self.value]

    @classmethod
    def parse(cls, name):
        if isinstance(name, Rule):
            return name
        key = str(name).strip().lower()
        for rule in cls:
            if key in (rule.label, rule.name.lower(), rule.name.lower().replace("_", "")):
                return rule
        raise ValueError(f"unknown update rule {name!r}")

    def admissible(self, lam):
        if not math.isfinite(lam):
            return False
        if self is Rule.FULL:
            return 0.0 <= lam <= 1.0
        if self is Rule.MINER_SCALED:
            return lam >= 0.0
        if self is Rule.USER_SCALED:
            return lam <= 1.0
        return True

    @property
    def admissible_range(self):
        return {
            Rule.FULL: "[0, 1]",
            Rule.MINER_SCALED: "[0, inf)",
            Rule.USER_SCALED: "(-inf, 1]",
            Rule.PLAIN: "(-inf, inf)",
        }[self]


@dataclass(frozen=True)
class BurnPolicy:
    """Fraction k of their MEV share that block producers keep.

    mode is "none" (k = 1), "constant" or "sampled" (k drawn fresh each step
    from Uniform[lo, hi] with its own seeded generator).
    """

    mode: str = "none"
    k: float = 1.0
    lo: float = 1.0
    hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode == "none":
            return
        if self.mode == "constant":
            if not 0.0 < self.k <= 1.0:
                raise ValueError(f"burn factor k must be in (0, 1], got {self.k}")
        elif self.mode == "sampled":
            if not 0.0 < self.lo <= self.hi <= 1.0:
                raise ValueError(f"need 0 < lo <= hi <= 1, got {self.lo}, {self.hi}")
        else:
            raise ValueError(f"unknown burn mode {self.mode!r}")

    @classmethod
    def none(cls):
        return cls()

    @classmethod
    def constant(cls, k):
        return cls("constant", k=float(k))

    @classmethod
    def sampled(cls, lo, hi, seed=0):
        return cls("sampled", lo=float(lo), hi=float(hi), seed=int(seed))

    @property
    def reference_k(self):
        """k used for static quantities such as lambda*; the midpoint when sampled."""
        if self.mode == "constant":
            return self.k
        if self.mode == "sampled":
            return 0.5 * (self.lo + self.hi)
        return 1.0

    def factors(self, n):
        """The k_t sequence for n consecutive steps."""
        if self.mode == "sampled":
            rng = np.random.default_rng(self.seed)
            return rng.uniform(self.lo, self.hi, size=n)
        return np.full(n, self.reference_k)

    def to_dict(self):
        if self.mode == "constant":
            return {"mode": "constant", "k": self.k}
        if self.mode == "sampled":
            return {"mode": "sampled", "lo": self.lo, "hi": self.hi}
        return {"mode": "none"}


@dataclass(frozen=True)
class MevSequence:
    """Per-step MEV m_t; the effective intensity is eta_t = eta * m_t."""

    mode: str = "constant"
    m: float = 1.0
    values: tuple = ()
    lo: float = 1.0
    hi: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode == "constant":
            ok = self.m > 0
        elif self.mode == "series":
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
            ok = len(self.values) > 0 and all(v > 0 for v in self.values)
        elif self.mode == "sampled":
            ok = 0 < self.lo <= self.hi
        else:
            raise ValueError(f"unknown MEV sequence mode {self.mode!r}")
        if not ok:
            raise ValueError("MEV values must be positive")

    @classmethod
    def constant(cls, m=1.0):
        return cls("constant", m=float(m))

    @classmethod
    def series(cls, values):
        return cls("series", values=tuple(values))

    @classmethod
    def sampled(cls, lo, hi, seed=0):
        return cls("sampled", lo=float(lo), hi=float(hi), seed=int(seed))

    @property
    def is_constant(self):
        return self.mode == "constant"

    def sequence(self, n):
        if self.mode == "constant":
            return np.full(n, self.m)
        if self.mode == "series":
            if len(self.values) < n:
                raise PreconditionError(
                    f"MEV series has {len(self.values)} values, {n} needed"
                )
            return np.array(self.values[:n])
        return np.random.default_rng(self.seed).uniform(self.lo, self.hi, size=n)

    def to_dict(self):
        if self.mode == "constant":
            return {"mode": "constant", "m": self.m}
        if self.mode == "series":
            return {"mode": "series", "values": list(self.values)}
        return {"mode": "sampled", "lo": self.lo, "hi": self.hi}


# --- compiled kernels -------------------------------------------------------


@njit(cache=True)
def delta_kernel(fc, fp, gc, gp, w, k, lam):
    return 1.0 - cdf_kernel(fc, fp, lam) - w * cdf_kernel(gc, gp, k * lam)


@njit(cache=True)
def _apply(rule, lam, eta, d):
    if abs(d) < SNAP:
        return lam
    if rule == 0:
        x = lam + eta * lam * (1.0 - lam) * d
        if x < 0.0:
            return 0.0
        if x > 1.0:
            return 1.0
        return x
    if rule == 1:
        x = lam + eta * lam * d
        return x if x > 0.0 else 0.0
    if rule == 2:
        x = lam + eta * (1.0 - lam) * d
        return x if x < 1.0 else 1.0
    return lam + eta * d


@njit(cache=True)
def step_kernel(fc, fp, gc, gp, w, rule, lam, eta, k):
    return _apply(rule, lam, eta, delta_kernel(fc, fp, gc, gp, w, k, lam))


@njit(cache=True)
def orbit_kernel(fc, fp, gc, gp, w, rule, lam0, etas, ks, constant, lambdas, deltas):
    n = lambdas.shape[0]
    lam = lam0
    for t in range(n - 1):
        d = delta_kernel(fc, fp, gc, gp, w, ks[t], lam)
        lambdas[t] = lam
        deltas[t] = d
        nxt = _apply(rule, lam, etas[t], d)
        if constant and nxt == lam:
            # a fixed point of a time-invariant map: the rest of the orbit is known
            for s in range(t + 1, n):
                lambdas[s] = lam
                deltas[s] = d
            return
        lam = nxt
    lambdas[n - 1] = lam
    deltas[n - 1] = delta_kernel(fc, fp, gc, gp, w, ks[n - 1], lam)


@njit(cache=True)
def orbits_kernel(fc, fp, gc, gp, w, rule, lam0s, eta, k, out):
    n = out.shape[1]
    for i in range(lam0s.shape[0]):
        lam = lam0s[i]
        out[i, 0] = lam
        for t in range(1, n):
            nxt = step_kernel(fc, fp, gc, gp, w, rule, lam, eta, k)
            if nxt == lam:
                for s in range(t, n):
                    out[i, s] = lam
                break
            lam = nxt
            out[i, t] = lam


@njit(cache=True)
def iterate_kernel(fc, fp, gc, gp, w, rule, eta, k, times, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        lam = xs[i]
        for _ in range(times):
            lam = step_kernel(fc, fp, gc, gp, w, rule, lam, eta, k)
        out[i] = lam
    return out


@njit(cache=True)
def derivative_kernel(fc, fp, gc, gp, w, rule, lam, eta, k):
    # inf or nan when a density diverges at lam
    d = delta_kernel(fc, fp, gc, gp, w, k, lam)
    ds = -pdf_kernel(fc, fp, lam) - w * k * pdf_kernel(gc, gp, k * lam)
    if rule == 0:
        raw = lam + eta * lam * (1.0 - lam) * d
        if raw < 0.0 or raw > 1.0:
            return 0.0
        return 1.0 + eta * ((1.0 - 2.0 * lam) * d + lam * (1.0 - lam) * ds)
    if rule == 1:
        if lam + eta * lam * d < 0.0:
            return 0.0
        return 1.0 + eta * (d + lam * ds)
    if rule == 2:
        if lam + eta * (1.0 - lam) * d > 1.0:
            return 0.0
        return 1.0 + eta * (-d + (1.0 - lam) * ds)
    return 1.0 + eta * ds


@njit(cache=True)
def delta_array_kernel(fc, fp, gc, gp, w, k, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = delta_kernel(fc, fp, gc, gp, w, k, xs[i])
    return out


@njit(cache=True)
def _bisect_root(fc, fp, gc, gp, w, k, lo, hi, tol):
    # Delta(lo) > 0 >= Delta(hi); stops once the bracket cannot be halved.
    for _ in range(_BISECT_MAXIT):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if delta_kernel(fc, fp, gc, gp, w, k, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    dlo = abs(delta_kernel(fc, fp, gc, gp, w, k, lo))
    dhi = abs(delta_kernel(fc, fp, gc, gp, w, k, hi))
    return lo if dlo < dhi else hi


# --- market instance --------------------------------------------------------


@dataclass(frozen=True)
class MarketInstance:
    """Users' law F, miners' law G, target ratio w and an optional burn policy."""

    users: ToleranceDistribution
    miners: ToleranceDistribution
    w: float
    burn: BurnPolicy = field(default_factory=BurnPolicy)

    def __post_init__(self):
        if not (self.w > 0 and math.isfinite(self.w)):
            raise ValueError(f"target ratio w must be positive, got {self.w}")
        object.__setattr__(self, "_lstar", None)

    @property
    def kernel_args(self):
        return (self.users.code, self.users.params, self.miners.code, self.miners.params,
                float(self.w))

    @property
    def lambda_star(self):
        """Interior zero of Delta (at the policy's reference k), cached."""
        if self._lstar is None:
            object.__setattr__(self, "_lstar", lambda_star(self))
        return self._lstar

    def with_burn(self, burn):
        return MarketInstance(self.users, self.miners, self.w, burn)

    def with_w(self, w):
        return MarketInstance(self.users, self.miners, w, self.burn)

    def describe(self):
        return {
            "users": self.users.to_dict(),
            "miners": self.miners.to_dict(),
            "w": self.w,
            "burn": self.burn.to_dict(),
        }

    @classmethod
    def from_dict(cls, record, seed=0):
        burn_rec = dict(record.get("burn", {"mode": "none"}))
        mode = burn_rec.get("mode", "none")
        if mode == "constant":
            burn = BurnPolicy.constant(burn_rec["k"])
        elif mode == "sampled":
            burn = BurnPolicy.sampled(burn_rec["lo"], burn_rec["hi"], seed)
        else:
            burn = BurnPolicy.none()
        return cls(
            ToleranceDistribution.from_dict(record["users"]),
            ToleranceDistribution.from_dict(record["miners"]),
            float(record["w"]),
            burn,
        )


def delta(inst: MarketInstance, lam, k=None):
    """Delta(lam) = 1 - F(lam) - w G(k lam); scalar or array input."""
    if k is None:
        k = inst.burn.reference_k
    args = inst.kernel_args
    if np.ndim(lam) == 0:
        return float(delta_kernel(*args, float(k), float(lam)))
    xs = np.ascontiguousarray(lam, dtype=np.float64)
    return delta_array_kernel(*args, float(k), xs.ravel()).reshape(xs.shape)


def lambda_star(inst: MarketInstance, tol=0.0, k=None):
    """Bisection root of Delta on [0, 1].

    The default ``tol=0`` runs the bisection until the bracket is a pair of
    adjacent doubles, which puts the result on the floating-point fixed point
    of the update map. A positive ``tol`` stops earlier.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    if k is None:
        k = inst.burn.reference_k
    args = inst.kernel_args
    d0 = delta_kernel(*args, k, 0.0)
    d1 = delta_kernel(*args, k, 1.0)
    if not (d0 > 0.0 > d1):
        raise RuntimeError(f"Delta does not bracket a root: Delta(0)={d0}, Delta(1)={d1}")
    root = float(_bisect_root(*args, float(k), 0.0, 1.0, float(tol)))
    if tol == 0.0:
        # Delta flat at zero on an interval would make lambda* non-unique.
        eps = 1e-9
        if (root + eps < 1.0 and delta_kernel(*args, k, root + eps) == 0.0) or (
            root - eps > 0.0 and delta_kernel(*args, k, root - eps) == 0.0
        ):
            raise PreconditionError(
                "Delta vanishes on an interval; the interior fixed point is not unique"
            )
    return root


def step(inst: MarketInstance, rule, lam, eta_t, k=None):
    """One application of the update map with intensity eta_t."""
    rule = Rule.parse(rule)
    if k is None:
        k = inst.burn.reference_k
    return float(step_kernel(*inst.kernel_args, int(rule), float(lam), float(eta_t), float(k)))


@dataclass
class OrbitTrace:
    """lambda_t, Delta(lambda_t) and eta_t for t = 0..T (T steps taken)."""

    lambdas: np.ndarray
    deltas: np.ndarray
    etas: np.ndarray
    rule: Rule
    instance: dict
    ks: Optional[np.ndarray] = None

    @property
    def T(self):
        return len(self.lambdas) - 1

    def rows(self):
        for t in range(len(self.lambdas)):
            yield t, self.lambdas[t], self.deltas[t], self.etas[t]


def _check_start(rule, lambda0):
    if not rule.admissible(lambda0):
        raise PreconditionError(
            f"lambda0={lambda0} outside the admissible range {rule.admissible_range} "
            f"of rule {rule.label}"
        )


def simulate(inst: MarketInstance, rule, lambda0, eta, mev: MevSequence = None, T=1000,
             ks: Sequence[float] = None):
    """Iterate the update map T times from lambda0.

    ``ks`` overrides the burn factors drawn from the instance's policy; it is
    used by scenarios that manage their own random streams.
    """
    rule = Rule.parse(rule)
    lambda0 = float(lambda0)
    _check_start(rule, lambda0)
    if not eta > 0:
        raise PreconditionError(f"eta must be positive, got {eta}")
    if T < 1:
        raise PreconditionError(f"T must be at least 1, got {T}")
    mev = mev or MevSequence.constant()
    etas = float(eta) * mev.sequence(T + 1)
    if ks is None:
        ks = inst.burn.factors(T + 1)
    else:
        ks = np.asarray(ks, dtype=np.float64)
        if ks.shape != (T + 1,):
            raise PreconditionError(f"need {T + 1} burn factors, got {ks.shape}")
    constant = bool(mev.is_constant and inst.burn.mode != "sampled" and np.all(ks == ks[0]))
    lambdas = np.empty(T + 1)
    deltas = np.empty(T + 1)
    orbit_kernel(*inst.kernel_args, int(rule), lambda0, etas, ks, constant, lambdas, deltas)
    return OrbitTrace(lambdas, deltas, etas, rule, inst.describe(),
                      ks if inst.burn.mode != "none" else None)


def simulate_many(inst: MarketInstance, rule, lambda0s, eta, T, k=None):
    """Orbits from many starts at constant eta; returns an array of shape (n, T + 1)."""
    rule = Rule.parse(rule)
    starts = np.ascontiguousarray(lambda0s, dtype=np.float64).ravel()
    for lam in starts:
        _check_start(rule, float(lam))
    if k is None:
        k = inst.burn.reference_k
    out = np.empty((starts.shape[0], int(T) + 1))
    orbits_kernel(*inst.kernel_args, int(rule), starts, float(eta), float(k), out)
    return out


def potential(inst: MarketInstance, lam):
    """(ln lam - ln lambda*)^2, the Lyapunov function of the convergence regime."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any((lam_arr <= 0.0) | (lam_arr >= 1.0)):
        raise PreconditionError("the potential is defined only on (0, 1)")
    ls = inst.lambda_star
    # log1p of the relative gap is exact where lam is near lambda*
    val = np.log1p((lam_arr - ls) / ls) ** 2
    return float(val) if np.ndim(lam) == 0 else val


def delta_slope(inst: MarketInstance, lam, k=None):
    """Delta'(lam) = -f(lam) - w k g(k lam)."""
    if k is None:
        k = inst.burn.reference_k
    return -inst.users.pdf(lam) - inst.w * k * inst.miners.pdf(k * lam)


def rule_derivative(inst: MarketInstance, rule, lam, eta, k=None):
    """Derivative of the (projected) update map at lam.

    Where the projection is active the map is locally constant and the
    derivative is 0.
    """
    rule = Rule.parse(rule)
    if k is None:
        k = inst.burn.reference_k
    val = derivative_kernel(*inst.kernel_args, int(rule), float(lam), float(eta), float(k))
    if not math.isfinite(val):
        raise PreconditionError(f"a tolerance density diverges at lambda={lam}")
    return float(val)
