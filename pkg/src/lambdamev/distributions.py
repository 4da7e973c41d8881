"""Tolerance distributions on [0, 1].

Users' tolerances F and miners' tolerances G are laws on the unit interval.
Three families are supported: Beta, Uniform on a sub-interval, and a Normal
truncated to [0, 1] and renormalized so that cdf(0) = 0 and cdf(1) = 1.

Every distribution is compiled down to an integer code plus a small parameter
vector so the numba kernels in this module (and in ``dynamics``) can evaluate
CDFs inside tight loops. Outside [0, 1] the CDF is extended by 0 below and 1
above, which keeps the unprojected update rules well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import PreconditionError

UNIFORM = 0
BETA = 1
TRUNCNORM = 2

_FPMIN = 1e-300
_CF_EPS = 1e-16
_CF_MAXIT = 500
_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def log_beta(a, b):
    """log B(a, b) through the log-gamma function."""
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


@njit(cache=True)
def _betacf(a, b, x):
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < _CF_EPS:
            break
    return h


@njit(cache=True)
def betainc_regularized(a, b, lbeta, x):
    """I_x(a, b), the regularized incomplete beta function.

    ``lbeta`` is log B(a, b), passed in so callers can precompute it once.
    """
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - lbeta)
    # The continued fraction converges fast only left of the mean-ish split.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


@njit(cache=True)
def _std_normal_cdf(z):
    return 0.5 * math.erfc(-z / _SQRT2)


@njit(cache=True)
def cdf_kernel(code, par, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    if code == UNIFORM:
        lo = par[0]
        hi = par[1]
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        return (x - lo) / (hi - lo)
    if code == BETA:
        return betainc_regularized(par[0], par[1], par[2], x)
    # truncated normal: par = (mu, sigma, Phi at 0, mass on [0, 1])
    v = (_std_normal_cdf((x - par[0]) / par[1]) - par[2]) / par[3]
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@njit(cache=True)
def pdf_kernel(code, par, x):
    if x < 0.0 or x > 1.0:
        return 0.0
    if code == UNIFORM:
        if x < par[0] or x > par[1]:
            return 0.0
        return 1.0 / (par[1] - par[0])
    if code == BETA:
        a = par[0]
        b = par[1]
        if x == 0.0:
            if a < 1.0:
                return math.inf
            if a == 1.0:
                return math.exp(-par[2])
            return 0.0
        if x == 1.0:
            if b < 1.0:
                return math.inf
            if b == 1.0:
                return math.exp(-par[2])
            return 0.0
        return math.exp((a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x) - par[2])
    z = (x - par[0]) / par[1]
    return math.exp(-0.5 * z * z) / (_SQRT2PI * par[1] * par[3])


@njit(cache=True)
def _cdf_array(code, par, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = cdf_kernel(code, par, xs[i])
    return out


@njit(cache=True)
def _pdf_array(code, par, xs):
    out = np.empty(xs.shape[0])
    for i in range(xs.shape[0]):
        out[i] = pdf_kernel(code, par, xs[i])
    return out


@dataclass(frozen=True)
class ToleranceDistribution:
    """Base class; concrete laws are :class:`Beta`, :class:`Uniform` and
    :class:`TruncatedNormal`. Instances are immutable."""

    code: int = field(init=False, repr=False, compare=False)
    params: np.ndarray = field(init=False, repr=False, compare=False)

    kind = "abstract"

    def _set_kernel(self, code, values):
        par = np.zeros(4)
        par[: len(values)] = values
        par.setflags(write=False)
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "params", par)

    def _eval(self, scalar_kernel, array_kernel, x):
        if np.ndim(x) == 0:
            return float(scalar_kernel(self.code, self.params, float(x)))
        xs = np.ascontiguousarray(x, dtype=np.float64)
        return array_kernel(self.code, self.params, xs.ravel()).reshape(xs.shape)

    def cdf(self, x):
        """P[tolerance <= x]; accepts scalars or arrays."""
        return self._eval(cdf_kernel, _cdf_array, x)

    def survival(self, x):
        return 1.0 - self.cdf(x)

    def pdf(self, x):
        """Density at x. Raises where the density diverges (Beta shapes < 1
        at the endpoints)."""
        values = self._eval(pdf_kernel, _pdf_array, x)
        if np.any(np.isinf(values)):
            raise PreconditionError(
                f"density of {self!r} diverges at the requested point(s)"
            )
        return values

    def to_dict(self):
        raise NotImplementedError

    @staticmethod
    def from_dict(record):
        """Build a distribution from its tagged config record."""
        kind = record.get("kind")
        if kind == "beta":
            return Beta(float(record["a"]), float(record["b"]))
        if kind == "uniform":
            return Uniform(float(record["lo"]), float(record["hi"]))
        if kind == "truncnormal":
            return TruncatedNormal(float(record["mu"]), float(record["sigma2"]))
        raise ValueError(f"unknown distribution kind {kind!r}")


@dataclass(frozen=True)
class Beta(ToleranceDistribution):
    a: float = 1.0
    b: float = 1.0

    kind = "beta"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0) or not math.isfinite(self.a + self.b):
            raise ValueError(f"Beta shapes must be positive, got a={self.a}, b={self.b}")
        self._set_kernel(BETA, (self.a, self.b, log_beta(self.a, self.b)))

    @property
    def log_norm(self):
        """log B(a, b), the log of the density's normalization constant."""
        return self.params[2]

    def to_dict(self):
        return {"kind": "beta", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Uniform(ToleranceDistribution):
    lo: float = 0.0
    hi: float = 1.0

    kind = "uniform"

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(
                f"Uniform needs 0 <= lo < hi <= 1, got lo={self.lo}, hi={self.hi}"
            )
        self._set_kernel(UNIFORM, (self.lo, self.hi))

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class TruncatedNormal(ToleranceDistribution):
    """Normal(mu, sigma2) conditioned on [0, 1]."""

    mu: float = 0.5
    sigma2: float = 0.01

    kind = "truncnormal"

    def __post_init__(self):
        if not self.sigma2 > 0 or not math.isfinite(self.mu):
            raise ValueError(f"need sigma2 > 0 and finite mu, got {self.mu}, {self.sigma2}")
        sigma = math.sqrt(self.sigma2)
        at0 = 0.5 * math.erfc(self.mu / sigma / _SQRT2)
        at1 = 0.5 * math.erfc(-(1.0 - self.mu) / sigma / _SQRT2)
        mass = at1 - at0
        if not mass > 0:
            raise ValueError("truncation leaves no probability mass on [0, 1]")
        self._set_kernel(TRUNCNORM, (self.mu, sigma, at0, mass))

    def to_dict(self):
        return {"kind": "truncnormal", "mu": self.mu, "sigma2": self.sigma2}


@dataclass(frozen=True)
class KernelMax:
    argmax: float
    value: float


def beta_kernel(a, b, x):
    """The unnormalized Beta density x^(a-1) (1-x)^(b-1)."""
    return x ** (a - 1.0) * (1.0 - x) ** (b - 1.0)


def beta_kernel_max(a, b, p, q):
    """Maximize x^(a-1) (1-x)^(b-1) over [p, q] in closed form.

    The kernel's only interior critical point is zeta = (1-a)/(2-a-b). When
    a + b < 2 it is a minimum, so the maximum sits on an endpoint; when
    a + b > 2 it is a maximum; when a + b = 2 the kernel is monotone.
    """
    if not 0.0 < p < q < 1.0:
        raise ValueError(f"need 0 < p < q < 1, got p={p}, q={q}")
    f = lambda x: beta_kernel(a, b, x)  # noqa: E731
    s = a + b
    if s == 2.0:
        if a > 1.0:
            return KernelMax(q, f(q))
        if a < 1.0:
            return KernelMax(p, f(p))
        return KernelMax(p, 1.0)
    zeta = (1.0 - a) / (2.0 - s)
    if s < 2.0:
        if zeta < p:
            return KernelMax(q, f(q))
        if zeta > q:
            return KernelMax(p, f(p))
        fp, fq = f(p), f(q)
        return KernelMax(p, fp) if fp >= fq else KernelMax(q, fq)
    if zeta < p:
        return KernelMax(p, f(p))
    if zeta > q:
        return KernelMax(q, f(q))
    return KernelMax(zeta, f(zeta))


def beta_density_max(dist: Beta, p, q):
    """Largest value of a Beta density on [p, q]."""
    km = beta_kernel_max(dist.a, dist.b, p, q)
    return km.value * math.exp(-dist.log_norm)
