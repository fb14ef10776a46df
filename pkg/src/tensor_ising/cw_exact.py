"""Exact and asymptotic inference for the p-tensor Curie-Weiss model.

The law of the model depends on the spins only through the magnetization
``xbar = mean(x)``, so everything here is computed from the ``n + 1`` point
distribution of ``xbar``:

    P(xbar = m)  ∝  C(n, n(1+m)/2) * exp(n * (beta * m**p + h * m)).

The Hamiltonian uses the all-tuples convention ``n * xbar**p`` (diagonal index
tuples included).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import DomainError, NonExistenceError
from .reports import ConfidenceSet, EstimateReport

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class CwSpec:
    beta: float
    h: float
    p: int
    n: int

    def __post_init__(self):
        if not self.beta >= 0:
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if int(self.p) != self.p or self.p < 2:
            raise DomainError(f"p must be an integer >= 2, got {self.p}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be an integer >= 1, got {self.n}")


def magnetization_support(n):
    """The ``n + 1`` equally spaced values ``-1, -1 + 2/n, ..., 1``."""
    k = np.arange(n + 1)
    return (2.0 * k - n) / n


@lru_cache(maxsize=64)
def _log_binom(n):
    k = np.arange(n + 1)
    out = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    out.flags.writeable = False
    return out


def _log_weights(beta, h, p, n):
    m = magnetization_support(n)
    return _log_binom(n) + n * (beta * m**p + h * m)


def _logsumexp(a):
    amax = np.max(a)
    return amax + math.log(np.sum(np.exp(a - amax)))


@lru_cache(maxsize=4096)
def _pmf(beta, h, p, n):
    lw = _log_weights(beta, h, p, n)
    w = np.exp(lw - np.max(lw))
    w /= w.sum()
    w.flags.writeable = False
    return w


def log_partition(spec: CwSpec) -> float:
    """``log Z_n`` with ``Z_n = 2^-n * sum_x exp(beta*n*xbar^p + h*n*xbar)``."""
    lw = _log_weights(spec.beta, spec.h, spec.p, spec.n)
    return _logsumexp(lw) - spec.n * LOG2


@dataclass(frozen=True)
class MagnetizationPmf:
    support: np.ndarray
    probs: np.ndarray

    def as_dict(self):
        return {float(m): float(q) for m, q in zip(self.support, self.probs)}

    def mean(self, r=1):
        return float(np.dot(self.support**r, self.probs))


def magnetization_pmf(spec: CwSpec) -> MagnetizationPmf:
    probs = _pmf(spec.beta, spec.h, spec.p, spec.n)
    return MagnetizationPmf(magnetization_support(spec.n), probs)


def _moment(beta, h, p, n, r):
    return float(np.dot(magnetization_support(n) ** r, _pmf(beta, h, p, n)))


def moment(spec: CwSpec, r: int) -> float:
    """``E[xbar^r]`` under the exact law."""
    if r < 1:
        raise DomainError("r must be >= 1")
    return _moment(spec.beta, spec.h, spec.p, spec.n, r)


def sample_magnetization(spec: CwSpec, count: int, seed) -> np.ndarray:
    """I.i.d. exact draws of ``xbar`` by inverse-CDF sampling."""
    if count < 1:
        raise DomainError("count must be >= 1")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(_pmf(spec.beta, spec.h, spec.p, spec.n))
    idx = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    idx = np.minimum(idx, spec.n)
    return magnetization_support(spec.n)[idx]


# ---------------------------------------------------------------------------
# The function H(x) = beta x^p + h x - I(x)
# ---------------------------------------------------------------------------

def binary_entropy(x):
    """``I(x) = ((1+x)log(1+x) + (1-x)log(1-x)) / 2``; equals log 2 at ±1."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (special.xlogy(1 + x, 1 + x) + special.xlogy(1 - x, 1 - x))


def _falling(p, k):
    out = 1
    for j in range(k):
        out *= p - j
    return out


def _power_term(beta, p, x, order):
    c = _falling(p, order)
    if c == 0:
        return np.zeros_like(x)
    return beta * c * x ** (p - order)


@dataclass(frozen=True)
class HFunction:
    beta: float
    h: float
    p: int

    def __call__(self, x, order=0):
        return h_eval(self, x, order)


def h_eval(hf: HFunction, x, order=0):
    """H and its derivatives up to order 4. Works on scalars and arrays."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise DomainError("x must lie in [-1, 1]")
    if order >= 1 and np.any(np.abs(x) >= 1):
        raise DomainError("derivatives of H are undefined at |x| = 1")
    b, h, p = hf.beta, hf.h, hf.p
    poly = _power_term(b, p, x, order)
    if order == 0:
        out = poly + h * x - binary_entropy(x)
    elif order == 1:
        out = poly + h - np.arctanh(x)
    elif order == 2:
        out = poly - 1.0 / (1.0 - x * x)
    elif order == 3:
        out = poly - 2.0 * x / (1.0 - x * x) ** 2
    elif order == 4:
        out = poly - (2.0 + 6.0 * x * x) / (1.0 - x * x) ** 3
    else:
        raise DomainError("order must be in 0..4")
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Classification of parameter points
# ---------------------------------------------------------------------------

class PointKind(enum.Enum):
    REGULAR = "regular"
    SPECIAL = "special"
    WEAKLY_CRITICAL = "weakly_critical"
    STRONGLY_CRITICAL = "strongly_critical"

    @property
    def code(self):
        return {"regular": 0, "special": 1, "weakly_critical": 2,
                "strongly_critical": 3}[self.value]


@dataclass(frozen=True)
class PointClass:
    kind: PointKind
    maximizers: tuple  # ((m_k, H''(m_k)), ...), increasing in m_k
    weights: tuple
    values: tuple = field(default=(), compare=False)

    @property
    def locations(self):
        return tuple(m for m, _ in self.maximizers)

    @property
    def K(self):
        return len(self.maximizers)


def mixture_weights(locations, second_derivs):
    """Limit weights of the magnetization at the K global maximizers.

    ``p_k ∝ [(m_k^2 - 1) H''(m_k)]^{-1/2}``.
    """
    m = np.asarray(locations, dtype=float)
    d2 = np.asarray(second_derivs, dtype=float)
    raw = ((m * m - 1.0) * d2) ** -0.5
    return raw / raw.sum()


_U_CAP = 18.0  # tanh(18) = 1 - 4.6e-16


def _grid(hf, grid):
    """Scan points uniform in atanh-space.

    Every stationary point solves atanh(x) = beta p x^(p-1) + h, so
    |atanh(x)| <= beta p + |h| and this window contains all of them, however
    close to ±1 they sit.
    """
    span = min(_U_CAP, hf.beta * hf.p + abs(hf.h) + 1.0)
    return np.tanh(np.linspace(-span, span, grid))


def _polish_max(hf, lo, hi, x0):
    """Root of H' in a bracket around a local max, widened past rounding noise."""
    d1 = lambda t: h_eval(hf, t, 1)
    if not d1(lo) > 0 > d1(hi):
        return x0
    for _ in range(30):
        if d1(lo) > 1e-12 and d1(hi) < -1e-12:
            break
        w = hi - lo
        nlo, nhi = max(lo - w, -1 + 1e-16), min(hi + w, 1 - 1e-16)
        if not d1(nlo) > 0 > d1(nhi):
            break
        lo, hi = nlo, nhi
    return optimize.brentq(d1, lo, hi, xtol=1e-15, rtol=1e-15)


def local_maxima(hf: HFunction, grid=100_000):
    """All interior local maximizers of H, polished, with their H values."""
    xs = _grid(hf, grid)
    hs = h_eval(hf, xs)
    inner = np.flatnonzero((hs[1:-1] >= hs[:-2]) & (hs[1:-1] > hs[2:])) + 1
    out = []
    for i in inner:
        x = _polish_max(hf, xs[i - 1], xs[i + 1], xs[i])
        out.append((x, float(h_eval(hf, x))))
    return out


def _merge_plateaus(hf, cands, tol_f, grid):
    """Merge neighbouring maxima not separated by a valley deeper than tol_f."""
    xs = _grid(hf, grid)
    merged = [cands[0]]
    for x, v in cands[1:]:
        x0, v0 = merged[-1]
        between = xs[(xs > x0) & (xs < x)]
        floor = float(np.min(h_eval(hf, between))) if between.size else min(v, v0)
        if min(v, v0) - floor < tol_f:
            if v > v0:
                merged[-1] = (x, v)
        else:
            merged.append((x, v))
    return merged


def classify_point(beta, h, p, tol_x=1e-6, tol_f=None, grid=100_000, tol_special=1e-7):
    """Locate the global maximizers of H and classify ``(beta, h)``.

    Two maxima count as distinct when further apart than ``tol_x``; a local
    maximum is global when within ``tol_f`` of the supremum (default
    ``1e-9 * max(1, |sup H|)``). A unique maximizer with ``|H''| < tol_special``
    is special.
    """
    hf = HFunction(beta, h, p)
    cands = local_maxima(hf, grid)
    if not cands:
        raise DomainError("no interior maximizer found")
    sup = max(v for _, v in cands)
    if tol_f is None:
        tol_f = 1e-9 * max(1.0, abs(sup))
    cands = _merge_plateaus(hf, sorted(cands), tol_f, grid)
    sup = max(v for _, v in cands)
    glob = [(x, v) for x, v in cands if sup - v < tol_f]
    merged = [glob[0]]
    for x, v in glob[1:]:
        if x - merged[-1][0] > tol_x:
            merged.append((x, v))
        elif v > merged[-1][1]:
            merged[-1] = (x, v)
    locs = [x for x, _ in merged]
    d2 = [float(h_eval(hf, x, 2)) for x in locs]
    K = len(locs)
    if K == 1:
        kind = PointKind.SPECIAL if abs(d2[0]) < tol_special else PointKind.REGULAR
        weights = (1.0,)
    else:
        weights = tuple(float(w) for w in mixture_weights(locs, d2))
        symmetric = K == 3 and abs(locs[0] + locs[2]) < 10 * tol_x and abs(locs[1]) < 10 * tol_x
        if K == 3 and p % 2 == 0 and symmetric:
            kind = PointKind.STRONGLY_CRITICAL
        else:
            kind = PointKind.WEAKLY_CRITICAL
    return PointClass(kind, tuple(zip(locs, d2)), weights, tuple(v for _, v in merged))


def _sup_h_nonneg(beta, p, grid=2001):
    """sup over [0, 1] of beta x^p - I(x): grid scan, then bounded Brent polish
    around every grid-local maximum."""
    f = lambda t: beta * t**p - binary_entropy(t)
    xs = np.linspace(0.0, 1.0, grid)
    vals = f(xs)
    padded = np.concatenate(([-np.inf], vals, [-np.inf]))
    peaks = np.flatnonzero((padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]))
    best = float(vals.max())
    for i in peaks:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
        res = optimize.minimize_scalar(lambda t: -f(t), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-13})
        best = max(best, -float(res.fun))
    return best


def beta_tilde(p, tol=1e-10):
    """Smallest beta at which ``sup_x H_{beta,0,p}(x)`` turns positive (bisection)."""
    lo, hi = 0.0, 1.0  # beta = 1 > log 2 gives H(1) > 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _sup_h_nonneg(mid, p) > 1e-14:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def special_point(p):
    """Closed-form special point ``(beta_check, h_check)`` for ``p >= 3``."""
    if p < 3:
        raise DomainError("special_point requires p >= 3")
    b = (1.0 / (2 * (p - 1))) * (p / (p - 2)) ** ((p - 2) / 2)
    h = math.atanh(math.sqrt((p - 2) / p)) - b * p * ((p - 2) / p) ** ((p - 1) / 2)
    return b, h


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

def _monotone_root(f, target, lo=-50.0, hi=50.0, tol=1e-10, max_expand=40):
    """Solve increasing ``f(x) = target`` by bisection on an expanding bracket."""
    expand = 0
    while f(lo) > target and expand < max_expand:
        lo *= 2
        expand += 1
    while f(hi) < target and expand < max_expand:
        hi *= 2
        expand += 1
    if not f(lo) <= target <= f(hi):
        return None, 0, math.inf
    it = 0
    while True:
        it += 1
        mid = 0.5 * (lo + hi)
        val = f(mid)
        # residual alone is not enough where f is flat, so also require a tight bracket
        if val == target or (abs(val - target) < tol * 1e-2 and hi - lo < tol) \
                or hi - lo < 1e-15 * max(1.0, abs(mid)) or it > 400:
            return mid, it, abs(val - target)
        if val < target:
            lo = mid
        else:
            hi = mid


def mle_h(beta, p, n, xbar_obs, tol=1e-10) -> EstimateReport:
    """Solve ``E_{beta,h}[xbar] = xbar_obs`` for h (beta known)."""
    if abs(xbar_obs) >= 1:
        raise NonExistenceError("ML estimate of h is infinite when |xbar| = 1",
                                math.copysign(math.inf, xbar_obs))
    root, it, res = _monotone_root(lambda h: _moment(beta, h, p, n, 1), xbar_obs, tol=tol)
    if root is None:
        raise NonExistenceError("no finite root", math.copysign(math.inf, xbar_obs))
    se = None
    d2 = float(h_eval(HFunction(beta, root, p), xbar_obs, 2))
    if d2 < 0:
        se = math.sqrt(-d2 / n)
    return EstimateReport(root, se, None, it, res)


def mle_beta(h, p, n, xbar_obs, tol=1e-10) -> EstimateReport:
    """Solve ``E_{beta,h}[xbar^p] = xbar_obs^p`` for beta (h known)."""
    if abs(xbar_obs) >= 1:
        raise NonExistenceError("ML estimate of beta is infinite when |xbar| = 1", math.inf)
    target = xbar_obs**p
    supp_p = magnetization_support(n) ** p
    lo_lim, hi_lim = float(supp_p.min()), float(supp_p.max())
    if target <= lo_lim:
        raise NonExistenceError("xbar^p at the infimum of the support: estimate is -inf", -math.inf)
    if target >= hi_lim:
        raise NonExistenceError("xbar^p at the supremum of the support: estimate is +inf", math.inf)
    root, it, res = _monotone_root(lambda b: _moment(b, h, p, n, p), target, tol=tol)
    if root is None:
        raise NonExistenceError("no finite root", math.inf)
    se = None
    if xbar_obs != 0:
        d2 = float(h_eval(HFunction(root, h, p), xbar_obs, 2))
        if d2 < 0:
            se = abs(xbar_obs) ** (1 - p) / p * math.sqrt(-d2 / n)
    return EstimateReport(root, se, None, it, res)


# ---------------------------------------------------------------------------
# Critical curve and confidence sets
# ---------------------------------------------------------------------------

def _convex_intervals(beta, p, grid=200_001):
    """Maximal intervals of (-1, 1) on which H'' > 0 (independent of h)."""
    hf = HFunction(beta, 0.0, p)
    xs = np.tanh(np.linspace(-_U_CAP, _U_CAP, grid))
    pos = h_eval(hf, xs, 2) > 0
    if not pos.any():
        return []
    edges = np.flatnonzero(np.diff(pos.astype(np.int8)))
    f2 = lambda t: h_eval(hf, t, 2)
    bounds = [optimize.brentq(f2, xs[i], xs[i + 1], xtol=1e-14) for i in edges]
    starts = ([xs[0]] if pos[0] else []) + [b for b, i in zip(bounds, edges) if not pos[i]]
    ends = [b for b, i in zip(bounds, edges) if pos[i]] + ([xs[-1]] if pos[-1] else [])
    return list(zip(starts, ends))


def _global_argmax(beta, h, p, grid=20_001):
    hf = HFunction(beta, h, p)
    cands = local_maxima(hf, grid)
    if not cands:
        xs = _grid(hf, grid)
        return float(xs[np.argmax(h_eval(hf, xs))])
    return max(cands, key=lambda c: c[1])[0]


@lru_cache(maxsize=1024)
def critical_h_values(beta, p, tol=1e-6):
    """``S_p(beta)``: the field values h with ``(beta, h)`` on the closed critical curve.

    The global maximizer is nondecreasing in h and never lies where H'' > 0,
    so it jumps across each convex interval exactly once; the jump locations
    are found by bisection.
    """
    if beta * p > 17:
        raise DomainError("maximizers of H are not resolvable in double precision for beta*p > 17")
    found = []
    for a, b in _convex_intervals(beta, p):
        mid = 0.5 * (a + b)
        span = beta * p + 5.0 + math.atanh(min(max(abs(a), abs(b)), 1 - 1e-12))
        lo, hi = -span, span
        while hi - lo > tol:
            hm = 0.5 * (lo + hi)
            if _global_argmax(beta, hm, p) > mid:
                hi = hm
            else:
                lo = hm
        found.append(0.5 * (lo + hi))
    if p == 2:
        if abs(beta - 0.5) <= tol:
            found.append(0.0)
    else:
        bc, hc = special_point(p)
        if abs(beta - bc) <= tol:
            found.append(hc)
            if p % 2 == 0:
                found.append(-hc)
    out = []
    for v in sorted(found):
        if not out or v - out[-1] > 10 * tol:
            out.append(v)
    return tuple(out)


@lru_cache(maxsize=1024)
def critical_beta_values(h, p, tol=1e-6):
    """``T_p(h)`` for ``h != 0``: empty or a single inverse temperature."""
    if h == 0:
        raise DomainError("T_p(h) is defined for h != 0")
    if p == 2:
        return ()
    bc, hc = special_point(p)
    target = abs(h) if p % 2 == 0 else h
    if abs(target - hc) <= tol:
        return (bc,)
    if target > hc:
        return ()

    def arm(b):
        vals = critical_h_values(b, p, tol)
        return max(vals) if vals else hc

    lo = bc
    if p % 2 == 0:
        hi = beta_tilde(p, tol=1e-12)
    else:
        cap = 17.0 / p
        hi = min(max(1.0, 2 * abs(h) + 1.0), cap)
        while arm(hi) > target:
            if hi >= cap:
                raise DomainError("critical beta lies beyond the resolvable range beta*p <= 17")
            hi = min(2 * hi, cap)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if arm(mid) > target:
            lo = mid
        else:
            hi = mid
    return (0.5 * (lo + hi),)


def _z(level):
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2))


def confidence_interval_h(beta, p, n, xbar_obs, h_hat=None, level=0.95) -> ConfidenceSet:
    """``I_reg`` around the ML estimate of h, joined with ``S_p(beta)``."""
    z = _z(level)
    if h_hat is None:
        h_hat = mle_h(beta, p, n, xbar_obs).estimate
    d2 = float(h_eval(HFunction(beta, 0.0, p), xbar_obs, 2))
    if d2 >= 0:
        raise DomainError(f"H''(xbar) = {d2} >= 0: regular interval undefined")
    half = math.sqrt(-d2 / n) * z
    atoms = tuple(s for s in critical_h_values(beta, p) if not h_hat - half <= s <= h_hat + half)
    return ConfidenceSet(h_hat - half, h_hat + half, atoms)


def confidence_interval_beta(h, p, n, xbar_obs, beta_hat=None, level=0.95) -> ConfidenceSet:
    """``J_reg`` around the ML estimate of beta, joined with ``T_p(h)``."""
    if h == 0:
        raise DomainError("beta confidence sets require h != 0")
    if xbar_obs == 0:
        raise DomainError("xbar = 0: interval width undefined")
    z = _z(level)
    if beta_hat is None:
        beta_hat = mle_beta(h, p, n, xbar_obs).estimate
    d2 = float(h_eval(HFunction(beta_hat, h, p), xbar_obs, 2))
    if d2 >= 0:
        raise DomainError(f"H''(xbar) = {d2} >= 0: regular interval undefined")
    half = abs(xbar_obs) ** (1 - p) / p * math.sqrt(-d2 / n) * z
    atoms = tuple(t for t in critical_beta_values(h, p)
                  if not beta_hat - half <= t <= beta_hat + half)
    return ConfidenceSet(beta_hat - half, beta_hat + half, atoms)


# ---------------------------------------------------------------------------
# Non-Gaussian limit at special points
# ---------------------------------------------------------------------------

class QuarticExpDensity:
    """Density ∝ exp(H4 x^4 / 24 + s x), normalized by adaptive quadrature."""

    def __init__(self, H4, shift):
        if not H4 < 0:
            raise DomainError("H4 must be negative")
        self.H4 = float(H4)
        self.shift = float(shift)
        self.norm, _ = integrate.quad(self._kernel, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12)
        a = -self.H4 / 24.0
        self._scale = a ** -0.25
        # CDF table for fast vectorized evaluation
        lim = 12.0 * self._scale + abs(self.shift) * self._scale**4
        self._xs = np.linspace(-lim, lim, 200_001)
        pdf = self.pdf(self._xs)
        cdf = integrate.cumulative_simpson(pdf, x=self._xs, initial=0.0)
        self._cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)

    def _kernel(self, x):
        return np.exp(self.H4 * x**4 / 24.0 + self.shift * x)

    def pdf(self, x):
        return self._kernel(np.asarray(x, dtype=float)) / self.norm

    def __call__(self, x):
        return self.pdf(x)

    def cdf(self, x):
        return np.interp(x, self._xs, self._cdf, left=0.0, right=1.0)

    def mean(self):
        val, _ = integrate.quad(lambda t: t * self.pdf(t), -np.inf, np.inf, epsabs=1e-12)
        return val

    @staticmethod
    def closed_form_constant(H4):
        """Normalizing constant ``2/Gamma(1/4) * (-H4/24)^{1/4}`` of the unshifted case."""
        return 2.0 / math.gamma(0.25) * (-H4 / 24.0) ** 0.25


def limit_density_special(p, beta_bar, h_bar, m_star, H4) -> QuarticExpDensity:
    """Limit law of ``n^{1/4}(xbar - m_*)`` at a special point under local perturbation."""
    return QuarticExpDensity(H4, beta_bar * p * m_star ** (p - 1) + h_bar)
