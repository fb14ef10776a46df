"""Random hypergraph generators and mean-field estimability thresholds.

The threshold of a block model is the smallest ``beta`` for which

    phi_beta(t) = beta * sum_{j_1..j_p} theta[j] * prod_l lam[j_l] t[j_l] - sum_j lam[j] I(t_j)

takes a positive value somewhere on ``[0, 1]^K``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .cw_exact import binary_entropy
from .errors import ParseError, SolverError, SpecError
from .tensor import SparseTensor

_U_MAX = 18.0


@dataclass(frozen=True)
class HsbmSpec:
    """Block proportions ``lam`` (length K) and a symmetric K^p probability tensor."""

    p: int
    lam: tuple
    theta: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        theta = np.asarray(self.theta, dtype=float)
        k = len(lam)
        if self.p < 2:
            raise SpecError("p must be at least 2")
        if k < 1 or np.any(lam < 0) or abs(lam.sum() - 1) > 1e-12:
            raise SpecError("block proportions must be nonnegative and sum to 1")
        if theta.shape != (k,) * self.p:
            raise SpecError(f"theta must have shape {(k,) * self.p}, got {theta.shape}")
        if np.any(theta < 0) or np.any(theta > 1):
            raise SpecError("theta entries must lie in [0, 1]")
        # adjacent transpositions generate every permutation
        for a in range(self.p - 1):
            if not np.allclose(theta, np.swapaxes(theta, a, a + 1), atol=1e-12, rtol=0):
                raise SpecError("theta must be invariant under index permutation")
        theta = theta.copy()
        theta.setflags(write=False)
        object.__setattr__(self, "lam", tuple(float(v) for v in lam))
        object.__setattr__(self, "theta", theta)

    @property
    def K(self):
        return len(self.lam)

    @classmethod
    def erdos_renyi(cls, p, theta):
        return cls(p, (1.0,), np.full((1,) * p, float(theta)))


def symmetrize(theta):
    """Average a K^p array over all axis permutations."""
    theta = np.asarray(theta, dtype=float)
    perms = list(itertools.permutations(range(theta.ndim)))
    return sum(theta.transpose(q) for q in perms) / len(perms)


def read_hsbm_spec(path) -> HsbmSpec:
    """Text format: ``p K``, then K proportions, then K^p theta entries, row-major."""
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0]
            tokens += [(t, lineno) for t in line.split()]
    if len(tokens) < 2:
        raise ParseError("missing 'p K' header", tokens[-1][1] if tokens else None)
    try:
        p, k = int(tokens[0][0]), int(tokens[1][0])
    except ValueError:
        raise ParseError("header must be two integers", tokens[0][1]) from None
    need = 2 + k + k ** p
    if len(tokens) != need:
        last = tokens[-1][1]
        raise ParseError(f"expected {need - 2} numbers after the header, found {len(tokens) - 2}", last)
    vals = []
    for tok, lineno in tokens[2:]:
        try:
            vals.append(float(tok))
        except ValueError:
            raise ParseError(f"not a number: {tok!r}", lineno) from None
    lam = np.array(vals[:k])
    theta = symmetrize(np.array(vals[k:]).reshape((k,) * p))
    return HsbmSpec(p, lam, theta)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _combinations(n, p):
    flat = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), p)),
                       dtype=np.int64, count=math.comb(n, p) * p)
    return flat.reshape(-1, p)


def block_labels(lam, n):
    """Contiguous blocks: 1-based node i is in block j iff n*c_{j-1} < i <= n*c_j."""
    cum = np.cumsum(lam)
    cum[-1] = 1.0
    return np.searchsorted(n * cum, np.arange(1, n + 1), side="left").astype(np.int64)


def gen_sk(p, n, seed) -> SparseTensor:
    """p-spin SK couplings: one standard normal per p-subset, scaled by n**((1-p)/2)."""
    if p < 2 or n < p:
        raise SpecError("need p >= 2 and n >= p")
    rng = np.random.default_rng(seed)
    idx = _combinations(n, p)
    g = rng.standard_normal(len(idx))
    return SparseTensor(p, n, idx, g * n ** ((1 - p) / 2))


def gen_hsbm(spec: HsbmSpec, n, seed) -> SparseTensor:
    """Sample a block-model hypergraph with coefficient n**(1-p) on each present edge."""
    p = spec.p
    if n < p:
        raise SpecError("need n >= p")
    rng = np.random.default_rng(seed)
    idx = _combinations(n, p)
    labels = block_labels(np.asarray(spec.lam), n)
    prob = spec.theta[tuple(labels[idx[:, k]] for k in range(p))]
    keep = rng.random(len(idx)) < prob
    kept = idx[keep]
    return SparseTensor(p, n, kept, np.full(len(kept), float(n) ** (1 - p)))


def gen_er(p, n, theta, seed) -> SparseTensor:
    return gen_hsbm(HsbmSpec.erdos_renyi(p, theta), n, seed)


def gen_partite(p, sizes, theta, seed) -> SparseTensor:
    """Random p-partite hypergraph: each transversal tuple kept with probability theta."""
    sizes = [int(s) for s in sizes]
    if len(sizes) != p or any(s < 1 for s in sizes):
        raise SpecError("need p positive part sizes")
    if not 0 <= theta <= 1:
        raise SpecError("theta must lie in [0, 1]")
    n = sum(sizes)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    parts = [np.arange(s, s + k) for s, k in zip(starts, sizes)]
    grids = np.meshgrid(*parts, indexing="ij")
    idx = np.stack([g.reshape(-1) for g in grids], axis=1)
    rng = np.random.default_rng(seed)
    kept = idx[rng.random(len(idx)) < theta]
    return SparseTensor(p, n, kept, np.full(len(kept), float(n) ** (1 - p)))


def triangle_tensor(graph: SparseTensor, scale=1.0) -> SparseTensor:
    """3-tensor with coefficient ``scale`` on every triangle of a graph."""
    if graph.p != 2:
        raise SpecError("triangle tensor needs a p = 2 graph")
    nbrs = [set() for _ in range(graph.n)]
    for a, b in graph.index:
        nbrs[a].add(int(b))
        nbrs[b].add(int(a))
    tri = []
    for a, b in graph.index:
        for c in nbrs[a] & nbrs[b]:
            if c > b:
                tri.append((int(a), int(b), c))
    idx = np.array(tri, dtype=np.int64).reshape(-1, 3)
    return SparseTensor(3, graph.n, idx, np.full(len(idx), float(scale)))


# ---------------------------------------------------------------------------
# Variational threshold
# ---------------------------------------------------------------------------

def _contract(theta, w, times):
    out = theta
    for _ in range(times):
        out = out @ w
    return out


def phi_eval(spec: HsbmSpec, beta, t) -> float:
    t = np.asarray(t, dtype=float)
    lam = np.asarray(spec.lam)
    w = lam * t
    poly = float(_contract(spec.theta, w, spec.p))
    return beta * poly - float(np.dot(lam, binary_entropy(t)))


def phi_batch(spec: HsbmSpec, beta, T) -> np.ndarray:
    """``phi_beta`` at every row of an (M, K) array."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    lam = np.asarray(spec.lam)
    W = T * lam
    out = np.tensordot(W, spec.theta, axes=([1], [0]))
    for _ in range(spec.p - 1):
        out = np.einsum("mk,mk...->m...", W, out)
    return beta * out - binary_entropy(T) @ lam


def phi_grad(spec: HsbmSpec, beta, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    lam = np.asarray(spec.lam)
    w = lam * t
    inner = _contract(spec.theta, w, spec.p - 1)
    return beta * spec.p * lam * inner - lam * np.arctanh(t)


@dataclass(frozen=True)
class ThresholdResult:
    beta_star: float
    argmax_t: tuple
    tolerance: float
    sup_above: float


def _coordinate_grid():
    # uniform step 1e-3 plus points packed toward 1, where sharp maxima live
    return np.unique(np.concatenate([np.linspace(0, 1, 1001)[:-1],
                                     np.tanh(np.linspace(0, 18, 2001))]))


_CGRID = _coordinate_grid()


def _polish(spec, beta, t0):
    # optimize in u = atanh(t) so maxima pressed against t = 1 stay well scaled
    k = spec.K

    def neg(u):
        t = np.tanh(u)
        return -phi_eval(spec, beta, t), -phi_grad(spec, beta, t) * (1 - t * t)

    u0 = np.arctanh(np.clip(t0, 0, np.tanh(_U_MAX)))
    res = optimize.minimize(neg, u0, jac=True, bounds=[(0.0, _U_MAX)] * k, method="L-BFGS-B",
                            options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
    t = np.tanh(res.x)
    return t, phi_eval(spec, beta, t)


def _coordinate_ascent(spec, beta, t, sweeps=20):
    best = phi_eval(spec, beta, t)
    for _ in range(sweeps):
        before = best
        for j in range(spec.K):
            trial = np.repeat(t[None, :], len(_CGRID), axis=0)
            trial[:, j] = _CGRID
            vals = phi_batch(spec, beta, trial)
            i = int(np.argmax(vals))
            if vals[i] > best:
                best = float(vals[i])
                t = trial[i]
        if best - before <= 1e-15:
            break
    return t, best


def sup_phi(spec: HsbmSpec, beta, starts=8, seed=0):
    """Maximum of phi_beta over [0, 1]^K and a maximizer."""
    k = spec.K
    rng = np.random.default_rng(seed)
    inits = [np.zeros(k), np.full(k, 0.5), np.full(k, 0.99)]
    inits += [np.eye(k)[j] * 0.99 for j in range(k)] if k > 1 else []
    inits += [rng.random(k) for _ in range(starts)] if k > 1 else []
    best_t, best = np.zeros(k), 0.0
    for t0 in inits:
        t, val = _coordinate_ascent(spec, beta, t0)
        t, val2 = _polish(spec, beta, t)
        if max(val, val2) > best:
            best, best_t = max(val, val2), t
        if k == 1:
            break
    if not np.isfinite(best):
        raise SolverError("inner maximization produced a non-finite value")
    return best, best_t


def threshold_hsbm(spec: HsbmSpec, tol=1e-6, eps=1e-13, beta_max=1e8) -> ThresholdResult:
    """Bisection on beta for the event ``sup phi_beta > eps``."""
    if np.all(spec.theta == 0):
        raise SolverError("theta is identically zero; no finite threshold")
    lo, hi = 0.0, 1.0
    while sup_phi(spec, hi)[0] <= eps:
        lo, hi = hi, 2 * hi
        if hi > beta_max:
            raise SolverError("no threshold below beta_max")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sup_phi(spec, mid)[0] > eps:
            hi = mid
        else:
            lo = mid
    val, t = sup_phi(spec, hi)
    return ThresholdResult(0.5 * (lo + hi), tuple(float(v) for v in t), tol, val)


def threshold_er(p, theta=1.0, tol=1e-6) -> float:
    return threshold_hsbm(HsbmSpec.erdos_renyi(p, theta), tol).beta_star


def equipartite_spec(p, theta) -> HsbmSpec:
    """K = p equal blocks; only transversal tuples carry probability.

    Transversal entries hold ``theta / p!`` so that the p! orderings of one
    vertex set together count the edge once.
    """
    th = np.zeros((p,) * p)
    for perm in itertools.permutations(range(p)):
        th[perm] = theta / math.factorial(p)
    return HsbmSpec(p, (1.0 / p,) * p, th)


def threshold_equipartite(p, theta=1.0, tol=1e-6) -> float:
    return threshold_hsbm(equipartite_spec(p, theta), tol).beta_star


def cw_threshold_table(p_max, tol=1e-6):
    if p_max < 2:
        raise SpecError("p_max must be at least 2")
    return [(p, threshold_er(p, 1.0, tol)) for p in range(2, p_max + 1)]
