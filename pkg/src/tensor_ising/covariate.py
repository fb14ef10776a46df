"""L1-penalized pseudolikelihood for the Ising model with node covariates.

The model is ``P(x) ∝ exp(theta' sum_i x_i Z_i + (beta / 2) x' A x)`` with a
symmetric, zero-diagonal interaction matrix ``A``. Spin ``i`` given the rest
is +1 with probability ``sigmoid(2 a_i)``, where
``a_i = beta * (A x)_i + theta' Z_i``. The parameter vector is
``gamma = (beta, theta_1, ..., theta_d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import DimensionMismatch, ParseError, SolverError, SpecError
from .tensor import as_spins

LOG2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class CovariateModel:
    """Interaction matrix ``A`` (stored CSR), covariates ``Z`` (n x d) and parameters."""

    A: sparse.csr_matrix
    Z: np.ndarray
    beta: float = 0.0
    theta: np.ndarray = None

    def __post_init__(self):
        A = sparse.csr_matrix(self.A, dtype=np.float64)
        Z = np.asarray(self.Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch("A must be square")
        if Z.shape[0] != n:
            raise DimensionMismatch(f"Z has {Z.shape[0]} rows, A has {n}")
        if np.any(A.diagonal() != 0):
            raise SpecError("A must have a zero diagonal")
        if abs(A - A.T).max() > 1e-12 if A.nnz else False:
            raise SpecError("A must be symmetric")
        theta = np.zeros(Z.shape[1]) if self.theta is None else np.asarray(self.theta, dtype=float)
        if theta.shape != (Z.shape[1],):
            raise DimensionMismatch("theta length must equal the number of covariates")
        A.sort_indices()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "theta", theta)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.Z.shape[1]

    @property
    def gamma(self):
        return np.concatenate([[self.beta], self.theta])

    def with_gamma(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        return CovariateModel(self.A, self.Z, gamma[0], gamma[1:])


def _parts(model, x, gamma):
    x = as_spins(x, model.n).astype(np.float64)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (model.d + 1,):
        raise DimensionMismatch(f"gamma must have length {model.d + 1}")
    m = model.A @ x
    a = gamma[0] * m + model.Z @ gamma[1:]
    return x, m, a


def _logcosh(a):
    a = np.abs(a)
    return a + np.log1p(np.exp(-2 * a)) - LOG2


def neg_log_pl(model, x, gamma) -> float:
    """Negative mean log pseudolikelihood ``L_N(gamma)``."""
    x, _, a = _parts(model, x, gamma)
    return LOG2 - float(np.mean(x * a - _logcosh(a)))


def grad_neg_log_pl(model, x, gamma) -> np.ndarray:
    x, m, a = _parts(model, x, gamma)
    r = x - np.tanh(a)
    n = model.n
    return -np.concatenate([[m @ r], model.Z.T @ r]) / n


def _soft(v, thr):
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def kkt_residual(grad, gamma, lam) -> float:
    """Largest violation of the L1 optimality conditions."""
    nz = gamma != 0
    res = np.where(nz, np.abs(grad + lam * np.sign(gamma)), np.maximum(np.abs(grad) - lam, 0.0))
    return float(res.max()) if len(res) else 0.0


@dataclass
class PenalizedFit:
    gamma_hat: np.ndarray
    lam: float
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    kkt: float = math.inf

    @property
    def support(self):
        return tuple(int(j) for j in np.flatnonzero(self.gamma_hat))

    def to_dict(self):
        return {"beta": float(self.gamma_hat[0]), "theta": [float(v) for v in self.gamma_hat[1:]],
                "lambda": self.lam, "converged": self.converged, "iterations": self.iterations,
                "kkt_residual": self.kkt, "support": list(self.support),
                "objective": self.objective_trace[-1] if self.objective_trace else None}


def penalty_level(delta, n, d):
    return delta * math.sqrt(math.log(d + 1) / n)


def fit_penalized(model, x, delta=1.0, lam=None, max_iter=20_000, tol=1e-12, kkt_tol=1e-7,
                  step0=1.0) -> PenalizedFit:
    """Minimize ``L_N(gamma) + lam * ||gamma||_1`` by proximal gradient descent.

    Each step backtracks from the previous step size by halving until the
    quadratic upper bound holds. Stops when the relative objective change is
    below ``tol`` and the KKT residual is below ``kkt_tol``.
    """
    if model.n < 2 or model.d < 1:
        raise SpecError("need n >= 2 and d >= 1")
    if lam is None:
        lam = penalty_level(delta, model.n, model.d)
    xs = as_spins(x, model.n)
    g = np.zeros(model.d + 1)
    f = neg_log_pl(model, xs, g)
    trace = [f + lam * np.abs(g).sum()]
    step = step0
    grad = grad_neg_log_pl(model, xs, g)
    kkt = kkt_residual(grad, g, lam)
    it = 0
    converged = kkt == 0.0
    while not converged and it < max_iter:
        it += 1
        while True:
            cand = _soft(g - step * grad, step * lam)
            diff = cand - g
            fc = neg_log_pl(model, xs, cand)
            if fc <= f + grad @ diff + (diff @ diff) / (2 * step) + 1e-15 * abs(f):
                break
            step *= 0.5
            if step < 1e-20:
                raise SolverError("backtracking step size underflow")
        g, f = cand, fc
        obj = f + lam * np.abs(g).sum()
        rel = abs(trace[-1] - obj) / max(1.0, abs(obj))
        trace.append(obj)
        grad = grad_neg_log_pl(model, xs, g)
        kkt = kkt_residual(grad, g, lam)
        converged = rel < tol and kkt < kkt_tol or kkt < 1e-3 * kkt_tol
        step = min(step * 2.0, step0) if step < step0 else step
    return PenalizedFit(g, lam, trace, converged, it, kkt)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _cov_sweeps(indptr, indices, data, x, m, beta, ext, u):
    n = len(x)
    for s in range(u.shape[0]):
        for i in range(n):
            a = beta * m[i] + ext[i]
            prob_up = 1.0 / (1.0 + math.exp(-2.0 * a))
            new = 1.0 if u[s, i] < prob_up else -1.0
            if new != x[i]:
                delta = new - x[i]
                for t in range(indptr[i], indptr[i + 1]):
                    m[indices[t]] += data[t] * delta
                x[i] = new


class CovariateChain:
    """Systematic-scan Gibbs sampler for :class:`CovariateModel`."""

    def __init__(self, model, x0=None, rng=None):
        self.model = model
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        if x0 is None:
            x0 = self.rng.choice(np.array([-1, 1]), size=model.n)
        self.x = as_spins(x0, model.n).astype(np.float64)
        self.m = model.A @ self.x
        self.ext = model.Z @ model.theta

    def sweep(self, count=1):
        A = self.model.A
        n = self.model.n
        left = int(count)
        block = max(1, 2_000_000 // max(n, 1))
        while left > 0:
            cnt = min(left, block)
            u = self.rng.random((cnt, n))
            _cov_sweeps(A.indptr, A.indices, A.data, self.x, self.m, self.model.beta, self.ext, u)
            left -= cnt
        return self.spins()

    def spins(self):
        return self.x.astype(np.int8)


def gibbs_covariate(model, x, rng=None):
    """One sweep from ``x``; returns the new spins."""
    return CovariateChain(model, x0=x, rng=rng).sweep(1)


def sample_covariate(model, burn_in=1000, rng=None):
    """One approximate draw: a fresh chain run for ``burn_in`` sweeps."""
    chain = CovariateChain(model, rng=rng)
    return chain.sweep(burn_in)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def assumption_report(model, theta_bound=None, z_bound=None, beta_bound=0.25,
                      eps=1e-12) -> dict:
    """Norms of A and Z and flags for the standing assumptions of the estimator.

    A flag is True when the assumption is violated (or cannot hold for this
    instance). Bounds left as None are reported but not checked.
    """
    A, Z = model.A, model.Z
    n = model.n
    inf_norm = float(abs(A).sum(axis=1).max()) if A.nnz else 0.0
    frob = float(A.multiply(A).sum()) / n
    gram = Z.T @ Z / n
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    zmax = float(np.abs(Z).max()) if Z.size else 0.0
    tmax = float(np.abs(model.theta).max()) if model.d else 0.0
    asym = float(abs(A - A.T).max()) if A.nnz else 0.0
    if 0 < n <= 2000:
        spec_norm = float(np.abs(np.linalg.eigvalsh(A.toarray())).max())
    else:
        spec_norm = float(abs(splinalg.eigsh(A, k=1, which="LM", return_eigenvectors=False)[0]))
    flags = {
        "bounded_signal": (theta_bound is not None and tmax >= theta_bound)
        or (z_bound is not None and zmax >= z_bound),
        "symmetric_zero_diagonal": asym > 0 or bool(np.any(A.diagonal() != 0)),
        "row_sum_norm": inf_norm > 1 + eps,
        "frobenius_mass": frob <= eps,
        "beta_bound": abs(model.beta) >= beta_bound,
        "covariate_eigenvalue": lam_min <= eps,
    }
    return {
        "A_inf_norm": inf_norm,
        "A_frobenius_sq_over_n": frob,
        "A_spectral_norm": spec_norm,
        "dobrushin_bound": 4 * abs(model.beta) * spec_norm,
        "Z_gram_min_eig": lam_min,
        "Z_max_abs": zmax,
        "theta_max_abs": tmax,
        "sparsity": int(np.count_nonzero(model.gamma)),
        "violations": flags,
    }


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_network(path, n=None) -> sparse.csr_matrix:
    """Edge list ``i j w`` (0-based); each listed pair is mirrored."""
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError("expected 'i j w'", lineno)
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise ParseError("non-numeric field", lineno) from None
            if i == j:
                raise ParseError("self-loops are not allowed", lineno)
            if i < 0 or j < 0:
                raise ParseError("negative node index", lineno)
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
    size = n if n is not None else (max(rows) + 1 if rows else 0)
    if rows and max(rows) >= size:
        raise ParseError(f"node index exceeds n={size}")
    A = sparse.coo_matrix((vals, (rows, cols)), shape=(size, size)).tocsr()
    A.sum_duplicates()
    return A


def read_covariates(path) -> np.ndarray:
    """Headerless CSV, one row per node."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise ParseError("non-numeric covariate", lineno) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", lineno)
            rows.append(row)
    return np.array(rows, dtype=float).reshape(len(rows), width or 0)


def read_responses(path, n=None) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                v = int(float(line))
            except ValueError:
                raise ParseError("response must be +1 or -1", lineno) from None
            if v not in (-1, 1):
                raise ParseError("response must be +1 or -1", lineno)
            vals.append(v)
    return as_spins(np.array(vals), n)


def ring_network(n, k=2):
    """Each node linked to its k nearest neighbours on each side, weight 1/(2k)."""
    if n <= 2 * k:
        raise SpecError("ring needs n > 2k")
    rows = np.repeat(np.arange(n), 2 * k)
    offs = np.tile(np.concatenate([np.arange(1, k + 1), -np.arange(1, k + 1)]), n)
    cols = (rows + offs) % n
    return sparse.csr_matrix((np.full(len(rows), 1.0 / (2 * k)), (rows, cols)), shape=(n, n))


def curie_weiss_matrix(n, scale=1.0):
    """``scale * (J - I) / n`` as a CSR matrix."""
    A = np.full((n, n), scale / n)
    np.fill_diagonal(A, 0.0)
    return sparse.csr_matrix(A)
