"""General p-tensor Ising models on weighted hypergraphs.

A :class:`SparseTensor` stores each hyperedge once, as a strictly increasing
index tuple with coefficient ``c_e``. The symmetric tensor it represents has
``J[i1, ..., ip] = c_e`` on every permutation of ``e`` and zero elsewhere, so

* ``H_N(x) = p! * sum_e c_e * prod_{j in e} x_j``
* ``m_i(x) = (p-1)! * sum_{e contains i} c_e * prod_{j in e, j != i} x_j``

and ``sum_i x_i m_i(x) = H_N(x)``. The conditional law of one spin is
``P(X_i = s | rest) = exp(s * (p*beta*m_i + h_i)) / (2 cosh(p*beta*m_i + h_i))``.

:class:`DenseCw` is the Curie-Weiss tensor ``J = n**(1-p)`` on all index
tuples, diagonal tuples included, so ``H_N = n * xbar**p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy import optimize, sparse, stats
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import DimensionMismatch, DomainError, ParseError, SpecError
from .reports import EstimateReport

MPLE_BRACKET = 50.0


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

class SparseTensor:
    """Symmetric p-tensor with zero diagonals, stored as unordered hyperedges.

    Args:
        p: interaction order.
        n: number of nodes.
        index: (E, p) integer array; each row strictly increasing.
        coef: length-E coefficients. Repeated hyperedges are summed.
    """

    def __init__(self, p, n, index, coef):
        p, n = int(p), int(n)
        if p < 2:
            raise SpecError("p must be at least 2")
        if n < 1:
            raise SpecError("n must be positive")
        index = np.asarray(index, dtype=np.int64).reshape(-1, p)
        coef = np.asarray(coef, dtype=np.float64).reshape(-1)
        if len(index) != len(coef):
            raise DimensionMismatch("index and coef lengths differ")
        if len(index):
            if np.any(np.diff(index, axis=1) <= 0):
                raise SpecError("hyperedge indices must be strictly increasing")
            if index.min() < 0 or index.max() >= n:
                raise SpecError("hyperedge index out of range")
            index, inv = np.unique(index, axis=0, return_inverse=True)
            coef = np.bincount(inv.reshape(-1), weights=coef, minlength=len(index))
        self.p = p
        self.n = n
        self.index = index
        self.coef = coef
        self.index.setflags(write=False)
        self.coef.setflags(write=False)
        # node -> incident edges, CSR layout
        flat = index.reshape(-1)
        order = np.argsort(flat, kind="stable")
        self._inc_edges = (order // p).astype(np.int64)
        self._inc_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(flat, minlength=n), out=self._inc_ptr[1:])

    @classmethod
    def from_dict(cls, p, n, edges):
        """Build from ``{tuple: coefficient}``; tuples are sorted first."""
        if not edges:
            return cls(p, n, np.empty((0, p), dtype=np.int64), np.empty(0))
        idx = [sorted(e) for e in edges]
        return cls(p, n, idx, list(edges.values()))

    @property
    def num_edges(self):
        return len(self.coef)

    def edges(self):
        return {tuple(int(i) for i in row): float(c) for row, c in zip(self.index, self.coef)}

    def __repr__(self):
        return f"SparseTensor(p={self.p}, n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True)
class DenseCw:
    """Curie-Weiss tensor ``n**(1-p)`` on every index tuple."""

    p: int
    n: int

    def __post_init__(self):
        if self.p < 2 or self.n < 1:
            raise SpecError("DenseCw needs p >= 2 and n >= 1")


def as_spins(x, n=None):
    """Validate a spin vector and return it as an int8 array."""
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise DimensionMismatch("spin vector must be one-dimensional")
    if n is not None and len(arr) != n:
        raise DimensionMismatch(f"expected {n} spins, got {len(arr)}")
    if not np.all(np.abs(arr) == 1):
        raise DomainError("spins must be exactly +1 or -1")
    return arr.astype(np.int8)


def _check(model, x):
    return as_spins(x, model.n)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _edge_products(index, coef, x):
    out = np.empty(len(coef))
    for e in range(len(coef)):
        prod = coef[e]
        for k in range(index.shape[1]):
            prod *= x[index[e, k]]
        out[e] = prod
    return out


@njit(cache=True, nogil=True)
def _fields(index, coef, x, n, mult):
    m = np.zeros(n)
    for e in range(len(coef)):
        prod = coef[e]
        for k in range(index.shape[1]):
            prod *= x[index[e, k]]
        # x_i = +-1, so dividing out x_i is multiplying by it
        for k in range(index.shape[1]):
            i = index[e, k]
            m[i] += mult * prod * x[i]
    return m


@njit(cache=True, nogil=True)
def _flip(index, coef, inc_ptr, inc_edges, x, m, i, mult):
    """Flip spin i and update the fields of its neighbours in place."""
    p = index.shape[1]
    for t in range(inc_ptr[i], inc_ptr[i + 1]):
        e = inc_edges[t]
        prod = coef[e]
        for k in range(p):
            prod *= x[index[e, k]]
        for k in range(p):
            j = index[e, k]
            if j != i:
                m[j] -= 2.0 * mult * prod * x[j]
    x[i] = -x[i]


@njit(cache=True, nogil=True)
def _sweeps_sparse(index, coef, inc_ptr, inc_edges, x, m, beta, hf, u, mult, out, thin):
    # u has shape (sweeps, n); out collects magnetization every `thin` sweeps
    n = len(x)
    p = index.shape[1]
    k = 0
    for s in range(u.shape[0]):
        for i in range(n):
            a = p * beta * m[i] + hf[i]
            prob_up = 1.0 / (1.0 + math.exp(-2.0 * a))
            new = 1 if u[s, i] < prob_up else -1
            if new != x[i]:
                _flip(index, coef, inc_ptr, inc_edges, x, m, i, mult)
        if thin > 0 and (s + 1) % thin == 0:
            tot = 0.0
            for i in range(n):
                tot += x[i]
            out[k] = tot / n
            k += 1


@njit(cache=True, nogil=True)
def _sweeps_cw(x, p, beta, hf, u, out, thin):
    # exact conditional of the all-tuples energy beta * n * (S/n)**p + sum h_i x_i
    n = len(x)
    total = 0
    for i in range(n):
        total += x[i]
    k = 0
    for s in range(u.shape[0]):
        for i in range(n):
            rest = total - x[i]
            up = beta * n * ((rest + 1.0) / n) ** p
            down = beta * n * ((rest - 1.0) / n) ** p
            diff = up - down + 2.0 * hf[i]
            prob_up = 1.0 / (1.0 + math.exp(-diff))
            new = 1 if u[s, i] < prob_up else -1
            total += new - x[i]
            x[i] = new
        if thin > 0 and (s + 1) % thin == 0:
            out[k] = total / n
            k += 1


@njit(cache=True, nogil=True)
def _pair_matvec(index, coef, x, v, mult, use_abs):
    n = len(v)
    p = index.shape[1]
    out = np.zeros(n)
    for e in range(len(coef)):
        c = coef[e]
        if use_abs:
            c = abs(c)
            prod = 1.0
        else:
            prod = 1.0
            for k in range(p):
                prod *= x[index[e, k]]
        for a in range(p):
            ia = index[e, a]
            for b in range(a + 1, p):
                ib = index[e, b]
                w = mult * c
                if not use_abs:
                    w *= prod * x[ia] * x[ib]
                out[ia] += w * v[ib]
                out[ib] += w * v[ia]
    return out


# ---------------------------------------------------------------------------
# Hamiltonian and local fields
# ---------------------------------------------------------------------------

def hamiltonian(model, x) -> float:
    """Sufficient statistic ``H_N(x)``."""
    x = _check(model, x)
    if isinstance(model, DenseCw):
        return model.n * (x.sum(dtype=np.int64) / model.n) ** model.p
    if model.num_edges == 0:
        return 0.0
    xf = x.astype(np.float64)
    return math.factorial(model.p) * float(_edge_products(model.index, model.coef, xf).sum())


def local_fields(model, x) -> np.ndarray:
    """All ``m_i(x)``."""
    x = _check(model, x)
    if isinstance(model, DenseCw):
        return np.full(model.n, (x.sum(dtype=np.int64) / model.n) ** (model.p - 1))
    mult = float(math.factorial(model.p - 1))
    return _fields(model.index, model.coef, x.astype(np.float64), model.n, mult)


def local_field(model, x, i) -> float:
    if not 0 <= i < model.n:
        raise IndexError(f"node {i} out of range for n={model.n}")
    return float(local_fields(model, x)[i])


class FieldState:
    """Spin configuration with local fields kept current under single flips."""

    def __init__(self, model: SparseTensor, x):
        if not isinstance(model, SparseTensor):
            raise TypeError("FieldState needs a SparseTensor")
        self.model = model
        self.x = _check(model, x).astype(np.float64)
        self._mult = float(math.factorial(model.p - 1))
        self.m = _fields(model.index, model.coef, self.x, model.n, self._mult)

    def flip(self, i):
        md = self.model
        _flip(md.index, md.coef, md._inc_ptr, md._inc_edges, self.x, self.m, int(i), self._mult)

    def spins(self):
        return self.x.astype(np.int8)


# ---------------------------------------------------------------------------
# Gibbs sampling
# ---------------------------------------------------------------------------

def _field_vector(h_field, n):
    if h_field is None:
        return np.zeros(n)
    hf = np.broadcast_to(np.asarray(h_field, dtype=np.float64), (n,))
    return np.ascontiguousarray(hf)


class GibbsChain:
    """Systematic-scan Gibbs sampler for one chain.

    Uniform variates are drawn from the supplied numpy Generator in blocks,
    so a chain is reproducible from its seed alone.
    """

    def __init__(self, model, beta, h_field=None, x0=None, rng=None):
        self.model = model
        self.beta = float(beta)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        n = model.n
        self.hf = _field_vector(h_field, n)
        if x0 is None:
            x0 = self.rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
        x = _check(model, x0).astype(np.float64)
        self.x = x
        if isinstance(model, SparseTensor):
            self._mult = float(math.factorial(model.p - 1))
            self.m = _fields(model.index, model.coef, x, n, self._mult)

    def _run(self, sweeps, thin):
        n = self.model.n
        out = np.empty(sweeps // thin if thin > 0 else 0)
        block = max(1, min(sweeps, 2_000_000 // max(n, 1)))
        if thin > 0:
            block = max(thin, block - block % thin)
        done = 0
        k = 0
        while done < sweeps:
            cnt = min(block, sweeps - done)
            u = self.rng.random((cnt, n))
            buf = np.empty(cnt // thin if thin > 0 else 0)
            if isinstance(self.model, DenseCw):
                _sweeps_cw(self.x, self.model.p, self.beta, self.hf, u, buf, thin)
            else:
                md = self.model
                _sweeps_sparse(md.index, md.coef, md._inc_ptr, md._inc_edges, self.x, self.m,
                               self.beta, self.hf, u, self._mult, buf, thin)
            out[k:k + len(buf)] = buf
            k += len(buf)
            done += cnt
        return out

    def sweep(self, count=1):
        """Advance ``count`` sweeps and return the current spins."""
        self._run(int(count), 0)
        return self.spins()

    def magnetizations(self, count, burn_in=1000, thin=5):
        """Record the sample mean every ``thin`` sweeps after ``burn_in`` sweeps."""
        if burn_in:
            self._run(int(burn_in), 0)
        return self._run(int(count) * int(thin), int(thin))

    def samples(self, count, burn_in=1000, thin=5):
        """Stack of ``count`` spin configurations, ``thin`` sweeps apart."""
        if burn_in:
            self._run(int(burn_in), 0)
        out = np.empty((int(count), self.model.n), dtype=np.int8)
        for r in range(int(count)):
            self._run(int(thin), 0)
            out[r] = self.x
        return out

    def spins(self):
        return self.x.astype(np.int8)


def gibbs_sweep(model, x, beta, h_field=None, rng=None):
    """One systematic-scan sweep starting from ``x``; returns the new spins."""
    chain = GibbsChain(model, beta, h_field, x0=x, rng=rng)
    return chain.sweep(1)


# ---------------------------------------------------------------------------
# Pseudolikelihood
# ---------------------------------------------------------------------------

def phi_p(xbar, p):
    """Closed-form pseudolikelihood estimate for the Curie-Weiss tensor."""
    if xbar == 0:
        return 0.0
    if abs(xbar) >= 1:
        return math.inf
    if p % 2 == 1 and xbar < 0:
        return math.inf
    return math.atanh(xbar) / (p * xbar ** (p - 1))


def _mple_from_fields(hn, m, p, bracket_max, tol):
    limit = float(np.abs(m).sum())
    diag = {"hamiltonian": hn, "limit": limit}
    if hn < 0:
        return EstimateReport(math.inf, diagnostics=diag | {"reason": "negative Hamiltonian"})
    if hn == 0:
        return EstimateReport(0.0, diagnostics=diag)
    if hn >= limit * (1 - 1e-15):
        return EstimateReport(math.inf, diagnostics=diag | {"reason": "Hamiltonian at or above limit"})

    def gap(b):
        return float(np.dot(m, np.tanh(p * b * m))) - hn

    hi = float(bracket_max)
    expansions = 0
    while gap(hi) < 0:
        hi *= 2
        expansions += 1
        if expansions > 60:
            return EstimateReport(math.inf, diagnostics=diag | {"reason": "bracket exhausted"})
    root, res = optimize.brentq(gap, 0.0, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                full_output=True)
    diag["bracket"] = hi
    return EstimateReport(root, iterations=res.iterations, residual=abs(gap(root)),
                          diagnostics=diag)


def mple(model, x, bracket_max=MPLE_BRACKET, tol=1e-14) -> EstimateReport:
    """Maximum pseudolikelihood estimate of beta.

    Smallest ``b >= 0`` solving ``H_N(x) = sum_i m_i tanh(p b m_i)``; ``+inf``
    when no such ``b`` exists. The bracket doubles past ``bracket_max`` when the
    root lies beyond it.
    """
    hn = hamiltonian(model, x)
    m = local_fields(model, x)
    return _mple_from_fields(hn, m, model.p, bracket_max, tol)


def _g2(beta, p, t):
    return beta * p * (p - 1) * t ** (p - 2) - 1.0 / (1.0 - t * t)


def cw_mple_variance(beta, p, m_star):
    """Asymptotic variance of sqrt(N)(beta_hat - beta) at the positive maximizer."""
    return -_g2(beta, p, m_star) / (p * p * m_star ** (2 * p - 2))


def mple_cw_ci(p, xbar_obs, n, level=0.95) -> EstimateReport:
    """Curie-Weiss pseudolikelihood estimate with a normal-theory interval."""
    if xbar_obs == 0:
        raise DomainError("interval undefined at xbar = 0")
    if not abs(xbar_obs) < 1:
        raise DomainError("|xbar| must be below 1")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    est = phi_p(xbar_obs, p)
    if not math.isfinite(est):
        return EstimateReport(est, diagnostics={"reason": "odd p with negative mean"})
    t = abs(xbar_obs)
    curv = -_g2(est, p, t)
    if curv <= 0:
        return EstimateReport(est, diagnostics={"reason": "non-negative curvature", "g2": -curv})
    se = t ** (1 - p) / p * math.sqrt(curv / n)
    z = float(stats.norm.ppf(0.5 + level / 2))
    return EstimateReport(est, std_error=se, ci=(est - z * se, est + z * se),
                          diagnostics={"level": level})


# ---------------------------------------------------------------------------
# Spectral diagnostics
# ---------------------------------------------------------------------------

def _top_abs_eig(matvec, n, tol=1e-8, maxiter=500):
    if n == 0:
        return 0.0
    if n <= 3:
        dense = np.column_stack([matvec(e) for e in np.eye(n)])
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (dense + dense.T)))))
    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    v0 = np.ones(n) / math.sqrt(n)
    vals = eigsh(op, k=1, which="LM", v0=v0, tol=tol, maxiter=maxiter * n,
                 return_eigenvectors=False)
    return float(abs(vals[0]))


def local_interaction_norm(model, x, tol=1e-8) -> float:
    """Spectral norm of the local interaction matrix ``J_N(x)``.

    ``J(x)[a, b] = (p-2)! * sum_{e containing a, b} c_e * prod_{j in e - {a, b}} x_j``,
    applied edge by edge and never materialized.
    """
    x = _check(model, x)
    if isinstance(model, DenseCw):
        return abs(x.sum(dtype=np.int64) / model.n) ** (model.p - 2)
    if model.num_edges == 0:
        return 0.0
    mult = float(math.factorial(model.p - 2))
    xf = x.astype(np.float64)
    return _top_abs_eig(lambda v: _pair_matvec(model.index, model.coef, xf,
                                               np.asarray(v, dtype=np.float64).ravel(), mult, False),
                        model.n, tol)


def codegree_norm(model, tol=1e-8) -> float:
    """Spectral norm of the co-degree matrix ``d(a, b) = sum_{e containing a, b} |c_e|``."""
    if isinstance(model, DenseCw):
        return 1.0 / math.factorial(model.p - 2)
    if model.num_edges == 0:
        return 0.0
    dummy = np.ones(model.n)
    return _top_abs_eig(lambda v: _pair_matvec(model.index, model.coef, dummy,
                                               np.asarray(v, dtype=np.float64).ravel(), 1.0, True),
                        model.n, tol)


def interaction_matrix(model, x=None):
    """Sparse ``J_N(x)`` (or the co-degree matrix when ``x`` is None); for small models and tests."""
    rows, cols, vals = [], [], []
    absolute = x is None
    xs = np.ones(model.n) if absolute else _check(model, x).astype(np.float64)
    mult = 1.0 if absolute else math.factorial(model.p - 2)
    for row, c in zip(model.index, model.coef):
        prod = abs(c) if absolute else c * np.prod(xs[row])
        for a in range(model.p):
            for b in range(a + 1, model.p):
                w = mult * prod if absolute else mult * prod * xs[row[a]] * xs[row[b]]
                rows += [row[a], row[b]]
                cols += [row[b], row[a]]
                vals += [w, w]
    return sparse.coo_matrix((vals, (rows, cols)), shape=(model.n, model.n)).tocsr()


# ---------------------------------------------------------------------------
# Hyperedge file format
# ---------------------------------------------------------------------------

def read_hyperedges(path) -> SparseTensor:
    """Parse the text format: header ``p n``, then ``i_1 ... i_p c`` per line."""
    header = None
    idx, coef = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 2:
                    raise ParseError("header must be 'p n'", lineno)
                try:
                    header = (int(parts[0]), int(parts[1]))
                except ValueError:
                    raise ParseError("header must hold two integers", lineno) from None
                continue
            p, n = header
            if len(parts) != p + 1:
                raise ParseError(f"expected {p} indices and a coefficient", lineno)
            try:
                row = [int(t) for t in parts[:p]]
                c = float(parts[p])
            except ValueError:
                raise ParseError("non-numeric field", lineno) from None
            if any(b <= a for a, b in zip(row, row[1:])):
                raise ParseError("indices must be strictly increasing", lineno)
            if row[0] < 0 or row[-1] >= n:
                raise ParseError(f"index outside [0, {n})", lineno)
            idx.append(row)
            coef.append(c)
    if header is None:
        raise ParseError("empty hyperedge file")
    p, n = header
    return SparseTensor(p, n, np.array(idx, dtype=np.int64).reshape(-1, p), coef)


def write_hyperedges(model: SparseTensor, path):
    with open(path, "w") as fh:
        fh.write(f"{model.p} {model.n}\n")
        for row, c in zip(model.index, model.coef):
            fh.write(" ".join(str(int(i)) for i in row) + f" {float(c)!r}\n")


def read_spins(path, n=None) -> np.ndarray:
    """Whitespace-separated ±1 values; one configuration."""
    toks = Path(path).read_text().split()
    try:
        vals = np.array([int(float(t)) for t in toks])
    except ValueError:
        raise ParseError("spin file must contain integers") from None
    return as_spins(vals, n)
