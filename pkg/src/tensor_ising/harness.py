"""Replicated Monte-Carlo experiments.

Replication ``r`` of an experiment with seed ``s`` draws its randomness from
``splitmix64(s, r)``, so results do not depend on the number of worker
threads or on scheduling order.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import cw_exact as cw
from .errors import DomainError, NonExistenceError, SpecError
from .tensor import GibbsChain, SparseTensor, cw_mple_variance, hamiltonian, mple, phi_p

_MASK = (1 << 64) - 1


def splitmix64(seed, index=0):
    """Child seed for replication ``index`` (SplitMix64 finalizer)."""
    z = (int(seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def resolve_threads(requested=None):
    env = os.environ.get("ISING_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise SpecError(f"ISING_THREADS must be an integer, got {env!r}") from None
    if requested:
        return max(1, int(requested))
    return os.cpu_count() or 1


def parallel_map(fn, items, threads=None):
    """Ordered map over ``items`` on a thread pool."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Sampling distributions
# ---------------------------------------------------------------------------

ESTIMATORS = ("mean", "mple", "mle-h", "mle-beta")


@dataclass(frozen=True)
class ExperimentSpec:
    """Curie-Weiss sampling experiment.

    ``estimator`` picks the statistic: ``mean`` (sample mean), ``mple``
    (pseudolikelihood estimate of beta), ``mle-h`` or ``mle-beta``. The
    reported value is ``n**scaling * (statistic - center)``; ``center`` defaults
    to the matching population quantity.
    """

    beta: float
    h: float
    p: int
    n: int
    estimator: str = "mean"
    replications: int = 1000
    scaling: float = 0.5
    seed: int = 0
    center: float | None = None
    bins: int = 40

    def __post_init__(self):
        if self.replications < 1:
            raise SpecError("replications must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise SpecError(f"estimator must be one of {ESTIMATORS}")
        cw.CwSpec(self.beta, self.h, self.p, self.n)


@dataclass
class HistogramReport:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    sd: float
    skewness: float
    excess_kurtosis: float
    values: np.ndarray
    nonfinite: int = 0
    ref_density: np.ndarray | None = None
    reference: object = None
    center: float = 0.0
    point_class: object = None

    def ks_distance(self):
        """Kolmogorov-Smirnov distance between the finite values and the reference law."""
        if self.reference is None:
            raise DomainError("no reference distribution attached")
        return float(stats.kstest(self.values, self.reference.cdf).statistic)

    def summary(self):
        out = {"replications": int(self.counts.sum()) + self.nonfinite, "nonfinite": self.nonfinite,
               "mean": self.mean, "sd": self.sd, "skewness": self.skewness,
               "excess_kurtosis": self.excess_kurtosis, "center": self.center}
        if self.reference is not None:
            out["ks_distance"] = self.ks_distance()
        if self.point_class is not None:
            out["point_kind"] = self.point_class.kind.value
        return out


class _Normal:
    def __init__(self, var):
        self.dist = stats.norm(scale=math.sqrt(var))
        self.var = var

    def pdf(self, x):
        return self.dist.pdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)


def _statistic(spec, xbar):
    if spec.estimator == "mean":
        return xbar
    if spec.estimator == "mple":
        return phi_p(xbar, spec.p)
    try:
        if spec.estimator == "mle-h":
            return cw.mle_h(spec.beta, spec.p, spec.n, xbar).estimate
        return cw.mle_beta(spec.h, spec.p, spec.n, xbar).estimate
    except NonExistenceError as err:
        return err.estimate
    except DomainError:
        return math.nan


def _reference(spec, pc):
    """Default centre and limiting law of the scaled statistic, when known."""
    kind = pc.kind
    if spec.estimator == "mple":
        # symmetric maximizers give the same estimate for even p
        m = max(pc.locations)
        if spec.h == 0 and m > 0:
            return spec.beta, _Normal(cw_mple_variance(spec.beta, spec.p, m))
        return spec.beta, None
    if pc.K != 1:
        return None, None
    m, d2 = pc.maximizers[0]
    if spec.estimator == "mean":
        if kind is cw.PointKind.SPECIAL:
            H4 = float(cw.h_eval(cw.HFunction(spec.beta, spec.h, spec.p), m, 4))
            return m, cw.limit_density_special(spec.p, 0.0, 0.0, m, H4)
        return m, _Normal(-1.0 / d2)
    if kind is not cw.PointKind.REGULAR:
        return None, None
    if spec.estimator == "mle-h":
        return spec.h, _Normal(-d2)
    if spec.estimator == "mle-beta":
        return spec.beta, _Normal(-d2 * (abs(m) ** (1 - spec.p) / spec.p) ** 2)
    return None, None


def run_sampling_distribution(spec: ExperimentSpec, threads=None) -> HistogramReport:
    """Replicate: draw the sample mean exactly, estimate, centre and scale."""
    cws = cw.CwSpec(spec.beta, spec.h, spec.p, spec.n)
    pc = cw.classify_point(spec.beta, spec.h, spec.p)
    default_center, ref = _reference(spec, pc)
    center = spec.center if spec.center is not None else default_center
    if center is None:
        center = 0.0
    if spec.center is not None and spec.center != default_center:
        ref = None

    def one(r):
        xbar = float(cw.sample_magnetization(cws, 1, splitmix64(spec.seed, r))[0])
        return _statistic(spec, xbar)

    raw = np.array(parallel_map(one, range(spec.replications), threads))
    finite = np.isfinite(raw)
    vals = spec.n ** spec.scaling * (raw[finite] - center)
    if vals.size:
        counts, edges = np.histogram(vals, bins=spec.bins)
        mean, sd = float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        skew = float(stats.skew(vals)) if vals.size > 2 else math.nan
        kurt = float(stats.kurtosis(vals)) if vals.size > 3 else math.nan
    else:
        counts, edges = np.zeros(spec.bins, dtype=np.int64), np.linspace(0, 1, spec.bins + 1)
        mean = sd = skew = kurt = math.nan
    dens = ref.pdf(0.5 * (edges[1:] + edges[:-1])) if ref is not None else None
    return HistogramReport(edges, counts, mean, sd, skew, kurt, vals, int((~finite).sum()),
                           dens, ref, center, pc)


# ---------------------------------------------------------------------------
# Confidence-set coverage
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    coverage: float
    level: float
    records: list = field(default_factory=list)

    def to_dict(self):
        return {"coverage": self.coverage, "level": self.level, "replications": len(self.records),
                "records": self.records}


def run_coverage(beta, h, p, n, target="h", replications=300, level=0.95, seed=0,
                 threads=None) -> CoverageReport:
    """Fraction of replications whose confidence set contains the true parameter."""
    if target not in ("h", "beta"):
        raise SpecError("target must be 'h' or 'beta'")
    cws = cw.CwSpec(beta, h, p, n)
    truth = h if target == "h" else beta
    if target == "h":
        cw.critical_h_values(beta, p)
    else:
        cw.critical_beta_values(h, p)

    def one(r):
        s = splitmix64(seed, r)
        xbar = float(cw.sample_magnetization(cws, 1, s)[0])
        rec = {"rep": r, "seed": s, "xbar": xbar}
        try:
            if target == "h":
                ci = cw.confidence_interval_h(beta, p, n, xbar, level=level)
            else:
                ci = cw.confidence_interval_beta(h, p, n, xbar, level=level)
        except (NonExistenceError, DomainError) as err:
            rec.update(covered=False, error=str(err))
            return rec
        rec.update(lower=ci.lower, upper=ci.upper, atoms=list(ci.atoms), covered=ci.contains(truth))
        return rec

    recs = parallel_map(one, range(replications), threads)
    cov = sum(r["covered"] for r in recs) / len(recs)
    return CoverageReport(cov, level, recs)


# ---------------------------------------------------------------------------
# Phase diagram
# ---------------------------------------------------------------------------

def _special_points(p):
    if p == 2:
        return [(0.5, 0.0)]
    b, hc = cw.special_point(p)
    return [(b, hc), (b, -hc)] if p % 2 == 0 else [(b, hc)]


def classify_cell(beta, h, p, dbeta, dh, grid=4001):
    """Kind of the grid cell centred at ``(beta, h)``.

    A cell is critical when the critical curve crosses it: the top local maxima
    of H tie to within what moving ``h`` by ``dh/2`` and ``beta`` by
    ``dbeta/2`` can change. It is special when it contains a special point.
    """
    for b, hc in _special_points(p):
        if abs(beta - b) <= dbeta / 2 and abs(h - hc) <= dh / 2:
            return cw.PointKind.SPECIAL
    hf = cw.HFunction(beta, h, p)
    cands = sorted(cw.local_maxima(hf, grid), key=lambda c: -c[1])
    if len(cands) < 2:
        return cw.PointKind.REGULAR
    top_x, top_v = cands[0]
    ties = [cands[0]]
    for x, v in cands[1:]:
        slack = 0.5 * (dh * abs(x - top_x) + dbeta * abs(x ** p - top_x ** p))
        if top_v - v <= slack + 1e-12:
            ties.append((x, v))
    if len(ties) == 1:
        return cw.PointKind.REGULAR
    if len(ties) == 3 and p % 2 == 0:
        return cw.PointKind.STRONGLY_CRITICAL
    return cw.PointKind.WEAKLY_CRITICAL


@dataclass
class PhaseDiagram:
    p: int
    betas: np.ndarray
    hs: np.ndarray
    kinds: np.ndarray  # integer kind codes, shape (len(betas), len(hs))

    def rows(self):
        for i, b in enumerate(self.betas):
            for j, h in enumerate(self.hs):
                yield float(b), float(h), int(self.kinds[i, j])

    def write_tsv(self, path):
        names = {k.code: k.value for k in cw.PointKind}
        with open(path, "w") as fh:
            fh.write("beta\th\tkind_code\tkind\n")
            for b, h, k in self.rows():
                fh.write(f"{b:.10g}\t{h:.10g}\t{k}\t{names[k]}\n")


def phase_diagram(p, beta_range=(0.0, 1.0), h_range=(-1.0, 1.0), grid=101, threads=None,
                  scan=4001) -> PhaseDiagram:
    """Classify every cell of a regular (beta, h) grid."""
    gb, gh = (grid, grid) if np.isscalar(grid) else grid
    if gb < 2 or gh < 2:
        raise SpecError("need at least two grid points per axis")
    betas = np.linspace(*beta_range, gb)
    hs = np.linspace(*h_range, gh)
    db, dh = betas[1] - betas[0], hs[1] - hs[0]

    def row(i):
        return [classify_cell(betas[i], h, p, db, dh, scan).code for h in hs]

    kinds = np.array(parallel_map(row, range(gb), threads), dtype=np.int64)
    return PhaseDiagram(p, betas, hs, kinds)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------

def nearest_rank(sorted_vals, q):
    """Nearest-rank percentile: element ``ceil(q * S)`` (1-based) of the sorted values."""
    s = len(sorted_vals)
    k = min(s, max(1, math.ceil(q * s - 1e-12)))
    return float(sorted_vals[k - 1])


@dataclass
class GofResult:
    verdict: str  # "accept", "reject" or "inconclusive"
    observed: float
    band: tuple
    beta_hat: float
    simulated: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["beta_hat"] = _json_float(self.beta_hat)
        return d


def gof_test(graph: SparseTensor, x_obs, sims=100, seed=0, burn_in=1000, threads=None,
             lower=0.025, upper=0.975) -> GofResult:
    """Parametric-bootstrap check of a fitted model via its Hamiltonian.

    Fits beta by pseudolikelihood, simulates ``sims`` independent chains at the
    estimate (each run ``burn_in`` sweeps from a random start), and accepts when
    the observed Hamiltonian lies inside the nearest-rank percentile band.
    """
    if sims < 20:
        raise SpecError("need at least 20 simulated datasets")
    if graph.p not in (2, 3):
        raise SpecError("goodness-of-fit supports p = 2 or 3")
    observed = hamiltonian(graph, x_obs)
    fit = mple(graph, x_obs)
    if not math.isfinite(fit.estimate):
        return GofResult("inconclusive", observed, (math.nan, math.nan), fit.estimate)

    def one(r):
        chain = GibbsChain(graph, fit.estimate, rng=splitmix64(seed, r))
        return hamiltonian(graph, chain.sweep(burn_in))

    sims_h = sorted(parallel_map(one, range(sims), threads))
    band = (nearest_rank(sims_h, lower), nearest_rank(sims_h, upper))
    verdict = "accept" if band[0] <= observed <= band[1] else "reject"
    return GofResult(verdict, observed, band, fit.estimate, sims_h)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _json_float(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("+inf" if v > 0 else "-inf")
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float):
        return _json_float(obj)
    return obj


def write_json(obj, path):
    """Deterministic JSON: sorted keys, infinities as string sentinels."""
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_meta(path, started, extra=None):
    """Timing metadata, kept apart from data files so those stay reproducible."""
    meta = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "runtime_seconds": time.time() - started}
    meta.update(extra or {})
    write_json(meta, path)


def write_histogram_tsv(report: HistogramReport, path):
    with open(path, "w") as fh:
        fh.write("bin_left\tbin_right\tcount\tref_density\n")
        for k in range(len(report.counts)):
            ref = "" if report.ref_density is None else f"{report.ref_density[k]:.10g}"
            fh.write(f"{report.edges[k]:.10g}\t{report.edges[k + 1]:.10g}\t"
                     f"{int(report.counts[k])}\t{ref}\n")


# ---------------------------------------------------------------------------
# Mode analysis
# ---------------------------------------------------------------------------

def histogram_modes(values, bins=100, smooth=3, min_mass=0.02):
    """Locations of local maxima of a lightly smoothed histogram.

    Peaks holding less than ``min_mass`` of the sample between neighbouring
    minima are ignored.
    """
    counts, edges = np.histogram(values, bins=bins)
    kernel = np.ones(smooth) / smooth
    half = smooth // 2
    padded_counts = np.pad(counts.astype(float), (half, smooth - 1 - half), mode="edge")
    sm = np.convolve(padded_counts, kernel, mode="valid")
    centers = 0.5 * (edges[1:] + edges[:-1])
    padded = np.concatenate(([-1.0], sm, [-1.0]))
    peaks = [i for i in range(len(sm)) if padded[i + 1] > padded[i] and padded[i + 1] >= padded[i + 2]]
    out = []
    total = counts.sum()
    for k, i in enumerate(peaks):
        lo = peaks[k - 1] if k else 0
        hi = peaks[k + 1] if k + 1 < len(peaks) else len(sm) - 1
        left = lo + int(np.argmin(sm[lo:i + 1])) if k else 0
        right = i + int(np.argmin(sm[i:hi + 1])) if k + 1 < len(peaks) else len(sm) - 1
        if counts[left:right + 1].sum() / total >= min_mass:
            out.append(float(centers[i]))
    return out


def mode_masses(values, locations):
    """Fraction of ``values`` nearest to each location."""
    values = np.asarray(values, dtype=float)
    locs = np.asarray(locations, dtype=float)
    idx = np.argmin(np.abs(values[:, None] - locs[None, :]), axis=1)
    return np.bincount(idx, minlength=len(locs)) / len(values)
