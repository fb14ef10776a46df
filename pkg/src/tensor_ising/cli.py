"""Command-line interface.

Every subcommand writes JSON (structured results) or TSV (tables). Output
files depend only on the inputs, flags and seed; wall-clock data goes to a
separate ``.meta.json`` file next to the main output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import covariate as cov
from . import cw_exact as cw
from . import harness as hn
from . import tensor as tc
from . import zoo
from .errors import IsingError, NonExistenceError

log = logging.getLogger("tensor_ising")


def _emit(result, out, started, args):
    """Write ``result`` (with the resolved config) to ``out`` or stdout."""
    payload = {"config": _config(args), "result": result}
    if out:
        hn.write_json(payload, out)
        hn.write_meta(_meta_path(out), started)
        log.info("wrote %s", out)
    else:
        json.dump(hn._clean(payload), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _meta_path(out):
    p = Path(out)
    return p.with_name(p.name + ".meta.json")


def _config(args):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["threads"] = hn.resolve_threads(args.threads)
    return cfg


def _report_dict(rep):
    d = rep.to_dict()
    if hasattr(rep.ci, "to_dict"):
        d["ci"] = rep.ci.to_dict()
    return d


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def _build_model(args):
    kind = args.model
    if kind == "cw":
        return tc.DenseCw(args.p, args.n)
    if kind == "sk":
        return zoo.gen_sk(args.p, args.n, args.seed)
    if kind == "er":
        return zoo.gen_er(args.p, args.n, args.theta, args.seed)
    if kind == "hsbm":
        if not args.hsbm_spec:
            raise IsingError("--hsbm-spec is required for --model hsbm")
        return zoo.gen_hsbm(zoo.read_hsbm_spec(args.hsbm_spec), args.n, args.seed)
    if kind == "partite":
        sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else [args.n // args.p] * args.p
        return zoo.gen_partite(args.p, sizes, args.theta, args.seed)
    if not args.graph:
        raise IsingError("--graph is required for --model file")
    return tc.read_hyperedges(args.graph)


def cmd_sample(args):
    started = time.time()
    out = Path(args.out)
    if args.model == "cw" and args.magnetization_only:
        spec = cw.CwSpec(args.beta, args.h, args.p, args.n)
        vals = cw.sample_magnetization(spec, args.count, args.seed)
        with open(out, "w") as fh:
            fh.writelines(f"{v:.17g}\n" for v in vals)
        meta = {"path": "exact", "count": args.count}
    else:
        model = _build_model(args)
        chain = tc.GibbsChain(model, args.beta, args.h if args.h else None,
                              rng=hn.splitmix64(args.seed, 0))
        samples = chain.samples(args.count, burn_in=args.sweeps, thin=args.thin)
        with open(out, "w") as fh:
            for row in samples:
                fh.write(" ".join("1" if s > 0 else "-1" for s in row) + "\n")
        meta = {"path": "gibbs", "count": args.count, "n": model.n, "p": model.p}
        if isinstance(model, tc.SparseTensor):
            meta["edges"] = model.num_edges
    hn.write_json({"config": _config(args), "result": meta}, str(out) + ".json")
    hn.write_meta(_meta_path(out), started)
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _xbar(args):
    if args.xbar is not None:
        return args.xbar
    if not args.data:
        raise IsingError("give --xbar or --data")
    return float(tc.read_spins(args.data).mean())


def cmd_estimate(args):
    started = time.time()
    m = args.method
    result = {}
    try:
        if m == "mle-h":
            xb = _xbar(args)
            rep = cw.mle_h(args.beta, args.p, args.n, xb)
            rep.ci = cw.confidence_interval_h(args.beta, args.p, args.n, xb, rep.estimate, args.level)
            result = _report_dict(rep)
        elif m == "mle-beta":
            xb = _xbar(args)
            rep = cw.mle_beta(args.h, args.p, args.n, xb)
            rep.ci = cw.confidence_interval_beta(args.h, args.p, args.n, xb, rep.estimate, args.level)
            result = _report_dict(rep)
        elif m == "mple":
            if args.graph:
                model = tc.read_hyperedges(args.graph)
                x = tc.read_spins(args.data, model.n)
            else:
                x = tc.read_spins(args.data)
                model = tc.DenseCw(args.p, len(x))
            rep = tc.mple(model, x)
            result = _report_dict(rep)
            if isinstance(model, tc.DenseCw):
                result["phi_p"] = tc.phi_p(float(x.mean()), model.p)
            if args.diagnostics:
                result["codegree_norm"] = tc.codegree_norm(model)
                result["local_interaction_norm"] = tc.local_interaction_norm(model, x)
        elif m == "pmple":
            A = cov.read_network(args.network)
            Z = cov.read_covariates(args.covariates)
            A.resize((Z.shape[0], Z.shape[0]))
            model = cov.CovariateModel(A, Z)
            x = cov.read_responses(args.responses, model.n)
            fit = cov.fit_penalized(model, x, delta=args.delta, max_iter=args.max_iter)
            result = fit.to_dict()
            result["delta"] = args.delta
            if args.diagnostics:
                result["assumptions"] = cov.assumption_report(model.with_gamma(fit.gamma_hat))
    except NonExistenceError as err:
        result = {"estimate": err.estimate, "nonexistent": True, "reason": str(err)}
    _emit(result, args.out, started, args)
    return 0


# ---------------------------------------------------------------------------
# threshold / phasediagram / gof / mc
# ---------------------------------------------------------------------------

def cmd_threshold(args):
    started = time.time()
    if args.table:
        result = {"table": [{"p": p, "beta_star": b} for p, b in cw_table(args)]}
    elif args.hsbm:
        res = zoo.threshold_hsbm(zoo.read_hsbm_spec(args.hsbm), args.tol)
        result = {"beta_star": res.beta_star, "argmax_t": list(res.argmax_t), "tolerance": res.tolerance}
    elif args.equipartite:
        result = {"beta_star": zoo.threshold_equipartite(args.p, args.theta, args.tol)}
    else:
        result = {"beta_star": zoo.threshold_er(args.p, args.theta, args.tol)}
    if not args.table and not args.out:
        print(f"{result['beta_star']:.6f}")
        return 0
    _emit(result, args.out, started, args)
    return 0


def cw_table(args):
    return zoo.cw_threshold_table(args.p_max, args.tol)


def cmd_phasediagram(args):
    started = time.time()
    diag = hn.phase_diagram(args.p, (args.beta_min, args.beta_max), (args.h_min, args.h_max),
                            args.grid, threads=args.threads)
    if args.out:
        diag.write_tsv(args.out)
        hn.write_json({"config": _config(args)}, str(args.out) + ".json")
        hn.write_meta(_meta_path(args.out), started)
    else:
        sys.stdout.write("beta\th\tkind_code\n")
        for b, h, k in diag.rows():
            sys.stdout.write(f"{b:.10g}\t{h:.10g}\t{k}\n")
    return 0


def cmd_gof(args):
    started = time.time()
    graph = tc.read_hyperedges(args.graph)
    x = tc.read_spins(args.data, graph.n)
    res = hn.gof_test(graph, x, args.sims, args.seed, args.burn_in, threads=args.threads)
    if not args.out:
        print(f"verdict: {res.verdict}  observed: {res.observed:.6g}  "
              f"band: [{res.band[0]:.6g}, {res.band[1]:.6g}]  beta_hat: {res.beta_hat:.6g}")
    _emit(res.to_dict(), args.out, started, args)
    return 0


def cmd_mc(args):
    started = time.time()
    prefix = Path(args.out_prefix)
    if args.experiment == "sampling":
        spec = hn.ExperimentSpec(args.beta, args.h, args.p, args.n, args.estimator, args.reps,
                                 args.scaling, args.seed, bins=args.bins)
        rep = hn.run_sampling_distribution(spec, threads=args.threads)
        hn.write_histogram_tsv(rep, str(prefix) + ".tsv")
        summary = rep.summary()
    else:
        rep = hn.run_coverage(args.beta, args.h, args.p, args.n, args.target, args.reps,
                              args.level, args.seed, threads=args.threads)
        summary = rep.to_dict()
    out = str(prefix) + ".json"
    hn.write_json({"config": _config(args), "result": summary}, out)
    hn.write_meta(_meta_path(out), started)
    print(json.dumps(hn._clean({k: v for k, v in summary.items() if k != "records"}), sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="tensor-ising", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (ISING_THREADS overrides; default: all cores)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw spin configurations")
    s.add_argument("--model", choices=["cw", "sk", "er", "hsbm", "partite", "file"], required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--h", type=float, default=0.0)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--sweeps", type=int, default=1000, help="burn-in sweeps")
    s.add_argument("--thin", type=int, default=5)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--theta", type=float, default=1.0)
    s.add_argument("--sizes", help="comma-separated part sizes for --model partite")
    s.add_argument("--graph", help="hyperedge file for --model file")
    s.add_argument("--hsbm-spec")
    s.add_argument("--magnetization-only", action="store_true",
                   help="cw only: exact draws of the sample mean")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("estimate", help="point estimates and confidence sets")
    e.add_argument("--method", choices=["mle-beta", "mle-h", "mple", "pmple"], required=True)
    e.add_argument("--beta", type=float, default=0.0)
    e.add_argument("--h", type=float, default=0.0)
    e.add_argument("--p", type=int, default=2)
    e.add_argument("--n", type=int)
    e.add_argument("--xbar", type=float)
    e.add_argument("--data", help="spin file")
    e.add_argument("--graph", help="hyperedge file (mple)")
    e.add_argument("--network", help="edge list 'i j w' (pmple)")
    e.add_argument("--covariates", help="CSV covariates (pmple)")
    e.add_argument("--responses", help="±1 responses (pmple)")
    e.add_argument("--delta", type=float, default=1.0)
    e.add_argument("--max-iter", type=int, default=20_000)
    e.add_argument("--level", type=float, default=0.95)
    e.add_argument("--diagnostics", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    t = sub.add_parser("threshold", help="mean-field estimability thresholds")
    t.add_argument("--er", action="store_true", help="Erdos-Renyi hypergraph (default)")
    t.add_argument("--equipartite", action="store_true")
    t.add_argument("--hsbm", help="block-model spec file")
    t.add_argument("--table", action="store_true", help="Curie-Weiss thresholds for p = 2..p-max")
    t.add_argument("--p", type=int, default=2)
    t.add_argument("--p-max", type=int, default=8)
    t.add_argument("--theta", type=float, default=1.0)
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--out")
    t.set_defaults(func=cmd_threshold)

    d = sub.add_parser("phasediagram", help="classify a (beta, h) grid")
    d.add_argument("--p", type=int, required=True)
    d.add_argument("--grid", type=int, default=101)
    d.add_argument("--beta-min", type=float, default=0.0)
    d.add_argument("--beta-max", type=float, default=1.0)
    d.add_argument("--h-min", type=float, default=-1.0)
    d.add_argument("--h-max", type=float, default=1.0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_phasediagram)

    g = sub.add_parser("gof", help="simulation goodness-of-fit test")
    g.add_argument("--graph", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--sims", type=int, default=100)
    g.add_argument("--burn-in", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gof)

    m = sub.add_parser("mc", help="Monte-Carlo experiments")
    m.add_argument("--experiment", choices=["sampling", "coverage"], required=True)
    m.add_argument("--beta", type=float, required=True)
    m.add_argument("--h", type=float, default=0.0)
    m.add_argument("--p", type=int, required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--estimator", choices=list(hn.ESTIMATORS), default="mean")
    m.add_argument("--target", choices=["h", "beta"], default="h")
    m.add_argument("--reps", type=int, default=1000)
    m.add_argument("--scaling", type=float, default=0.5)
    m.add_argument("--level", type=float, default=0.95)
    m.add_argument("--bins", type=int, default=40)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out-prefix", required=True)
    m.set_defaults(func=cmd_mc)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("worker threads: %d", hn.resolve_threads(args.threads))
    try:
        return args.func(args)
    except (IsingError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
