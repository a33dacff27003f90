"""Command-line entry point.

Subcommands: generate, simulate, infer, theory, sweep, adaptive. Failures are
reported on stderr as one line ``ERROR[<kind>] <message>`` with exit status 2
(usage), 3 (validation) or 4 (runtime).
"""

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from . import io as cio
from ._validation import ValidationError
from .allocation import adaptive_spammer_hammer, build_configuration_graph, sample_truth
from .inference import ALGORITHMS
from .montecarlo import sweep
from .theory import TheoryParams, adaptive_counterexample_bound, theory_report
from .workers import sample_responses, sample_workers

log = logging.getLogger("crowdbudget")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (default: fresh entropy)")
    p.add_argument("-o", "--output", default=None, help="output file (default: stdout where applicable)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    return p


def _add_model_args(p):
    p.add_argument("--model", choices=["spammer_hammer", "beta", "fixed", "haldane"], default="spammer_hammer")
    p.add_argument("--q", type=float, help="hammer fraction for spammer_hammer")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--p", type=float, help="common reliability for the fixed model")


def _model_from_args(args):
    d = {"model": args.model}
    needed = {"spammer_hammer": ("q",), "beta": ("alpha", "beta"), "fixed": ("p",), "haldane": ()}[args.model]
    for key in needed:
        value = getattr(args, key)
        if value is None:
            raise UsageError(f"--model {args.model} requires --{key}")
        d[key] = repr(value)
    return cio.model_from_dict(d)


def build_parser():
    common = _common()
    parser = _Parser(prog="crowdbudget", description="Task allocation and inference for binary crowdsourcing.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="random (l, r)-regular assignment graph")
    p.add_argument("--m", type=int, required=True, help="number of tasks")
    p.add_argument("--l", type=int, required=True, help="workers per task")
    p.add_argument("--r", type=int, required=True, help="tasks per worker")

    p = sub.add_parser("simulate", parents=[common], help="simulate crowd answers on a graph")
    p.add_argument("--graph", required=True, help="edge CSV")
    _add_model_args(p)
    p.add_argument("--truth-mode", choices=["uniform", "ones"], default="uniform")
    p.add_argument("--truth-out", help="write the ground truth here")
    p.add_argument("--reliability-out", help="write the sampled worker reliabilities here")

    p = sub.add_parser("infer", parents=[common], help="estimate task labels from answers")
    p.add_argument("--graph", required=True)
    p.add_argument("--responses", required=True)
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="iterative")
    p.add_argument("--k", type=int, default=None, help="iterations for the iterative algorithm")
    p.add_argument("--init", choices=["gaussian", "ones"], default="gaussian")
    p.add_argument("--reliability", help="worker reliability CSV (required by oracle)")
    p.add_argument("--truth", help="truth CSV; prints the error rate when given")

    p = sub.add_parser("theory", parents=[common], help="evaluate the closed-form bounds")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--mu", type=float, default=None, help="defaults to q (spammer-hammer)")
    p.add_argument("--l", required=True, help="queries per task; a comma list gives one CSV row each")
    p.add_argument("--r", type=int, default=None, help="tasks per worker (default: r = l)")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--csv", action="store_true", help="CSV instead of aligned text")

    p = sub.add_parser("sweep", parents=[common], help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=None, help="override the config's trial count")
    p.add_argument("--n-jobs", type=int, default=None)

    p = sub.add_parser("adaptive", parents=[common], help="group-and-agree adaptive scheme")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--l", type=int, required=True, help="budget per task")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--pad", action="store_true", help="allow m that is not a perfect square")
    return parser


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args):
    g = build_configuration_graph(args.m, args.l, args.r, rng=args.seed, seed=args.seed)
    cio.write_graph(g, args.output or sys.stdout)
    log.info("generated m=%d n=%d edges=%d", g.m, g.n, g.num_edges)


def cmd_simulate(args):
    if not args.output:
        raise UsageError("simulate needs --output for the response file")
    model = _model_from_args(args)
    graph = cio.read_graph(args.graph)
    rng = np.random.default_rng(args.seed)
    truth = sample_truth(graph.m, rng, mode=args.truth_mode)
    workers = sample_workers(model, graph.n, rng)
    cio.write_responses(sample_responses(graph, truth, workers, rng), args.output)
    if args.truth_out:
        cio.write_truth(truth, args.truth_out)
    if args.reliability_out:
        cio.write_reliabilities(workers, args.reliability_out)


def cmd_infer(args):
    if args.algorithm == "oracle" and not args.reliability:
        raise UsageError("the oracle algorithm requires --reliability")
    graph = cio.read_graph(args.graph)
    responses = cio.read_responses(args.responses, graph)
    rng = np.random.default_rng(args.seed)
    if args.algorithm == "iterative":
        result = ALGORITHMS["iterative"](graph, responses, k_max=args.k, rng=rng, init=args.init)
    elif args.algorithm == "oracle":
        result = ALGORITHMS["oracle"](graph, responses, cio.read_reliabilities(args.reliability, graph.n), rng=rng)
    else:
        result = ALGORITHMS[args.algorithm](graph, responses, rng=rng)
    truth = cio.read_truth(args.truth, graph.m) if args.truth else None
    cio.write_results(result, args.output or sys.stdout)
    if truth is not None:
        # keep stdout a clean CSV when the results go there
        print(f"error_rate {result.error_rate(truth)!r}", file=sys.stdout if args.output else sys.stderr)


def cmd_theory(args):
    try:
        ls = [int(v) for v in args.l.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--l expects integers, got {args.l!r}") from None
    if not ls:
        raise UsageError("--l is empty")
    mu = args.q if args.mu is None else args.mu
    reports = [theory_report(TheoryParams(l, args.r or l, args.q, mu, args.m), k=args.k, eps=args.eps) for l in ls]
    if args.csv or len(reports) > 1:
        keys = [k for k, _, _ in reports[0].rows()]
        lines = [",".join(keys)]
        for rep in reports:
            lines.append(",".join("" if v is None else (repr(v) if isinstance(v, float) else str(v)) for _, v, _ in rep.rows()))
        text = "\n".join(lines) + "\n"
    else:
        text = reports[0].format() + "\n"
    _emit(text, args.output)


def cmd_sweep(args):
    config = cio.load_config(args.config)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.n_jobs is not None:
        overrides["n_jobs"] = args.n_jobs
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.output:
        overrides["output"] = args.output
    if overrides:
        config = replace(config, **overrides)
    result = sweep(config, write=bool(config.output))
    for f in result.failures:
        print(f"cell l={f['l']} r={f['r']} failed: {f['error']}", file=sys.stderr)
    if not config.output:
        sys.stdout.write(result.to_csv())
    if result.failures and not result.rows:
        raise RuntimeError("every cell of the sweep failed")


def cmd_adaptive(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    rng = np.random.default_rng(args.seed)
    errors = np.empty(args.trials)
    queries = np.empty(args.trials)
    for i in range(args.trials):
        truth = sample_truth(args.m, rng)
        run = adaptive_spammer_hammer(args.m, args.l, args.q, truth=truth, rng=rng, pad=args.pad)
        errors[i] = run.error_rate(truth)
        queries[i] = run.queries_used
    se = errors.std(ddof=1) / np.sqrt(args.trials) if args.trials > 1 else float("nan")
    lines = [
        f"m                 {args.m}",
        f"l                 {args.l}",
        f"q                 {args.q}",
        f"trials            {args.trials}",
        f"empirical_error   {errors.mean():.6g}",
        f"std_error         {se:.3g}",
        f"mean_queries      {queries.mean():.6g}",
        f"bound             {adaptive_counterexample_bound(args.m, args.l, args.q):.4f}",
    ]
    _emit("\n".join(lines) + "\n", args.output)


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "theory": cmd_theory,
    "sweep": cmd_sweep,
    "adaptive": cmd_adaptive,
}


def _fail(kind, code, message):
    print(f"ERROR[{kind}] {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except ValidationError as exc:
        return _fail("validation", EXIT_VALIDATION, exc)
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        return _fail("runtime", EXIT_RUNTIME, f"{type(exc).__name__}: {exc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
