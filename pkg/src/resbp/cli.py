"""Command-line entry point.  Exit codes: 0 success, 1 usage error, 2 I/O or format error."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

from .errors import ModelError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, out=None):
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen_grid(a):
    from .bench import GridSpec, gen_ising_grid
    from .model import save_model

    try:
        spec = GridSpec(a.n, a.c, a.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    card, factors = gen_ising_grid(spec)
    _emit(save_model(card, factors), a.out)


def cmd_run(a):
    from .bench import record_row, to_csv
    from .model import build_graph, read_model
    from .propagation import compute_beliefs
    from .schedulers import RunConfig, run

    try:
        cfg = RunConfig(a.scheduler, a.variant, gamma=a.damping, tol=a.tol, max_updates=a.max_updates,
                        max_seconds=a.max_seconds, seed=a.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    card, factors = read_model(a.model)
    graph = build_graph(factors, card, a.graph)
    model_id = os.path.splitext(os.path.basename(a.model))[0]
    rec, state = run(graph, cfg, model_id=model_id)
    sys.stdout.write(to_csv([record_row(rec)]))
    if a.out_beliefs:
        beliefs = compute_beliefs(graph, state, cfg.variant).variables
        lines = ["variable,state,belief"]
        lines += [f"{v},{k},{p!r}" for v, b in enumerate(beliefs) for k, p in enumerate(b.tolist())]
        _emit("\n".join(lines) + "\n", a.out_beliefs)


def cmd_bench(a):
    from .bench import load_suite, run_suite

    with open(a.suite) as fh:
        text = fh.read()
    try:
        suite = load_suite(text)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ModelError(f"malformed suite file: {exc}")
    suite.out = a.out
    if a.jobs is not None:
        suite.jobs = a.jobs
    if a.graph is not None:
        suite.graph = a.graph
    text = run_suite(suite)
    if not a.out:
        sys.stdout.write(text)


def cmd_exact(a):
    from .model import read_model
    from .oracle import brute_force_marginals, variable_elimination_marginals

    card, factors = read_model(a.model)
    fn = brute_force_marginals if a.method == "brute" else variable_elimination_marginals
    ex = fn(card, factors)
    lines = [f"# log_z,{ex.log_z!r}", "variable,state,probability"]
    lines += [f"{v},{k},{p!r}" for v, m in enumerate(ex.marginals) for k, p in enumerate(m.tolist())]
    _emit("\n".join(lines) + "\n", a.out)


def cmd_analyze(a):
    from .analysis import contraction_analysis, report_csv
    from .model import build_graph, read_model

    if a.samples < 1 or a.orders < 0:
        raise UsageError("--samples must be positive and --orders nonnegative")
    card, factors = read_model(a.model)
    graph = build_graph(factors, card, a.graph)
    _, est, per_order = contraction_analysis(graph, a.samples, a.seed, a.orders, a.mode, a.variant)
    _emit(report_csv(est, per_order), a.out)


def cmd_summarize(a):
    from .bench import format_summary, summarize

    with open(a.csv) as fh:
        text = fh.read()
    _emit(format_summary(summarize(text, a.baseline)), a.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="resbp", description="Loopy belief propagation with residual scheduling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-grid", help="write a seeded Ising grid MODEL file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--c", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", help="output path (stdout if omitted)")
    g.set_defaults(fn=cmd_gen_grid)

    r = sub.add_parser("run", help="run one schedule and print a CSV record")
    r.add_argument("--model", required=True)
    r.add_argument("--scheduler", choices=["sbp", "rr", "abp", "trp", "rbp"], default="rbp")
    r.add_argument("--variant", choices=["sum", "max"], default="sum")
    r.add_argument("--damping", type=float, default=0.2)
    r.add_argument("--tol", type=float, default=1e-5)
    r.add_argument("--max-updates", type=int, default=10_000_000)
    r.add_argument("--max-seconds", type=float, default=math.inf)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--graph", choices=["bethe", "pairwise"], default="bethe")
    r.add_argument("--out-beliefs")
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="run a JSON experiment suite")
    b.add_argument("--suite", required=True)
    b.add_argument("--out")
    b.add_argument("--jobs", type=int)
    b.add_argument("--graph", choices=["bethe", "pairwise"])
    b.set_defaults(fn=cmd_bench)

    e = sub.add_parser("exact", help="exact marginals by enumeration or variable elimination")
    e.add_argument("--model", required=True)
    e.add_argument("--method", choices=["brute", "ve"], default="ve")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_exact)

    an = sub.add_parser("analyze", help="fixed point, local contraction factors and rate report")
    an.add_argument("--model", required=True)
    an.add_argument("--samples", type=int, default=100_000)
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--orders", type=int, default=100)
    an.add_argument("--mode", choices=["single", "joint"], default="single")
    an.add_argument("--variant", choices=["sum", "max"], default="sum")
    an.add_argument("--graph", choices=["bethe", "pairwise"], default="pairwise")
    an.add_argument("--out")
    an.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("summarize", help="per-scheduler summary of a bench CSV")
    s.add_argument("--csv", required=True)
    s.add_argument("--baseline", default="abp")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_summarize)
    return p


def main(argv=None) -> int:
    from .analysis import NoFixedPointError
    from .bench import SummaryError
    from .oracle import TooLargeError

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except UsageError as exc:
        print(f"resbp: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ModelError, SummaryError, TooLargeError, NoFixedPointError) as exc:
        print(f"resbp: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # e.g. a scheduler that cannot handle this model
        print(f"resbp: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
