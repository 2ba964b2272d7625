"""Seeded Ising grids, experiment suites, CSV records and summaries."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import Factor, build_graph, read_model
from .oracle import ExactMarginals, TooLargeError, avg_kl, variable_elimination_marginals
from .propagation import Variant, compute_beliefs
from .rng import SplitMix64
from .schedulers import RunConfig, RunRecord, Scheduler, run

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "model_id", "scheduler", "variant", "damping", "tol", "seed", "converged", "updates",
    "sweeps", "wall_ms", "final_max_residual", "floored_entries", "avg_kl",
)
NODE_LOW = 1e-6
EXACT_MAX_SIDE = 12


@dataclass(frozen=True)
class GridSpec:
    n: int
    c: float
    seed: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid side must be at least 2")
        if not self.c > 0:
            raise ValueError("difficulty C must be positive")

    @property
    def model_id(self) -> str:
        return f"grid-{self.n}-{self.c:g}-{self.seed}"


def gen_ising_grid(spec: GridSpec) -> tuple[tuple[int, ...], list[Factor]]:
    """N*N binary variables (row-major ids) with random node tables and Ising couplings.

    Draw order: both entries of every node table in row-major order, then one
    coupling per edge, row-major, right neighbour before down neighbour.
    """
    n = spec.n
    rng = SplitMix64(spec.seed)
    factors = []
    for v in range(n * n):
        a = rng.uniform(NODE_LOW, 1.0)
        b = rng.uniform(NODE_LOW, 1.0)
        factors.append(Factor((v,), [a, b]))
    for r in range(n):
        for c in range(n):
            v = r * n + c
            nbrs = ([v + 1] if c + 1 < n else []) + ([v + n] if r + 1 < n else [])
            for w in nbrs:
                lam = rng.uniform(-0.5, 0.5)
                same, diff = math.exp(lam * spec.c), math.exp(-lam * spec.c)
                factors.append(Factor((v, w), [same, diff, diff, same]))
    return (2,) * (n * n), factors


# -- suites ---------------------------------------------------------------------------


@dataclass
class SuiteConfig:
    grids: list[GridSpec] = field(default_factory=list)
    runs: list[RunConfig] = field(default_factory=list)
    models: list[str] = field(default_factory=list)
    out: Optional[str] = None
    jobs: int = 1
    graph: str = "bethe"
    exact: bool = True

    def __post_init__(self):
        if not (self.grids or self.models) or not self.runs:
            raise ValueError("a suite needs at least one model and one run configuration")


def _run_config(d: dict) -> RunConfig:
    max_seconds = d.get("max_seconds")
    return RunConfig(
        scheduler=d["scheduler"],
        variant=d.get("variant", "sum"),
        gamma=d.get("damping", 0.2),
        tol=d.get("tol", 1e-5),
        max_updates=int(d.get("max_updates", 10_000_000)),
        max_seconds=math.inf if max_seconds is None else float(max_seconds),
        seed=d.get("seed", 0),
    )


def load_suite(text: str) -> SuiteConfig:
    """Parse a JSON suite description (see README for the format)."""
    d = json.loads(text)
    grids = []
    for g in d.get("grids", []):
        seeds = g["seeds"] if "seeds" in g else [g["seed"]]
        grids += [GridSpec(int(g["n"]), float(g["c"]), int(s)) for s in seeds]
    return SuiteConfig(
        grids=grids,
        runs=[_run_config(r) for r in d.get("runs", [])],
        models=list(d.get("models", [])),
        out=d.get("out"),
        jobs=int(d.get("jobs", 1)),
        graph=d.get("graph", "bethe"),
        exact=bool(d.get("exact", True)),
    )


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def record_row(rec: RunRecord, kl: Optional[float] = None) -> dict:
    cfg = rec.config
    return {
        "model_id": rec.model_id,
        "scheduler": cfg.scheduler.value,
        "variant": cfg.variant.short,
        "damping": _fmt(cfg.gamma),
        "tol": _fmt(float(cfg.tol)),
        "seed": "" if cfg.seed is None else str(cfg.seed),
        "converged": _fmt(rec.converged),
        "updates": str(rec.updates),
        "sweeps": str(rec.sweeps),
        "wall_ms": f"{rec.wall_ms:.3f}",
        "final_max_residual": _fmt(rec.final_max_residual),
        "floored_entries": str(rec.floored_entries),
        "avg_kl": "" if kl is None else _fmt(float(kl)),
    }


def to_csv(rows: Sequence[dict], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    if header:
        w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def exact_for(card, factors, side: Optional[int]) -> Optional[ExactMarginals]:
    if side is not None and side > EXACT_MAX_SIDE:
        return None
    try:
        return variable_elimination_marginals(card, factors)
    except TooLargeError:
        return None


def run_model(model_id, card, factors, configs, graph_kind="bethe", exact=True, side=None):
    """All configurations on one model; returns CSV row dicts."""
    graph = build_graph(factors, card, graph_kind)
    ref = exact_for(card, factors, side) if exact else None
    rows = []
    for cfg in configs:
        try:
            rec, state = run(graph, cfg, model_id=model_id)
        except Exception as exc:  # the suite never aborts on one run
            log.warning("run %s/%s failed: %s", model_id, cfg.scheduler.value, exc)
            rows.append({
                **{k: "" for k in CSV_COLUMNS},
                "model_id": model_id, "scheduler": cfg.scheduler.value, "variant": cfg.variant.short,
                "damping": _fmt(cfg.gamma), "tol": _fmt(float(cfg.tol)),
                "seed": "" if cfg.seed is None else str(cfg.seed),
                "converged": "false", "updates": "0", "sweeps": "0", "wall_ms": "0.000",
                "final_max_residual": "nan", "floored_entries": "0",
            })
            continue
        kl = None
        if ref is not None and cfg.variant is Variant.SUM_PRODUCT:
            kl = avg_kl(compute_beliefs(graph, state, cfg.variant).variables, ref)
        rows.append(record_row(rec, kl))
    return rows


def _grid_job(args):
    spec, configs, graph_kind, exact = args
    card, factors = gen_ising_grid(spec)
    return run_model(spec.model_id, card, factors, configs, graph_kind, exact, side=spec.n)


def _file_job(args):
    path, configs, graph_kind, exact = args
    card, factors = read_model(path)
    model_id = os.path.splitext(os.path.basename(path))[0]
    return run_model(model_id, card, factors, configs, graph_kind, exact)


def sort_rows(rows):
    return sorted(rows, key=lambda r: (r["model_id"], r["scheduler"], r["variant"]))


def run_suite(suite: SuiteConfig) -> str:
    """Run every (model, configuration) pair and return the CSV text."""
    jobs = [(_grid_job, (g, suite.runs, suite.graph, suite.exact)) for g in suite.grids]
    jobs += [(_file_job, (p, suite.runs, suite.graph, suite.exact)) for p in suite.models]
    rows = []
    if suite.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=suite.jobs) as pool:
            for part in pool.map(_call, jobs):
                rows += part
    else:
        for job in jobs:
            rows += _call(job)
    text = to_csv(sort_rows(rows))
    if suite.out:
        with open(suite.out, "w", newline="\n") as fh:
            fh.write(text)
    return text


def _call(job):
    fn, args = job
    return fn(args)


# -- summaries ------------------------------------------------------------------------


class SummaryError(ValueError):
    pass


def read_rows(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in CSV_COLUMNS):
        raise SummaryError("malformed CSV: missing required columns")
    rows = list(reader)
    for r in rows:
        try:
            r["converged"] = r["converged"] == "true"
            r["updates"] = int(r["updates"])
            r["avg_kl"] = float(r["avg_kl"]) if r["avg_kl"] else None
        except (TypeError, ValueError) as exc:
            raise SummaryError(f"malformed CSV row: {exc}") from None
    return rows


def summarize(text: str, baseline: str = "abp") -> list[dict]:
    """Per (scheduler, variant): convergence rate, update counts and ratios against ``baseline``.

    ``median_updates`` is over instances where every scheduler converged;
    ``median_ratio`` is over instances where this scheduler and the baseline
    both converged; ``ratio_trend`` is the slope of log(ratio) against the
    baseline's update count (an exponential fit).
    """
    rows = read_rows(text)
    by = {}
    for r in rows:
        by.setdefault((r["scheduler"], r["variant"]), {})[r["model_id"]] = r
    variants = sorted({v for _, v in by})
    if not any((baseline, v) in by for v in variants):
        raise SummaryError(f"baseline not found: {baseline!r}")
    out = []
    for (sched, variant), runs in sorted(by.items()):
        peers = {k: v for k, v in by.items() if k[1] == variant}
        models = sorted(runs)
        mutual = [m for m in models if all(m in p and p[m]["converged"] for p in peers.values())]
        base = by.get((baseline, variant), {})
        pairs = [(runs[m]["updates"], base[m]["updates"]) for m in models
                 if runs[m]["converged"] and m in base and base[m]["converged"] and base[m]["updates"] > 0]
        ratios = [a / b for a, b in pairs]
        kls = [runs[m]["avg_kl"] for m in models if runs[m]["converged"] and runs[m]["avg_kl"] is not None]
        trend = None
        if len(pairs) >= 2 and len({b for _, b in pairs}) >= 2:
            x = np.array([b for _, b in pairs], dtype=float)
            y = np.log(np.array(ratios))
            trend = float(np.polyfit(x, y, 1)[0])
        n_conv = sum(runs[m]["converged"] for m in models)
        out.append({
            "scheduler": sched,
            "variant": variant,
            "runs": len(models),
            "converged": n_conv,
            "convergence_pct": 100.0 * n_conv / len(models),
            "median_updates": statistics.median(runs[m]["updates"] for m in mutual) if mutual else None,
            "median_ratio": statistics.median(ratios) if ratios else None,
            "ratio_trend": trend,
            "mean_avg_kl": statistics.fmean(kls) if kls else None,
        })
    return out


SUMMARY_COLUMNS = ("scheduler", "variant", "runs", "converged", "convergence_pct", "median_updates",
                   "median_ratio", "ratio_trend", "mean_avg_kl")


def format_summary(summary: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in summary:
        w.writerow({k: "" if row[k] is None else row[k] for k in SUMMARY_COLUMNS})
    return buf.getvalue()


def scheduler_suite(names: Sequence[str], variant="sum", **kw) -> list[RunConfig]:
    return [RunConfig(scheduler=Scheduler.parse(s), variant=variant, **kw) for s in names]
