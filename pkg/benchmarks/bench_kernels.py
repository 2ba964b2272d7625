"""Compare the compiled kernels with the pure-Python fallback.

Runs every schedule on one seeded grid with a fixed update budget under each
backend, checks the results are bit-identical and prints updates per second.

    python benchmarks/bench_kernels.py --n 7 --c 7 --updates 200000
"""

import argparse
import time

from resbp._backend import available_backends
from resbp.bench import GridSpec, gen_ising_grid
from resbp.model import build_graph
from resbp.schedulers import RunConfig, run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=7)
    p.add_argument("--c", type=float, default=7.0)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--updates", type=int, default=200_000)
    p.add_argument("--repeat", type=int, default=3)
    a = p.parse_args()

    card, factors = gen_ising_grid(GridSpec(a.n, a.c, a.seed))
    g = build_graph(factors, card)
    backends = available_backends()
    print(f"grid {a.n}x{a.n}, C={a.c:g}, seed {a.seed}: {g.n_edges} messages; backends {', '.join(backends)}")
    print(f"{'sched':6} {'backend':8} {'updates':>9} {'best s':>8} {'upd/s':>11} {'speedup':>8}  identical")
    for sched in ("sbp", "rr", "abp", "trp", "rbp"):
        base, ref = None, None
        for backend in backends[::-1]:  # python first
            best = float("inf")
            for _ in range(a.repeat if backend != "python" else 1):
                cfg = RunConfig(sched, tol=1e-12, max_updates=a.updates, backend=backend)
                t0 = time.perf_counter()
                rec, state = run(g, cfg)
                best = min(best, time.perf_counter() - t0)
            key = (rec.key(), state.values.tobytes())
            ref = ref or key
            base = base or best
            print(f"{sched:6} {backend:8} {rec.updates:9d} {best:8.3f} {rec.updates / best:11.0f} "
                  f"{base / best:8.1f}  {key == ref}")


if __name__ == "__main__":
    main()
