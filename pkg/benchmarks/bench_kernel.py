"""Compare the compiled and numpy kernel backends against the reference.

    python3 benchmarks/bench_kernel.py --n 5000 --p 0.005 --dim 64 --repeat 3
"""
import argparse
import time

import numpy as np

from aggforge.generators import GenSpec, generate_edges
from aggforge.graph import OperatorSpec, ap_reference, build_csr
from aggforge.kernel import SchedSpec, ap_blocked, available_backends, default_block_size, plan_blocks


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--p", type=float, default=0.005)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--ops", default="copylhs,sum;mul,max")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    edges = generate_edges(GenSpec("erdos_renyi", n=args.n, p=args.p, seed=args.seed))
    g = build_csr(edges, args.n)
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.n, args.dim))
    e = rng.uniform(0.5, 2.0, (g.num_edges, args.dim))
    B = default_block_size(args.dim, 8, 1 << 20)
    plan = plan_blocks(g, B)
    sched = SchedSpec(args.workers)
    print(f"|V|={args.n} |E|={g.num_edges} d={args.dim} B={B} n_B={plan.n_blocks} workers={args.workers}")
    print(f"{'op':<14}{'backend':<11}{'seconds':>10}{'vs ref':>9}  match")
    for text in args.ops.split(";"):
        spec = OperatorSpec.parse(text)
        t_ref, ref = best_of(lambda: ap_reference(g, x, e, spec), args.repeat)
        print(f"{text:<14}{'reference':<11}{t_ref:>10.4f}{1.0:>9.2f}")
        for backend in available_backends():
            t, out = best_of(lambda: ap_blocked(plan, x, e, spec, sched, backend=backend), args.repeat)
            print(f"{text:<14}{backend:<11}{t:>10.4f}{t_ref / t:>8.2f}x  {np.array_equal(out, ref)}")


if __name__ == "__main__":
    main()
