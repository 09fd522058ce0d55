"""Compiled vs numpy kernels on the workloads the controller generates.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from mvdc_lnmpc._backend import get_kernels
from mvdc_lnmpc.model import default_params, restoration_equilibrium


def workloads(params, topo):
    pvec = params.kernel_vector()
    d = np.array([10e6, 3e6])
    x0, u0 = restoration_equilibrium(params, topo, np.array([10e6, 0.0]))
    n_p = 10
    u_seq = np.full(n_p, u0 + 20.0)
    d_seq = np.tile(d, (n_p, 1))
    # one finite-difference trajectory Jacobian: 2 n_p + 1 rollouts
    u_batch = np.tile(u_seq, (2 * n_p + 1, 1))
    u_batch[1:n_p + 1] += 0.05 * np.eye(n_p)
    u_batch[n_p + 1:] -= 0.05 * np.eye(n_p)
    g, s = topo.n_gen, topo.n_sc
    return {
        "rk4_step": lambda k: k.rk4_step(pvec, g, s, x0, u0, d, 5e-3, 10),
        "rollout (n_p=10)": lambda k: k.rollout(pvec, g, s, x0, u_seq, d_seq, 5e-3, 10),
        "rollout_batch (21 x 10)": lambda k: k.rollout_batch(pvec, g, s, x0, u_batch, d_seq,
                                                             5e-3, 10),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    params, topo = default_params()
    backends = {"python": get_kernels("python")}
    try:
        backends["cython"] = get_kernels("cython")
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<26}" + "".join(f"{b + ' (us)':>16}" for b in backends) + f"{'speed-up':>10}")
    for name, fn in workloads(params, topo).items():
        times = {}
        for b, mod in backends.items():
            fn(mod)  # warm-up
            times[b] = 1e6 * min(timeit.repeat(lambda: fn(mod), number=1,
                                               repeat=args.repeat))
        row = f"{name:<26}" + "".join(f"{times[b]:>16.1f}" for b in backends)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
