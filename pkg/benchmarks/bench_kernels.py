#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the two hot paths of the solvers: CSR matvec (inner loop of PCG and
power iteration) and the matrix-free BPX apply F F^T (the preconditioner).
Run after installing the package:

    python3 benchmarks/bench_kernels.py --dim 2 --level 7 --repeat 50

Note the backend actually used by the library is chosen at import time from
NEUTRONLAB_BACKEND; this script times both implementations in one process by
swapping the kernel functions.
"""

import argparse
import time

import numpy as np

from neutronlab import _kernels
from neutronlab.assembly import tensor_stiffness
from neutronlab.bpx import BpxApply


def timeit(fn, repeat):
    fn()  # warm-up (also triggers JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--level", type=int, default=7)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()

    m = tensor_stiffness(args.dim, args.level)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(m.n)
    print(f"matrix: dim={args.dim} level={args.level} n={m.n} nnz={m.nnz}")
    print(f"selected backend: {_kernels.backend_name()}")

    rows = []
    t_np = timeit(lambda: _kernels.csr_matvec_numpy(m.indptr, m.indices, m.data, x),
                  args.repeat)
    if _kernels.USE_NUMBA:
        t_nb = timeit(lambda: _kernels.csr_matvec(m.indptr, m.indices, m.data, x),
                      args.repeat)
    else:
        t_nb = float("nan")
    rows.append(("csr_matvec", t_nb, t_np))

    apply_ = BpxApply(args.dim, args.level)
    v = rng.standard_normal(apply_.n_fine)

    saved = (_kernels.interp_up, _kernels.interp_down)
    _kernels.interp_up = _kernels.interp_up_numpy
    _kernels.interp_down = _kernels.interp_down_numpy
    t_np = timeit(lambda: apply_.apply_fft(v), args.repeat)
    _kernels.interp_up, _kernels.interp_down = saved
    if _kernels.USE_NUMBA:
        t_nb = timeit(lambda: apply_.apply_fft(v), args.repeat)
    else:
        t_nb = float("nan")
    rows.append(("bpx apply F F^T", t_nb, t_np))

    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>9}")
    for name, t_nb, t_np in rows:
        speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:<18}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{speed:>9.2f}")


if __name__ == "__main__":
    main()
