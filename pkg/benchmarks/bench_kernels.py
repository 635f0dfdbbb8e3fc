"""Time the numba-compiled kernels against their plain-Python versions.

Usage::

    python3 benchmarks/bench_kernels.py --grid 25 --draws 20000 --repeat 3

The compiled timings exclude the first (compiling) call.  Both versions run
on identical inputs and the script checks that they agree.
"""

import argparse
import time

import numpy as np

from typeg import sparse
from typeg._accel import JIT_ENABLED, python_version
from typeg.dists import _gig_fill
from typeg.mesh import assemble_fem, grid_mesh


def best_of(func, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = func()
        times.append(time.perf_counter() - t0)
    return min(times), out


def precision_problem(m):
    fem = assemble_fem(grid_mesh(0.0, 10.0, 0.0, 10.0, m, m))
    Ci = np.reciprocal(fem.c_diag)
    K = fem.G + fem.C
    Q = (K.T.multiply(Ci) @ K).tocsr()
    return Q, sparse.SymbolicCholesky(Q)


def cholesky_case(Q, sym):
    args = (sym.n, Q.indptr.astype(np.int64), Q.indices.astype(np.int64), Q.data.astype(np.float64),
            sym.perm, sym.iperm, sym.Rp, sym.Rj, sym.Lp, sym.Li)

    def make(kernel):
        def call():
            Lx = np.zeros(sym.nnz)
            kernel(*args, Lx)
            return Lx
        return call

    return make(sparse._chol_numeric), make(python_version(sparse._chol_numeric))


def takahashi_case(Q, sym):
    Lx = sym.factor(Q).Lx

    def make(kernel):
        return lambda: kernel(sym.n, sym.Lp, sym.Li, Lx)

    return make(sparse._takahashi), make(python_version(sparse._takahashi))


def gig_case(draws):
    rng = np.random.default_rng(0)
    c = rng.uniform(-3.0, 3.0, draws)
    a = rng.uniform(0.1, 4.0, draws)
    b = rng.uniform(0.1, 4.0, draws)

    def make(kernel):
        def call():
            out = np.empty(draws)
            kernel(c, a, b, np.random.default_rng(1), out)
            return out
        return call

    return make(_gig_fill), make(python_version(_gig_fill))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=25, help="nodes per side of the 2D test mesh")
    ap.add_argument("--draws", type=int, default=20000, help="GIG draws")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if not JIT_ENABLED:
        print("numba unavailable or TYPEG_DISABLE_JIT set: both columns time the Python code")
    Q, sym = precision_problem(args.grid)
    cases = [
        (f"sparse Cholesky (n={sym.n}, nnz(L)={sym.nnz})", cholesky_case(Q, sym)),
        (f"Takahashi selected inverse (n={sym.n})", takahashi_case(Q, sym)),
        (f"GIG sampling ({args.draws} draws)", gig_case(args.draws)),
    ]
    print(f"{'kernel':<48}{'numba [s]':>12}{'python [s]':>12}{'speed-up':>10}")
    for name, (fast, slow) in cases:
        fast()  # compile
        t_fast, out_fast = best_of(fast, args.repeat)
        t_slow, out_slow = best_of(slow, max(1, args.repeat // 3))
        if not np.allclose(out_fast, out_slow, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: compiled and Python results differ")
        print(f"{name:<48}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
