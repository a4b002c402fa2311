"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are run on identical inputs; the script checks that they
agree before reporting timings.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from fockga import kernels
from fockga.fock import _choose_taylor
from fockga.toolbox import Kind, generator


def _best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_taylor(backend, t_max, repeat, cols=1):
    gen = generator(Kind.BEAM_SPLITTER, t_max)
    m = sp.csr_matrix(gen.matrix * 0.4)
    d = m.shape[0]
    rng = np.random.default_rng(0)
    block = rng.normal(size=(d, cols)) + 1j * rng.normal(size=(d, cols))
    block /= np.linalg.norm(block)
    order, steps = _choose_taylor(float(abs(m).sum(axis=0).max()), 10 ** 6)
    args = (m.indptr.astype(np.int32), m.indices.astype(np.int32), m.data.astype(complex),
            block, 1.0 / steps, steps, order, 2.0 ** -53)
    return _best_of(lambda: backend.taylor_expm_csr(*args)[0], repeat)


def bench_posterior(backend, n_seq, repeat):
    rng = np.random.default_rng(1)
    k, g, mu = 400, 61, 8
    p = rng.dirichlet(np.ones(k), size=g)
    logp_t = np.log(p.T).copy()
    idx = rng.integers(0, k, size=(n_seq, mu)).astype(np.int64)
    w = np.full(g, 1.0 / g)
    theta = np.linspace(-0.13, 0.13, g)
    return _best_of(lambda: backend.posterior_variances(logp_t, idx, np.log(w), theta), repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--t-max", type=int, default=60, dest="t_max")
    ap.add_argument("--sequences", type=int, default=100_000)
    args = ap.parse_args(argv)
    py = kernels.get_backend("python")
    try:
        cc = kernels.get_backend("compiled")
    except RuntimeError:
        print("compiled kernels not built; only the fallback is timed")
        cc = None
    rows = []
    for name, fn, size in (("taylor_expm_csr", bench_taylor, args.t_max),
                           ("posterior_variances", bench_posterior, args.sequences)):
        t_py, out_py = fn(py, size, args.repeat)
        if cc is not None:
            t_cc, out_cc = fn(cc, size, args.repeat)
            diff = float(np.max(np.abs(np.asarray(out_py) - np.asarray(out_cc))))
            rows.append((name, size, t_py, t_cc, t_py / t_cc, diff))
        else:
            rows.append((name, size, t_py, float("nan"), float("nan"), 0.0))
    print(f"{'kernel':<22}{'size':>8}{'python s':>12}{'compiled s':>12}{'speedup':>9}{'max diff':>11}")
    for r in rows:
        print(f"{r[0]:<22}{r[1]:>8}{r[2]:>12.4f}{r[3]:>12.4f}{r[4]:>9.2f}{r[5]:>11.1e}")


if __name__ == "__main__":
    main()
