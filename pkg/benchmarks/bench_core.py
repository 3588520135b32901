"""Compare the compiled and pure-NumPy batched kernels.

Usage: python benchmarks/bench_core.py [--batch 2048] [--assets 10] [--repeats 20]
"""
import argparse
import time

import numpy as np

from minvar import _core_py

try:
    from minvar import _core
except ImportError:
    _core = None


def make_batch(rng, batch, n):
    a = rng.standard_normal((batch, n, n))
    sigma = a @ a.transpose(0, 2, 1) / n + 0.5 * np.eye(n)
    sigma_true = sigma + 0.1 * np.eye(n)
    return sigma, sigma_true


def bench(backend, sigma, sigma_true, repeats):
    w, P, D, _ = backend.batch_gmvp(sigma)
    times = {}
    for name, fn in (
        ("batch_gmvp", lambda: backend.batch_gmvp(sigma)),
        ("batch_quadform", lambda: backend.batch_quadform(w, sigma_true)),
        ("batch_decision_grad", lambda: backend.batch_decision_grad(w, P, D, sigma_true)),
    ):
        fn()  # warm up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        times[name] = (time.perf_counter() - t0) / repeats
    return times


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=2048)
    parser.add_argument("--assets", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    sigma, sigma_true = make_batch(rng, args.batch, args.assets)

    backends = [("python", _core_py)]
    if _core is not None:
        backends.append(("cython", _core))
    else:
        print("compiled backend not built; benchmarking pure backend only")

    results = {name: bench(mod, sigma, sigma_true, args.repeats) for name, mod in backends}
    kernels = ["batch_gmvp", "batch_quadform", "batch_decision_grad"]
    print(f"\nbatch={args.batch} assets={args.assets} repeats={args.repeats}")
    header = f"{'kernel':22s}" + "".join(f"{name:>12s}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for kernel in kernels:
        row = f"{kernel:22s}"
        for name, _ in backends:
            row += f"{results[name][kernel] * 1e3:11.3f}m"
        if len(backends) == 2:
            row += f"{results['python'][kernel] / results['cython'][kernel]:9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
