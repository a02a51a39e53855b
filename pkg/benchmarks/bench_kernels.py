"""Compiled vs numpy kernels: indicator sweep, loading rows and a full sweep.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  The numpy
backend is loaded directly from ``cfacar._pykernels``; the compiled one from
``cfacar._kernels`` (skipped if the extension is not built).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cfacar import _pykernels, kernels
from cfacar.model import Model
from cfacar.sampler import SamplerConfig, ThetaCache, dense_v_inverse, initial_gamma, sweep
from cfacar.simulation import generate_dataset, scenario_from_catalogs, synthetic_catalogs


def _time(fn, repeat: int) -> float:
    fn()
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def theta_case(backend, q=10, m=5, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(q, q))
    Phi = np.corrcoef(A @ A.T + q * np.eye(q))
    omega = rng.normal(size=(q, m))
    theta = np.zeros(q, dtype=np.int8)
    Vinv, logdet = dense_v_inverse(Phi, 1.0, 1.0, 0.01, theta)
    u = rng.random(q)
    probs = np.empty(q)

    def run():
        backend.theta_sweep(Vinv.copy(), logdet, Phi, omega, theta.copy(), 0.99, np.log(0.1 / 0.9), u, probs)

    return run


def lambda_case(backend, model, seed=0):
    rng = np.random.default_rng(seed)
    Omega = rng.normal(size=(model.q, model.n))
    G = Omega @ Omega.T
    B = Omega @ model.Y.T
    psi = np.ones(model.p)
    mask = np.ascontiguousarray(model.mask.mask, dtype=np.uint8)
    z = rng.standard_normal((model.p, model.q))

    def run():
        backend.lambda_rows(G, B, psi, mask, 10.0, 1.0, z)

    return run


def sweep_case(model, seed=0):
    rng = np.random.default_rng(seed)
    state = model.initial_state(rng, initial_gamma(model, SamplerConfig()))
    cache = ThetaCache(model.q, model.E)

    def run():
        for _ in range(10):
            sweep(state, model, cache, rng, 0.05)

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    pw, fn = synthetic_catalogs(seed=1)
    sc = scenario_from_catalogs(pw, fn, 3.5, seed=0)
    data, _ = generate_dataset(sc)
    model = Model(data, sc.mask, sc.network)
    print(f"problem: p={model.p} genes, n={model.n} samples, q={model.q} pathways, nnz={model.mask.nnz}")

    backends = {"python": _pykernels}
    if kernels.compiled_available():
        from cfacar import _kernels

        backends["cython"] = _kernels
    else:
        print("compiled extension not built; timing the numpy backend only")

    rows = []
    for name, backend in backends.items():
        rows.append((name, "theta_sweep (q=10, m=5)", _time(theta_case(backend), args.repeat)))
        rows.append((name, f"lambda_rows (p={model.p})", _time(lambda_case(backend, model), args.repeat)))

    # full sweeps go through the dispatcher, so swap its bindings
    saved = kernels.theta_sweep, kernels.lambda_rows
    for name, backend in backends.items():
        kernels.theta_sweep, kernels.lambda_rows = backend.theta_sweep, backend.lambda_rows
        rows.append((name, "full sweep", _time(sweep_case(model), max(2, args.repeat // 5)) / 10))
    kernels.theta_sweep, kernels.lambda_rows = saved

    print(f"{'backend':<8} {'kernel':<28} {'best time':>12}")
    for name, what, t in rows:
        print(f"{name:<8} {what:<28} {t * 1e3:>9.3f} ms")
    if "cython" in backends:
        for what in sorted({r[1] for r in rows}):
            py = next(t for n, w, t in rows if n == "python" and w == what)
            cy = next(t for n, w, t in rows if n == "cython" and w == what)
            print(f"speed-up {what}: {py / cy:.1f}x")


if __name__ == "__main__":
    main()
