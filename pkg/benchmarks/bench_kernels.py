"""Time the numba kernels against the numpy fallback.

Each path runs in its own interpreter, because the choice is made once at
import time from QUASIPART_DISABLE_NUMBA.  Usage:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import json
import math
import os
import subprocess
import sys
import timeit


def _cases():
    import numpy as np

    from quasipart import kernels
    from quasipart.density import MixtureModel, ProductDensity, QuasiGaussian1D
    from quasipart.estimation import FitConfig, fit

    rng = np.random.default_rng(0)
    qn = QuasiGaussian1D.from_mass_split
    model = MixtureModel((0.3, 0.4, 0.3), (
        ProductDensity((qn(0.0, 0.0, 1.0, 1.0, 0.5), qn(0.0, 1.0, 0.0, 1.0, 0.5))),
        ProductDensity((qn(6.0, 1.0, 0.0, 1.0, 0.5), qn(2.0, 0.0, 1.0, 1.0, 0.4))),
        ProductDensity((qn(2.0, 0.0, 1.0, 1.0, 0.6), qn(7.0, 1.0, 0.0, 1.0, 0.5))),
    ))
    X = model.sample(20_000, rng)
    params = model.kernel_params
    x = np.ascontiguousarray(X[:5000, 0])
    r = rng.uniform(0.2, 1.0, size=x.size)
    floor = np.full(x.size, math.log(1e-4))
    T = rng.normal(size=(300, 600))
    small = X[:2000]

    def pivot():
        kernels.pivot(T.copy(), 17, 42)

    return {
        "component_logpdf (20000 x 3 x 2)": lambda: kernels.component_logpdf(X, *params),
        "marginal_update (5000 points)": lambda: kernels.marginal_update(
            x, r, 0.3, 0.0, 0.0, 1.0, 1e-3, 20.0, -0.9 + 1e-9, 10.0, x.min(), x.max(), floor, 2),
        "pivot (300 x 600 tableau)": pivot,
        "fit (2000 points, N in 1..4)": lambda: fit(small, FitConfig(seed=0)),
    }


def _worker(repeat):
    import warnings

    from quasipart._accel import USE_NUMBA

    warnings.simplefilter("ignore")
    out = {"numba": USE_NUMBA, "times": {}}
    for name, func in _cases().items():
        func()  # compile or warm caches
        n = 1 if name.startswith("fit") else 5
        out["times"][name] = min(timeit.repeat(func, number=n, repeat=repeat)) / n
    print(json.dumps(out))


def _run(disable, repeat):
    env = dict(os.environ)
    env["QUASIPART_DISABLE_NUMBA"] = "1" if disable else "0"
    proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        _worker(args.repeat)
        return
    nb = _run(False, args.repeat)
    npy = _run(True, args.repeat)
    if not nb["numba"]:
        print("numba is not installed; both columns use the numpy path")
    width = max(map(len, nb["times"]))
    print(f"{'kernel':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for name, t_nb in nb["times"].items():
        t_np = npy["times"][name]
        print(f"{name:<{width}}  {t_nb * 1e3:8.2f}ms  {t_np * 1e3:8.2f}ms  {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
