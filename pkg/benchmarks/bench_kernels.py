"""Time the compiled kernels against the pure-Python mirror.

Runs the same filter recursions and batch updates through both backends,
checks that they agree, and prints the median wall time of each.

    python3 benchmarks/bench_kernels.py [--T 5000] [--repeat 5]
"""

import argparse
import statistics
import time

import numpy as np

from isdfilter import kernels
from isdfilter.densities import make_model
from isdfilter.filter import StaticParams, run_filter
from isdfilter.update import PenaltySpec, isd_update_many


def _cases(T, rng):
    pois = make_model("poisson")
    gvol = make_model("gaussian-vol")
    tloc = make_model("t-location", nu=3.0, sigma=1.0)
    return [
        ("filter poisson isd", lambda: run_filter(
            pois, rng.poisson(1.0, T), statics=StaticParams(PenaltySpec.static(10.0), [0.0], [[0.97]]))),
        ("filter gaussian-vol isd", lambda: run_filter(
            gvol, rng.normal(size=T), statics=StaticParams(PenaltySpec.static(5.0), [0.0], [[0.95]]))),
        ("filter t-location isd", lambda: run_filter(
            tloc, rng.standard_t(3.0, T), statics=StaticParams(PenaltySpec.static(2.0), [0.0], [[0.9]]))),
        ("batch poisson update", lambda: isd_update_many(
            pois, rng.poisson(2.0, T), rng.normal(size=T), np.full(T, 3.0))),
    ]


def _time(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def _values(out):
    return out.predictions if hasattr(out, "predictions") else np.asarray(out[0])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=5000, help="series length / batch size")
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions per case")
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    active = kernels.backend
    print(f"{'case':<26}{'python [s]':>12}{'cython [s]':>12}{'speedup':>10}")
    try:
        for name, _ in _cases(args.T, np.random.default_rng(0)):
            res = {}
            for be in ("python", "cython"):
                kernels.backend = kernels.get_backend(be)
                # same data for both backends
                fn = dict(_cases(args.T, np.random.default_rng(0)))[name]
                res[be] = _time(fn, args.repeat)
            np.testing.assert_allclose(_values(res["python"][1]), _values(res["cython"][1]), rtol=1e-9, atol=1e-9)
            tp, tc = res["python"][0], res["cython"][0]
            print(f"{name:<26}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x")
    finally:
        kernels.backend = active


if __name__ == "__main__":
    main()
