"""Compare the compiled and pure-Python kernels.

Run with ``python3 benchmarks/bench_kernels.py``. Each workload is run on
both backends; results are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from resfluor import kernels
from resfluor.emitter import CW, EmitterParams, PulseTrain, generator_parts


def integrate_workload(drive, t_end, n_out):
    drift, coupling = generator_parts(EmitterParams(5.5, 9.68))
    s0, s1, w0, w1 = drive.segments(0.0, t_end)
    x0 = np.array([1, 0, 0, 0], dtype=complex)
    t_out = np.linspace(0.0, t_end, n_out)

    def run(impl):
        return impl.integrate_linear(drift, coupling, s0, s1, w0, w1, x0, t_out, 1e-10, 1e-12)

    return run


def histogram_workload(n, rate, bin_ps, n_bins, seed=0):
    rng = np.random.default_rng(seed)
    ta = np.cumsum(rng.exponential(1e3 / rate, n)).astype(np.int64)
    tb = np.cumsum(rng.exponential(1e3 / rate, n)).astype(np.int64)

    def run(impl):
        return impl.pair_histogram(ta, tb, bin_ps, n_bins, False)

    return run


WORKLOADS = {
    "integrate cw 200 ns": integrate_workload(CW(0.57), 200.0, 4001),
    "integrate pulses 40x25 ns": integrate_workload(PulseTrain(0.628, 0.044, 5.0, 25.0), 1000.0, 20001),
    "histogram 1e5 tags": histogram_workload(100_000, 0.05, 100, 500),
    "histogram 1e6 tags": histogram_workload(1_000_000, 0.05, 100, 500),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["python"] + (["compiled"] if kernels._core is not None else [])
    if len(backends) == 1:
        print("compiled kernels are not built; timing the Python fallback only")
    print(f"{'workload':<28}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, run in WORKLOADS.items():
        results = {b: run(kernels.get(b)) for b in backends}
        if len(backends) == 2:
            a, c = results["python"], results["compiled"]
            if not np.allclose(a, c, rtol=1e-6, atol=1e-9):
                raise SystemExit(f"{name}: backends disagree")
        best = {b: min(timeit.repeat(lambda b=b: run(kernels.get(b)), number=1, repeat=args.repeat))
                for b in backends}
        line = f"{name:<28}" + "".join(f"{best[b] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{best['python'] / best['compiled']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
