"""Time the hot kernels under both backends.

Run with the package installed:

    python3 benchmarks/bench_kernels.py          # numba if available
    CASCAL_NUMBA=0 python3 benchmarks/bench_kernels.py

The numba path includes a warm-up call so compile time is not billed to the
measurement.  Both backends are checked against each other before timing.
"""

import time

import numpy as np

from cascal import backend, kernels


def make_inputs(rng, n=200_000, c=10, n_bins=15):
    probs = rng.dirichlet(np.ones(c) * 0.5, size=n)
    conf = probs.max(axis=1)
    idx = kernels.bin_index(conf, n_bins)
    correct = rng.random(n) < conf
    logits = np.log(np.maximum(probs, 1e-12))
    temps = rng.uniform(0.3, 3.0, n)
    scaled = kernels._NUMPY_IMPL["scaled_softmax"](logits, temps)
    iso_x = np.sort(rng.random(4000))
    iso_y = (rng.random(4000) < iso_x).astype(np.float64)
    iso_w = np.ones(4000)
    return {
        "bin_totals": (idx, conf, correct.astype(np.float64), n_bins),
        "cell_moments": (idx, probs, n_bins),
        "pav": (iso_y, iso_w),
        "scaled_softmax": (logits, temps),
        "conf_temp_grad": (logits, scaled, scaled.argmax(axis=1), temps),
    }


def best_of(fn, args, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    inputs = make_inputs(rng)
    numpy_impl = kernels._NUMPY_IMPL
    rows = []
    if backend.HAS_NUMBA:
        numba_impl = kernels.numba_impl()
        for name, args in inputs.items():
            numba_impl[name](*args)  # warm-up / compile
            got = numba_impl[name](*args)
            want = numpy_impl[name](*args)
            got = got if isinstance(got, tuple) else (got,)
            want = want if isinstance(want, tuple) else (want,)
            for g, w in zip(got, want):
                np.testing.assert_allclose(g, w, atol=1e-10)
            rows.append((name, best_of(numpy_impl[name], args), best_of(numba_impl[name], args)))
        print(f"{'kernel':<18}{'numpy':>12}{'numba':>12}{'speedup':>10}")
        for name, t_np, t_nb in rows:
            print(f"{name:<18}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x")
    else:
        for name, args in inputs.items():
            rows.append((name, best_of(numpy_impl[name], args)))
        print(f"{'kernel':<18}{'numpy':>12}   (numba unavailable)")
        for name, t_np in rows:
            print(f"{name:<18}{t_np * 1e3:>10.2f}ms")
    print(f"active backend: {backend.backend_name()}")


if __name__ == "__main__":
    main()
