"""Time the numba kernels against their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Sizes match one training
epoch of the default profile: a 10,000-symbol frame at 4 samples per symbol
and a 63-tap filter pair. Each kernel is warmed up once so JIT compilation is
excluded from the timings.
"""

import argparse
import timeit

import numpy as np

from capdmf import _kernels


def cases(n_symbols: int, sps: int, L: int, rng):
    n = n_symbols * sps + L
    x = rng.normal(size=n)
    taps = rng.normal(size=L)
    lp = rng.normal(size=101)
    si, sq = rng.normal(size=n_symbols), rng.normal(size=n_symbols)
    err = rng.normal(size=n_symbols)
    start = (L - 1) // 2
    return {
        "fir_same (101 taps)": ("fir_same", (x, lp)),
        "sampled_fir": ("sampled_fir", (x, taps, start, sps, n_symbols)),
        "sampled_fir_adjoint": ("sampled_fir_adjoint", (x, err, start, sps, L)),
        "cap_modulate": ("cap_modulate", (si, sq, taps, taps, sps)),
        "lag_xcorr (256 lags)": ("lag_xcorr", (x, x, 256)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=10_000)
    ap.add_argument("--sps", type=int, default=4)
    ap.add_argument("--taps", type=int, default=63)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args(argv)

    backends = sorted(_kernels.IMPLEMENTATIONS)
    if "numba" not in backends:
        print("numba is not installed; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    table = cases(args.symbols, args.sps, args.taps, rng)

    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for label, (name, inputs) in table.items():
        best = {}
        ref = None
        for b in backends:
            fn = _kernels.IMPLEMENTATIONS[b][name]
            out = fn(*inputs)
            if ref is None:
                ref = out
            elif not np.allclose(out, ref, rtol=1e-9, atol=1e-9):
                raise SystemExit(f"{label}: backends disagree")
            timer = timeit.Timer(lambda: fn(*inputs))
            number, _ = timer.autorange()
            best[b] = min(timer.repeat(args.repeat, number)) / number
        row = f"{label:24s}" + "".join(f"{best[b] * 1e6:11.1f} us" for b in backends)
        if len(backends) > 1:
            row += f"{best['numpy'] / best['numba']:9.1f}x"
            if name in _kernels.NUMPY_PREFERRED:
                row += "  (active: numpy)"
        print(row)


if __name__ == "__main__":
    main()
