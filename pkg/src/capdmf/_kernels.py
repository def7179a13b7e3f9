"""Hot inner loops with two interchangeable backends.

Every kernel exists as a pure-numpy implementation and, when numba is
importable, as an ``@njit`` twin. The module-level names (``fir_same``,
``sampled_fir``, ...) are bound to the numba versions unless the
environment variable ``CAPDMF_DISABLE_NUMBA`` is set to a truthy value
before import, in which case the numpy versions are used. Names listed in
:data:`NUMPY_PREFERRED` always bind to numpy because it is faster there.

Both implementation sets are also exposed through :data:`IMPLEMENTATIONS`
so tests and benchmarks can compare them side by side.

Index conventions
-----------------
``sampled_fir(x, taps, start, step, count)`` returns the samples
``y[start + k*step]`` (k = 0..count-1) of the same-mode convolution
``y = x * taps`` whose alignment is the taps' centre ``(L-1)//2``.
Samples of ``x`` outside ``[0, N)`` count as zero.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_FLAG = "CAPDMF_DISABLE_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_fir_same(x, taps):
    d = (taps.size - 1) // 2
    return np.convolve(x, taps)[d : d + x.size]


def _window_matrix(x, L, start, step, count):
    # rows are x[n+d+1-L .. n+d] for n = start + k*step, zero-padded
    d = (L - 1) // 2
    first = start + d + 1 - L
    last = start + (count - 1) * step + d
    pad_left = max(0, -first)
    pad_right = max(0, last + 1 - x.size)
    xp = np.concatenate((np.zeros(pad_left), x, np.zeros(pad_right)))
    rows = first + pad_left + step * np.arange(count)
    return sliding_window_view(xp, L)[rows]


def _np_sampled_fir(x, taps, start, step, count):
    W = _window_matrix(x, taps.size, start, step, count)
    return W @ taps[::-1]


def _np_sampled_fir_adjoint(x, err, start, step, L):
    W = _window_matrix(x, L, start, step, err.size)
    return (W.T @ err)[::-1]


def _np_cap_modulate(s_i, s_q, p, pb, sps):
    K = s_i.size
    L = p.size
    up_i = np.zeros((K - 1) * sps + 1)
    up_q = np.zeros((K - 1) * sps + 1)
    up_i[::sps] = s_i
    up_q[::sps] = s_q
    out = np.convolve(up_i, p) - np.convolve(up_q, pb)
    assert out.size == (K - 1) * sps + L
    return np.sqrt(2.0) * out


def _np_lag_xcorr(x, y, max_lag):
    # c[tau] = sum_n x[n] y[n + tau], tau = 0..max_lag
    n = x.size + y.size
    nfft = 1 << (n - 1).bit_length()
    c = np.fft.irfft(np.conj(np.fft.rfft(x, nfft)) * np.fft.rfft(y, nfft), nfft)
    return c[: max_lag + 1]


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _nb_fir_same(x, taps):
        # tap-outer order keeps the inner loop contiguous and vectorizable
        N = x.size
        L = taps.size
        d = (L - 1) // 2
        out = np.zeros(N)
        for j in range(L):
            t = taps[j]
            s = d - j
            n0 = max(0, -s)
            n1 = min(N, N - s)
            for n in range(n0, n1):
                out[n] += t * x[n + s]
        return out

    @_jit
    def _nb_sampled_fir(x, taps, start, step, count):
        N = x.size
        L = taps.size
        d = (L - 1) // 2
        out = np.zeros(count)
        for k in range(count):
            c = start + k * step + d
            acc = 0.0
            for j in range(L):
                i = c - j
                if 0 <= i < N:
                    acc += taps[j] * x[i]
            out[k] = acc
        return out

    @_jit
    def _nb_sampled_fir_adjoint(x, err, start, step, L):
        N = x.size
        d = (L - 1) // 2
        g = np.zeros(L)
        for k in range(err.size):
            c = start + k * step + d
            e = err[k]
            for j in range(L):
                i = c - j
                if 0 <= i < N:
                    g[j] += e * x[i]
        return g

    @_jit
    def _nb_cap_modulate(s_i, s_q, p, pb, sps):
        K = s_i.size
        L = p.size
        out = np.zeros((K - 1) * sps + L)
        r2 = np.sqrt(2.0)
        for k in range(K):
            a = r2 * s_i[k]
            b = r2 * s_q[k]
            o = k * sps
            for j in range(L):
                out[o + j] += a * p[j] - b * pb[j]
        return out

    @_jit
    def _nb_lag_xcorr(x, y, max_lag):
        Nx = x.size
        Ny = y.size
        c = np.zeros(max_lag + 1)
        for n in range(min(Nx, Ny)):
            a = x[n]
            t1 = min(max_lag + 1, Ny - n)
            for tau in range(t1):
                c[tau] += a * y[n + tau]
        return c


IMPLEMENTATIONS: dict[str, dict] = {
    "numpy": {
        "fir_same": _np_fir_same,
        "sampled_fir": _np_sampled_fir,
        "sampled_fir_adjoint": _np_sampled_fir_adjoint,
        "cap_modulate": _np_cap_modulate,
        "lag_xcorr": _np_lag_xcorr,
    }
}
if HAVE_NUMBA:
    IMPLEMENTATIONS["numba"] = {
        "fir_same": _nb_fir_same,
        "sampled_fir": _nb_sampled_fir,
        "sampled_fir_adjoint": _nb_sampled_fir_adjoint,
        "cap_modulate": _nb_cap_modulate,
        "lag_xcorr": _nb_lag_xcorr,
    }

BACKEND = "numba" if HAVE_NUMBA and not _numba_disabled() else "numpy"

# np.convolve's SIMD inner loop beats every njit variant tried for a full-length FIR
NUMPY_PREFERRED = frozenset({"fir_same"})

_active = {
    name: IMPLEMENTATIONS["numpy" if name in NUMPY_PREFERRED else BACKEND][name]
    for name in IMPLEMENTATIONS["numpy"]
}
fir_same = _active["fir_same"]
sampled_fir = _active["sampled_fir"]
sampled_fir_adjoint = _active["sampled_fir_adjoint"]
cap_modulate_kernel = _active["cap_modulate"]
lag_xcorr = _active["lag_xcorr"]
