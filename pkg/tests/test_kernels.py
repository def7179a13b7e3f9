import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdmf import _kernels

BACKENDS = sorted(_kernels.IMPLEMENTATIONS)


def _same_conv(x, taps):
    d = (taps.size - 1) // 2
    return np.convolve(x, taps)[d : d + x.size]


@pytest.mark.parametrize("backend", BACKENDS)
def test_fir_same_matches_convolve(backend, rng):
    k = _kernels.IMPLEMENTATIONS[backend]
    for L in (1, 3, 8, 31, 101):
        x = rng.normal(size=257)
        taps = rng.normal(size=L)
        np.testing.assert_allclose(k["fir_same"](x, taps), _same_conv(x, taps), atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sampled_fir_is_decimated_same_conv(backend, rng):
    k = _kernels.IMPLEMENTATIONS[backend]
    x = rng.normal(size=300)
    taps = rng.normal(size=31)
    full = _same_conv(x, taps)
    for start, step, count in ((0, 4, 75), (15, 4, 70), (3, 7, 20), (299, 1, 1)):
        got = k["sampled_fir"](x, taps, start, step, count)
        np.testing.assert_allclose(got, full[start : start + step * count : step], atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sampled_fir_treats_outside_as_zero(backend, rng):
    k = _kernels.IMPLEMENTATIONS[backend]
    x = rng.normal(size=40)
    taps = rng.normal(size=9)
    padded = np.concatenate((np.zeros(20), x, np.zeros(20)))
    ref = _same_conv(padded, taps)[20 - 8 : 20 + 48 : 4]
    np.testing.assert_allclose(k["sampled_fir"](x, taps, -8, 4, 14), ref, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(20, 200),
    L=st.sampled_from([3, 5, 11, 31]),
    step=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
)
def test_adjoint_identity(backend, n, L, step, seed):
    # <A t, e> == <t, A^T e>
    k = _kernels.IMPLEMENTATIONS[backend]
    r = np.random.default_rng(seed)
    x = r.normal(size=n)
    taps = r.normal(size=L)
    count = max(1, (n - 1) // step)
    e = r.normal(size=count)
    lhs = np.dot(k["sampled_fir"](x, taps, 0, step, count), e)
    rhs = np.dot(taps, k["sampled_fir_adjoint"](x, e, 0, step, L))
    assert np.isclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_cap_modulate_kernel_matches_upsampled_convolution(backend, rng):
    k = _kernels.IMPLEMENTATIONS[backend]
    si, sq = rng.normal(size=12), rng.normal(size=12)
    p, pb = rng.normal(size=7), rng.normal(size=7)
    out = k["cap_modulate"](si, sq, p, pb, 3)
    ref = np.zeros(11 * 3 + 7)
    for kk in range(12):
        ref[3 * kk : 3 * kk + 7] += np.sqrt(2) * (si[kk] * p - sq[kk] * pb)
    np.testing.assert_allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_lag_xcorr_direct_sum(backend, rng):
    k = _kernels.IMPLEMENTATIONS[backend]
    x = rng.normal(size=50)
    y = rng.normal(size=80)
    ref = [sum(x[n] * y[n + t] for n in range(min(50, 80 - t))) for t in range(31)]
    np.testing.assert_allclose(k["lag_xcorr"](x, y, 30), ref, atol=1e-10)


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("numba not installed")
    a, b = (_kernels.IMPLEMENTATIONS[n] for n in ("numba", "numpy"))
    x = rng.normal(size=4000)
    taps = rng.normal(size=101)
    np.testing.assert_allclose(a["fir_same"](x, taps), b["fir_same"](x, taps), atol=1e-11)
    np.testing.assert_allclose(a["lag_xcorr"](x, x, 64), b["lag_xcorr"](x, x, 64), atol=1e-9)


def test_backend_flag_is_reported():
    assert _kernels.BACKEND in _kernels.IMPLEMENTATIONS


def test_active_bindings_follow_backend_and_preference():
    for name in _kernels.IMPLEMENTATIONS["numpy"]:
        want = "numpy" if name in _kernels.NUMPY_PREFERRED else _kernels.BACKEND
        assert _kernels._active[name] is _kernels.IMPLEMENTATIONS[want][name]
