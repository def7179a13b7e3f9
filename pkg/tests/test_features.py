import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdmf.channel import ChannelConfig, apply_bandwidth_limit
from capdmf.features import (
    N_FEATURES,
    FeatureError,
    FeatureStandardizer,
    FeatureVector,
    autocorr,
    extract_features,
    quality_features,
    spectral_features,
    spectral_shape,
    standardize,
    time_features,
)

import oracles

SCALE_INVARIANT = (
    "skewness kurtosis spectral_centroid spectral_spread spectral_rolloff spectral_flatness "
    "spectral_entropy bandwidth_3db papr autocorr_symbol autocorr_lag1 envelope_crest"
).split()


def _signal(seed, n=512):
    r = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        return r.normal(size=n)
    if kind == 1:
        return apply_bandwidth_limit(r.normal(size=n), ChannelConfig(0.3 + 0.6 * r.random()))
    t = np.arange(n)
    return np.cos(2 * np.pi * r.uniform(0.02, 0.4) * t + r.uniform(0, 6)) + 0.3 * r.normal(size=n)


def test_names_and_order():
    names = FeatureVector.names()
    assert len(names) == N_FEATURES == 16
    assert names[0] == "rms" and names[5] == "spectral_centroid" and names[-1] == "envelope_crest"
    assert FeatureVector.csv_header().split(",") == list(names)


def test_csv_row_round_trip(rng):
    f = extract_features(rng.normal(size=800), 4)
    cols = f.csv_row().split(",")
    assert len(cols) == 16
    assert FeatureVector.from_array([float(c) for c in cols]) == f


@pytest.mark.parametrize("seed", range(100))
def test_matches_naive_oracle(seed):
    x = _signal(seed)
    got = extract_features(x, 4, sample_rate=2.0).to_array()
    ref = np.array(oracles.features(x, 4, fs=2.0))
    for name, g, r in zip(FeatureVector.names(), got, ref):
        assert np.isclose(g, r, rtol=1e-9, atol=1e-12), (name, g, r)


def test_identical_segments():
    seg = np.random.default_rng(0).normal(size=200)
    seg -= seg.mean()
    f = extract_features(np.tile(seg, 4), 4).to_array()
    from capdmf.features import segment_features

    np.testing.assert_array_equal(f, segment_features(seg, 4))


def test_segment_permutation_exact():
    x = np.random.default_rng(8).normal(size=1200)
    x -= x.mean()
    q = x.reshape(4, 300)
    a = extract_features(x, 4).to_array()
    b = extract_features(q[[2, 0, 3, 1]].ravel(), 4).to_array()
    np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)


def test_white_noise_moments():
    f = extract_features(np.random.default_rng(2024).normal(size=1 << 16), 4)
    assert -0.1 < f.kurtosis < 0.1
    assert -0.1 < f.skewness < 0.1


def test_tone_envelope_and_papr():
    n = np.arange(4096)
    f = extract_features(np.cos(2 * np.pi * 64 * n / 4096), 4)
    assert f.envelope_crest == pytest.approx(1.0, abs=1e-3)
    assert f.papr == pytest.approx(2.0, rel=0.02)


def test_two_point_moments():
    x = np.tile([1.0, -1.0], 50)
    sigma, var, skew, kurt, _ = time_features(x)
    assert (sigma, var, skew, kurt) == pytest.approx((1.0, 1.0, 0.0, -2.0), abs=1e-12)


def test_mirror_parity(rng):
    x = rng.exponential(size=300)
    a = time_features(x)
    b = time_features(-x)
    assert b[2] == pytest.approx(-a[2], rel=1e-12)
    assert (b[0], b[1], b[3]) == pytest.approx((a[0], a[1], a[3]), rel=1e-12)


def test_large_gaussian_kurtosis():
    assert time_features(np.random.default_rng(6).normal(size=10**6))[3] == pytest.approx(0.0, abs=0.02)


def test_degenerate_spectra():
    f = np.arange(8) / 16.0
    P = np.zeros(8)
    P[3] = 5.0
    cen, spread, roll, sf, H, bw = spectral_shape(f, P)
    assert H == 0.0 and spread == 0.0 and cen == f[3] and roll == f[3]
    assert sf < 1e-9
    cen, spread, roll, sf, H, bw = spectral_shape(f, np.ones(8))
    assert H == pytest.approx(3.0, abs=1e-12)
    assert sf == pytest.approx(1.0, abs=1e-12)


def test_flat_spectrum_entropy_via_impulse():
    # an impulse at the Hanning peak has exactly flat |DFT|^2
    N = 257
    x = np.zeros(N)
    x[N // 2] = 1.0
    H = spectral_features(x)[4]
    assert H == pytest.approx(math.log2(N // 2), abs=1e-9)


def test_filtering_lowers_rolloff():
    x = np.random.default_rng(77).normal(size=1 << 13)
    y = apply_bandwidth_limit(x, ChannelConfig(0.5))
    assert spectral_features(y)[2] < spectral_features(x)[2]


def test_quality_examples():
    x = np.zeros(64)
    x[10] = 1.0
    papr, peak, _, r1, _ = quality_features(x, 4)
    assert papr == 64 and peak == 1.0 and r1 == 0.0
    assert autocorr(np.random.default_rng(1).normal(size=50), 0) == 1.0
    n = np.arange(1000)
    papr, _, _, _, cf = quality_features(np.sin(2 * np.pi * 10 * n / 1000), 4)
    assert papr == pytest.approx(2.0, rel=0.02)
    assert cf == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.01, 100.0))
def test_amplitude_scaling(seed, a):
    x = _signal(seed, 256)
    f = extract_features(x, 4)
    g = extract_features(a * x, 4)
    for name in SCALE_INVARIANT:
        assert np.isclose(getattr(g, name), getattr(f, name), rtol=1e-9, atol=1e-12), name
    for name, power in (("rms", 1), ("mean_envelope", 1), ("variance", 2), ("peak_power", 2)):
        assert getattr(g, name) == pytest.approx(a**power * getattr(f, name), rel=1e-9)


def test_circular_shift_spectral_invariance():
    n = np.arange(512)
    x = np.cos(2 * np.pi * 20 * n / 512) + 0.5 * np.cos(2 * np.pi * 55 * n / 512 + 1.0)
    # Hanning weighting is not shift-invariant, so compare on a window-free periodic view
    f = np.arange(256) / 512
    a = spectral_shape(f, np.abs(np.fft.rfft(x)[:256]) ** 2)
    b = spectral_shape(f, np.abs(np.fft.rfft(np.roll(x, 37))[:256]) ** 2)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e6), min_size=4, max_size=128).filter(lambda v: sum(v) > 0))
def test_entropy_and_flatness_bounds(P):
    P = np.array(P)
    _, _, _, sf, H, _ = spectral_shape(np.arange(P.size), P)
    assert 0.0 <= H <= math.log2(P.size) + 1e-12
    assert 0.0 <= sf <= 1.0 + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_invariants_hold(seed):
    f = extract_features(_signal(seed, 300), 4)
    assert np.all(np.isfinite(f.to_array()))
    assert f.papr >= 1 and f.envelope_crest >= 1
    assert abs(f.autocorr_symbol) <= 1 and abs(f.autocorr_lag1) <= 1
    assert 0 <= f.spectral_flatness <= 1


def test_errors():
    with pytest.raises(FeatureError):
        extract_features(np.ones(10), 4)
    with pytest.raises(FeatureError, match="variance"):
        time_features(np.ones(100))
    with pytest.raises(FeatureError):
        quality_features(np.zeros(10), 4)
    with pytest.raises(FeatureError):
        quality_features(np.ones(4), 4)


def test_signal_object_rate():
    from capdmf.dsp import RealSignal

    x = np.random.default_rng(3).normal(size=400)
    a = extract_features(RealSignal(x, 10.0), 4)
    assert a == extract_features(x, 4, sample_rate=10.0)
    assert a.spectral_centroid == pytest.approx(10.0 * extract_features(x, 4).spectral_centroid)


class TestStandardizer:
    def _fitted(self, rng):
        s = FeatureStandardizer()
        data = rng.normal(3.0, 2.0, size=(50, 16))
        for row in data:
            s.update(row)
        s.freeze()
        return s, data

    def test_welford_matches_batch(self, rng):
        s, data = self._fitted(rng)
        np.testing.assert_allclose(s.mean, data.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(s.std, data.std(axis=0), rtol=1e-10)

    def test_examples(self, rng):
        s, _ = self._fitted(rng)
        np.testing.assert_allclose(standardize(s.mean, s), 0.0, atol=1e-12)
        np.testing.assert_allclose(standardize(s.mean + s.std, s), 1.0, atol=1e-12)
        once = s.transform(s.mean + 2 * s.std)
        assert not np.allclose(s.transform(once), once)

    def test_frozen_contract(self, rng):
        s = FeatureStandardizer()
        with pytest.raises(FeatureError):
            s.transform(np.zeros(16))
        with pytest.raises(FeatureError):
            s.freeze()
        s.update(np.ones(16))
        s.freeze()
        assert np.all(s.std > 0)
        np.testing.assert_array_equal(s.transform(np.ones(16)), 0.0)
        with pytest.raises(FeatureError):
            s.update(np.ones(16))

    def test_from_stats(self):
        s = FeatureStandardizer.from_stats(np.zeros(16), np.full(16, 2.0))
        np.testing.assert_array_equal(s.transform(np.full(16, 4.0)), 2.0)
        with pytest.raises(FeatureError):
            FeatureStandardizer.from_stats(np.zeros(16), np.zeros(16))
