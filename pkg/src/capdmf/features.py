"""Channel-state features of a received CAP waveform.

Sixteen scalars in three groups (time-domain statistics, spectral shape,
signal quality) are computed on each of four contiguous quarters of the
mean-removed signal and averaged.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .dsp import analytic_envelope, raw_psd

SEGMENTS = 4
FLATNESS_FLOOR = 1e-12
ROLLOFF_FRACTION = 0.85


class FeatureError(ValueError):
    """Signal unsuitable for feature extraction."""


@dataclass(frozen=True)
class FeatureVector:
    rms: float
    variance: float
    skewness: float
    kurtosis: float
    mean_envelope: float
    spectral_centroid: float
    spectral_spread: float
    spectral_rolloff: float
    spectral_flatness: float
    spectral_entropy: float
    bandwidth_3db: float
    papr: float
    peak_power: float
    autocorr_symbol: float
    autocorr_lag1: float
    envelope_crest: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(fields(cls)),):
            raise FeatureError(f"expected {len(fields(cls))} values, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in astuple(self))

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.names())


N_FEATURES = len(FeatureVector.names())


def time_features(seg: np.ndarray, envelope: np.ndarray | None = None):
    """rms, variance, skewness, excess kurtosis and mean analytic envelope."""
    seg = np.asarray(seg, dtype=float)
    c = seg - seg.mean()
    m2 = np.mean(c * c)
    if m2 == 0.0:
        raise FeatureError("zero-variance segment: skewness and kurtosis are undefined")
    m3 = np.mean(c**3)
    m4 = np.mean(c**4)
    skew = m3 / m2**1.5
    kurt = m4 / (m2 * m2) - 3.0
    env = analytic_envelope(seg) if envelope is None else envelope
    mu_e = float(np.mean(env))
    return math.sqrt(m2), float(m2), float(skew), float(kurt), mu_e


def spectral_shape(f: np.ndarray, P: np.ndarray) -> tuple[float, float, float, float, float, float]:
    """Spectral descriptors of a one-sided PSD ``P`` sampled at frequencies ``f``.

    ``P`` need not be normalized. Returns centroid, spread, 85 % roll-off,
    flatness, entropy (bits) and 3 dB bandwidth.
    """
    P = np.asarray(P, dtype=float)
    total = P.sum()
    if total <= 0.0:
        raise FeatureError("zero-energy spectrum")
    Pn = P / total
    centroid = float(np.dot(f, Pn))
    spread = math.sqrt(max(0.0, float(np.dot((f - centroid) ** 2, Pn))))
    cum = np.cumsum(Pn)
    idx = int(np.searchsorted(cum, ROLLOFF_FRACTION, side="left"))
    rolloff = float(f[min(idx, f.size - 1)])
    # floor the normalized PSD so the ratio stays scale-free and within [0, 1]
    Pf = np.maximum(Pn, FLATNESS_FLOOR)
    flatness = min(1.0, float(np.exp(np.log(Pf).mean()) / Pf.mean()))
    nz = Pn > 0.0
    entropy = float(-np.sum(Pn[nz] * np.log2(Pn[nz])))
    smooth = np.convolve(P, np.ones(3) / 3.0, mode="same")
    above = np.flatnonzero(smooth >= 0.5 * smooth.max())
    bw = float(f[above[-1]])
    return centroid, spread, rolloff, flatness, entropy, bw


def spectral_features(seg: np.ndarray, sample_rate: float = 1.0):
    seg = np.asarray(seg, dtype=float)
    if seg.size < 8:
        raise FeatureError("spectral features need at least 8 samples")
    P = raw_psd(seg)
    f = np.arange(P.size) * sample_rate / seg.size
    return spectral_shape(f, P)


def autocorr(seg: np.ndarray, lag: int) -> float:
    """Autocorrelation at ``lag`` normalized by the zero-lag energy."""
    e0 = float(np.dot(seg, seg))
    if e0 == 0.0:
        raise FeatureError("zero-energy segment: autocorrelation is undefined")
    if lag == 0:
        return 1.0
    return float(np.dot(seg[:-lag], seg[lag:])) / e0


def quality_features(seg: np.ndarray, sps: int, envelope: np.ndarray | None = None):
    """PAPR, peak power, autocorrelation at lags ``sps`` and 1, envelope crest factor."""
    seg = np.asarray(seg, dtype=float)
    if seg.size <= sps:
        raise FeatureError(f"segment of {seg.size} samples is too short for lag {sps}")
    x2 = seg * seg
    mean_p = x2.mean()
    if mean_p == 0.0:
        raise FeatureError("zero-energy segment: PAPR is undefined")
    peak = float(x2.max())
    env = analytic_envelope(seg) if envelope is None else envelope
    mu_e = env.mean()
    return (
        peak / float(mean_p),
        peak,
        autocorr(seg, sps),
        autocorr(seg, 1),
        float(env.max() / mu_e),
    )


def segment_features(seg: np.ndarray, sps: int, sample_rate: float = 1.0) -> np.ndarray:
    env = analytic_envelope(seg)
    return np.array(
        time_features(seg, env) + spectral_features(seg, sample_rate) + quality_features(seg, sps, env)
    )


def extract_features(x, sps: int, sample_rate: float | None = None) -> FeatureVector:
    """Average the 16 features over four equal contiguous quarters.

    ``x`` is a sample array or a :class:`~capdmf.dsp.RealSignal` (whose rate is
    used when ``sample_rate`` is omitted). The whole signal is mean-removed
    first; trailing samples that do not fill a quarter are dropped.
    """
    if sample_rate is None:
        sample_rate = getattr(x, "sample_rate_hz", 1.0)
    x = np.asarray(getattr(x, "samples", x), dtype=float)
    need = SEGMENTS * max(8, sps + 1)
    if x.size < need:
        raise FeatureError(f"signal of {x.size} samples is shorter than the minimum {need}")
    x = x - x.mean()
    n = x.size // SEGMENTS
    rows = [segment_features(x[k * n : (k + 1) * n], sps, sample_rate) for k in range(SEGMENTS)]
    return FeatureVector.from_array(np.mean(rows, axis=0))


class FeatureStandardizer:
    """Per-feature affine scaling learned from a warm-up set, then frozen.

    Statistics accumulate with Welford's update. Not thread-safe until frozen.
    """

    def __init__(self, n_features: int = N_FEATURES):
        self.n = 0
        self._mean = np.zeros(n_features)
        self._m2 = np.zeros(n_features)
        self.frozen = False
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def update(self, f) -> None:
        if self.frozen:
            raise FeatureError("standardizer is frozen")
        v = f.to_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
        self.n += 1
        delta = v - self._mean
        self._mean = self._mean + delta / self.n
        self._m2 = self._m2 + delta * (v - self._mean)

    def freeze(self) -> None:
        if self.n == 0:
            raise FeatureError("cannot freeze a standardizer that has seen no data")
        std = np.sqrt(self._m2 / self.n)
        # constant features map to 0 instead of dividing by ~0
        floor = 1e-9 * np.abs(self._mean) + 1e-12
        self.mean = self._mean.copy()
        self.std = np.maximum(std, floor)
        self.frozen = True

    @classmethod
    def from_stats(cls, mean, std) -> "FeatureStandardizer":
        mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        if mean.shape != std.shape or np.any(std <= 0):
            raise FeatureError("standardizer needs matching mean/std with std > 0")
        s = cls(mean.size)
        s.mean, s.std, s.frozen = mean.copy(), std.copy(), True
        s._mean = mean.copy()
        return s

    def transform(self, f) -> np.ndarray:
        if not self.frozen:
            raise FeatureError("standardizer must be frozen before use")
        v = f.to_array() if isinstance(f, FeatureVector) else np.asarray(f, dtype=float)
        return (v - self.mean) / self.std


def standardize(f, std: FeatureStandardizer) -> np.ndarray:
    return std.transform(f)
