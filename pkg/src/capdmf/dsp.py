"""Signal-processing primitives for the CAP transmit/receive chain.

All functions take and return plain ``numpy`` arrays; sample-rate
bookkeeping rides along in :class:`RealSignal` / :class:`ComplexSignal`
only where a waveform crosses a component boundary (the channel
interface, feature extraction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import _kernels


class DSPError(ValueError):
    """Invalid input to a signal-processing primitive."""


@dataclass(frozen=True)
class RealSignal:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise DSPError("RealSignal needs a non-empty 1-D array")
        if not np.all(np.isfinite(x)):
            raise DSPError("RealSignal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise DSPError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class ComplexSignal:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=complex)
        if not np.all(np.isfinite(x)):
            raise DSPError("ComplexSignal samples must be finite")
        if not self.sample_rate_hz > 0:
            raise DSPError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class CapFilterPair:
    """In-phase / quadrature CAP shaping filters.

    ``p`` and ``p_b`` are indexed from ``-(L-1)/2`` to ``(L-1)/2``;
    ``energy`` records ``sum(p**2) + sum(p_b**2)``.
    """

    p: np.ndarray
    p_b: np.ndarray
    samples_per_symbol: int
    carrier_hz: float
    energy: float = field(init=False)

    def __post_init__(self):
        p = np.ascontiguousarray(self.p, dtype=float)
        pb = np.ascontiguousarray(self.p_b, dtype=float)
        if p.shape != pb.shape or p.ndim != 1:
            raise DSPError("p and p_b must be 1-D arrays of equal length")
        if p.size % 2 == 0:
            raise DSPError("filter length must be odd")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_b", pb)
        object.__setattr__(self, "energy", pair_energy(p, pb))

    @property
    def length(self) -> int:
        return self.p.size

    @property
    def delay(self) -> int:
        """Group delay (centre index) of either filter."""
        return (self.p.size - 1) // 2

    def matched(self) -> tuple[np.ndarray, np.ndarray]:
        """Conventional matched filters ``p[-n]``, ``p_b[-n]``."""
        return self.p[::-1].copy(), self.p_b[::-1].copy()

    def orthogonality(self) -> float:
        """Normalized inner product ``|<p, p_b>| / sqrt(|p|^2 |p_b|^2)``."""
        den = math.sqrt(float(np.dot(self.p, self.p)) * float(np.dot(self.p_b, self.p_b)))
        if den == 0.0:
            return 0.0
        return abs(float(np.dot(self.p, self.p_b))) / den


def pair_energy(p: np.ndarray, p_b: np.ndarray) -> float:
    """Combined energy of a filter pair; the single arithmetic path used everywhere."""
    return float(np.dot(p, p) + np.dot(p_b, p_b))


def filter_length(span_symbols: int, sps: int) -> int:
    """Odd, centre-symmetric length ``2*floor(span*sps/2) - 1``."""
    return 2 * ((span_symbols * sps) // 2) - 1


@dataclass(frozen=True)
class SystemParams:
    """Sample-rate geometry of the link.

    ``bandwidth_hz`` defaults to the CAP occupied bandwidth
    ``(1 + rolloff) * symbol_rate`` and ``carrier_hz`` to half of it, so the
    passband spans ``0 .. B``.
    """

    sample_rate_hz: float = 1.233e9
    samples_per_symbol: int = 4
    rolloff: float = 0.25
    span_symbols: int = 16
    bandwidth_hz: float | None = None
    carrier_hz: float | None = None

    def __post_init__(self):
        if not 0.0 < self.rolloff < 1.0:
            raise DSPError(f"rolloff must lie in (0, 1), got {self.rolloff}")
        if self.samples_per_symbol < 2:
            raise DSPError("samples_per_symbol must be >= 2")
        if self.span_symbols < 2:
            raise DSPError("span_symbols must be >= 2")
        B = self.bandwidth_hz
        if B is None:
            B = (1.0 + self.rolloff) * self.symbol_rate_hz
            object.__setattr__(self, "bandwidth_hz", float(B))
        if self.carrier_hz is None:
            object.__setattr__(self, "carrier_hz", 0.5 * float(B))
        if not math.isclose(self.carrier_hz, 0.5 * self.bandwidth_hz, rel_tol=1e-9):
            raise DSPError("carrier_hz must equal 0.5 * bandwidth_hz")
        half = 0.5 * (1.0 + self.rolloff) * self.symbol_rate_hz
        if self.carrier_hz - half < -1e-9 * self.sample_rate_hz or (
            self.carrier_hz + half > 0.5 * self.sample_rate_hz
        ):
            raise DSPError("CAP passband does not fit between DC and Nyquist")

    @property
    def symbol_rate_hz(self) -> float:
        return self.sample_rate_hz / self.samples_per_symbol

    @property
    def filter_length(self) -> int:
        return filter_length(self.span_symbols, self.samples_per_symbol)

    @property
    def rx_lowpass_omega(self) -> float:
        """Normalized cutoff of the receiver's 1.2*B noise filter, capped at 1."""
        return min(1.0, 2.0 * 1.2 * self.bandwidth_hz / self.sample_rate_hz)

    def filter_pair(self) -> CapFilterPair:
        b = srrc_taps(self.rolloff, self.samples_per_symbol, self.span_symbols)
        return cap_filter_pair(b, self.carrier_hz, self.sample_rate_hz, self.samples_per_symbol)


def _srrc_formula(t, beta):
    # t = n * t_s / T_s; returns sqrt(T_s) * b
    num = np.sin(np.pi * t * (1.0 - beta)) + 4.0 * beta * t * np.cos(np.pi * t * (1.0 + beta))
    den = np.pi * t * (1.0 - (4.0 * beta * t) ** 2)
    return num / den


def srrc_taps(beta: float, sps: int, span_symbols: int, normalize: bool = True) -> np.ndarray:
    """Square-root raised-cosine basis sampled at ``t = n t_s``, ``T_s = sps t_s``.

    With ``normalize=False`` the taps carry the ``1/sqrt(T_s)`` factor in units
    of ``t_s = 1``; otherwise they are scaled to unit energy.
    """
    if not 0.0 < beta < 1.0:
        raise DSPError(f"rolloff must lie in (0, 1), got {beta}")
    if sps < 2:
        raise DSPError("sps must be >= 2")
    if span_symbols < 2:
        raise DSPError("span_symbols must be >= 2")
    L = filter_length(span_symbols, sps)
    n = np.arange(L) - (L - 1) // 2
    t = n / sps
    centre = n == 0
    edge = np.isclose(np.abs(4.0 * beta * t), 1.0, rtol=0.0, atol=1e-12)
    regular = ~(centre | edge)
    b = np.empty(L)
    b[regular] = _srrc_formula(t[regular], beta)
    b[centre] = 1.0 - beta + 4.0 * beta / np.pi
    b[edge] = (beta / np.sqrt(2.0)) * (
        (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
        + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
    )
    b /= np.sqrt(sps)
    if normalize:
        b /= np.sqrt(np.dot(b, b))
    return b


def cap_filter_pair(b: np.ndarray, f_c: float, f_s: float, sps: int = 1) -> CapFilterPair:
    """Modulate the basis onto cosine/sine carriers about the centre tap."""
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or b.size % 2 == 0:
        raise DSPError("basis must be a 1-D odd-length array")
    if not np.all(np.isfinite(b)):
        raise DSPError("basis taps must be finite")
    if not np.allclose(b, b[::-1], rtol=0.0, atol=1e-12 * max(1.0, np.abs(b).max(initial=0.0))):
        raise DSPError("basis must be even-symmetric")
    if not 0.0 < f_c < 0.5 * f_s:
        raise DSPError(f"carrier {f_c} Hz must lie in (0, f_s/2) for f_s={f_s}")
    n = np.arange(b.size) - (b.size - 1) // 2
    phase = 2.0 * np.pi * f_c * n / f_s
    p = b * np.cos(phase)
    pb = b * np.sin(phase)
    p[n == 0] = b[n == 0]
    pb[n == 0] = 0.0
    return CapFilterPair(p, pb, sps, f_c)


def cap_modulate(symbols, pair: CapFilterPair) -> np.ndarray:
    """Real CAP waveform ``sqrt(2) sum_k (s_I p[n-k sps] - s_Q p_b[n-k sps])``.

    ``symbols`` may be a complex array or anything with a ``symbols`` attribute.
    Output length is ``(K-1)*sps + L``.
    """
    s = np.asarray(getattr(symbols, "symbols", symbols), dtype=complex)
    if s.ndim != 1 or s.size == 0:
        raise DSPError("need a non-empty 1-D symbol sequence")
    return _kernels.cap_modulate_kernel(
        np.ascontiguousarray(s.real), np.ascontiguousarray(s.imag), pair.p, pair.p_b,
        int(pair.samples_per_symbol),
    )


def normalize_unit_power(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    power = np.mean(x * x)
    if power == 0.0:
        raise DSPError("cannot normalize a zero-power signal")
    return x / np.sqrt(power)


def analytic_envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the FFT-constructed analytic signal."""
    x = np.asarray(x, dtype=float)
    if x.size < 4:
        raise DSPError("analytic_envelope needs at least 4 samples")
    N = x.size
    X = sfft.fft(x)
    h = np.zeros(N)
    h[0] = 1.0
    if N % 2 == 0:
        h[N // 2] = 1.0
        h[1 : N // 2] = 2.0
    else:
        h[1 : (N + 1) // 2] = 2.0
    return np.abs(sfft.ifft(X * h))


def fir_apply(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Same-length convolution aligned to the taps' centre ``(L_t - 1) // 2``."""
    taps = np.ascontiguousarray(taps, dtype=float)
    if taps.size == 0:
        raise DSPError("taps must be non-empty")
    return _kernels.fir_same(np.ascontiguousarray(x, dtype=float), taps)


def lowpass_design(num_taps: int, omega_n: float) -> np.ndarray:
    """Hamming-windowed sinc low-pass, cutoff ``omega_n * f_s / 2``, unity DC gain."""
    if num_taps < 1 or num_taps % 2 == 0:
        raise DSPError(f"num_taps must be odd and positive, got {num_taps}")
    if not 0.0 < omega_n <= 1.0:
        raise DSPError(f"omega_n must lie in (0, 1], got {omega_n}")
    n = np.arange(num_taps) - (num_taps - 1) // 2
    h = omega_n * np.sinc(omega_n * n) * np.hamming(num_taps)
    return h / h.sum()


def sync_offset(tx: np.ndarray, rx: np.ndarray, max_lag: int | None = None) -> int:
    """Integer delay maximizing ``|sum_n tx[n] rx[n + tau]|`` over ``0 <= tau <= max_lag``."""
    tx = np.ascontiguousarray(tx, dtype=float)
    rx = np.ascontiguousarray(rx, dtype=float)
    if tx.size == 0 or rx.size == 0:
        raise DSPError("sync_offset needs non-empty signals")
    if not np.any(tx) or not np.any(rx):
        raise DSPError("sync_offset on an all-zero signal is undefined")
    limit = rx.size - 1 if max_lag is None else int(max_lag)
    if limit < 0 or limit > rx.size - 1:
        raise DSPError(f"search window {max_lag} exceeds received length {rx.size}")
    c = _kernels.lag_xcorr(tx, rx, limit)
    return int(np.argmax(np.abs(c)))


def psd_hanning(x: np.ndarray, sample_rate: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Hanning-windowed one-sided periodogram, bins ``0 .. N/2 - 1``, normalized to sum 1."""
    x = np.asarray(x, dtype=float)
    N = x.size
    if N < 8:
        raise DSPError("psd_hanning needs at least 8 samples")
    P = raw_psd(x)
    f = np.arange(P.size) * sample_rate / N
    total = P.sum()
    if total == 0.0:
        raise DSPError("zero-energy signal has no normalized PSD")
    return f, P / total


def raw_psd(x: np.ndarray) -> np.ndarray:
    """Unnormalized ``|FFT(x * hanning)|^2`` over bins ``0 .. N/2 - 1``."""
    N = x.size
    X = sfft.rfft(x * np.hanning(N))
    return np.abs(X[: N // 2]) ** 2


def downsample_symbols(x: np.ndarray, sps: int, offset: int) -> np.ndarray:
    if sps < 1:
        raise DSPError("sps must be positive")
    if not 0 <= offset < sps:
        raise DSPError(f"offset must satisfy 0 <= offset < {sps}, got {offset}")
    return np.asarray(x)[offset::sps]
