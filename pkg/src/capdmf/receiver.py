"""QAM mapping, matched-filter demodulation, EVM reporting and receiver selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .dsp import CapFilterPair

SUPPORTED_ORDERS = (4, 16)
CONVENTIONAL = "conventional"
NN = "nn"


class ReceiverError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolStream:
    symbols: np.ndarray
    modulation_order: int

    def __len__(self):
        return self.symbols.size


@lru_cache(maxsize=None)
def _axis_levels(M: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-axis Gray labels and amplitude levels for square M-QAM."""
    if M not in SUPPORTED_ORDERS:
        raise ReceiverError(f"modulation order must be one of {SUPPORTED_ORDERS}, got {M}")
    m = int(round(math.sqrt(M)))
    idx = np.arange(m)
    gray = idx ^ (idx >> 1)  # label of the idx-th level from the left
    levels = 2.0 * idx - (m - 1)
    scale = math.sqrt(2.0 * (M - 1) / 3.0)
    return gray, levels / scale, scale


def constellation(M: int) -> np.ndarray:
    """All M points ordered by label (I bits first, then Q bits)."""
    gray, levels, _ = _axis_levels(M)
    m = levels.size
    amp = np.empty(m)
    amp[gray] = levels
    return (amp[:, None] + 1j * amp[None, :]).ravel()


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    w = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ w


def _int_to_bits(v: np.ndarray, nbits: int) -> np.ndarray:
    shifts = np.arange(nbits - 1, -1, -1)
    return ((v[:, None] >> shifts) & 1).astype(np.uint8)


def qam_map(bits, M: int = 4) -> SymbolStream:
    """Gray-coded square M-QAM with unit average power.

    Each group of ``log2(M)`` bits is split in half: the leading half labels
    the in-phase level, the trailing half the quadrature level.
    """
    gray, levels, _ = _axis_levels(M)
    k = int(math.log2(M))
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % k:
        raise ReceiverError(f"bit count {bits.size} is not a multiple of log2(M) = {k}")
    if np.any((bits != 0) & (bits != 1)):
        raise ReceiverError("bits must be 0 or 1")
    groups = bits.reshape(-1, k)
    half = k // 2
    amp = np.empty(levels.size)
    amp[gray] = levels
    i_lab = _bits_to_int(groups[:, :half])
    q_lab = _bits_to_int(groups[:, half:])
    return SymbolStream(amp[i_lab] + 1j * amp[q_lab], M)


def _decide_axis(v: np.ndarray, gray: np.ndarray, levels: np.ndarray) -> np.ndarray:
    d = np.abs(v[:, None] - levels[None, :])
    dmin = d.min(axis=1, keepdims=True)
    tied = d <= dmin + 1e-12
    # among equidistant levels pick the smallest label
    labels = np.where(tied, gray[None, :], np.iinfo(np.int64).max)
    return labels.min(axis=1)


def qam_demap(symbols, M: int = 4) -> np.ndarray:
    """Minimum-distance decision; ties resolve to the lexicographically smaller label."""
    gray, levels, _ = _axis_levels(M)
    s = np.asarray(getattr(symbols, "symbols", symbols), dtype=complex).ravel()
    half = int(math.log2(M)) // 2
    i_lab = _decide_axis(s.real, gray, levels)
    q_lab = _decide_axis(s.imag, gray, levels)
    return np.concatenate((_int_to_bits(i_lab, half), _int_to_bits(q_lab, half)), axis=1).ravel()


def receiver_gain(pair: CapFilterPair) -> float:
    """Symbol gain of a unit-power CAP waveform through its own matched filters.

    Dividing the matched-filter output by this constant returns unit-power
    symbols on an ideal channel.
    """
    return math.sqrt(pair.samples_per_symbol * pair.energy / 2.0)


def symbol_start(tau: int, delay: int, offset: int = 0) -> int:
    """Sample index of the first symbol instant in the received stream."""
    return tau + delay + offset


def demodulate(
    rx: np.ndarray,
    p_hat: np.ndarray,
    pb_hat: np.ndarray,
    sps: int,
    tau: int,
    n_symbols: int,
    delay: int | None = None,
    offset: int = 0,
    gain: float = 1.0,
) -> np.ndarray:
    """Matched-filter a real CAP waveform and sample at the symbol instants.

    ``I = (rx * p_hat)[n_k]``, ``Q = -(rx * pb_hat)[n_k]`` with same-mode
    convolution and ``n_k = tau + delay + offset + k*sps``. ``delay``
    defaults to the filters' centre index. Output is ``(I + jQ) / gain``.
    """
    rx = np.ascontiguousarray(rx, dtype=float)
    p_hat = np.ascontiguousarray(p_hat, dtype=float)
    pb_hat = np.ascontiguousarray(pb_hat, dtype=float)
    L = p_hat.size
    if pb_hat.size != L:
        raise ReceiverError("filter pair lengths differ")
    if delay is None:
        delay = (L - 1) // 2
    start = symbol_start(tau, delay, offset)
    last = start + (n_symbols - 1) * sps
    if n_symbols < 1 or start < 0 or last >= rx.size:
        raise ReceiverError(
            f"received stream of {rx.size} samples cannot hold {n_symbols} symbols "
            f"starting at sample {start}"
        )
    zi = _kernels.sampled_fir(rx, p_hat, start, sps, n_symbols)
    zq = _kernels.sampled_fir(rx, pb_hat, start, sps, n_symbols)
    return (zi - 1j * zq) / gain


def timing_offset(rx, p_hat, pb_hat, sps, tau, n_symbols, delay=None) -> int:
    """Intra-symbol offset maximizing mean ``|s_hat|`` over ``sps`` centred candidates."""
    if delay is None:
        delay = (p_hat.size - 1) // 2
    lo = -(sps // 2)
    best, best_val = 0, -1.0
    for o in range(lo, lo + sps):
        start = tau + delay + o
        count = n_symbols
        # drop edge symbols that would fall outside the stream for this candidate
        if start < 0:
            start += sps
            count -= 1
        while count > 0 and start + (count - 1) * sps >= rx.size:
            count -= 1
        if count < 1:
            continue
        zi = _kernels.sampled_fir(rx, p_hat, start, sps, count)
        zq = _kernels.sampled_fir(rx, pb_hat, start, sps, count)
        val = float(np.mean(np.hypot(zi, zq)))
        if val > best_val + 1e-12 * max(1.0, best_val):
            best, best_val = o, val
    return best


def evm_percent(s_hat, s_ref) -> float:
    """RMS EVM after a least-squares single complex gain fit."""
    s_hat = np.asarray(s_hat, dtype=complex)
    s_ref = np.asarray(s_ref, dtype=complex)
    if s_hat.shape != s_ref.shape:
        raise ReceiverError("symbol sequences differ in length")
    ref_power = float(np.vdot(s_ref, s_ref).real)
    if ref_power == 0.0:
        raise ReceiverError("reference has zero power")
    den = np.vdot(s_hat, s_hat).real
    g = np.vdot(s_hat, s_ref) / den if den > 0 else 0.0
    err = g * s_hat - s_ref
    return 100.0 * math.sqrt(float(np.vdot(err, err).real) / ref_power)


def select_receiver(evm_nn_pct: float, evm_conv_pct: float) -> str:
    """``"nn"`` only when it strictly beats the conventional filter."""
    if not (math.isfinite(evm_nn_pct) and math.isfinite(evm_conv_pct)):
        raise ReceiverError("EVM values must be finite")
    if evm_nn_pct < 0 or evm_conv_pct < 0:
        raise ReceiverError("EVM values must be non-negative")
    return NN if evm_nn_pct < evm_conv_pct else CONVENTIONAL


EVM_CSV_COLUMNS = (
    "omega_n",
    "power_dbm",
    "snr_db",
    "evm_conv_pct",
    "evm_nn_pct",
    "selected",
    "correction_norm_ratio",
    "evm_system_pct",
)


@dataclass(frozen=True)
class EvmReport:
    omega_n: float
    power_dbm: float
    snr_db: float
    evm_conventional_pct: float
    evm_nn_pct: float
    selected: str
    correction_norm_ratio: float

    @classmethod
    def from_evm(cls, omega_n, power_dbm, snr_db, evm_conv, evm_nn, ratio) -> "EvmReport":
        return cls(omega_n, power_dbm, snr_db, evm_conv, evm_nn, select_receiver(evm_nn, evm_conv), ratio)

    @classmethod
    def failed(cls, omega_n, power_dbm, snr_db) -> "EvmReport":
        nan = float("nan")
        return cls(omega_n, power_dbm, snr_db, nan, nan, "error", nan)

    @property
    def evm_system_pct(self) -> float:
        if self.selected == NN:
            return self.evm_nn_pct
        if self.selected == CONVENTIONAL:
            return self.evm_conventional_pct
        return float("nan")

    def csv_row(self) -> str:
        vals = (
            self.omega_n,
            self.power_dbm,
            self.snr_db,
            self.evm_conventional_pct,
            self.evm_nn_pct,
            self.selected,
            self.correction_norm_ratio,
            self.evm_system_pct,
        )
        return ",".join(v if isinstance(v, str) else _fmt(v) for v in vals)


def _fmt(v: float) -> str:
    return format(float(v), ".10g")
