"""Residual MLP that deforms the CAP matched-filter pair, and its training math.

The network maps standardized features to a complex correction ``dh`` of
length ``L``; the deformed filters are the time-reversed nominal filters plus
``Re(dh)`` / ``Im(dh)``, jointly rescaled to the nominal pair's energy.
Gradients of the EVM-plus-smoothness loss are propagated analytically
through that rescaling, the sampled matched filtering and both layers.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels
from .dsp import CapFilterPair, pair_energy
from .features import N_FEATURES, FeatureStandardizer


class TrainingError(RuntimeError):
    pass


def hidden_dim(L: int) -> int:
    """Smallest power of two ``>= L``."""
    if L < 1:
        raise ValueError("filter length must be positive")
    return 1 << (L - 1).bit_length()


@dataclass
class MlpParams:
    W1: np.ndarray  # (H, 16)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (2L, H)
    b2: np.ndarray  # (2L,)

    BLOCKS = ("W1", "b1", "W2", "b2")

    @property
    def hidden_dim(self) -> int:
        return self.b1.size

    @property
    def filter_len(self) -> int:
        return self.b2.size // 2

    @property
    def n_features(self) -> int:
        return self.W1.shape[1]

    def count(self) -> int:
        return sum(getattr(self, k).size for k in self.BLOCKS)

    def blocks(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in self.BLOCKS]

    def copy(self) -> "MlpParams":
        return MlpParams(*(b.copy() for b in self.blocks()))

    def map(self, fn) -> "MlpParams":
        return MlpParams(*(fn(b) for b in self.blocks()))

    @classmethod
    def zeros(cls, L: int, n_features: int = N_FEATURES, H: int | None = None) -> "MlpParams":
        H = hidden_dim(L) if H is None else H
        return cls(np.zeros((H, n_features)), np.zeros(H), np.zeros((2 * L, H)), np.zeros(2 * L))

    @classmethod
    def init(cls, L: int, rng: np.random.Generator, n_features: int = N_FEATURES,
             out_gain: float = 1e-3) -> "MlpParams":
        """He-uniform first layer, near-zero output layer, zero biases."""
        H = hidden_dim(L)
        lim1 = math.sqrt(6.0 / n_features)
        lim2 = out_gain * math.sqrt(6.0 / H)
        return cls(
            rng.uniform(-lim1, lim1, (H, n_features)),
            np.zeros(H),
            rng.uniform(-lim2, lim2, (2 * L, H)),
            np.zeros(2 * L),
        )

    def check_finite(self) -> None:
        for k in self.BLOCKS:
            if not np.all(np.isfinite(getattr(self, k))):
                raise TrainingError(f"parameter block {k} is not finite")


def parameter_count(L: int, n_features: int = N_FEATURES) -> int:
    H = hidden_dim(L)
    return n_features * H + H + 2 * L * H + 2 * L


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lambda_s1: float = 1e-3
    lambda_s2: float = 1e-4
    epochs: int = 1000
    symbols_per_epoch: int = 10_000
    warmup_batches: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "epsilon", "epochs", "symbols_per_epoch", "warmup_batches"):
            if not getattr(self, name) > 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lambda_s1 < 0 or self.lambda_s2 < 0:
            raise ValueError("smoothness weights must be non-negative")


# ---------------------------------------------------------------------------
# forward path
# ---------------------------------------------------------------------------


def _hidden(params: MlpParams, f: np.ndarray):
    pre = params.W1 @ f + params.b1
    return pre, np.maximum(pre, 0.0)


def forward(params: MlpParams, f_std: np.ndarray) -> np.ndarray:
    """Complex correction ``dh[l] = y[l] + j y[L + l]``."""
    _, h = _hidden(params, np.asarray(f_std, dtype=float))
    y = params.W2 @ h + params.b2
    L = params.filter_len
    return y[:L] + 1j * y[L:]


@dataclass(frozen=True)
class DeformedFilterPair:
    p_hat: np.ndarray
    pb_hat: np.ndarray
    correction_norm: float
    scale: float = 1.0

    @property
    def energy(self) -> float:
        return pair_energy(self.p_hat, self.pb_hat)


def _reversed_nominal(nominal: CapFilterPair) -> tuple[np.ndarray, np.ndarray, float]:
    p_rev, pb_rev = nominal.matched()
    return p_rev, pb_rev, pair_energy(p_rev, pb_rev)


def deform_filters(nominal: CapFilterPair, dh: np.ndarray) -> DeformedFilterPair:
    """Add ``dh`` to the time-reversed nominal pair and restore its combined energy."""
    dh = np.asarray(dh)
    p_rev, pb_rev, e0 = _reversed_nominal(nominal)
    if dh.shape != p_rev.shape:
        raise ValueError(f"correction length {dh.shape} does not match filter length {p_rev.shape}")
    u = p_rev + dh.real
    v = pb_rev + dh.imag
    e = pair_energy(u, v)
    if e == 0.0:
        raise ValueError("deformed filter pair has zero energy")
    a = math.sqrt(e0 / e)
    return DeformedFilterPair(a * u, a * v, float(np.sqrt(np.sum(np.abs(dh) ** 2))), a)


def evm_loss(s_hat, s) -> float:
    """Mean squared symbol error ``(1/K) sum |s_hat - s|^2``."""
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    if s_hat.shape != s.shape or s.size == 0:
        raise ValueError("symbol sequences must be non-empty and of equal length")
    e = s_hat - s
    return float(np.mean(e.real**2 + e.imag**2))


def smoothness_losses(pair) -> tuple[float, float]:
    """Squared first and second differences summed over both filters."""
    p = pair.p_hat
    pb = pair.pb_hat
    if p.size < 3:
        raise ValueError("smoothness penalties need at least 3 taps")
    s1 = float(np.sum(np.diff(p) ** 2) + np.sum(np.diff(pb) ** 2))
    s2 = float(np.sum(np.diff(p, 2) ** 2) + np.sum(np.diff(pb, 2) ** 2))
    return s1, s2


def total_loss(evm: float, s1: float, s2: float, cfg: TrainConfig) -> float:
    return evm + cfg.lambda_s1 * s1 + cfg.lambda_s2 * s2


def _diff_adjoint(e: np.ndarray) -> np.ndarray:
    # transpose of np.diff applied to e
    return -np.diff(np.concatenate(([0.0], e, [0.0])))


# ---------------------------------------------------------------------------
# loss and analytic gradient
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameBatch:
    """One synchronized received frame and what is needed to score it.

    Symbol ``k`` is read at sample ``start + k*sps`` of ``rx``; the
    matched-filter output is divided by ``gain``.
    """

    rx: np.ndarray
    symbols: np.ndarray
    start: int
    sps: int
    gain: float = 1.0

    @property
    def n_symbols(self) -> int:
        return self.symbols.size


@dataclass(frozen=True)
class LossBreakdown:
    evm: float
    s1: float
    s2: float
    total: float


def demodulate_batch(batch: FrameBatch, p_hat: np.ndarray, pb_hat: np.ndarray) -> np.ndarray:
    rx = np.ascontiguousarray(batch.rx, dtype=float)
    zi = _kernels.sampled_fir(rx, np.ascontiguousarray(p_hat), batch.start, batch.sps, batch.n_symbols)
    zq = _kernels.sampled_fir(rx, np.ascontiguousarray(pb_hat), batch.start, batch.sps, batch.n_symbols)
    return (zi - 1j * zq) / batch.gain


def loss(params: MlpParams, f_std, batch: FrameBatch, nominal: CapFilterPair,
         cfg: TrainConfig) -> LossBreakdown:
    pair = deform_filters(nominal, forward(params, f_std))
    s_hat = demodulate_batch(batch, pair.p_hat, pair.pb_hat)
    evm = evm_loss(s_hat, batch.symbols)
    s1, s2 = smoothness_losses(pair)
    return LossBreakdown(evm, s1, s2, total_loss(evm, s1, s2, cfg))


def backward(params: MlpParams, f_std, batch: FrameBatch, nominal: CapFilterPair,
             cfg: TrainConfig) -> tuple[LossBreakdown, MlpParams]:
    """Loss and its exact gradient with respect to every network parameter."""
    f = np.asarray(f_std, dtype=float)
    L = params.filter_len
    pre, h = _hidden(params, f)
    y = params.W2 @ h + params.b2

    p_rev, pb_rev, e0 = _reversed_nominal(nominal)
    u = p_rev + y[:L]
    v = pb_rev + y[L:]
    e = pair_energy(u, v)
    if e == 0.0:
        raise TrainingError("deformed filter pair has zero energy")
    a = math.sqrt(e0 / e)
    p_hat = a * u
    pb_hat = a * v

    rx = np.ascontiguousarray(batch.rx, dtype=float)
    K = batch.n_symbols
    zi = _kernels.sampled_fir(rx, p_hat, batch.start, batch.sps, K)
    zq = _kernels.sampled_fir(rx, pb_hat, batch.start, batch.sps, K)
    err_i = zi / batch.gain - batch.symbols.real
    err_q = -zq / batch.gain - batch.symbols.imag
    evm = float(np.mean(err_i**2 + err_q**2))

    d1p, d1b = np.diff(p_hat), np.diff(pb_hat)
    d2p, d2b = np.diff(p_hat, 2), np.diff(pb_hat, 2)
    s1 = float(np.sum(d1p**2) + np.sum(d1b**2))
    s2 = float(np.sum(d2p**2) + np.sum(d2b**2))
    out = LossBreakdown(evm, s1, s2, total_loss(evm, s1, s2, cfg))

    c = 2.0 / (K * batch.gain)
    g_p = c * _kernels.sampled_fir_adjoint(rx, err_i, batch.start, batch.sps, L)
    g_b = -c * _kernels.sampled_fir_adjoint(rx, err_q, batch.start, batch.sps, L)
    g_p += 2.0 * cfg.lambda_s1 * _diff_adjoint(d1p) + 2.0 * cfg.lambda_s2 * _diff_adjoint(_diff_adjoint(d2p))
    g_b += 2.0 * cfg.lambda_s1 * _diff_adjoint(d1b) + 2.0 * cfg.lambda_s2 * _diff_adjoint(_diff_adjoint(d2b))

    # through p_hat = a*w with a = sqrt(e0)/|w|: J = a (I - w w^T / |w|^2)
    g = np.concatenate((g_p, g_b))
    w = np.concatenate((u, v))
    g_y = a * (g - w * (np.dot(w, g) / e))

    g_pre = (params.W2.T @ g_y) * (pre > 0.0)
    grads = MlpParams(np.outer(g_pre, f), g_pre, np.outer(g_y, h), g_y)
    return out, grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls(params.map(np.zeros_like), params.map(np.zeros_like), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState,
              cfg: TrainConfig) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam update; inputs are left untouched."""
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for name in MlpParams.BLOCKS:
        p = getattr(params, name)
        g = getattr(grads, name)
        if p.shape != g.shape:
            raise ValueError(f"gradient block {name} has shape {g.shape}, expected {p.shape}")
        m = b1 * getattr(state.m, name) + (1.0 - b1) * g
        v = b2 * getattr(state.v, name) + (1.0 - b2) * g * g
        new_p.append(p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon))
        new_m.append(m)
        new_v.append(v)
    return MlpParams(*new_p), AdamState(MlpParams(*new_m), MlpParams(*new_v), t)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "capdmf-checkpoint"
CHECKPOINT_VERSION = 1
CHECKPOINT_FIELDS = (
    "format",
    "version",
    "field_order",
    "filter_len",
    "hidden_dim",
    "n_features",
    "W1",
    "b1",
    "W2",
    "b2",
    "standardizer_mean",
    "standardizer_std",
    "train_config",
    "condition",
    "reference_features",
)


@dataclass
class Checkpoint:
    """Trained model plus everything needed to reproduce its outputs.

    Stored as JSON with keys in ``CHECKPOINT_FIELDS`` order; matrices are
    flattened row-major. ``condition`` holds the training ``omega_n`` /
    ``snr_db`` (or ``"pooled"``); ``reference_features`` is the raw feature
    vector used when exporting taps.
    """

    params: MlpParams
    standardizer: FeatureStandardizer
    train_config: TrainConfig
    condition: dict = field(default_factory=dict)
    reference_features: np.ndarray | None = None

    def to_json(self) -> str:
        p = self.params
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "field_order": list(CHECKPOINT_FIELDS),
            "filter_len": p.filter_len,
            "hidden_dim": p.hidden_dim,
            "n_features": p.n_features,
            "W1": p.W1.ravel().tolist(),
            "b1": p.b1.tolist(),
            "W2": p.W2.ravel().tolist(),
            "b2": p.b2.tolist(),
            "standardizer_mean": self.standardizer.mean.tolist(),
            "standardizer_std": self.standardizer.std.tolist(),
            "train_config": asdict(self.train_config),
            "condition": self.condition,
            "reference_features": None if self.reference_features is None
            else np.asarray(self.reference_features).tolist(),
        }
        return json.dumps(doc, indent=None)

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a capdmf checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        L, H, F = doc["filter_len"], doc["hidden_dim"], doc["n_features"]
        params = MlpParams(
            np.array(doc["W1"], dtype=float).reshape(H, F),
            np.array(doc["b1"], dtype=float),
            np.array(doc["W2"], dtype=float).reshape(2 * L, H),
            np.array(doc["b2"], dtype=float),
        )
        known = {f.name for f in fields(TrainConfig)}
        cfg = TrainConfig(**{k: v for k, v in doc["train_config"].items() if k in known})
        ref = doc.get("reference_features")
        return cls(
            params,
            FeatureStandardizer.from_stats(doc["standardizer_mean"], doc["standardizer_std"]),
            cfg,
            doc.get("condition", {}),
            None if ref is None else np.array(ref, dtype=float),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())
