"""Training loops, omega_n x power sweeps and CSV artifact export.

Every random draw comes from a ``numpy.random.SeedSequence`` keyed by
``(seed, stream, ...)`` so that training frames, evaluation frames and
weight initialization never share a stream and any run is reproducible
from its config alone.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import (
    OMEGA_SWEEP,
    ChannelConfig,
    PowerMap,
    SimulatedChannel,
    power_dbm_to_snr_db,
    snr_db_to_power_dbm,
)
from .dsp import (
    RealSignal,
    SystemParams,
    cap_modulate,
    fir_apply,
    lowpass_design,
    normalize_unit_power,
    sync_offset,
)
from .features import FeatureStandardizer, extract_features
from .neural import (
    AdamState,
    Checkpoint,
    FrameBatch,
    LossBreakdown,
    MlpParams,
    TrainConfig,
    TrainingError,
    adam_step,
    backward,
    deform_filters,
    demodulate_batch,
    forward,
    loss,
)
from .receiver import CONVENTIONAL, EVM_CSV_COLUMNS, NN, EvmReport, evm_percent, qam_map, receiver_gain, timing_offset

log = logging.getLogger(__name__)

STREAM_TRAIN = 0
STREAM_EVAL = 1
STREAM_INIT = 2
STREAM_REFERENCE = 3
STREAM_VALIDATION = 4

MODES = ("per-condition", "pooled")

TAPS_COLUMNS = ("index", "nominal_p", "nominal_p_b", "deformed_p", "deformed_p_b")
LOSS_COLUMNS = ("epoch", "total", "evm", "s1", "s2")
CONSTELLATION_COLUMNS = ("re_tx", "im_tx", "re_rx", "im_rx")


PROFILES = {
    "ci": {"system": {"samples_per_symbol": 4, "span_symbols": 16}, "train": {"epochs": 300}},
    "full": {"system": {"samples_per_symbol": 4, "span_symbols": 16}, "train": {"epochs": 1000}},
    "wideband": {
        "system": {"samples_per_symbol": 24, "span_symbols": 8, "bandwidth_hz": 100e6},
        "train": {"epochs": 1000},
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams = field(default_factory=SystemParams)
    omega_n: tuple[float, ...] = OMEGA_SWEEP
    power_dbm: tuple[float, ...] = (-25.0, -20.0, -15.0, -10.0, -5.0, 0.0, 5.0)
    snr_db: tuple[float, ...] | None = None
    train_snr_db: float = 25.0
    channel_taps: int = 101
    rx_lowpass_taps: int = 101
    sync_window: int = 256
    train: TrainConfig = field(default_factory=TrainConfig)
    power_map: PowerMap = field(default_factory=PowerMap)
    modulation_order: int = 4
    eval_symbols: int = 10_000
    constellation_points: int = 1000
    out_dir: str = "runs/out"
    mode: str = "per-condition"
    seed: int = 0
    profile: str = "ci"

    def __post_init__(self):
        if not self.omega_n:
            raise ValueError("omega_n grid must not be empty")
        if self.snr_db is None and not self.power_dbm:
            raise ValueError("need a power_dbm or snr_db grid")
        if self.snr_db is not None and not self.snr_db:
            raise ValueError("snr_db grid must not be empty")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.modulation_order not in (4, 16):
            raise ValueError("modulation_order must be 4 or 16")
        for w in self.omega_n:
            ChannelConfig(w, taps=self.channel_taps)

    def cells(self) -> list[tuple[float, float]]:
        """``(power_dbm, snr_db)`` pairs of the power axis."""
        if self.snr_db is not None:
            return [(snr_db_to_power_dbm(s, self.power_map), float(s)) for s in self.snr_db]
        return [(float(p), power_dbm_to_snr_db(p, self.power_map)) for p in self.power_dbm]

    def to_dict(self) -> dict:
        d = {
            "profile": self.profile,
            "seed": self.seed,
            "mode": self.mode,
            "modulation_order": self.modulation_order,
            "out_dir": self.out_dir,
            "system": dataclasses.asdict(self.system),
            "channel": {
                "omega_n": list(self.omega_n),
                "power_dbm": list(self.power_dbm),
                "snr_db": None if self.snr_db is None else list(self.snr_db),
                "train_snr_db": self.train_snr_db,
                "taps": self.channel_taps,
                "rx_lowpass_taps": self.rx_lowpass_taps,
                "sync_window": self.sync_window,
            },
            "train": dataclasses.asdict(self.train),
            "power_map": dataclasses.asdict(self.power_map),
            "evaluation": {"symbols": self.eval_symbols, "constellation_points": self.constellation_points},
        }
        return d


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(doc: dict | None = None, profile: str | None = None, **overrides) -> ExperimentConfig:
    """Build a config from a nested mapping layered over a named profile.

    Precedence: keyword overrides > ``doc`` > profile defaults.
    """
    doc = dict(doc or {})
    profile = profile or doc.get("profile") or "ci"
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    doc = _merge(PROFILES[profile], doc)
    ch = doc.get("channel", {})
    ev = doc.get("evaluation", {})
    seed = overrides.pop("seed", None)
    if seed is None:
        seed = doc.get("seed", 0)
    train = dict(doc.get("train", {}))
    train["seed"] = seed
    kw = dict(
        system=SystemParams(**doc.get("system", {})),
        train=TrainConfig(**train),
        power_map=PowerMap(**doc.get("power_map", {})),
        modulation_order=doc.get("modulation_order", 4),
        out_dir=doc.get("out_dir", "runs/out"),
        mode=doc.get("mode", "per-condition"),
        seed=seed,
        profile=profile,
        eval_symbols=ev.get("symbols", 10_000),
        constellation_points=ev.get("constellation_points", 1000),
    )
    if "omega_n" in ch:
        kw["omega_n"] = tuple(float(w) for w in ch["omega_n"])
    if ch.get("power_dbm") is not None:
        kw["power_dbm"] = tuple(float(p) for p in ch["power_dbm"])
    if ch.get("snr_db") is not None:
        kw["snr_db"] = tuple(float(s) for s in ch["snr_db"])
    for src, dst in (("train_snr_db", "train_snr_db"), ("taps", "channel_taps"),
                     ("rx_lowpass_taps", "rx_lowpass_taps"), ("sync_window", "sync_window")):
        if src in ch:
            kw[dst] = ch[src]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


def load_config(path=None, profile: str | None = None, **overrides) -> ExperimentConfig:
    doc = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    return config_from_dict(doc, profile, **overrides)


# ---------------------------------------------------------------------------
# link simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    symbols: np.ndarray
    tx: np.ndarray
    batch: FrameBatch
    tau: int
    features: np.ndarray


class Link:
    """Transmitter, simulated channel and receiver front end for one config."""

    def __init__(self, cfg: ExperimentConfig, channel=None):
        self.cfg = cfg
        self.system = cfg.system
        self.pair = cfg.system.filter_pair()
        self.gain = receiver_gain(self.pair)
        self.rx_lowpass = lowpass_design(cfg.rx_lowpass_taps, cfg.system.rx_lowpass_omega)
        self.channel = channel or SimulatedChannel()
        self.p_rev, self.pb_rev = self.pair.matched()

    def seed_sequence(self, stream: int, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.cfg.seed, stream, *key])

    def frame(self, ss: np.random.SeedSequence, n_symbols: int, omega_n: float, snr_db: float) -> Frame:
        M = self.cfg.modulation_order
        bits_rng = np.random.default_rng(ss.spawn(1)[0])
        noise_seed = int(ss.generate_state(1)[0])
        bits = bits_rng.integers(0, 2, n_symbols * int(math.log2(M)))
        stream = qam_map(bits, M)
        tx = normalize_unit_power(cap_modulate(stream, self.pair))
        fs = self.system.sample_rate_hz
        ch = ChannelConfig(omega_n, snr_db, self.cfg.channel_taps, noise_seed)
        rx = self.channel.transmit(RealSignal(tx, fs), ch).samples
        rx = fir_apply(rx, self.rx_lowpass)
        tau = sync_offset(tx, rx, min(self.cfg.sync_window, rx.size - 1))
        window = np.zeros(tx.size)
        seg = rx[tau : tau + tx.size]
        window[: seg.size] = seg
        feats = extract_features(window, self.system.samples_per_symbol, fs).to_array()
        sps = self.system.samples_per_symbol
        offset = timing_offset(window, self.p_rev, self.pb_rev, sps, 0, n_symbols)
        start = self.pair.delay + offset
        if start < 0 or start + (n_symbols - 1) * sps >= window.size:
            raise ValueError(f"timing offset {offset} puts symbol instants outside the frame")
        batch = FrameBatch(window, stream.symbols, start, sps, self.gain)
        return Frame(stream.symbols, tx, batch, tau, feats)

    def conventional_symbols(self, frame: Frame) -> np.ndarray:
        return demodulate_batch(frame.batch, self.p_rev, self.pb_rev)

    def nn_symbols(self, frame: Frame, params: MlpParams, standardizer: FeatureStandardizer):
        dh = forward(params, standardizer.transform(frame.features))
        pair = deform_filters(self.pair, dh)
        return demodulate_batch(frame.batch, pair.p_hat, pair.pb_hat), pair


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[LossBreakdown]
    omega_n: tuple[float, ...]
    snr_db: float
    snapshots: dict[int, MlpParams] = field(default_factory=dict)

    def loss_curve(self) -> np.ndarray:
        return np.array([lb.total for lb in self.losses])


def _omega_for_epoch(grid: tuple[float, ...], epoch: int) -> float:
    return grid[epoch % len(grid)]


def train_model(cfg: ExperimentConfig, omegas, snr_db: float, link: Link | None = None,
                params: MlpParams | None = None, snapshot_epochs=()) -> TrainResult:
    """Online training of one network over the cyclic ``omegas`` schedule.

    Each epoch draws a fresh frame from the training stream. The standardizer
    is fitted on the features of the first ``warmup_batches`` training frames
    and frozen before the first update. The parameters in force at each epoch
    listed in ``snapshot_epochs`` (1-based, before that epoch's update) are
    kept in ``TrainResult.snapshots``.
    """
    snapshot_epochs = set(int(e) for e in snapshot_epochs)
    omegas = tuple(float(w) for w in np.atleast_1d(omegas))
    link = link or Link(cfg)
    tc = cfg.train
    K = tc.symbols_per_epoch

    def epoch_frame(ep):
        return link.frame(link.seed_sequence(STREAM_TRAIN, ep), K, _omega_for_epoch(omegas, ep), snr_db)

    std = FeatureStandardizer()
    warm = min(tc.warmup_batches, tc.epochs)
    cached = {}
    for ep in range(warm):
        fr = epoch_frame(ep)
        std.update(fr.features)
        if ep == 0:
            cached[ep] = fr
    std.freeze()

    if params is None:
        params = MlpParams.init(link.pair.length, np.random.default_rng(link.seed_sequence(STREAM_INIT)))
    state = AdamState.zeros_like(params)
    losses: list[LossBreakdown] = []
    snapshots: dict[int, MlpParams] = {}
    for ep in range(tc.epochs):
        if ep + 1 in snapshot_epochs:
            snapshots[ep + 1] = params.copy()
        fr = cached.pop(ep, None) or epoch_frame(ep)
        f_std = std.transform(fr.features)
        lb, grads = backward(params, f_std, fr.batch, link.pair, tc)
        if not math.isfinite(lb.total):
            raise TrainingError(f"non-finite loss at epoch {ep + 1}")
        losses.append(lb)
        params, state = adam_step(params, grads, state, tc)
        try:
            params.check_finite()
        except TrainingError as exc:
            raise TrainingError(f"epoch {ep + 1}: {exc}") from None
        if (ep + 1) % 100 == 0:
            log.info("omega_n=%s epoch %d loss %.6g", omegas if len(omegas) > 1 else omegas[0], ep + 1, lb.total)

    ref = link.frame(link.seed_sequence(STREAM_REFERENCE, 0), cfg.eval_symbols, omegas[0], snr_db)
    condition = {"omega_n": list(omegas), "snr_db": snr_db, "mode": cfg.mode if len(omegas) > 1 else "per-condition"}
    ckpt = Checkpoint(params, std, tc, condition, ref.features)
    return TrainResult(ckpt, losses, omegas, snr_db, snapshots)


def train_condition(cfg: ExperimentConfig, omega_n: float, snr_db: float | None = None, **kw) -> TrainResult:
    return train_model(cfg, (omega_n,), cfg.train_snr_db if snr_db is None else snr_db, **kw)


def held_out_loss(cfg: ExperimentConfig, params: MlpParams, standardizer: FeatureStandardizer,
                  omega_n: float, snr_db: float, n_frames: int = 8, link: Link | None = None) -> LossBreakdown:
    """Mean training objective over fixed frames drawn from the validation stream.

    Scoring every parameter snapshot on the same frames separates changes of
    the model from frame-to-frame sampling noise in the per-epoch loss.
    """
    link = link or Link(cfg)
    rows = []
    for i in range(n_frames):
        fr = link.frame(link.seed_sequence(STREAM_VALIDATION, i), cfg.train.symbols_per_epoch, omega_n, snr_db)
        lb = loss(params, standardizer.transform(fr.features), fr.batch, link.pair, cfg.train)
        rows.append((lb.evm, lb.s1, lb.s2, lb.total))
    return LossBreakdown(*(float(v) for v in np.mean(rows, axis=0)))


def train_all(cfg: ExperimentConfig, link: Link | None = None) -> dict[float, TrainResult]:
    """One model per omega_n, or a single pooled model shared by every omega_n."""
    link = link or Link(cfg)
    if cfg.mode == "pooled":
        res = train_model(cfg, cfg.omega_n, cfg.train_snr_db, link)
        return {w: res for w in cfg.omega_n}
    return {w: train_model(cfg, (w,), cfg.train_snr_db, link) for w in cfg.omega_n}


# ---------------------------------------------------------------------------
# evaluation and export
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    report: EvmReport
    tx_symbols: np.ndarray | None = None
    rx_symbols: np.ndarray | None = None
    error: str | None = None


def evaluate_cell(cfg: ExperimentConfig, link: Link, ckpt: Checkpoint, omega_n: float,
                  power_dbm: float, snr_db: float, key: tuple[int, int]) -> CellResult:
    fr = link.frame(link.seed_sequence(STREAM_EVAL, *key), cfg.eval_symbols, omega_n, snr_db)
    s_conv = link.conventional_symbols(fr)
    s_nn, pair = link.nn_symbols(fr, ckpt.params, ckpt.standardizer)
    evm_c = evm_percent(s_conv, fr.symbols)
    evm_n = evm_percent(s_nn, fr.symbols)
    ratio = pair.correction_norm / math.sqrt(link.pair.energy)
    rep = EvmReport.from_evm(omega_n, power_dbm, snr_db, evm_c, evm_n, ratio)
    rx = s_nn if rep.selected == NN else s_conv
    return CellResult(rep, fr.symbols, rx)


def evaluate_all(cfg: ExperimentConfig, models: dict[float, Checkpoint], link: Link | None = None) -> list[CellResult]:
    link = link or Link(cfg)
    out = []
    for i, w in enumerate(cfg.omega_n):
        for j, (p_dbm, snr) in enumerate(cfg.cells()):
            try:
                out.append(evaluate_cell(cfg, link, models[w], w, p_dbm, snr, (i, j)))
            except Exception as exc:  # a failed cell must not stop the sweep
                log.warning("cell omega_n=%s snr_db=%s failed: %s", w, snr, exc)
                out.append(CellResult(EvmReport.failed(w, p_dbm, snr), error=str(exc)))
    return out


def export_taps(ckpt: Checkpoint, nominal, features: np.ndarray | None = None) -> np.ndarray:
    """Rows ``(index, p[-l], p_b[-l], p_hat[l], pb_hat[l])`` for ``l = 0..L-1``.

    The correction is evaluated at ``features`` (raw, unstandardized), falling
    back to the checkpoint's reference features.
    """
    L = nominal.length
    if ckpt.params.filter_len != L:
        raise ValueError(f"checkpoint filter length {ckpt.params.filter_len} != configured length {L}")
    feats = ckpt.reference_features if features is None else features
    if feats is None:
        raise ValueError("no features available to evaluate the correction")
    pair = deform_filters(nominal, forward(ckpt.params, ckpt.standardizer.transform(feats)))
    p_rev, pb_rev = nominal.matched()
    return np.column_stack((np.arange(L), p_rev, pb_rev, pair.p_hat, pair.pb_hat))


def _fmt(v) -> str:
    return format(float(v), ".12g")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def omega_tag(w: float) -> str:
    return f"{w:.2f}"


def cell_tag(w: float, snr_db: float) -> str:
    return f"omega{w:.2f}_snr{snr_db:+.1f}"


def write_taps(path, rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TAPS_COLUMNS) + "\n")
        for r in rows:
            fh.write(str(int(r[0])) + "," + ",".join(_fmt(v) for v in r[1:]) + "\n")


def write_loss(path, losses: list[LossBreakdown]) -> None:
    _write_rows(Path(path), LOSS_COLUMNS, ((i + 1, lb.total, lb.evm, lb.s1, lb.s2) for i, lb in enumerate(losses)))


def write_evm_csv(path, reports: list[EvmReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(EVM_CSV_COLUMNS) + "\n")
        for r in reports:
            fh.write(r.csv_row() + "\n")


def write_constellation(path, tx: np.ndarray, rx: np.ndarray, limit: int) -> None:
    n = min(limit, tx.size)
    _write_rows(Path(path), CONSTELLATION_COLUMNS, zip(tx.real[:n], tx.imag[:n], rx.real[:n], rx.imag[:n]))


def checkpoint_path(out: Path, w: float, mode: str) -> Path:
    return out / ("model_pooled.json" if mode == "pooled" else f"model_{omega_tag(w)}.json")


def save_training(cfg: ExperimentConfig, trained: dict[float, TrainResult], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    for w, res in trained.items():
        if id(res) in seen:
            continue
        seen.add(id(res))
        name = "pooled" if cfg.mode == "pooled" else omega_tag(w)
        res.checkpoint.save(checkpoint_path(out, w, cfg.mode))
        write_loss(out / f"loss_{name}.csv", res.losses)
    with open(out / "config_used.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def load_models(cfg: ExperimentConfig, out: Path) -> dict[float, Checkpoint]:
    return {w: Checkpoint.load(checkpoint_path(out, w, cfg.mode)) for w in cfg.omega_n}


def write_evaluation(cfg: ExperimentConfig, models: dict[float, Checkpoint], cells: list[CellResult],
                     out: Path, link: Link) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_evm_csv(out / "evm_sweep.csv", [c.report for c in cells])
    for c in cells:
        if c.tx_symbols is not None and cfg.constellation_points > 0:
            write_constellation(out / f"constellation_{cell_tag(c.report.omega_n, c.report.snr_db)}.csv",
                                c.tx_symbols, c.rx_symbols, cfg.constellation_points)
    for i, w in enumerate(cfg.omega_n):
        ckpt = models[w]
        feats = ckpt.reference_features
        if cfg.mode == "pooled":
            feats = link.frame(link.seed_sequence(STREAM_REFERENCE, i), cfg.eval_symbols, w, cfg.train_snr_db).features
        write_taps(out / f"taps_{omega_tag(w)}.csv", export_taps(ckpt, link.pair, feats))


@dataclass
class SweepResult:
    reports: list[EvmReport]
    trained: dict[float, TrainResult]
    cells: list[CellResult]


def run_sweep(cfg: ExperimentConfig, out: Path | str | None = None) -> SweepResult:
    """Train, evaluate every (omega_n, power) cell and write all CSV artifacts."""
    out = Path(cfg.out_dir if out is None else out)
    link = Link(cfg)
    trained = train_all(cfg, link)
    save_training(cfg, trained, out)
    models = {w: r.checkpoint for w, r in trained.items()}
    cells = evaluate_all(cfg, models, link)
    write_evaluation(cfg, models, cells, out, link)
    return SweepResult([c.report for c in cells], trained, cells)


def conventional_only_report(cfg: ExperimentConfig, omega_n: float, snr_db: float, key=(0, 0),
                             link: Link | None = None) -> float:
    """Conventional-receiver EVM% of one evaluation frame."""
    link = link or Link(cfg)
    fr = link.frame(link.seed_sequence(STREAM_EVAL, *key), cfg.eval_symbols, omega_n, snr_db)
    return evm_percent(link.conventional_symbols(fr), fr.symbols)


__all__ = [
    "CONVENTIONAL",
    "NN",
    "PROFILES",
    "ExperimentConfig",
    "Link",
    "TrainResult",
    "config_from_dict",
    "load_config",
    "train_condition",
    "train_model",
    "train_all",
    "held_out_loss",
    "evaluate_cell",
    "evaluate_all",
    "export_taps",
    "run_sweep",
]
