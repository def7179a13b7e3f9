"""Command-line entry point: ``capdmf {train,evaluate,sweep,export-taps,selftest}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiment import (
    MODES,
    PROFILES,
    Link,
    evaluate_all,
    export_taps,
    load_config,
    load_models,
    omega_tag,
    run_sweep,
    save_training,
    train_all,
    write_evaluation,
    write_taps,
)
from .dsp import SystemParams, cap_modulate, normalize_unit_power, pair_energy
from .neural import Checkpoint, MlpParams, TrainConfig, backward, deform_filters, demodulate_batch, forward, loss
from .receiver import demodulate, evm_percent, qam_demap, qam_map, receiver_gain

log = logging.getLogger("capdmf")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--profile", choices=sorted(PROFILES), help="named parameter profile (default: ci)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--mode", choices=MODES, help="one model per omega_n or one pooled model")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--omega-n", type=float, nargs="+", metavar="W", help="override the omega_n grid")
    axis = p.add_mutually_exclusive_group()
    axis.add_argument("--power-dbm", type=float, nargs="+", metavar="P", help="received power grid in dBm")
    axis.add_argument("--snr-db", type=float, nargs="+", metavar="S", help="SNR grid in dB (bypasses the power map)")
    p.add_argument("--epochs", type=int, help="override the number of training epochs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capdmf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train models and write checkpoints and loss curves")
    _common(p)
    p = sub.add_parser("evaluate", help="evaluate trained checkpoints over the sweep grid")
    _common(p)
    p.add_argument("--models", type=Path, help="directory holding the checkpoints (default: --out)")
    p = sub.add_parser("sweep", help="train, evaluate and export every artifact")
    _common(p)
    p = sub.add_parser("export-taps", help="write nominal and deformed taps of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, nargs="+", help="checkpoint file(s); default: all models in --out")
    p = sub.add_parser("selftest", help="fast end-to-end sanity checks")
    _common(p)
    return parser


def config_from_args(args):
    cfg = load_config(
        args.config,
        args.profile,
        seed=args.seed,
        mode=args.mode,
        out_dir=None if args.out is None else str(args.out),
        omega_n=None if args.omega_n is None else tuple(args.omega_n),
        power_dbm=None if args.power_dbm is None else tuple(args.power_dbm),
        snr_db=None if args.snr_db is None else tuple(args.snr_db),
    )
    if args.power_dbm is not None and cfg.snr_db is not None:
        cfg = dataclasses.replace(cfg, snr_db=None)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=args.epochs))
    return cfg


def cmd_train(cfg) -> int:
    out = Path(cfg.out_dir)
    trained = train_all(cfg)
    save_training(cfg, trained, out)
    for w, res in trained.items():
        log.info("omega_n=%.2f final loss %.6g", w, res.losses[-1].total)
    print(f"wrote checkpoints and loss curves to {out}")
    return 0


def cmd_evaluate(cfg, models_dir: Path | None) -> int:
    out = Path(cfg.out_dir)
    link = Link(cfg)
    models = load_models(cfg, models_dir or out)
    cells = evaluate_all(cfg, models, link)
    write_evaluation(cfg, models, cells, out, link)
    _print_reports(c.report for c in cells)
    return 1 if any(c.error for c in cells) else 0


def cmd_sweep(cfg) -> int:
    res = run_sweep(cfg)
    _print_reports(res.reports)
    return 1 if any(c.error for c in res.cells) else 0


def cmd_export_taps(cfg, paths) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pair = cfg.system.filter_pair()
    if paths:
        ckpts = [Checkpoint.load(p) for p in paths]
    else:
        ckpts = list({id(c): c for c in load_models(cfg, out).values()}.values())
    for ck in ckpts:
        omegas = ck.condition.get("omega_n", [cfg.omega_n[0]])
        tag = "pooled" if len(omegas) > 1 else omega_tag(omegas[0])
        path = out / f"taps_{tag}.csv"
        write_taps(path, export_taps(ck, pair))
        print(f"wrote {path}")
    return 0


def cmd_selftest(cfg) -> int:
    checks = []
    pair = cfg.system.filter_pair()
    rng = np.random.default_rng(cfg.seed)

    bits = rng.integers(0, 2, 2 * 10_000)
    s = qam_map(bits, 4).symbols
    x = normalize_unit_power(cap_modulate(s, pair))
    s_hat = demodulate(x, *pair.matched(), pair.samples_per_symbol, 0, s.size, gain=receiver_gain(pair))
    evm = evm_percent(s_hat, s)
    checks.append(("noiseless loopback EVM < 1% and no bit errors",
                   evm < 1.0 and np.array_equal(qam_demap(s_hat, 4), bits), f"{evm:.3f}%"))

    worst = 0.0
    for _ in range(100):
        dh = rng.normal(size=pair.length) + 1j * rng.normal(size=pair.length)
        d = deform_filters(pair, dh)
        worst = max(worst, abs(pair_energy(d.p_hat, d.pb_hat) - pair.energy) / pair.energy)
    checks.append(("deformed pair keeps nominal energy", worst < 1e-9, f"{worst:.2e}"))

    small = dataclasses.replace(cfg, system=SystemParams(samples_per_symbol=4, span_symbols=8))
    link = Link(small)
    fr = link.frame(np.random.SeedSequence([cfg.seed, 99]), 64, 0.5, 25.0)
    zero = MlpParams.zeros(link.pair.length)
    f = rng.normal(size=zero.n_features)
    d0 = deform_filters(link.pair, forward(zero, f))
    same = np.array_equal(link.conventional_symbols(fr), demodulate_batch(fr.batch, d0.p_hat, d0.pb_hat))
    checks.append(("zero correction reproduces the matched filter", same, ""))

    params = MlpParams.init(link.pair.length, rng, out_gain=0.3)
    tc = TrainConfig()
    _, g = backward(params, f, fr.batch, link.pair, tc)
    err = 0.0
    h = 1e-6
    for name in MlpParams.BLOCKS:
        flat = getattr(params, name).reshape(-1)
        gf = getattr(g, name).ravel()
        for i in rng.choice(flat.size, size=min(25, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(params, f, fr.batch, link.pair, tc).total
            flat[i] = orig - h
            lm = loss(params, f, fr.batch, link.pair, tc).total
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            err = max(err, abs(gf[i] - fd) / max(abs(gf[i]), 1e-8))
    checks.append(("analytic gradient matches central differences", err < 1e-4, f"{err:.2e}"))

    ok = True
    for name, passed, info in checks:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'}  {name}" + (f" ({info})" if info else ""))
    return 0 if ok else 1


def _print_reports(reports) -> None:
    print("omega_n  power_dbm  snr_db  evm_conv%  evm_nn%  selected")
    for r in reports:
        conv = "nan" if math.isnan(r.evm_conventional_pct) else f"{r.evm_conventional_pct:8.3f}"
        nn = "nan" if math.isnan(r.evm_nn_pct) else f"{r.evm_nn_pct:7.3f}"
        print(f"{r.omega_n:7.2f}  {r.power_dbm:9.1f}  {r.snr_db:6.1f}  {conv:>9}  {nn:>7}  {r.selected}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"capdmf: configuration error: {exc}", file=sys.stderr)
        return 2
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, args.models)
    if args.command == "sweep":
        return cmd_sweep(cfg)
    if args.command == "export-taps":
        return cmd_export_taps(cfg, args.checkpoint)
    return cmd_selftest(cfg)


if __name__ == "__main__":
    raise SystemExit(main())
