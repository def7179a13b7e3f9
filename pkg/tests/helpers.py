"""Shared builders for tests: small configs, frames and the finite-difference check."""

import numpy as np

from capdmf.experiment import Link, config_from_dict
from capdmf.neural import MlpParams, TrainConfig, backward

from oracles import total_loss_ld


def small_config(**overrides):
    doc = {
        "channel": {"omega_n": [0.5], "snr_db": [25.0]},
        "train": {"epochs": 5, "symbols_per_epoch": 256, "warmup_batches": 3},
        "evaluation": {"symbols": 512, "constellation_points": 20},
    }
    return config_from_dict(doc, "ci", **overrides)


def gradcheck_config(seed=0):
    """The small instance of the gradient check: sps 4, span 8, so L = 31."""
    return config_from_dict({"system": {"span_symbols": 8}}, "ci", seed=seed)


def make_frame(seed=0, n_symbols=64, omega_n=0.5, snr_db=25.0, cfg=None):
    cfg = cfg or gradcheck_config(seed)
    link = Link(cfg)
    fr = link.frame(np.random.SeedSequence([seed, 99]), n_symbols, omega_n, snr_db)
    return link, fr


def gradcheck(seed, step=1e-6, out_gain=0.3, cfg=None):
    """Worst relative error per parameter block, analytic gradient vs central differences.

    The differences are taken on an independent extended-precision loss so
    that cancellation in ``L(x+h) - L(x-h)`` stays far below the tolerance.
    """
    link, fr = make_frame(seed)
    rng = np.random.default_rng([seed, 7])
    params = MlpParams.init(link.pair.length, rng, out_gain=out_gain)
    params.b1[:] = rng.normal(0, 0.1, params.b1.size)
    params.b2[:] = rng.normal(0, 0.01, params.b2.size)
    f = rng.normal(size=params.n_features)
    cfg = cfg or TrainConfig()
    lb, grads = backward(params, f, fr.batch, link.pair, cfg)
    b = fr.batch
    p_rev, pb_rev = link.pair.matched()
    blocks = {k: getattr(params, k).astype(np.longdouble) for k in MlpParams.BLOCKS}
    h = np.longdouble(step)

    def L():
        return total_loss_ld(blocks["W1"], blocks["b1"], blocks["W2"], blocks["b2"], f, b.rx, b.symbols,
                             b.start, b.sps, b.gain, p_rev, pb_rev, cfg.lambda_s1, cfg.lambda_s2)

    assert abs(float(L()) - lb.total) <= 1e-12 * lb.total
    worst = {}
    for name in MlpParams.BLOCKS:
        flat = blocks[name].reshape(-1)
        g = getattr(grads, name).ravel()
        err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = L()
            flat[i] = orig - h
            lm = L()
            flat[i] = orig
            fd = float((lp - lm) / (2 * h))
            err = max(err, abs(g[i] - fd) / max(abs(g[i]), 1e-8))
        worst[name] = err
    return worst
