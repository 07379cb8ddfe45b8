"""Command-line pipeline: build code, train detector and decoder, tune the
quantizer, and run Monte Carlo BER sweeps.

Configuration is a flat key=value text file with ``#`` comments; command
line flags override config values, unknown keys are rejected, and every
run logs the fully resolved configuration. The ``MRAM_ECC_LOG`` variable
(error, info, debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .channel import ChannelParams, ReadBlock, sample_read_batch
from .code import build_hamming_71_64, build_tanner, to_alist
from .decoder import DecoderWeights, decode_batch
from .evaluation import (
    SCENARIOS,
    ConfigurationError,
    ScenarioConfig,
    emit_csv,
    file_sha256,
    run_scenario,
)
from .sigm import (
    build_quantizer,
    load_detector,
    load_quantizer,
    save_detector,
    save_quantizer,
    search_theta,
    search_threshold,
    train_detector,
)
from .streams import stream
from .trainer import TrainConfig, TrainingFailure, save_weights, train

log = logging.getLogger("mram_ecc")

# Offline training mixture for the detector: spreads crossed with offset
# conditions covering the experiment matrix.
DEFAULT_DETECTOR_MIX = [
    (spread, mu_b, sb)
    for spread in (0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14)
    for mu_b, sb in ((0.0, 0.0), (-0.1, 0.02), (-0.2, 0.04), (-0.2, 0.07))
]

_CHANNEL_KEYS = (
    "mu0_kohm",
    "mu1_kohm",
    "spread",
    "offset_mean_kohm",
    "offset_spread_ratio",
    "noise_kind",
)

_SWEEP_KEYS = set(_CHANNEL_KEYS) | {
    "scenarios",
    "sweep",
    "min_errors",
    "max_words",
    "batch_words",
    "iters",
    "out_prefix",
    "quantizer",
    "common_random_numbers",
} | {f"weights.{s}" for s in SCENARIOS} | {f"weights.{s.split('_')[0]}" for s in SCENARIOS}


class ConfigError(ValueError):
    """Bad or unknown key in a run configuration."""


def load_config(path: str) -> dict[str, str]:
    """Parse a flat key=value file with # comments."""
    cfg: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
                key, value = line.split("=", 1)
                cfg[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return cfg


def _log_resolved(name: str, cfg: dict) -> None:
    for key in sorted(cfg):
        log.info("%s config: %s = %s", name, key, cfg[key])


def _channel_from(cfg: dict[str, str]) -> ChannelParams:
    return ChannelParams.from_config(cfg)


def _cmd_gen_code(args) -> int:
    code = build_hamming_71_64()
    with open(args.out, "w") as fh:
        fh.write(to_alist(code))
    log.info("wrote (%d,%d) parity-check matrix to %s", code.n, code.k, args.out)
    return 0


def _cmd_train_detector(args) -> int:
    mix = [
        ChannelParams(
            mu0=args.mu0, mu1=args.mu1, spread=spread,
            offset_mean=mu_b, offset_spread=sb,
        )
        for spread, mu_b, sb in DEFAULT_DETECTOR_MIX
    ]
    model = train_detector(mix, args.samples_per_condition, args.seed)
    save_detector(model, args.out)
    log.info(
        "detector trained on %d conditions, held-out accuracy %.4f, saved to %s",
        len(mix), model.held_out_accuracy, args.out,
    )
    return 0


def _cmd_quantizer_search(args) -> int:
    detector = load_detector(args.detector)
    params = ChannelParams(
        mu0=args.mu0, mu1=args.mu1, spread=args.spread,
        offset_mean=args.offset_mean, offset_spread=args.offset_spread,
    )
    rng = stream(args.seed, "quantizer-search-blocks")
    blocks = []
    for _ in range(args.blocks):
        bits = rng.integers(0, 2, size=args.block_cells, dtype=np.uint8)
        blocks.append(ReadBlock(values=sample_read_batch(params, bits, rng), true_bits=bits))
    lo, hi, step = (float(v) for v in args.threshold_grid.split(":"))
    r_t = search_threshold(detector, blocks, lo, hi, step)
    log.info("adjusted detection threshold: %.4f kOhm", r_t)

    t_lo, t_hi, t_step = (float(v) for v in args.theta_grid.split(":"))
    values = np.arange(t_lo, t_hi + 1e-12, t_step)
    grid = [(float(a), float(b)) for a in values for b in values]
    code = build_hamming_71_64()
    graph = build_tanner(code)
    identity = DecoderWeights.identity(graph)

    def rbms(llrs):
        return decode_batch(graph, identity, llrs, max_iters=args.iters)[0]

    theta1, theta2, table = search_theta(
        r_t, params, rbms, grid, args.pilot_words, args.seed, q=args.bits
    )
    best = min(t for *_unused, t in table)
    log.info("theta search: theta1=%.3f theta2=%.3f pilot BER %.3e", theta1, theta2, best)
    save_quantizer(build_quantizer(r_t, theta1, theta2, args.bits), args.out)
    log.info("quantizer saved to %s", args.out)
    return 0


def _cmd_train_decoder(args) -> int:
    quantizer = load_quantizer(args.quantizer)
    offset = None
    if args.offset_mean != 0.0 or args.offset_spread != 0.0:
        offset = (args.offset_mean, args.offset_spread)
    config = TrainConfig(
        learning_rate=args.learning_rate,
        minibatches=args.minibatches,
        batch_size=args.batch_size,
        iterations_unrolled=args.iters,
        loss_kind=args.loss,
        spread_train=args.spread_train,
        offset_params=offset,
        mu0=args.mu0,
        mu1=args.mu1,
        seed=args.seed,
    )
    code = build_hamming_71_64()
    graph = build_tanner(code)
    report = train(config, graph, quantizer)
    save_weights(report.final_weights, args.out, graph)
    log.info(
        "trained %d minibatches in %.1fs, validation BER %.3e, weights saved to %s",
        args.minibatches, report.wall_time, report.validation_ber, args.out,
    )
    return 0


def _scenario_config_from_args(args, scenario: str, sweep, quantizer, weights) -> ScenarioConfig:
    params = ChannelParams(
        mu0=args.mu0, mu1=args.mu1, spread=sweep[0],
        offset_mean=args.offset_mean, offset_spread=args.offset_spread,
    )
    return ScenarioConfig(
        scenario_id=scenario,
        channel=params,
        sweep=list(sweep),
        seed=args.seed,
        quantizer=quantizer,
        weights=weights,
        stop_min_errors=args.min_errors,
        stop_max_words=args.max_words,
        batch_words=args.batch_words,
        decode_iters=args.iters,
    )


def _run_and_emit(cfg: ScenarioConfig, out: str, artifacts: dict[str, str]) -> None:
    started = time.perf_counter()
    points = run_scenario(cfg)
    meta: dict[str, object] = {
        "scenario": cfg.scenario_id,
        "seed": cfg.seed,
        "stop_min_errors": cfg.stop_min_errors,
        "stop_max_words": cfg.stop_max_words,
        "sweep": ",".join(f"{s:.6g}" for s in sorted(cfg.sweep)),
        "common_random_numbers": cfg.common_random_numbers,
        "version": __version__,
        "wall_time_s": f"{time.perf_counter() - started:.3f}",
    }
    for name, path in artifacts.items():
        meta[f"sha256.{name}"] = file_sha256(path)
    emit_csv(points, cfg.scenario_id, out, meta=meta)
    for p in points:
        log.info(
            "%s spread=%.4g ber=%.3e (+-%.1e) errors=%d words=%d",
            cfg.scenario_id, p.spread, p.ber, p.ci95_halfwidth, p.bit_errors, p.words_total,
        )


def _cmd_eval(args) -> int:
    sweep = [float(s) for part in args.spread for s in part.split(",")]
    cfg = _scenario_config_from_args(args, args.scenario, sweep, args.quantizer, args.weights)
    artifacts = {}
    if isinstance(args.quantizer, str):
        artifacts["quantizer"] = args.quantizer
    if isinstance(args.weights, str):
        artifacts["weights"] = args.weights
    _run_and_emit(cfg, args.out, artifacts)
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    unknown = set(cfg) - _SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    _log_resolved("sweep", cfg)
    channel = _channel_from(cfg)
    sweep = [float(s) for s in cfg["sweep"].split(",")]
    scenarios = [s.strip() for s in cfg["scenarios"].split(",")]
    prefix = cfg.get("out_prefix", "sweep_")
    for scenario in scenarios:
        weights = cfg.get(f"weights.{scenario}") or cfg.get(
            f"weights.{scenario.split('_')[0]}"
        )
        quantizer = cfg.get("quantizer")
        scfg = ScenarioConfig(
            scenario_id=scenario,
            channel=channel,
            sweep=sweep,
            seed=args.seed,
            quantizer=quantizer,
            weights=weights,
            stop_min_errors=int(cfg.get("min_errors", 200)),
            stop_max_words=int(float(cfg.get("max_words", 5e7))),
            batch_words=int(cfg.get("batch_words", 2048)),
            decode_iters=int(cfg.get("iters", 5)),
            common_random_numbers=cfg.get("common_random_numbers", "true") == "true",
        )
        artifacts = {}
        if isinstance(quantizer, str) and scfg.scenario_id in ("C2_rbms_sigm", "C6_nnorb_sigm"):
            artifacts["quantizer"] = quantizer
        if isinstance(weights, str):
            artifacts["weights"] = weights
        out = os.path.join(args.out_dir, f"{prefix}{scfg.scenario_id}.csv")
        _run_and_emit(scfg, out, artifacts)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mram-ecc",
        description="STT-MRAM read-channel and decoder simulation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-code", help="write the (71,64) parity-check matrix")
    p.add_argument("--out", required=True, help="output alist path")
    p.set_defaults(func=_cmd_gen_code)

    p = sub.add_parser("train-detector", help="train the per-cell channel detector")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output detector model path")
    p.add_argument("--samples-per-condition", type=int, default=20000)
    p.add_argument("--mu0", type=float, default=1.0)
    p.add_argument("--mu1", type=float, default=2.0)
    p.set_defaults(func=_cmd_train_detector)

    p = sub.add_parser("quantizer-search", help="threshold search plus theta tuning")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--detector", required=True, help="trained detector model path")
    p.add_argument("--out", required=True, help="output quantizer path")
    p.add_argument("--spread", type=float, required=True)
    p.add_argument("--offset-mean", type=float, default=0.0)
    p.add_argument("--offset-spread", type=float, default=0.0)
    p.add_argument("--mu0", type=float, default=1.0)
    p.add_argument("--mu1", type=float, default=2.0)
    p.add_argument("--blocks", type=int, default=600, help="pilot blocks for the threshold search")
    p.add_argument("--block-cells", type=int, default=1024, help="cells per pilot block")
    p.add_argument("--pilot-words", type=int, default=20000, help="pilot words per theta cell")
    p.add_argument("--bits", type=int, default=3, help="quantizer bits q")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--threshold-grid", default="0.8:2.2:0.005", help="lo:hi:step in kOhm")
    p.add_argument("--theta-grid", default="0.05:0.50:0.05", help="lo:hi:step in kOhm")
    p.set_defaults(func=_cmd_quantizer_search)

    p = sub.add_parser("train-decoder", help="train the decoder offsets/normalizers")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--quantizer", required=True, help="quantizer artifact path")
    p.add_argument("--out", required=True, help="output weights path")
    p.add_argument("--spread-train", type=float, required=True)
    p.add_argument("--offset-mean", type=float, default=0.0)
    p.add_argument("--offset-spread", type=float, default=0.0)
    p.add_argument("--mu0", type=float, default=1.0)
    p.add_argument("--mu1", type=float, default=2.0)
    p.add_argument("--minibatches", type=int, default=10000)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--loss", choices=("multiloss", "final_cross_entropy"), default="multiloss")
    p.set_defaults(func=_cmd_train_decoder)

    p = sub.add_parser("eval", help="Monte Carlo BER for one scenario")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scenario", required=True, help="C1..C7 or a full scenario id")
    p.add_argument("--spread", action="append", required=True,
                   help="sweep point(s); repeat or comma-separate")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--quantizer", default=None, help="SIGM quantizer artifact")
    p.add_argument("--weights", default=None, help="trained decoder weights artifact")
    p.add_argument("--mu0", type=float, default=1.0)
    p.add_argument("--mu1", type=float, default=2.0)
    p.add_argument("--offset-mean", type=float, default=0.0)
    p.add_argument("--offset-spread", type=float, default=0.0)
    p.add_argument("--min-errors", type=int, default=200)
    p.add_argument("--max-words", type=int, default=50_000_000)
    p.add_argument("--batch-words", type=int, default=2048)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (results never depend on it)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run the scenario list of a config file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (results never depend on it)")
    p.set_defaults(func=_cmd_sweep)

    return parser


def _configure_logging() -> None:
    level = os.environ.get("MRAM_ECC_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(levels.get(level, logging.INFO))


def run(argv=None) -> int:
    """Entry point returning a process exit code (0 ok, 1 domain, 2 usage)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging()
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, TrainingFailure, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
