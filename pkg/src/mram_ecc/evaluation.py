"""Monte Carlo BER harness for the decoder scenario matrix.

Scenarios differ only in the information model that turns readbacks into
decoder inputs and in the decoder weights; the channel draws come from
keyed streams so that, in common-random-numbers mode, every scenario at
a given sweep point sees identical messages, scramble masks and noise.

Scenario information models:
  C1_hdd                  hard threshold at the true optimal threshold + HDD
  C2_rbms_sigm            RB-MS on SIGM quantizer LLRs
  C3_rbms_ideal           RB-MS on scaled full-knowledge LLRs
  C4_nnorb_no_offset_info trained decoder, LLRs computed as if no offset
  C5_nnorb_reference_cell trained decoder, LLRs use the reference-cell
                          offset-mean estimate (offset variance unknown)
  C6_nnorb_sigm           trained decoder on SIGM quantizer LLRs
  C7_nnorb_full_knowledge trained decoder on scaled full-knowledge LLRs
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from .code import CodeDefinition, build_hamming_71_64, build_tanner, encode, hdd_decode_batch
from .decoder import DecoderWeights, decode_batch, round_half_away
from .sigm import QuantizerSpec, load_quantizer
from .streams import derive_key, stream
from .trainer import load_weights

__all__ = [
    "SCENARIOS",
    "BerPoint",
    "ScenarioConfig",
    "ScaledLlrQuantizer",
    "ConfigurationError",
    "build_scaled_llr_quantizer",
    "estimate_offset_mean",
    "ber_confidence",
    "run_scenario",
    "emit_csv",
]

SCENARIOS = (
    "C1_hdd",
    "C2_rbms_sigm",
    "C3_rbms_ideal",
    "C4_nnorb_no_offset_info",
    "C5_nnorb_reference_cell",
    "C6_nnorb_sigm",
    "C7_nnorb_full_knowledge",
)

_ALIASES = {s.split("_")[0]: s for s in SCENARIOS}

_SIGM_SCENARIOS = {"C2_rbms_sigm", "C6_nnorb_sigm"}
_TRAINED_SCENARIOS = {
    "C4_nnorb_no_offset_info",
    "C5_nnorb_reference_cell",
    "C6_nnorb_sigm",
    "C7_nnorb_full_knowledge",
}

LOW_CONFIDENCE_ERRORS = 100


class ConfigurationError(ValueError):
    """A scenario references an artifact that is missing or unusable."""


@dataclass(frozen=True)
class BerPoint:
    """One Monte Carlo result row of a BER-vs-spread sweep."""

    spread: float
    bit_errors: int
    bits_total: int
    ber: float
    ci95_halfwidth: float
    words_failed: int
    words_total: int = 0

    @property
    def low_confidence(self) -> bool:
        return self.bit_errors < LOW_CONFIDENCE_ERRORS


@dataclass
class ScenarioConfig:
    """One experiment cell: scenario, channel, sweep, stop rule, artifacts."""

    scenario_id: str
    channel: ch.ChannelParams
    sweep: list[float]
    seed: int
    quantizer: QuantizerSpec | str | None = None
    weights: DecoderWeights | str | None = None
    stop_min_errors: int = 200
    stop_max_words: int = 50_000_000
    batch_words: int = 2048
    decode_iters: int = 5
    common_random_numbers: bool = True
    quantizer_bits: int = 3
    llr_scale_mode: str = "pilot"  # "pilot" or "quantile"
    llr_scale_quantile: float = 0.5
    llr_scale_pilot_words: int = 4096
    reference_cells: int = 64
    reference_block_cells: int = 1024

    def __post_init__(self) -> None:
        self.scenario_id = _ALIASES.get(self.scenario_id, self.scenario_id)
        if self.scenario_id not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario_id!r}")
        if not self.sweep:
            raise ConfigurationError("sweep must contain at least one spread value")


def ber_confidence(errors: int, bits: int) -> tuple[float, float]:
    """Point BER and normal-approximation 95% halfwidth."""
    if bits <= 0:
        raise ValueError("bits must be positive")
    p = errors / bits
    halfwidth = 1.96 * np.sqrt(p * (1.0 - p) / bits)
    return float(p), float(halfwidth)


def estimate_offset_mean(
    params: ch.ChannelParams, num_reference_cells: int, seed: int | np.random.Generator
) -> float:
    """Offset-mean estimate from reference cells storing known ones."""
    if num_reference_cells < 1:
        raise ValueError("need at least one reference cell")
    block = ch.sample_block(params, np.ones(num_reference_cells, dtype=np.uint8), seed)
    return float(block.values.mean() - params.mu1)


@dataclass(frozen=True)
class ScaledLlrQuantizer:
    """Scaled-and-rounded analytic LLRs clipped into the q-bit index range.

    The scale maps the calibration quantile of |LLR| under the believed
    channel to the largest positive index, so full-knowledge soft
    information lands in the same integer range the uniform quantizer uses.
    """

    params: ch.ChannelParams
    alpha: float
    q: int

    @property
    def max_index(self) -> int:
        return 2**self.q - 1 - self.q

    @property
    def min_index(self) -> int:
        return -self.q

    def quantize(self, values: np.ndarray) -> np.ndarray:
        llr = ch.analytic_llr(self.params, np.asarray(values, dtype=np.float64))
        scaled = np.clip(round_half_away(self.alpha * np.asarray(llr)), self.min_index, self.max_index)
        return scaled.astype(np.int64)


def build_scaled_llr_quantizer(
    params: ch.ChannelParams,
    q: int,
    rng: np.random.Generator,
    calibration_reads: int = 65536,
    quantile: float = 0.5,
) -> ScaledLlrQuantizer:
    """Calibrate the LLR scale on a seeded sample of believed-channel reads."""
    bits = rng.integers(0, 2, size=calibration_reads, dtype=np.uint8)
    y = ch.sample_read_batch(params, bits, rng)
    mags = np.abs(np.asarray(ch.analytic_llr(params, y)))
    ref = float(np.quantile(mags, quantile))
    max_index = 2**q - 1 - q
    alpha = max_index / ref if np.isfinite(ref) and ref > 0 else 1.0
    return ScaledLlrQuantizer(params=params, alpha=alpha, q=q)


# Scale candidates for the pilot-tuned LLR quantizer, covering saturating
# through strongly attenuated maps; min-sum on the dense graph prefers the
# attenuated end, so the grid is log-spaced toward small scales.
ALPHA_GRID = (0.02, 0.03, 0.045, 0.07, 0.10, 0.15, 0.22, 0.33, 0.50, 0.75)


def tune_llr_scale(
    params: ch.ChannelParams,
    q: int,
    decoder_handle,
    seed: int,
    words: int = 4096,
    word_length: int = 71,
    alphas: tuple[float, ...] = ALPHA_GRID,
) -> ScaledLlrQuantizer:
    """Pick the LLR scale whose pilot decoding BER is lowest.

    The pilot reads scrambled all-zero words through the believed channel
    only, so partial-knowledge information models stay honest. One seeded
    pilot set is shared by every candidate scale; ties break toward the
    smaller scale.
    """
    rng = stream(seed, "alpha-pilot", _spread_key(params.spread))
    mask = rng.integers(0, 2, size=(words, word_length), dtype=np.uint8)
    y = ch.sample_read_batch(params, mask, rng)
    llr = np.asarray(ch.analytic_llr(params, y))
    sign = 1 - 2 * mask.astype(np.int64)
    max_index = 2**q - 1 - q
    best = None
    degenerate = not np.isfinite(llr).all()
    for alpha in alphas:
        if degenerate:
            best = (0.0, alpha)
            break
        u = np.clip(round_half_away(alpha * llr), -q, max_index)
        hard = decoder_handle((u * sign).astype(np.float64))
        ber = float(np.sum(hard != 0) / hard.size)
        if best is None or ber < best[0]:
            best = (ber, alpha)
    return ScaledLlrQuantizer(params=params, alpha=best[1], q=q)


def _resolve_artifacts(cfg: ScenarioConfig):
    quantizer = cfg.quantizer
    weights = cfg.weights
    if cfg.scenario_id in _SIGM_SCENARIOS:
        if quantizer is None:
            raise ConfigurationError(
                f"scenario {cfg.scenario_id} requires artifact 'quantizer'"
            )
        if isinstance(quantizer, str):
            try:
                quantizer = load_quantizer(quantizer)
            except OSError as exc:
                raise ConfigurationError(f"cannot read quantizer: {exc}") from exc
    if cfg.scenario_id in _TRAINED_SCENARIOS:
        if weights is None:
            raise ConfigurationError(
                f"scenario {cfg.scenario_id} requires artifact 'weights'"
            )
        if isinstance(weights, str):
            try:
                weights = load_weights(weights)
            except OSError as exc:
                raise ConfigurationError(f"cannot read weights: {exc}") from exc
    return quantizer, weights


def _spread_key(spread: float) -> int:
    return int(round(spread * 1e6))


class _Point:
    """Decode path for one (scenario, spread) sweep point."""

    def __init__(self, cfg, code, graph, true_params, quantizer, weights):
        self.cfg = cfg
        self.code = code
        self.graph = graph
        self.true_params = true_params
        self.words_per_block = max(1, cfg.reference_block_cells // code.n)
        sid = cfg.scenario_id
        skey = _spread_key(true_params.spread)

        if sid == "C1_hdd":
            try:
                self.threshold = ch.optimal_threshold(true_params)
            except ch.DegenerateChannelError:
                # Noiseless channel: any threshold strictly between the means works.
                self.threshold = 0.5 * (true_params.mu0 + true_params.mu1_shifted)
            return

        if sid in _SIGM_SCENARIOS:
            self.quantizer = quantizer
        elif sid in ("C3_rbms_ideal", "C7_nnorb_full_knowledge"):
            self.quantizer = self._analytic_quantizer(true_params, sid)
        elif sid == "C4_nnorb_no_offset_info":
            believed = replace(true_params, offset_mean=0.0, offset_spread=0.0)
            self.quantizer = self._analytic_quantizer(believed, sid)
        elif sid == "C5_nnorb_reference_cell":
            mu_b0 = estimate_offset_mean(
                true_params, cfg.reference_cells, stream(cfg.seed, "refcell-calib", skey)
            )
            believed0 = replace(true_params, offset_mean=mu_b0, offset_spread=0.0)
            self.alpha = self._analytic_quantizer(believed0, sid).alpha
            self.skey = skey

        if sid in ("C2_rbms_sigm", "C3_rbms_ideal"):
            self.weights = DecoderWeights.identity(graph)
        else:
            self.weights = weights

    def _analytic_quantizer(self, believed, sid):
        """Scaled-LLR quantizer under the scenario's believed channel."""
        cfg = self.cfg
        skey = _spread_key(self.true_params.spread)
        if cfg.llr_scale_mode == "quantile":
            rng = stream(cfg.seed, "alpha", sid, skey)
            return build_scaled_llr_quantizer(
                believed, cfg.quantizer_bits, rng, quantile=cfg.llr_scale_quantile
            )
        identity = DecoderWeights.identity(self.graph)

        def handle(llrs):
            return decode_batch(
                self.graph, identity, llrs, cfg.decode_iters,
                integer_mode=True, early_stop=True,
            )[0]

        return tune_llr_scale(
            believed, cfg.quantizer_bits, handle,
            seed=derive_key(cfg.seed, "alpha", sid),
            words=cfg.llr_scale_pilot_words, word_length=self.code.n,
        )

    def decode(self, y, mask, word_offset):
        """Return (codeword estimates, decoder-failure count) for one batch."""
        cfg = self.cfg
        sid = cfg.scenario_id
        if sid == "C1_hdd":
            hard_tx = (y > self.threshold).astype(np.uint8)
            est, status = hdd_decode_batch(self.code, hard_tx ^ mask)
            return est, int((status == 2).sum())

        if sid == "C5_nnorb_reference_cell":
            u = self._reference_cell_llrs(y, word_offset)
        else:
            u = self.quantizer.quantize(y)
        v = u * (1 - 2 * mask.astype(np.int64))
        hard, converged, _ = decode_batch(
            self.graph, self.weights, v.astype(np.float64),
            max_iters=cfg.decode_iters, integer_mode=True, early_stop=True,
        )
        return hard, int((~converged).sum())

    def _reference_cell_llrs(self, y, word_offset):
        """Per 1024-cell block: re-estimate the offset mean and rebuild the LLR map."""
        cfg = self.cfg
        q = cfg.quantizer_bits
        max_index = 2**q - 1 - q
        u = np.empty(y.shape, dtype=np.int64)
        n_words = y.shape[0]
        wpb = self.words_per_block
        first_block = word_offset // wpb
        last_block = (word_offset + n_words - 1) // wpb
        for block in range(first_block, last_block + 1):
            lo = max(block * wpb - word_offset, 0)
            hi = min((block + 1) * wpb - word_offset, n_words)
            mu_b = estimate_offset_mean(
                self.true_params,
                cfg.reference_cells,
                stream(cfg.seed, "refcell", self.skey, block),
            )
            believed = replace(self.true_params, offset_mean=mu_b, offset_spread=0.0)
            llr = np.asarray(ch.analytic_llr(believed, y[lo:hi]))
            u[lo:hi] = np.clip(round_half_away(self.alpha * llr), -q, max_index)
        return u


def run_scenario(
    config: ScenarioConfig,
    code: CodeDefinition | None = None,
    graph=None,
) -> list[BerPoint]:
    """Monte Carlo BER at every sweep point of one scenario.

    Per word: draw a random message, encode, scramble, read through the
    channel, build decoder inputs per the scenario's information model,
    decode, and count message-bit errors against the ground truth. Stops
    at the configured error or word budget per point.
    """
    code = code or build_hamming_71_64()
    graph = graph if graph is not None else build_tanner(code)
    quantizer, weights = _resolve_artifacts(config)

    points = []
    for spread in sorted(config.sweep):
        true_params = replace(config.channel, spread=spread)
        point = _Point(config, code, graph, true_params, quantizer, weights)
        skey = _spread_key(spread)
        errors = 0
        bits = 0
        words = 0
        failed = 0
        batch_index = 0
        while errors < config.stop_min_errors and words < config.stop_max_words:
            nb = int(min(config.batch_words, config.stop_max_words - words))
            tags = ("mc", skey, batch_index)
            if not config.common_random_numbers:
                tags = ("mc", config.scenario_id, skey, batch_index)
            rng = stream(config.seed, *tags)
            msgs = rng.integers(0, 2, size=(nb, code.k), dtype=np.uint8)
            cw = encode(code, msgs)
            mask = rng.integers(0, 2, size=(nb, code.n), dtype=np.uint8)
            y = ch.sample_read_batch(true_params, cw ^ mask, rng)
            est, nfail = point.decode(y, mask, words)
            errors += int((est[:, : code.k] != msgs).sum())
            bits += nb * code.k
            words += nb
            failed += nfail
            batch_index += 1
        ber, halfwidth = ber_confidence(errors, bits)
        points.append(
            BerPoint(
                spread=float(spread),
                bit_errors=errors,
                bits_total=bits,
                ber=ber,
                ci95_halfwidth=halfwidth,
                words_failed=failed,
                words_total=words,
            )
        )
    return points


def emit_csv(
    points: list[BerPoint],
    scenario_id: str,
    path,
    meta: dict[str, object] | None = None,
) -> None:
    """Write one CSV row per point (ascending spread) plus a .meta sidecar."""
    if not points:
        raise ValueError("no points to emit")
    rows = sorted(points, key=lambda p: p.spread)
    lines = ["scenario,spread,bits,errors,ber,ci95,words_failed"]
    for p in rows:
        lines.append(
            f"{scenario_id},{p.spread:.6g},{p.bits_total},{p.bit_errors},"
            f"{p.ber:.10e},{p.ci95_halfwidth:.6e},{p.words_failed}"
        )
    path = str(path)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if meta is not None:
        meta_path = path[: path.rfind(".")] + ".meta" if "." in path else path + ".meta"
        with open(meta_path, "w") as fh:
            for key in sorted(meta):
                fh.write(f"{key}={meta[key]}\n")


def file_sha256(path) -> str:
    """Hash an artifact file for the run metadata sidecar."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()
