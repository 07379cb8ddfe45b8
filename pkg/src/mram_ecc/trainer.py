"""Training of the decoder offsets and normalizers on the symmetrized channel.

The unrolled message-passing graph is differentiated by hand: the forward
pass mirrors the relaxed (unrounded) decoder, the backward pass propagates
exact subgradients through the min / sign / ReLU check-node update and the
linear variable-node update, accumulating shared-weight gradients across
iterations. Updates use Adam. Because the channel adapter symmetrizes the
channel, all training words are scrambled all-zero codewords.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .code import TannerGraph
from .decoder import DecoderWeights, decode_batch
from .streams import stream

__all__ = [
    "TrainConfig",
    "TrainReport",
    "ForwardTape",
    "TrainingFailure",
    "WeightFormatError",
    "Adam",
    "adam_step",
    "make_training_batch",
    "forward_relaxed",
    "backward",
    "train",
    "save_weights",
    "load_weights",
]

LOSS_FINAL = "final_cross_entropy"
LOSS_MULTI = "multiloss"

WEIGHTS_MAGIC = "NNORBMS-WEIGHTS v1"


class TrainingFailure(RuntimeError):
    """Raised when a training run diverges or fails to converge."""


class WeightFormatError(ValueError):
    """Raised when a weight file does not match the expected format."""


@dataclass
class TrainConfig:
    """Hyper-parameters and data-generation settings for one training run."""

    learning_rate: float = 0.01
    minibatches: int = 10000
    batch_size: int = 100
    iterations_unrolled: int = 5
    loss_kind: str = LOSS_MULTI
    spread_train: float = 0.10
    spread_jitter: float = 0.05  # relative half-width of the per-word jitter band
    offset_params: tuple[float, float] | None = None  # (offset mean, sigma_b / mu1)
    mu0: float = 1.0
    mu1: float = 2.0
    codeword_length: int = 71
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    validation_words: int = 2000

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.iterations_unrolled < 1:
            raise ValueError("iterations_unrolled must be >= 1")
        if self.loss_kind not in (LOSS_FINAL, LOSS_MULTI):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")


@dataclass
class TrainReport:
    """Per-run record: loss trace, final weights, held-out BER, wall time."""

    loss_trace: np.ndarray
    final_weights: DecoderWeights
    validation_ber: float
    wall_time: float


@dataclass
class ForwardTape:
    """Intermediate values of one relaxed forward pass, kept for backward."""

    graph: TannerGraph
    beta: np.ndarray
    delta: np.ndarray
    lam: np.ndarray
    targets: np.ndarray
    loss_kind: str
    iterations: int
    m_hist: list[np.ndarray] = field(default_factory=list)
    eps_hist: list[np.ndarray] = field(default_factory=list)
    xi_hist: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Adam with bias correction over a dict of named parameter arrays."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], learning_rate: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, g in grads.items():
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            m_hat = self.m[key] / (1 - b1**self.t)
            v_hat = self.v[key] / (1 - b2**self.t)
            self.params[key] -= learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


def adam_step(state: Adam, gradients: dict[str, np.ndarray], learning_rate: float) -> Adam:
    """One Adam update; parameters referenced by ``state`` are updated in place."""
    state.step(gradients, learning_rate)
    return state


def make_training_batch(
    config: TrainConfig, quantizer, batch_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Generate one minibatch of adapter-output LLRs with all-zero targets.

    Each word is a scrambled all-zero codeword read through the channel at
    spread_train with a per-word relative jitter, quantized to integer LLR
    indices and sign-adjusted back. ``quantizer`` is anything exposing
    ``quantize(values) -> integer array``.
    """
    rng = stream(config.seed, "train-batch", batch_index)
    b, n = config.batch_size, config.codeword_length
    jitter = rng.uniform(1.0 - config.spread_jitter, 1.0 + config.spread_jitter, size=(b, 1))
    spreads = config.spread_train * jitter
    mask = rng.integers(0, 2, size=(b, n), dtype=np.uint8)  # transmitted bits
    noise = rng.standard_normal((b, n))
    ones = mask == 1
    y = np.where(
        ones,
        config.mu1 + spreads * config.mu1 * noise,
        config.mu0 + spreads * config.mu0 * noise,
    )
    if config.offset_params is not None:
        mu_b, sb_ratio = config.offset_params
        if mu_b != 0.0 or sb_ratio != 0.0:
            offsets = mu_b + sb_ratio * config.mu1 * rng.standard_normal((b, n))
            y = np.where(ones, y + offsets, y)
    u = quantizer.quantize(y)
    v = u * (1 - 2 * mask.astype(np.int64))
    return v.astype(np.float64), np.zeros((b, n))


def _bce(xi: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-element cross entropy between prob(bit=1) = sigmoid(-xi) and targets."""
    return targets * np.logaddexp(0.0, xi) + (1.0 - targets) * np.logaddexp(0.0, -xi)


def forward_relaxed(
    graph: TannerGraph,
    weights: DecoderWeights,
    llr_batch: np.ndarray,
    iterations: int,
    loss_kind: str,
    targets: np.ndarray,
) -> tuple[float, ForwardTape]:
    """Relaxed (unrounded) unrolled forward pass with cross-entropy loss.

    ``multiloss`` averages the per-iteration losses; ``final_cross_entropy``
    keeps only the last iteration. Raises on a non-finite loss.
    """
    weights.validate(graph)
    lam = np.atleast_2d(np.asarray(llr_batch, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if lam.shape != targets.shape or lam.shape[1] != graph.num_vn:
        raise ValueError("LLR batch and targets must both be (batch, num_vn)")
    if loss_kind not in (LOSS_FINAL, LOSS_MULTI):
        raise ValueError(f"unknown loss_kind {loss_kind!r}")

    tape = ForwardTape(
        graph=graph,
        beta=weights.beta.copy(),
        delta=weights.delta.copy(),
        lam=lam,
        targets=targets,
        loss_kind=loss_kind,
        iterations=iterations,
    )
    batch = lam.shape[0]
    eps = np.zeros((batch, graph.num_edges))
    xi = lam.copy()
    total = 0.0
    for t in range(1, iterations + 1):
        m = xi[:, graph.edge_vn] - eps
        eps = np.empty_like(eps)
        _cn_forward(m, tape.beta, graph.cn_ptr, eps)
        xi = lam + tape.delta[None, :] * (eps @ graph.vn_sum)
        tape.m_hist.append(m)
        tape.eps_hist.append(eps)
        tape.xi_hist.append(xi)
        if loss_kind == LOSS_MULTI or t == iterations:
            total += float(np.mean(_bce(xi, targets)))
    loss = total / iterations if loss_kind == LOSS_MULTI else total
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss")
    return loss, tape


def _cn_forward(
    m: np.ndarray, beta: np.ndarray, cn_ptr: np.ndarray, out: np.ndarray
) -> None:
    """Check-node update identical to the decoder's, relaxed (no rounding)."""
    rows = np.arange(m.shape[0])
    for c in range(len(cn_ptr) - 1):
        lo, hi = int(cn_ptr[c]), int(cn_ptr[c + 1])
        seg = m[:, lo:hi]
        mag = np.abs(seg)
        sgn = np.where(seg < 0, -1.0, 1.0)
        total = sgn.prod(axis=1, keepdims=True)
        first = mag.argmin(axis=1)
        m1 = mag[rows, first]
        tmp = mag.copy()
        tmp[rows, first] = np.inf
        m2 = tmp.min(axis=1)
        excl = np.where(
            np.arange(hi - lo)[None, :] == first[:, None], m2[:, None], m1[:, None]
        )
        out[:, lo:hi] = (total * sgn) * np.maximum(excl - beta[None, lo:hi], 0.0)


def backward(tape: ForwardTape) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the relaxed forward pass w.r.t. beta and delta.

    Subgradient choices: the excluded min routes its gradient to the
    arg-min message, splitting equally on exact ties; the sign product is
    treated as constant; ReLU has subgradient 0 at the kink; |.| has
    subgradient 0 at 0. Shared weights accumulate over iterations.
    """
    graph = tape.graph
    lam, targets = tape.lam, tape.targets
    batch, n = lam.shape
    n_iters = tape.iterations
    w_multi = 1.0 / n_iters if tape.loss_kind == LOSS_MULTI else 1.0
    scale = 1.0 / (batch * n)

    g_beta = np.zeros_like(tape.beta)
    g_delta = np.zeros_like(tape.delta)
    g_xi_carry = np.zeros((batch, n))
    g_eps_carry = np.zeros((batch, graph.num_edges))

    for t in range(n_iters, 0, -1):
        xi = tape.xi_hist[t - 1]
        eps = tape.eps_hist[t - 1]
        m = tape.m_hist[t - 1]

        g_xi = g_xi_carry
        if tape.loss_kind == LOSS_MULTI or t == n_iters:
            dloss = (targets * expit(xi) - (1.0 - targets) * expit(-xi)) * (w_multi * scale)
            g_xi = g_xi + dloss

        totals = eps @ graph.vn_sum
        g_delta += (g_xi * totals).sum(axis=0)
        g_eps = g_xi[:, graph.edge_vn] * tape.delta[None, graph.edge_vn] + g_eps_carry

        g_m = np.zeros_like(m)
        for c in range(graph.num_cn):
            lo, hi = int(graph.cn_ptr[c]), int(graph.cn_ptr[c + 1])
            seg = m[:, lo:hi]
            mag = np.abs(seg)
            sgn = np.where(seg < 0, -1.0, 1.0)
            total = sgn.prod(axis=1, keepdims=True)
            s_excl = total * sgn
            deg = hi - lo
            rows = np.arange(batch)
            first = mag.argmin(axis=1)
            m1 = mag[rows, first]
            tmp = mag.copy()
            tmp[rows, first] = np.inf
            m2 = tmp.min(axis=1)
            excl = np.where(np.arange(deg)[None, :] == first[:, None], m2[:, None], m1[:, None])
            active = (excl - tape.beta[None, lo:hi]) > 0.0

            g_relu = g_eps[:, lo:hi] * s_excl
            g_beta[lo:hi] += -(g_relu * active).sum(axis=0)
            g_min = g_relu * active

            # Route the excluded-min gradient to the messages that attain it.
            offdiag = ~np.eye(deg, dtype=bool)
            attain = (mag[:, None, :] == excl[:, :, None]) & offdiag[None, :, :]
            counts = attain.sum(axis=2)
            g_mag = np.einsum("bi,bij->bj", g_min / counts, attain)
            g_m[:, lo:hi] = g_mag * np.sign(seg)

        g_xi_carry = g_m @ graph.vn_sum
        g_eps_carry = -g_m

    return g_beta, g_delta


def train(config: TrainConfig, graph: TannerGraph, quantizer) -> TrainReport:
    """Run the full training loop from the RB-MS identity point.

    The held-out validation BER is measured with the integer-mode decoder
    on scrambled all-zero words drawn from a dedicated stream; at the
    identity initialization it equals the regular RB-MS BER by definition.
    """
    start = time.perf_counter()
    weights = DecoderWeights.identity(graph)
    opt = Adam(
        {"beta": weights.beta, "delta": weights.delta},
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        epsilon=config.adam_epsilon,
    )

    losses: list[float] = []
    initial_loss = None
    high_loss_run = 0
    for b in range(config.minibatches):
        llr, tgt = make_training_batch(config, quantizer, b)
        try:
            loss, tape = forward_relaxed(
                graph, weights, llr, config.iterations_unrolled, config.loss_kind, tgt
            )
        except FloatingPointError as exc:
            raise TrainingFailure(f"non-finite loss at minibatch {b}") from exc
        losses.append(loss)
        if initial_loss is None:
            initial_loss = loss
        if loss > 10.0 * initial_loss:
            high_loss_run += 1
            if high_loss_run >= 100:
                raise TrainingFailure(
                    f"loss exceeded 10x the initial value for 100 consecutive "
                    f"minibatches (at minibatch {b})"
                )
        else:
            high_loss_run = 0
        g_beta, g_delta = backward(tape)
        opt.step({"beta": g_beta, "delta": g_delta}, config.learning_rate)
        # Projection: keep offsets and normalizers non-negative. A negative
        # offset re-inflates zero-magnitude messages whose sign convention
        # (sign(0) = +1) is not codeword-symmetric, which all-zero training
        # would otherwise exploit; the trained decoder must stay exactly
        # sign-symmetric so the all-zero error rate transfers to all words.
        np.maximum(weights.beta, 0.0, out=weights.beta)
        np.maximum(weights.delta, 0.0, out=weights.delta)

    validation_ber = _validation_ber(config, graph, quantizer, weights)
    return TrainReport(
        loss_trace=np.asarray(losses),
        final_weights=weights,
        validation_ber=validation_ber,
        wall_time=time.perf_counter() - start,
    )


def _validation_ber(
    config: TrainConfig, graph: TannerGraph, quantizer, weights: DecoderWeights
) -> float:
    rng = stream(config.seed, "train-validation")
    words = config.validation_words
    if words == 0:
        return float("nan")
    n = config.codeword_length
    mask = rng.integers(0, 2, size=(words, n), dtype=np.uint8)
    noise = rng.standard_normal((words, n))
    ones = mask == 1
    y = np.where(
        ones,
        config.mu1 + config.spread_train * config.mu1 * noise,
        config.mu0 + config.spread_train * config.mu0 * noise,
    )
    if config.offset_params is not None:
        mu_b, sb_ratio = config.offset_params
        if mu_b != 0.0 or sb_ratio != 0.0:
            offsets = mu_b + sb_ratio * config.mu1 * rng.standard_normal((words, n))
            y = np.where(ones, y + offsets, y)
    v = quantizer.quantize(y) * (1 - 2 * mask.astype(np.int64))
    hard, _, _ = decode_batch(
        graph, weights, v.astype(np.float64), config.iterations_unrolled,
        integer_mode=True, early_stop=True,
    )
    return float(hard.sum() / hard.size)


def save_weights(weights: DecoderWeights, path, graph: TannerGraph) -> None:
    """Write weights in the versioned text format, canonical edge order."""
    weights.validate(graph)
    lines = [WEIGHTS_MAGIC]
    lines.append(
        f"code=hamming_71_64 edges={graph.num_edges} vns={graph.num_vn} iters_shared=true"
    )
    for e in range(graph.num_edges):
        lines.append(
            f"beta {int(graph.edge_cn[e])} {int(graph.edge_vn[e])} {weights.beta[e]:.17g}"
        )
    for v in range(graph.num_vn):
        lines.append(f"delta {v} {weights.delta[v]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(path, graph: TannerGraph | None = None) -> DecoderWeights:
    """Read a weight file; validates counts and, if given, the edge order."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != WEIGHTS_MAGIC:
        raise WeightFormatError(f"missing magic line {WEIGHTS_MAGIC!r}")
    header = dict(item.split("=", 1) for item in lines[1].split())
    try:
        n_edges = int(header["edges"])
        n_vns = int(header["vns"])
    except (KeyError, ValueError) as exc:
        raise WeightFormatError("malformed header line") from exc
    body = [ln for ln in lines[2:] if ln.strip()]
    if len(body) != n_edges + n_vns:
        raise WeightFormatError(
            f"expected {n_edges} beta + {n_vns} delta lines, found {len(body)}"
        )
    beta = np.zeros(n_edges)
    delta = np.zeros(n_vns)
    edges = np.zeros((n_edges, 2), dtype=np.int64)
    for i, ln in enumerate(body[:n_edges]):
        parts = ln.split()
        if len(parts) != 4 or parts[0] != "beta":
            raise WeightFormatError(f"bad beta line {i}: {ln!r}")
        edges[i] = (int(parts[1]), int(parts[2]))
        beta[i] = float(parts[3])
    for i, ln in enumerate(body[n_edges:]):
        parts = ln.split()
        if len(parts) != 3 or parts[0] != "delta" or int(parts[1]) != i:
            raise WeightFormatError(f"bad delta line {i}: {ln!r}")
        delta[i] = float(parts[2])
    if graph is not None:
        if n_edges != graph.num_edges or n_vns != graph.num_vn:
            raise WeightFormatError("weight dimensions do not match the graph")
        if not np.array_equal(edges, graph.edges):
            raise WeightFormatError("edge list does not match the canonical order")
    return DecoderWeights(beta=beta, delta=delta)
