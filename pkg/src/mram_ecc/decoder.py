"""Flooding min-sum message passing over a Tanner graph.

Implements the regular reliability-based min-sum (RB-MS) decoder and its
trainable variant with one offset per edge and one normalization factor
per variable node, shared across iterations. With all offsets at zero
and all normalizers at one the engine reproduces regular RB-MS bit for
bit, which is the identity point every training run starts from.

Message conventions: a positive value favours bit 0; hard decisions are
bit 0 iff the a-posteriori value is >= 0 (ties decide 0 and are counted).
In integer mode the variable-node output is rounded to the nearest
integer, half away from zero; the relaxed mode used for training skips
the rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .code import CodeDefinition, TannerGraph

__all__ = [
    "DecoderWeights",
    "DecodeResult",
    "cn_update",
    "vn_update",
    "extrinsic",
    "soft_output",
    "decode",
    "decode_batch",
    "reference_rbms",
    "round_half_away",
]


def round_half_away(x: np.ndarray | float) -> np.ndarray | float:
    """Round to the nearest integer with halves away from zero."""
    return np.trunc(x + np.copysign(0.5, x))


@dataclass
class DecoderWeights:
    """Per-edge offsets and per-VN normalizers, shared across iterations."""

    beta: np.ndarray
    delta: np.ndarray
    shared_across_iterations: bool = True

    @classmethod
    def identity(cls, graph: TannerGraph) -> "DecoderWeights":
        """The RB-MS identity point: all offsets 0, all normalizers 1."""
        return cls(beta=np.zeros(graph.num_edges), delta=np.ones(graph.num_vn))

    def validate(self, graph: TannerGraph) -> None:
        if len(self.beta) != graph.num_edges:
            raise ValueError(
                f"beta length {len(self.beta)} != number of edges {graph.num_edges}"
            )
        if len(self.delta) != graph.num_vn:
            raise ValueError(
                f"delta length {len(self.delta)} != number of VNs {graph.num_vn}"
            )


@dataclass
class DecodeResult:
    """Outcome of decoding a single word."""

    hard_bits: np.ndarray
    soft_outputs_per_iteration: list[np.ndarray]
    iterations_run: int
    converged: bool
    zero_ties: int = 0


def cn_update(incoming: np.ndarray, beta_edge: float) -> float:
    """Check-node message to one excluded neighbour.

    ``incoming`` holds the messages from every other neighbour of the
    check node. The output is the product of their signs (sign(0) taken
    as +1) times max(0, min |incoming| - beta); the clamp keeps the
    offset subtraction from flipping the message sign.
    """
    incoming = np.asarray(incoming, dtype=np.float64)
    if incoming.size == 0:
        raise ValueError("degree-1 check node has no extrinsic input")
    signs = np.where(incoming < 0, -1.0, 1.0)
    magnitude = max(float(np.min(np.abs(incoming))) - float(beta_edge), 0.0)
    return float(np.prod(signs) * magnitude)


def vn_update(
    channel_llr: float,
    incoming: np.ndarray,
    delta_k: float,
    integer_mode: bool = True,
) -> float:
    """Variable-node a-posteriori value: llr + delta * sum(incoming)."""
    total = float(channel_llr) + float(delta_k) * float(np.sum(incoming))
    if integer_mode:
        return float(round_half_away(total))
    return total


def extrinsic(xi_prev: float, cn_msg_prev: float) -> float:
    """VN-to-CN message: previous a-posteriori minus the previous CN message."""
    return xi_prev - cn_msg_prev


def soft_output(xi: float | np.ndarray) -> float | np.ndarray:
    """Logistic soft value 1/(1+exp(-xi)); prob(bit=1) is its complement."""
    return expit(xi)


def _cn_pass(
    m: np.ndarray, beta: np.ndarray, cn_ptr: np.ndarray, out: np.ndarray
) -> np.ndarray:
    """Batched check-node update using the min1/min2 exclusion trick."""
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
    return out


def decode_batch(
    graph: TannerGraph,
    weights: DecoderWeights,
    channel_llrs: np.ndarray,
    max_iters: int = 5,
    integer_mode: bool = True,
    early_stop: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode a (batch, n) array of channel LLRs.

    Returns (hard_bits, converged, iterations_run). Converged means the
    final hard decisions satisfy every parity check; with early stopping
    a word freezes at the first iteration where that happens.
    """
    lam = np.atleast_2d(np.asarray(channel_llrs, dtype=np.float64))
    if lam.shape[1] != graph.num_vn:
        raise ValueError(f"LLR length {lam.shape[1]} != number of VNs {graph.num_vn}")
    weights.validate(graph)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    batch = lam.shape[0]
    eps = np.zeros((batch, graph.num_edges))
    xi = lam.copy()
    raw = lam.copy()
    done = np.zeros(batch, dtype=bool)
    iters = np.full(batch, max_iters, dtype=np.int64)
    eps_new = np.empty_like(eps)
    parity_t = graph.parity.T.astype(np.int64)

    for t in range(1, max_iters + 1):
        m = xi[:, graph.edge_vn] - eps
        _cn_pass(m, weights.beta, graph.cn_ptr, eps_new)
        # Hard decisions come from the sign of the VN output before the
        # integer rounding: rounding is sign-symmetric, but a rounded tie
        # at 0 would always decide bit 0, which is not codeword-symmetric.
        raw_new = lam + weights.delta[None, :] * (eps_new @ graph.vn_sum)
        xi_new = round_half_away(raw_new) if integer_mode else raw_new
        if early_stop and done.any():
            frozen = done
            eps_new[frozen] = eps[frozen]
            xi_new[frozen] = xi[frozen]
            raw_new[frozen] = raw[frozen]
        eps, eps_new = eps_new, eps
        xi = xi_new
        raw = raw_new

        hard = raw < 0
        ok = ((hard.astype(np.int64) @ parity_t) % 2 == 0).all(axis=1)
        newly = ok & ~done
        iters[newly] = t
        if early_stop:
            done |= ok
            if done.all():
                break

    hard_bits = (raw < 0).astype(np.uint8)
    converged = ((hard_bits.astype(np.int64) @ parity_t) % 2 == 0).all(axis=1)
    iters = np.where(converged, iters, max_iters)
    return hard_bits, converged, iters


def decode(
    graph: TannerGraph,
    weights: DecoderWeights,
    channel_llrs: np.ndarray,
    max_iters: int = 5,
    integer_mode: bool = True,
    early_stop: bool = True,
) -> DecodeResult:
    """Decode a single word, recording the soft output of every iteration."""
    lam = np.asarray(channel_llrs, dtype=np.float64)
    if lam.ndim != 1 or lam.shape[0] != graph.num_vn:
        raise ValueError(f"expected a length-{graph.num_vn} LLR vector")
    weights.validate(graph)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    eps = np.zeros((1, graph.num_edges))
    xi = lam[None, :].copy()
    raw = lam[None, :].copy()
    eps_new = np.empty_like(eps)
    parity_t = graph.parity.T.astype(np.int64)
    soft: list[np.ndarray] = []
    converged = False
    iterations = max_iters

    for t in range(1, max_iters + 1):
        m = xi[:, graph.edge_vn] - eps
        _cn_pass(m, weights.beta, graph.cn_ptr, eps_new)
        raw = lam[None, :] + weights.delta[None, :] * (eps_new @ graph.vn_sum)
        xi = round_half_away(raw) if integer_mode else raw
        eps, eps_new = eps_new, eps
        soft.append(expit(raw[0]).copy())
        hard = raw[0] < 0
        if ((hard.astype(np.int64) @ parity_t) % 2 == 0).all():
            converged = True
            iterations = t
            if early_stop:
                break

    hard_bits = (raw[0] < 0).astype(np.uint8)
    if not early_stop:
        converged = bool(((hard_bits.astype(np.int64) @ parity_t) % 2 == 0).all())
        iterations = max_iters
    return DecodeResult(
        hard_bits=hard_bits,
        soft_outputs_per_iteration=soft,
        iterations_run=iterations,
        converged=converged,
        zero_ties=int(np.count_nonzero(raw[0] == 0)),
    )


def reference_rbms(
    code: CodeDefinition,
    channel_llrs: np.ndarray,
    iterations: int = 5,
    chunk: int = 2048,
) -> np.ndarray:
    """Plainly written regular RB-MS used as the oracle for the fast engine.

    Works directly on dense H with per-row masked reductions instead of
    the edge-list min1/min2 machinery, runs a fixed number of flooding
    iterations, rounds the a-posteriori to the nearest integer (half away
    from zero) and takes hard decisions at the end.
    """
    h = code.parity_check.astype(bool)
    m, n = h.shape
    lam_all = np.atleast_2d(np.asarray(channel_llrs, dtype=np.float64))
    row_idx = [np.flatnonzero(h[c]) for c in range(m)]
    outputs = []
    for start in range(0, lam_all.shape[0], chunk):
        lam = lam_all[start : start + chunk]
        b = lam.shape[0]
        c2v = np.zeros((b, m, n))
        xi = lam.copy()
        for _ in range(iterations):
            v2c = np.where(h[None, :, :], xi[:, None, :] - c2v, 0.0)
            for c in range(m):
                idx = row_idx[c]
                vals = v2c[:, c, idx]
                mags = np.abs(vals)
                sgns = np.where(vals < 0.0, -1.0, 1.0)
                off = ~np.eye(len(idx), dtype=bool)
                excl_min = np.where(off[None, :, :], mags[:, None, :], np.inf).min(axis=2)
                excl_sgn = np.where(off[None, :, :], sgns[:, None, :], 1.0).prod(axis=2)
                c2v[:, c, idx] = excl_sgn * excl_min
            total = (c2v * h[None, :, :]).sum(axis=1)
            raw = lam + total
            xi = np.sign(raw) * np.floor(np.abs(raw) + 0.5)
        outputs.append((xi < 0).astype(np.uint8))
    result = np.concatenate(outputs, axis=0)
    if np.asarray(channel_llrs).ndim == 1:
        return result[0]
    return result
