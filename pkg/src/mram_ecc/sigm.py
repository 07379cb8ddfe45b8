"""Soft-information generation without channel knowledge.

Pipeline: a small trainable detector produces per-cell soft estimates
from raw readbacks; the hard detection threshold that best mimics the
detector is found by grid search; a uniform quantizer centered on that
threshold turns readbacks into integer LLR indices, with its two outer
boundary offsets tuned by pilot decoding runs.

The detector baseline is a per-cell feed-forward net whose inputs are the
cell readback plus block statistics (mean, standard deviation, median);
the block statistics give this memoryless detector the adaptation
capacity that a sequence detector would get from context. Anything with
the same ``detect`` signature can be plugged in instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .channel import ChannelParams, ReadBlock, sample_read_batch
from .streams import stream
from .trainer import Adam, TrainingFailure

__all__ = [
    "DetectorModel",
    "QuantizerSpec",
    "train_detector",
    "detect",
    "hard_detect",
    "search_threshold",
    "build_quantizer",
    "quantize",
    "search_theta",
    "save_detector",
    "load_detector",
    "save_quantizer",
    "load_quantizer",
]

FEATURE_SPEC = "read,block_mean,block_std,block_median"
QUANT_MAGIC = "SIGM-QUANT v1"
DETECTOR_MAGIC = "SIGM-DETECTOR v1"

_LAYER_SIZES = (4, 16, 16, 1)


@dataclass
class DetectorModel:
    """Feed-forward per-cell detector with feature standardization."""

    weights: np.ndarray  # flat parameter vector
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    layer_sizes: tuple[int, ...] = _LAYER_SIZES
    feature_spec: str = FEATURE_SPEC
    activation: str = "relu_hidden,sigmoid_output"
    held_out_accuracy: float = float("nan")

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.weights[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            b = self.weights[pos : pos + fan_out]
            pos += fan_out
            layers.append((w, b))
        return layers


def _param_count(sizes: tuple[int, ...]) -> int:
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


def _block_features(values: np.ndarray) -> np.ndarray:
    """Per-cell features: (read, block mean, block std, block median)."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    stats = np.stack(
        [
            values.mean(axis=-1),
            values.std(axis=-1),
            np.median(values, axis=-1),
        ],
        axis=-1,
    )
    feats = np.concatenate(
        [values[..., None], np.broadcast_to(stats[..., None, :], values.shape + (3,))],
        axis=-1,
    )
    return feats.reshape(-1, 4)


def _mlp_forward(layers, x: np.ndarray, keep: bool = False):
    h = x
    hidden = [h]
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        hidden.append(h)
    w, b = layers[-1]
    z = (h @ w + b)[:, 0]
    if keep:
        return expit(z), hidden
    return expit(z)


def train_detector(
    channel_mix: list[ChannelParams],
    samples_per_condition: int,
    seed: int,
    block_length: int = 256,
    epochs: int = 60,
    minibatch: int = 512,
    learning_rate: float = 3e-3,
    boundary_band: tuple[float, float] = (1.05, 1.75),
    boundary_repeat: int = 4,
) -> DetectorModel:
    """Train the detector on labeled reads from a mixture of conditions.

    ``samples_per_condition`` counts cells, drawn as blocks of
    ``block_length`` with equiprobable stored bits. Cells whose readback
    falls inside ``boundary_band`` are oversampled ``boundary_repeat``
    times: selecting on the readback leaves p(bit | features) unchanged
    while concentrating the loss where threshold calibration matters, so
    the 0.5-crossing stays put even at conditions whose states barely
    overlap. 10% of the cells are held out; training fails if the
    held-out accuracy does not beat the majority-class rate.
    """
    if not channel_mix:
        raise ValueError("channel_mix must contain at least one condition")
    if samples_per_condition < 1000:
        raise ValueError("need at least 1000 samples per condition")

    feats = []
    labels = []
    for i, params in enumerate(channel_mix):
        rng = stream(seed, "detector-data", i)
        n_blocks = -(-samples_per_condition // block_length)
        bits = rng.integers(0, 2, size=(n_blocks, block_length), dtype=np.uint8)
        y = sample_read_batch(params, bits, rng)
        f = _block_features(y)
        lab = bits.reshape(-1)
        feats.append(f)
        labels.append(lab)
        if boundary_repeat > 1:
            in_band = (f[:, 0] >= boundary_band[0]) & (f[:, 0] <= boundary_band[1])
            for _ in range(boundary_repeat - 1):
                feats.append(f[in_band])
                labels.append(lab[in_band])
    x = np.concatenate(feats, axis=0)
    t = np.concatenate(labels, axis=0).astype(np.float64)

    rng = stream(seed, "detector-train")
    order = rng.permutation(len(x))
    x, t = x[order], t[order]
    n_held = max(1, len(x) // 10)
    x_held, t_held = x[:n_held], t[:n_held]
    x_train, t_train = x[n_held:], t[n_held:]

    mean = x_train.mean(axis=0)
    scale = x_train.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x_train - mean) / scale

    sizes = _LAYER_SIZES
    flat = np.zeros(_param_count(sizes))
    pos = 0
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        w[:] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))

    params = {f"w{i}": w for i, (w, _) in enumerate(layers)}
    params.update({f"b{i}": b for i, (_, b) in enumerate(layers)})
    opt = Adam(params)
    for epoch in range(epochs):
        perm = rng.permutation(len(xs))
        for start in range(0, len(xs), minibatch):
            idx = perm[start : start + minibatch]
            xb, tb = xs[idx], t_train[idx]
            grads = _mlp_backward(layers, xb, tb)
            opt.step(grads, learning_rate)

    model = DetectorModel(
        weights=flat,
        feature_mean=mean,
        feature_scale=scale,
        layer_sizes=sizes,
    )
    held_soft = _apply(model, x_held)
    accuracy = float(np.mean((held_soft > 0.5) == (t_held > 0.5)))
    majority = float(max(t_held.mean(), 1.0 - t_held.mean()))
    if accuracy <= majority:
        raise TrainingFailure(
            f"detector held-out accuracy {accuracy:.4f} does not beat the "
            f"majority rate {majority:.4f}"
        )
    model.held_out_accuracy = accuracy
    return model


def _mlp_backward(layers, xb: np.ndarray, tb: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean binary cross entropy for one minibatch."""
    h = xb
    acts = [h]
    pres = []
    for w, b in layers[:-1]:
        z = h @ w + b
        pres.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w_out, b_out = layers[-1]
    z_out = (h @ w_out + b_out)[:, 0]
    p = expit(z_out)

    grads: dict[str, np.ndarray] = {}
    dz = ((p - tb) / len(xb))[:, None]
    grads[f"w{len(layers) - 1}"] = acts[-1].T @ dz
    grads[f"b{len(layers) - 1}"] = dz.sum(axis=0)
    dh = dz @ w_out.T
    for i in range(len(layers) - 2, -1, -1):
        dz = dh * (pres[i] > 0.0)
        grads[f"w{i}"] = acts[i].T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ layers[i][0].T
    return grads


def _apply(model: DetectorModel, features: np.ndarray) -> np.ndarray:
    xs = (features - model.feature_mean) / model.feature_scale
    return _mlp_forward(model.unpack(), xs)


def detect(model: DetectorModel, block: ReadBlock | np.ndarray) -> np.ndarray:
    """Per-cell soft estimates in (0,1) of the stored bits of one block."""
    values = block.values if isinstance(block, ReadBlock) else np.asarray(block)
    return _apply(model, _block_features(values)).reshape(values.shape)


def hard_detect(model: DetectorModel, block: ReadBlock | np.ndarray) -> np.ndarray:
    """Hard detector decisions: 1 where the soft estimate exceeds 0.5."""
    return (detect(model, block) > 0.5).astype(np.uint8)


def search_threshold(
    model: DetectorModel,
    blocks: list[ReadBlock],
    grid_lo: float,
    grid_hi: float,
    grid_step: float = 0.005,
) -> float:
    """Grid point minimizing the Hamming distance to the detector decisions.

    Threshold decisions are 1 iff y > R_t; ties between grid points break
    toward the smallest R_t. Invariant to the order of the input cells.
    """
    if not grid_lo < grid_hi:
        raise ValueError("grid_lo must be below grid_hi")
    npts = int(np.floor((grid_hi - grid_lo) / grid_step)) + 1
    if npts < 1:
        raise ValueError("empty threshold grid")
    grid = grid_lo + grid_step * np.arange(npts)

    ys = np.concatenate([np.asarray(b.values) for b in blocks])
    if ys.size < 1000:
        raise ValueError("need at least 1000 cells for the threshold search")
    xbar = np.concatenate([hard_detect(model, b) for b in blocks])

    order = np.argsort(ys, kind="stable")
    ys_sorted = ys[order]
    xbar_sorted = xbar[order]
    # Cells with y <= R_t decide 0, the rest decide 1. Prefix sums give the
    # Hamming distance to the detector decisions for every grid point at once.
    ones_prefix = np.concatenate([[0], np.cumsum(xbar_sorted)])
    total_zeros = int((xbar == 0).sum())
    split = np.searchsorted(ys_sorted, grid, side="right")
    # mismatches = detector-ones below the split + detector-zeros above it
    dist = ones_prefix[split] + (total_zeros - (split - ones_prefix[split]))
    return float(grid[int(np.argmin(dist))])


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform 2^q-level quantizer emitting integer LLR indices.

    Outer boundaries sit at r_t - theta1 and r_t + theta2; the interior is
    split into 2^q - 2 equal intervals. Intervals are half-open [t_s,
    t_{s+1}). The default index assignment gives the lowest-resistance
    interval the largest positive LLR; ``paper_literal`` instead numbers
    the intervals s - q in order of increasing resistance.
    """

    q: int
    r_t: float
    theta1: float
    theta2: float
    boundaries: np.ndarray  # length 2^q + 1 including the infinities
    indices: np.ndarray  # length 2^q, strictly monotone integers
    paper_literal: bool = False

    @property
    def max_index(self) -> int:
        return int(self.indices.max())

    @property
    def min_index(self) -> int:
        return int(self.indices.min())

    def quantize(self, values: np.ndarray) -> np.ndarray:
        return quantize(self, values)


def build_quantizer(
    r_t: float, theta1: float, theta2: float, q: int, paper_literal_indices: bool = False
) -> QuantizerSpec:
    """Build the uniform quantizer around an adjusted threshold."""
    if theta1 <= 0 or theta2 <= 0:
        raise ValueError("theta1 and theta2 must be positive")
    if q < 2:
        raise ValueError("q must be >= 2")
    levels = 2**q
    inner = np.linspace(r_t - theta1, r_t + theta2, levels - 1)
    boundaries = np.concatenate([[-np.inf], inner, [np.inf]])
    s = np.arange(levels)
    indices = (s - q) if paper_literal_indices else (levels - 1 - s) - q
    return QuantizerSpec(
        q=q,
        r_t=float(r_t),
        theta1=float(theta1),
        theta2=float(theta2),
        boundaries=boundaries,
        indices=indices.astype(np.int64),
        paper_literal=paper_literal_indices,
    )


def quantize(spec: QuantizerSpec, block: ReadBlock | np.ndarray) -> np.ndarray:
    """Integer LLR index of the half-open interval each readback falls in."""
    values = block.values if isinstance(block, ReadBlock) else np.asarray(block)
    s = np.searchsorted(spec.boundaries[1:-1], values, side="right")
    return spec.indices[s]


def search_theta(
    r_t: float,
    pilot_params: ChannelParams,
    decoder_handle,
    grid: list[tuple[float, float]],
    words_per_cell: int,
    seed: int,
    q: int = 3,
    word_length: int = 71,
) -> tuple[float, float, list[tuple[float, float, float]]]:
    """Tune the quantizer boundary offsets by pilot decoding runs.

    One seeded pilot set of scrambled all-zero words is read through the
    channel once; every (theta1, theta2) grid cell quantizes the same
    reads and decodes them with ``decoder_handle`` (any callable mapping an
    integer-LLR batch to hard bits). Returns the BER-minimizing pair, ties
    broken toward smaller theta1 + theta2, then smaller theta1, plus the
    full pilot BER table.
    """
    if not grid:
        raise ValueError("theta grid must be nonempty")
    if words_per_cell < 1:
        raise RuntimeError("pilot produced zero decoded words")

    rng = stream(seed, "theta-pilot")
    mask = rng.integers(0, 2, size=(words_per_cell, word_length), dtype=np.uint8)
    y = sample_read_batch(pilot_params, mask, rng)

    table: list[tuple[float, float, float]] = []
    best = None
    for theta1, theta2 in grid:
        spec = build_quantizer(r_t, theta1, theta2, q)
        v = spec.quantize(y) * (1 - 2 * mask.astype(np.int64))
        hard = decoder_handle(v.astype(np.float64))
        ber = float(np.sum(hard != 0) / hard.size)
        table.append((float(theta1), float(theta2), ber))
        key = (ber, theta1 + theta2, theta1)
        if best is None or key < best[0]:
            best = (key, float(theta1), float(theta2))
    return best[1], best[2], table


def save_quantizer(spec: QuantizerSpec, path) -> None:
    """Versioned text record of the quantizer, one line per interval."""
    lines = [QUANT_MAGIC]
    lines.append(
        f"q={spec.q} rt={spec.r_t:.17g} theta1={spec.theta1:.17g} theta2={spec.theta2:.17g}"
    )
    for s in range(2**spec.q):
        lo = "-inf" if s == 0 else f"{spec.boundaries[s]:.17g}"
        hi = "+inf" if s == 2**spec.q - 1 else f"{spec.boundaries[s + 1]:.17g}"
        lines.append(f"interval {s} {lo} {hi} {int(spec.indices[s])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_quantizer(path) -> QuantizerSpec:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != QUANT_MAGIC:
        raise ValueError(f"missing magic line {QUANT_MAGIC!r}")
    header = dict(item.split("=", 1) for item in lines[1].split())
    q = int(header["q"])
    r_t = float(header["rt"])
    theta1 = float(header["theta1"])
    theta2 = float(header["theta2"])
    levels = 2**q
    body = lines[2:]
    if len(body) != levels:
        raise ValueError(f"expected {levels} interval lines, found {len(body)}")
    indices = np.zeros(levels, dtype=np.int64)
    for ln in body:
        parts = ln.split()
        if len(parts) != 5 or parts[0] != "interval":
            raise ValueError(f"bad interval line: {ln!r}")
        indices[int(parts[1])] = int(parts[4])
    literal = bool(indices[0] == -q)
    spec = build_quantizer(r_t, theta1, theta2, q, paper_literal_indices=literal)
    if not np.array_equal(spec.indices, indices):
        raise ValueError("interval indices do not match either known orientation")
    return spec


def save_detector(model: DetectorModel, path) -> None:
    lines = [DETECTOR_MAGIC]
    lines.append(f"features={model.feature_spec}")
    lines.append("layers=" + ",".join(str(s) for s in model.layer_sizes))
    lines.append(f"accuracy={model.held_out_accuracy:.17g}")
    lines.append("mean " + " ".join(f"{v:.17g}" for v in model.feature_mean))
    lines.append("scale " + " ".join(f"{v:.17g}" for v in model.feature_scale))
    for v in model.weights:
        lines.append(f"{v:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_detector(path) -> DetectorModel:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != DETECTOR_MAGIC:
        raise ValueError(f"missing magic line {DETECTOR_MAGIC!r}")
    feature_spec = lines[1].split("=", 1)[1]
    sizes = tuple(int(s) for s in lines[2].split("=", 1)[1].split(","))
    accuracy = float(lines[3].split("=", 1)[1])
    mean = np.array([float(v) for v in lines[4].split()[1:]])
    scale = np.array([float(v) for v in lines[5].split()[1:]])
    weights = np.array([float(v) for v in lines[6:]])
    if len(weights) != _param_count(sizes):
        raise ValueError("weight count does not match the layer sizes")
    return DetectorModel(
        weights=weights,
        feature_mean=mean,
        feature_scale=scale,
        layer_sizes=sizes,
        feature_spec=feature_spec,
        held_out_accuracy=accuracy,
    )
