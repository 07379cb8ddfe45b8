"""STT-MRAM read channel: resistance sampling, i.i.d. adapter, oracle LLRs.

A stored bit 0 reads back as a low resistance around ``mu0`` and a stored
bit 1 as a high resistance around ``mu1``; process variation widens both
states, and an unknown temperature-induced offset shifts the high state
only. The channel is asymmetric, so an i.i.d. adapter (scrambling plus an
LLR sign adjuster) is provided to symmetrize it.

Sign convention used across the whole package: a positive LLR favours
bit 0 (low resistance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .streams import as_stream

__all__ = [
    "ChannelParams",
    "ReadBlock",
    "ScrambleMask",
    "DegenerateChannelError",
    "sample_block",
    "sample_read_batch",
    "scramble",
    "sign_adjust",
    "gaussian_llr",
    "analytic_llr",
    "llr_crossing",
    "optimal_threshold",
]


class DegenerateChannelError(ValueError):
    """Raised when both read hypotheses are singular at the queried point."""


@dataclass(frozen=True)
class ChannelParams:
    """Resistance statistics of the read channel (resistances in kOhm).

    ``spread`` is the normalized standard deviation shared by both states
    (sigma0/mu0 = sigma1/mu1), ``offset_mean`` and ``offset_spread`` give
    the mean and the mu1-normalized standard deviation of the offset that
    affects the high-resistance state only.
    """

    mu0: float = 1.0
    mu1: float = 2.0
    spread: float = 0.0
    offset_mean: float = 0.0
    offset_spread: float = 0.0
    noise_kind: str = "gaussian"

    def __post_init__(self) -> None:
        values = (self.mu0, self.mu1, self.spread, self.offset_mean, self.offset_spread)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("channel parameters must be finite")
        if not self.mu0 < self.mu1:
            raise ValueError(f"require mu0 < mu1, got mu0={self.mu0}, mu1={self.mu1}")
        if self.spread < 0 or self.offset_spread < 0:
            raise ValueError("spreads must be non-negative")
        if self.noise_kind != "gaussian":
            raise ValueError(f"unsupported noise_kind {self.noise_kind!r}")

    @property
    def sigma0(self) -> float:
        return self.spread * self.mu0

    @property
    def sigma1(self) -> float:
        return self.spread * self.mu1

    @property
    def sigma_b(self) -> float:
        return self.offset_spread * self.mu1

    @property
    def mu1_shifted(self) -> float:
        """Mean of the high-resistance state including the offset."""
        return self.mu1 + self.offset_mean

    @property
    def sigma1_effective(self) -> float:
        """Standard deviation of the high state with the offset folded in."""
        return math.hypot(self.sigma1, self.sigma_b)

    def to_config(self) -> dict[str, str]:
        """Flat key=value representation used by the config files."""
        return {
            "mu0_kohm": repr(self.mu0),
            "mu1_kohm": repr(self.mu1),
            "spread": repr(self.spread),
            "offset_mean_kohm": repr(self.offset_mean),
            "offset_spread_ratio": repr(self.offset_spread),
            "noise_kind": self.noise_kind,
        }

    @classmethod
    def from_config(cls, cfg: dict[str, str]) -> "ChannelParams":
        return cls(
            mu0=float(cfg.get("mu0_kohm", 1.0)),
            mu1=float(cfg.get("mu1_kohm", 2.0)),
            spread=float(cfg.get("spread", 0.0)),
            offset_mean=float(cfg.get("offset_mean_kohm", 0.0)),
            offset_spread=float(cfg.get("offset_spread_ratio", 0.0)),
            noise_kind=cfg.get("noise_kind", "gaussian"),
        )


@dataclass(frozen=True)
class ReadBlock:
    """A vector of readback resistances, optionally with the stored bits."""

    values: np.ndarray
    true_bits: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.true_bits is not None and len(self.values) != len(self.true_bits):
            raise ValueError("values and true_bits must have equal length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScrambleMask:
    """Equiprobable i.i.d. binary mask used by the channel adapter."""

    bits: np.ndarray

    def __len__(self) -> int:
        return len(self.bits)


def sample_read_batch(
    params: ChannelParams,
    bits: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized readback sampling for a (batch, n) array of stored bits.

    Per cell: low state reads mu0 + noise(sigma0); high state reads
    mu1 + noise(sigma1) + offset, offset ~ N(offset_mean, sigma_b^2).
    The draw order (noise for every cell, then offsets for every cell)
    is fixed so that identical streams give identical readbacks.
    """
    bits = np.asarray(bits)
    ones = bits != 0
    noise = rng.standard_normal(bits.shape)
    y = np.where(ones, params.mu1 + params.sigma1 * noise, params.mu0 + params.sigma0 * noise)
    if params.offset_mean != 0.0 or params.offset_spread != 0.0:
        offsets = params.offset_mean + params.sigma_b * rng.standard_normal(bits.shape)
        y = np.where(ones, y + offsets, y)
    return y


def sample_block(
    params: ChannelParams,
    bits: np.ndarray,
    seed: int | np.random.Generator,
) -> ReadBlock:
    """Read one block of cells storing ``bits`` through the channel."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        raise ValueError("bits must be nonempty")
    rng = as_stream(seed, "sample_block")
    values = sample_read_batch(params, bits, rng)
    return ReadBlock(values=values, true_bits=bits)


def scramble(
    bits: np.ndarray,
    seed: int | np.random.Generator,
) -> tuple[np.ndarray, ScrambleMask]:
    """XOR the input bits with a fresh equiprobable i.i.d. mask."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size == 0:
        raise ValueError("bits must be nonempty")
    rng = as_stream(seed, "scramble")
    mask = rng.integers(0, 2, size=bits.shape, dtype=np.uint8)
    return bits ^ mask, ScrambleMask(bits=mask)


def sign_adjust(llrs: np.ndarray, mask: ScrambleMask) -> np.ndarray:
    """Undo the scrambling on the LLR side: v = u * (1 - 2p).

    Magnitudes are preserved; the sign flips exactly where the mask bit
    is one, which makes the scrambled channel binary-input symmetric.
    """
    llrs = np.asarray(llrs)
    mask_bits = np.asarray(mask.bits)
    if llrs.shape[-1] != mask_bits.shape[-1]:
        raise ValueError(
            f"LLR length {llrs.shape[-1]} != mask length {mask_bits.shape[-1]}"
        )
    return llrs * (1 - 2 * mask_bits.astype(llrs.dtype if llrs.dtype.kind == "f" else np.int64))


def gaussian_llr(
    y: float | np.ndarray, mu0: float, sigma0: float, mu1: float, sigma1: float
) -> float | np.ndarray:
    """Two-hypothesis Gaussian LLR log[N(y; mu0, sigma0^2) / N(y; mu1, sigma1^2)].

    Zero-variance hypotheses produce +/-inf where that is well defined and
    raise ``DegenerateChannelError`` otherwise.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    scalar = y_arr.ndim == 0
    y_arr = np.atleast_1d(y_arr)

    if sigma0 == 0.0 and sigma1 == 0.0:
        out = np.full(y_arr.shape, np.nan)
        out[y_arr == mu0] = np.inf
        out[y_arr == mu1] = -np.inf
        if np.isnan(out).any():
            raise DegenerateChannelError(
                "both hypotheses have zero variance and y matches neither mean"
            )
    elif sigma0 == 0.0:
        out = np.where(y_arr == mu0, np.inf, -np.inf)
    elif sigma1 == 0.0:
        out = np.where(y_arr == mu1, -np.inf, np.inf)
    else:
        out = (
            -((y_arr - mu0) ** 2) / (2.0 * sigma0 * sigma0)
            + ((y_arr - mu1) ** 2) / (2.0 * sigma1 * sigma1)
            + math.log(sigma1 / sigma0)
        )
    if scalar:
        return float(out[0])
    return out


def analytic_llr(params: ChannelParams, y: float | np.ndarray) -> float | np.ndarray:
    """Full-knowledge LLR log[p(y|0) / p(y|1)] for the read channel.

    The bit-1 hypothesis folds the offset into a single Gaussian with
    mean mu1 + offset_mean and variance sigma1^2 + sigma_b^2. Positive
    output favours bit 0.
    """
    return gaussian_llr(
        y, params.mu0, params.sigma0, params.mu1_shifted, params.sigma1_effective
    )


def llr_crossing(mu0: float, sigma0: float, mu1: float, sigma1: float) -> float:
    """Resistance in (mu0, mu1) where the two-Gaussian LLR crosses zero.

    Solved by bisection to an absolute tolerance of 1e-6 kOhm.
    """
    if sigma0 == 0.0 or sigma1 == 0.0:
        raise DegenerateChannelError("zero-variance hypothesis has no LLR crossing")
    if not mu0 < mu1:
        raise DegenerateChannelError(f"invalid bracket ({mu0}, {mu1})")
    f_lo = gaussian_llr(mu0, mu0, sigma0, mu1, sigma1)
    f_hi = gaussian_llr(mu1, mu0, sigma0, mu1, sigma1)
    if not (f_lo > 0.0 > f_hi):
        raise DegenerateChannelError("LLR does not change sign inside the bracket")
    return float(
        bisect(lambda r: gaussian_llr(r, mu0, sigma0, mu1, sigma1), mu0, mu1, xtol=1e-6)
    )


def optimal_threshold(params: ChannelParams) -> float:
    """Resistance where the full-knowledge LLR crosses zero.

    Used as the oracle the detector-driven threshold search is checked
    against, and as the ideal-knowledge hard-decision threshold.
    """
    return llr_crossing(
        params.mu0, params.sigma0, params.mu1_shifted, params.sigma1_effective
    )
