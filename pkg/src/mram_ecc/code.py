"""Shortened Hamming (71,64) code: construction, encoding, syndrome HDD, Tanner graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CodeDefinition",
    "TannerGraph",
    "build_hamming_71_64",
    "encode",
    "syndrome",
    "hdd_decode",
    "hdd_decode_batch",
    "build_tanner",
    "to_alist",
    "HDD_OK",
    "HDD_CORRECTED",
    "HDD_FAILURE",
]

# Status codes returned by the bounded-distance decoder.
HDD_OK = "corrected_zero"
HDD_CORRECTED = "corrected_one"
HDD_FAILURE = "failure"

_STATUS_BY_CODE = (HDD_OK, HDD_CORRECTED, HDD_FAILURE)


@dataclass(frozen=True)
class CodeDefinition:
    """A systematic binary linear code given by generator and parity-check matrices."""

    n: int
    k: int
    generator: np.ndarray  # k x n over GF(2)
    parity_check: np.ndarray  # (n-k) x n over GF(2)

    def __post_init__(self) -> None:
        if self.generator.shape != (self.k, self.n):
            raise ValueError("generator matrix has wrong shape")
        if self.parity_check.shape != (self.n - self.k, self.n):
            raise ValueError("parity-check matrix has wrong shape")


@dataclass(frozen=True)
class TannerGraph:
    """Bipartite check-node/variable-node graph with a fixed edge ordering.

    Edges are sorted lexicographically by (check node, variable node);
    this order is the canonical index for per-edge decoder weights.
    """

    num_vn: int
    num_cn: int
    edges: np.ndarray  # (E, 2) rows of (cn, vn)
    edge_cn: np.ndarray  # (E,)
    edge_vn: np.ndarray  # (E,)
    cn_ptr: np.ndarray  # CSR offsets per check node into the edge list
    vn_edges: tuple  # per-VN tuple of edge index arrays
    vn_sum: np.ndarray  # (E, num_vn) 0/1; msgs @ vn_sum sums per VN
    parity: np.ndarray  # num_cn x num_vn uint8, the H this graph encodes

    @property
    def num_edges(self) -> int:
        return len(self.edge_cn)


def build_hamming_71_64() -> CodeDefinition:
    """Construct the shortened Hamming (71,64) code.

    H = [A | I7] where the 64 columns of A are the 7-bit binary
    representations of the 64 smallest integers in 3..127 with Hamming
    weight >= 2, ascending; row 0 holds the most significant bit.
    G = [I64 | A^T]. The construction is fully deterministic.
    """
    values = [v for v in range(3, 128) if bin(v).count("1") >= 2][:64]
    a = np.zeros((7, 64), dtype=np.uint8)
    for j, v in enumerate(values):
        for r in range(7):
            a[r, j] = (v >> (6 - r)) & 1
    h = np.hstack([a, np.eye(7, dtype=np.uint8)])
    g = np.hstack([np.eye(64, dtype=np.uint8), a.T])
    return CodeDefinition(n=71, k=64, generator=g, parity_check=h)


def encode(code: CodeDefinition, message: np.ndarray) -> np.ndarray:
    """Systematic encoding: codeword = message . G over GF(2).

    Accepts a single message of length k or a (batch, k) array.
    """
    message = np.asarray(message, dtype=np.uint8)
    if message.shape[-1] != code.k:
        raise ValueError(f"message length {message.shape[-1]} != k={code.k}")
    return (message @ code.generator) % 2


def syndrome(code: CodeDefinition, word: np.ndarray) -> np.ndarray:
    """H . word^T over GF(2); accepts a single word or a batch."""
    word = np.asarray(word, dtype=np.uint8)
    if word.shape[-1] != code.n:
        raise ValueError(f"word length {word.shape[-1]} != n={code.n}")
    return (word @ code.parity_check.T) % 2


def _column_table(code: CodeDefinition) -> np.ndarray:
    """Map packed syndrome value -> column index to flip, -1 if none."""
    m = code.n - code.k
    weights = 1 << np.arange(m)[::-1]
    table = np.full(1 << m, -1, dtype=np.int64)
    packed_cols = weights @ code.parity_check
    table[packed_cols] = np.arange(code.n)
    return table


def hdd_decode(code: CodeDefinition, hard_bits: np.ndarray) -> tuple[np.ndarray, str]:
    """Bounded-distance decoding by syndrome lookup.

    Zero syndrome returns the input unchanged; a syndrome matching a
    column of H flips that bit; anything else is reported as a failure
    with the input returned unchanged (residual errors are counted by
    the caller).
    """
    hard_bits = np.asarray(hard_bits, dtype=np.uint8)
    est, status = hdd_decode_batch(code, hard_bits[None, :])
    return est[0], _STATUS_BY_CODE[int(status[0])]


def hdd_decode_batch(
    code: CodeDefinition, words: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bounded-distance decoding of a (batch, n) bit array.

    Returns (estimates, status codes) with status 0 = zero syndrome,
    1 = single bit corrected, 2 = failure.
    """
    words = np.asarray(words, dtype=np.uint8)
    if words.shape[-1] != code.n:
        raise ValueError(f"word length {words.shape[-1]} != n={code.n}")
    m = code.n - code.k
    weights = 1 << np.arange(m)[::-1]
    syn = (words @ code.parity_check.T) % 2
    packed = syn @ weights
    flip = _column_table(code)[packed]

    est = words.copy()
    status = np.full(len(words), 2, dtype=np.int8)
    status[packed == 0] = 0
    correctable = (packed != 0) & (flip >= 0)
    status[correctable] = 1
    rows = np.flatnonzero(correctable)
    est[rows, flip[rows]] ^= 1
    return est, status


def build_tanner(code: CodeDefinition) -> TannerGraph:
    """Tanner graph of the parity-check matrix with canonical edge order."""
    h = code.parity_check
    edges = np.argwhere(h == 1)  # row-major == lexicographic by (cn, vn)
    edge_cn = edges[:, 0].copy()
    edge_vn = edges[:, 1].copy()
    num_cn, num_vn = h.shape
    cn_ptr = np.searchsorted(edge_cn, np.arange(num_cn + 1))
    vn_edges = tuple(np.flatnonzero(edge_vn == v) for v in range(num_vn))
    vn_sum = np.zeros((len(edges), num_vn))
    vn_sum[np.arange(len(edges)), edge_vn] = 1.0
    return TannerGraph(
        num_vn=num_vn,
        num_cn=num_cn,
        edges=edges,
        edge_cn=edge_cn,
        edge_vn=edge_vn,
        cn_ptr=cn_ptr,
        vn_edges=vn_edges,
        vn_sum=vn_sum,
        parity=h.astype(np.uint8),
    )


def to_alist(code: CodeDefinition) -> str:
    """Render H in the standard alist text format (MacKay style, 0-padded)."""
    h = code.parity_check
    m, n = h.shape
    col_deg = h.sum(axis=0)
    row_deg = h.sum(axis=1)
    lines = [f"{n} {m}", f"{int(col_deg.max())} {int(row_deg.max())}"]
    lines.append(" ".join(str(int(d)) for d in col_deg))
    lines.append(" ".join(str(int(d)) for d in row_deg))
    max_col = int(col_deg.max())
    for v in range(n):
        idx = [str(int(c) + 1) for c in np.flatnonzero(h[:, v])]
        idx += ["0"] * (max_col - len(idx))
        lines.append(" ".join(idx))
    max_row = int(row_deg.max())
    for c in range(m):
        idx = [str(int(v) + 1) for v in np.flatnonzero(h[c])]
        idx += ["0"] * (max_row - len(idx))
        lines.append(" ".join(idx))
    return "\n".join(lines) + "\n"
