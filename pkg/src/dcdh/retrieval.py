"""Bit-packed Hamming ranking, retrieval metrics, and the LSH baseline.

Codes are packed least-significant-bit first into 64-bit words (+1 -> 1,
-1 -> 0); distances use xor plus popcount. The codes file format is magic
``DCDHCODE``, version u16, then n and k as little-endian u64, then the
packed words per code, little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CODES_MAGIC = b"DCDHCODE"
CODES_VERSION = 1


class CodesFormatError(ValueError):
    """Malformed codes file."""


@dataclass
class PackedCodes:
    """n codes of k bits each; words has shape (n, ceil(k/64)) uint64."""

    n: int
    k: int
    words: np.ndarray

    def __post_init__(self):
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        expect = (self.n, (self.k + 63) // 64)
        if self.words.shape != expect:
            raise ValueError("words shape %s != expected %s" % (self.words.shape, expect))
        # Padding bits beyond k must be zero so they never affect distances.
        pad = expect[1] * 64 - self.k
        if pad and np.any(self.words[:, -1] >> np.uint64(64 - pad)):
            raise ValueError("nonzero padding bits beyond k=%d" % self.k)

    def code(self, i: int) -> np.ndarray:
        return self.words[i]


def pack_codes(b: np.ndarray) -> PackedCodes:
    """Pack a +1/-1 code matrix (k bit rows x n sample columns)."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2:
        raise ValueError("code matrix must be 2-d")
    if not np.all(np.abs(b) == 1.0):
        raise ValueError("code matrix entries must be exactly -1 or +1")
    k, n = b.shape
    n_words = (k + 63) // 64
    bits = np.zeros((n, n_words * 64), dtype=np.uint8)
    bits[:, :k] = (b.T > 0)
    packed = np.packbits(bits, axis=1, bitorder="little")
    words = packed.view("<u8").astype(np.uint64)
    return PackedCodes(n, k, words)


def unpack_codes(pc: PackedCodes) -> np.ndarray:
    """Inverse of pack_codes; returns the k x n +1/-1 matrix."""
    raw = pc.words.astype("<u8").view(np.uint8).reshape(pc.n, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, : pc.k]
    return np.where(bits.T == 1, 1.0, -1.0)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    """Differing-bit count between two packed codes (equal word length)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError("packed codes differ in length: %s vs %s" % (a.shape, b.shape))
    return int(np.bitwise_count(a ^ b).sum())


def hamming_to_all(query: np.ndarray, db: PackedCodes) -> np.ndarray:
    """Distances from one packed code to every database code."""
    query = np.asarray(query, dtype=np.uint64)
    if query.shape != (db.words.shape[1],):
        raise ValueError("query word length %s does not match database" % (query.shape,))
    return np.bitwise_count(db.words ^ query[None, :]).sum(axis=1).astype(np.int64)


def rank(query: np.ndarray, db: PackedCodes) -> np.ndarray:
    """Database indices by ascending Hamming distance, ties by index."""
    dists = hamming_to_all(query, db)
    return np.argsort(dists, kind="stable")


def relevance(query_labels: np.ndarray, db_labels: np.ndarray) -> np.ndarray:
    """1 where a database row shares at least one label with the query."""
    query_labels = np.asarray(query_labels, dtype=np.int64)
    db_labels = np.asarray(db_labels, dtype=np.int64)
    if query_labels.ndim != 1 or db_labels.ndim != 2 \
            or db_labels.shape[1] != query_labels.shape[0]:
        raise ValueError("label shapes incompatible: %s vs %s"
                         % (query_labels.shape, db_labels.shape))
    return (db_labels @ query_labels > 0).astype(np.int64)


def average_precision(ranking: np.ndarray, rel: np.ndarray) -> float | None:
    """AP over the full ranking; None when the query has no relevant item.

    Accumulation is sequential so results are bit-reproducible against a
    straightforward loop implementation of the definition.
    """
    ranking = np.asarray(ranking, dtype=np.int64)
    rel = np.asarray(rel)
    flags = rel[ranking]
    hits = 0
    acc = 0.0
    for pos, flag in enumerate(flags, start=1):
        if flag:
            hits += 1
            acc += hits / pos
    if hits == 0:
        return None
    return acc / hits


@dataclass
class MapResult:
    map: float
    n_evaluated: int
    n_skipped: int


def mean_average_precision(rankings, rels) -> MapResult:
    """Mean AP over queries; queries with no relevant item are skipped."""
    if len(rankings) == 0 or len(rankings) != len(rels):
        raise ValueError("need one non-empty ranking per relevance vector")
    total = 0.0
    evaluated = 0
    skipped = 0
    for ranking, rel in zip(rankings, rels):
        ap = average_precision(ranking, rel)
        if ap is None:
            skipped += 1
        else:
            total += ap
            evaluated += 1
    if evaluated == 0:
        raise ValueError("every query had zero relevant items")
    return MapResult(total / evaluated, evaluated, skipped)


def precision_at_k(ranking: np.ndarray, rel: np.ndarray, k: int) -> float:
    """Fraction of the top k returns that are relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranking = np.asarray(ranking, dtype=np.int64)
    rel = np.asarray(rel)
    hits = int(rel[ranking[:k]].sum())
    return hits / k


def lsh_codes(x: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Random-hyperplane codes sgn(Wx), W a seeded Gaussian k x d matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be n x d")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((k, x.shape[1]))
    return np.where(w @ x.T >= 0.0, 1.0, -1.0)


def save_codes(pc: PackedCodes, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(CODES_MAGIC)
        fh.write(struct.pack("<HQQ", CODES_VERSION, pc.n, pc.k))
        fh.write(pc.words.astype("<u8").tobytes())


def load_codes(path: str) -> PackedCodes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CODES_MAGIC:
        raise CodesFormatError("bad magic in %s" % path)
    head = struct.calcsize("<HQQ")
    if len(raw) < 8 + head:
        raise CodesFormatError("truncated header in %s" % path)
    version, n, k = struct.unpack_from("<HQQ", raw, 8)
    if version != CODES_VERSION:
        raise CodesFormatError("unsupported version %d in %s" % (version, path))
    n_words = (k + 63) // 64
    expected = 8 + head + n * n_words * 8
    if len(raw) != expected:
        raise CodesFormatError("truncated or oversized payload in %s "
                               "(expected %d bytes, got %d)" % (path, expected, len(raw)))
    words = np.frombuffer(raw, dtype="<u8", offset=8 + head).reshape(n, n_words)
    try:
        return PackedCodes(n, k, words.astype(np.uint64))
    except ValueError as exc:
        raise CodesFormatError("invalid payload in %s: %s" % (path, exc)) from exc
