"""Datasets for hashing experiments: loading, synthesis, similarity, splits.

Two on-disk formats are supported:

* csv: first line is a header ``d=<d>,c=<c>``; every following line holds
  d feature floats and then c label bits, comma separated.
* packed-binary: magic ``DCDH``, version u16, then n, d, c as little-endian
  u64, then row-major float32 features, then the row-major label bits packed
  8 per byte, least significant bit first.

Features are float64 in memory; the binary format carries float32 and is
widened on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DCDH"
FORMAT_VERSION = 1

# Default cluster width for synthetic data (unit-scale cluster centers).
DEFAULT_SPREAD = 0.6


class DatasetError(ValueError):
    """Malformed dataset file or invalid feature/label content."""


@dataclass
class Dataset:
    """Feature matrix (n x d) plus a multi-hot label matrix (n x c)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DatasetError("features and labels must be 2-d matrices")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                "feature rows (%d) != label rows (%d)"
                % (self.features.shape[0], self.labels.shape[0])
            )
        if self.n < 2 or self.d < 1 or self.c < 1:
            raise DatasetError("need n >= 2, d >= 1, c >= 1")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        check_labels(self.labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])


@dataclass
class Split:
    """Disjoint query/database index partition of 0..n."""

    query_indices: np.ndarray
    database_indices: np.ndarray

    def __post_init__(self):
        self.query_indices = np.asarray(self.query_indices, dtype=np.int64)
        self.database_indices = np.asarray(self.database_indices, dtype=np.int64)
        if len(self.query_indices) == 0 or len(self.database_indices) == 0:
            raise DatasetError("both split parts must be non-empty")
        union = np.concatenate([self.query_indices, self.database_indices])
        expected = np.arange(len(union))
        if not np.array_equal(np.sort(union), expected):
            raise DatasetError("split parts must be disjoint and cover 0..n")


def check_labels(labels: np.ndarray) -> None:
    """Validate a 0/1 label matrix; every row needs at least one 1."""
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise DatasetError("row %d: label entries must be 0 or 1" % row)
    zero_rows = np.flatnonzero(labels.sum(axis=1) == 0)
    if len(zero_rows) > 0:
        raise DatasetError("row %d: all-zero label row" % int(zero_rows[0]))


def build_similarity(labels: np.ndarray) -> np.ndarray:
    """Pairwise +1/-1 similarity: +1 iff two rows share at least one label.

    Symmetric with a +1 diagonal (a sample shares all its labels with
    itself).
    """
    labels = np.asarray(labels, dtype=np.int64)
    check_labels(labels)
    overlap = labels @ labels.T
    return np.where(overlap > 0, 1.0, -1.0)


def split_query_database(dataset: Dataset, n_query: int, seed: int) -> Split:
    """Seeded random query/database partition of the dataset rows."""
    n = dataset.n
    if not 0 < n_query < n:
        raise DatasetError("n_query must be in (0, n); got %d with n=%d" % (n_query, n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return Split(np.sort(perm[:n_query]), np.sort(perm[n_query:]))


def synth_clusters(
    n: int, d: int, c: int, spread: float = DEFAULT_SPREAD, seed: int = 0
) -> Dataset:
    """Sample c Gaussian clusters with one-hot labels, deterministically.

    Cluster centers are standard-normal draws; points are assigned to
    classes round-robin so every class gets at least one point.
    """
    if n < c:
        raise DatasetError("need n >= c; got n=%d, c=%d" % (n, c))
    if spread <= 0:
        raise DatasetError("spread must be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(c, d))
    if c > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        if np.min(dist[~np.eye(c, dtype=bool)]) == 0.0:
            raise DatasetError("degenerate cluster centers; try another seed")
    cluster_ids = np.arange(n) % c
    features = centers[cluster_ids] + spread * rng.normal(0.0, 1.0, size=(n, d))
    labels = np.zeros((n, c), dtype=np.int64)
    labels[np.arange(n), cluster_ids] = 1
    return Dataset(features, labels)


def _format_from_path(path: str) -> str:
    return "csv" if str(path).endswith(".csv") else "packed-binary"


def save_dataset(dataset: Dataset, path: str, format: str | None = None) -> None:
    """Write a dataset file; format defaults by extension (.csv vs binary)."""
    fmt = format or _format_from_path(path)
    if fmt == "csv":
        _save_csv(dataset, path)
    elif fmt == "packed-binary":
        _save_binary(dataset, path)
    else:
        raise DatasetError("unknown format %r" % fmt)


def load_dataset(path: str, format: str | None = None) -> Dataset:
    """Read a dataset file written by :func:`save_dataset`."""
    fmt = format or _format_from_path(path)
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "packed-binary":
        return _load_binary(path)
    raise DatasetError("unknown format %r" % fmt)


def _save_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("d=%d,c=%d\n" % (dataset.d, dataset.c))
        for i in range(dataset.n):
            feats = ",".join(repr(float(v)) for v in dataset.features[i])
            labs = ",".join(str(int(v)) for v in dataset.labels[i])
            fh.write(feats + "," + labs + "\n")


def _load_csv(path: str) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        try:
            d_part, c_part = header.split(",")
            d = int(d_part.removeprefix("d="))
            c = int(c_part.removeprefix("c="))
        except ValueError as exc:
            raise DatasetError("bad header %r (want d=<d>,c=<c>)" % header) from exc
        if d < 1 or c < 1:
            raise DatasetError("bad header dims d=%d c=%d" % (d, c))
        features, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != d + c:
                raise DatasetError(
                    "row %d: expected %d fields, got %d" % (lineno, d + c, len(fields))
                )
            try:
                feats = [float(v) for v in fields[:d]]
                labs = [int(v) for v in fields[d:]]
            except ValueError as exc:
                raise DatasetError("row %d: unparseable value" % lineno) from exc
            if any(v not in (0, 1) for v in labs):
                raise DatasetError("row %d: label entries must be 0 or 1" % lineno)
            if sum(labs) == 0:
                raise DatasetError("row %d: all-zero label row" % lineno)
            features.append(feats)
            labels.append(labs)
    if not features:
        raise DatasetError("no data rows in %s" % path)
    return Dataset(np.array(features, dtype=np.float64), np.array(labels, dtype=np.int64))


def _save_binary(dataset: Dataset, path: str) -> None:
    n, d, c = dataset.n, dataset.d, dataset.c
    bits = np.packbits(dataset.labels.astype(np.uint8).ravel(), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HQQQ", FORMAT_VERSION, n, d, c))
        fh.write(dataset.features.astype("<f4").tobytes())
        fh.write(bits.tobytes())


def _load_binary(path: str) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise DatasetError("bad magic in %s" % path)
    if len(raw) < 4 + struct.calcsize("<HQQQ"):
        raise DatasetError("truncated header in %s" % path)
    version, n, d, c = struct.unpack_from("<HQQQ", raw, 4)
    if version != FORMAT_VERSION:
        raise DatasetError("unsupported version %d in %s" % (version, path))
    off = 4 + struct.calcsize("<HQQQ")
    feat_bytes = n * d * 4
    bit_bytes = (n * c + 7) // 8
    if len(raw) != off + feat_bytes + bit_bytes:
        raise DatasetError(
            "truncated or oversized payload in %s (expected %d bytes, got %d)"
            % (path, off + feat_bytes + bit_bytes, len(raw))
        )
    features = (
        np.frombuffer(raw, dtype="<f4", count=n * d, offset=off)
        .astype(np.float64)
        .reshape(n, d)
    )
    bits = np.frombuffer(raw, dtype=np.uint8, offset=off + feat_bytes)
    labels = np.unpackbits(bits, count=n * c, bitorder="little").reshape(n, c)
    for i in range(n):
        if labels[i].sum() == 0:
            raise DatasetError("row %d: all-zero label row" % i)
    return Dataset(features, labels.astype(np.int64))
