"""Embedding-file ingestion, relevance judgments, and corpus statistics."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "EmbeddingSet",
    "BiMetricDataset",
    "DatasetStats",
    "FvecsFormatError",
    "QrelsParseError",
    "StatsError",
    "load_fvecs",
    "save_fvecs",
    "load_qrels",
    "compute_stats",
    "collapse_duplicates",
]

# All-pairs statistics are exact up to this corpus size; beyond it we
# sample (4M distance evaluations is still sub-second at desk scale).
EXACT_STATS_LIMIT = 2000


class FvecsFormatError(ValueError):
    """Malformed fvecs file; byte_offset points at the offending record."""

    def __init__(self, message, byte_offset=None):
        super().__init__(message)
        self.byte_offset = byte_offset


class QrelsParseError(ValueError):
    """Malformed qrels line; line_number is 1-based."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingSet:
    """A count x dim block of float32 vectors."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            bad = int(np.argwhere(~np.isfinite(v).all(axis=1))[0, 0])
            raise ValueError(f"non-finite component in vector {bad}")
        if not v.flags.c_contiguous:
            v = np.ascontiguousarray(v)
        v.setflags(write=False)  # loaded sets are shared; keep them immutable
        object.__setattr__(self, "vectors", v)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] if self.count else 0


@dataclass(frozen=True)
class BiMetricDataset:
    """Corpus and queries embedded in two spaces plus relevance judgments.

    Proxy and truth dims may differ (different embedding models); the
    counts must line up so point/query ids are shared across spaces.
    """

    corpus_proxy: EmbeddingSet
    corpus_truth: EmbeddingSet
    queries_proxy: EmbeddingSet
    queries_truth: EmbeddingSet
    qrels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.corpus_proxy.count != self.corpus_truth.count:
            raise ValueError(
                f"corpus count mismatch: proxy {self.corpus_proxy.count} "
                f"vs truth {self.corpus_truth.count}"
            )
        if self.queries_proxy.count != self.queries_truth.count:
            raise ValueError(
                f"query count mismatch: proxy {self.queries_proxy.count} "
                f"vs truth {self.queries_truth.count}"
            )
        for qid, row in self.qrels.items():
            if not 0 <= qid < self.queries_proxy.count:
                raise ValueError(f"qrels query id {qid} out of range")
            for did in row:
                if not 0 <= did < self.corpus_proxy.count:
                    raise ValueError(f"qrels doc id {did} out of range")

    @property
    def n(self) -> int:
        return self.corpus_proxy.count

    @property
    def n_queries(self) -> int:
        return self.queries_proxy.count


def load_fvecs(path) -> EmbeddingSet:
    """Read a classic fvecs file (per record: int32 LE dim + dim float32 LE)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) == 0:
        return EmbeddingSet(np.empty((0, 0), dtype=np.float32))
    if len(buf) < 4:
        raise FvecsFormatError(
            f"truncated record at byte 0: {len(buf)} bytes is too short for a "
            "dim header", byte_offset=0)
    dim = struct.unpack_from("<i", buf, 0)[0]
    if dim <= 0:
        raise FvecsFormatError(f"non-positive dim {dim} at byte 0", byte_offset=0)
    rec_bytes = 4 + 4 * dim
    if len(buf) % rec_bytes != 0:
        # Scan record-by-record to report a precise offset.
        _scan_fvecs_error(buf, dim)
    raw = np.frombuffer(buf, dtype="<i4").reshape(-1, dim + 1)
    headers = raw[:, 0]
    if not (headers == dim).all():
        _scan_fvecs_error(buf, dim)
    vectors = raw[:, 1:].view("<f4").astype(np.float32)
    return EmbeddingSet(vectors)


def _scan_fvecs_error(buf, first_dim):
    offset = 0
    while offset < len(buf):
        if len(buf) - offset < 4:
            raise FvecsFormatError(
                f"truncated record at byte {offset}: only {len(buf) - offset} "
                "bytes left for a dim header", byte_offset=offset)
        dim = struct.unpack_from("<i", buf, offset)[0]
        if dim <= 0:
            raise FvecsFormatError(
                f"non-positive dim {dim} at byte {offset}", byte_offset=offset)
        if dim != first_dim:
            raise FvecsFormatError(
                f"inconsistent dims: first record has dim {first_dim}, record "
                f"at byte {offset} has dim {dim}", byte_offset=offset)
        if len(buf) - offset < 4 + 4 * dim:
            raise FvecsFormatError(
                f"truncated record at byte {offset}: header promises {dim} "
                f"components but only {len(buf) - offset - 4} bytes follow",
                byte_offset=offset)
        offset += 4 + 4 * dim
    raise FvecsFormatError("malformed fvecs file", byte_offset=0)


def save_fvecs(embeddings: EmbeddingSet, path) -> None:
    """Write fvecs bytes; load_fvecs(save_fvecs(S)) is bit-exact."""
    count, dim = embeddings.count, embeddings.dim
    with open(path, "wb") as fh:
        if count == 0:
            return
        out = np.empty((count, dim + 1), dtype="<i4")
        out[:, 0] = dim
        out[:, 1:] = embeddings.vectors.astype("<f4", copy=False).view("<i4")
        fh.write(out.tobytes())


def load_qrels(path) -> dict:
    """Read TSV relevance judgments: query_id <TAB> doc_id <TAB> grade.

    Lines starting with '#' and blank lines are skipped. Duplicate
    (query, doc) entries keep the maximum grade.
    """
    qrels: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) != 3:
                raise QrelsParseError(
                    f"line {lineno}: expected 3 tab-separated fields, got "
                    f"{len(fields)}", line_number=lineno)
            try:
                qid, did, grade = (int(f) for f in fields)
            except ValueError:
                raise QrelsParseError(
                    f"line {lineno}: non-integer field in {fields!r}",
                    line_number=lineno) from None
            if grade < 0:
                raise QrelsParseError(
                    f"line {lineno}: negative grade {grade}", line_number=lineno)
            row = qrels.setdefault(qid, {})
            row[did] = max(row.get(did, 0), grade)
    return qrels


@dataclass(frozen=True)
class DatasetStats:
    """Aspect ratio and intrinsic-dimension estimate of one embedding set.

    c_hat is 1.0 for single-space stats (a metric trivially sandwiches
    itself); paired proxy/truth stats get c_hat from rescale_proxy.
    """

    n: int
    delta_d: float
    lambda_d_estimate: float
    c_hat: float = 1.0
    exact: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n,
            "delta_d": self.delta_d,
            "lambda_d_estimate": self.lambda_d_estimate,
            "c_hat": self.c_hat,
            "exact": self.exact,
        })


def compute_stats(points: EmbeddingSet, sample_pairs: int = 200_000,
                  seed: int = 0) -> DatasetStats:
    """Aspect ratio and a doubling-dimension estimate.

    Exact all-pairs mode for small sets; above EXACT_STATS_LIMIT points
    the aspect ratio comes from sample_pairs uniform random pairs and
    the result is flagged approximate. Zero distances (duplicates) are
    excluded from the closest-pair minimum.

    The doubling-dimension estimate is the max over sampled centers p
    and a geometric grid of radii r of log2 of the size of a greedy
    r-packing of the ball of radius 2r around p.
    """
    n = points.count
    if n < 2:
        raise StatsError(f"need at least 2 points, got {n}")
    X = points.vectors.astype(np.float64)
    rng = np.random.default_rng(seed)

    exact = n <= EXACT_STATS_LIMIT
    if exact:
        dists = pdist(X)
        nonzero = dists[dists > 0]
        if nonzero.size == 0:
            raise StatsError("zero diameter: all points identical")
        delta = float(dists.max() / nonzero.min())
    else:
        ii = rng.integers(0, n, size=sample_pairs)
        jj = rng.integers(0, n, size=sample_pairs)
        keep = ii != jj
        dists = np.linalg.norm(X[ii[keep]] - X[jj[keep]], axis=1)
        nonzero = dists[dists > 0]
        if nonzero.size == 0:
            raise StatsError("zero diameter: all sampled pairs identical")
        delta = float(dists.max() / nonzero.min())

    lam = _estimate_doubling_dimension(X, rng)
    return DatasetStats(n=n, delta_d=delta, lambda_d_estimate=lam, exact=exact)


def _estimate_doubling_dimension(X, rng, n_centers=16, n_radii=8):
    n = X.shape[0]
    centers = rng.choice(n, size=min(n_centers, n), replace=False)
    best = 0.0
    for c in centers:
        drow = np.linalg.norm(X - X[c], axis=1)
        rmax = drow.max()
        positive = drow[drow > 0]
        if positive.size == 0 or rmax == 0:
            continue
        rmin = positive.min()
        for r in np.geomspace(max(rmin, rmax * 1e-6), rmax / 2, n_radii):
            ball = np.flatnonzero(drow <= 2 * r)
            size = _greedy_packing_size(X, ball, r)
            if size > 1:
                best = max(best, float(np.log2(size)))
    return best


def _greedy_packing_size(X, ids, r):
    # Scan in ascending id; keep a point if it is > r from every kept one.
    kept: list = []
    for i in ids:
        if all(np.linalg.norm(X[i] - X[j]) > r for j in kept):
            kept.append(i)
    return len(kept)


def collapse_duplicates(points: EmbeddingSet):
    """Drop exact duplicate vectors.

    Returns (unique_set, keep_ids, representative) where keep_ids maps
    new ids to original ids (ascending) and representative maps every
    original id to its new id.
    """
    X = points.vectors
    _, first_idx, inverse = np.unique(X, axis=0, return_index=True,
                                      return_inverse=True)
    keep_ids = np.sort(first_idx)
    # Position of each kept original id after sorting by id.
    pos_of_group = np.empty(first_idx.shape[0], dtype=np.int64)
    pos_of_group[np.argsort(first_idx)] = np.arange(first_idx.shape[0])
    representative = pos_of_group[inverse.ravel()]
    return EmbeddingSet(X[keep_ids]), keep_ids, representative
