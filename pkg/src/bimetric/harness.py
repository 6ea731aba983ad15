"""Benchmark harness: three retrieval methods under a budget sweep.

Methods:
  bimetric-ours      cheap-metric candidate harvest, then budgeted
                     greedy search under the expensive metric
  bimetric-baseline  classic retrieve-and-rerank: exact top-Q under the
                     cheap metric, score all Q with the expensive one
  single-metric      greedy search on a graph built directly with the
                     expensive metric (build-time calls exempt)

Every expensive call a method makes during a query counts against the
budget Q; rows report NDCG@k and Recall@k against brute-force truth.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import struct
import time
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .anngraph import ReachabilityGraph, build_alpha_graph, greedy_search, two_stage_search
from .dataset import BiMetricDataset, EmbeddingSet
from .metric import CountingOracle, DistanceOracle

__all__ = [
    "MethodSpec",
    "SweepRow",
    "QueryOutcome",
    "METHOD_NAMES",
    "run_method",
    "recall_at_k",
    "ndcg_at_k",
    "sweep",
    "rows_to_csv",
    "generate_synthetic",
    "truth_topk",
    "save_truth_cache",
    "load_truth_cache",
    "build_method_graphs",
]

METHOD_NAMES = ("bimetric-ours", "bimetric-baseline", "single-metric")
START_MODE_NAMES = ("half-budget", "top-100", "top-1", "default")

CSV_HEADER = ["dataset", "method", "Q", "ndcg_at_10", "recall_at_10",
              "mean_calls_D", "mean_calls_d", "wall_seconds"]

TRUTH_MAGIC = b"BMGT"


@dataclass(frozen=True)
class MethodSpec:
    name: str
    start_mode: str = "half-budget"
    k: int = 10

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ValueError(f"unknown method {self.name!r}")
        if self.start_mode not in START_MODE_NAMES:
            raise ValueError(f"unknown start mode {self.start_mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")


class QueryOutcome(NamedTuple):
    ids: list
    dists: list
    calls_D: int
    calls_d: int


@dataclass(frozen=True)
class SweepRow:
    dataset: str
    method: str
    Q: int
    ndcg_at_10: float
    recall_at_10: float
    mean_calls_D: float
    mean_calls_d: float
    wall_seconds: float
    start_mode: Optional[str] = None


def _oracles(dataset: BiMetricDataset):
    d = DistanceOracle(dataset.corpus_proxy, dataset.queries_proxy, kind="proxy")
    D = DistanceOracle(dataset.corpus_truth, dataset.queries_truth, kind="truth")
    return d, D


def _start_args(mode):
    if mode == "half-budget":
        return "half-budget", None
    if mode == "top-100":
        return "fixed-k", 100
    if mode == "top-1":
        return "fixed-k", 1
    return "default-entry", None


def run_method(dataset: BiMetricDataset, index: Optional[ReachabilityGraph],
               spec: MethodSpec, Q: int,
               stage1_beam: Optional[int] = None) -> list:
    """One (method, budget) cell; returns a QueryOutcome per query."""
    if Q < spec.k:
        raise ValueError(f"budget {Q} smaller than result size {spec.k}")
    d_or, D_or = _oracles(dataset)
    needs = "truth" if spec.name == "single-metric" else "proxy"
    if spec.name != "bimetric-baseline":
        if index is None:
            raise ValueError(f"{spec.name} needs a graph index")
        if index.built_on is not None and index.built_on != needs:
            raise ValueError(
                f"{spec.name} needs a graph built on the {needs} metric, "
                f"got one built on {index.built_on}")
        if index.n != dataset.n:
            raise ValueError("index and dataset corpus sizes differ")

    outcomes = []
    for qid in range(dataset.n_queries):
        Dc = CountingOracle(D_or, budget=Q, memo=True)
        if spec.name == "bimetric-ours":
            mode, start_k = _start_args(spec.start_mode)
            res = two_stage_search(index, d_or, Dc, qid, Q, spec.k,
                                   start_mode=mode, start_k=start_k,
                                   stage1_beam=stage1_beam)
            outcomes.append(QueryOutcome(res.ids, res.dists,
                                         res.trace.calls_D, res.trace.calls_d))
        elif spec.name == "bimetric-baseline":
            row = d_or.distances_to_all(qid)
            order = np.lexsort((np.arange(dataset.n), row))
            shortlist = [int(i) for i in order[:Q]]
            vals = Dc.distance_many(qid, shortlist)
            ranked = sorted(zip(vals, shortlist))[:spec.k]
            outcomes.append(QueryOutcome([p for _, p in ranked],
                                         [v for v, _ in ranked],
                                         Dc.calls, dataset.n))
        else:
            trace = greedy_search(index, Dc, qid, [index.start_node],
                                  beam=None)
            top = trace.seen[:spec.k]
            outcomes.append(QueryOutcome([p for p, _ in top],
                                         [v for _, v in top],
                                         trace.calls_D, 0))
        if outcomes[-1].calls_D > Q:
            raise AssertionError(
                f"budget breached: {outcomes[-1].calls_D} expensive calls "
                f"with Q={Q}")
    return outcomes


def recall_at_k(result, truth, k: int) -> float:
    """Overlap fraction between the first k of result and of truth."""
    truth = list(truth)
    if k > len(truth):
        raise ValueError(f"k={k} exceeds truth list of length {len(truth)}")
    return len(set(result[:k]) & set(truth[:k])) / k


def ndcg_at_k(result, grades: dict, k: int) -> float:
    """Exponential-gain discounted cumulative gain, normalized.

    gain(i) = 2^grade - 1, discount log2(rank+1); ideal ranking from
    all graded docs sorted by grade. Returns 0 when no doc is graded.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    dcg = 0.0
    for i, doc in enumerate(result[:k], start=1):
        g = grades.get(doc, 0)
        if g:
            dcg += (2.0 ** g - 1.0) / math.log2(i + 1)
    ideal = sorted(grades.values(), reverse=True)[:k]
    idcg = sum((2.0 ** g - 1.0) / math.log2(i + 1)
               for i, g in enumerate(ideal, start=1) if g)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def truth_topk(dataset: BiMetricDataset, k: int, cache_dir=None):
    """Brute-force top-k under the expensive metric, ties by id.

    With cache_dir set, results are stored in a binary cache keyed by a
    hash of the truth-side embeddings.
    """
    if k > dataset.n:
        raise ValueError(f"k={k} exceeds corpus size {dataset.n}")
    path = None
    if cache_dir is not None:
        digest = hashlib.sha256()
        digest.update(dataset.corpus_truth.vectors.tobytes())
        digest.update(dataset.queries_truth.vectors.tobytes())
        digest.update(struct.pack("<i", k))
        path = os.path.join(cache_dir, f"bmgt_{digest.hexdigest()[:16]}.bin")
        if os.path.exists(path):
            return load_truth_cache(path)
    nq = dataset.n_queries
    ids = np.empty((nq, k), dtype=np.int32)
    dists = np.empty((nq, k), dtype=np.float64)
    Xq = dataset.queries_truth.vectors
    Xc = dataset.corpus_truth.vectors
    order_ids = np.arange(dataset.n)
    for qid in range(nq):
        row = _kernels.row_distances(Xq, qid, Xc)
        order = np.lexsort((order_ids, row))[:k]
        ids[qid] = order
        dists[qid] = row[order]
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        save_truth_cache(path, ids, dists)
    return ids, dists


def save_truth_cache(path, ids, dists) -> None:
    nq, k = ids.shape
    with open(path, "wb") as fh:
        fh.write(TRUTH_MAGIC)
        fh.write(struct.pack("<ii", nq, k))
        for qid in range(nq):
            for j in range(k):
                fh.write(struct.pack("<id", int(ids[qid, j]),
                                     float(dists[qid, j])))


def load_truth_cache(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TRUTH_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {TRUTH_MAGIC!r}")
        nq, k = struct.unpack("<ii", fh.read(8))
        ids = np.empty((nq, k), dtype=np.int32)
        dists = np.empty((nq, k), dtype=np.float64)
        for qid in range(nq):
            for j in range(k):
                ids[qid, j], dists[qid, j] = struct.unpack("<id", fh.read(12))
    return ids, dists


def generate_synthetic(n: int, n_queries: int = 50, dim: int = 6,
                       C: float = 3.0, seed: int = 0, k_qrels: int = 10,
                       good_axes: Optional[int] = None) -> BiMetricDataset:
    """Synthetic bi-metric instance with a controlled sandwich factor.

    Truth vectors are uniform in the unit ball; proxy vectors are the
    same points under a fixed random diagonal squeeze with entries in
    [1/C, 1], so both sides stay genuine Euclidean metrics and satisfy
    d <= D <= C*d. By default the squeeze entries are drawn uniformly
    (with the extremes pinned); good_axes=k instead keeps k random axes
    unsqueezed and pushes the rest to the bottom of the range, which
    displaces expensive-metric neighbors much further down the proxy
    ranking (the harder benchmark regime). Squeezed entries sit 2%
    above 1/C so float32 rounding can never break the sandwich on
    computed distances. Queries are held-out draws; qrels mark the true
    top-k under D with grade 1.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if C < 1:
        raise ValueError("C must be >= 1")
    if good_axes is not None and not 1 <= good_axes < dim:
        raise ValueError("good_axes must be in [1, dim)")
    rng = np.random.default_rng(seed)
    total = n + n_queries
    raw = rng.standard_normal((total, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = rng.random(total) ** (1.0 / dim)
    pts = (raw * radii[:, None]).astype(np.float32)

    low = min(1.0, 1.02 / C)
    if good_axes is None:
        squeeze = rng.uniform(low, 0.995, size=dim)
        squeeze[0] = low
        squeeze[1] = 1.0
    else:
        squeeze = np.full(dim, low)
        squeeze[rng.permutation(dim)[:good_axes]] = 1.0
    proxy = (pts.astype(np.float64) * squeeze).astype(np.float32)

    corpus_truth = EmbeddingSet(pts[:n])
    corpus_proxy = EmbeddingSet(proxy[:n])
    queries_truth = EmbeddingSet(pts[n:])
    queries_proxy = EmbeddingSet(proxy[n:])

    dataset = BiMetricDataset(corpus_proxy=corpus_proxy,
                              corpus_truth=corpus_truth,
                              queries_proxy=queries_proxy,
                              queries_truth=queries_truth, qrels={})
    ids, _ = truth_topk(dataset, min(k_qrels, n))
    qrels = {qid: {int(doc): 1 for doc in ids[qid]}
             for qid in range(n_queries)}
    return BiMetricDataset(corpus_proxy=corpus_proxy,
                           corpus_truth=corpus_truth,
                           queries_proxy=queries_proxy,
                           queries_truth=queries_truth, qrels=qrels)


def build_method_graphs(dataset: BiMetricDataset, methods, alpha=1.2, cap=64):
    """Graph indices the given methods need: proxy-built and/or truth-built."""
    graphs = {}
    names = {m.name if isinstance(m, MethodSpec) else m for m in methods}
    if names & {"bimetric-ours"}:
        graphs["proxy"] = build_alpha_graph(
            dataset.corpus_proxy, DistanceOracle(dataset.corpus_proxy, kind="proxy"),
            alpha=alpha, cap=cap)
    if "single-metric" in names:
        graphs["truth"] = build_alpha_graph(
            dataset.corpus_truth, DistanceOracle(dataset.corpus_truth, kind="truth"),
            alpha=alpha, cap=cap)
    return graphs


def _as_spec(method, k, start_mode):
    if isinstance(method, MethodSpec):
        return method
    return MethodSpec(name=method, start_mode=start_mode, k=k)


def sweep(dataset, methods, budgets, seeds=(0,), tag="dataset", *,
          alpha=1.2, cap=64, k=10, start_mode="half-budget",
          start_modes=None, stage1_beam=None, measure_time=False,
          cache_dir=None, graphs=None) -> list:
    """Run every (seed, method, budget) cell and aggregate over queries.

    dataset is either a BiMetricDataset or a callable seed -> dataset
    (each seed then gets its own instance and tag suffix). start_modes
    turns the sweep into the start-mode ablation: bimetric-ours is run
    once per mode and rows carry a start_mode value. wall_seconds is
    0.0 unless measure_time is set, keeping the CSV byte-deterministic.
    """
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be ascending")
    seeds = list(seeds)
    factory = dataset if callable(dataset) else None
    rows = []
    for seed in seeds:
        ds = factory(seed) if factory else dataset
        ds_tag = f"{tag}-s{seed}" if (factory or len(seeds) > 1) else tag
        if graphs is None or factory is not None:
            built = build_method_graphs(ds, methods, alpha=alpha, cap=cap)
        else:
            built = graphs
        truth_ids, _ = truth_topk(ds, k, cache_dir=cache_dir)
        cells = []
        for method in methods:
            if start_modes:
                spec0 = _as_spec(method, k, start_mode)
                if spec0.name == "bimetric-ours":
                    cells.extend(MethodSpec("bimetric-ours", mode, k)
                                 for mode in start_modes)
                else:
                    cells.append(spec0)
            else:
                cells.append(_as_spec(method, k, start_mode))
        for spec in cells:
            index = built.get("truth" if spec.name == "single-metric" else "proxy")
            for Q in budgets:
                t0 = time.perf_counter()
                outs = run_method(ds, index, spec, Q, stage1_beam=stage1_beam)
                wall = time.perf_counter() - t0 if measure_time else 0.0
                mean_D = sum(o.calls_D for o in outs) / len(outs)
                mean_d = sum(o.calls_d for o in outs) / len(outs)
                if mean_D > Q:
                    raise AssertionError(
                        f"budget breached in aggregate: {mean_D} > {Q}")
                rec = sum(recall_at_k(o.ids, truth_ids[qid], k)
                          for qid, o in enumerate(outs)) / len(outs)
                ndcg = sum(ndcg_at_k(o.ids, ds.qrels.get(qid, {}), k)
                           for qid, o in enumerate(outs)) / len(outs)
                rows.append(SweepRow(
                    dataset=ds_tag, method=spec.name, Q=Q,
                    ndcg_at_10=ndcg, recall_at_10=rec,
                    mean_calls_D=mean_D, mean_calls_d=mean_d,
                    wall_seconds=wall,
                    start_mode=spec.start_mode if start_modes else None))
    return rows


def rows_to_csv(rows, path=None) -> str:
    """Serialize sweep rows; ablation rows add a start_mode column."""
    ablation = any(r.start_mode is not None for r in rows)
    header = list(CSV_HEADER)
    if ablation:
        header.insert(2, "start_mode")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        rec = [r.dataset, r.method, r.Q, r.ndcg_at_10, r.recall_at_10,
               r.mean_calls_D, r.mean_calls_d, r.wall_seconds]
        if ablation:
            rec.insert(2, r.start_mode or "")
        writer.writerow(rec)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
