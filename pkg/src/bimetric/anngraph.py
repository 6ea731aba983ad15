"""Shortcut-reachable proximity graphs and budgeted greedy search.

The builder prunes each node's candidate list under the cheap metric so
that every non-neighbor q of p has some kept neighbor p' with
alpha * d(p', q) <= d(p, q). Searches run the classic greedy loop under
whichever oracle they are handed; the two-stage search seeds an
expensive-metric search with cheap-metric candidates.
"""

from __future__ import annotations

import heapq
import struct
from bisect import insort
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels
from .dataset import EmbeddingSet
from .metric import BudgetExhausted, CountingOracle, DistanceOracle

__all__ = [
    "ReachabilityGraph",
    "SearchTrace",
    "VerifyResult",
    "TwoStageResult",
    "build_alpha_graph",
    "verify_shortcut_reachability",
    "greedy_search",
    "two_stage_search",
    "save_graph",
    "load_graph",
]

GRAPH_MAGIC = b"BMAG"
GRAPH_VERSION = 1
VERIFY_LIMIT = 2000


@dataclass
class ReachabilityGraph:
    """Directed adjacency lists plus the entry point (medoid).

    Uncapped builds satisfy shortcut reachability at their alpha; capped
    builds are the benchmark-grade variant with no such guarantee.
    """

    n: int
    alpha: float
    adjacency: list
    max_outdegree_cap: Optional[int] = None
    start_node: int = 0
    built_on: Optional[str] = field(default=None, compare=False)

    def neighbors(self, p) -> np.ndarray:
        return self.adjacency[p]

    @property
    def max_outdegree(self) -> int:
        return max((len(a) for a in self.adjacency), default=0)

    @property
    def mean_outdegree(self) -> float:
        if self.n == 0:
            return 0.0
        return sum(len(a) for a in self.adjacency) / self.n


@dataclass
class SearchTrace:
    """Expanded vertices in ascending distance order plus call counts.

    visited holds (node, distance) for expanded vertices; seen also
    includes evaluated-but-unexpanded frontier nodes. expansion_order is
    chronological.
    """

    visited: list
    calls_d: int = 0
    calls_D: int = 0
    terminated_by: str = "frontier-exhausted"
    seen: list = field(default_factory=list)
    expansion_order: list = field(default_factory=list)


class VerifyResult(NamedTuple):
    ok: bool
    counterexample: Optional[tuple]


class TwoStageResult(NamedTuple):
    ids: list
    dists: list
    trace: SearchTrace


def _oracle_for(points, d) -> DistanceOracle:
    if d is None:
        return DistanceOracle(points, kind="proxy")
    if d.queries is not None:
        raise ValueError("build metric must be corpus-to-corpus (queries=None)")
    return d


def build_alpha_graph(points, d: Optional[DistanceOracle] = None, *,
                      alpha: float, cap: Optional[int] = None) -> ReachabilityGraph:
    """Pruned-scan graph build under the metric d.

    For each node p all other points are scanned in ascending
    (d(p, q), q) order; q joins N(p) unless some kept p' already covers
    it (alpha * d(p', q) <= d(p, q)). With cap set the scan stops once
    cap neighbors are kept (practical mode, no reachability guarantee).
    Exact duplicate points must be collapsed beforehand.
    """
    if alpha <= 1:
        raise ValueError(f"alpha must be > 1, got {alpha}")
    if cap is not None and cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    oracle = _oracle_for(points, d)
    X = oracle.corpus
    n = X.shape[0]
    if isinstance(points, EmbeddingSet) and points.count != n:
        raise ValueError("points and metric disagree on corpus size")
    if n == 0:
        return ReachabilityGraph(n=0, alpha=alpha, adjacency=[],
                                 max_outdegree_cap=cap, start_node=-1,
                                 built_on=oracle.kind)
    adj, deg, rowsum, dup = _kernels.build_pruned_adjacency(
        X, float(alpha), 0 if cap is None else int(cap), oracle.scale)
    bad = np.flatnonzero(dup >= 0)
    if bad.size:
        p = int(bad[0])
        raise ValueError(
            f"exact duplicate points (e.g. {p} and {int(dup[p])}); collapse "
            "duplicates before building")
    adjacency = [np.sort(adj[p, :deg[p]]).astype(np.int32) for p in range(n)]
    start = int(np.argmin(rowsum))
    return ReachabilityGraph(n=n, alpha=float(alpha), adjacency=adjacency,
                             max_outdegree_cap=cap, start_node=start,
                             built_on=oracle.kind)


def verify_shortcut_reachability(graph: ReachabilityGraph,
                                 metric: DistanceOracle,
                                 alpha: float) -> VerifyResult:
    """Exhaustive reachability check at the given alpha.

    True iff for every ordered pair (p, q), p != q, either (p, q) is an
    edge or some neighbor p' of p has metric(p', q) * alpha <= metric(p, q).
    The counterexample is the lexicographically first failing pair.
    """
    n = graph.n
    if n > VERIFY_LIMIT:
        raise ValueError(f"verification is quadratic; n={n} exceeds {VERIFY_LIMIT}")
    if metric.queries is not None:
        raise ValueError("verification metric must be corpus-to-corpus")
    if n <= 1:
        return VerifyResult(True, None)
    M = np.empty((n, n), dtype=np.float64)
    for p in range(n):
        M[p] = _kernels.row_distances(metric.corpus, p, metric.corpus)
    M *= metric.scale
    for p in range(n):
        ok = np.zeros(n, dtype=bool)
        ok[p] = True
        nbrs = graph.adjacency[p]
        if len(nbrs):
            ok[nbrs] = True
            shortcut = alpha * M[nbrs].min(axis=0) <= M[p]
            ok |= shortcut
        if not ok.all():
            q = int(np.argmin(ok))
            return VerifyResult(False, (p, q))
    return VerifyResult(True, None)


def _dedup_keep_order(ids):
    return list(dict.fromkeys(int(i) for i in ids))


def greedy_search(graph: ReachabilityGraph, oracle: CountingOracle, q,
                  starts, beam: Optional[int] = None,
                  budget: Optional[int] = None) -> SearchTrace:
    """Greedy/beam search under the oracle from the given start nodes.

    Keeps the candidate set trimmed to the best `beam` vertices by
    (distance, id); beam=None leaves it unbounded (pure best-first until
    the frontier empties). `budget` caps the oracle calls made by this
    search on top of any budget the oracle itself carries; running out
    of budget keeps partially evaluated neighbors and stops.
    """
    starts = _dedup_keep_order(starts)
    if not starts:
        raise ValueError("starts must be non-empty")
    if beam is not None and beam < 1:
        raise ValueError(f"beam must be >= 1, got {beam}")
    for s in starts:
        if not 0 <= s < graph.n:
            raise ValueError(f"start node {s} out of range")

    calls0 = oracle.calls
    spent = lambda: oracle.calls - calls0
    seen: dict = {}
    truncated = False

    def evaluate(ids):
        nonlocal truncated
        new = [u for u in ids if u not in seen]
        if not new:
            return []
        max_new = None if budget is None else max(0, budget - spent())
        try:
            vals = oracle.distance_many(q, new, max_new=max_new)
        except BudgetExhausted as exc:
            truncated = True
            out = []
            for u, v in exc.partial:
                seen[u] = v
                out.append((u, v))
            return out
        out = []
        for u, v in zip(new, vals):
            seen[u] = float(v)
            out.append((u, float(v)))
        return out

    heap = []
    for u, v in evaluate(starts):
        heapq.heappush(heap, (v, u))

    vis: list = []
    expansion_order: list = []
    while heap and not truncated:
        head = heap[0]
        if beam is not None and len(vis) >= beam and not (head < vis[beam - 1]):
            break
        heapq.heappop(heap)
        dist_v, v = head
        insort(vis, (dist_v, v))
        expansion_order.append(v)
        for u, val in evaluate([int(u) for u in graph.adjacency[v]]):
            heapq.heappush(heap, (val, u))

    trace = SearchTrace(
        visited=[(node, dist) for dist, node in vis],
        terminated_by="budget" if truncated else "frontier-exhausted",
        seen=[(node, dist) for dist, node in sorted((d, u) for u, d in seen.items())],
        expansion_order=expansion_order,
    )
    delta = oracle.calls - calls0
    if oracle.kind == "truth":
        trace.calls_D = delta
    else:
        trace.calls_d = delta
    return trace


START_MODES = ("half-budget", "fixed-k", "default-entry")


def two_stage_search(graph: ReachabilityGraph, d: DistanceOracle,
                     D, q, quota: int, k: int,
                     start_mode: str = "half-budget",
                     start_k: Optional[int] = None,
                     stage1_beam: Optional[int] = None) -> TwoStageResult:
    """Cheap-metric candidate harvest, then expensive-metric graph search.

    Stage 1 ranks the corpus under d (exact scan by default; pass
    stage1_beam for a beam-searched approximation) and is not charged
    against the quota. Stage 2 greedy-searches under D starting from the
    harvested candidates; start-point evaluations do count, and running
    out of quota is the normal stopping rule. Returns the k closest
    points seen under D.
    """
    if quota < k:
        raise ValueError(f"quota {quota} smaller than result size {k}")
    if start_mode not in START_MODES:
        raise ValueError(f"start_mode must be one of {START_MODES}")
    if graph.n == 0:
        raise ValueError("empty graph")

    calls_d = 0
    if start_mode == "default-entry":
        starts = [graph.start_node]
    else:
        if start_mode == "half-budget":
            want = max(100, quota // 2)
        else:
            if start_k is None or start_k < 1:
                raise ValueError("fixed-k start mode needs start_k >= 1")
            want = start_k
        want = min(want, graph.n)
        if stage1_beam is None:
            row = d.distances_to_all(q)
            calls_d = graph.n
            order = np.lexsort((np.arange(graph.n), row))
            starts = [int(i) for i in order[:want]]
        else:
            d_count = CountingOracle(d, budget=None, memo=False)
            probe = greedy_search(graph, d_count, q, [graph.start_node],
                                  beam=stage1_beam)
            calls_d = d_count.calls
            starts = [node for node, _ in probe.seen[:want]]
            if not starts:
                starts = [graph.start_node]

    if not isinstance(D, CountingOracle):
        D = CountingOracle(D, budget=quota, memo=True)
    # The oracle's own budget is the single enforcement point; the local
    # cap only steps in when the caller handed over an unbudgeted oracle.
    local_budget = quota if D.budget is None else None
    trace = greedy_search(graph, D, q, starts, beam=None, budget=local_budget)
    trace.calls_d += calls_d
    top = trace.seen[:k]
    return TwoStageResult(ids=[node for node, _ in top],
                          dists=[dist for _, dist in top],
                          trace=trace)


def save_graph(graph: ReachabilityGraph, path) -> None:
    """Fixed little-endian layout; identical builds give identical bytes."""
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(struct.pack("<iidii", GRAPH_VERSION, graph.n, graph.alpha,
                             0 if graph.max_outdegree_cap is None
                             else graph.max_outdegree_cap,
                             graph.start_node))
        for row in graph.adjacency:
            fh.write(struct.pack("<i", len(row)))
            fh.write(np.asarray(row, dtype="<i4").tobytes())


def load_graph(path) -> ReachabilityGraph:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != GRAPH_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {GRAPH_MAGIC!r}")
        version, n, alpha, cap, start = struct.unpack(
            "<iidii", fh.read(struct.calcsize("<iidii")))
        if version != GRAPH_VERSION:
            raise ValueError(f"unsupported graph version {version}")
        adjacency = []
        for _ in range(n):
            (deg,) = struct.unpack("<i", fh.read(4))
            row = np.frombuffer(fh.read(4 * deg), dtype="<i4").astype(np.int32)
            adjacency.append(row)
        tail = fh.read(1)
        if tail:
            raise ValueError("trailing bytes after adjacency data")
    return ReachabilityGraph(n=n, alpha=alpha, adjacency=adjacency,
                             max_outdegree_cap=None if cap == 0 else cap,
                             start_node=start)
