"""Distance oracles, call counting with budgets, and sandwich-bound checks.

The cost model counts evaluations of the expensive metric; the budget
is a hard per-query cap. Memoization is on by default for the expensive
oracle (a cached pair re-read is free in any real system) and off for
the cheap one.
"""

from __future__ import annotations

import itertools
import json
import math
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .dataset import EmbeddingSet

__all__ = [
    "DistanceOracle",
    "CountingOracle",
    "BudgetExhausted",
    "ApproxReport",
    "RescaleResult",
    "validate_c_approx",
    "rescale_proxy",
]


class BudgetExhausted(RuntimeError):
    """Raised when an evaluation would exceed the oracle's budget.

    calls is the counter at raise time (== budget); partial holds the
    (id, distance) prefix that fit the budget during a batch request.
    """

    def __init__(self, calls, partial=()):
        super().__init__(f"distance budget exhausted after {calls} calls")
        self.calls = calls
        self.partial = list(partial)


def _as_matrix(space) -> np.ndarray:
    if isinstance(space, EmbeddingSet):
        return space.vectors
    m = np.ascontiguousarray(np.asarray(space, dtype=np.float32))
    if m.ndim != 2:
        raise ValueError("expected a 2-D float32 matrix")
    return m


class DistanceOracle:
    """Euclidean distance over a corpus, optionally from a query side.

    With queries=None the left argument indexes the corpus itself and
    the oracle is symmetric. scale multiplies every returned value
    (used to align a proxy metric with the truth metric).
    """

    def __init__(self, corpus, queries=None, kind="proxy", scale=1.0):
        if kind not in ("proxy", "truth"):
            raise ValueError(f"kind must be proxy or truth, got {kind!r}")
        self.corpus = _as_matrix(corpus)
        self.queries = None if queries is None else _as_matrix(queries)
        if self.queries is not None and self.queries.shape[1] != self.corpus.shape[1]:
            raise ValueError("query and corpus dims differ")
        self.kind = kind
        self.scale = float(scale)

    @property
    def n(self) -> int:
        return self.corpus.shape[0]

    @property
    def left_count(self) -> int:
        return self.n if self.queries is None else self.queries.shape[0]

    def _left(self) -> np.ndarray:
        return self.corpus if self.queries is None else self.queries

    def _check(self, a, b):
        if not 0 <= a < self.left_count:
            raise IndexError(f"left id {a} out of range [0, {self.left_count})")
        if not 0 <= b < self.n:
            raise IndexError(f"corpus id {b} out of range [0, {self.n})")

    def distance(self, a, b) -> float:
        self._check(a, b)
        return float(_kernels.pair_distance(self._left(), a, self.corpus, b)) * self.scale

    def distances_to_all(self, a) -> np.ndarray:
        if not 0 <= a < self.left_count:
            raise IndexError(f"left id {a} out of range [0, {self.left_count})")
        return _kernels.row_distances(self._left(), a, self.corpus) * self.scale

    def distances_to(self, a, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            raise IndexError("corpus id out of range")
        return _kernels.gather_distances(self._left(), a, self.corpus, ids) * self.scale

    def with_scale(self, scale) -> "DistanceOracle":
        out = DistanceOracle.__new__(DistanceOracle)
        out.corpus, out.queries, out.kind = self.corpus, self.queries, self.kind
        out.scale = float(scale)
        return out


class CountingOracle:
    """Counts (and optionally caps) evaluations of an inner oracle.

    With memo on, a repeated identical pair is served from cache and
    counted exactly once. The budget check-and-increment is a single
    atomic unit under a lock, so calls can never exceed the budget
    even with concurrent callers.
    """

    def __init__(self, inner: DistanceOracle, budget=None, memo=True):
        if budget is not None and budget < 0:
            raise ValueError("budget must be non-negative")
        self.inner = inner
        self.budget = budget
        self.calls = 0
        self.memo = {} if memo else None
        self._lock = threading.Lock()

    @property
    def kind(self):
        return self.inner.kind

    def remaining(self):
        if self.budget is None:
            return math.inf
        return self.budget - self.calls

    def _key(self, a, b):
        if self.inner.queries is None and a > b:
            return (b, a)
        return (a, b)

    def distance(self, a, b) -> float:
        with self._lock:
            if self.memo is not None:
                key = self._key(a, b)
                hit = self.memo.get(key)
                if hit is not None:
                    return hit
            if self.remaining() < 1:
                raise BudgetExhausted(self.calls)
            value = self.inner.distance(a, b)
            self.calls += 1
            if self.memo is not None:
                self.memo[key] = value
            return value

    def distance_many(self, a, ids, max_new=None) -> np.ndarray:
        """Distances from left-id a to corpus ids, left to right.

        Memoized ids are free. If the budget (or max_new) cannot cover
        the non-memoized ids, the longest affordable prefix is
        evaluated and BudgetExhausted is raised with that prefix in
        .partial.
        """
        ids = [int(b) for b in ids]
        with self._lock:
            vals = np.empty(len(ids), dtype=np.float64)
            missing = []
            for pos, b in enumerate(ids):
                if self.memo is not None:
                    hit = self.memo.get(self._key(a, b))
                    if hit is not None:
                        vals[pos] = hit
                        continue
                missing.append(pos)
            allowed = self.remaining()
            if max_new is not None:
                allowed = min(allowed, max_new)
            allowed = max(allowed, 0)
            if len(missing) > allowed:
                allowed = int(allowed)
                cut = missing[:allowed]
                boundary = missing[allowed]
                self._fill(a, ids, vals, cut)
                partial = [(ids[p], vals[p]) for p in range(boundary)]
                raise BudgetExhausted(self.calls, partial)
            self._fill(a, ids, vals, missing)
            return vals

    def _fill(self, a, ids, vals, positions):
        if not positions:
            return
        want = np.asarray([ids[p] for p in positions], dtype=np.int64)
        got = self.inner.distances_to(a, want)
        for p, b, v in zip(positions, want, got):
            vals[p] = float(v)
            if self.memo is not None:
                self.memo[self._key(a, int(b))] = float(v)
        self.calls += len(positions)


@dataclass(frozen=True)
class ApproxReport:
    """Outcome of checking d <= D <= C*d over a set of pairs.

    c_required is the smallest factor that would make the sandwich hold
    on the checked pairs (math.inf when some pair has d == 0 < D).
    """

    c_required: float
    violations: list
    pairs_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        c = self.c_required
        return json.dumps({
            "c_required": None if math.isinf(c) else c,
            "c_required_finite": not math.isinf(c),
            "violations": [
                {"x": x, "y": y, "d": dv, "D": Dv}
                for x, y, dv, Dv in self.violations[:50]
            ],
            "violation_count": len(self.violations),
            "pairs_checked": self.pairs_checked,
        })


def _resolve_pairs(n, pairs, seed):
    if pairs is None:
        return list(itertools.combinations(range(n), 2))
    if isinstance(pairs, int):
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=pairs)
        jj = rng.integers(0, n, size=pairs)
        return [(int(i), int(j)) for i, j in zip(ii, jj) if i != j]
    return [(int(i), int(j)) for i, j in pairs]


def validate_c_approx(d: DistanceOracle, D: DistanceOracle, C: float,
                      pairs=None, seed=0) -> ApproxReport:
    """Check the sandwich d(x,y) <= D(x,y) <= C*d(x,y) pairwise.

    pairs: None for all corpus pairs, an int for that many sampled
    pairs, or an explicit iterable of (x, y).
    """
    if C < 1:
        raise ValueError(f"C must be >= 1, got {C}")
    if d.n != D.n:
        raise ValueError("oracles cover different corpus sizes")
    checked = _resolve_pairs(d.n, pairs, seed)
    violations = []
    c_required = 1.0
    for x, y in checked:
        dv = d.distance(x, y)
        Dv = D.distance(x, y)
        if dv == 0.0:
            if Dv > 0.0:
                c_required = math.inf
                violations.append((x, y, dv, Dv))
            continue
        need = max(Dv / dv, dv / Dv) if Dv > 0 else math.inf
        c_required = max(c_required, need)
        if not (dv <= Dv <= C * dv):
            violations.append((x, y, dv, Dv))
    return ApproxReport(c_required=c_required, violations=violations,
                        pairs_checked=len(checked))


class RescaleResult(NamedTuple):
    scale: float
    c_hat: float


def rescale_proxy(d: DistanceOracle, D: DistanceOracle, pairs=5000,
                  seed=0) -> RescaleResult:
    """Scale factor s with s*d <= D on the sampled pairs.

    Real embedding pairs satisfy only a ratio bound, not d <= D; after
    multiplying d by s the sandwich lower side holds on the sample, and
    c_hat = (max D/d) / (min D/d) is the factor the upper side needs.
    Rankings are unaffected: every consumer compares d only to d.
    """
    if d.n != D.n:
        raise ValueError("oracles cover different corpus sizes")
    checked = _resolve_pairs(d.n, pairs, seed)
    ratios = []
    for x, y in checked:
        dv = d.distance(x, y)
        if dv == 0.0:
            continue
        ratios.append(D.distance(x, y) / dv)
    if not ratios:
        raise ValueError("no sampled pair with nonzero proxy distance")
    lo, hi = min(ratios), max(ratios)
    return RescaleResult(scale=lo, c_hat=hi / lo)
