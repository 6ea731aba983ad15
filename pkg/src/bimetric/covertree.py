"""Leveled nested covers with a coalesced explicit tree, built on the
cheap metric and queried under the expensive one.

Level i holds a cover of level i-1 at radius 2^i / T in scaled units
(distances divided by the closest-pair distance so everything lands in
(1, diameter-ratio]). Shrinking the radii by the slack factor T is what
lets a tree built on a T-approximate proxy answer queries accurately
under the true metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import EmbeddingSet
from .metric import BudgetExhausted, CountingOracle, DistanceOracle

__all__ = [
    "CoverTree",
    "TreeNode",
    "CoverSearchResult",
    "build_cover",
    "build_cover_tree",
    "cover_tree_search",
    "verify_cover_tree",
    "save_tree",
    "load_tree",
]

EXACT_SCALE_LIMIT = 2000
SCALE_GUARD = 1 + 1e-9


@dataclass
class TreeNode:
    """One coalesced run of levels for a point.

    The span [lo, hi] covers the levels this node stands for; children
    are explicit nodes entering at level lo - 1 (including the point's
    own continuation run, if any).
    """

    point: int
    lo: int
    hi: int
    parent: int = -1
    children: list = field(default_factory=list)


@dataclass
class CoverTree:
    T: float
    scale: float
    top: int
    n: int
    nodes: list
    root: int
    scale_exact: bool = True
    # Per-point views derived from nodes; rebuilt on load.
    _enter: np.ndarray = field(default=None, repr=False, compare=False)
    _parent_point: np.ndarray = field(default=None, repr=False, compare=False)
    _kids: dict = field(default=None, repr=False, compare=False)

    def level_radius(self, i: int) -> float:
        return 2.0 ** i / self.T

    def enter_level(self, p: int) -> int:
        return int(self._enter[p])

    def children_entering(self, p: int, level: int) -> list:
        return self._kids.get(p, {}).get(level, [])

    def level_set(self, i: int) -> np.ndarray:
        """Points present in the cover at level i (i <= top)."""
        return np.flatnonzero(self._enter >= i)


@dataclass(frozen=True)
class CoverSearchResult:
    point: int
    distance: float
    calls_D: int
    exit: str


def build_cover(points, r: float, d: DistanceOracle) -> list:
    """Greedy cover of the given corpus ids at radius r.

    Scans in ascending id; each scanned point removes everything within
    r (inclusive) and joins the cover. Every input point ends up within
    r of the cover and cover points are pairwise more than r apart.
    """
    if r <= 0:
        raise ValueError(f"radius must be positive, got {r}")
    remaining = np.sort(np.asarray(list(points), dtype=np.int64))
    kept = []
    while remaining.size:
        x = int(remaining[0])
        kept.append(x)
        dists = d.distances_to(x, remaining)
        remaining = remaining[dists > r]
    return kept


def build_cover_tree(points, d: Optional[DistanceOracle] = None, *,
                     T: float = 1.0) -> CoverTree:
    """Construct the full level hierarchy and coalesce it.

    Distances are scaled so the closest pair sits just above 1 (exact
    closest pair up to EXACT_SCALE_LIMIT points, sampled with a 0.5x
    safety factor beyond, flagged via scale_exact). Levels grow until a
    cover becomes a singleton. Exact duplicates must be collapsed first.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if d is None:
        d = DistanceOracle(points, kind="proxy")
    if d.queries is not None:
        raise ValueError("build metric must be corpus-to-corpus")
    n = d.n
    if isinstance(points, EmbeddingSet) and points.count != n:
        raise ValueError("points and metric disagree on corpus size")
    if n == 0:
        return CoverTree(T=float(T), scale=1.0, top=-1, n=0, nodes=[], root=-1)

    scale, scale_exact, zero_diameter = _pick_scale(d)
    if n == 1 or zero_diameter:
        node = TreeNode(point=0, lo=-1, hi=0, parent=-1, children=[])
        tree = CoverTree(T=float(T), scale=scale, top=0, n=n, nodes=[node],
                         root=0, scale_exact=scale_exact)
        _attach_views(tree)
        return tree

    ds = d.with_scale(d.scale * scale)
    enter = np.zeros(n, dtype=np.int64)
    parent_point = np.full(n, -1, dtype=np.int64)

    prev = list(range(n))
    level = 0
    while len(prev) > 1:
        level += 1
        if level > 64:
            raise RuntimeError("cover hierarchy failed to terminate")
        radius = 2.0 ** level / T
        cover = build_cover(prev, radius, ds)
        cover_arr = np.asarray(cover, dtype=np.int64)
        in_cover = set(cover)
        for p in prev:
            if p in in_cover:
                continue
            dvals = ds.distances_to(p, cover_arr)
            best = int(np.lexsort((cover_arr, dvals))[0])
            enter[p] = level - 1
            parent_point[p] = int(cover_arr[best])
        prev = cover
    top = level
    root_point = prev[0]
    enter[root_point] = top

    nodes, root = _coalesce(n, enter, parent_point, root_point)
    tree = CoverTree(T=float(T), scale=scale, top=top, n=n, nodes=nodes,
                     root=root, scale_exact=scale_exact)
    _attach_views(tree)
    return tree


def _pick_scale(d: DistanceOracle):
    n = d.n
    if n <= EXACT_SCALE_LIMIT:
        lo, hi, zeros = np.inf, 0.0, False
        for p in range(n - 1):
            row = d.distances_to(p, np.arange(p + 1, n))
            nonzero = row[row > 0]
            zeros |= nonzero.size < row.size
            if nonzero.size:
                lo = min(lo, float(nonzero.min()))
                hi = max(hi, float(row.max()))
        if hi == 0.0:
            return 1.0, True, True
        if zeros:
            raise ValueError("exact duplicate points; collapse duplicates first")
        return 1.0 / (lo * SCALE_GUARD), True, False
    rng = np.random.default_rng(0)
    lo = np.inf
    hi = 0.0
    for a in rng.integers(0, n, size=2000):
        ids = rng.integers(0, n, size=100)
        row = d.distances_to(int(a), ids[ids != a])
        nonzero = row[row > 0]
        if nonzero.size:
            lo = min(lo, float(nonzero.min()))
            hi = max(hi, float(row.max()))
    if hi == 0.0:
        return 1.0, False, True
    return 1.0 / (0.5 * lo * SCALE_GUARD), False, False


def _coalesce(n, enter, parent_point, root_point):
    attach_levels: dict = {}
    for c in range(n):
        pp = parent_point[c]
        if pp < 0:
            continue
        attach_levels.setdefault(int(pp), set()).add(int(enter[c]) + 1)

    nodes = []
    top_node_of = {}
    segments_of = {}
    for p in range(n):
        levels = sorted(attach_levels.get(p, ()), reverse=True)
        hi = int(enter[p])
        segs = []
        for a in levels:
            segs.append(TreeNode(point=p, lo=a, hi=hi))
            hi = a - 1
        segs.append(TreeNode(point=p, lo=-1, hi=hi))
        first = len(nodes)
        nodes.extend(segs)
        top_node_of[p] = first
        segments_of[p] = list(range(first, first + len(segs)))

    def segment_containing(p, level):
        for idx in segments_of[p]:
            if nodes[idx].lo <= level <= nodes[idx].hi:
                return idx
        raise AssertionError(f"no segment of point {p} covers level {level}")

    for p in range(n):
        segs = segments_of[p]
        if p == root_point:
            nodes[segs[0]].parent = -1
        else:
            nodes[segs[0]].parent = segment_containing(
                int(parent_point[p]), int(enter[p]) + 1)
        for j in range(1, len(segs)):
            nodes[segs[j]].parent = segs[j - 1]
    for idx, node in enumerate(nodes):
        if node.parent >= 0:
            nodes[node.parent].children.append(idx)
    return nodes, top_node_of[root_point]


def _attach_views(tree: CoverTree) -> None:
    n = tree.n
    enter = np.full(n, -(10 ** 9), dtype=np.int64)
    parent_point = np.full(n, -1, dtype=np.int64)
    kids: dict = {}
    top_of = {}
    for idx, node in enumerate(tree.nodes):
        p = node.point
        if node.hi > enter[p]:
            enter[p] = node.hi
            top_of[p] = idx
    for p, idx in top_of.items():
        parent = tree.nodes[idx].parent
        if parent >= 0:
            pp = tree.nodes[parent].point
            parent_point[p] = pp
            kids.setdefault(pp, {}).setdefault(int(enter[p]), []).append(p)
    for level_map in kids.values():
        for lst in level_map.values():
            lst.sort()
    tree._enter = enter
    tree._parent_point = parent_point
    tree._kids = kids


def cover_tree_search(tree: CoverTree, D, q, eps: float) -> CoverSearchResult:
    """Descend the levels under the query oracle.

    At each level the children of the kept set are filtered to those
    within 2^i of the best, and the descent exits early once the best
    distance reaches 2^i * (1 + 1/eps) in scaled units. With the tree's
    slack T covering the proxy/truth gap, the returned point is a
    (1 + eps)-approximate nearest neighbor under the query oracle.
    Budget exhaustion returns the best point evaluated so far, flagged.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if tree.n == 0 or tree.root < 0:
        raise ValueError("empty tree")
    if not isinstance(D, CountingOracle):
        D = CountingOracle(D, budget=None, memo=True)

    raw: dict = {}
    evals = 0

    def lookup(p):
        nonlocal evals
        if p not in raw:
            raw[p] = D.distance(q, p)
            evals += 1
        return raw[p] * tree.scale

    root_point = tree.nodes[tree.root].point
    current = [root_point]
    exit_kind = "singleton"
    try:
        lookup(root_point)
        i = tree.top
        while i != -1:
            cand = set(current)
            for p in current:
                cand.update(tree.children_entering(p, i - 1))
            cand = sorted(cand)
            vals = [lookup(p) for p in cand]
            best = min(vals)
            threshold = best + 2.0 ** i
            kept = [p for p, v in zip(cand, vals) if v <= threshold]
            current = kept
            if min(lookup(p) for p in kept) >= 2.0 ** i * (1 + 1 / eps):
                exit_kind = "early-exit"
                break
            i -= 1
    except BudgetExhausted:
        exit_kind = "truncated"
        if not raw:
            raise
        best_p = min(raw, key=lambda p: (raw[p], p))
        return CoverSearchResult(point=best_p, distance=raw[best_p],
                                 calls_D=evals, exit=exit_kind)

    best_p = min(current, key=lambda p: (raw[p], p))
    return CoverSearchResult(point=best_p, distance=raw[best_p],
                             calls_D=evals, exit=exit_kind)


def verify_cover_tree(tree: CoverTree, d: DistanceOracle,
                      D: Optional[DistanceOracle] = None) -> list:
    """Structural invariant check; returns a list of violation strings.

    Checks nesting (spans tile [-1, enter] contiguously), covering
    (parent within 2^(enter+1)/T), separation (> 2^i/T inside each
    level), the 2n-1 explicit-node bound, and the descendant bound
    (2^(a+1)/T under d from the subtree hanging at attach level a, and
    2^(a+1) under D when one is supplied).
    """
    out = []
    n = tree.n
    if n == 0:
        return out
    ds = d.with_scale(d.scale * tree.scale)
    if len(tree.nodes) > 2 * n - 1:
        out.append(f"node count {len(tree.nodes)} exceeds 2n-1 = {2 * n - 1}")

    spans: dict = {}
    for node in tree.nodes:
        spans.setdefault(node.point, []).append((node.lo, node.hi))
    for p, segs in spans.items():
        segs.sort()
        if segs[0][0] != -1:
            out.append(f"point {p}: spans do not reach level -1")
        for (lo1, hi1), (lo2, hi2) in zip(segs, segs[1:]):
            if lo2 != hi1 + 1:
                out.append(f"point {p}: span gap/overlap at level {hi1}")
        if segs[-1][1] != tree.enter_level(p):
            out.append(f"point {p}: top span != enter level")

    for p in range(n):
        pp = int(tree._parent_point[p])
        if pp < 0:
            continue
        a = tree.enter_level(p) + 1
        dist = ds.distance(pp, p)
        if dist > tree.level_radius(a):
            out.append(
                f"covering violated: point {p} is {dist:.6g} from parent {pp}, "
                f"radius {tree.level_radius(a):.6g} at level {a}")
        if tree.enter_level(pp) < a:
            out.append(f"nesting violated: parent {pp} absent at level {a}")

    for i in range(1, tree.top + 1):
        members = np.flatnonzero(tree._enter >= i)
        if members.size < 2:
            continue
        r = tree.level_radius(i)
        for idx, p in enumerate(members[:-1]):
            dvals = ds.distances_to(int(p), members[idx + 1:])
            bad = np.flatnonzero(dvals <= r)
            if bad.size:
                qpt = int(members[idx + 1 + bad[0]])
                out.append(
                    f"separation violated at level {i}: points {int(p)} and "
                    f"{qpt} are {float(dvals[bad[0]]):.6g} apart, need > {r:.6g}")
                break

    Ds = None if D is None else D.with_scale(D.scale * tree.scale)
    for p in range(n):
        for a_level, children in tree._kids.get(p, {}).items():
            a = a_level + 1
            bound = tree.level_radius(a + 1)
            stack = list(children)
            desc = []
            while stack:
                c = stack.pop()
                desc.append(c)
                for lst in tree._kids.get(c, {}).values():
                    stack.extend(lst)
            for c in desc:
                dist = ds.distance(p, c)
                if dist > bound:
                    out.append(
                        f"descendant bound violated: {p} -> {c} is "
                        f"{dist:.6g} > {bound:.6g} (attach level {a})")
                if Ds is not None:
                    Dv = Ds.distance(p, c)
                    if Dv > bound * tree.T:
                        out.append(
                            f"descendant bound under query metric violated: "
                            f"{p} -> {c} is {Dv:.6g} > {bound * tree.T:.6g}")
    return out


def save_tree(tree: CoverTree, path) -> None:
    doc = {
        "T": tree.T,
        "scale": tree.scale,
        "t": tree.top,
        "n": tree.n,
        "scale_exact": tree.scale_exact,
        "root": tree.root,
        "nodes": [
            {"point": nd.point, "lo": nd.lo, "hi": nd.hi,
             "parent": nd.parent, "children": nd.children}
            for nd in tree.nodes
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_tree(path) -> CoverTree:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    nodes = [TreeNode(point=nd["point"], lo=nd["lo"], hi=nd["hi"],
                      parent=nd["parent"], children=list(nd["children"]))
             for nd in doc["nodes"]]
    tree = CoverTree(T=doc["T"], scale=doc["scale"], top=doc["t"], n=doc["n"],
                     nodes=nodes, root=doc["root"],
                     scale_exact=doc.get("scale_exact", True))
    if tree.n:
        _attach_views(tree)
    return tree
