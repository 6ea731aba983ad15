"""Graph build, reachability verification, greedy search, two-stage search."""

import numpy as np
import pytest

from bimetric import _kernels
from bimetric.anngraph import (ReachabilityGraph, build_alpha_graph,
                               greedy_search, load_graph, save_graph,
                               two_stage_search, verify_shortcut_reachability)
from bimetric.harness import generate_synthetic
from bimetric.metric import BudgetExhausted, CountingOracle, DistanceOracle


def _embed(coords):
    return np.asarray(coords, dtype=np.float32).reshape(len(coords), -1)


def _line_graph(alpha=2.0, cap=None):
    pts = _embed([0.0, 1.0, 2.0])
    return pts, build_alpha_graph(pts, DistanceOracle(pts), alpha=alpha, cap=cap)


# ------------------------------------------------------------------ build

def test_two_points_mutual():
    pts = _embed([0.0, 7.0])
    g = build_alpha_graph(pts, alpha=1.5)
    assert [a.tolist() for a in g.adjacency] == [[1], [0]]


def test_line_fixture_adjacency():
    # candidate 2 of node 0 is pruned: 2 * d(1, 2) = 2 <= d(0, 2) = 2
    _, g = _line_graph(alpha=2.0)
    assert [a.tolist() for a in g.adjacency] == [[1], [0, 2], [1]]
    assert g.start_node == 1  # medoid of the line


def test_line_fixture_capped():
    # ties break toward the smaller id, so node 1 keeps only node 0
    _, g = _line_graph(alpha=2.0, cap=1)
    assert [a.tolist() for a in g.adjacency] == [[1], [0], [1]]
    assert g.max_outdegree_cap == 1


def test_alpha_must_exceed_one():
    pts = _embed([0.0, 1.0])
    with pytest.raises(ValueError):
        build_alpha_graph(pts, alpha=1.0)


def test_empty_and_singleton():
    g = build_alpha_graph(np.empty((0, 2), dtype=np.float32), alpha=2.0)
    assert g.n == 0 and g.adjacency == []
    g1 = build_alpha_graph(_embed([3.0]), alpha=2.0)
    assert g1.n == 1 and g1.adjacency[0].tolist() == []


def test_duplicates_rejected():
    pts = _embed([0.0, 1.0, 0.0])
    with pytest.raises(ValueError, match="duplicate"):
        build_alpha_graph(pts, alpha=2.0)


def test_build_determinism():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((80, 4)).astype(np.float32)
    g1 = build_alpha_graph(pts, alpha=1.3, cap=16)
    g2 = build_alpha_graph(pts, alpha=1.3, cap=16)
    assert all(np.array_equal(a, b) for a, b in zip(g1.adjacency, g2.adjacency))
    assert g1.start_node == g2.start_node


# ----------------------------------------------------------- verification

def test_verify_complete_graph():
    pts = _embed([0.0, 1.0, 5.0, 9.0])
    adj = [np.array([j for j in range(4) if j != i], dtype=np.int32)
           for i in range(4)]
    g = ReachabilityGraph(n=4, alpha=50.0, adjacency=adj)
    assert verify_shortcut_reachability(g, DistanceOracle(pts), 50.0).ok


def test_verify_line_graph():
    pts, g = _line_graph(alpha=2.0)
    assert verify_shortcut_reachability(g, DistanceOracle(pts), 2.0).ok


def test_verify_counterexample_after_mutation():
    pts, g = _line_graph(alpha=2.0)
    g.adjacency[0] = np.array([], dtype=np.int32)
    res = verify_shortcut_reachability(g, DistanceOracle(pts), 2.0)
    assert not res.ok
    assert res.counterexample == (0, 1)


def test_uncapped_build_passes_declared_alpha():
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((120, 5)).astype(np.float32)
    for alpha in (1.5, 2.0, 4.0):
        g = build_alpha_graph(pts, alpha=alpha)
        assert verify_shortcut_reachability(g, DistanceOracle(pts), alpha).ok


def test_reachability_transfer_between_metrics():
    # graph built at alpha under the proxy stays alpha/C-reachable under
    # the expensive metric whenever the sandwich holds at factor C
    for seed, C, alpha0 in [(0, 2.0, 1.5), (1, 3.0, 2.0), (2, 1.5, 2.0)]:
        ds = generate_synthetic(150, n_queries=2, dim=5, C=C, seed=seed)
        d = DistanceOracle(ds.corpus_proxy, kind="proxy")
        D = DistanceOracle(ds.corpus_truth, kind="truth")
        g = build_alpha_graph(ds.corpus_proxy, d, alpha=C * alpha0)
        assert verify_shortcut_reachability(g, D, alpha0).ok


def test_verify_size_guard():
    pts = np.zeros((2001, 1), dtype=np.float32)
    g = ReachabilityGraph(n=2001, alpha=2.0, adjacency=[np.array([], np.int32)] * 2001)
    with pytest.raises(ValueError):
        verify_shortcut_reachability(g, DistanceOracle(pts), 2.0)


# ---------------------------------------------------------------- search

def test_search_at_corpus_point():
    pts, g = _line_graph()
    oracle = CountingOracle(DistanceOracle(pts, _embed([1.0]), kind="truth"))
    trace = greedy_search(g, oracle, 0, [1], beam=1)
    assert trace.visited[0] == (1, 0.0)


def test_line_descent_visit_order():
    pts, g = _line_graph()
    oracle = CountingOracle(DistanceOracle(pts, _embed([2.1]), kind="truth"))
    trace = greedy_search(g, oracle, 0, [0], beam=1)
    assert trace.expansion_order == [0, 1, 2]
    assert trace.visited[0][0] == 2
    assert trace.terminated_by == "frontier-exhausted"


def test_search_empty_starts_rejected():
    pts, g = _line_graph()
    oracle = CountingOracle(DistanceOracle(pts, _embed([0.5]), kind="truth"))
    with pytest.raises(ValueError):
        greedy_search(g, oracle, 0, [])


def test_budget_truncates_gracefully():
    rng = np.random.default_rng(3)
    pts = rng.standard_normal((60, 3)).astype(np.float32)
    g = build_alpha_graph(pts, alpha=1.5)
    q = rng.standard_normal((1, 3)).astype(np.float32)
    for budget in (1, 3, 7, 20):
        oracle = CountingOracle(DistanceOracle(pts, q, kind="truth"),
                                budget=budget)
        trace = greedy_search(g, oracle, 0, [g.start_node], budget=budget)
        assert trace.calls_D <= budget
        assert len(trace.seen) == min(budget, 60) or trace.terminated_by != "budget"
        if trace.calls_D == budget:
            assert trace.terminated_by == "budget"


def test_budget_smaller_than_starts_keeps_prefix():
    pts = _embed([0.0, 1.0, 2.0, 3.0, 4.0])
    g = build_alpha_graph(pts, alpha=2.0)
    oracle = CountingOracle(DistanceOracle(pts, _embed([0.2]), kind="truth"),
                            budget=2)
    trace = greedy_search(g, oracle, 0, [0, 3, 4, 1], budget=2)
    assert trace.terminated_by == "budget"
    assert [node for node, _ in trace.seen] == sorted(
        [n for n, _ in trace.seen], key=lambda n: (oracle.memo[(0, n)], n))
    assert {n for n, _ in trace.seen} == {0, 3}


def test_greedy_one_approximation_under_build_metric():
    # beam-1 search on an uncapped graph built at alpha = 1 + 2/eps finds
    # a (1 + eps)-approximate nearest neighbor
    rng = np.random.default_rng(4)
    pts = rng.standard_normal((400, 4)).astype(np.float32)
    eps = 0.5
    g = build_alpha_graph(pts, alpha=1 + 2 / eps)
    queries = rng.standard_normal((40, 4)).astype(np.float32)
    d_q = DistanceOracle(pts, queries, kind="proxy")
    for qid in range(40):
        trace = greedy_search(g, CountingOracle(d_q), qid, [g.start_node], beam=1)
        best = trace.visited[0][1]
        brute = _kernels.row_distances(queries, qid, pts).min()
        assert best <= (1 + eps) * brute + 1e-12


def test_greedy_bimetric_approximation_under_query_metric():
    eps = 0.5
    for seed, C in [(0, 2.0), (1, 3.0)]:
        ds = generate_synthetic(300, n_queries=25, dim=5, C=C, seed=seed)
        d = DistanceOracle(ds.corpus_proxy, kind="proxy")
        g = build_alpha_graph(ds.corpus_proxy, d, alpha=C * (1 + 2 / eps))
        D_q = DistanceOracle(ds.corpus_truth, ds.queries_truth.vectors, kind="truth")
        for qid in range(25):
            trace = greedy_search(g, CountingOracle(D_q), qid, [g.start_node], beam=1)
            best = trace.visited[0][1]
            brute = _kernels.row_distances(ds.queries_truth.vectors, qid,
                                           ds.corpus_truth.vectors).min()
            assert best <= (1 + eps) * brute + 1e-12


# ------------------------------------------------------------- two stage

def test_two_stage_full_budget_is_exact():
    ds = generate_synthetic(120, n_queries=15, dim=4, C=2.0, seed=5)
    d = DistanceOracle(ds.corpus_proxy, ds.queries_proxy, kind="proxy")
    D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")
    g = build_alpha_graph(ds.corpus_proxy,
                          DistanceOracle(ds.corpus_proxy, kind="proxy"),
                          alpha=1.5)
    for qid in range(15):
        Dc = CountingOracle(D, budget=200, memo=True)
        res = two_stage_search(g, d, Dc, qid, 200, 10)
        row = _kernels.row_distances(ds.queries_truth.vectors, qid,
                                     ds.corpus_truth.vectors)
        brute = np.lexsort((np.arange(120), row))[:10]
        assert res.ids == [int(i) for i in brute]
        assert res.trace.calls_D <= 200


def test_two_stage_start_modes():
    ds = generate_synthetic(150, n_queries=3, dim=4, C=2.0, seed=6)
    d = DistanceOracle(ds.corpus_proxy, ds.queries_proxy, kind="proxy")
    D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")
    g = build_alpha_graph(ds.corpus_proxy,
                          DistanceOracle(ds.corpus_proxy, kind="proxy"),
                          alpha=1.3, cap=16)
    for mode, start_k in [("half-budget", None), ("fixed-k", 100),
                          ("fixed-k", 1), ("default-entry", None)]:
        res = two_stage_search(g, d, CountingOracle(D, budget=40, memo=True),
                               0, 40, 10, start_mode=mode, start_k=start_k)
        assert len(res.ids) == 10
        assert res.trace.calls_D <= 40


def test_two_stage_quota_below_k_rejected():
    ds = generate_synthetic(50, n_queries=1, dim=4, C=2.0, seed=7)
    d = DistanceOracle(ds.corpus_proxy, ds.queries_proxy, kind="proxy")
    D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")
    g = build_alpha_graph(ds.corpus_proxy,
                          DistanceOracle(ds.corpus_proxy, kind="proxy"), alpha=1.5)
    with pytest.raises(ValueError):
        two_stage_search(g, d, CountingOracle(D), 0, 5, 10)


def test_planted_instance_beats_rerank():
    # Screened instance: the true expensive-metric NN of query 6 sits at
    # proxy rank > Q, unreachable for rerank, but the graph walk finds it.
    n, Q, qid = 1000, 250, 6
    ds = generate_synthetic(n, n_queries=10, dim=12, C=3.0, seed=39, good_axes=1)
    Drow = _kernels.row_distances(ds.queries_truth.vectors, qid,
                                  ds.corpus_truth.vectors)
    nn = int(np.lexsort((np.arange(n), Drow))[0])
    drow = _kernels.row_distances(ds.queries_proxy.vectors, qid,
                                  ds.corpus_proxy.vectors)
    d_rank = int(np.flatnonzero(np.lexsort((np.arange(n), drow)) == nn)[0])
    assert d_rank > Q  # rerank at quota Q cannot see the true NN

    d = DistanceOracle(ds.corpus_proxy, ds.queries_proxy, kind="proxy")
    D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")
    g = build_alpha_graph(ds.corpus_proxy,
                          DistanceOracle(ds.corpus_proxy, kind="proxy"),
                          alpha=1.2, cap=32)
    res = two_stage_search(g, d, CountingOracle(D, budget=Q, memo=True),
                           qid, Q, 1)
    assert res.ids[0] == nn

    shortlist = np.lexsort((np.arange(n), drow))[:Q]
    rerank_best = min(shortlist, key=lambda p: (Drow[p], p))
    assert rerank_best != nn


# ------------------------------------------------------------ persistence

def test_graph_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    pts = rng.standard_normal((50, 3)).astype(np.float32)
    g = build_alpha_graph(pts, alpha=1.4, cap=8)
    path = tmp_path / "g.bmag"
    save_graph(g, path)
    back = load_graph(path)
    assert back.n == g.n
    assert back.alpha == g.alpha
    assert back.max_outdegree_cap == g.max_outdegree_cap
    assert back.start_node == g.start_node
    assert all(np.array_equal(a, b) for a, b in zip(back.adjacency, g.adjacency))


def test_graph_bytes_deterministic(tmp_path):
    rng = np.random.default_rng(9)
    pts = rng.standard_normal((30, 2)).astype(np.float32)
    p1, p2 = tmp_path / "a.bmag", tmp_path / "b.bmag"
    save_graph(build_alpha_graph(pts, alpha=1.6), p1)
    save_graph(build_alpha_graph(pts, alpha=1.6), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_graph_bad_magic(tmp_path):
    path = tmp_path / "bad.bmag"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ValueError, match="magic"):
        load_graph(path)
