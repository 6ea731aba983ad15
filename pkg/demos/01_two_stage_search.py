"""
Two-stage search under a budget
===============================

Build a graph index with a cheap proxy metric, then answer queries
under an expensive metric while counting every expensive call.
"""

import numpy as np

from bimetric import (CountingOracle, DistanceOracle, build_alpha_graph,
                      generate_synthetic, two_stage_search)

# A synthetic bi-metric instance: truth = Euclidean on points in a ball,
# proxy = the same points squeezed along random axes so that
# d <= D <= 3 * d on every pair.
ds = generate_synthetic(n=2000, n_queries=5, dim=8, C=3.0, seed=0)

# The index only ever sees the proxy embeddings.
proxy = DistanceOracle(ds.corpus_proxy, kind="proxy")
graph = build_alpha_graph(ds.corpus_proxy, proxy, alpha=1.2, cap=32)
print(f"graph: n={graph.n} mean_outdegree={graph.mean_outdegree:.1f} "
      f"entry={graph.start_node}")

# Query-side oracles. The expensive one carries the budget; the search
# stops the moment the quota is spent.
d = DistanceOracle(ds.corpus_proxy, ds.queries_proxy, kind="proxy")
D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")

quota = 300
for qid in range(ds.n_queries):
    counter = CountingOracle(D, budget=quota, memo=True)
    result = two_stage_search(graph, d, counter, qid, quota, k=10)

    # brute-force truth for comparison (not charged, it is the referee)
    brute = np.linalg.norm(
        ds.corpus_truth.vectors.astype(np.float64)
        - ds.queries_truth.vectors[qid].astype(np.float64), axis=1)
    true_top = np.argsort(brute)[:10]

    overlap = len(set(result.ids) & set(int(i) for i in true_top))
    print(f"query {qid}: expensive calls {result.trace.calls_D:>3}/{quota}, "
          f"cheap calls {result.trace.calls_d}, recall@10 = {overlap / 10:.1f}")
