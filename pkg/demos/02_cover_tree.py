"""
Cover tree built on the proxy, queried under the truth metric
=============================================================

The tree's covers shrink by the slack factor T. Setting T to the
proxy/truth gap C keeps the descent accurate under the truth metric
even though construction never touched it.
"""

import numpy as np

from bimetric import (CountingOracle, DistanceOracle, build_cover_tree,
                      cover_tree_search, generate_synthetic, verify_cover_tree)

C = 2.0
ds = generate_synthetic(n=800, n_queries=8, dim=5, C=C, seed=1)

d = DistanceOracle(ds.corpus_proxy, kind="proxy")
tree = build_cover_tree(ds.corpus_proxy, d, T=C)
print(f"tree: n={tree.n} levels up to {tree.top} "
      f"explicit nodes {len(tree.nodes)} (bound {2 * tree.n - 1})")

# Structural invariants: nesting, covering, separation, space bound,
# descendant bounds under both metrics.
violations = verify_cover_tree(tree, d, DistanceOracle(ds.corpus_truth, kind="truth"))
print("invariant violations:", violations or "none")

D = DistanceOracle(ds.corpus_truth, ds.queries_truth, kind="truth")
eps = 0.1
for qid in range(ds.n_queries):
    res = cover_tree_search(tree, CountingOracle(D), qid, eps=eps)
    brute = np.linalg.norm(
        ds.corpus_truth.vectors.astype(np.float64)
        - ds.queries_truth.vectors[qid].astype(np.float64), axis=1).min()
    print(f"query {qid}: dist {res.distance:.4f} vs optimal {brute:.4f} "
          f"(ratio {res.distance / brute if brute else 1:.3f} <= {1 + eps}), "
          f"{res.calls_D} expensive calls, exit={res.exit}")
