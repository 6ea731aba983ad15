"""
Three methods under a budget sweep
==================================

Reproduces the benchmark protocol at desk scale: retrieve-and-rerank,
the two-stage bi-metric search, and a single-metric index, all capped
at the same number of expensive distance calls per query.
"""

from bimetric import rows_to_csv, sweep
from bimetric.harness import generate_synthetic


def instance(seed):
    # good_axes pushes truth neighbors far down the proxy ranking,
    # the regime where rerank needs a much larger quota
    return generate_synthetic(n=4000, n_queries=25, dim=14, C=3.0,
                              seed=seed, good_axes=2)


rows = sweep(instance,
             methods=["bimetric-ours", "bimetric-baseline", "single-metric"],
             budgets=[50, 100, 200, 400, 800],
             seeds=[0], tag="demo-c3", cap=32)

print(rows_to_csv(rows))

print("recall@10 by method and budget:")
for method in ("bimetric-ours", "bimetric-baseline", "single-metric"):
    curve = [(r.Q, round(r.recall_at_10, 3)) for r in rows if r.method == method]
    print(f"  {method:18s} {curve}")
