"""
Verification toolkit
====================

The checks behind `bimetric verify`: the sandwich bound between the two
metrics, graph shortcut reachability (including its transfer from the
build metric to the query metric), and dataset statistics.
"""

from bimetric import (DistanceOracle, build_alpha_graph, compute_stats,
                      generate_synthetic, rescale_proxy, validate_c_approx,
                      verify_shortcut_reachability)

C = 2.0
ds = generate_synthetic(n=500, n_queries=5, dim=5, C=C, seed=3)

d = DistanceOracle(ds.corpus_proxy, kind="proxy")
D = DistanceOracle(ds.corpus_truth, kind="truth")

# Sandwich bound d <= D <= C*d, checked pairwise.
report = validate_c_approx(d, D, C, pairs=None)
print(f"sandwich at C={C}: ok={report.ok} "
      f"c_required={report.c_required:.4f} pairs={report.pairs_checked}")

# Real embedding pairs satisfy only a ratio bound; rescale makes the
# lower side hold (a no-op for rankings).
res = rescale_proxy(d, D, pairs=2000)
print(f"rescale: s={res.scale:.4f} c_hat={res.c_hat:.4f}")

# A graph built at alpha under d stays alpha/C-reachable under D.
alpha0 = 2.0
graph = build_alpha_graph(ds.corpus_proxy, d, alpha=C * alpha0)
under_d = verify_shortcut_reachability(graph, d, C * alpha0)
under_D = verify_shortcut_reachability(graph, D, alpha0)
print(f"reachability: under proxy at {C * alpha0}: {under_d.ok}, "
      f"under truth at {alpha0}: {under_D.ok}")

# Corpus statistics in the proxy space.
stats = compute_stats(ds.corpus_proxy)
print("stats:", stats.to_json())
