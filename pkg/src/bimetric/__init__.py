"""Bi-metric nearest-neighbor search.

Indices (pruned proximity graph, nested-cover tree) are built with a
cheap proxy metric only; queries run under an expensive metric with a
hard, counted budget of evaluations and still reach (1 + eps) accuracy
when the proxy approximates the expensive metric within a factor.
"""

from .anngraph import (ReachabilityGraph, SearchTrace, TwoStageResult,
                       build_alpha_graph, greedy_search, load_graph,
                       save_graph, two_stage_search,
                       verify_shortcut_reachability)
from .covertree import (CoverSearchResult, CoverTree, build_cover,
                        build_cover_tree, cover_tree_search, load_tree,
                        save_tree, verify_cover_tree)
from .dataset import (BiMetricDataset, DatasetStats, EmbeddingSet,
                      FvecsFormatError, QrelsParseError, StatsError,
                      collapse_duplicates, compute_stats, load_fvecs,
                      load_qrels, save_fvecs)
from .harness import (MethodSpec, QueryOutcome, SweepRow, generate_synthetic,
                      ndcg_at_k, recall_at_k, rows_to_csv, run_method, sweep,
                      truth_topk)
from .metric import (ApproxReport, BudgetExhausted, CountingOracle,
                     DistanceOracle, RescaleResult, rescale_proxy,
                     validate_c_approx)

__version__ = "0.1.0"
