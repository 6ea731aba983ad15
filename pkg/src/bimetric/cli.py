"""Command-line front end.

Subcommands: build, sweep, verify, stats, gen-synth, truth-cache.
Configuration comes from a flat TOML file plus flags (flags win).
stdout carries machine-readable JSON or CSV only; logs go to stderr.
Exit codes: 0 ok, 1 failed verification, 2 config error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import anngraph, covertree, harness
from .dataset import (EmbeddingSet, FvecsFormatError, QrelsParseError,
                      compute_stats, load_fvecs, load_qrels, save_fvecs)
from .metric import DistanceOracle, rescale_proxy, validate_c_approx

EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(Exception):
    pass


def log(*parts):
    print(*parts, file=sys.stderr)


def child_seed(root: int, label: str) -> int:
    """Stable per-component seed so adding a component never shifts others."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 63)


def _load_config(path):
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc


def _cfg(config, section, key, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    return config.get(section, {}).get(key, default)


def _require_file(path, what):
    if path is None:
        raise ConfigError(f"missing required input: {what}")
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _setup_threads(args):
    threads = args.threads
    if threads is None:
        env = os.environ.get("BIMETRIC_THREADS")
        threads = int(env) if env else None
    if threads is not None:
        import numba
        numba.set_num_threads(max(1, threads))


def _load_embeddings(path, what) -> EmbeddingSet:
    return load_fvecs(_require_file(path, what))


def cmd_build(args, config):
    kind = _cfg(config, "index", "kind", args.index, "graph")
    if kind not in ("graph", "tree", "both"):
        raise ConfigError(f"index kind must be graph|tree|both, got {kind!r}")
    corpus = _load_embeddings(
        _cfg(config, "paths", "corpus_proxy", args.corpus_proxy), "corpus file")
    out_dir = _cfg(config, "paths", "out_dir", args.out_dir, ".")
    os.makedirs(out_dir, exist_ok=True)
    report = {}
    if kind in ("graph", "both"):
        alpha = float(_cfg(config, "index", "alpha", args.alpha, 1.2))
        cap = _cfg(config, "index", "cap", args.cap, 64)
        cap = None if cap in (0, "none") else int(cap)
        graph = anngraph.build_alpha_graph(corpus, alpha=alpha, cap=cap)
        path = os.path.join(out_dir, "graph.bmag")
        anngraph.save_graph(graph, path)
        report["graph"] = {
            "path": path, "n": graph.n, "alpha": graph.alpha,
            "cap": graph.max_outdegree_cap, "start_node": graph.start_node,
            "max_outdegree": graph.max_outdegree,
            "mean_outdegree": graph.mean_outdegree,
        }
    if kind in ("tree", "both"):
        T = float(_cfg(config, "index", "T", args.T, 1.0))
        tree = covertree.build_cover_tree(corpus, T=T)
        path = os.path.join(out_dir, "covertree.json")
        covertree.save_tree(tree, path)
        report["tree"] = {
            "path": path, "n": tree.n, "T": tree.T, "top_level": tree.top,
            "nodes": len(tree.nodes), "scale": tree.scale,
            "scale_exact": tree.scale_exact,
        }
    print(json.dumps(report))
    return 0


def _dataset_from_config(args, config, seed):
    synth = config.get("synthetic", {})
    n = _cfg(config, "synthetic", "n", getattr(args, "n", None))
    if synth or n is not None:
        n = int(n if n is not None else 1000)
        dim = int(_cfg(config, "synthetic", "dim", getattr(args, "dim", None), 6))
        C = float(_cfg(config, "synthetic", "C", getattr(args, "C", None), 3.0))
        nq = int(_cfg(config, "synthetic", "queries",
                      getattr(args, "queries", None), 50))
        good = _cfg(config, "synthetic", "good_axes",
                    getattr(args, "good_axes", None))
        good = None if good in (None, 0) else int(good)
        return lambda s: harness.generate_synthetic(
            n, n_queries=nq, dim=dim, C=C, seed=child_seed(s, "synthetic"),
            good_axes=good)
    paths = {}
    for key in ("corpus_proxy", "corpus_truth", "queries_proxy", "queries_truth"):
        paths[key] = _require_file(
            _cfg(config, "paths", key, getattr(args, key, None)), key)
    qrels_path = _cfg(config, "paths", "qrels", getattr(args, "qrels", None))
    qrels = load_qrels(_require_file(qrels_path, "qrels")) if qrels_path else {}
    from .dataset import BiMetricDataset
    return BiMetricDataset(
        corpus_proxy=load_fvecs(paths["corpus_proxy"]),
        corpus_truth=load_fvecs(paths["corpus_truth"]),
        queries_proxy=load_fvecs(paths["queries_proxy"]),
        queries_truth=load_fvecs(paths["queries_truth"]),
        qrels=qrels)


def cmd_sweep(args, config):
    budgets = _cfg(config, "sweep", "budgets", args.budgets)
    if not budgets:
        raise ConfigError("no budgets configured")
    budgets = [int(b) for b in budgets]
    if budgets != sorted(budgets):
        raise ConfigError("budgets must be ascending")
    methods = _cfg(config, "sweep", "methods", args.methods,
                   list(harness.METHOD_NAMES))
    for m in methods:
        if m not in harness.METHOD_NAMES:
            raise ConfigError(f"unknown method {m!r}")
    seeds = [int(s) for s in _cfg(config, "sweep", "seeds", args.seeds, [args.seed])]
    k = int(_cfg(config, "sweep", "k", args.k, 10))
    if k < 1:
        raise ConfigError("k must be >= 1")
    if budgets[0] < k:
        raise ConfigError(f"smallest budget {budgets[0]} is below k={k}")
    start_mode = _cfg(config, "sweep", "start_mode", args.start_mode, "half-budget")
    alpha = float(_cfg(config, "index", "alpha", args.alpha, 1.2))
    cap = _cfg(config, "index", "cap", args.cap, 64)
    cap = None if cap in (0, "none") else int(cap)
    beam = _cfg(config, "index", "beam_stage1", args.beam_stage1)
    beam = None if beam in (None, 0) else int(beam)
    tag = _cfg(config, "sweep", "tag", args.tag, "dataset")
    out_csv = _cfg(config, "sweep", "out_csv", args.out)
    if out_csv is None:
        raise ConfigError("no output CSV path configured")
    start_modes = list(harness.START_MODE_NAMES) if args.ablation else None

    dataset = _dataset_from_config(args, config, args.seed)
    log(f"sweep: {len(methods)} methods x {len(budgets)} budgets x "
        f"{len(seeds)} seeds -> {out_csv}")
    rows = harness.sweep(dataset, methods, budgets, seeds=seeds, tag=tag,
                         alpha=alpha, cap=cap, k=k, start_mode=start_mode,
                         start_modes=start_modes, stage1_beam=beam,
                         measure_time=args.measure_time,
                         cache_dir=_cfg(config, "paths", "cache_dir", args.cache_dir))
    text = harness.rows_to_csv(rows, out_csv)
    sys.stdout.write(text)
    return 0


def cmd_verify(args, config):
    report = {}
    failed = False
    corpus_proxy = _load_embeddings(
        _cfg(config, "paths", "corpus_proxy", args.corpus_proxy), "corpus file")
    d = DistanceOracle(corpus_proxy, kind="proxy")

    graph_path = _cfg(config, "paths", "graph", args.graph)
    if graph_path:
        graph = anngraph.load_graph(_require_file(graph_path, "graph file"))
        alpha = float(_cfg(config, "index", "alpha", args.alpha, graph.alpha))
        res = anngraph.verify_shortcut_reachability(graph, d, alpha)
        report["shortcut_reachability"] = {
            "alpha": alpha, "ok": res.ok, "counterexample": res.counterexample}
        failed |= not res.ok

    tree_path = _cfg(config, "paths", "tree", args.tree)
    if tree_path:
        tree = covertree.load_tree(_require_file(tree_path, "tree file"))
        violations = covertree.verify_cover_tree(tree, d)
        report["cover_tree"] = {"ok": not violations,
                                "violations": violations[:20]}
        failed |= bool(violations)

    truth_path = _cfg(config, "paths", "corpus_truth", args.corpus_truth)
    if truth_path:
        corpus_truth = _load_embeddings(truth_path, "truth corpus file")
        D = DistanceOracle(corpus_truth, kind="truth")
        pairs = int(_cfg(config, "verify", "pairs", args.pairs, 20000))
        scaled = d.with_scale(rescale_proxy(d, D, pairs=pairs).scale)
        C = _cfg(config, "verify", "C", args.C)
        if C is None:
            C = validate_c_approx(scaled, D, 1.0, pairs=pairs).c_required
        approx = validate_c_approx(scaled, D, float(C), pairs=pairs)
        report["c_approximation"] = json.loads(approx.to_json())
        report["c_approximation"]["C_tested"] = float(C)
        failed |= not approx.ok
        if graph_path:
            # a graph built at alpha under the proxy must stay
            # alpha/C-reachable under the truth metric
            alpha_t = float(_cfg(config, "index", "alpha", args.alpha,
                                 graph.alpha)) / float(C)
            res_t = anngraph.verify_shortcut_reachability(graph, D, alpha_t)
            report["shortcut_reachability_truth"] = {
                "alpha": alpha_t, "ok": res_t.ok,
                "counterexample": res_t.counterexample}
            failed |= not res_t.ok

    if not report:
        raise ConfigError("nothing to verify: give a graph, tree, or truth corpus")
    print(json.dumps(report))
    return EXIT_VERIFY_FAILED if failed else 0


def cmd_stats(args, config):
    emb = _load_embeddings(
        _cfg(config, "paths", "embeddings", args.embeddings), "embeddings file")
    sample_pairs = int(_cfg(config, "stats", "sample_pairs", args.sample_pairs,
                            200_000))
    stats = compute_stats(emb, sample_pairs=sample_pairs,
                          seed=child_seed(args.seed, "stats"))
    truth_path = _cfg(config, "paths", "corpus_truth", args.corpus_truth)
    if truth_path:
        truth = _load_embeddings(truth_path, "truth corpus file")
        d = DistanceOracle(emb, kind="proxy")
        D = DistanceOracle(truth, kind="truth")
        res = rescale_proxy(d, D, pairs=min(sample_pairs, 50_000),
                            seed=child_seed(args.seed, "rescale"))
        doc = json.loads(stats.to_json())
        doc["c_hat"] = res.c_hat
        doc["proxy_scale"] = res.scale
        print(json.dumps(doc))
    else:
        print(stats.to_json())
    return 0


def cmd_gen_synth(args, config):
    out_dir = _cfg(config, "paths", "out_dir", args.out_dir, ".")
    os.makedirs(out_dir, exist_ok=True)
    n = int(_cfg(config, "synthetic", "n", args.n, 1000))
    dim = int(_cfg(config, "synthetic", "dim", args.dim, 6))
    C = float(_cfg(config, "synthetic", "C", args.C, 3.0))
    nq = int(_cfg(config, "synthetic", "queries", args.queries, 50))
    good = _cfg(config, "synthetic", "good_axes", args.good_axes)
    good = None if good in (None, 0) else int(good)
    ds = harness.generate_synthetic(n, n_queries=nq, dim=dim, C=C,
                                    seed=child_seed(args.seed, "synthetic"),
                                    good_axes=good)
    paths = {}
    for name, emb in (("corpus_proxy", ds.corpus_proxy),
                      ("corpus_truth", ds.corpus_truth),
                      ("queries_proxy", ds.queries_proxy),
                      ("queries_truth", ds.queries_truth)):
        paths[name] = os.path.join(out_dir, f"{name}.fvecs")
        save_fvecs(emb, paths[name])
    qrels_path = os.path.join(out_dir, "qrels.tsv")
    with open(qrels_path, "w", encoding="utf-8") as fh:
        fh.write("# query_id\tdoc_id\tgrade\n")
        for qid in sorted(ds.qrels):
            for did in sorted(ds.qrels[qid]):
                fh.write(f"{qid}\t{did}\t{ds.qrels[qid][did]}\n")
    paths["qrels"] = qrels_path
    print(json.dumps({"n": n, "dim": dim, "C": C, "queries": nq,
                      "seed": args.seed, "paths": paths}))
    return 0


def cmd_truth_cache(args, config):
    from .dataset import BiMetricDataset
    corpus = _load_embeddings(
        _cfg(config, "paths", "corpus_truth", args.corpus_truth),
        "truth corpus file")
    queries = _load_embeddings(
        _cfg(config, "paths", "queries_truth", args.queries_truth),
        "truth queries file")
    ds = BiMetricDataset(corpus_proxy=corpus, corpus_truth=corpus,
                         queries_proxy=queries, queries_truth=queries)
    k = int(_cfg(config, "sweep", "k", args.k, 10))
    out = _cfg(config, "paths", "out", args.out)
    if out is None:
        raise ConfigError("no output path configured")
    ids, dists = harness.truth_topk(ds, k)
    harness.save_truth_cache(out, ids, dists)
    print(json.dumps({"path": out, "n_queries": int(ids.shape[0]), "k": k}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bimetric",
        description="Bi-metric nearest-neighbor engine: proxy-built indices, "
                    "budgeted queries under an expensive metric.")
    parser.add_argument("--config", help="flat TOML config file")
    parser.add_argument("--seed", type=int, default=0,
                        help="root seed; components derive labeled child seeds")
    parser.add_argument("--threads", type=int,
                        help="build parallelism (env BIMETRIC_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build and persist index files")
    p.add_argument("--corpus-proxy", help="fvecs corpus in the proxy space")
    p.add_argument("--index", choices=["graph", "tree", "both"],
                   help="which index to build (default graph)")
    p.add_argument("--alpha", type=float, help="pruning slack (default 1.2)")
    p.add_argument("--cap", type=int, help="max outdegree, 0 = uncapped (default 64)")
    p.add_argument("--T", type=float, help="cover-radius shrink factor (default 1)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("sweep", help="run the method/budget sweep to CSV")
    p.add_argument("--corpus-proxy")
    p.add_argument("--corpus-truth")
    p.add_argument("--queries-proxy")
    p.add_argument("--queries-truth")
    p.add_argument("--qrels")
    p.add_argument("--n", type=int, help="synthetic corpus size (skips file inputs)")
    p.add_argument("--dim", type=int)
    p.add_argument("--C", type=float)
    p.add_argument("--queries", type=int)
    p.add_argument("--good-axes", type=int,
                   help="unsqueezed axes in the synthetic proxy (0 = uniform)")
    p.add_argument("--budgets", type=int, nargs="+")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--k", type=int)
    p.add_argument("--start-mode", choices=list(harness.START_MODE_NAMES))
    p.add_argument("--ablation", action="store_true",
                   help="sweep bimetric-ours over all start modes")
    p.add_argument("--alpha", type=float)
    p.add_argument("--cap", type=int)
    p.add_argument("--beam-stage1", type=int,
                   help="beam width for stage 1 (default: exact scan; "
                        "benchmark-scale settings use 5000, or 30000 for "
                        "corpora beyond 1e6 points)")
    p.add_argument("--tag")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--cache-dir", help="ground-truth cache directory")
    p.add_argument("--measure-time", action="store_true",
                   help="record wall_seconds (breaks byte determinism)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check index invariants and the sandwich bound")
    p.add_argument("--corpus-proxy")
    p.add_argument("--corpus-truth")
    p.add_argument("--graph", help="BMAG graph file")
    p.add_argument("--tree", help="cover-tree JSON file")
    p.add_argument("--alpha", type=float,
                   help="alpha to verify at (default: the graph's)")
    p.add_argument("--C", type=float, help="sandwich factor to test")
    p.add_argument("--pairs", type=int, help="sampled pairs for the sandwich check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("stats", help="aspect ratio / doubling-dimension stats")
    p.add_argument("--embeddings", help="fvecs file to analyze")
    p.add_argument("--corpus-truth",
                   help="optional truth-side fvecs for c_hat")
    p.add_argument("--sample-pairs", type=int)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gen-synth", help="write a synthetic bi-metric dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--C", type=float)
    p.add_argument("--queries", type=int)
    p.add_argument("--good-axes", type=int,
                   help="unsqueezed axes in the synthetic proxy (0 = uniform)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("truth-cache", help="precompute brute-force truth top-k")
    p.add_argument("--corpus-truth")
    p.add_argument("--queries-truth")
    p.add_argument("--k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_truth_cache)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        _setup_threads(args)
        return args.func(args, config)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except (ValueError, FvecsFormatError, QrelsParseError) as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except OSError as exc:
        log(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
