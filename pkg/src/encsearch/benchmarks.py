"""Benchmark harness: leaf-ordering comparison, forest vs single-tree search,
scaling sweeps and update-cost measurements.

Visited-node counts are the primary statistic (machine independent and
reproducible bit-for-bit under a fixed seed); wall-clock times are reported
alongside.  Results are emitted as CSV files.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import forest as forest_mod, metrics, partitioning
from .corpus import Document, build_binary_indexes, build_dictionary, synthetic_corpus
from .engine import Pipeline, PipelineConfig, QuerySpec


@dataclass
class BenchmarkConfig:
    n_docs: int = 2000
    n_keywords: int = 2000
    n_owners: int = 20
    s: int = 4
    k: int = 10
    queries: int = 1000
    query_keywords: int = 10
    mean_len: int = 40
    zipf_a: float = 1.1
    sigma: float = 0.05
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        if min(self.n_docs, self.n_keywords, self.n_owners, self.s, self.k, self.queries, self.repetitions) < 1:
            raise ValueError("all benchmark parameters must be positive")


@dataclass
class VariantStats:
    name: str
    mean_visited: float
    var_visited: float
    mean_time: float
    var_time: float
    visited: list[int] = field(repr=False, default_factory=list)


def _stats(name: str, visited: list[int], times: list[float]) -> VariantStats:
    return VariantStats(
        name,
        float(np.mean(visited)),
        float(np.var(visited)),
        float(np.mean(times)),
        float(np.var(times)),
        visited,
    )


def _single_query_vector(pipeline: Pipeline, query: QuerySpec) -> np.ndarray:
    real = pipeline.real_query_vectors(query.keywords)[0]
    alpha = (
        query.alphas[0]
        if query.alphas is not None
        else np.zeros(pipeline.noise[0].pseudo_count)
    )
    return np.concatenate([real, alpha])


def _run_tree(tree, qv: np.ndarray, k: int) -> tuple[int, float]:
    start = time.perf_counter()
    _, visited = forest_mod.gdfs(tree, forest_mod.plaintext_scorer(qv), k)
    return visited, time.perf_counter() - start


def bench_tree_orders(
    config: BenchmarkConfig, out_dir: str | Path | None = None, groups: int = 4
) -> list[VariantStats]:
    """Compare single-tree search under three leaf orders: random, grouped by
    index cluster, and probe-score (maximum likelihood) order."""
    docs = synthetic_corpus(
        config.n_docs, config.n_keywords, config.n_owners, seed=config.seed,
        mean_len=config.mean_len, zipf_a=config.zipf_a,
    )
    pipeline = Pipeline.build(
        docs,
        PipelineConfig(s=1, sigma=config.sigma, seed=config.seed, encrypt=False, zipf_a=config.zipf_a),
    )
    mlsb = pipeline.trees[0]
    entries = [(leaf.doc_id, leaf.vec) for leaf in mlsb.leaves]

    rng = np.random.default_rng(config.seed + 1)
    shuffled = list(entries)
    rng.shuffle(shuffled)
    random_tree = forest_mod.build_tree(shuffled, 0)

    dictionary = build_dictionary(docs)
    indexes = build_binary_indexes(docs, dictionary)
    grouped_pset = partitioning.cluster_indexes(
        indexes, dictionary, min(groups, config.n_docs), seed=config.seed + 2
    )
    grouped = sorted(entries, key=lambda e: (grouped_pset.assignments[e[0]], e[0]))
    grouped_tree = forest_mod.build_tree(grouped, 0)

    queries = pipeline.sample_queries(
        config.queries, config.query_keywords, seed=config.seed + 3
    )
    variants = [("random", random_tree), ("grouped", grouped_tree), ("mlsb", mlsb)]
    stats = []
    for name, tree in variants:
        visited, times = [], []
        for q in queries:
            qv = _single_query_vector(pipeline, q)
            v, dt = _run_tree(tree, qv, config.k)
            visited.append(v)
            times.append(dt)
        stats.append(_stats(name, visited, times))

    if out_dir is not None:
        path = Path(out_dir) / "fig4_tree_speed.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant", "mean_visited", "var_visited", "mean_time_s", "var_time_s", "seed"])
            for st in stats:
                writer.writerow(
                    [st.name, f"{st.mean_visited:.3f}", f"{st.var_visited:.3f}",
                     f"{st.mean_time:.6e}", f"{st.var_time:.6e}", config.seed]
                )
    return stats


@dataclass
class ForestSpeedup:
    forest_visited: float      # mean visited nodes per query, all searched trees
    single_visited: float
    visited_ratio: float       # single / forest
    forest_time: float
    single_time: float
    time_ratio: float
    theoretical_eta: float


def bench_forest_speedup(
    config: BenchmarkConfig, out_dir: str | Path | None = None
) -> ForestSpeedup:
    """Forest search vs one tree over the whole corpus, on a cluster-coherent
    query workload (keywords drawn from one sub-dictionary per query)."""
    docs = synthetic_corpus(
        config.n_docs, config.n_keywords, config.n_owners, seed=config.seed,
        mean_len=config.mean_len, zipf_a=config.zipf_a,
    )
    forest_pipe = Pipeline.build(
        docs, PipelineConfig(s=config.s, sigma=config.sigma, seed=config.seed, encrypt=False, zipf_a=config.zipf_a)
    )
    single_pipe = Pipeline.build(
        docs, PipelineConfig(s=1, sigma=config.sigma, seed=config.seed, encrypt=False, zipf_a=config.zipf_a)
    )

    queries: list[QuerySpec] = []
    populated = [
        p for p in range(forest_pipe.s) if len(forest_pipe.pset.sub_dictionaries[p]) > 0
    ]
    per_part = -(-config.queries // len(populated))
    for p in populated:
        queries.extend(
            forest_pipe.sample_queries(
                per_part, config.query_keywords, seed=config.seed + 10 + p, partition=p
            )
        )
    queries = queries[: config.queries]

    f_visited, f_times, s_visited, s_times = [], [], [], []
    for q in queries:
        real = forest_pipe.real_query_vectors(q.keywords)
        selected = forest_pipe.select_partitions(q.keywords, None)
        t = len(selected)
        quota = -(-config.k // t)
        start = time.perf_counter()
        total = 0
        for p in selected:
            qv = np.concatenate([real[p], np.zeros(forest_pipe.noise[p].pseudo_count)])
            _, v = forest_mod.gdfs(forest_pipe.trees[p], forest_mod.plaintext_scorer(qv), quota)
            total += v
        f_times.append(time.perf_counter() - start)
        f_visited.append(total)

        qv = _single_query_vector(single_pipe, QuerySpec(q.keywords, None))
        v, dt = _run_tree(single_pipe.trees[0], qv, config.k)
        s_visited.append(v)
        s_times.append(dt)

    result = ForestSpeedup(
        forest_visited=float(np.mean(f_visited)),
        single_visited=float(np.mean(s_visited)),
        visited_ratio=float(np.mean(s_visited) / np.mean(f_visited)),
        forest_time=float(np.mean(f_times)),
        single_time=float(np.mean(s_times)),
        time_ratio=float(np.mean(s_times) / np.mean(f_times)),
        theoretical_eta=metrics.efficiency_ratio(config.n_docs, config.s),
    )
    if out_dir is not None:
        path = Path(out_dir) / "fig4_forest_speed.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["variant", "mean_visited", "mean_time_s", "visited_ratio", "time_ratio", "eta", "seed"]
            )
            writer.writerow(["forest", f"{result.forest_visited:.3f}", f"{result.forest_time:.6e}",
                             f"{result.visited_ratio:.3f}", f"{result.time_ratio:.3f}",
                             f"{result.theoretical_eta:.2f}", config.seed])
            writer.writerow(["single_tree", f"{result.single_visited:.3f}", f"{result.single_time:.6e}",
                             "", "", "", config.seed])
    return result


def bench_scaling(
    base: BenchmarkConfig,
    sizes: Sequence[int],
    out_dir: str | Path | None = None,
) -> list[dict]:
    """Search cost of forest vs single tree as the corpus grows."""
    rows = []
    for n in sizes:
        cfg = BenchmarkConfig(
            n_docs=n,
            n_keywords=base.n_keywords,
            n_owners=base.n_owners,
            s=base.s,
            k=base.k,
            queries=min(base.queries, 200),
            query_keywords=base.query_keywords,
            sigma=base.sigma,
            seed=base.seed,
        )
        sp = bench_forest_speedup(cfg)
        rows.append(
            {
                "n_docs": n,
                "forest_visited": sp.forest_visited,
                "single_visited": sp.single_visited,
                "forest_time_s": sp.forest_time,
                "single_time_s": sp.single_time,
            }
        )
    if out_dir is not None:
        path = Path(out_dir) / "fig5_scaling.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return rows


@dataclass
class UpdateBench:
    forest_mean_touched: float
    single_mean_touched: float
    per_update_ratio: float        # forest / single, measured
    theoretical_per_update: float  # log2(N/s) / log2(N)
    amortized_all_partitions: float  # the (2/s) * log(N/s) / (2 * log N) reading


def bench_update(
    config: BenchmarkConfig, inserts: int = 50, out_dir: str | Path | None = None
) -> UpdateBench:
    """Touched-node counts for insertions into the forest vs a single tree."""
    docs = synthetic_corpus(
        config.n_docs, config.n_keywords, config.n_owners, seed=config.seed,
        mean_len=config.mean_len, zipf_a=config.zipf_a,
    )
    forest_pipe = Pipeline.build(
        docs, PipelineConfig(s=config.s, sigma=config.sigma, seed=config.seed, encrypt=False, zipf_a=config.zipf_a)
    )
    single_pipe = Pipeline.build(
        docs, PipelineConfig(s=1, sigma=config.sigma, seed=config.seed, encrypt=False, zipf_a=config.zipf_a)
    )
    new_docs = synthetic_corpus(
        inserts, config.n_keywords, config.n_owners, seed=config.seed + 99,
        mean_len=config.mean_len, zipf_a=config.zipf_a,
    )
    f_touched, s_touched = [], []
    for i, nd in enumerate(new_docs):
        doc = Document(1_000_000 + i, nd.owner_id, nd.counts)
        f_touched.append(forest_pipe.insert_document(doc).touched_nodes)
        s_touched.append(single_pipe.insert_document(doc).touched_nodes)

    n, s = config.n_docs, config.s
    theoretical = np.log2(n / s) / np.log2(n)
    result = UpdateBench(
        forest_mean_touched=float(np.mean(f_touched)),
        single_mean_touched=float(np.mean(s_touched)),
        per_update_ratio=float(np.mean(f_touched) / np.mean(s_touched)),
        theoretical_per_update=float(theoretical),
        amortized_all_partitions=float((2.0 / s) * np.log2(n / s) / (2.0 * np.log2(n))),
    )
    if out_dir is not None:
        path = Path(out_dir) / "update_cost.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["forest_mean_touched", "single_mean_touched", "per_update_ratio",
                 "theoretical_per_update", "amortized_all_partitions", "seed"]
            )
            writer.writerow(
                [f"{result.forest_mean_touched:.2f}", f"{result.single_mean_touched:.2f}",
                 f"{result.per_update_ratio:.4f}", f"{result.theoretical_per_update:.4f}",
                 f"{result.amortized_all_partitions:.4f}", config.seed]
            )
    return result
