"""End-to-end orchestration of the four roles.

Owners contribute documents and binary indexes; the trusted proxy clusters,
weights, pads and encrypts them into an index forest and turns user requests
into trapdoors; the server stores only the encrypted forest and answers
trapdoor searches; users reach it through an attribute-gated grant check.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import aspe, forest as forest_mod, padding, partitioning, weighting
from .corpus import (
    Document,
    KeywordDictionary,
    build_binary_indexes,
    build_dictionary,
    load_corpus,
    load_dictionary,
    save_corpus,
    save_dictionary,
)
from .errors import AccessError, EncSearchError, ForestError
from .forest import ProbeConfig, Tree, round_score


@dataclass
class PipelineConfig:
    s: int | None = None        # partition count; None -> ceil(n/1000)
    u_ratio: float = 0.1        # pseudo dimensions as a fraction of N_i
    sigma: float = 0.05         # noise std
    omega: int | None = None    # nonzero pseudo entries per vector; None -> ceil(U/2)
    probe_count: int = 1000     # R probe queries for leaf ordering
    probe_keywords: int = 10
    zipf_a: float = 1.0
    seed: int = 0
    cond_cap: float = 1e6
    encrypt: bool = True        # benches may skip key generation / encryption

    def resolve_s(self, dictionary_size: int) -> int:
        if self.s is not None:
            return self.s
        return partitioning.default_partition_count(dictionary_size)


@dataclass(frozen=True)
class QuerySpec:
    """A reproducible query: keyword weights plus frozen pseudo-entry values
    (one array per partition).  Freezing the alphas makes sigma sweeps use
    common random numbers."""

    keywords: dict[str, float]
    alphas: dict[int, np.ndarray] | None = None


@dataclass(frozen=True)
class UserGrant:
    user_id: int
    attributes: frozenset[str]
    partitions: frozenset[int]


@dataclass
class SearchResult:
    results: list[tuple[int, float]]
    visited: dict[int, int]
    partitions: list[int]
    elapsed: float


@dataclass
class UpdateReport:
    doc_id: int
    partition: int
    touched_nodes: int
    rebuilt: bool


def _derive_seed(base: int, tag: str) -> int:
    return zlib.crc32(f"{base}:{tag}".encode()) & 0x7FFFFFFF


class Server:
    """Cloud-server role: stores encrypted trees only, ranks by trapdoors."""

    def __init__(self, trees: list[Tree]):
        self.trees = trees

    def search(
        self,
        trapdoors: Mapping[int, aspe.Trapdoor],
        k: int,
        selected: Sequence[int],
        quota: int | None = None,
    ) -> tuple[list[tuple[int, float]], dict[int, int]]:
        scorers: dict[int, forest_mod.Scorer] = {
            p: forest_mod.encrypted_scorer(trapdoors[p]) for p in selected
        }
        return forest_mod.search_forest(
            self.trees, [scorers.get(i) for i in range(len(self.trees))], k, list(selected), quota
        )

    def replace_tree(self, partition: int, tree: Tree) -> None:
        self.trees[partition] = tree


def authorize(
    grant: UserGrant,
    partitions: Sequence[int],
    partition_attributes: Mapping[int, frozenset[str]] | None = None,
) -> bool:
    """Allow iff every requested partition is granted and its attribute set is
    covered by the user's attributes.  Deny is a value, not an error."""
    attrs = partition_attributes or {}
    for p in partitions:
        if p not in grant.partitions:
            return False
        if not frozenset(attrs.get(p, frozenset())) <= grant.attributes:
            return False
    return True


class Pipeline:
    """The built search system plus all intermediate artifacts."""

    def __init__(self):
        self.config: PipelineConfig = PipelineConfig()
        self.docs_by_id: dict[int, Document] = {}
        self.dictionary: KeywordDictionary | None = None
        self.pset: partitioning.PartitionSet | None = None
        self.correlativity: list[np.ndarray] = []
        self.weights: list[dict[int, weighting.OwnerWeights]] = []
        self.w_max: list[np.ndarray] = []
        self.weighted_mats: list[np.ndarray] = []
        self.noise: list[padding.NoiseModel] = []
        self.secure_mats: list[np.ndarray] = []
        self.trees: list[Tree] = []
        self.key: aspe.SecretKey | None = None
        self.server: Server | None = None
        self.partition_attributes: dict[int, frozenset[str]] = {}
        self._query_rng: np.random.Generator = np.random.default_rng()

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, docs: Sequence[Document], config: PipelineConfig) -> "Pipeline":
        self = cls()
        self.config = config
        self.docs_by_id = {d.doc_id: d for d in docs}
        self.dictionary = build_dictionary(list(docs))
        indexes = build_binary_indexes(list(docs), self.dictionary)

        s = config.resolve_s(len(self.dictionary))
        if s > len(docs):
            raise EncSearchError(f"s={s} exceeds the number of documents {len(docs)}")
        self.pset = partitioning.cluster_indexes(
            indexes, self.dictionary, s, seed=_derive_seed(config.seed, "cluster")
        )
        self._build_weights()
        self._build_noise(config.sigma)
        self._pad()
        self._build_forest()
        if config.encrypt:
            self.key = aspe.keygen(
                [mat.shape[1] for mat in self.secure_mats],
                seed=_derive_seed(config.seed, "keys"),
                cond_cap=config.cond_cap,
            )
            self._encrypt_forest(tag="build")
        self._query_rng = np.random.default_rng(_derive_seed(config.seed, "query"))
        return self

    def _build_weights(self) -> None:
        self.correlativity, self.weights, self.w_max, self.weighted_mats = [], [], [], []
        for p in range(self.pset.s):
            corr = weighting.build_correlativity(self.pset.compressed[p])
            w = weighting.compute_weights(
                self.docs_by_id,
                self.pset.members[p],
                self.pset.sub_positions[p],
                corr,
                p,
            )
            wmax = np.zeros(len(self.pset.sub_dictionaries[p]))
            for ow in w.values():
                wmax = np.maximum(wmax, ow.raw)
            weighted = weighting.weight_indexes(
                self.pset.members[p], self.pset.compressed[p], w, p
            )
            self.correlativity.append(corr)
            self.weights.append(w)
            self.w_max.append(wmax)
            self.weighted_mats.append(weighting.weighted_matrix(weighted))

    def _build_noise(self, sigma: float) -> None:
        self.noise = []
        for p in range(self.pset.s):
            n_real = len(self.pset.sub_dictionaries[p])
            u = int(np.ceil(self.config.u_ratio * n_real))
            omega = self.config.omega if self.config.omega is not None else -(-u // 2)
            omega = min(omega, u)
            self.noise.append(
                padding.NoiseModel(u, sigma, omega, seed=_derive_seed(self.config.seed, f"pad{p}"))
            )

    def _pad(self) -> None:
        self.secure_mats = [
            padding.pad_matrix(self.weighted_mats[p], self.noise[p])
            for p in range(self.pset.s)
        ]

    def _build_forest(self) -> None:
        self.trees = []
        for p in range(self.pset.s):
            n_real = len(self.pset.sub_dictionaries[p])
            total = self.secure_mats[p].shape[1]
            popularity = self.pset.compressed[p].sum(axis=0).astype(np.float64)
            cfg = ProbeConfig(
                count=self.config.probe_count,
                keywords_per_probe=self.config.probe_keywords,
                zipf_a=self.config.zipf_a,
                seed=_derive_seed(self.config.seed, f"probe{p}"),
            )
            probe = forest_mod.probe_aggregate(n_real, total, popularity, cfg)
            entries = [
                (doc_id, self.secure_mats[p][row])
                for row, (doc_id, _owner) in enumerate(self.pset.members[p])
            ]
            ordered = forest_mod.order_by_likelihood(entries, probe)
            self.trees.append(forest_mod.build_tree(ordered, p, probe, cfg))

    def _encrypt_forest(self, tag: str) -> None:
        rng = np.random.default_rng(_derive_seed(self.config.seed, f"encsplit:{tag}"))
        enc = forest_mod.encrypt_forest(self.trees, self.key.partitions, rng)
        self.server = Server(enc)

    def _reencrypt_tree(self, partition: int, tag: str) -> None:
        """Proxy pushes one whole re-encrypted tree to the server."""
        if self.key is None:
            return
        rng = np.random.default_rng(_derive_seed(self.config.seed, f"enc:{tag}"))
        enc = forest_mod.encrypt_tree(self.trees[partition], self.key[partition], rng)
        self.server.replace_tree(partition, enc)

    # -- query path ---------------------------------------------------------

    @property
    def s(self) -> int:
        return self.pset.s

    def real_query_vectors(self, keywords: Mapping[str, float]) -> dict[int, np.ndarray]:
        """Per-partition query weights over the real dimensions only."""
        out = {
            p: np.zeros(len(self.pset.sub_dictionaries[p])) for p in range(self.s)
        }
        for word, weight in keywords.items():
            if weight < 0:
                raise EncSearchError(f"negative weight for keyword {word!r}")
            loc = self.pset.home.get(word)
            if loc is None:
                continue  # unknown keyword: empty contribution
            p, dim = loc
            out[p][dim] = weight
        return out

    def select_partitions(
        self, keywords: Mapping[str, float], t: int | None
    ) -> list[int]:
        """Pick the t partitions whose sub-dictionaries best cover the query
        (covered weight descending, partition id ascending).  A query touching
        no known keyword selects all partitions."""
        covered = np.zeros(self.s)
        for word, weight in keywords.items():
            loc = self.pset.home.get(word)
            if loc is not None:
                covered[loc[0]] += weight
        candidates = [p for p in range(self.s) if covered[p] > 0]
        if not candidates:
            candidates = list(range(self.s))
        candidates.sort(key=lambda p: (-covered[p], p))
        if t is not None:
            if not 1 <= t <= self.s:
                raise EncSearchError(f"t={t} out of range [1, {self.s}]")
            candidates = candidates[:t] if len(candidates) >= t else (
                candidates + [p for p in range(self.s) if p not in candidates]
            )[:t]
        return sorted(candidates)

    def make_trapdoors(
        self,
        keywords: Mapping[str, float],
        selected: Sequence[int],
        alphas: Mapping[int, np.ndarray] | None = None,
    ) -> dict[int, aspe.Trapdoor]:
        real = self.real_query_vectors(keywords)
        trapdoors = {}
        for p in selected:
            u = self.noise[p].pseudo_count
            if alphas is not None and p in alphas:
                alpha = np.asarray(alphas[p], dtype=np.float64)
            else:
                alpha = self._query_rng.uniform(0.0, 1.0, size=u)
            q = np.concatenate([real[p], alpha])
            trapdoors[p] = aspe.make_trapdoor(q, self.key[p], self._query_rng)
        return trapdoors

    def query(
        self,
        keywords: Mapping[str, float] | Sequence[str],
        k: int,
        t: int | None = None,
        partitions: Sequence[int] | None = None,
        quota: int | None = None,
        grant: UserGrant | None = None,
        alphas: Mapping[int, np.ndarray] | None = None,
    ) -> SearchResult:
        """Full search: trapdoor generation at the proxy, ranked greedy search
        at the server.  ``keywords`` may be a list (weight 1.0 each)."""
        if self.server is None:
            raise EncSearchError("pipeline was built without encryption")
        if not isinstance(keywords, Mapping):
            keywords = {w: 1.0 for w in keywords}
        selected = (
            sorted(partitions) if partitions is not None else self.select_partitions(keywords, t)
        )
        if not selected:
            raise ForestError("no index partitions selected")
        if grant is not None and not authorize(grant, selected, self.partition_attributes):
            raise AccessError(f"user {grant.user_id} is not granted partitions {selected}")
        start = time.perf_counter()
        trapdoors = self.make_trapdoors(keywords, selected, alphas)
        results, visited = self.server.search(trapdoors, k, selected, quota)
        elapsed = time.perf_counter() - start
        return SearchResult(results, visited, list(selected), elapsed)

    def exact_search(
        self, keywords: Mapping[str, float] | Sequence[str], k: int | None = None
    ) -> list[tuple[int, float]]:
        """Ground truth: plaintext, unpadded weighted scores over all
        partitions, no per-tree quota."""
        if not isinstance(keywords, Mapping):
            keywords = {w: 1.0 for w in keywords}
        real = self.real_query_vectors(keywords)
        scored: list[tuple[int, float]] = []
        for p in range(self.s):
            if self.weighted_mats[p].size == 0:
                continue
            scores = self.weighted_mats[p] @ real[p]
            for (doc_id, _owner), sc in zip(self.pset.members[p], scores):
                scored.append((doc_id, round_score(sc)))
        scored.sort(key=lambda e: (-e[1], e[0]))
        return scored if k is None else scored[:k]

    # -- sigma sweep handle (padding.optimize_noise protocol) ---------------

    def set_sigma(self, sigma: float) -> None:
        """Re-pad with the same noise pattern scaled to ``sigma``, rebuild the
        forest ordering and re-encrypt.  Keys and dimensions are unchanged."""
        self._build_noise(sigma)
        self._pad()
        self._build_forest()
        if self.config.encrypt and self.key is not None:
            self._encrypt_forest(tag=f"sigma:{sigma}")

    def run_query(self, query: QuerySpec, k: int) -> list[tuple[int, float]]:
        res = self.query(
            query.keywords, k, partitions=list(range(self.s)), quota=k, alphas=query.alphas
        )
        return res.results

    def exact_query(self, query: QuerySpec, k: int) -> list[tuple[int, float]]:
        return self.exact_search(query.keywords, k)

    def sample_queries(
        self, count: int, n_keywords: int = 10, seed: int = 0, partition: int | None = None
    ) -> list[QuerySpec]:
        """Zipf-weighted keyword queries with frozen pseudo-entry values.

        ``partition`` restricts keyword choice to one sub-dictionary
        (cluster-coherent workload)."""
        rng = np.random.default_rng(seed)
        if partition is None:
            words = list(self.dictionary.words)
            df = np.zeros(len(words))
            for p in range(self.s):
                for w in self.pset.sub_dictionaries[p]:
                    df[self.dictionary.position[w]] = self.pset.compressed[p][
                        :, self.pset.sub_positions[p][w]
                    ].sum()
        else:
            words = list(self.pset.sub_dictionaries[partition])
            df = self.pset.compressed[partition].sum(axis=0).astype(np.float64)
        if not words:
            raise EncSearchError(
                f"cannot sample queries: partition {partition} has an empty sub-dictionary"
            )
        ranks = np.empty(len(words), dtype=np.int64)
        ranks[np.argsort(-df, kind="stable")] = np.arange(1, len(words) + 1)
        pmf = 1.0 / ranks.astype(np.float64) ** self.config.zipf_a
        pmf /= pmf.sum()
        queries = []
        for _ in range(count):
            picks = rng.choice(len(words), size=min(n_keywords, len(words)), replace=False, p=pmf)
            keywords = {words[j]: 1.0 for j in picks}
            alphas = {
                p: rng.uniform(0.0, 1.0, size=self.noise[p].pseudo_count)
                for p in range(self.s)
            }
            queries.append(QuerySpec(keywords, alphas))
        return queries

    # -- dynamic maintenance ------------------------------------------------

    def _partition_for(self, doc: Document) -> int:
        coverage = np.zeros(self.s)
        for word, count in doc.counts.items():
            loc = self.pset.home.get(word)
            if loc is not None:
                coverage[loc[0]] += count
        return int(coverage.argmax())  # ties -> lowest partition id

    def _secure_vector_for(self, doc: Document, p: int) -> np.ndarray:
        """Compressed, weighted, padded vector for a new document."""
        n_real = len(self.pset.sub_dictionaries[p])
        bits = np.zeros(n_real)
        tf = np.zeros(n_real)
        for word, count in doc.counts.items():
            dim = self.pset.sub_positions[p].get(word)
            if dim is not None:
                bits[dim] = 1.0
                tf[dim] = count
        owner_w = self.weights[p].get(doc.owner_id)
        if owner_w is not None:
            w = owner_w.normalized
        else:
            # Unknown owner: weight this single document through the stored
            # correlativity and per-keyword maxima, clipped to the weight range.
            raw = self.correlativity[p] @ tf
            wmax = self.w_max[p]
            w = np.where(wmax > 0, np.minimum(raw / np.where(wmax > 0, wmax, 1.0), 1.0), 0.0)
        weighted = bits * w
        model = self.noise[p]
        rng = np.random.default_rng(_derive_seed(self.config.seed, f"ins:{doc.doc_id}"))
        padded = np.concatenate([weighted, np.zeros(model.pseudo_count)])
        if model.pseudo_count:
            pos = rng.choice(model.pseudo_count, size=model.omega, replace=False)
            padded[n_real + pos] = np.clip(
                model.sigma * rng.standard_normal(model.omega), -1.0, 1.0
            )
        return padded

    def insert_document(self, doc: Document, partition: int | None = None) -> UpdateReport:
        """Add one document: only its partition's tree is touched; the proxy
        re-encrypts and pushes that single tree."""
        if doc.doc_id in self.docs_by_id:
            raise EncSearchError(f"doc_id {doc.doc_id} already exists")
        p = partition if partition is not None else self._partition_for(doc)
        if not 0 <= p < self.s:
            raise ForestError(f"unknown partition {p}")
        vec = self._secure_vector_for(doc, p)

        self.docs_by_id[doc.doc_id] = doc
        self.pset.assignments[doc.doc_id] = p
        self.pset.members[p].append((doc.doc_id, doc.owner_id))
        n_real = len(self.pset.sub_dictionaries[p])
        bits = (vec[:n_real] > 0).astype(np.uint8)
        self.pset.compressed[p] = np.vstack([self.pset.compressed[p], bits])
        self.weighted_mats[p] = np.vstack([self.weighted_mats[p], vec[:n_real]])
        self.secure_mats[p] = np.vstack([self.secure_mats[p], vec])

        touched, needs_rebuild = forest_mod.insert_leaf(self.trees[p], doc.doc_id, vec)
        if needs_rebuild:
            self.trees[p] = forest_mod.rebuild_tree(self.trees[p])
        if self.config.encrypt and self.key is not None:
            self._reencrypt_tree(p, tag=f"ins:{doc.doc_id}")
        return UpdateReport(doc.doc_id, p, touched, needs_rebuild)

    def delete_document(self, doc_id: int) -> UpdateReport:
        if doc_id not in self.docs_by_id:
            raise EncSearchError(f"unknown doc_id {doc_id}")
        p = self.pset.assignments.pop(doc_id)
        row = next(
            i for i, (d, _o) in enumerate(self.pset.members[p]) if d == doc_id
        )
        del self.pset.members[p][row]
        keep = np.ones(self.pset.compressed[p].shape[0], dtype=bool)
        keep[row] = False
        self.pset.compressed[p] = self.pset.compressed[p][keep]
        self.weighted_mats[p] = self.weighted_mats[p][keep]
        self.secure_mats[p] = self.secure_mats[p][keep]
        del self.docs_by_id[doc_id]

        touched = forest_mod.delete_leaf(self.trees[p], doc_id)
        rebuilt = False
        tree = self.trees[p]
        if tree.root is not None and len(tree.leaves) * 2 <= tree.size_at_build:
            self.trees[p] = forest_mod.rebuild_tree(tree)
            rebuilt = True
        if self.config.encrypt and self.key is not None:
            self._reencrypt_tree(p, tag=f"del:{doc_id}")
        return UpdateReport(doc_id, p, touched, rebuilt)

    # -- persistence --------------------------------------------------------

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(asdict(self.config)))
        save_corpus(
            sorted(self.docs_by_id.values(), key=lambda d: d.doc_id), out / "corpus.jsonl"
        )
        save_dictionary(self.dictionary, out / "dictionary.txt")
        partitioning.save_partition_set(self.pset, out / "partitions.json")
        (out / "noise.json").write_text(
            json.dumps(
                [
                    {"pseudo_count": m.pseudo_count, "sigma": m.sigma, "omega": m.omega, "seed": m.seed}
                    for m in self.noise
                ]
            )
        )
        arrays = {}
        for p in range(self.s):
            arrays[f"corr{p}"] = self.correlativity[p]
            arrays[f"wmax{p}"] = self.w_max[p]
            arrays[f"weighted{p}"] = self.weighted_mats[p]
            arrays[f"secure{p}"] = self.secure_mats[p]
            for owner, ow in self.weights[p].items():
                arrays[f"w{p}_{owner}"] = ow.normalized
                arrays[f"raw{p}_{owner}"] = ow.raw
        np.savez(out / "arrays.npz", **arrays)
        forest_mod.save_forest(self.trees, out / "forest_plain.bin")
        if self.key is not None:
            aspe.save_key(self.key, out / "keys.bin")
            forest_mod.save_forest(self.server.trees, out / "forest_enc.bin")

    @classmethod
    def load(cls, out_dir: str | Path) -> "Pipeline":
        out = Path(out_dir)
        self = cls()
        self.config = PipelineConfig(**json.loads((out / "config.json").read_text()))
        docs = load_corpus(out / "corpus.jsonl")
        self.docs_by_id = {d.doc_id: d for d in docs}
        self.dictionary = load_dictionary(out / "dictionary.txt")
        self.pset = partitioning.load_partition_set(out / "partitions.json")
        noise_spec = json.loads((out / "noise.json").read_text())
        self.noise = [padding.NoiseModel(**m) for m in noise_spec]
        arrays = np.load(out / "arrays.npz")
        self.correlativity = [arrays[f"corr{p}"] for p in range(self.pset.s)]
        self.w_max = [arrays[f"wmax{p}"] for p in range(self.pset.s)]
        self.weighted_mats = [arrays[f"weighted{p}"] for p in range(self.pset.s)]
        self.secure_mats = [arrays[f"secure{p}"] for p in range(self.pset.s)]
        self.weights = []
        for p in range(self.pset.s):
            owners = {owner for _, owner in self.pset.members[p]}
            w = {}
            for owner in owners:
                key = f"w{p}_{owner}"
                if key in arrays:
                    w[owner] = weighting.OwnerWeights(
                        owner_id=owner,
                        partition=p,
                        doc_freq=np.zeros(0),
                        alpha=np.zeros(0),
                        akp=np.zeros(0),
                        raw=arrays[f"raw{p}_{owner}"],
                        normalized=arrays[key],
                    )
            self.weights.append(w)
        self.trees = forest_mod.load_forest(out / "forest_plain.bin")
        if (out / "keys.bin").exists():
            self.key = aspe.load_key(out / "keys.bin")
            self.server = Server(forest_mod.load_forest(out / "forest_enc.bin"))
        self._query_rng = np.random.default_rng(_derive_seed(self.config.seed, "query"))
        return self
