"""Two-stage index clustering and keyword-dictionary segmentation.

Stage 1 splits each owner's index vectors into two clusters (L1 2-means; the
representative of a cluster is the mean of its members' bits).  Stage 2 groups
all initial clusters into ``s`` final partitions with L1 k-means using
component-wise median centroids.  The dictionary is then segmented: every
keyword goes to the single partition where its document frequency is maximal,
and each partition's index vectors are compressed down to its own sub-dictionary
dimensions (dropping dimensions that are zero partition-wide).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import BinaryIndex, KeywordDictionary
from .errors import PartitioningError

FORMAT_VERSION = 1


@dataclass
class InitialPartition:
    """One local cluster: its members and the mean-of-bits representative."""

    members: list[tuple[int, int]]  # (doc_id, owner_id)
    representative: np.ndarray


@dataclass
class PartitionSet:
    """Final partitions, disjoint sub-dictionaries and compressed indexes."""

    s: int
    assignments: dict[int, int]             # doc_id -> partition id (0-based)
    sub_dictionaries: list[list[str]]       # words of partition i, global dict order
    sub_positions: list[dict[str, int]]     # word -> local dimension, per partition
    members: list[list[tuple[int, int]]]    # (doc_id, owner_id) per partition
    compressed: list[np.ndarray]            # (M_i, N_i) uint8 matrix per partition
    home: dict[str, tuple[int, int]]        # word -> (partition, local dimension)

    @property
    def sizes(self) -> list[int]:
        return [len(d) for d in self.sub_dictionaries]


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).sum())


def local_split(owner_indexes: Sequence[BinaryIndex], max_iter: int = 20) -> list[InitialPartition]:
    """Split one owner's index vectors into at most two clusters.

    Deterministic: seeds are the pair of vectors at maximal L1 distance.  A
    single vector, or a set of identical vectors, yields one cluster.
    """
    if not owner_indexes:
        raise PartitioningError("owner has no index vectors")
    X = np.stack([ix.bits for ix in owner_indexes]).astype(np.float64)
    ids = [(ix.doc_id, ix.owner_id) for ix in owner_indexes]
    m = X.shape[0]
    if m == 1 or not np.any(X != X[0]):
        return [InitialPartition(ids, X.mean(axis=0))]

    # Seed with the most L1-separated pair (lowest indexes on ties).
    dists = np.abs(X[:, None, :] - X[None, :, :]).sum(axis=2)
    a, b = np.unravel_index(np.argmax(dists), dists.shape)
    centers = np.stack([X[min(a, b)], X[max(a, b)]])
    labels = None
    for _it in range(max_iter):
        d0 = np.abs(X - centers[0]).sum(axis=1)
        d1 = np.abs(X - centers[1]).sum(axis=1)
        new_labels = (d1 < d0).astype(int)  # ties go to cluster 0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        if labels.min() == labels.max():
            break
        centers = np.stack([np.median(X[labels == c], axis=0) for c in (0, 1)])

    out = []
    for c in (0, 1):
        mask = labels == c
        if mask.any():
            out.append(
                InitialPartition(
                    [ids[i] for i in np.flatnonzero(mask)], X[mask].mean(axis=0)
                )
            )
    return out


def _kmeans_pp_init(R: np.ndarray, s: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding under L1 distance."""
    p = R.shape[0]
    first = int(rng.integers(p))
    centers = [R[first]]
    d = np.abs(R - centers[0]).sum(axis=1)
    for _ in range(1, s):
        if d.sum() <= 0:
            idx = int(rng.integers(p))
        else:
            idx = int(rng.choice(p, p=d / d.sum()))
        centers.append(R[idx])
        d = np.minimum(d, np.abs(R - centers[-1]).sum(axis=1))
    return np.stack(centers)


def global_cluster(
    initials: Sequence[InitialPartition],
    s: int,
    seed: int = 0,
    max_iter: int = 100,
) -> dict[int, int]:
    """Assign every initial cluster (all its members together) to one of ``s``
    final partitions.  L1 k-means with component-wise median centroids.

    Returns the doc_id -> partition id map.
    """
    p = len(initials)
    if not 1 <= s <= p:
        raise PartitioningError(f"s={s} out of range [1, {p}]")
    R = np.stack([ip.representative for ip in initials])
    if s == 1:
        labels = np.zeros(p, dtype=int)
    else:
        rng = np.random.default_rng(seed)
        centers = _kmeans_pp_init(R, s, rng)
        labels = np.full(p, -1, dtype=int)
        for _ in range(max_iter):
            d = np.abs(R[:, None, :] - centers[None, :, :]).sum(axis=2)
            new_labels = d.argmin(axis=1)
            # Re-seat empty clusters on the farthest representative.
            for c in range(s):
                if not np.any(new_labels == c):
                    far = int(d.min(axis=1).argmax())
                    new_labels[far] = c
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
            centers = np.stack([np.median(R[labels == c], axis=0) for c in range(s)])

    assignments: dict[int, int] = {}
    for ip, lab in zip(initials, labels):
        for doc_id, _owner in ip.members:
            assignments[doc_id] = int(lab)
    return assignments


def segment_dictionary(
    assignments: dict[int, int],
    binary_indexes: Sequence[BinaryIndex],
    dictionary: KeywordDictionary,
    s: int,
) -> PartitionSet:
    """Build sub-dictionaries and compressed per-partition index matrices.

    A keyword is assigned to the partition where its document frequency is
    maximal (ties break toward the lowest partition id); its dimensions in all
    other partitions are dropped along with partition-wide zero dimensions.
    """
    by_id = {ix.doc_id: ix for ix in binary_indexes}
    for doc_id in by_id:
        if doc_id not in assignments:
            raise PartitioningError(f"doc {doc_id} has no partition assignment")

    n = len(dictionary)
    df = np.zeros((s, n), dtype=np.int64)
    members: list[list[tuple[int, int]]] = [[] for _ in range(s)]
    for ix in binary_indexes:
        part = assignments[ix.doc_id]
        df[part] += ix.bits
        members[part].append((ix.doc_id, ix.owner_id))
    for part in range(s):
        members[part].sort()

    home_part = df.argmax(axis=0)  # argmax ties -> lowest partition id
    sub_dictionaries: list[list[str]] = [[] for _ in range(s)]
    sub_positions: list[dict[str, int]] = [{} for _ in range(s)]
    home: dict[str, tuple[int, int]] = {}
    for j, word in enumerate(dictionary.words):
        part = int(home_part[j])
        if df[part, j] == 0:
            continue  # keyword absent from the corpus slice; drop it
        local = len(sub_dictionaries[part])
        sub_dictionaries[part].append(word)
        sub_positions[part][word] = local
        home[word] = (part, local)

    compressed = []
    for part in range(s):
        dims = [dictionary.position[w] for w in sub_dictionaries[part]]
        if members[part]:
            mat = np.stack([by_id[doc_id].bits[dims] for doc_id, _ in members[part]])
        else:
            mat = np.zeros((0, len(dims)), dtype=np.uint8)
        compressed.append(mat.astype(np.uint8))

    return PartitionSet(
        s=s,
        assignments=dict(assignments),
        sub_dictionaries=sub_dictionaries,
        sub_positions=sub_positions,
        members=members,
        compressed=compressed,
        home=home,
    )


def default_partition_count(dictionary_size: int, target_dim: int = 1000) -> int:
    """Heuristic: about ``target_dim`` keywords per sub-dictionary."""
    return max(1, -(-dictionary_size // target_dim))


def partition_owners(
    binary_indexes: Sequence[BinaryIndex],
) -> dict[int, list[BinaryIndex]]:
    by_owner: dict[int, list[BinaryIndex]] = {}
    for ix in binary_indexes:
        by_owner.setdefault(ix.owner_id, []).append(ix)
    return by_owner


def cluster_indexes(
    binary_indexes: Sequence[BinaryIndex],
    dictionary: KeywordDictionary,
    s: int,
    seed: int = 0,
    splitter: Callable[[Sequence[BinaryIndex]], list[InitialPartition]] = local_split,
) -> PartitionSet:
    """Full pipeline: per-owner local split, global clustering, segmentation."""
    initials: list[InitialPartition] = []
    for owner in sorted(partition_owners(binary_indexes)):
        initials.extend(splitter(partition_owners(binary_indexes)[owner]))
    assignments = global_cluster(initials, s, seed=seed)
    return segment_dictionary(assignments, binary_indexes, dictionary, s)


# ---------------------------------------------------------------------------
# Serialization (versioned JSON record file).

def save_partition_set(pset: PartitionSet, path: str | Path) -> None:
    payload = {
        "version": FORMAT_VERSION,
        "s": pset.s,
        "assignments": {str(k): v for k, v in pset.assignments.items()},
        "sub_dictionaries": pset.sub_dictionaries,
        "members": pset.members,
        "compressed": [mat.tolist() for mat in pset.compressed],
    }
    Path(path).write_text(json.dumps(payload))


def load_partition_set(path: str | Path) -> PartitionSet:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != FORMAT_VERSION:
        raise PartitioningError(f"unsupported partition-set version in {path}")
    sub_dictionaries = payload["sub_dictionaries"]
    sub_positions = [{w: i for i, w in enumerate(d)} for d in sub_dictionaries]
    home = {}
    for part, words in enumerate(sub_dictionaries):
        for local, w in enumerate(words):
            home[w] = (part, local)
    return PartitionSet(
        s=payload["s"],
        assignments={int(k): v for k, v in payload["assignments"].items()},
        sub_dictionaries=sub_dictionaries,
        sub_positions=sub_positions,
        members=[[tuple(t) for t in group] for group in payload["members"]],
        compressed=[
            np.array(mat, dtype=np.uint8)
            if mat
            else np.zeros((0, len(words)), dtype=np.uint8)
            for mat, words in zip(payload["compressed"], sub_dictionaries)
        ],
        home=home,
    )
