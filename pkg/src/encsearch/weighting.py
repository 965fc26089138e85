"""Keyword correlativity and owner-level weight generation.

For each partition the keyword correlativity matrix is the cosine similarity
of keyword incidence columns over that partition's documents.  Per owner, the
average keyword popularity (average term frequency over the owner's documents
containing the keyword) is smoothed through the correlativity matrix and then
normalized per keyword by the maximum raw weight across owners in the
partition, giving weights in [0, 1].  Weighted index vectors are the
elementwise product of a document's compressed bits with its owner's weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Document
from .errors import WeightingError


def build_correlativity(compressed: np.ndarray) -> np.ndarray:
    """Cosine similarity of keyword incidence columns; unit diagonal.

    ``compressed`` is the (M_i, N_i) 0/1 matrix of one partition.  Columns
    with no occurrences get similarity 0 against everything.
    """
    X = compressed.astype(np.float64)
    gram = X.T @ X
    norms = np.sqrt(np.diag(gram))
    denom = np.outer(norms, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = np.where(denom > 0, gram / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(S, 1.0)
    S = np.clip(S, 0.0, 1.0)
    return (S + S.T) / 2.0  # exact symmetry despite float rounding


@dataclass
class OwnerWeights:
    """Weight vectors of one owner inside one partition."""

    owner_id: int
    partition: int
    doc_freq: np.ndarray    # |L_i(w_t)|: owner docs containing keyword t
    alpha: np.ndarray       # 1/doc_freq where nonzero, else 0
    akp: np.ndarray         # average keyword popularity
    raw: np.ndarray         # correlativity-smoothed raw weights
    normalized: np.ndarray  # raw / per-keyword max over owners, in [0, 1]


@dataclass(frozen=True)
class WeightedIndex:
    doc_id: int
    owner_id: int
    partition: int
    values: np.ndarray  # (N_i,), floats in [0, 1]


def compute_weights(
    docs_by_id: Mapping[int, Document],
    members: Sequence[tuple[int, int]],
    sub_positions: Mapping[str, int],
    correlativity: np.ndarray,
    partition: int,
) -> dict[int, OwnerWeights]:
    """Per-owner weights for one partition.

    Keyword weights are compared (and the per-keyword maximum taken) only
    across owners present in this partition.
    """
    n = len(sub_positions)
    if correlativity.shape != (n, n):
        raise WeightingError(
            f"correlativity shape {correlativity.shape} does not match N={n}"
        )
    owners = sorted({owner for _, owner in members})
    tf = {o: np.zeros(n) for o in owners}
    df = {o: np.zeros(n) for o in owners}
    for doc_id, owner in members:
        doc = docs_by_id[doc_id]
        for word, count in doc.counts.items():
            t = sub_positions.get(word)
            if t is not None:
                tf[owner][t] += count
                df[owner][t] += 1

    raw = {}
    for o in owners:
        with np.errstate(divide="ignore"):
            alpha = np.where(df[o] > 0, 1.0 / np.where(df[o] > 0, df[o], 1.0), 0.0)
        akp = tf[o] * alpha
        raw[o] = (correlativity @ akp, akp, alpha)

    w_max = np.zeros(n)
    for o in owners:
        w_max = np.maximum(w_max, raw[o][0])

    out = {}
    for o in owners:
        w_raw, akp, alpha = raw[o]
        normalized = np.where(w_max > 0, w_raw / np.where(w_max > 0, w_max, 1.0), 0.0)
        out[o] = OwnerWeights(
            owner_id=o,
            partition=partition,
            doc_freq=df[o],
            alpha=alpha,
            akp=akp,
            raw=w_raw,
            normalized=normalized,
        )
    return out


def weight_indexes(
    members: Sequence[tuple[int, int]],
    compressed: np.ndarray,
    weights: Mapping[int, OwnerWeights],
    partition: int,
) -> list[WeightedIndex]:
    """Elementwise product of compressed bits with the owner's weight vector."""
    out = []
    for row, (doc_id, owner) in enumerate(members):
        if owner not in weights:
            raise WeightingError(f"no weights computed for owner {owner}")
        w = weights[owner].normalized
        bits = compressed[row]
        if bits.shape != w.shape:
            raise WeightingError(
                f"dimension mismatch: index {bits.shape} vs weights {w.shape}"
            )
        out.append(WeightedIndex(doc_id, owner, partition, bits.astype(np.float64) * w))
    return out


def weighted_matrix(weighted: Sequence[WeightedIndex]) -> np.ndarray:
    """Stack weighted index vectors into an (M_i, N_i) matrix (member order)."""
    if not weighted:
        return np.zeros((0, 0))
    return np.stack([w.values for w in weighted])
