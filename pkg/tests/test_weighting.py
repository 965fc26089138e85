import numpy as np
import pytest

from encsearch.corpus import Document, build_binary_indexes, build_dictionary, synthetic_corpus
from encsearch.errors import WeightingError
from encsearch.partitioning import cluster_indexes
from encsearch.weighting import (
    OwnerWeights,
    build_correlativity,
    compute_weights,
    weight_indexes,
    weighted_matrix,
)


class TestCorrelativity:
    def test_always_cooccurring(self):
        mat = np.array([[1, 1], [1, 1], [1, 1]], dtype=np.uint8)
        S = build_correlativity(mat)
        assert S[0, 1] == pytest.approx(1.0)

    def test_never_cooccurring(self):
        mat = np.array([[1, 0], [1, 0], [0, 1]], dtype=np.uint8)
        S = build_correlativity(mat)
        assert S[0, 1] == pytest.approx(0.0)

    def test_matches_cosine_oracle(self):
        # Oracle: direct double loop over incidence columns.
        rng = np.random.default_rng(4)
        mat = rng.integers(0, 2, size=(10, 6)).astype(np.uint8)
        S = build_correlativity(mat)
        X = mat.astype(float)
        for a in range(6):
            for b in range(6):
                if a == b:
                    assert S[a, b] == 1.0
                    continue
                na, nb = np.linalg.norm(X[:, a]), np.linalg.norm(X[:, b])
                want = float(X[:, a] @ X[:, b] / (na * nb)) if na > 0 and nb > 0 else 0.0
                assert S[a, b] == pytest.approx(want, abs=1e-12)

    def test_symmetric_unit_diagonal_in_range(self):
        rng = np.random.default_rng(1)
        mat = rng.integers(0, 2, size=(20, 9)).astype(np.uint8)
        S = build_correlativity(mat)
        np.testing.assert_array_equal(S, S.T)
        np.testing.assert_allclose(np.diag(S), 1.0)
        assert (S >= 0).all() and (S <= 1).all()

    def test_zero_column(self):
        mat = np.array([[1, 0], [1, 0]], dtype=np.uint8)
        S = build_correlativity(mat)
        assert S[0, 1] == 0.0
        assert S[1, 1] == 1.0  # diagonal forced even for absent keywords


def two_owner_fixture():
    """Hand-built 3-keyword partition: two owners, one doc each."""
    docs = {
        1: Document.from_terms(1, 1, ["a", "a", "b"]),   # owner 1: tf a=2, b=1
        2: Document.from_terms(2, 2, ["a", "c", "c", "c"]),  # owner 2: tf a=1, c=3
    }
    members = [(1, 1), (2, 2)]
    sub_positions = {"a": 0, "b": 1, "c": 2}
    compressed = np.array([[1, 1, 0], [1, 0, 1]], dtype=np.uint8)
    corr = build_correlativity(compressed)
    return docs, members, sub_positions, compressed, corr


class TestComputeWeights:
    def test_absent_keyword_zero(self):
        docs, members, pos, _, corr = two_owner_fixture()
        w = compute_weights(docs, members, pos, corr, 0)
        assert w[1].akp[pos["c"]] == 0.0
        assert w[1].alpha[pos["c"]] == 0.0

    def test_single_owner_identity_corr_self_normalized(self):
        docs = {1: Document.from_terms(1, 1, ["a", "a", "b"])}
        pos = {"a": 0, "b": 1}
        w = compute_weights(docs, [(1, 1)], pos, np.eye(2), 0)
        # AKP = (2, 1); with identity smoothing, normalized per keyword by the
        # only owner's own raw weight -> all present keywords weight 1.
        np.testing.assert_allclose(w[1].akp, [2.0, 1.0])
        np.testing.assert_allclose(w[1].normalized, [1.0, 1.0])

    def test_hand_computation(self):
        # Oracle: independent scalar recomputation of AKP, S@AKP and the
        # per-keyword normalization.
        docs, members, pos, compressed, corr = two_owner_fixture()
        w = compute_weights(docs, members, pos, corr, 0)

        akp1 = np.array([2.0, 1.0, 0.0])  # tf/df: a 2/1, b 1/1, c absent
        akp2 = np.array([1.0, 0.0, 3.0])
        raw1 = corr @ akp1
        raw2 = corr @ akp2
        w_max = np.maximum(raw1, raw2)
        np.testing.assert_allclose(w[1].akp, akp1)
        np.testing.assert_allclose(w[2].akp, akp2)
        np.testing.assert_allclose(w[1].raw, raw1)
        np.testing.assert_allclose(w[2].raw, raw2)
        want1 = np.where(w_max > 0, raw1 / np.where(w_max > 0, w_max, 1), 0.0)
        np.testing.assert_allclose(w[1].normalized, want1)

    def test_per_keyword_max_is_one(self):
        docs = synthetic_corpus(30, 40, 4, seed=6)
        dictionary = build_dictionary(docs)
        indexes = build_binary_indexes(docs, dictionary)
        pset = cluster_indexes(indexes, dictionary, 2, seed=0)
        by_id = {d.doc_id: d for d in docs}
        for p in range(pset.s):
            corr = build_correlativity(pset.compressed[p])
            w = compute_weights(by_id, pset.members[p], pset.sub_positions[p], corr, p)
            stacked = np.stack([ow.normalized for ow in w.values()])
            raw = np.stack([ow.raw for ow in w.values()])
            for t in range(stacked.shape[1]):
                if raw[:, t].max() > 0:
                    assert stacked[:, t].max() == pytest.approx(1.0)
            assert (stacked >= 0).all() and (stacked <= 1 + 1e-12).all()

    def test_monotonicity_in_term_frequency(self):
        # Adding occurrences of a keyword never decreases that owner's AKP.
        base = {1: Document.from_terms(1, 1, ["a", "b"])}
        more = {1: Document.from_terms(1, 1, ["a", "a", "a", "b"])}
        pos = {"a": 0, "b": 1}
        wa = compute_weights(base, [(1, 1)], pos, np.eye(2), 0)[1].akp
        wb = compute_weights(more, [(1, 1)], pos, np.eye(2), 0)[1].akp
        assert (wb >= wa).all()

    def test_shape_mismatch_error(self):
        docs, members, pos, _, _ = two_owner_fixture()
        with pytest.raises(WeightingError, match="correlativity shape"):
            compute_weights(docs, members, pos, np.eye(2), 0)


class TestWeightIndexes:
    def test_elementwise_product(self):
        w = OwnerWeights(
            owner_id=1, partition=0,
            doc_freq=np.zeros(3), alpha=np.zeros(3), akp=np.zeros(3),
            raw=np.zeros(3), normalized=np.array([0.5, 0.9, 1.0]),
        )
        out = weight_indexes([(1, 1)], np.array([[1, 0, 1]], dtype=np.uint8), {1: w}, 0)
        np.testing.assert_allclose(out[0].values, [0.5, 0.0, 1.0])

    def test_zero_weights(self):
        w = OwnerWeights(1, 0, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2))
        out = weight_indexes([(1, 1)], np.array([[1, 1]], dtype=np.uint8), {1: w}, 0)
        assert not out[0].values.any()

    def test_missing_owner_error(self):
        with pytest.raises(WeightingError, match="owner 9"):
            weight_indexes([(1, 9)], np.ones((1, 2), dtype=np.uint8), {}, 0)

    def test_dimension_mismatch_error(self):
        w = OwnerWeights(1, 0, np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(WeightingError, match="mismatch"):
            weight_indexes([(1, 1)], np.ones((1, 2), dtype=np.uint8), {1: w}, 0)

    def test_matches_oracle_on_toy_partition(self):
        docs, members, pos, compressed, corr = two_owner_fixture()
        w = compute_weights(docs, members, pos, corr, 0)
        out = weight_indexes(members, compressed, w, 0)
        for row, (doc_id, owner) in enumerate(members):
            np.testing.assert_allclose(
                out[row].values, compressed[row] * w[owner].normalized
            )
        mat = weighted_matrix(out)
        assert mat.shape == compressed.shape
