import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encsearch.aspe import keygen, make_trapdoor
from encsearch.errors import ForestError
from encsearch.forest import (
    ProbeConfig,
    Tree,
    build_tree,
    delete_leaf,
    encrypt_tree,
    encrypted_scorer,
    gdfs,
    insert_leaf,
    load_forest,
    order_by_likelihood,
    plaintext_scorer,
    probe_aggregate,
    rebuild_tree,
    round_score,
    save_forest,
    search_forest,
)


def random_entries(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    return [(i, rng.random(dim)) for i in range(n)]


def brute_force_topk(entries, query, k):
    """Oracle: full scan with the (-score, doc_id) tie rule."""
    scored = [(round_score(vec @ query), doc_id) for doc_id, vec in entries]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(doc_id, s) for s, doc_id in scored[:k]]


class TestOrdering:
    def test_all_ones_probe_sorts_by_sum(self):
        entries = [(0, np.array([1.0, 1.0])), (1, np.array([3.0, 0.0])), (2, np.array([0.5, 0.5]))]
        ordered = order_by_likelihood(entries, np.ones(2))
        assert [d for d, _ in ordered] == [1, 0, 2]

    def test_ties_by_doc_id(self):
        entries = [(5, np.array([1.0])), (2, np.array([1.0])), (9, np.array([2.0]))]
        ordered = order_by_likelihood(entries, np.ones(1))
        assert [d for d, _ in ordered] == [9, 2, 5]

    def test_matches_sort_oracle(self):
        entries = random_entries(30, 6, seed=3)
        probe = np.abs(np.random.default_rng(1).normal(size=6))
        ordered = order_by_likelihood(entries, probe)
        want = sorted(entries, key=lambda e: (-float(e[1] @ probe), e[0]))
        assert [d for d, _ in ordered] == [d for d, _ in want]

    def test_probe_aggregate_shape_and_pseudo_zero(self):
        agg = probe_aggregate(5, 8, np.arange(5, dtype=float), ProbeConfig(count=50, seed=1))
        assert agg.shape == (8,)
        assert not agg[5:].any()
        assert (agg[:5] >= 0).all() and agg[:5].sum() > 0

    def test_probe_aggregate_deterministic(self):
        cfg = ProbeConfig(count=20, seed=4)
        pop = np.arange(6, dtype=float)
        np.testing.assert_array_equal(
            probe_aggregate(6, 6, pop, cfg), probe_aggregate(6, 6, pop, cfg)
        )

    def test_probe_count_error(self):
        with pytest.raises(ForestError):
            probe_aggregate(3, 3, np.ones(3), ProbeConfig(count=0))


class TestBuildTree:
    def test_single_leaf(self):
        tree = build_tree([(7, np.array([1.0, 2.0]))])
        assert tree.root.is_leaf and tree.root.doc_id == 7
        assert tree.depth() == 0
        assert tree.node_count() == 1

    def test_unit_basis_root_is_all_ones(self):
        entries = [(i, np.eye(4)[i]) for i in range(4)]
        tree = build_tree(entries)
        np.testing.assert_array_equal(tree.root.vec, np.ones(4))
        assert tree.node_count() == 7
        assert tree.depth() == 2

    def test_odd_promotion(self):
        # 3 leaves: pair (0, 1), promote 2; root pairs that with leaf 2.
        entries = [(i, np.full(2, float(i + 1))) for i in range(3)]
        tree = build_tree(entries)
        assert tree.depth() == 2
        assert tree.root.right.is_leaf and tree.root.right.doc_id == 2
        assert not tree.root.left.is_leaf

    @pytest.mark.parametrize("m", [1, 2, 3, 5, 8, 17, 64, 100])
    def test_depth_bound_and_leaf_order(self, m):
        entries = random_entries(m, 3, seed=m)
        tree = build_tree(entries)
        assert tree.depth() <= int(np.ceil(np.log2(m))) + 1 if m > 1 else tree.depth() == 0
        assert [leaf.doc_id for leaf in tree.leaves] == [d for d, _ in entries]
        assert tree.node_count() == 2 * m - 1

    def test_internal_bound_soundness(self):
        # Every internal vector dominates every descendant leaf elementwise,
        # so for a non-negative query the internal score is an upper bound.
        entries = random_entries(25, 5, seed=9)
        tree = build_tree(entries)

        def check(node):
            if node.is_leaf:
                return [node.vec]
            below = check(node.left) + check(node.right)
            for v in below:
                assert (node.vec >= v - 1e-12).all()
            return below

        check(tree.root)

    def test_empty_error(self):
        with pytest.raises(ForestError):
            build_tree([])


class TestGdfs:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_matches_brute_force(self, seed, k):
        entries = random_entries(40, 6, seed=seed)
        tree = build_tree(entries)
        query = np.abs(np.random.default_rng(seed + 100).normal(size=6))
        got, visited = gdfs(tree, plaintext_scorer(query), k)
        assert got == brute_force_topk(entries, query, k)
        assert 1 <= visited <= tree.node_count()

    def test_zero_query_returns_lowest_doc_ids(self):
        entries = random_entries(12, 4, seed=5)
        tree = build_tree(entries)
        got, _ = gdfs(tree, plaintext_scorer(np.zeros(4)), 3)
        assert [d for d, _ in got] == [0, 1, 2]

    def test_quota_larger_than_tree(self):
        entries = random_entries(4, 3, seed=1)
        tree = build_tree(entries)
        query = np.ones(3)
        got, _ = gdfs(tree, plaintext_scorer(query), 10)
        assert len(got) == 4
        assert got == brute_force_topk(entries, query, 4)

    def test_quota_error(self):
        tree = build_tree(random_entries(2, 2))
        with pytest.raises(ForestError):
            gdfs(tree, plaintext_scorer(np.ones(2)), 0)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_exactness_property(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 64))
        dim = int(rng.integers(1, 8))
        entries = [(i, rng.random(dim)) for i in range(m)]
        probe = np.abs(rng.normal(size=dim))
        tree = build_tree(order_by_likelihood(entries, probe), probe=probe)
        query = np.abs(rng.normal(size=dim)) * rng.integers(0, 2, size=dim)
        k = int(rng.integers(1, m + 1))
        got, _ = gdfs(tree, plaintext_scorer(query), k)
        assert got == brute_force_topk(entries, query, k)


class TestSearchForest:
    def make_forest(self, seed=0):
        rng = np.random.default_rng(seed)
        trees, all_entries = [], []
        base = 0
        for p in range(3):
            entries = [(base + i, rng.random(4)) for i in range(10 + p)]
            base += 100
            trees.append(build_tree(entries, partition=p))
            all_entries.extend(entries)
        return trees, all_entries

    def test_merge_matches_global_oracle(self):
        trees, all_entries = self.make_forest()
        query = np.abs(np.random.default_rng(7).normal(size=4))
        scorers = [plaintext_scorer(query)] * 3
        got, visits = search_forest(trees, scorers, k=8, quota=8)
        assert got == brute_force_topk(all_entries, query, 8)
        assert set(visits) == {0, 1, 2}

    def test_selected_subset(self):
        trees, all_entries = self.make_forest()
        query = np.ones(4)
        scorers = [plaintext_scorer(query)] * 3
        got, visits = search_forest(trees, scorers, k=5, selected=[1], quota=5)
        subset = [(d, v) for d, v in all_entries if 100 <= d < 200]
        assert got == brute_force_topk(subset, query, 5)
        assert set(visits) == {1}

    def test_default_quota_is_ceil_k_over_t(self):
        trees, _ = self.make_forest()
        query = np.ones(4)
        scorers = [plaintext_scorer(query)] * 3
        got, _ = search_forest(trees, scorers, k=7)  # quota ceil(7/3)=3 per tree
        assert len(got) == 7

    def test_errors(self):
        trees, _ = self.make_forest()
        scorers = [plaintext_scorer(np.ones(4))] * 3
        with pytest.raises(ForestError):
            search_forest(trees, scorers, k=0)
        with pytest.raises(ForestError):
            search_forest(trees, scorers, k=3, selected=[])


class TestEncryptedTree:
    def test_shape_preserved_and_results_match(self):
        entries = random_entries(20, 5, seed=11)
        tree = build_tree(entries)
        key = keygen([5], seed=2)[0]
        rng = np.random.default_rng(3)
        enc = encrypt_tree(tree, key, rng)
        assert enc.encrypted
        assert enc.shape_signature() == tree.shape_signature()
        query = np.abs(np.random.default_rng(5).normal(size=5))
        trap = make_trapdoor(query, key, rng)
        plain, _ = gdfs(tree, plaintext_scorer(query), 6)
        cipher, _ = gdfs(enc, encrypted_scorer(trap), 6)
        assert [d for d, _ in cipher] == [d for d, _ in plain]
        for (_, a), (_, b) in zip(plain, cipher):
            assert a == pytest.approx(b, abs=1e-6)

    def test_dim_mismatch(self):
        tree = build_tree(random_entries(4, 3))
        key = keygen([5], seed=0)[0]
        with pytest.raises(ForestError, match="dimension"):
            encrypt_tree(tree, key, np.random.default_rng(0))


class TestInsertDelete:
    def test_insert_into_single_leaf(self):
        tree = build_tree([(0, np.array([1.0, 0.0]))], probe=np.ones(2))
        touched, rebuild = insert_leaf(tree, 1, np.array([0.0, 2.0]))
        assert touched == 2
        assert rebuild  # size doubled since the bulk load
        assert sorted(l.doc_id for l in tree.leaves) == [0, 1]
        np.testing.assert_array_equal(tree.root.vec, [1.0, 2.0])

    def test_insert_touched_bounded_by_path(self):
        entries = random_entries(33, 4, seed=2)
        probe = np.ones(4)
        tree = build_tree(order_by_likelihood(entries, probe), probe=probe)
        rng = np.random.default_rng(8)
        for new_id in range(100, 110):
            depth_before = tree.depth()
            touched, _ = insert_leaf(tree, new_id, rng.random(4))
            assert touched <= 2 * (depth_before + 2)

    def test_post_insert_search_matches_rebuilt(self):
        entries = random_entries(16, 3, seed=4)
        probe = np.abs(np.random.default_rng(0).normal(size=3))
        tree = build_tree(order_by_likelihood(entries, probe), probe=probe)
        rng = np.random.default_rng(1)
        for new_id in range(200, 208):
            insert_leaf(tree, new_id, rng.random(3))
        rebuilt = rebuild_tree(tree)
        for qseed in range(5):
            query = np.abs(np.random.default_rng(qseed).normal(size=3))
            a, _ = gdfs(tree, plaintext_scorer(query), 5)
            b, _ = gdfs(rebuilt, plaintext_scorer(query), 5)
            assert a == b

    def test_insert_duplicate_error(self):
        tree = build_tree(random_entries(3, 2))
        with pytest.raises(ForestError, match="already present"):
            insert_leaf(tree, 1, np.zeros(2))

    def test_insert_into_encrypted_rejected(self):
        tree = build_tree(random_entries(3, 2))
        enc = encrypt_tree(tree, keygen([2], seed=0)[0], np.random.default_rng(0))
        with pytest.raises(ForestError):
            insert_leaf(enc, 9, np.zeros(2))
        with pytest.raises(ForestError):
            delete_leaf(enc, 0)

    def test_delete_only_leaf_empties_tree(self):
        tree = build_tree([(3, np.ones(2))])
        assert delete_leaf(tree, 3) == 1
        assert tree.root is None and tree.leaves == []

    def test_delete_then_search_absent(self):
        entries = random_entries(10, 3, seed=6)
        tree = build_tree(entries)
        delete_leaf(tree, 4)
        got, _ = gdfs(tree, plaintext_scorer(np.ones(3)), 9)
        assert 4 not in {d for d, _ in got}
        remaining = [(d, v) for d, v in entries if d != 4]
        assert got == brute_force_topk(remaining, np.ones(3), 9)

    def test_delete_missing_error(self):
        tree = build_tree(random_entries(3, 2))
        with pytest.raises(ForestError, match="not found"):
            delete_leaf(tree, 99)

    def test_delete_then_insert_restores_results(self):
        entries = random_entries(12, 3, seed=7)
        probe = np.ones(3)
        tree = build_tree(order_by_likelihood(entries, probe), probe=probe)
        vec = dict(entries)[5]
        delete_leaf(tree, 5)
        insert_leaf(tree, 5, vec)
        query = np.abs(np.random.default_rng(2).normal(size=3))
        got, _ = gdfs(tree, plaintext_scorer(query), 12)
        assert got == brute_force_topk(entries, query, 12)

    def test_doubling_triggers_rebuild_flag(self):
        tree = build_tree(random_entries(4, 2, seed=0), probe=np.ones(2))
        rng = np.random.default_rng(0)
        flagged = False
        for new_id in range(100, 110):
            _, rebuild = insert_leaf(tree, new_id, rng.random(2))
            flagged = flagged or rebuild
        assert flagged  # size more than doubled since the bulk load


class TestForestFile:
    def test_plaintext_round_trip(self, tmp_path):
        probe = np.abs(np.random.default_rng(0).normal(size=4))
        trees = [
            build_tree(
                order_by_likelihood(random_entries(9 + p, 4, seed=p), probe),
                partition=p,
                probe=probe,
                probe_config=ProbeConfig(count=10, seed=p),
            )
            for p in range(2)
        ]
        path = tmp_path / "forest.bin"
        save_forest(trees, path)
        loaded = load_forest(path)
        assert len(loaded) == 2
        for a, b in zip(trees, loaded):
            assert a.shape_signature() == b.shape_signature()
            assert a.partition == b.partition
            assert a.size_at_build == b.size_at_build
            np.testing.assert_array_equal(a.probe, b.probe)
            assert a.probe_config == b.probe_config
            query = np.abs(np.random.default_rng(9).normal(size=4))
            assert gdfs(a, plaintext_scorer(query), 5)[0] == gdfs(b, plaintext_scorer(query), 5)[0]

    def test_encrypted_round_trip(self, tmp_path):
        tree = build_tree(random_entries(7, 3, seed=3))
        key = keygen([3], seed=1)[0]
        rng = np.random.default_rng(4)
        enc = encrypt_tree(tree, key, rng)
        path = tmp_path / "forest.bin"
        save_forest([enc], path)
        loaded = load_forest(path)[0]
        assert loaded.encrypted
        assert loaded.shape_signature() == enc.shape_signature()
        trap = make_trapdoor(np.abs(rng.normal(size=3)), key, rng)
        assert gdfs(loaded, encrypted_scorer(trap), 4)[0] == gdfs(enc, encrypted_scorer(trap), 4)[0]

    def test_empty_tree_round_trip(self, tmp_path):
        path = tmp_path / "forest.bin"
        save_forest([Tree(partition=0, root=None, leaves=[])], path)
        loaded = load_forest(path)[0]
        assert loaded.root is None and loaded.leaves == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "forest.bin"
        path.write_bytes(b"XXXX1234")
        with pytest.raises(ForestError, match="magic"):
            load_forest(path)
