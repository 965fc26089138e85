"""Score-ordered balanced index trees, their forest, and greedy top-k search.

Leaves are ordered by accumulated score against random non-negative probe
queries (popular-keyword-biased), so likely hits sit on early search paths.
Trees are built bottom-up by pairing adjacent nodes level by level; an odd
last node is promoted unpaired.  Internal node vectors are the elementwise
maximum of their children, which makes them upper bounds for any non-negative
query and lets the depth-first search prune subtrees that cannot reach the
current candidate list.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from heapq import heappush, heapreplace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aspe import PartitionKey, Trapdoor, encrypt_matrix
from .errors import ForestError

FOREST_MAGIC = b"ESF1"

Scorer = Callable[["Node"], float]


def round_score(x: float) -> float:
    """Quantize scores to 1e-9 so encryption round-off cannot flip the
    doc_id tie rule between plaintext and encrypted search."""
    return float(np.round(x, 9))


class Node:
    __slots__ = ("vec", "enc1", "enc2", "doc_id", "left", "right", "parent", "pscore", "idx")

    def __init__(self, vec=None, doc_id=None, enc1=None, enc2=None):
        self.vec = vec
        self.enc1 = enc1
        self.enc2 = enc2
        self.doc_id = doc_id
        self.left = None
        self.right = None
        self.parent = None
        self.pscore = 0.0  # accumulated probe score (leaves)
        self.idx = -1      # preorder index, assigned by reindex()

    @property
    def is_leaf(self) -> bool:
        return self.doc_id is not None


@dataclass
class ProbeConfig:
    count: int = 1000          # number of random probe queries
    keywords_per_probe: int = 10
    zipf_a: float = 1.0
    seed: int = 0


@dataclass
class Tree:
    partition: int
    root: Node | None
    leaves: list[Node]
    probe: np.ndarray | None = None        # aggregate of all probe queries
    probe_config: ProbeConfig | None = None
    encrypted: bool = False
    size_at_build: int = 0
    _nodes: list[Node] = field(default_factory=list, repr=False)

    def node_count(self) -> int:
        return sum(1 for _ in self.preorder())

    def preorder(self):
        stack = [self.root] if self.root is not None else []
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def reindex(self) -> list[Node]:
        """Assign preorder indexes; needed before matrix-based scoring."""
        self._nodes = list(self.preorder())
        for i, node in enumerate(self._nodes):
            node.idx = i
        return self._nodes

    def node_matrix(self) -> np.ndarray:
        nodes = self.reindex()
        return np.stack([n.vec for n in nodes])

    def depth(self) -> int:
        """Longest root-to-leaf edge count."""
        if self.root is None:
            return 0
        best = 0
        stack = [(self.root, 0)]
        while stack:
            node, d = stack.pop()
            if node.is_leaf:
                best = max(best, d)
            else:
                stack.append((node.left, d + 1))
                stack.append((node.right, d + 1))
        return best

    def shape_signature(self) -> tuple:
        """Structure + leaf doc ids, independent of node payloads."""

        def sig(node):
            if node.is_leaf:
                return ("L", node.doc_id)
            return ("I", sig(node.left), sig(node.right))

        return sig(self.root) if self.root is not None else ("E",)


# ---------------------------------------------------------------------------
# Probe queries and likelihood ordering.

def probe_aggregate(
    real_dims: int,
    total_dims: int,
    popularity: np.ndarray,
    config: ProbeConfig,
) -> np.ndarray:
    """Sum of R random non-negative probe queries over the real dimensions.

    Keyword selection is Zipf-weighted by popularity rank, keyword weights are
    uniform (0, 1]; pseudo dimensions stay zero.  Accumulated scores against
    the probe set reduce to a single dot product with this aggregate.
    """
    if config.count < 1:
        raise ForestError("probe count must be >= 1")
    rng = np.random.default_rng(config.seed)
    agg = np.zeros(total_dims)
    if real_dims == 0:
        return agg
    ranks = np.empty(real_dims, dtype=np.int64)
    ranks[np.argsort(-popularity, kind="stable")] = np.arange(1, real_dims + 1)
    pmf = 1.0 / ranks.astype(np.float64) ** config.zipf_a
    pmf /= pmf.sum()
    n_pick = min(config.keywords_per_probe, real_dims)
    dims = rng.choice(real_dims, size=(config.count, n_pick), p=pmf)
    weights = 1.0 - rng.random(size=(config.count, n_pick))  # (0, 1]
    np.add.at(agg, dims.ravel(), weights.ravel())
    return agg


def order_by_likelihood(
    entries: Sequence[tuple[int, np.ndarray]], probe: np.ndarray
) -> list[tuple[int, np.ndarray]]:
    """Sort (doc_id, vector) entries by descending accumulated probe score,
    ties by ascending doc_id."""
    scored = [(float(vec @ probe), doc_id, vec) for doc_id, vec in entries]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(doc_id, vec) for _, doc_id, vec in scored]


# ---------------------------------------------------------------------------
# Construction.

def build_tree(
    ordered: Sequence[tuple[int, np.ndarray]],
    partition: int = 0,
    probe: np.ndarray | None = None,
    probe_config: ProbeConfig | None = None,
) -> Tree:
    """Bottom-up bulk load: leaves in the given order, adjacent pairs merged
    level by level, internal vectors the elementwise max of their children."""
    if not ordered:
        raise ForestError("cannot build a tree without leaves")
    leaves = [Node(vec=np.asarray(vec, dtype=np.float64), doc_id=doc_id) for doc_id, vec in ordered]
    if probe is not None:
        for leaf in leaves:
            leaf.pscore = float(leaf.vec @ probe)
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            left, right = level[i], level[i + 1]
            parent = Node(vec=np.maximum(left.vec, right.vec))
            parent.left, parent.right = left, right
            left.parent = right.parent = parent
            nxt.append(parent)
        if len(level) % 2 == 1:
            nxt.append(level[-1])  # odd node promoted unpaired
        level = nxt
    tree = Tree(
        partition=partition,
        root=level[0],
        leaves=leaves,
        probe=probe,
        probe_config=probe_config,
        size_at_build=len(leaves),
    )
    tree.reindex()
    return tree


def encrypt_tree(tree: Tree, key: PartitionKey, rng: np.random.Generator) -> Tree:
    """Node-for-node encrypted twin; shape (and leaf doc ids) preserved."""
    if tree.root is None:
        return Tree(tree.partition, None, [], encrypted=True)
    nodes = tree.reindex()
    mat = np.stack([n.vec for n in nodes])
    if mat.shape[1] != key.dim:
        raise ForestError(f"node dimension {mat.shape[1]} does not match key dim {key.dim}")
    c1, c2 = encrypt_matrix(mat, key, rng)

    leaves: list[Node] = []

    def clone(node: Node) -> Node:
        twin = Node(doc_id=node.doc_id, enc1=c1[node.idx], enc2=c2[node.idx])
        if not node.is_leaf:
            twin.left = clone(node.left)
            twin.right = clone(node.right)
            twin.left.parent = twin.right.parent = twin
        return twin

    root = clone(tree.root)
    stack = [root]
    ordered_leaves = {}
    for twin, orig in zip(_paired_preorder(root), _paired_preorder(tree.root)):
        if twin.is_leaf:
            ordered_leaves[orig.doc_id] = twin
    leaves = [ordered_leaves[leaf.doc_id] for leaf in tree.leaves]
    enc = Tree(
        partition=tree.partition,
        root=root,
        leaves=leaves,
        encrypted=True,
        size_at_build=tree.size_at_build,
    )
    enc.reindex()
    return enc


def _paired_preorder(root: Node):
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        if not node.is_leaf:
            stack.append(node.right)
            stack.append(node.left)


def encrypt_forest(
    trees: Sequence[Tree], keys: Sequence[PartitionKey], rng: np.random.Generator
) -> list[Tree]:
    if len(trees) != len(keys):
        raise ForestError("one key per tree required")
    return [encrypt_tree(tree, key, rng) for tree, key in zip(trees, keys)]


# ---------------------------------------------------------------------------
# Greedy depth-first top-k search.

def plaintext_scorer(query: np.ndarray) -> Scorer:
    return lambda node: round_score(node.vec @ query)


def encrypted_scorer(trapdoor: Trapdoor) -> Scorer:
    return lambda node: round_score(node.enc1 @ trapdoor.t1 + node.enc2 @ trapdoor.t2)


def array_scorer(scores: np.ndarray) -> Scorer:
    """Score lookup from a precomputed per-node array (see Tree.reindex)."""
    return lambda node: round_score(scores[node.idx])


def gdfs(tree: Tree, score_of: Scorer, quota: int) -> tuple[list[tuple[int, float]], int]:
    """Greedy depth-first search of one tree.

    Returns the tree's top-``quota`` leaves as (doc_id, score), ranked by
    descending score then ascending doc_id, plus the number of node score
    evaluations.  A subtree is pruned only when its bound is strictly below
    the current worst candidate score, so tied candidates are never lost.
    """
    if quota < 1:
        raise ForestError("quota must be >= 1")
    if tree.root is None:
        return [], 0
    heap: list[tuple[float, int]] = []  # (score, -doc_id); heap[0] = worst
    visited = 0

    def consider(leaf: Node, s: float) -> None:
        entry = (s, -leaf.doc_id)
        if len(heap) < quota:
            heappush(heap, entry)
        elif entry > heap[0]:
            heapreplace(heap, entry)

    def descend(node: Node, s: float) -> None:
        nonlocal visited
        if node.is_leaf:
            consider(node, s)
            return
        sl = score_of(node.left)
        sr = score_of(node.right)
        visited += 2
        children = ((node.left, sl), (node.right, sr))
        if sr > sl:
            children = ((node.right, sr), (node.left, sl))
        for child, sc in children:
            if len(heap) == quota and sc < heap[0][0]:
                continue  # bound cannot beat the current worst score
            descend(child, sc)

    visited = 1
    descend(tree.root, score_of(tree.root))
    ranked = sorted(heap, key=lambda e: (-e[0], -e[1]))
    return [(-neg_id, s) for s, neg_id in ranked], visited


def search_forest(
    trees: Sequence[Tree],
    scorers: Sequence[Scorer],
    k: int,
    selected: Sequence[int] | None = None,
    quota: int | None = None,
) -> tuple[list[tuple[int, float]], dict[int, int]]:
    """Search ``selected`` trees (default: all), merge per-tree candidate
    lists and return the global top-k plus per-tree visited-node counts.

    The per-tree candidate quota defaults to ceil(k/t) for t selected trees.
    """
    if k < 1:
        raise ForestError("k must be >= 1")
    if selected is None:
        selected = list(range(len(trees)))
    if not selected:
        raise ForestError("no index partitions selected")
    t = len(selected)
    q = quota if quota is not None else -(-k // t)
    merged: list[tuple[int, float]] = []
    visits: dict[int, int] = {}
    for i in selected:
        candidates, visited = gdfs(trees[i], scorers[i], q)
        merged.extend(candidates)
        visits[i] = visited
    merged.sort(key=lambda e: (-e[1], e[0]))
    return merged[:k], visits


# ---------------------------------------------------------------------------
# Dynamic maintenance.

def insert_leaf(tree: Tree, doc_id: int, vec: np.ndarray) -> tuple[int, bool]:
    """Insert a new leaf at its probe-score rank position.

    Only the insertion path is touched.  Returns (touched-node count,
    rebuild-recommended) where the flag is set once the balance bound
    depth <= ceil(log2 M) + 1 is violated.
    """
    if tree.encrypted:
        raise ForestError("insert into the plaintext tree, then re-encrypt")
    vec = np.asarray(vec, dtype=np.float64)
    if any(leaf.doc_id == doc_id for leaf in tree.leaves):
        raise ForestError(f"doc {doc_id} already present in tree")
    new = Node(vec=vec, doc_id=doc_id)
    new.pscore = float(vec @ tree.probe) if tree.probe is not None else 0.0
    if tree.root is None:
        tree.root = new
        tree.leaves = [new]
        tree.size_at_build = max(tree.size_at_build, 1)
        return 1, False

    key = (-new.pscore, doc_id)
    pos = 0
    for pos, leaf in enumerate(tree.leaves):
        if key < (-leaf.pscore, leaf.doc_id):
            break
    else:
        pos = len(tree.leaves)

    if pos < len(tree.leaves):
        target, new_first = tree.leaves[pos], True
    else:
        target, new_first = tree.leaves[-1], False
    parent = Node()
    parent.left, parent.right = (new, target) if new_first else (target, new)
    parent.vec = np.maximum(new.vec, target.vec)
    grand = target.parent
    parent.parent = grand
    new.parent = target.parent = parent
    if grand is None:
        tree.root = parent
    elif grand.left is target:
        grand.left = parent
    else:
        grand.right = parent

    touched = 2  # new leaf + new internal node
    node = grand
    while node is not None:
        node.vec = np.maximum(node.left.vec, node.right.vec)
        touched += 1
        node = node.parent
    tree.leaves.insert(pos, new)

    depth = 0
    node = new
    while node.parent is not None:
        depth += 1
        node = node.parent
    m = len(tree.leaves)
    limit = int(np.ceil(np.log2(m))) + 1 if m > 1 else 1
    needs_rebuild = depth > limit or m >= 2 * max(1, tree.size_at_build)
    return touched, needs_rebuild


def delete_leaf(tree: Tree, doc_id: int) -> int:
    """Remove a leaf; its sibling is promoted and ancestor bounds recomputed.
    Returns the touched-node count."""
    if tree.encrypted:
        raise ForestError("delete from the plaintext tree, then re-encrypt")
    leaf = next((l for l in tree.leaves if l.doc_id == doc_id), None)
    if leaf is None:
        raise ForestError(f"doc {doc_id} not found in tree")
    tree.leaves.remove(leaf)
    parent = leaf.parent
    if parent is None:
        tree.root = None
        return 1
    sibling = parent.right if parent.left is leaf else parent.left
    grand = parent.parent
    sibling.parent = grand
    if grand is None:
        tree.root = sibling
    elif grand.left is parent:
        grand.left = sibling
    else:
        grand.right = sibling
    touched = 2
    node = grand
    while node is not None:
        node.vec = np.maximum(node.left.vec, node.right.vec)
        touched += 1
        node = node.parent
    return touched


def rebuild_tree(tree: Tree) -> Tree:
    """Full local rebuild: reorder the current leaves by probe score and bulk
    load again.  Used when the balance bound is violated or the size has
    doubled/halved since the last build."""
    entries = [(leaf.doc_id, leaf.vec) for leaf in tree.leaves]
    if tree.probe is not None:
        entries = order_by_likelihood(entries, tree.probe)
    if not entries:
        return Tree(tree.partition, None, [], probe=tree.probe, probe_config=tree.probe_config)
    return build_tree(entries, tree.partition, tree.probe, tree.probe_config)


# ---------------------------------------------------------------------------
# Serialization: versioned binary, preorder shape + node vectors.

def save_forest(trees: Sequence[Tree], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(FOREST_MAGIC)
        fh.write(struct.pack("<I", len(trees)))
        for tree in trees:
            nodes = list(tree.preorder())
            if tree.encrypted:
                dim = nodes[0].enc1.shape[0] if nodes else 0
            else:
                dim = nodes[0].vec.shape[0] if nodes else 0
            probe = tree.probe if tree.probe is not None else np.zeros(0)
            cfg = tree.probe_config or ProbeConfig()
            fh.write(
                struct.pack(
                    "<IBIIQ",
                    tree.partition,
                    int(tree.encrypted),
                    dim,
                    probe.shape[0],
                    len(nodes),
                )
            )
            fh.write(struct.pack("<IIdI", cfg.count, cfg.keywords_per_probe, cfg.zipf_a, cfg.seed))
            fh.write(struct.pack("<Q", tree.size_at_build))
            fh.write(np.ascontiguousarray(probe, dtype="<f8").tobytes())
            for node in nodes:
                fh.write(struct.pack("<Bq", int(node.is_leaf), node.doc_id if node.is_leaf else -1))
                if tree.encrypted:
                    fh.write(np.ascontiguousarray(node.enc1, dtype="<f8").tobytes())
                    fh.write(np.ascontiguousarray(node.enc2, dtype="<f8").tobytes())
                else:
                    fh.write(np.ascontiguousarray(node.vec, dtype="<f8").tobytes())


def load_forest(path: str | Path) -> list[Tree]:
    raw = Path(path).read_bytes()
    if raw[:4] != FOREST_MAGIC:
        raise ForestError(f"{path}: not a forest file (bad magic)")
    off = 4
    (ntrees,) = struct.unpack_from("<I", raw, off)
    off += 4
    trees = []
    for _ in range(ntrees):
        partition, encrypted, dim, probe_len, n_nodes = struct.unpack_from("<IBIIQ", raw, off)
        off += struct.calcsize("<IBIIQ")
        count, kpp, zipf_a, seed = struct.unpack_from("<IIdI", raw, off)
        off += struct.calcsize("<IIdI")
        (size_at_build,) = struct.unpack_from("<Q", raw, off)
        off += 8
        probe = np.frombuffer(raw, dtype="<f8", count=probe_len, offset=off).copy()
        off += probe_len * 8

        records = []
        for _n in range(n_nodes):
            is_leaf, doc_id = struct.unpack_from("<Bq", raw, off)
            off += struct.calcsize("<Bq")
            if encrypted:
                e1 = np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy()
                off += dim * 8
                e2 = np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy()
                off += dim * 8
                records.append((is_leaf, doc_id, e1, e2))
            else:
                v = np.frombuffer(raw, dtype="<f8", count=dim, offset=off).copy()
                off += dim * 8
                records.append((is_leaf, doc_id, v, None))

        pos = 0

        def read_node():
            nonlocal pos
            is_leaf, doc_id, a, b = records[pos]
            pos += 1
            if encrypted:
                node = Node(doc_id=doc_id if is_leaf else None, enc1=a, enc2=b)
            else:
                node = Node(vec=a, doc_id=doc_id if is_leaf else None)
            if not is_leaf:
                node.left = read_node()
                node.right = read_node()
                node.left.parent = node.right.parent = node
            return node

        root = read_node() if n_nodes else None
        leaves = []
        if root is not None:
            stack = [root]
            while stack:
                node = stack.pop()
                if node.is_leaf:
                    leaves.append(node)
                else:
                    stack.append(node.right)
                    stack.append(node.left)
        tree = Tree(
            partition=partition,
            root=root,
            leaves=leaves,
            probe=probe if probe_len else None,
            probe_config=ProbeConfig(count, kpp, zipf_a, seed),
            encrypted=bool(encrypted),
            size_at_build=size_at_build,
        )
        if probe_len and not encrypted:
            for leaf in tree.leaves:
                leaf.pscore = float(leaf.vec @ tree.probe)
        tree.reindex()
        trees.append(tree)
    return trees
