"""Corpus ingestion: documents, the global keyword dictionary and binary index vectors.

Documents arrive from multiple owners.  Each document keeps its term counts
(the weighting stage needs frequencies, not just incidence).  The dictionary
assigns every distinct keyword a stable dimension index (lexicographic order),
and each document gets a 0/1 incidence vector over those dimensions.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorpusError

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace.  No stemming."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Document:
    """A single document: unique id, owner id and its term multiset."""

    doc_id: int
    owner_id: int
    counts: Mapping[str, int]

    def __post_init__(self):
        if not self.counts:
            raise CorpusError(f"document {self.doc_id} has no terms")

    @classmethod
    def from_text(cls, doc_id: int, owner_id: int, text: str) -> "Document":
        return cls(doc_id, owner_id, dict(Counter(tokenize(text))))

    @classmethod
    def from_terms(cls, doc_id: int, owner_id: int, terms: Iterable[str]) -> "Document":
        return cls(doc_id, owner_id, dict(Counter(terms)))

    @property
    def terms(self) -> set[str]:
        return set(self.counts)


@dataclass(frozen=True)
class KeywordDictionary:
    """Ordered list of distinct keywords; position maps word -> dimension."""

    words: tuple[str, ...]
    position: dict[str, int] = field(compare=False)

    @classmethod
    def from_words(cls, words: Sequence[str]) -> "KeywordDictionary":
        ordered = tuple(words)
        if len(set(ordered)) != len(ordered):
            raise CorpusError("dictionary contains duplicate words")
        return cls(ordered, {w: i for i, w in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.position


@dataclass(frozen=True)
class BinaryIndex:
    """Per-document 0/1 keyword-incidence vector over the dictionary."""

    doc_id: int
    owner_id: int
    bits: np.ndarray  # shape (n,), dtype uint8


def _check_unique_ids(docs: Sequence[Document]) -> None:
    seen: set[int] = set()
    for d in docs:
        if d.doc_id in seen:
            raise CorpusError(f"duplicate doc_id {d.doc_id}")
        seen.add(d.doc_id)


def build_dictionary(docs: Sequence[Document]) -> KeywordDictionary:
    """Sorted union of all document terms."""
    if not docs:
        raise CorpusError("cannot build a dictionary from an empty corpus")
    _check_unique_ids(docs)
    words: set[str] = set()
    for d in docs:
        words.update(d.counts)
    return KeywordDictionary.from_words(sorted(words))


def build_binary_indexes(
    docs: Sequence[Document], dictionary: KeywordDictionary
) -> list[BinaryIndex]:
    """One incidence vector per document; bits[j]=1 iff words[j] occurs in the doc."""
    out = []
    n = len(dictionary)
    for d in docs:
        bits = np.zeros(n, dtype=np.uint8)
        for term in d.counts:
            j = dictionary.position.get(term)
            if j is None:
                raise CorpusError(
                    f"term {term!r} of document {d.doc_id} is not in the dictionary"
                )
            bits[j] = 1
        out.append(BinaryIndex(d.doc_id, d.owner_id, bits))
    return out


# ---------------------------------------------------------------------------
# I/O: one JSON record per line with doc_id, owner_id and text or terms.

def load_corpus(path: str | Path) -> list[Document]:
    docs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if "terms" in rec:
                doc = Document.from_terms(rec["doc_id"], rec["owner_id"], rec["terms"])
            elif "text" in rec:
                doc = Document.from_text(rec["doc_id"], rec["owner_id"], rec["text"])
            else:
                raise CorpusError(f"{path}:{lineno}: record needs 'terms' or 'text'")
            docs.append(doc)
    if not docs:
        raise CorpusError(f"{path}: empty corpus")
    _check_unique_ids(docs)
    return docs


def save_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in docs:
            terms = []
            for w, c in sorted(d.counts.items()):
                terms.extend([w] * c)
            fh.write(json.dumps({"doc_id": d.doc_id, "owner_id": d.owner_id, "terms": terms}))
            fh.write("\n")


def save_dictionary(dictionary: KeywordDictionary, path: str | Path) -> None:
    """One word per line; line number (0-based) is the dimension index."""
    with open(path, "w") as fh:
        for w in dictionary.words:
            fh.write(w + "\n")


def load_dictionary(path: str | Path) -> KeywordDictionary:
    with open(path) as fh:
        words = [line.rstrip("\n") for line in fh if line.strip()]
    return KeywordDictionary.from_words(words)


# ---------------------------------------------------------------------------
# Synthetic corpus generator (stand-in for a large real-world document set).

def synthetic_corpus(
    n_docs: int,
    n_keywords: int,
    n_owners: int = 10,
    seed: int = 0,
    mean_len: int = 40,
    zipf_a: float = 1.1,
) -> list[Document]:
    """Generate a corpus whose dictionary has exactly ``n_keywords`` words.

    Keyword popularity is Zipf-distributed (rank = dictionary order), document
    lengths are Poisson around ``mean_len``, owners are assigned round-robin so
    every owner holds at least one document.
    """
    if n_docs < 1 or n_keywords < 1 or n_owners < 1:
        raise CorpusError("n_docs, n_keywords and n_owners must be positive")
    rng = np.random.default_rng(seed)
    width = len(str(n_keywords - 1))
    words = [f"kw{i:0{width}d}" for i in range(n_keywords)]
    pmf = 1.0 / np.arange(1, n_keywords + 1) ** zipf_a
    pmf /= pmf.sum()
    docs = []
    for doc_id in range(n_docs):
        length = max(3, int(rng.poisson(mean_len)))
        picks = rng.choice(n_keywords, size=length, p=pmf)
        counts = Counter(words[j] for j in picks)
        docs.append(Document(doc_id, doc_id % n_owners, dict(counts)))
    # Fold any never-sampled keyword into a random document so the built
    # dictionary has exactly n_keywords entries.
    used = set()
    for d in docs:
        used.update(d.counts)
    missing = [w for w in words if w not in used]
    for w in missing:
        i = int(rng.integers(n_docs))
        d = docs[i]
        counts = dict(d.counts)
        counts[w] = 1
        docs[i] = Document(d.doc_id, d.owner_id, counts)
    return docs
