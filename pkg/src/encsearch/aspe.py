"""Secure inner-product encryption of index and query vectors.

Each partition key holds a 0/1 splitting indicator S and an invertible matrix
pair (M1, M2).  Index vectors are split (copy where S=0, random split where
S=1) and transformed with the transposes; query vectors use the complementary
split and the inverses.  The sum of the two transformed dot products equals
the plaintext inner product, so the server can rank without seeing plaintexts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AspeError

KEY_MAGIC = b"ESK1"


def random_invertible(
    dim: int,
    rng: np.random.Generator,
    factors: int = 3,
    cond_cap: float = 1e6,
    max_tries: int = 10,
) -> tuple[np.ndarray, np.ndarray]:
    """Random invertible matrix and its inverse.

    Built as a product of ``factors`` unit-triangular matrices (alternating
    lower/upper) whose off-diagonal entries lie in [-1, 1], scaled by
    1/sqrt(dim) to keep the product well conditioned.  Invertibility is
    structural; the condition number (1-norm estimate) is still checked
    against ``cond_cap`` with resampling.
    """
    if dim < 1:
        raise AspeError("matrix dimension must be >= 1")
    scale = 1.0 / np.sqrt(dim)
    for _ in range(max_tries):
        m = np.eye(dim)
        inv = np.eye(dim)
        for k in range(factors):
            t = np.eye(dim)
            off = rng.uniform(-1.0, 1.0, size=(dim, dim)) * scale
            if k % 2 == 0:
                t += np.tril(off, -1)
            else:
                t += np.triu(off, 1)
            m = m @ t
            inv = np.linalg.inv(t) @ inv
        cond = np.linalg.norm(m, 1) * np.linalg.norm(inv, 1)
        if cond <= cond_cap:
            return m, inv
    raise AspeError(f"could not generate a matrix with condition <= {cond_cap:g}")


@dataclass
class PartitionKey:
    """Key material of one partition: indicator S, matrix pair and inverses."""

    indicator: np.ndarray  # (V,), uint8 in {0, 1}
    m1: np.ndarray
    m2: np.ndarray
    m1_inv: np.ndarray
    m2_inv: np.ndarray

    @property
    def dim(self) -> int:
        return self.indicator.shape[0]


@dataclass
class SecretKey:
    partitions: list[PartitionKey]

    def __getitem__(self, i: int) -> PartitionKey:
        return self.partitions[i]

    def __len__(self) -> int:
        return len(self.partitions)

    @property
    def dims(self) -> list[int]:
        return [pk.dim for pk in self.partitions]


@dataclass(frozen=True)
class EncryptedVector:
    c1: np.ndarray
    c2: np.ndarray


@dataclass(frozen=True)
class Trapdoor:
    t1: np.ndarray
    t2: np.ndarray


def _partition_key(dim: int, rng: np.random.Generator, cond_cap: float) -> PartitionKey:
    indicator = rng.integers(0, 2, size=dim).astype(np.uint8)
    m1, m1_inv = random_invertible(dim, rng, cond_cap=cond_cap)
    m2, m2_inv = random_invertible(dim, rng, cond_cap=cond_cap)
    return PartitionKey(indicator, m1, m2, m1_inv, m2_inv)


def keygen(dims: Sequence[int], seed: int = 0, cond_cap: float = 1e6) -> SecretKey:
    """One independent key per partition, dimension V_i each."""
    if any(d < 1 for d in dims):
        raise AspeError("all key dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    return SecretKey([_partition_key(d, rng, cond_cap) for d in dims])


def extend_key(
    key: PartitionKey, added: int, seed: int = 0, cond_cap: float = 1e6
) -> PartitionKey:
    """Fresh key of dimension V+Z after Z keywords were added.  Existing
    ciphertexts are invalid under the new key and must be re-encrypted."""
    if added < 1:
        raise AspeError("number of added keywords must be >= 1")
    rng = np.random.default_rng(seed)
    return _partition_key(key.dim + added, rng, cond_cap)


def _split_index(values: np.ndarray, key: PartitionKey, rng: np.random.Generator):
    """Index-side split: copy where S=0, random split where S=1."""
    ones = key.indicator.astype(bool)
    v1 = values.copy()
    r = rng.uniform(0.0, 1.0, size=values.shape)
    v1[..., ones] = r[..., ones]
    v2 = values.copy()
    v2[..., ones] = values[..., ones] - r[..., ones]
    return v1, v2


def encrypt_vector(
    values: np.ndarray, key: PartitionKey, rng: np.random.Generator
) -> EncryptedVector:
    if values.shape != (key.dim,):
        raise AspeError(f"vector shape {values.shape} does not match key dim {key.dim}")
    v1, v2 = _split_index(values.astype(np.float64), key, rng)
    return EncryptedVector(key.m1.T @ v1, key.m2.T @ v2)


def encrypt_matrix(
    values: np.ndarray, key: PartitionKey, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Batch row-wise encryption: returns (C1, C2), one row per input row."""
    if values.ndim != 2 or values.shape[1] != key.dim:
        raise AspeError(f"matrix shape {values.shape} does not match key dim {key.dim}")
    v1, v2 = _split_index(values.astype(np.float64), key, rng)
    return v1 @ key.m1, v2 @ key.m2


def make_trapdoor(
    query: np.ndarray, key: PartitionKey, rng: np.random.Generator
) -> Trapdoor:
    """Complementary split (random where S=0, copy where S=1), then the
    inverse transforms.  Query entries must be non-negative; negative weights
    would break the elementwise-max bound used for tree pruning."""
    if query.shape != (key.dim,):
        raise AspeError(f"query shape {query.shape} does not match key dim {key.dim}")
    if np.any(query < 0):
        raise AspeError("query vector entries must be non-negative")
    zeros = ~key.indicator.astype(bool)
    q = query.astype(np.float64)
    q1 = q.copy()
    r = rng.uniform(0.0, 1.0, size=q.shape)
    q1[zeros] = r[zeros]
    q2 = q.copy()
    q2[zeros] = q[zeros] - r[zeros]
    return Trapdoor(key.m1_inv @ q1, key.m2_inv @ q2)


def score(encrypted: EncryptedVector, trapdoor: Trapdoor) -> float:
    """Secure matching score; equals the plaintext inner product."""
    if encrypted.c1.shape != trapdoor.t1.shape:
        raise AspeError("ciphertext/trapdoor dimension mismatch")
    return float(encrypted.c1 @ trapdoor.t1 + encrypted.c2 @ trapdoor.t2)


# ---------------------------------------------------------------------------
# Key file: versioned binary record, 64-bit little-endian floats.

def save_key(key: SecretKey, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(KEY_MAGIC)
        fh.write(struct.pack("<I", len(key.partitions)))
        for pk in key.partitions:
            fh.write(struct.pack("<I", pk.dim))
            fh.write(pk.indicator.astype(np.uint8).tobytes())
            for mat in (pk.m1, pk.m2, pk.m1_inv, pk.m2_inv):
                fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_key(path: str | Path) -> SecretKey:
    raw = Path(path).read_bytes()
    if raw[:4] != KEY_MAGIC:
        raise AspeError(f"{path}: not a key file (bad magic)")
    off = 4
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    partitions = []
    for _ in range(count):
        (dim,) = struct.unpack_from("<I", raw, off)
        off += 4
        indicator = np.frombuffer(raw, dtype=np.uint8, count=dim, offset=off).copy()
        off += dim
        mats = []
        for _m in range(4):
            mat = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=off)
            mats.append(mat.reshape(dim, dim).copy())
            off += dim * dim * 8
        partitions.append(PartitionKey(indicator, *mats))
    return SecretKey(partitions)
