"""Morgan-style count fingerprints and count Tanimoto similarity."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .molecule import ATOMIC_NUMBERS, Molecule

# Keyed 64-bit BLAKE2b; the key pins the hash so buckets are stable everywhere.
_HASH_KEY = b"synthevo-morgan-v1"


def _hash(values: Sequence[int]) -> int:
    data = struct.pack(f"<{len(values)}q", *values)
    digest = hashlib.blake2b(data, digest_size=8, key=_HASH_KEY).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class CountFingerprint:
    """Sparse folded count vector: sorted bucket indices with positive counts."""

    dim: int
    indices: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if len(self.indices) != len(self.counts):
            raise ValueError("indices and counts differ in length")

    @classmethod
    def from_dict(cls, dim: int, data: dict[int, int]) -> "CountFingerprint":
        items = sorted((int(k), int(v)) for k, v in data.items() if v > 0)
        for k, _ in items:
            if not 0 <= k < dim:
                raise ValueError(f"bucket {k} outside [0, {dim})")
        idx = np.array([k for k, _ in items], dtype=np.int64)
        cnt = np.array([v for _, v in items], dtype=np.int64)
        return cls(dim, idx, cnt)

    def to_dict(self) -> dict[int, int]:
        return dict(zip(self.indices.tolist(), self.counts.tolist()))

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.dim, dtype=dtype)
        out[self.indices] = self.counts
        return out

    def __len__(self) -> int:
        return len(self.indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountFingerprint):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.counts, other.counts))

    def __hash__(self) -> int:
        return hash((self.dim, self.indices.tobytes(), self.counts.tobytes()))


def fold(fp: CountFingerprint, dim: int) -> CountFingerprint:
    """Refold to a divisor of the original size; equals fingerprinting at ``dim``."""
    if fp.dim % dim:
        raise ValueError(f"{dim} does not divide {fp.dim}")
    counts: dict[int, int] = {}
    for i, c in zip(fp.indices.tolist(), fp.counts.tolist()):
        counts[i % dim] = counts.get(i % dim, 0) + c
    return CountFingerprint.from_dict(dim, counts)


def atom_identifiers(mol: Molecule, radius: int = 2) -> list[list[int]]:
    """Per-radius lists of atom environment identifiers (unfolded 63-bit ints)."""
    ring = mol.ring_atoms
    adj = mol.adjacency
    ids = [
        _hash((
            ATOMIC_NUMBERS[mol.elements[a]],
            len(adj[a]),
            mol.hcounts[a],
            mol.charges[a],
            int(a in ring),
            int(mol.aromatic[a]),
        ))
        for a in range(mol.n_atoms)
    ]
    layers = [ids]
    for r in range(1, radius + 1):
        prev = layers[-1]
        nxt = []
        for a in range(mol.n_atoms):
            env = sorted((o, prev[b]) for b, o in adj[a])
            flat = [r, prev[a]]
            for o, h in env:
                flat += [o, h]
            nxt.append(_hash(flat))
        layers.append(nxt)
    return layers


def morgan_count_fp(mol: Molecule, radius: int = 2, dim: int = 2048) -> CountFingerprint:
    """Fold every atom environment up to ``radius`` into ``dim`` count buckets."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    counts: dict[int, int] = {}
    for layer in atom_identifiers(mol, radius):
        for h in layer:
            b = h % dim
            counts[b] = counts.get(b, 0) + 1
    return CountFingerprint.from_dict(dim, counts)


def tanimoto(x: CountFingerprint, y: CountFingerprint) -> float:
    """Sum of elementwise minima over sum of elementwise maxima; 0 if both are empty."""
    if x.dim != y.dim:
        raise ValueError(f"dimension mismatch: {x.dim} vs {y.dim}")
    common, ix, iy = np.intersect1d(x.indices, y.indices, assume_unique=True, return_indices=True)
    inter = int(np.minimum(x.counts[ix], y.counts[iy]).sum())
    union = int(x.counts.sum() + y.counts.sum()) - inter
    if union == 0:
        return 0.0
    return inter / union


def fingerprint_matrix(fps: Sequence[CountFingerprint], dtype=np.float32) -> np.ndarray:
    """Stack fingerprints into a dense ``(n, dim)`` array."""
    if not fps:
        return np.zeros((0, 0), dtype=dtype)
    dim = fps[0].dim
    out = np.zeros((len(fps), dim), dtype=dtype)
    for k, fp in enumerate(fps):
        if fp.dim != dim:
            raise ValueError("mixed fingerprint dimensions")
        out[k, fp.indices] = fp.counts
    return out


def thermometer(counts: np.ndarray, levels: int | None = None) -> sparse.csr_matrix:
    """Binary expansion with one column per (bucket, level); dot products give sum-of-min."""
    counts = np.asarray(counts)
    cmax = max(int(counts.max(initial=0)), 1) if levels is None else levels
    rows, cols = np.nonzero(counts)
    reps = counts[rows, cols].astype(np.int64)
    r = np.repeat(rows, reps)
    base = np.repeat(cols * cmax, reps)
    # level within each run of repeats
    starts = np.repeat(np.cumsum(reps) - reps, reps)
    level = np.arange(reps.sum()) - starts
    data = np.ones(len(r))
    return sparse.csr_matrix((data, (r, base + level)), shape=(counts.shape[0], counts.shape[1] * cmax))


def tanimoto_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise count Tanimoto between rows of dense nonnegative count arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch")
    if np.any(a != np.round(a)) or np.any(b != np.round(b)):
        inter = np.stack([np.minimum(row[None, :], b).sum(axis=1) for row in a]) if len(a) else np.zeros((0, len(b)))
    else:
        levels = max(int(a.max(initial=0)), int(b.max(initial=0)), 1)
        inter = (thermometer(a, levels) @ thermometer(b, levels).T).toarray()
    union = a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


class TanimotoIndex:
    """Reference rows encoded once for repeated count-Tanimoto queries.

    Queries are clipped at the largest reference count, which leaves every
    elementwise minimum unchanged.
    """

    def __init__(self, ref: np.ndarray):
        ref = np.asarray(ref, dtype=np.float64)
        if np.any(ref != np.round(ref)) or np.any(ref < 0):
            raise ValueError("reference rows must hold nonnegative integer counts")
        self.ref = ref
        self.levels = max(int(ref.max(initial=0)), 1)
        self._enc = thermometer(ref, self.levels).T.tocsr()
        self._sums = ref.sum(axis=1)

    def __len__(self) -> int:
        return len(self.ref)

    def query(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        if q.shape[1] != self.ref.shape[1]:
            raise ValueError("dimension mismatch")
        if np.any(q != np.round(q)) or np.any(q < 0):
            return tanimoto_matrix(q, self.ref)
        inter = (thermometer(np.minimum(q, self.levels), self.levels) @ self._enc).toarray()
        union = q.sum(axis=1)[:, None] + self._sums[None, :] - inter
        out = np.zeros_like(inter)
        np.divide(inter, union, out=out, where=union > 0)
        return out
