"""Building-block catalogs and precomputed template compatibility."""

from __future__ import annotations

import hashlib
import logging
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem import (
    CountFingerprint,
    Molecule,
    ReactionTemplate,
    SmilesError,
    apply_reaction,
    fingerprint_matrix,
    load_templates,
    match_pattern,
    morgan_count_fp,
    parse_smiles,
)

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
TOY_BLOCKS = DATA_DIR / "toy_blocks.smi"
TOY_TEMPLATES = DATA_DIR / "templates.tsv"


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    id: int
    mol: Molecule
    key: str
    fp: CountFingerprint


@dataclass
class LoadReport:
    n_lines: int = 0
    failures: list[tuple[int, str, str]] = field(default_factory=list)
    n_duplicates: int = 0
    n_unsupported: int = 0

    def summary(self) -> str:
        return (f"{self.n_lines} lines, {len(self.failures)} parse failures, "
                f"{self.n_duplicates} duplicates, {self.n_unsupported} unsupported")


class BuildingBlockSet:
    """Ordered, key-unique block collection with dense ids ``0..n-1``."""

    def __init__(self, mols: Iterable[Molecule], fp_dim: int = 2048, report: LoadReport | None = None):
        self.fp_dim = fp_dim
        self.blocks: list[Block] = []
        self._by_key: dict[str, int] = {}
        for mol in mols:
            key = mol.key
            if key in self._by_key:
                raise CatalogError(f"duplicate block {key}")
            bid = len(self.blocks)
            self._by_key[key] = bid
            self.blocks.append(Block(bid, mol, key, morgan_count_fp(mol, 2, fp_dim)))
        self.report = report or LoadReport()
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, bid: int) -> Block:
        return self.blocks[bid]

    def __iter__(self):
        return iter(self.blocks)

    def id_of(self, key: str) -> int | None:
        return self._by_key.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self._by_key

    @property
    def keys(self) -> list[str]:
        return [b.key for b in self.blocks]

    def fp_matrix(self) -> np.ndarray:
        """Dense ``(n, fp_dim)`` float32 count matrix, built once."""
        if self._matrix is None:
            self._matrix = fingerprint_matrix([b.fp for b in self.blocks])
        return self._matrix

    def digest(self) -> str:
        h = hashlib.sha256()
        for k in self.keys:
            h.update(k.encode())
            h.update(b"\n")
        return h.hexdigest()


def supported(mol: Molecule, templates: Sequence[ReactionTemplate]) -> bool:
    return any(match_pattern(p, mol, limit=1) for t in templates for p in t.reactants)


def load_blocks(
    path: str | Path,
    templates: Sequence[ReactionTemplate],
    *,
    strict: bool = False,
    fp_dim: int = 2048,
) -> BuildingBlockSet:
    """Read one SMILES per line; dedupe by key and drop blocks no template can use."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    report = LoadReport()
    mols: list[Molecule] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        report.n_lines += 1
        smi = text.split()[0]
        try:
            mol = parse_smiles(smi)
        except SmilesError as exc:
            if strict:
                raise CatalogError(f"{path}:{lineno}: {exc}") from None
            report.failures.append((lineno, smi, str(exc)))
            continue
        if mol.key in seen:
            report.n_duplicates += 1
            continue
        seen.add(mol.key)
        if not supported(mol, templates):
            report.n_unsupported += 1
            continue
        mols.append(mol)
    for lineno, smi, msg in report.failures:
        log.warning("%s:%d: skipped %r (%s)", path, lineno, smi, msg)
    log.info("loaded %s: %s", path, report.summary())
    return BuildingBlockSet(mols, fp_dim=fp_dim, report=report)


class LRU:
    """Small thread-safe LRU map; eviction only affects cost, never results."""

    def __init__(self, capacity: int):
        self.capacity = max(1, int(capacity))
        self._data: OrderedDict = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key, default=None):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                self.hits += 1
                return self._data[key]
            self.misses += 1
            return default

    def put(self, key, value) -> None:
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self) -> int:
        return len(self._data)


_CACHE_MAGIC = b"SEVIDX"
_CACHE_VERSION = 1


class CompatibilityIndex:
    """Per-slot block sets plus memoized reactions and template lookups.

    ``slot_blocks[(name, slot)]`` is the sorted tuple of block ids matching
    that reactant pattern; ``block_slots[bid]`` the ``(name, slot)`` pairs a
    block satisfies.
    """

    def __init__(
        self,
        blocks: BuildingBlockSet,
        templates: Sequence[ReactionTemplate],
        cache_size: int = 100_000,
        *,
        _slot_sets: dict[tuple[str, int], Sequence[int]] | None = None,
    ):
        self.blocks = blocks
        self.templates = list(templates)
        self.by_name = {t.name: t for t in self.templates}
        if len(self.by_name) != len(self.templates):
            raise CatalogError("template names must be unique")
        if _slot_sets is None:
            _slot_sets = {}
            for t in self.templates:
                for s, pat in enumerate(t.reactants):
                    _slot_sets[(t.name, s)] = [b.id for b in blocks if match_pattern(pat, b.mol, limit=1)]
        self.slot_blocks: dict[tuple[str, int], tuple[int, ...]] = {
            k: tuple(sorted(v)) for k, v in _slot_sets.items()
        }
        self._slot_sets = {k: frozenset(v) for k, v in self.slot_blocks.items()}
        self.block_slots: list[tuple[tuple[str, int], ...]] = [() for _ in range(len(blocks))]
        for t in self.templates:
            for s in range(t.arity):
                for bid in self.slot_blocks[(t.name, s)]:
                    self.block_slots[bid] += ((t.name, s),)
        self._templates_cache = LRU(cache_size)
        self._reaction_cache = LRU(cache_size)
        self._partner_cache = LRU(cache_size)
        for b in blocks:
            self._templates_cache.put(b.key, tuple(
                (self.by_name[n], s) for n, s in self.block_slots[b.id]))

    @classmethod
    def build(cls, blocks_path=TOY_BLOCKS, templates_path=TOY_TEMPLATES, *,
              fp_dim: int = 2048, cache_size: int = 100_000) -> "CompatibilityIndex":
        templates = load_templates(templates_path)
        blocks = load_blocks(blocks_path, templates, fp_dim=fp_dim)
        return cls(blocks, templates, cache_size)

    def template(self, name: str) -> ReactionTemplate:
        try:
            return self.by_name[name]
        except KeyError:
            raise CatalogError(f"unknown template {name!r}") from None

    # -- queries -----------------------------------------------------------
    def compatible_templates(self, mol: Molecule) -> tuple[tuple[ReactionTemplate, int], ...]:
        """Every ``(template, slot)`` whose reactant pattern matches ``mol``."""
        key = mol.key
        hit = self._templates_cache.get(key)
        if hit is not None:
            return hit
        out = tuple((t, s) for t in self.templates for s, p in enumerate(t.reactants)
                    if match_pattern(p, mol, limit=1))
        self._templates_cache.put(key, out)
        return out

    def slot_members(self, name: str, slot: int) -> tuple[int, ...]:
        t = self.template(name)
        if not 0 <= slot < t.arity:
            raise CatalogError(f"template {name!r} has no slot {slot}")
        return self.slot_blocks[(name, slot)]

    def in_slot(self, name: str, slot: int, bid: int) -> bool:
        return bid in self._slot_sets[(name, slot)]

    def react(self, template: ReactionTemplate, mols: Sequence[Molecule]) -> tuple[Molecule, ...]:
        """Memoized products of a template on an unordered reactant multiset."""
        ck = (template.name, tuple(sorted(m.key for m in mols)))
        hit = self._reaction_cache.get(ck)
        if hit is not None:
            return hit
        out = tuple(apply_reaction(template, mols))
        self._reaction_cache.put(ck, out)
        return out

    def compatible_blocks(self, name: str, slot: int, partner: Molecule | None = None) -> frozenset[int]:
        """Blocks matching ``slot``; with ``partner`` only those that actually react."""
        t = self.template(name)
        if not 0 <= slot < t.arity:
            raise CatalogError(f"template {name!r} has no slot {slot}")
        if partner is None:
            return self._slot_sets[(name, slot)]
        if t.arity != 2:
            raise CatalogError(f"template {name!r} is unary; a partner makes no sense")
        ck = (name, slot, partner.key)
        hit = self._partner_cache.get(ck)
        if hit is not None:
            return hit
        out = frozenset(
            bid for bid in self.slot_blocks[(name, slot)]
            if self.react(t, (partner, self.blocks[bid].mol))
        )
        self._partner_cache.put(ck, out)
        return out

    # -- binary cache --------------------------------------------------------
    def save(self, path: str | Path) -> None:
        """Write slot bitsets.

        Layout (little-endian): magic ``SEVIDX``, u16 version, 32-byte sha256
        of the block keys, u32 block count, u32 slot count, then per slot:
        u16 name length, UTF-8 name, u8 slot, ``ceil(n/8)`` bitset bytes
        (bit ``i`` set when block ``i`` matches).
        """
        n = len(self.blocks)
        parts = [_CACHE_MAGIC, struct.pack("<H", _CACHE_VERSION),
                 bytes.fromhex(self.blocks.digest()),
                 struct.pack("<II", n, len(self.slot_blocks))]
        for (name, slot), ids in sorted(self.slot_blocks.items()):
            bits = np.zeros(n, dtype=bool)
            bits[list(ids)] = True
            raw = name.encode()
            parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", slot),
                      np.packbits(bits, bitorder="little").tobytes()]
        tmp = Path(str(path) + ".tmp")
        tmp.write_bytes(b"".join(parts))
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path, blocks: BuildingBlockSet,
             templates: Sequence[ReactionTemplate], cache_size: int = 100_000) -> "CompatibilityIndex":
        data = Path(path).read_bytes()
        if not data.startswith(_CACHE_MAGIC):
            raise CatalogError(f"{path}: not an index cache")
        off = len(_CACHE_MAGIC)
        (version,) = struct.unpack_from("<H", data, off)
        off += 2
        if version != _CACHE_VERSION:
            raise CatalogError(f"{path}: unsupported cache version {version}")
        digest = data[off:off + 32].hex()
        off += 32
        if digest != blocks.digest():
            raise CatalogError(f"{path}: cache was built for a different catalog")
        n, n_slots = struct.unpack_from("<II", data, off)
        off += 8
        nbytes = (n + 7) // 8
        slots: dict[tuple[str, int], list[int]] = {}
        for _ in range(n_slots):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode()
            off += ln
            (slot,) = struct.unpack_from("<B", data, off)
            off += 1
            bits = np.unpackbits(np.frombuffer(data[off:off + nbytes], dtype=np.uint8),
                                 bitorder="little")[:n]
            off += nbytes
            slots[(name, slot)] = np.flatnonzero(bits).tolist()
        expected = {(t.name, s) for t in templates for s in range(t.arity)}
        if set(slots) != expected:
            raise CatalogError(f"{path}: cache was built for a different template set")
        return cls(blocks, templates, cache_size, _slot_sets=slots)
