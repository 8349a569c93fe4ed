"""Heavy-atom molecular graph with explicit hydrogen counts."""

from __future__ import annotations

from collections import deque
from typing import Iterable, Sequence

SINGLE = 1
DOUBLE = 2
TRIPLE = 3
AROMATIC = 4

BOND_ORDERS = (SINGLE, DOUBLE, TRIPLE, AROMATIC)

ATOMIC_NUMBERS = {
    "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15, "S": 16,
    "Cl": 17, "Se": 34, "Br": 35, "I": 53,
}
ELEMENTS = frozenset(ATOMIC_NUMBERS)
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S", "Se"})

# Conventional standard atomic weights, IUPAC CIAAW 2021 abridged table.
ATOMIC_WEIGHTS = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "Se": 78.971, "Br": 79.904, "I": 126.90,
}

DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
    "Si": (4,), "Se": (2, 4, 6),
}


class MoleculeError(ValueError):
    """Raised when a graph violates a structural or valence invariant."""


def allowed_valences(element: str, charge: int) -> tuple[int, ...]:
    base = DEFAULT_VALENCES[element]
    if charge == 0:
        return base
    if element in ("C", "Si"):
        v = 4 - abs(charge)
        return (v,) if v >= 0 else ()
    if element == "B":
        v = 3 - charge
        return (v,) if v >= 0 else ()
    return tuple(v + charge for v in base if v + charge >= 0)


def bond_valence(order: int) -> int:
    return 1 if order == AROMATIC else order


def implicit_hydrogens(element: str, aromatic: bool, orders: Iterable[int]) -> int:
    """Hydrogens implied for an unbracketed (neutral, organic-subset) atom."""
    n_arom = 0
    other = 0
    for o in orders:
        if o == AROMATIC:
            n_arom += 1
        else:
            other += o
    valences = DEFAULT_VALENCES[element]
    if aromatic:
        used = other + n_arom + (1 if element in ("B", "C", "N", "P") else 0)
        return max(0, valences[0] - used)
    for v in valences:
        if v >= other:
            return v - other
    return 0


class Molecule:
    """Immutable connected heavy-atom graph.

    Atoms carry element symbol, formal charge, aromatic flag and an explicit
    hydrogen count. Bonds are ``(i, j, order)`` with ``i < j``.
    """

    __slots__ = (
        "elements", "charges", "aromatic", "hcounts", "bonds",
        "_adj", "_ring_bonds", "_ring_atoms", "_key", "_hash", "_element_counts",
    )

    def __init__(
        self,
        elements: Sequence[str],
        charges: Sequence[int],
        aromatic: Sequence[bool],
        hcounts: Sequence[int],
        bonds: Iterable[tuple[int, int, int]],
        *,
        validate: bool = True,
    ):
        self.elements = tuple(elements)
        self.charges = tuple(int(c) for c in charges)
        self.aromatic = tuple(bool(a) for a in aromatic)
        self.hcounts = tuple(int(h) for h in hcounts)
        norm = []
        for i, j, o in bonds:
            if i > j:
                i, j = j, i
            norm.append((i, j, o))
        norm.sort()
        self.bonds = tuple(norm)
        self._adj = None
        self._ring_bonds = None
        self._ring_atoms = None
        self._key = None
        self._hash = None
        self._element_counts = None
        if validate:
            self.check()

    # -- structure -------------------------------------------------------
    @property
    def n_atoms(self) -> int:
        return len(self.elements)

    @property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        if self._adj is None:
            adj: list[list[tuple[int, int]]] = [[] for _ in self.elements]
            for i, j, o in self.bonds:
                adj[i].append((j, o))
                adj[j].append((i, o))
            self._adj = tuple(tuple(sorted(a)) for a in adj)
        return self._adj

    @property
    def element_counts(self) -> dict[str, int]:
        if self._element_counts is None:
            counts: dict[str, int] = {}
            for el in self.elements:
                counts[el] = counts.get(el, 0) + 1
            self._element_counts = counts
        return self._element_counts

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_order(self, i: int, j: int) -> int | None:
        for k, o in self.adjacency[i]:
            if k == j:
                return o
        return None

    def is_connected(self) -> bool:
        n = self.n_atoms
        if n == 0:
            return False
        seen = {0}
        queue = deque([0])
        adj = self.adjacency
        while queue:
            a = queue.popleft()
            for b, _ in adj[a]:
                if b not in seen:
                    seen.add(b)
                    queue.append(b)
        return len(seen) == n

    def _perceive_rings(self) -> None:
        # Bridges via iterative Tarjan low-link; every non-bridge bond is a ring bond.
        n = self.n_atoms
        adj = self.adjacency
        disc = [-1] * n
        low = [0] * n
        bridges = set()
        t = 0
        for root in range(n):
            if disc[root] != -1:
                continue
            disc[root] = low[root] = t
            t += 1
            stack = [(root, -1, iter(adj[root]))]
            while stack:
                v, parent, it = stack[-1]
                advanced = False
                for w, _ in it:
                    if w == parent:
                        continue
                    if disc[w] == -1:
                        disc[w] = low[w] = t
                        t += 1
                        stack.append((w, v, iter(adj[w])))
                        advanced = True
                        break
                    low[v] = min(low[v], disc[w])
                if advanced:
                    continue
                stack.pop()
                if parent != -1:
                    low[parent] = min(low[parent], low[v])
                    if low[v] > disc[parent]:
                        bridges.add((min(v, parent), max(v, parent)))
        ring_bonds = frozenset((i, j) for i, j, _ in self.bonds if (i, j) not in bridges)
        atoms = set()
        for i, j in ring_bonds:
            atoms.add(i)
            atoms.add(j)
        self._ring_bonds = ring_bonds
        self._ring_atoms = frozenset(atoms)

    @property
    def ring_bonds(self) -> frozenset[tuple[int, int]]:
        if self._ring_bonds is None:
            self._perceive_rings()
        return self._ring_bonds

    @property
    def ring_atoms(self) -> frozenset[int]:
        if self._ring_atoms is None:
            self._perceive_rings()
        return self._ring_atoms

    def in_ring(self, i: int) -> bool:
        return i in self.ring_atoms

    # -- chemistry -------------------------------------------------------
    def valence(self, i: int) -> int:
        return sum(bond_valence(o) for _, o in self.adjacency[i]) + self.hcounts[i]

    def check(self) -> None:
        n = self.n_atoms
        if n == 0:
            raise MoleculeError("empty molecule")
        seen = set()
        for i, j, o in self.bonds:
            if i == j:
                raise MoleculeError(f"self-loop on atom {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise MoleculeError(f"bond ({i}, {j}) out of range")
            if (i, j) in seen:
                raise MoleculeError(f"parallel bond ({i}, {j})")
            if o not in BOND_ORDERS:
                raise MoleculeError(f"unknown bond order {o}")
            seen.add((i, j))
            if o == AROMATIC:
                if not (self.aromatic[i] and self.aromatic[j]):
                    raise MoleculeError(f"aromatic bond ({i}, {j}) between non-aromatic atoms")
                if (i, j) not in self.ring_bonds:
                    raise MoleculeError(f"aromatic bond ({i}, {j}) outside a ring")
        if not self.is_connected():
            raise MoleculeError("molecule is disconnected")
        for i, el in enumerate(self.elements):
            if el not in ELEMENTS:
                raise MoleculeError(f"unsupported element {el!r}")
            if self.hcounts[i] < 0:
                raise MoleculeError(f"negative hydrogen count on atom {i}")
            allowed = allowed_valences(el, self.charges[i])
            if not allowed:
                raise MoleculeError(f"impossible charge {self.charges[i]} on {el}")
            if self.aromatic[i]:
                if el not in AROMATIC_ELEMENTS:
                    raise MoleculeError(f"{el} cannot be aromatic")
                n_arom = sum(1 for _, o in self.adjacency[i] if o == AROMATIC)
                if n_arom < 2:
                    raise MoleculeError(f"aromatic atom {i} is not in an aromatic ring")
                v = self.valence(i)
                if v > max(allowed) or (v not in allowed and v + 1 not in allowed):
                    raise MoleculeError(f"valence {v} invalid for aromatic {el} (atom {i})")
            else:
                v = self.valence(i)
                if v not in allowed:
                    raise MoleculeError(
                        f"valence {v} invalid for {el}{self.charges[i]:+d} (atom {i})"
                    )
        if any(self.aromatic) and not self._kekulizable():
            raise MoleculeError("aromatic system has no alternating bond assignment")

    def _kekulizable(self) -> bool:
        # Aromatic atoms one short of a valid valence need a double bond to an
        # aromatic neighbor; those atoms must admit a perfect matching.
        needy = {
            i for i in range(self.n_atoms)
            if self.aromatic[i] and self.valence(i) not in allowed_valences(self.elements[i], self.charges[i])
        }
        if len(needy) % 2:
            return False
        options = {
            i: {j for j, o in self.adjacency[i] if o == AROMATIC and j in needy} for i in needy
        }

        def match(left: set[int]) -> bool:
            if not left:
                return True
            i = min(left, key=lambda a: (len(options[a] & left), a))
            for j in sorted(options[i] & left):
                if match(left - {i, j}):
                    return True
            return False

        return match(needy)

    def is_valid(self) -> bool:
        try:
            self.check()
        except MoleculeError:
            return False
        return True

    # -- derived ---------------------------------------------------------
    @property
    def key(self) -> str:
        """Canonical SMILES; equal for isomorphic graphs."""
        if self._key is None:
            from .canon import canonical_smiles

            self._key = canonical_smiles(self)
        return self._key

    def formula(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for el, h in zip(self.elements, self.hcounts):
            counts[el] = counts.get(el, 0) + 1
            if h:
                counts["H"] = counts.get("H", 0) + h
        return counts

    def subgraph(self, atoms: Iterable[int], *, validate: bool = True) -> "Molecule":
        """Induced subgraph; hydrogens are added to replace cut bonds."""
        keep = sorted(set(atoms))
        index = {a: k for k, a in enumerate(keep)}
        hcounts = [self.hcounts[a] for a in keep]
        bonds = []
        for i, j, o in self.bonds:
            if i in index and j in index:
                bonds.append((index[i], index[j], o))
            elif i in index:
                hcounts[index[i]] += bond_valence(o)
            elif j in index:
                hcounts[index[j]] += bond_valence(o)
        return Molecule(
            [self.elements[a] for a in keep],
            [self.charges[a] for a in keep],
            [self.aromatic[a] for a in keep],
            hcounts,
            bonds,
            validate=validate,
        )

    def permute(self, order: Sequence[int]) -> "Molecule":
        """Relabel atoms so that new atom ``k`` is old atom ``order[k]``."""
        inv = {old: new for new, old in enumerate(order)}
        return Molecule(
            [self.elements[a] for a in order],
            [self.charges[a] for a in order],
            [self.aromatic[a] for a in order],
            [self.hcounts[a] for a in order],
            [(inv[i], inv[j], o) for i, j, o in self.bonds],
            validate=False,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Molecule):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self.key)
        return self._hash

    def __repr__(self) -> str:
        return f"Molecule({self.key!r})"

    def __getstate__(self):
        return (self.elements, self.charges, self.aromatic, self.hcounts, self.bonds, self._key)

    def __setstate__(self, state):
        self.elements, self.charges, self.aromatic, self.hcounts, self.bonds, self._key = state
        self._adj = self._ring_bonds = self._ring_atoms = self._hash = None
        self._element_counts = None


def molecular_weight(mol: Molecule) -> float:
    """Average molecular weight in Da, hydrogens included."""
    w = 0.0
    for el, h in zip(mol.elements, mol.hcounts):
        w += ATOMIC_WEIGHTS[el] + h * ATOMIC_WEIGHTS["H"]
    return w
