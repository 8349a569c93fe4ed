"""Reaction templates: mapped SMARTS rewrites applied to molecule graphs."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .molecule import (
    AROMATIC,
    SINGLE,
    Molecule,
    MoleculeError,
    allowed_valences,
    bond_valence,
    implicit_hydrogens,
)
from .smarts import ANY_BOND, DEFAULT_BOND, Pattern, SmartsError, has_match, match_pattern, parse_smarts


class ReactionError(ValueError):
    pass


@dataclass(frozen=True)
class ReactionTemplate:
    name: str
    smarts: str
    reactants: tuple[Pattern, ...]
    product: Pattern

    @property
    def arity(self) -> int:
        return len(self.reactants)

    def matches_slot(self, mol: Molecule, slot: int) -> bool:
        return has_match(self.reactants[slot], mol)

    def __repr__(self) -> str:
        return f"ReactionTemplate({self.name!r}, {self.smarts!r})"


def parse_reaction(smarts: str, name: str = "") -> ReactionTemplate:
    """Parse ``P1>>Q`` or ``P1.P2>>Q``."""
    if smarts.count(">>") != 1:
        raise SmartsError("reaction must contain exactly one '>>'", None, smarts)
    left, right = smarts.split(">>")
    parts = left.split(".")
    if not 1 <= len(parts) <= 2:
        raise SmartsError("reactions must be unary or binary", None, smarts)
    reactants = []
    offset = 0
    for part in parts:
        reactants.append(parse_smarts(part, _offset=offset, _full=smarts))
        offset += len(part) + 1
    if "." in right:
        raise SmartsError("product must be a single pattern", offset + 1 + right.index("."), smarts)
    product = parse_smarts(right, _offset=len(left) + 2, _full=smarts)
    seen: dict[int, int] = {}
    for k, r in enumerate(reactants):
        for m in r.map_numbers():
            if m in seen:
                raise SmartsError(f"atom map {m} appears in more than one reactant", None, smarts)
            seen[m] = k
    for m in product.map_numbers():
        if m not in seen:
            raise SmartsError(f"product atom map {m} missing from reactants", None, smarts)
    for atom in product.atoms:
        prims = atom.primitives()
        if atom.map_number is None and "element" not in prims:
            raise SmartsError("unmapped product atoms need an element", None, smarts)
    return ReactionTemplate(name, smarts, tuple(reactants), product)


def load_templates(path: str | Path) -> list[ReactionTemplate]:
    """Read ``name<TAB>smarts`` lines; blank lines and ``#`` comments are skipped."""
    out = []
    names = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ReactionError(f"{path}:{lineno}: expected 'name<TAB>smarts'")
        name, sm = fields[0].strip(), fields[1].strip()
        if name in names:
            raise ReactionError(f"{path}:{lineno}: duplicate template name {name!r}")
        names.add(name)
        try:
            out.append(parse_reaction(sm, name))
        except SmartsError as exc:
            raise ReactionError(f"{path}:{lineno}: {exc}") from None
    return out


def _rewrite(t: ReactionTemplate, mols: Sequence[Molecule], matches: Sequence[tuple[int, ...]]):
    # Disjoint union of the reactants.
    elements: list[str] = []
    charges: list[int] = []
    aromatic: list[bool] = []
    hcounts: list[int] = []
    bonds: dict[tuple[int, int], int] = {}
    offsets = []
    for mol in mols:
        off = len(elements)
        offsets.append(off)
        elements += mol.elements
        charges += mol.charges
        aromatic += mol.aromatic
        hcounts += mol.hcounts
        for i, j, o in mol.bonds:
            bonds[(i + off, j + off)] = o
    n_old = len(elements)
    total_valence = [0] * n_old
    for (i, j), o in bonds.items():
        total_valence[i] += bond_valence(o)
        total_valence[j] += bond_valence(o)
    for a in range(n_old):
        total_valence[a] += hcounts[a]

    map_to_atom: dict[int, int] = {}
    matched: set[int] = set()
    template_bonds: set[tuple[int, int]] = set()
    for pat, match, off in zip(t.reactants, matches, offsets):
        for k, atom in enumerate(pat.atoms):
            matched.add(match[k] + off)
            if atom.map_number is not None:
                map_to_atom[atom.map_number] = match[k] + off
        for i, j, _ in pat.bonds:
            a, b = match[i] + off, match[j] + off
            template_bonds.add((min(a, b), max(a, b)))

    product = t.product
    kept_maps = set(product.map_numbers())
    mapped_atoms = {map_to_atom[m] for m in kept_maps}
    deleted = {a for a in matched if a not in mapped_atoms}
    for k in template_bonds:
        bonds.pop(k, None)

    # Place product atoms: mapped ones reuse old atoms, others are appended.
    prod_index: list[int] = []
    explicit_h: dict[int, int] = {}
    old_charge = list(charges)
    for atom in product.atoms:
        prims = atom.primitives()
        if atom.map_number is not None:
            a = map_to_atom[atom.map_number]
            if "charge" in prims:
                charges[a] = prims["charge"]
        else:
            a = len(elements)
            elements.append(prims["element"])
            charges.append(prims.get("charge", 0))
            aromatic.append(bool(prims.get("aromatic", False)))
            hcounts.append(0)
        if "hcount" in prims:
            explicit_h[a] = prims["hcount"]
        prod_index.append(a)

    for i, j, c in product.bonds:
        a, b = prod_index[i], prod_index[j]
        k = (min(a, b), max(a, b))
        if c == ANY_BOND:
            o = original_order(mols, offsets, a, b, n_old)
            o = SINGLE if o is None else o
        elif c == DEFAULT_BOND:
            both = product.atoms[i].primitives().get("aromatic") and product.atoms[j].primitives().get("aromatic")
            o = AROMATIC if both else SINGLE
        else:
            o = c
        bonds[k] = o
    bonds = {k: o for k, o in bonds.items() if k[0] not in deleted and k[1] not in deleted}

    n_all = len(elements)
    alive = [a for a in range(n_all) if a not in deleted]
    adj: dict[int, list[int]] = {a: [] for a in alive}
    used = [0] * n_all
    orders: list[list[int]] = [[] for _ in range(n_all)]
    for (i, j), o in bonds.items():
        adj[i].append(j)
        adj[j].append(i)
        used[i] += bond_valence(o)
        used[j] += bond_valence(o)
        orders[i].append(o)
        orders[j].append(o)

    # Keep the component holding the product atoms; other pieces are leaving groups.
    seeds = prod_index
    comp = {seeds[0]}
    stack = [seeds[0]]
    while stack:
        a = stack.pop()
        for b in adj[a]:
            if b not in comp:
                comp.add(b)
                stack.append(b)
    if any(a not in comp for a in seeds):
        return None

    for a in comp:
        if a in explicit_h:
            hcounts[a] = explicit_h[a]
        elif a >= n_old:
            hcounts[a] = implicit_hydrogens(elements[a], aromatic[a], orders[a])
        else:
            shift = 0
            if charges[a] != old_charge[a]:
                new_v = allowed_valences(elements[a], charges[a])
                old_v = allowed_valences(elements[a], old_charge[a])
                if not new_v or not old_v:
                    return None
                shift = new_v[0] - old_v[0]
            hcounts[a] = total_valence[a] + shift - used[a]
        if hcounts[a] < 0:
            return None

    keep = sorted(comp)
    index = {a: k for k, a in enumerate(keep)}
    try:
        return Molecule(
            [elements[a] for a in keep],
            [charges[a] for a in keep],
            [aromatic[a] for a in keep],
            [hcounts[a] for a in keep],
            [(index[i], index[j], o) for (i, j), o in bonds.items() if i in index and j in index],
        )
    except MoleculeError:
        return None


def original_order(mols, offsets, a: int, b: int, n_old: int) -> int | None:
    if a >= n_old or b >= n_old:
        return None
    for mol, off in zip(mols, offsets):
        if off <= a < off + mol.n_atoms and off <= b < off + mol.n_atoms:
            return mol.bond_order(a - off, b - off)
    return None


def _run_ordered(t: ReactionTemplate, mols: Sequence[Molecule]) -> dict[str, Molecule]:
    all_matches = []
    for pat, mol in zip(t.reactants, mols):
        ms = match_pattern(pat, mol)
        if not ms:
            return {}
        # Matches differing only in unmapped atoms' order give the same rewrite.
        seen = {}
        mapped = [k for k, a in enumerate(pat.atoms) if a.map_number is not None]
        for m in ms:
            sig = (tuple(m[k] for k in mapped), frozenset(m))
            seen.setdefault(sig, m)
        all_matches.append(list(seen.values()))
    out: dict[str, Molecule] = {}
    for combo in itertools.product(*all_matches):
        prod = _rewrite(t, mols, combo)
        if prod is not None:
            out.setdefault(prod.key, prod)
    return out


def apply_reaction(t: ReactionTemplate, reactants: Sequence[Molecule]) -> list[Molecule]:
    """All distinct products over every reactant-to-slot assignment, sorted by key."""
    if len(reactants) != t.arity:
        raise ReactionError(f"template {t.name!r} takes {t.arity} reactants, got {len(reactants)}")
    out: dict[str, Molecule] = {}
    orders = [tuple(reactants)]
    if t.arity == 2:
        orders.append((reactants[1], reactants[0]))
    for mols in orders:
        for k, m in _run_ordered(t, mols).items():
            out.setdefault(k, m)
    return [out[k] for k in sorted(out)]
