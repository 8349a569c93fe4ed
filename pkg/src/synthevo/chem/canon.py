"""Canonical SMILES via partition refinement and individualization search.

Atoms are colored by local invariants, colors are refined by neighbor
multisets until stable, and remaining ties are broken by a search tree whose
leaves are discrete labelings. The labeling with the smallest bond-list
certificate wins and is written out as SMILES. Automorphisms discovered at equivalent
leaves prune the tree (first-path jump-back plus orbit pruning), so symmetric
molecules stay cheap.
"""

from __future__ import annotations

from .molecule import ATOMIC_NUMBERS, Molecule
from .smiles import write_smiles

MAX_LEAVES = 4096


def _initial_colors(mol: Molecule) -> list[int]:
    inv = []
    for i in range(mol.n_atoms):
        inv.append((
            ATOMIC_NUMBERS[mol.elements[i]],
            mol.aromatic[i],
            mol.charges[i],
            mol.hcounts[i],
            tuple(sorted(o for _, o in mol.adjacency[i])),
        ))
    return _colors_from_keys(inv)


def _colors_from_keys(keys: list) -> list[int]:
    # Color = index of the first atom of its cell in sorted order.
    order = sorted(range(len(keys)), key=keys.__getitem__)
    colors = [0] * len(keys)
    prev = None
    start = 0
    for pos, a in enumerate(order):
        k = keys[a]
        if k != prev:
            start = pos
            prev = k
        colors[a] = start
    return colors


def _refine(colors: list[int], adj) -> list[int]:
    n_cells = len(set(colors))
    n = len(colors)
    while True:
        keys = [
            (colors[a], tuple(sorted([o * n + colors[b] for b, o in adj[a]])))
            for a in range(n)
        ]
        new = _colors_from_keys(keys)
        n_new = len(set(new))
        if n_new == n_cells:
            return new
        colors, n_cells = new, n_new


def _individualize(colors: list[int], v: int) -> list[int]:
    c = colors[v]
    return [x + 1 if (x == c and a != v) else x for a, x in enumerate(colors)]


class _Jump(Exception):
    def __init__(self, level: int):
        self.level = level


class _Stop(Exception):
    pass


def _orbit_roots(n: int, generators: list[list[int]]) -> list[int]:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for g in generators:
        for a in range(n):
            ra, rb = find(a), find(g[a])
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    return [find(a) for a in range(n)]


def _certificate(bonds, labels: list[int]) -> tuple:
    return tuple(sorted(
        (labels[i], labels[j], o) if labels[i] < labels[j] else (labels[j], labels[i], o)
        for i, j, o in bonds
    ))


def canonical_labels(mol: Molecule) -> list[int]:
    """Canonical rank of every atom (a permutation of ``0..n-1``)."""
    n = mol.n_atoms
    adj = [list(a) for a in mol.adjacency]
    bonds = mol.bonds
    state = {
        "first": None,      # (certificate, labels, path)
        "best": None,       # (certificate, labels)
        "leaves": 0,
    }
    automorphisms: list[list[int]] = []

    def mapping(src: list[int], dst: list[int]) -> list[int]:
        # atom with label L under src -> atom with label L under dst
        by_label = [0] * n
        for a, lab in enumerate(dst):
            by_label[lab] = a
        return [by_label[src[a]] for a in range(n)]

    def leaf(colors: list[int], path: list[int]) -> None:
        state["leaves"] += 1
        cert = _certificate(bonds, colors)
        first = state["first"]
        if first is None:
            state["first"] = (cert, colors, list(path))
            state["best"] = (cert, colors)
            return
        best = state["best"]
        if cert == first[0]:
            automorphisms.append(mapping(first[1], colors))
            level = 0
            fpath = first[2]
            while level < len(path) and level < len(fpath) and path[level] == fpath[level]:
                level += 1
            raise _Jump(level)
        if cert == best[0]:
            automorphisms.append(mapping(best[1], colors))
        elif cert < best[0]:
            state["best"] = (cert, colors)
        if state["leaves"] >= MAX_LEAVES:
            raise _Stop

    def search(colors: list[int], path: list[int]) -> None:
        colors = _refine(colors, adj)
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = None
        for c in sorted(counts):
            if counts[c] > 1:
                target = c
                break
        if target is None:
            leaf(colors, path)
            return
        cell = [a for a in range(n) if colors[a] == target]
        depth = len(path)
        explored: list[int] = []
        for v in cell:
            if explored and automorphisms:
                fixing = [g for g in automorphisms if all(g[p] == p for p in path)]
                if fixing:
                    roots = _orbit_roots(n, fixing)
                    if any(roots[v] == roots[u] for u in explored):
                        continue
            explored.append(v)
            path.append(v)
            try:
                search(_individualize(colors, v), path)
            except _Jump as jump:
                if jump.level != depth:
                    raise
            finally:
                path.pop()

    try:
        search(_initial_colors(mol), [])
    except _Stop:
        pass
    return state["best"][1]


def canonical_order(mol: Molecule) -> tuple[str, list[int]]:
    """Return the canonical SMILES and the atom output order producing it."""
    if mol.n_atoms == 1:
        return write_smiles(mol)
    return write_smiles(mol, canonical_labels(mol))


def canonical_smiles(mol: Molecule) -> str:
    return canonical_order(mol)[0]
