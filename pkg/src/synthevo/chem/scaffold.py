"""Murcko scaffolds: ring systems plus the linkers joining them."""

from __future__ import annotations

from .molecule import Molecule


def murcko_scaffold(mol: Molecule) -> Molecule | None:
    """Strip non-ring degree-1 atoms until none remain; ``None`` for acyclic input."""
    ring = mol.ring_atoms
    if not ring:
        return None
    alive = set(range(mol.n_atoms))
    degree = [len(nb) for nb in mol.adjacency]
    stack = [a for a in alive if degree[a] <= 1 and a not in ring]
    while stack:
        a = stack.pop()
        if a not in alive:
            continue
        alive.discard(a)
        for b, _ in mol.adjacency[a]:
            if b in alive:
                degree[b] -= 1
                if degree[b] <= 1 and b not in ring:
                    stack.append(b)
    return mol.subgraph(alive)
