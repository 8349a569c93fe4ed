"""Independent reference implementations shared by the test modules."""

import itertools

import networkx as nx
import numpy as np

from synthevo.chem.molecule import AROMATIC, SINGLE
from synthevo.chem.smarts import ANY_BOND, DEFAULT_BOND


def ring_atoms(mol):
    g = nx.Graph([(i, j) for i, j, _ in mol.bonds])
    g.add_nodes_from(range(mol.n_atoms))
    bridges = set(nx.bridges(g))
    ring = set()
    for i, j, _ in mol.bonds:
        if (i, j) not in bridges and (j, i) not in bridges:
            ring |= {i, j}
    return ring


def holds(expr, mol, i, ring):
    """Direct reading of an atom expression tree."""
    tag = expr[0]
    if tag == "prim":
        kind, val = expr[1], expr[2]
        return {
            "any": lambda: True,
            "element": lambda: mol.elements[i] == val,
            "aromatic": lambda: mol.aromatic[i] == val,
            "hcount": lambda: mol.hcounts[i] == val,
            "degree": lambda: sum(1 for a, b, _ in mol.bonds if i in (a, b)) == val,
            "charge": lambda: mol.charges[i] == val,
            "ring": lambda: (i in ring) == val,
        }[kind]()
    if tag == "not":
        return not holds(expr[1], mol, i, ring)
    if tag == "and":
        return all(holds(e, mol, i, ring) for e in expr[1])
    return any(holds(e, mol, i, ring) for e in expr[1])


def brute_force(pattern, mol):
    orders = {}
    for a, b, o in mol.bonds:
        orders[(a, b)] = orders[(b, a)] = o
    ring = ring_atoms(mol)
    # every injective assignment of atoms that satisfy their own expressions
    options = [[i for i in range(mol.n_atoms) if holds(a.expr, mol, i, ring)] for a in pattern.atoms]
    out = []
    for cand in itertools.product(*options):
        if len(set(cand)) != len(cand):
            continue
        ok = True
        for a, b, c in pattern.bonds:
            o = orders.get((cand[a], cand[b]))
            if o is None:
                ok = False
            elif c == ANY_BOND:
                pass
            elif c == DEFAULT_BOND:
                ok = o in (SINGLE, AROMATIC)
            else:
                ok = o == c
            if not ok:
                break
        if ok:
            out.append(cand)
    return sorted(out)


def central_difference(loss, params, h=1e-6):
    """Numerical gradient of ``loss()`` w.r.t. every entry of every array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def gradient_error(analytic, numeric):
    """Largest relative discrepancy, measured per parameter array."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-7)
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
