"""SMILES subset reader and writer.

Supported: organic-subset atoms ``B C N O P S F Cl Br I Si Se`` (aromatic
``b c n o p s``), bracket atoms ``[<elem><Hn?><charge?>]``, bonds ``- = # :``,
branches and ring closures (``1``-``9``, ``%nn``). No stereo, isotopes,
atom maps or dot-separated fragments.
"""

from __future__ import annotations

from typing import Sequence

from .molecule import (
    AROMATIC,
    DOUBLE,
    SINGLE,
    TRIPLE,
    Molecule,
    MoleculeError,
    implicit_hydrogens,
)

_BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC}
_BOND_SYMBOLS = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}
_ORGANIC_TWO = ("Cl", "Br", "Si", "Se")
_ORGANIC_ONE = frozenset("BCNOPSFI")
_AROMATIC_ONE = frozenset("bcnops")
_UNSUPPORTED = {
    "@": "stereochemistry is not supported",
    "/": "bond stereochemistry is not supported",
    "\\": "bond stereochemistry is not supported",
    ".": "dot-separated fragments are not supported",
}


class SmilesError(ValueError):
    def __init__(self, message: str, position: int | None = None, text: str = ""):
        self.position = position
        self.text = text
        where = f" at offset {position}" if position is not None else ""
        super().__init__(f"{message}{where}: {text!r}" if text else f"{message}{where}")


def _parse_bracket(text: str, start: int) -> tuple[str, bool, int, int, int]:
    """Parse ``[...]`` starting at ``start``; returns element, aromatic, H, charge, end."""
    end = text.find("]", start)
    if end < 0:
        raise SmilesError("unclosed bracket atom", start, text)
    body = text[start + 1:end]
    i = 0
    if i < len(body) and body[i].isdigit():
        raise SmilesError("isotopes are not supported", start + 1, text)
    elem = None
    aromatic = False
    for sym in ("Cl", "Br", "Si", "Se", "se"):
        if body.startswith(sym):
            elem, aromatic = ("Se", True) if sym == "se" else (sym, False)
            i = 2
            break
    if elem is None:
        if not body:
            raise SmilesError("empty bracket atom", start, text)
        ch = body[0]
        if ch in _ORGANIC_ONE:
            elem, aromatic = ch, False
        elif ch in _AROMATIC_ONE:
            elem, aromatic = ch.upper(), True
        else:
            raise SmilesError(f"unsupported element in {body!r}", start + 1, text)
        i = 1
    h = 0
    if i < len(body) and body[i] == "H":
        i += 1
        j = i
        while j < len(body) and body[j].isdigit():
            j += 1
        h = int(body[i:j]) if j > i else 1
        i = j
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        j = i + 1
        if j < len(body) and body[j].isdigit():
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * int(body[j:k])
            i = k
        else:
            charge = sign
            i = j
            while i < len(body) and body[i] == body[j - 1]:
                charge += sign
                i += 1
    if i != len(body):
        bad = body[i]
        msg = _UNSUPPORTED.get(bad, f"unexpected {bad!r} in bracket atom")
        raise SmilesError(msg, start + 1 + i, text)
    return elem, aromatic, h, charge, end + 1


def parse_smiles(text: str) -> Molecule:
    """Parse a SMILES string into a sanitized :class:`Molecule`."""
    s = text.strip()
    if not s:
        raise SmilesError("empty SMILES")
    elements: list[str] = []
    aromatic: list[bool] = []
    charges: list[int] = []
    hcounts: list[int | None] = []
    bonds: dict[tuple[int, int], int | None] = {}
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, int | None, int]] = {}
    prev: int | None = None
    pending: int | None = None
    pending_pos = 0

    def add_bond(a: int, b: int, order: int | None, pos: int) -> None:
        if a == b:
            raise SmilesError("ring closure onto the same atom", pos, s)
        k = (min(a, b), max(a, b))
        if k in bonds:
            raise SmilesError("duplicate bond", pos, s)
        bonds[k] = order

    def add_atom(elem: str, arom: bool, h: int | None, charge: int, pos: int) -> None:
        nonlocal prev, pending
        idx = len(elements)
        elements.append(elem)
        aromatic.append(arom)
        charges.append(charge)
        hcounts.append(h)
        if prev is not None:
            add_bond(prev, idx, pending, pos)
        elif idx > 0:
            raise SmilesError("disconnected atom", pos, s)
        pending = None
        prev = idx

    i = 0
    n = len(s)
    while i < n:
        ch = s[i]
        if ch in _UNSUPPORTED:
            raise SmilesError(_UNSUPPORTED[ch], i, s)
        if ch == "(":
            if prev is None or pending is not None:
                raise SmilesError("misplaced branch", i, s)
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced ')'", i, s)
            if pending is not None:
                raise SmilesError("dangling bond", i, s)
            if i > 0 and s[i - 1] == "(":
                raise SmilesError("empty branch", i, s)
            prev = branch_stack.pop()
            i += 1
        elif ch in _BOND_CHARS:
            if pending is not None or prev is None:
                raise SmilesError("misplaced bond", i, s)
            pending = _BOND_CHARS[ch]
            pending_pos = i
            i += 1
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise SmilesError("ring closure before any atom", i, s)
            if ch == "%":
                digits = s[i + 1:i + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("malformed %nn ring closure", i, s)
                num = int(digits)
                width = 3
            else:
                num = int(ch)
                width = 1
            if num in rings:
                other, order, _ = rings.pop(num)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError("conflicting ring-closure bond orders", i, s)
                add_bond(other, prev, pending if pending is not None else order, i)
            else:
                rings[num] = (prev, pending, i)
            pending = None
            i += width
        elif ch == "[":
            elem, arom, h, charge, i_next = _parse_bracket(s, i)
            add_atom(elem, arom, h, charge, i)
            i = i_next
        else:
            two = s[i:i + 2]
            if two in _ORGANIC_TWO:
                add_atom(two, False, None, 0, i)
                i += 2
            elif ch in _ORGANIC_ONE:
                add_atom(ch, False, None, 0, i)
                i += 1
            elif ch in _AROMATIC_ONE:
                add_atom(ch.upper(), True, None, 0, i)
                i += 1
            elif ch.isalpha():
                raise SmilesError(f"unsupported element starting with {ch!r}", i, s)
            else:
                raise SmilesError(f"unexpected character {ch!r}", i, s)
    if pending is not None:
        raise SmilesError("dangling bond", pending_pos, s)
    if branch_stack:
        raise SmilesError("unclosed branch", n, s)
    if rings:
        num, (_, _, pos) = next(iter(rings.items()))
        raise SmilesError(f"unclosed ring bond {num}", pos, s)

    # Unspecified bonds: aromatic inside rings between aromatic atoms, else single.
    provisional = [(a, b, o if o is not None else SINGLE) for (a, b), o in bonds.items()]
    scaffold = Molecule(elements, [0] * len(elements), [False] * len(elements),
                        [0] * len(elements), provisional, validate=False)
    ring_bonds = scaffold.ring_bonds
    final = []
    for (a, b), o in bonds.items():
        if o is None:
            o = AROMATIC if (aromatic[a] and aromatic[b] and (a, b) in ring_bonds) else SINGLE
        final.append((a, b, o))
    orders: list[list[int]] = [[] for _ in elements]
    for a, b, o in final:
        orders[a].append(o)
        orders[b].append(o)
    hs = [
        implicit_hydrogens(el, ar, orders[k]) if h is None else h
        for k, (el, ar, h) in enumerate(zip(elements, aromatic, hcounts))
    ]
    try:
        return Molecule(elements, charges, aromatic, hs, final)
    except MoleculeError as exc:
        raise SmilesError(str(exc), None, s) from None


def atom_symbol(mol: Molecule, i: int) -> str:
    el = mol.elements[i]
    arom = mol.aromatic[i]
    charge = mol.charges[i]
    h = mol.hcounts[i]
    sym = el.lower() if arom else el
    if charge == 0 and (not arom or el != "Se"):
        orders = [o for _, o in mol.adjacency[i]]
        if implicit_hydrogens(el, arom, orders) == h:
            return sym
    out = "[" + sym
    if h:
        out += "H" if h == 1 else f"H{h}"
    if charge:
        sign = "+" if charge > 0 else "-"
        out += sign if abs(charge) == 1 else f"{sign}{abs(charge)}"
    return out + "]"


def _bond_symbol(mol: Molecule, a: int, b: int, order: int) -> str:
    if order == SINGLE:
        return "-" if (mol.aromatic[a] and mol.aromatic[b]) else ""
    if order == AROMATIC:
        return ""
    return _BOND_SYMBOLS[order]


def write_smiles(mol: Molecule, rank: Sequence[int] | None = None) -> tuple[str, list[int]]:
    """Write SMILES by depth-first traversal, visiting low ranks first.

    Returns the string and the atom indices in output order.
    """
    n = mol.n_atoms
    if rank is None:
        rank = list(range(n))
    adj = [sorted(mol.adjacency[a], key=lambda t: rank[t[0]]) for a in range(n)]
    start = min(range(n), key=lambda a: rank[a])

    visit = [-1] * n
    parent = [-1] * n
    children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    closures: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    closure_set: set[tuple[int, int]] = set()
    counter = [0]

    def explore(a: int) -> None:
        visit[a] = counter[0]
        counter[0] += 1
        for b, o in adj[a]:
            if visit[b] == -1:
                parent[b] = a
                children[a].append((b, o))
                explore(b)
            elif b != parent[a]:
                k = (min(a, b), max(a, b))
                if k not in closure_set:
                    closure_set.add(k)
                    closures[a].append((b, o))
                    closures[b].append((a, o))

    explore(start)

    out: list[str] = []
    order_out: list[int] = []
    free_digits: list[int] = []
    next_digit = [1]
    open_digit: dict[tuple[int, int], int] = {}
    emitted = [False] * n

    def digit_text(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(a: int) -> None:
        out.append(atom_symbol(mol, a))
        order_out.append(a)
        emitted[a] = True
        for b, bo in sorted(closures[a], key=lambda t: visit[t[0]]):
            k = (min(a, b), max(a, b))
            if emitted[b]:
                d = open_digit.pop(k)
                out.append(digit_text(d))
                free_digits.append(d)
                free_digits.sort()
            else:
                if free_digits:
                    d = free_digits.pop(0)
                else:
                    d = next_digit[0]
                    next_digit[0] += 1
                open_digit[k] = d
                out.append(_bond_symbol(mol, a, b, bo) + digit_text(d))
        kids = children[a]
        for idx, (b, bo) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_symbol(mol, a, b, bo))
            emit(b)
            if not last:
                out.append(")")

    emit(start)
    return "".join(out), order_out
