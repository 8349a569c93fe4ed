"""SMARTS subset: atom expressions, bond constraints and substructure matching.

Bracket primitives: ``#n``, element symbols (aliphatic upper-case, aromatic
lower-case), ``*``, ``a``, ``A``, ``Hn``, ``Dn``, ``R``/``R0``, charges
``+``/``-``/``+n``/``-n``; operators ``!`` (not), ``&`` or juxtaposition
(high-precedence and), ``,`` (or), ``;`` (low-precedence and). ``:n`` at the
end of a bracket sets the atom-map number. Bonds: ``- = # : ~`` and the
implicit single-or-aromatic default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .molecule import ATOMIC_NUMBERS, AROMATIC, DOUBLE, SINGLE, TRIPLE, Molecule

ANY_BOND = 0
DEFAULT_BOND = -1

_BOND_CHARS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "~": ANY_BOND}
_ELEMENT_BY_NUMBER = {v: k for k, v in ATOMIC_NUMBERS.items()}
_TWO_LETTER = ("Cl", "Br", "Si", "Se")


class SmartsError(ValueError):
    def __init__(self, message: str, position: int | None = None, text: str = ""):
        self.position = position
        where = f" at offset {position}" if position is not None else ""
        super().__init__(f"{message}{where}: {text!r}" if text else message)


# Expression AST: ("prim", kind, value) | ("not", e) | ("and", [e...]) | ("or", [e...])


def _compile(expr) -> Callable[[Molecule, int], bool]:
    tag = expr[0]
    if tag == "prim":
        kind, val = expr[1], expr[2]
        if kind == "any":
            return lambda m, i: True
        if kind == "element":
            return lambda m, i: m.elements[i] == val
        if kind == "aromatic":
            return lambda m, i: m.aromatic[i] == val
        if kind == "hcount":
            return lambda m, i: m.hcounts[i] == val
        if kind == "degree":
            return lambda m, i: len(m.adjacency[i]) == val
        if kind == "charge":
            return lambda m, i: m.charges[i] == val
        if kind == "ring":
            return lambda m, i: (i in m.ring_atoms) == val
        raise AssertionError(kind)
    if tag == "not":
        inner = _compile(expr[1])
        return lambda m, i: not inner(m, i)
    if tag == "and" and all(e[0] == "prim" for e in expr[1]):
        return _compile_conjunction([(e[1], e[2]) for e in expr[1]])
    parts = [_compile(e) for e in expr[1]]
    if tag == "and":
        if len(parts) == 2:
            p0, p1 = parts
            return lambda m, i: p0(m, i) and p1(m, i)
        return lambda m, i: all(p(m, i) for p in parts)
    if tag == "or":
        return lambda m, i: any(p(m, i) for p in parts)
    raise AssertionError(tag)


def _compile_conjunction(prims: list[tuple[str, object]]) -> Callable[[Molecule, int], bool]:
    # Flat checks on the atom arrays; the common case for template atoms.
    fixed: dict[str, object] = {}
    for kind, val in prims:
        if kind == "any":
            continue
        if kind in fixed and fixed[kind] != val:
            return lambda m, i: False
        fixed[kind] = val
    el = fixed.get("element")
    ar = fixed.get("aromatic")
    hc = fixed.get("hcount")
    ch = fixed.get("charge")
    dg = fixed.get("degree")
    ring = fixed.get("ring")

    def pred(m: Molecule, i: int) -> bool:
        if el is not None and m.elements[i] != el:
            return False
        if ar is not None and m.aromatic[i] != ar:
            return False
        if hc is not None and m.hcounts[i] != hc:
            return False
        if ch is not None and m.charges[i] != ch:
            return False
        if dg is not None and len(m.adjacency[i]) != dg:
            return False
        if ring is not None and (i in m.ring_atoms) != ring:
            return False
        return True

    return pred


@dataclass(frozen=True)
class PatternAtom:
    expr: tuple
    map_number: int | None = None
    pred: Callable[[Molecule, int], bool] = field(compare=False, repr=False, default=None)

    def primitives(self) -> dict[str, object]:
        """Flatten a pure conjunction into ``{kind: value}``; raise if not one."""
        out: dict[str, object] = {}

        def walk(e):
            if e[0] == "prim":
                kind, val = e[1], e[2]
                if kind == "element":
                    out["element"] = val
                elif kind != "any":
                    out[kind] = val
            elif e[0] == "and":
                for sub in e[1]:
                    walk(sub)
            else:
                raise SmartsError("product atoms must be plain conjunctions")

        walk(self.expr)
        return out


@dataclass(frozen=True)
class Pattern:
    smarts: str
    atoms: tuple[PatternAtom, ...]
    bonds: tuple[tuple[int, int, int], ...]

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[tuple[int, int]]]:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for i, j, b in self.bonds:
            adj[i].append((j, b))
            adj[j].append((i, b))
        return adj

    def map_numbers(self) -> dict[int, int]:
        return {a.map_number: k for k, a in enumerate(self.atoms) if a.map_number is not None}


class _ExprParser:
    def __init__(self, text: str, offset: int, full: str):
        self.s = text
        self.i = 0
        self.offset = offset
        self.full = full

    def error(self, msg: str):
        raise SmartsError(msg, self.offset + self.i, self.full)

    def peek(self) -> str:
        return self.s[self.i] if self.i < len(self.s) else ""

    def parse(self):
        e = self.semi()
        if self.i != len(self.s):
            self.error(f"unexpected {self.peek()!r}")
        return e

    def semi(self):
        parts = [self.disj()]
        while self.peek() == ";":
            self.i += 1
            parts.append(self.disj())
        return parts[0] if len(parts) == 1 else ("and", parts)

    def disj(self):
        parts = [self.conj()]
        while self.peek() == ",":
            self.i += 1
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else ("or", parts)

    def conj(self):
        parts = [self.neg()]
        while True:
            c = self.peek()
            if c == "&":
                self.i += 1
                parts.append(self.neg())
            elif c and c not in ",;":
                parts.append(self.neg())
            else:
                break
        return parts[0] if len(parts) == 1 else ("and", parts)

    def neg(self):
        if self.peek() == "!":
            self.i += 1
            return ("not", self.neg())
        return self.prim()

    def number(self, default: int | None) -> int:
        j = self.i
        while j < len(self.s) and self.s[j].isdigit():
            j += 1
        if j == self.i:
            if default is None:
                self.error("expected a number")
            return default
        val = int(self.s[self.i:j])
        self.i = j
        return val

    def prim(self):
        s, i = self.s, self.i
        if i >= len(s):
            self.error("unexpected end of atom expression")
        c = s[i]
        two = s[i:i + 2]
        if two in _TWO_LETTER:
            self.i += 2
            return ("and", [("prim", "element", two), ("prim", "aromatic", False)])
        if two == "se":
            self.i += 2
            return ("and", [("prim", "element", "Se"), ("prim", "aromatic", True)])
        self.i += 1
        if c == "*":
            return ("prim", "any", None)
        if c == "#":
            num = self.number(None)
            if num not in _ELEMENT_BY_NUMBER:
                self.error(f"unsupported atomic number {num}")
            return ("prim", "element", _ELEMENT_BY_NUMBER[num])
        if c in "CNOPSFIB":
            return ("and", [("prim", "element", c), ("prim", "aromatic", False)])
        if c in "cnops" or c == "b":
            return ("and", [("prim", "element", c.upper()), ("prim", "aromatic", True)])
        if c == "a":
            return ("prim", "aromatic", True)
        if c == "A":
            return ("prim", "aromatic", False)
        if c == "H":
            return ("prim", "hcount", self.number(1))
        if c == "D":
            return ("prim", "degree", self.number(1))
        if c == "R":
            num = self.number(-1)
            if num not in (-1, 0):
                self.error("only R and R0 are supported")
            return ("prim", "ring", num == -1)
        if c in "+-":
            sign = 1 if c == "+" else -1
            if self.peek().isdigit():
                return ("prim", "charge", sign * self.number(None))
            mag = 1
            while self.peek() == c:
                self.i += 1
                mag += 1
            return ("prim", "charge", sign * mag)
        self.i -= 1
        self.error(f"unsupported SMARTS primitive {c!r}")


def _bare_atom(text: str, i: int, full: str, offset: int):
    two = text[i:i + 2]
    if two in _TWO_LETTER:
        return ("and", [("prim", "element", two), ("prim", "aromatic", False)]), 2
    c = text[i]
    if c == "*":
        return ("prim", "any", None), 1
    if c in "CNOPSFIB":
        return ("and", [("prim", "element", c), ("prim", "aromatic", False)]), 1
    if c in "cnops" or c == "b":
        return ("and", [("prim", "element", c.upper()), ("prim", "aromatic", True)]), 1
    if c == "a":
        return ("prim", "aromatic", True), 1
    if c == "A":
        return ("prim", "aromatic", False), 1
    raise SmartsError(f"unexpected character {c!r}", offset + i, full)


def parse_smarts(text: str, *, _offset: int = 0, _full: str | None = None) -> Pattern:
    """Parse a single-component SMARTS pattern."""
    full = text if _full is None else _full
    s = text
    if not s:
        raise SmartsError("empty pattern", _offset, full)
    atoms: list[PatternAtom] = []
    bonds: dict[tuple[int, int], int] = {}
    stack: list[int] = []
    rings: dict[int, tuple[int, int | None]] = {}
    prev: int | None = None
    pending: int | None = None
    maps: set[int] = set()

    def add_bond(a: int, b: int, order: int | None, pos: int):
        if a == b:
            raise SmartsError("ring closure onto the same atom", _offset + pos, full)
        k = (min(a, b), max(a, b))
        if k in bonds:
            raise SmartsError("duplicate bond", _offset + pos, full)
        bonds[k] = DEFAULT_BOND if order is None else order

    def add_atom(expr, map_number, pos):
        nonlocal prev, pending
        if map_number is not None:
            if map_number in maps:
                raise SmartsError(f"duplicate atom map {map_number}", _offset + pos, full)
            maps.add(map_number)
        idx = len(atoms)
        atoms.append(PatternAtom(expr, map_number, _compile(expr)))
        if prev is not None:
            add_bond(prev, idx, pending, pos)
        elif idx:
            raise SmartsError("disconnected pattern atom", _offset + pos, full)
        pending = None
        prev = idx

    i = 0
    while i < len(s):
        c = s[i]
        if c == "(":
            if prev is None or pending is not None:
                raise SmartsError("misplaced branch", _offset + i, full)
            stack.append(prev)
            i += 1
        elif c == ")":
            if not stack or pending is not None:
                raise SmartsError("unbalanced ')'", _offset + i, full)
            prev = stack.pop()
            i += 1
        elif c in _BOND_CHARS:
            if prev is None or pending is not None:
                raise SmartsError("misplaced bond", _offset + i, full)
            pending = _BOND_CHARS[c]
            i += 1
        elif c.isdigit() or c == "%":
            if prev is None:
                raise SmartsError("ring closure before any atom", _offset + i, full)
            if c == "%":
                num = int(s[i + 1:i + 3])
                width = 3
            else:
                num, width = int(c), 1
            if num in rings:
                other, order = rings.pop(num)
                add_bond(other, prev, pending if pending is not None else order, i)
            else:
                rings[num] = (prev, pending)
            pending = None
            i += width
        elif c == "[":
            end = s.find("]", i)
            if end < 0:
                raise SmartsError("unclosed bracket", _offset + i, full)
            body = s[i + 1:end]
            map_number = None
            colon = body.rfind(":")
            if colon >= 0:
                tail = body[colon + 1:]
                if not tail.isdigit():
                    raise SmartsError("malformed atom map", _offset + i + 1 + colon, full)
                map_number = int(tail)
                body = body[:colon]
            if not body:
                raise SmartsError("empty bracket atom", _offset + i, full)
            expr = _ExprParser(body, _offset + i + 1, full).parse()
            add_atom(expr, map_number, i)
            i = end + 1
        elif c == ".":
            raise SmartsError("'.' is only allowed between reactant patterns", _offset + i, full)
        else:
            expr, width = _bare_atom(s, i, full, _offset)
            add_atom(expr, None, i)
            i += width
    if stack:
        raise SmartsError("unclosed branch", _offset + len(s), full)
    if rings:
        raise SmartsError("unclosed ring bond", _offset + len(s), full)
    if pending is not None:
        raise SmartsError("dangling bond", _offset + len(s), full)
    bond_list = tuple(sorted((a, b, o) for (a, b), o in bonds.items()))
    return Pattern(text, tuple(atoms), bond_list)


def bond_matches(constraint: int, order: int) -> bool:
    if constraint == ANY_BOND:
        return True
    if constraint == DEFAULT_BOND:
        return order == SINGLE or order == AROMATIC
    return constraint == order


def _root_score(atom: PatternAtom) -> int:
    # Prefer rare, specific atoms as the search root.
    try:
        prims = atom.primitives()
    except SmartsError:
        return 0
    el = prims.get("element")
    return (2 if el not in (None, "C") else 1 if el == "C" else 0) + len(prims)


def _search_plan(pattern: Pattern):
    """BFS placement order with, per step, the anchor and back-bond constraints."""
    cached = pattern.__dict__.get("_plan")
    if cached is not None:
        return cached
    adj = pattern.neighbors()
    order: list[tuple[int, int | None]] = []
    placed: set[int] = set()
    roots = sorted(range(pattern.n_atoms), key=lambda a: -_root_score(pattern.atoms[a]))
    for root in roots:
        if root in placed:
            continue
        order.append((root, None))
        placed.add(root)
        q = [root]
        while q:
            a = q.pop(0)
            for b, _ in adj[a]:
                if b not in placed:
                    placed.add(b)
                    order.append((b, a))
                    q.append(b)
    position = {a: k for k, (a, _) in enumerate(order)}
    back = [[(b, c) for b, c in adj[a] if position[b] < position[a]] for a, _ in order]
    preds = [pattern.atoms[a].pred for a, _ in order]
    required: dict[str, int] = {}
    for atom in pattern.atoms:
        try:
            el = atom.primitives().get("element")
        except SmartsError:
            el = None
        if el is not None:
            required[el] = required.get(el, 0) + 1
    plan = (order, back, preds, tuple(required.items()))
    object.__setattr__(pattern, "_plan", plan)
    return plan


class _Done(Exception):
    pass


def match_pattern(pattern: Pattern, mol: Molecule, limit: int | None = None) -> list[tuple[int, ...]]:
    """All injective atom mappings of ``pattern`` into ``mol``.

    Each mapping is a tuple whose k-th entry is the molecule atom matched to
    pattern atom k. Results are sorted. ``limit`` stops the search early.
    """
    n_p = pattern.n_atoms
    n_m = mol.n_atoms
    if n_p > n_m:
        return []
    order, back, preds, required = _search_plan(pattern)
    counts = mol.element_counts
    for el, k in required:
        if counts.get(el, 0) < k:
            return []
    madj = mol.adjacency
    mapping = [-1] * n_p
    used = [False] * n_m
    results: list[tuple[int, ...]] = []

    def extend(k: int) -> None:
        if k == n_p:
            results.append(tuple(mapping))
            if limit is not None and len(results) >= limit:
                raise _Done
            return
        a, anchor = order[k]
        pred = preds[k]
        if anchor is None:
            cands = [(i, None) for i in range(n_m)]
        else:
            cands = madj[mapping[anchor]]
        for i, _ in cands:
            if used[i] or not pred(mol, i):
                continue
            ok = True
            for b, constraint in back[k]:
                o = mol.bond_order(i, mapping[b])
                if o is None or not bond_matches(constraint, o):
                    ok = False
                    break
            if not ok:
                continue
            mapping[a] = i
            used[i] = True
            extend(k + 1)
            used[i] = False
            mapping[a] = -1

    try:
        extend(0)
    except _Done:
        pass
    results.sort()
    return results


def has_match(pattern: Pattern, mol: Molecule) -> bool:
    return bool(match_pattern(pattern, mol, limit=1))
