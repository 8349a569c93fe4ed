"""Synthesis trees: validation, random routes, subtrees and local edits.

A tree is a :class:`Node`. Leaves hold a catalog block id; internal nodes
hold a template name, the chosen product and one or two unordered children.
All operations return new trees and never mutate their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from .catalog import CompatibilityIndex
from .chem import Molecule, molecular_weight, parse_smiles

MAX_STEPS = 5
MAX_WEIGHT = 1000.0
RETRIES = 10
RERUN_CAP = 64


@dataclass(frozen=True, eq=False)
class Node:
    mol: Molecule
    block: int | None = None
    template: str | None = None
    children: tuple["Node", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.block is not None

    @property
    def key(self) -> str:
        return self.mol.key

    @cached_property
    def n_internal(self) -> int:
        return 0 if self.is_leaf else 1 + sum(c.n_internal for c in self.children)

    @cached_property
    def n_nodes(self) -> int:
        return 1 + sum(c.n_nodes for c in self.children)

    @cached_property
    def weight(self) -> float:
        return molecular_weight(self.mol)

    def leaves(self) -> list[int]:
        if self.is_leaf:
            return [self.block]
        return [b for c in self.children for b in c.leaves()]

    def templates(self) -> list[str]:
        if self.is_leaf:
            return []
        return [self.template] + [t for c in self.children for t in c.templates()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Node):
            return NotImplemented
        return to_sexpr(self) == to_sexpr(other)

    def __hash__(self) -> int:
        return hash(to_sexpr(self))

    def __repr__(self) -> str:
        return f"Node({to_sexpr(self)})"


SynthesisTree = Node


def leaf(index: CompatibilityIndex, bid: int) -> Node:
    return Node(index.blocks[bid].mol, block=bid)


def internal(template: str, product: Molecule, children: Sequence[Node]) -> Node:
    return Node(product, template=template, children=tuple(children))


class BlockSampler(Protocol):
    def sample(self, space: Sequence[int], rng: np.random.Generator) -> int: ...


class UniformSampler:
    def sample(self, space: Sequence[int], rng: np.random.Generator) -> int:
        return int(space[rng.integers(len(space))])


@dataclass
class Context:
    """Everything the tree operators need besides the random generator."""

    index: CompatibilityIndex
    max_steps: int = MAX_STEPS
    max_weight: float = MAX_WEIGHT
    retries: int = RETRIES
    rerun_cap: int = RERUN_CAP
    sampler: BlockSampler = field(default_factory=UniformSampler)

    def sample_block(self, space: Sequence[int], rng: np.random.Generator) -> int:
        return self.sampler.sample(space, rng)

    def light(self, mols: Sequence[Molecule]) -> list[Molecule]:
        return [m for m in mols if molecular_weight(m) <= self.max_weight]

    @cached_property
    def all_blocks(self) -> tuple[int, ...]:
        return tuple(range(len(self.index.blocks)))


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path: tuple[int, ...]
    reason: str

    def __str__(self) -> str:
        return f"node {list(self.path)}: {self.reason}"


def validate_tree(tree: Node, ctx: Context) -> Violation | None:
    """Replay every reaction; return the first violation or ``None`` when valid."""
    if tree.n_internal > ctx.max_steps:
        return Violation((), f"{tree.n_internal} reactions exceed the cap of {ctx.max_steps}")
    return _validate(tree, ctx, ())


def _validate(node: Node, ctx: Context, path: tuple[int, ...]) -> Violation | None:
    if node.weight > ctx.max_weight:
        return Violation(path, f"weight {node.weight:.1f} Da exceeds {ctx.max_weight}")
    index = ctx.index
    if node.is_leaf:
        if node.children or node.template is not None:
            return Violation(path, "leaf with reaction data")
        if not 0 <= node.block < len(index.blocks):
            return Violation(path, f"block {node.block} not in catalog")
        if index.blocks[node.block].key != node.key:
            return Violation(path, f"leaf molecule {node.key} is not block {node.block}")
        return None
    t = index.by_name.get(node.template)
    if t is None:
        return Violation(path, f"unknown template {node.template!r}")
    if len(node.children) != t.arity:
        return Violation(path, f"{t.name} takes {t.arity} reactants, node has {len(node.children)}")
    for k, child in enumerate(node.children):
        bad = _validate(child, ctx, path + (k,))
        if bad is not None:
            return bad
    products = index.react(t, [c.mol for c in node.children])
    if node.key not in {p.key for p in products}:
        return Violation(path, f"{node.key} is not a product of {t.name}")
    return None


def is_valid(tree: Node, ctx: Context) -> bool:
    return validate_tree(tree, ctx) is None


# -- traversal -------------------------------------------------------------------

def enumerate_subtrees(tree: Node) -> list[Node]:
    """Every node as the root of its descendants, in preorder."""
    out = [tree]
    for c in tree.children:
        out += enumerate_subtrees(c)
    return out


def _paths(tree: Node, prefix: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], Node]]:
    yield prefix, tree
    for k, c in enumerate(tree.children):
        yield from _paths(c, prefix + (k,))


def node_at(tree: Node, path: Sequence[int]) -> Node:
    for k in path:
        tree = tree.children[k]
    return tree


def _reassign_upward(tree: Node, path: tuple[int, ...], new: Node, rng, ctx: Context) -> Node | None:
    """Put ``new`` at ``path`` and redraw each ancestor's product uniformly."""
    if not path:
        return new
    parent = node_at(tree, path[:-1])
    kids = list(parent.children)
    kids[path[-1]] = new
    t = ctx.index.template(parent.template)
    products = ctx.light(ctx.index.react(t, [k.mol for k in kids]))
    if not products:
        return None
    prod = products[rng.integers(len(products))]
    return _reassign_upward(tree, path[:-1], internal(parent.template, prod, kids), rng, ctx)


# -- Grow and route sampling ---------------------------------------------------------

def grow(tree: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    """One attempt: apply a compatible template with a sampled partner block."""
    if tree.n_internal + 1 > ctx.max_steps:
        return None
    options = ctx.index.compatible_templates(tree.mol)
    if not options:
        return None
    t, slot = options[rng.integers(len(options))]
    if t.arity == 1:
        kids = [tree]
    else:
        space = ctx.index.slot_members(t.name, 1 - slot)
        if not space:
            return None
        kids = [tree, leaf(ctx.index, ctx.sample_block(space, rng))]
    products = ctx.light(ctx.index.react(t, [k.mol for k in kids]))
    if not products:
        return None
    return internal(t.name, products[rng.integers(len(products))], kids)


def sample_route(rng: np.random.Generator, ctx: Context, max_steps: int | None = None) -> Node:
    """Grow from a sampled block for ``Uniform{1..max_steps}`` steps."""
    max_steps = ctx.max_steps if max_steps is None else min(max_steps, ctx.max_steps)
    tree = leaf(ctx.index, ctx.sample_block(ctx.all_blocks, rng))
    steps = int(rng.integers(1, max_steps + 1))
    for _ in range(steps):
        for _ in range(ctx.retries):
            grown = grow(tree, rng, ctx)
            if grown is not None:
                tree = grown
                break
        else:
            return tree
    return tree


# -- mutations -----------------------------------------------------------------------

def shrink(tree: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    if tree.is_leaf:
        return None
    return tree.children[rng.integers(len(tree.children))]


def _alternates(node: Node, ctx: Context, tables: dict[int, dict]) -> dict[str, tuple[Molecule, tuple[str, ...]]]:
    """Reachable products of ``node`` with fixed blocks and templates.

    Maps product key to (molecule, child product keys producing it); each
    node keeps at most ``ctx.rerun_cap`` entries.
    """
    if node.is_leaf:
        return {node.key: (node.mol, ())}
    t = ctx.index.template(node.template)
    child_sets = [tables[id(c)] for c in node.children]
    out: dict[str, tuple[Molecule, tuple[str, ...]]] = {}
    # current assignment first so the existing tree is always reachable
    current = tuple(c.key for c in node.children)
    combos = [current] + [c for c in _product_keys(child_sets) if c != current]
    for combo in combos:
        mols = [child_sets[k][key][0] for k, key in enumerate(combo)]
        for p in ctx.light(ctx.index.react(t, mols)):
            if p.key not in out:
                out[p.key] = (p, combo)
                if len(out) >= ctx.rerun_cap:
                    return out
    return out


def _product_keys(child_sets) -> Iterator[tuple[str, ...]]:
    if len(child_sets) == 1:
        for k in child_sets[0]:
            yield (k,)
    else:
        for a in child_sets[0]:
            for b in child_sets[1]:
                yield (a, b)


def _rebuild(node: Node, key: str, ctx: Context, tables: dict[int, dict]) -> Node:
    if node.is_leaf:
        return node
    mol, combo = tables[id(node)][key]
    kids = [_rebuild(c, ck, ctx, tables) for c, ck in zip(node.children, combo)]
    return internal(node.template, mol, kids)


def rerun(tree: Node, rng: np.random.Generator, ctx: Context) -> Node:
    """Reassign intermediates so the root product changes; unchanged if impossible.

    Root alternates are streamed and one is kept by reservoir sampling, so
    each distinct alternate is equally likely.
    """
    if tree.is_leaf:
        return tree
    tables: dict[int, dict] = {}

    def fill(node: Node) -> None:
        for c in node.children:
            fill(c)
        tables[id(node)] = _alternates(node, ctx, tables)

    fill(tree)
    chosen = None
    seen = 0
    for key in tables[id(tree)]:
        if key == tree.key:
            continue
        seen += 1
        if rng.integers(seen) == 0:
            chosen = key
    if chosen is None:
        return tree
    return _rebuild(tree, chosen, ctx, tables)


def rerun_mutation(tree: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    out = rerun(tree, rng, ctx)
    return None if out.key == tree.key else out


def change_internal(tree: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    """Swap one reaction for another template accepting the same children."""
    nodes = [(p, n) for p, n in _paths(tree) if not n.is_leaf]
    if not nodes:
        return None
    path, node = nodes[rng.integers(len(nodes))]
    kids = node.children
    candidates = []
    for t in ctx.index.templates:
        if t.name == node.template or t.arity != len(kids):
            continue
        slots = [{s for tt, s in ctx.index.compatible_templates(k.mol) if tt.name == t.name} for k in kids]
        if t.arity == 1:
            ok = 0 in slots[0]
        else:
            ok = (0 in slots[0] and 1 in slots[1]) or (1 in slots[0] and 0 in slots[1])
        if ok:
            candidates.append(t)
    if not candidates:
        return None
    t = candidates[rng.integers(len(candidates))]
    products = ctx.light(ctx.index.react(t, [k.mol for k in kids]))
    if not products:
        return None
    new = internal(t.name, products[rng.integers(len(products))], kids)
    return _reassign_upward(tree, path, new, rng, ctx)


def change_leaf(tree: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    """Replace one block by another that fits its parent reaction and sibling."""
    leaves = [(p, n) for p, n in _paths(tree) if n.is_leaf]
    path, node = leaves[rng.integers(len(leaves))]
    index = ctx.index
    if not path:
        space = [b for b in ctx.all_blocks if b != node.block]
        if not space:
            return None
        return leaf(index, ctx.sample_block(space, rng))
    parent = node_at(tree, path[:-1])
    t = index.template(parent.template)
    if t.arity == 1:
        space = [b for b in index.slot_members(t.name, 0) if b != node.block]
    else:
        sibling = parent.children[1 - path[-1]]
        sib_slots = {s for tt, s in index.compatible_templates(sibling.mol) if tt.name == t.name}
        allowed: set[int] = set()
        for s in sib_slots:
            allowed.update(index.slot_members(t.name, 1 - s))
        allowed.discard(node.block)
        space = sorted(allowed)
    if not space:
        return None
    new_leaf = leaf(index, ctx.sample_block(space, rng))
    return _reassign_upward(tree, path, new_leaf, rng, ctx)


MUTATIONS: dict[str, Callable[[Node, np.random.Generator, Context], Node | None]] = {
    "grow": grow,
    "shrink": shrink,
    "rerun": rerun_mutation,
    "change_internal": change_internal,
    "change_leaf": change_leaf,
}


# -- serialization ---------------------------------------------------------------------

def to_sexpr(tree: Node) -> str:
    """Canonical text form; children are ordered by their own text."""
    if tree.is_leaf:
        return f"(leaf {tree.block} {json.dumps(tree.key)})"
    kids = sorted(to_sexpr(c) for c in tree.children)
    return f"(rxn {tree.template} {json.dumps(tree.key)} {' '.join(kids)})"


def _tokens(text: str) -> Iterator[str]:
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            yield c
            i += 1
        elif c == '"':
            j = i + 1
            while text[j] != '"':
                j += 2 if text[j] == "\\" else 1
            yield text[i:j + 1]
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in '()"':
                j += 1
            yield text[i:j]
            i = j


def from_sexpr(text: str) -> Node:
    toks = list(_tokens(text))
    pos = 0

    def expect(tok: str) -> None:
        nonlocal pos
        if toks[pos] != tok:
            raise ValueError(f"expected {tok!r}, got {toks[pos]!r}")
        pos += 1

    def node() -> Node:
        nonlocal pos
        expect("(")
        kind = toks[pos]
        pos += 1
        if kind == "leaf":
            bid = int(toks[pos])
            key = json.loads(toks[pos + 1])
            pos += 2
            expect(")")
            return Node(parse_smiles(key), block=bid)
        if kind == "rxn":
            name = toks[pos]
            key = json.loads(toks[pos + 1])
            pos += 2
            kids = []
            while toks[pos] == "(":
                kids.append(node())
            expect(")")
            return internal(name, parse_smiles(key), kids)
        raise ValueError(f"unknown node kind {kind!r}")

    out = node()
    if pos != len(toks):
        raise ValueError("trailing tokens after tree")
    return out


def to_json(tree: Node) -> dict:
    if tree.is_leaf:
        return {"block": tree.block, "smiles": tree.key}
    kids = sorted((to_json(c) for c in tree.children), key=lambda d: json.dumps(d, sort_keys=True))
    return {"template": tree.template, "smiles": tree.key, "children": kids}


def from_json(data: dict) -> Node:
    mol = parse_smiles(data["smiles"])
    if "block" in data:
        return Node(mol, block=int(data["block"]))
    return internal(data["template"], mol, [from_json(c) for c in data["children"]])
