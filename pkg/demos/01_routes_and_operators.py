"""A tour of synthesis routes on the bundled toy catalog.

Samples a few random routes, prints them as s-expressions, then applies each
mutation and a crossover to show that every operator lands on another valid
route.  Run with ``python demos/01_routes_and_operators.py``.
"""

import numpy as np

from synthevo.catalog import CompatibilityIndex
from synthevo.genetic import crossover
from synthevo.synthesis import MUTATIONS, Context, sample_route, to_sexpr, validate_tree

index = CompatibilityIndex.build()
ctx = Context(index)
rng = np.random.default_rng(7)
print(f"catalog: {len(index.blocks)} blocks, {len(index.templates)} templates\n")

routes = [sample_route(rng, ctx) for _ in range(4)]
for i, r in enumerate(routes):
    print(f"route {i}: {r.n_internal} reaction(s) -> {r.key}")
    print(f"  {to_sexpr(r)}")

# Pick the deepest route and perturb it with every operator.
parent = max(routes, key=lambda r: r.n_internal)
print(f"\nparent: {parent.key}")
for name, op in MUTATIONS.items():
    # operators may fail on an unlucky draw; retry a few times like the GA does
    child = next((c for c in (op(parent, rng, ctx) for _ in range(ctx.retries)) if c is not None), None)
    if child is None:
        print(f"  {name:16s} no applicable move")
    else:
        assert validate_tree(child, ctx) is None
        print(f"  {name:16s} {child.key}  ({child.n_internal} steps)")

for _ in range(20):
    child = crossover(routes[0], routes[1], rng, ctx)
    if child is not None:
        assert validate_tree(child, ctx) is None
        print(f"  {'crossover':16s} {child.key}  ({child.n_internal} steps)")
        break
else:
    print("  crossover        the first two routes share no joinable subtrees")
