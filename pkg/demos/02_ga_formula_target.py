"""Evolve routes toward a molecular formula.

The formula oracle scores a product by how close its atom counts are to a
target.  We pick the formula of a random three-step product, hide the product
itself, and let SynGA search for anything with that formula.  The printout
follows the running top-10 curve and ends with the best routes found.
"""

import numpy as np

from synthevo.catalog import CompatibilityIndex
from synthevo.genetic import GaConfig, run_synga
from synthevo.oracles import formula_oracle, running_top_k_mean, top_k_auc
from synthevo.synthesis import Context, sample_route, to_sexpr

index = CompatibilityIndex.build()
ctx = Context(index)

rng = np.random.default_rng(3)


def formula_text(counts: dict) -> str:
    return "".join(el + (str(n) if n > 1 else "") for el, n in sorted(counts.items()))


hidden = next(t for t in (sample_route(rng, ctx) for _ in range(500)) if t.n_internal >= 3)
target = formula_text(hidden.mol.formula())
print(f"target formula {target} (hidden product {hidden.key})")

oracle = formula_oracle(target)
budget = 1000
_, history = run_synga(GaConfig(population_size=100, offspring_size=10, budget=budget, seed=0), oracle, ctx)

curve = running_top_k_mean(history.scores(), 10)
for t in (100, 250, 500, 750, 1000):
    print(f"  after {t:5d} calls  top-10 mean {curve[t - 1]:.3f}")
print(f"top-10 AUC {top_k_auc(history.scores(), 10, 100, budget):.3f} over {oracle.calls} oracle calls\n")

for e in history.top(3):
    print(f"{e.fitness:.3f}  {formula_text(e.tree.mol.formula()):14s} {e.tree.key}")
    print(f"       {to_sexpr(e.tree)}")
