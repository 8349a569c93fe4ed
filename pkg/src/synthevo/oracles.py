"""Fitness oracles with call accounting, plus run metrics."""

from __future__ import annotations

import re
import threading
from typing import Callable, Mapping, Sequence

import numpy as np

from .chem import (
    CountFingerprint,
    Molecule,
    fingerprint_matrix,
    morgan_count_fp,
    murcko_scaffold,
    parse_smiles,
    tanimoto,
    tanimoto_matrix,
)
from .synthesis import Node


class OracleError(ValueError):
    pass


class Oracle:
    """Opaque scoring function; ``calls`` counts distinct evaluations only.

    Molecule oracles accept a tree or a molecule; route oracles need a tree.
    """

    def __init__(self, name: str, fn: Callable, *, needs_route: bool = False, cache: bool = True):
        self.name = name
        self._fn = fn
        self.needs_route = needs_route
        self._cache: dict[str, float] | None = {} if cache else None
        self._lock = threading.Lock()
        self.calls = 0

    def __call__(self, item: Node | Molecule) -> float:
        if isinstance(item, Node):
            key, mol, tree = item.key, item.mol, item
        elif isinstance(item, Molecule):
            if self.needs_route:
                raise OracleError(f"oracle {self.name!r} scores routes, not bare molecules")
            key, mol, tree = item.key, item, None
        else:
            raise TypeError(f"cannot score {type(item).__name__}")
        if self._cache is not None:
            with self._lock:
                if key in self._cache:
                    return self._cache[key]
        value = float(self._fn(tree if self.needs_route else mol))
        with self._lock:
            if self._cache is None or key not in self._cache:
                self.calls += 1
            if self._cache is not None:
                self._cache[key] = value
        return value

    def __repr__(self) -> str:
        return f"Oracle({self.name!r}, calls={self.calls})"


def _as_mol(x: str | Molecule) -> Molecule:
    return parse_smiles(x) if isinstance(x, str) else x


def scaffold_fp(mol: Molecule, dim: int) -> CountFingerprint | None:
    scaf = murcko_scaffold(mol)
    return None if scaf is None else morgan_count_fp(scaf, 2, dim)


def scaffold_similarity(a: CountFingerprint | None, b: CountFingerprint | None) -> float:
    if a is None and b is None:
        return 1.0
    if a is None or b is None:
        return 0.0
    return tanimoto(a, b)


def analog_fitness(query: str | Molecule, dim: int = 4096) -> Oracle:
    """0.9 x fingerprint similarity + 0.1 x scaffold similarity to ``query``."""
    q = _as_mol(query)
    q_fp = morgan_count_fp(q, 2, dim)
    q_scaf = scaffold_fp(q, dim)

    def fn(mol: Molecule) -> float:
        return 0.9 * tanimoto(morgan_count_fp(mol, 2, dim), q_fp) + \
            0.1 * scaffold_similarity(scaffold_fp(mol, dim), q_scaf)

    return Oracle(f"analog:{q.key}", fn)


def similarity_oracle(target: str | Molecule, dim: int = 2048) -> Oracle:
    t = _as_mol(target)
    t_fp = morgan_count_fp(t, 2, dim)
    return Oracle(f"similarity:{t.key}", lambda mol: tanimoto(morgan_count_fp(mol, 2, dim), t_fp))


_FORMULA_TOKEN = re.compile(r"([A-Z][a-z]?)(\d*)")


def parse_formula(text: str) -> dict[str, int]:
    out: dict[str, int] = {}
    pos = 0
    for m in _FORMULA_TOKEN.finditer(text):
        if m.start() != pos:
            raise OracleError(f"malformed formula {text!r}")
        out[m.group(1)] = out.get(m.group(1), 0) + (int(m.group(2)) if m.group(2) else 1)
        pos = m.end()
    if pos != len(text) or not out:
        raise OracleError(f"malformed formula {text!r}")
    return out


def formula_score(formula: Mapping[str, int], target: Mapping[str, int]) -> float:
    norm = sum(target.values())
    if norm <= 0:
        raise OracleError("target formula is empty")
    dist = sum(abs(formula.get(e, 0) - target.get(e, 0)) for e in set(formula) | set(target))
    return float(min(1.0, max(0.0, 1.0 - dist / norm)))


def formula_oracle(target: str | Mapping[str, int]) -> Oracle:
    """1 minus the L1 element-count distance over the target's atom count."""
    tgt = parse_formula(target) if isinstance(target, str) else dict(target)
    name = "".join(f"{e}{n}" for e, n in sorted(tgt.items()))
    return Oracle(f"formula:{name}", lambda mol: formula_score(mol.formula(), tgt))


def block_weights(n_blocks: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(n_blocks)


def additive_block_oracle(weights: Sequence[float] | int, seed: int = 0) -> Oracle:
    """Mean of per-block scalars over the route's leaves.

    ``weights`` is either the scalar array or a catalog size, in which case
    scalars are drawn uniformly from [0, 1) with ``seed``.
    """
    w = block_weights(weights, seed) if isinstance(weights, (int, np.integer)) else np.asarray(weights, float)

    def fn(tree: Node) -> float:
        return float(np.mean(w[tree.leaves()]))

    oracle = Oracle(f"additive:{seed}", fn, needs_route=True)
    oracle.weights = w
    return oracle


def make_oracle(params: Mapping, n_blocks: int | None = None) -> Oracle:
    """Build an oracle from ``{"name": ..., params}``."""
    kind = params.get("name")
    if kind == "analog":
        return analog_fitness(params["query"], int(params.get("dim", 4096)))
    if kind == "similarity":
        return similarity_oracle(params["target"], int(params.get("dim", 2048)))
    if kind == "formula":
        return formula_oracle(params["target"])
    if kind == "additive":
        if n_blocks is None:
            raise OracleError("additive oracle needs the catalog size")
        return additive_block_oracle(n_blocks, int(params.get("seed", 0)))
    raise OracleError(f"unknown oracle {kind!r}")


# -- metrics ------------------------------------------------------------------------------

def running_top_k_mean(scores: Sequence[float], k: int) -> np.ndarray:
    """``out[t-1]`` is the mean of the best ``min(k, t)`` among the first ``t`` scores."""
    out = np.empty(len(scores))
    top: list[float] = []
    for t, s in enumerate(scores):
        top.append(float(s))
        top.sort(reverse=True)
        del top[k:]
        # offsets from the smallest kept value keep equal scores exact
        low = top[-1]
        out[t] = low + sum(x - low for x in top) / len(top)
    return out


def top_k_auc(scores: Sequence[float], k: int = 10, interval: int = 100, budget: int | None = None) -> float:
    """Budget-normalized trapezoid area under the running top-k mean.

    The curve is sampled at ``interval, 2*interval, ...`` and at the budget;
    it is held constant on ``[0, interval]`` and past the last call.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    if n == 0:
        raise ValueError("empty history")
    B = n if budget is None else int(budget)
    if B < n:
        raise ValueError("history is longer than the budget")
    curve = running_top_k_mean(scores, k)

    def f(t: int) -> float:
        return float(curve[min(t, n) - 1])

    grid = list(range(interval, B + 1, interval))
    if not grid or grid[-1] != B:
        grid.append(B)
    # integrate the offset from the first sample so a flat curve is exact
    base = f(grid[0])
    area = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        area += (b - a) * ((f(a) - base) + (f(b) - base)) / 2.0
    return base + area / B


def greedy_cluster(fps: Sequence[CountFingerprint], cutoff: float) -> tuple[list[int], list[int]]:
    """Scan in order; join the first cluster whose founder is similar enough.

    Returns per-item cluster ids and the founder index of every cluster.
    """
    founders: list[int] = []
    assign: list[int] = []
    for i, fp in enumerate(fps):
        for c, f in enumerate(founders):
            if tanimoto(fp, fps[f]) >= cutoff:
                assign.append(c)
                break
        else:
            assign.append(len(founders))
            founders.append(i)
    return assign, founders


def diversity(fps: Sequence[CountFingerprint]) -> float:
    """Mean pairwise ``1 - tanimoto``; 0 for fewer than two items."""
    if len(fps) < 2:
        return 0.0
    X = fingerprint_matrix(fps, dtype=np.float64)
    sim = tanimoto_matrix(X, X)
    iu = np.triu_indices(len(fps), k=1)
    return float(np.mean(1.0 - sim[iu]))
