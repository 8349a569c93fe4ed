"""Genetic operators on synthesis trees and the elitist steady-budget GA."""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .synthesis import (
    MUTATIONS,
    Context,
    Node,
    enumerate_subtrees,
    internal,
    sample_route,
    to_sexpr,
)

log = logging.getLogger(__name__)

MUTATION_NAMES = ("grow", "shrink", "rerun", "change_internal", "change_leaf")


@dataclass
class GaConfig:
    population_size: int = 500
    initial_size: int | None = None
    offspring_size: int = 5
    crossover_rate: float = 0.8
    mutation_rate: float = 0.5
    budget: int = 10_000
    mutation_weights: tuple[float, ...] = (1.0, 1.0, 2.0, 2.0, 2.0)
    retries: int = 10
    seed: int = 0
    max_generations: int | None = None
    stall_generations: int = 2000

    def __post_init__(self):
        self.mutation_weights = tuple(float(w) for w in self.mutation_weights)
        self.validate()

    @property
    def n0(self) -> int:
        return self.population_size if self.initial_size is None else self.initial_size

    def validate(self) -> None:
        for name in ("crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("population_size", "offspring_size", "budget", "retries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.n0 < 1:
            raise ValueError("initial_size must be at least 1")
        if self.budget < self.n0:
            raise ValueError(f"budget {self.budget} is below the initial size {self.n0}")
        w = self.mutation_weights
        if len(w) != len(MUTATION_NAMES) or min(w) < 0 or sum(w) <= 0:
            raise ValueError("mutation_weights needs 5 nonnegative entries with a positive sum")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GaConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GA settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["mutation_weights"] = list(self.mutation_weights)
        return d


@dataclass
class RouteRecord:
    tree: Node
    fitness: float
    order: int = 0

    @property
    def key(self) -> str:
        return self.tree.key


class Population:
    """Records sorted by descending fitness; ties keep discovery order."""

    def __init__(self, records: Iterable[RouteRecord] = ()):
        self.records: list[RouteRecord] = []
        self._keys: set[str] = set()
        for r in records:
            self.add(r)
        self._sort()

    def _sort(self) -> None:
        self.records.sort(key=lambda r: (-r.fitness, r.order))

    def add(self, record: RouteRecord) -> None:
        if record.key in self._keys:
            raise ValueError(f"duplicate product {record.key}")
        self._keys.add(record.key)
        self.records.append(record)

    def merge_and_truncate(self, offspring: Iterable[RouteRecord], n: int) -> None:
        for r in offspring:
            self.add(r)
        self._sort()
        for r in self.records[n:]:
            self._keys.discard(r.key)
        del self.records[n:]

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> RouteRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, key: str) -> bool:
        return key in self._keys

    @property
    def best(self) -> RouteRecord:
        return self.records[0]


@dataclass
class HistoryEntry:
    key: str
    fitness: float
    call: int
    tree: Node | None = None


class BudgetExceeded(RuntimeError):
    pass


class RunHistory:
    """Insertion-ordered unique evaluations with a hard budget."""

    def __init__(self, budget: int):
        self.budget = budget
        self._entries: dict[str, HistoryEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __getitem__(self, key: str) -> HistoryEntry:
        return self._entries[key]

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.budget

    def add(self, key: str, fitness: float, tree: Node | None = None) -> HistoryEntry:
        if key in self._entries:
            raise ValueError(f"{key} already evaluated")
        if self.full:
            raise BudgetExceeded(f"budget of {self.budget} evaluations exhausted")
        e = HistoryEntry(key, float(fitness), len(self._entries), tree)
        self._entries[key] = e
        return e

    def keys(self):
        return self._entries.keys()

    def entries(self) -> list[HistoryEntry]:
        return list(self._entries.values())

    def scores(self) -> np.ndarray:
        return np.array([e.fitness for e in self._entries.values()], dtype=float)

    def top(self, k: int) -> list[HistoryEntry]:
        ranked = sorted(self._entries.values(), key=lambda e: (-e.fitness, e.call))
        return ranked[:k]


class FitnessError(RuntimeError):
    def __init__(self, key: str, cause: BaseException):
        super().__init__(f"fitness evaluation failed for {key}: {cause!r}")
        self.key = key


# -- parent selection ----------------------------------------------------------------

def inverse_rank_weights(n: int) -> np.ndarray:
    return 1.0 / np.arange(1, n + 1)


def inverse_rank_sample(pop: Sequence, k: int, rng: np.random.Generator) -> list:
    """Draw ``k`` distinct members sequentially with weight ``1/rank``."""
    n = len(pop)
    if k > n:
        raise ValueError(f"cannot draw {k} distinct individuals from {n}")
    w = inverse_rank_weights(n)
    out = []
    for _ in range(k):
        cdf = np.cumsum(w)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, n - 1)
        out.append(pop[i])
        w[i] = 0.0
    return out


def molga_sample(n: int, rng: np.random.Generator) -> int:
    """Quantile-based reference sampler: uniform over the top ``10**u`` fraction.

    ``u ~ Uniform[-log10 n, 0]``; returns a 0-based rank.
    """
    u = rng.uniform(-np.log10(n), 0.0)
    top = max(1, int(np.floor(n * 10.0 ** u)))
    return int(rng.integers(top))


# -- operators ------------------------------------------------------------------------

def _pair_options(s1: Node, s2: Node, ctx: Context) -> list[tuple[str, Any]]:
    """All (template, product) joining two subtrees with a binary reaction."""
    slots1 = {(t.name, s) for t, s in ctx.index.compatible_templates(s1.mol) if t.arity == 2}
    if not slots1:
        return []
    slots2 = {(t.name, s) for t, s in ctx.index.compatible_templates(s2.mol) if t.arity == 2}
    names = sorted({n for n, s in slots1 if (n, 1 - s) in slots2})
    out = []
    for name in names:
        t = ctx.index.template(name)
        for p in ctx.light(ctx.index.react(t, (s1.mol, s2.mol))):
            out.append((name, p))
    return out


def crossover(t1: Node, t2: Node, rng: np.random.Generator, ctx: Context) -> Node | None:
    """Join a uniformly chosen eligible subtree pair under a new reaction root."""
    subs1 = enumerate_subtrees(t1)
    subs2 = enumerate_subtrees(t2)
    pairs = [(a, b) for a in range(len(subs1)) for b in range(len(subs2))
             if subs1[a].n_internal + subs2[b].n_internal + 1 <= ctx.max_steps]
    # A uniformly shuffled scan that stops at the first eligible pair is a
    # uniform draw among eligible pairs, without testing every pair.
    for j in rng.permutation(len(pairs)):
        a, b = pairs[j]
        s1, s2 = subs1[a], subs2[b]
        options = _pair_options(s1, s2, ctx)
        if options:
            name, prod = options[rng.integers(len(options))]
            return internal(name, prod, (s1, s2))
    return None


def sample_mutation(rng: np.random.Generator, weights: Sequence[float]) -> str:
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w / w.sum())
    i = int(np.searchsorted(cdf, rng.random(), side="right"))
    return MUTATION_NAMES[min(i, len(w) - 1)]


def mutate(
    tree: Node,
    rng: np.random.Generator,
    ctx: Context,
    weights: Sequence[float] = (1, 1, 2, 2, 2),
    retries: int | None = None,
) -> Node | None:
    """Pick one mutation by weight and retry that same mutation on failure."""
    op = MUTATIONS[sample_mutation(rng, weights)]
    for _ in range(ctx.retries if retries is None else retries):
        out = op(tree, rng, ctx)
        if out is not None:
            return out
    return None


# -- main loop ------------------------------------------------------------------------------

FitnessFn = Callable[[Node], float]


def evaluate(fitness, trees: Sequence[Node], workers: int = 1) -> list[float]:
    """Score trees in order; objects with ``evaluate_many`` are called once."""
    if not trees:
        return []
    batch = getattr(fitness, "evaluate_many", None)
    try:
        if batch is not None:
            return [float(v) for v in batch(list(trees))]
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                return [float(v) for v in pool.map(fitness, trees)]
        out = []
        for t in trees:
            try:
                out.append(float(fitness(t)))
            except Exception as exc:
                raise FitnessError(t.key, exc) from exc
        return out
    except FitnessError:
        raise
    except Exception as exc:
        raise FitnessError(trees[0].key if len(trees) == 1 else "<batch>", exc) from exc


def initial_routes(n: int, rng: np.random.Generator, ctx: Context, exclude: Iterable[str] = (),
                   max_attempts: int | None = None) -> list[Node]:
    """Sample routes until ``n`` distinct products not in ``exclude``."""
    seen = set(exclude)
    out: list[Node] = []
    attempts = 0
    limit = max_attempts if max_attempts is not None else 50 * n + 100
    while len(out) < n and attempts < limit:
        attempts += 1
        t = sample_route(rng, ctx)
        if t.key not in seen:
            seen.add(t.key)
            out.append(t)
    if len(out) < n:
        log.warning("only %d distinct routes after %d attempts", len(out), attempts)
    return out


def make_offspring(pop: Population, cfg: GaConfig, rng: np.random.Generator, ctx: Context) -> list[Node | None]:
    out: list[Node | None] = []
    for _ in range(cfg.offspring_size):
        if len(pop) >= 2:
            p1, p2 = inverse_rank_sample(pop.records, 2, rng)
        else:
            p1 = p2 = pop.records[0]
        if rng.random() < cfg.crossover_rate:
            child = crossover(p1.tree, p2.tree, rng, ctx)
            if child is not None and rng.random() < cfg.mutation_rate:
                child = mutate(child, rng, ctx, cfg.mutation_weights, cfg.retries)
        else:
            child = mutate(p1.tree, rng, ctx, cfg.mutation_weights, cfg.retries)
        out.append(child)
    return out


@dataclass
class GenerationStats:
    generation: int
    evaluations: int
    new: int
    best: float
    mean: float


def run_synga(
    cfg: GaConfig,
    fitness,
    ctx: Context,
    *,
    rng: np.random.Generator | None = None,
    initial: Sequence[Node] | None = None,
    history: RunHistory | None = None,
    workers: int = 1,
    on_generation: Callable[[GenerationStats], None] | None = None,
) -> tuple[Population, RunHistory]:
    """Evolve routes until ``cfg.budget`` unique products have been scored.

    ``initial`` replaces the random initial population (used by the
    surrogate loop); its routes are scored like any others. A supplied
    ``history`` is extended in place and its entries count toward the budget.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    ctx = dataclasses.replace(ctx, retries=cfg.retries)
    history = RunHistory(cfg.budget) if history is None else history
    if initial is None:
        seeds = initial_routes(cfg.n0, rng, ctx, exclude=history.keys())
    else:
        seeds, seen = [], set(history.keys())
        for t in initial:
            if t.key not in seen:
                seen.add(t.key)
                seeds.append(t)
    seeds = seeds[:max(0, cfg.budget - len(history))]
    scores = evaluate(fitness, seeds, workers)
    pop = Population()
    for t, s in zip(seeds, scores):
        e = history.add(t.key, s, t)
        pop.add(RouteRecord(t, s, e.call))
    pop.merge_and_truncate([], cfg.population_size)
    if not len(pop):
        raise RuntimeError("no initial routes could be sampled")

    gen = 0
    stalled = 0
    while not history.full:
        if cfg.max_generations is not None and gen >= cfg.max_generations:
            break
        gen += 1
        children = make_offspring(pop, cfg, rng, ctx)
        fresh: list[Node] = []
        keys: set[str] = set()
        for c in children:
            if c is None or c.key in history or c.key in keys:
                continue
            if len(history) + len(fresh) >= cfg.budget:
                break
            keys.add(c.key)
            fresh.append(c)
        scores = evaluate(fitness, fresh, workers)
        new = []
        for t, s in zip(fresh, scores):
            e = history.add(t.key, s, t)
            new.append(RouteRecord(t, s, e.call))
        pop.merge_and_truncate(new, cfg.population_size)
        stalled = 0 if new else stalled + 1
        if on_generation is not None:
            fit = [r.fitness for r in pop]
            on_generation(GenerationStats(gen, len(history), len(new), fit[0], float(np.mean(fit))))
        if stalled >= cfg.stall_generations:
            log.warning("no new products for %d generations; stopping at %d/%d evaluations",
                        stalled, len(history), cfg.budget)
            break
    return pop, history


# -- output -----------------------------------------------------------------------------------

def history_records(history: RunHistory) -> list[dict]:
    return [
        {"call": e.call, "key": e.key, "fitness": e.fitness,
         "tree": to_sexpr(e.tree) if e.tree is not None else None}
        for e in history.entries()
    ]


def write_history_jsonl(history: RunHistory, path, summary: dict | None = None) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in history_records(history)]
    if summary is not None:
        lines.append(json.dumps({"summary": summary}, sort_keys=True))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

