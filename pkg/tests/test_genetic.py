import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthevo.genetic import (
    MUTATION_NAMES,
    BudgetExceeded,
    FitnessError,
    GaConfig,
    Population,
    RouteRecord,
    RunHistory,
    crossover,
    evaluate,
    history_records,
    initial_routes,
    inverse_rank_sample,
    inverse_rank_weights,
    molga_sample,
    mutate,
    run_synga,
    sample_mutation,
)
from synthevo.synthesis import Context, is_valid, sample_route


def heavy_atoms(tree):
    return float(tree.mol.n_atoms)


def test_inverse_rank_first_draw_law():
    rng = np.random.default_rng(0)
    n, draws = 20, 40_000
    pop = list(range(n))
    counts = np.bincount([inverse_rank_sample(pop, 1, rng)[0] for _ in range(draws)], minlength=n)
    p = inverse_rank_weights(n) / inverse_rank_weights(n).sum()
    assert 0.5 * np.abs(counts / draws - p).sum() < 0.02


def test_inverse_rank_second_draw_excludes_first():
    rng = np.random.default_rng(1)
    # with two members the pair is always both, in order 0 first w.p. 2/3
    firsts = [inverse_rank_sample(["a", "b"], 2, rng) for _ in range(6000)]
    assert all(sorted(f) == ["a", "b"] for f in firsts)
    assert np.mean([f[0] == "a" for f in firsts]) == pytest.approx(2 / 3, abs=0.02)
    with pytest.raises(ValueError):
        inverse_rank_sample(["a"], 2, rng)


def test_molga_sampler_range():
    rng = np.random.default_rng(0)
    draws = [molga_sample(50, rng) for _ in range(5000)]
    assert min(draws) == 0 and max(draws) < 50
    assert molga_sample(1, rng) == 0


def test_mutation_dispatch_frequencies():
    rng = np.random.default_rng(0)
    names = [sample_mutation(rng, (1, 1, 2, 2, 2)) for _ in range(40_000)]
    freq = np.array([names.count(n) for n in MUTATION_NAMES]) / len(names)
    np.testing.assert_allclose(freq, [0.125, 0.125, 0.25, 0.25, 0.25], atol=0.01)
    assert sample_mutation(rng, (0, 0, 0, 0, 1)) == "change_leaf"


def test_population_sorting_and_truncation():
    pop = Population()
    for i, f in enumerate([0.1, 0.5, 0.5, 0.9]):
        pop.add(RouteRecord(_fake(i), f, i))
    pop.merge_and_truncate([], 3)
    assert [r.fitness for r in pop] == [0.9, 0.5, 0.5]
    assert [r.order for r in pop][1:] == [1, 2]
    assert _fake(0).key not in pop
    with pytest.raises(ValueError):
        pop.add(RouteRecord(_fake(1), 0.0, 9))


def _fake(i):
    from synthevo.chem import parse_smiles
    from synthevo.synthesis import Node
    return Node(parse_smiles("C" * (i + 1)), block=i)


def test_history_budget_and_order():
    h = RunHistory(2)
    h.add("C", 1.0)
    with pytest.raises(ValueError):
        h.add("C", 2.0)
    h.add("CC", 3.0)
    assert h.full and [e.call for e in h.entries()] == [0, 1]
    with pytest.raises(BudgetExceeded):
        h.add("CCC", 0.0)
    assert [e.key for e in h.top(1)] == ["CC"]


def test_config_validation():
    with pytest.raises(ValueError):
        GaConfig(crossover_rate=1.5)
    with pytest.raises(ValueError):
        GaConfig(budget=10, population_size=20)
    with pytest.raises(ValueError):
        GaConfig.from_dict({"populaton_size": 3})
    cfg = GaConfig(population_size=5, budget=20)
    assert GaConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_crossover_and_mutation_give_valid_routes(index, seed):
    ctx = Context(index)
    rng = np.random.default_rng(seed)
    a, b = sample_route(rng, ctx), sample_route(rng, ctx)
    child = crossover(a, b, rng, ctx)
    if child is not None:
        assert is_valid(child, ctx)
        assert child.n_internal <= ctx.max_steps
    m = mutate(a, rng, ctx)
    if m is not None:
        assert is_valid(m, ctx)


def test_initial_routes_are_distinct(ctx, rng):
    routes = initial_routes(40, rng, ctx)
    assert len({t.key for t in routes}) == 40
    more = initial_routes(10, rng, ctx, exclude=[t.key for t in routes])
    assert not {t.key for t in more} & {t.key for t in routes}


def test_run_spends_exact_budget(ctx):
    calls = []

    def fitness(tree):
        calls.append(tree.key)
        return heavy_atoms(tree)

    cfg = GaConfig(population_size=20, offspring_size=5, budget=120, seed=3)
    pop, hist = run_synga(cfg, fitness, ctx)
    assert len(hist) == 120 == len(calls) == len(set(calls))
    assert len(pop) == 20
    # the population is the best of everything seen
    best = sorted(hist.scores(), reverse=True)[:20]
    assert [r.fitness for r in pop] == best
    assert all(is_valid(r.tree, ctx) for r in pop)


def test_run_is_deterministic(ctx):
    cfg = GaConfig(population_size=15, offspring_size=5, budget=80, seed=11)
    h1 = history_records(run_synga(cfg, heavy_atoms, ctx)[1])
    h2 = history_records(run_synga(cfg, heavy_atoms, ctx)[1])
    assert h1 == h2


def test_threads_do_not_change_results(ctx):
    cfg = GaConfig(population_size=15, offspring_size=5, budget=60, seed=2)
    h1 = history_records(run_synga(cfg, heavy_atoms, ctx)[1])
    h4 = history_records(run_synga(cfg, heavy_atoms, ctx, workers=4)[1])
    assert h1 == h4


def test_ga_beats_random_sampling(ctx):
    cfg = GaConfig(population_size=30, offspring_size=10, budget=300, seed=0)
    _, hist = run_synga(cfg, heavy_atoms, ctx)
    rng = np.random.default_rng(0)
    rand = [heavy_atoms(t) for t in initial_routes(300, rng, ctx)]
    assert np.sort(hist.scores())[-10:].mean() > np.sort(rand)[-10:].mean()


def test_fitness_errors_name_the_route(ctx, rng):
    t = sample_route(rng, ctx)

    def broken(tree):
        raise RuntimeError("boom")

    with pytest.raises(FitnessError) as info:
        evaluate(broken, [t])
    assert info.value.key == t.key
