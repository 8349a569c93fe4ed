"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected into the terminal summary (see conftest.py) so a plain
``pytest tests/test_acceptance.py`` run ends with a readable scorecard.
"""

import dataclasses
import json
import time

import numpy as np
import pytest

import synthevo.genetic as genetic
from synthevo.blockfilter import (
    BlockFilter,
    ClassifierConfig,
    classifier_filter,
    epsilon_sample,
    generate_route_dataset,
    nam_top_k_filter,
    sim_filter,
    train_block_classifier,
)
from synthevo.chem import match_pattern, morgan_count_fp, parse_smarts, parse_smiles
from synthevo.cli import main as cli_main
from synthevo.genetic import (
    MUTATION_NAMES,
    GaConfig,
    crossover,
    initial_routes,
    inverse_rank_sample,
    inverse_rank_weights,
    molga_sample,
    mutate,
    run_synga,
)
from synthevo.neural import (
    DenseNet,
    NamConfig,
    NamModel,
    bce_with_logits,
    fp_features,
    nam_loss,
    net_gradients,
    ranknet_loss,
    spearman,
    train_nam,
)
from synthevo.oracles import (
    additive_block_oracle,
    analog_fitness,
    formula_oracle,
    greedy_cluster,
    similarity_oracle,
    top_k_auc,
)
from synthevo.surrogate import GboConfig, fit_gp, minmax_gram, posterior, run_syngbo
from synthevo.synthesis import Context, sample_route, validate_tree

from conftest import ACCEPTANCE_LINES
from helpers import brute_force, central_difference, gradient_error
from test_oracles import FIXTURE, brute_scan
from test_smarts import MOLECULES, PATTERNS
from test_surrogate import dense_reference, random_fps

pytestmark = pytest.mark.slow


def report(n, ok: bool, detail: str, elapsed: float, limit: float):
    within = elapsed <= limit
    verdict = "PASS" if ok and within else "FAIL"
    line = f"[criterion {n:>4}] {verdict}  {detail}  ({elapsed:.1f}s / limit {limit:.0f}s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


def tv(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# -- 1. validity by construction -------------------------------------------------------

def test_validity_by_construction(index):
    t0 = time.perf_counter()
    ctx = Context(index)
    rng = np.random.default_rng(0)
    routes = [sample_route(rng, ctx) for _ in range(10_000)]
    bad_routes = sum(validate_tree(t, ctx) is not None for t in routes)
    offspring = []
    while len(offspring) < 10_000:
        i, j = rng.integers(len(routes), size=2)
        child = crossover(routes[i], routes[j], rng, ctx) if rng.random() < 0.5 else mutate(routes[i], rng, ctx)
        if child is not None:
            offspring.append(child)
    bad_children = sum(validate_tree(t, ctx) is not None for t in offspring)
    report(1, bad_routes == bad_children == 0,
           f"invalid routes {bad_routes}/10000, invalid offspring {bad_children}/10000",
           time.perf_counter() - t0, 120)


# -- 2. matcher equivalence ------------------------------------------------------------

def test_matcher_equivalence():
    t0 = time.perf_counter()
    mols = [parse_smiles(s) for s in MOLECULES]
    assert all(m.n_atoms <= 12 for m in mols)
    cases = [(parse_smarts(p), m) for p in PATTERNS for m in mols]
    disagree = sum(match_pattern(p, m) != brute_force(p, m) for p, m in cases)
    report(2, disagree == 0 and len(cases) == 500, f"{disagree} disagreements over {len(cases)} cases",
           time.perf_counter() - t0, 60)


# -- 3. inverse-rank sampling ----------------------------------------------------------

N_RANK, DRAWS = 500, 1_000_000


def target_law():
    w = inverse_rank_weights(N_RANK)
    return w / w.sum()


def test_inverse_rank_first_draw():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    pop = list(range(N_RANK))
    counts = np.bincount([inverse_rank_sample(pop, 1, rng)[0] for _ in range(DRAWS)], minlength=N_RANK)
    d = tv(counts / DRAWS, target_law())
    report("3a", d < 0.01, f"TV {d:.4f} (< 0.01)", time.perf_counter() - t0, 120)


def test_molga_sampler_approximates_inverse_rank():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    counts = np.bincount([molga_sample(N_RANK, rng) for _ in range(DRAWS)], minlength=N_RANK)
    d = tv(counts / DRAWS, target_law())
    report("3b", d < 0.05, f"TV {d:.4f} (< 0.05)", time.perf_counter() - t0, 120)


# -- 4. mutation dispatch --------------------------------------------------------------

def test_mutation_dispatch(monkeypatch, index):
    t0 = time.perf_counter()
    seen = []
    stubs = {name: (lambda tree, rng, ctx, name=name: seen.append(name) or tree) for name in MUTATION_NAMES}
    monkeypatch.setattr(genetic, "MUTATIONS", stubs)
    ctx = Context(index)
    rng = np.random.default_rng(0)
    tree = sample_route(rng, ctx)
    for _ in range(100_000):
        mutate(tree, rng, ctx)
    freq = np.array([seen.count(n) for n in MUTATION_NAMES]) / len(seen)
    err = np.abs(freq - [0.125, 0.125, 0.25, 0.25, 0.25]).max()
    report(4, len(seen) == 100_000 and err <= 0.01, f"frequencies {np.round(freq, 4).tolist()}",
           time.perf_counter() - t0, 30)


# -- 5. gradients ----------------------------------------------------------------------

def test_gradient_suite():
    t0 = time.perf_counter()
    worst = {"bce": 0.0, "ranknet": 0.0, "nam": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = DenseNet((5, 6, 4, 1), rng, norm=bool(seed % 2))
        x = rng.normal(size=(4, 5))
        y = (rng.random(4) < 0.5).astype(float)
        _, dz = bce_with_logits(net(x)[:, 0], y)
        numeric = central_difference(lambda: bce_with_logits(net(x)[:, 0], y)[0], net.params)
        worst["bce"] = max(worst["bce"], gradient_error(net_gradients(net, x, dz), numeric))

        s = rng.normal(size=7)
        t = rng.integers(0, 3, size=7).astype(float)
        numeric = central_difference(lambda: ranknet_loss(s, t)[0], [s])
        worst["ranknet"] = max(worst["ranknet"], gradient_error([ranknet_loss(s, t)[1]], numeric))

        nam = NamModel(DenseNet((4, 5, 1), rng, norm=bool(seed % 2)), a=rng.normal())
        X = rng.normal(size=(6, 4))
        sets = [list(rng.integers(0, 6, size=rng.integers(1, 4))) for _ in range(5)]
        targets = rng.normal(size=5)
        mode = ("ranknet", "mse")[seed % 2]
        _, grads = nam_loss(nam, X, sets, targets, mode)
        numeric = central_difference(lambda: nam_loss(nam, X, sets, targets, mode)[0], nam.params)
        worst["nam"] = max(worst["nam"], gradient_error(grads, numeric))
    ln2_err = abs(ranknet_loss(np.zeros(6), np.arange(6.0))[0] - np.log(2))
    ok = max(worst.values()) < 1e-4 and ln2_err <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", |loss - ln2| {ln2_err:.1e}"
    report(5, ok, detail, time.perf_counter() - t0, 60)


# -- 6. GP equivalence -----------------------------------------------------------------

def test_gp_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    X, Xq = random_fps(rng, 20), random_fps(rng, 10)
    y = rng.normal(size=20)
    mu, var = posterior(fit_gp(X, y, noise=1e-2), Xq)
    mu_ref, var_ref = dense_reference(X, y, Xq, 1e-2)
    dev = max(np.abs(mu - mu_ref).max(), np.abs(var - var_ref).max())

    eig = np.linalg.eigvalsh(minmax_gram(*(2 * [random_fps(rng, 50, dim=64, high=6)]))).min()

    Xi = np.unique(random_fps(rng, 15, dim=24, high=5), axis=0)
    yi = rng.normal(size=len(Xi))
    interp = np.abs(posterior(fit_gp(Xi, yi, noise=1e-10), Xi)[0] - yi).max()
    ok = dev <= 1e-8 and eig >= -1e-9 and interp <= 1e-6
    report(6, ok, f"dense deviation {dev:.1e}, min eigenvalue {eig:.1e}, interpolation {interp:.1e}",
           time.perf_counter() - t0, 60)


# -- 7. epsilon filtering --------------------------------------------------------------

def test_epsilon_law():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    space = list(range(200))
    flags = [epsilon_sample(space, BlockFilter(range(0, 200, 7), 0.1), rng)[1] for _ in range(100_000)]
    rate = float(np.mean(flags))
    exact0 = all(not fb and b % 7 == 0 for b, fb in
                 (epsilon_sample(space, BlockFilter(range(0, 200, 7), 0.0), rng) for _ in range(5000)))
    exact1 = all(fb for _, fb in (epsilon_sample(space, BlockFilter(range(0, 200, 7), 1.0), rng)
                                  for _ in range(5000)))
    report(7, abs(rate - 0.1) <= 0.01 and exact0 and exact1,
           f"fallback rate {rate:.4f}, eps=0 exact {exact0}, eps=1 exact {exact1}", time.perf_counter() - t0, 30)


# -- 8. NAM recovery -------------------------------------------------------------------

def test_nam_recovery(index):
    t0 = time.perf_counter()
    ctx = Context(index)
    feats = fp_features(index.blocks.fp_matrix())
    passed, rows = 0, []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        oracle = additive_block_oracle(len(index.blocks), seed)
        routes = initial_routes(1000, rng, ctx)
        nam, _ = train_nam(feats, [r.leaves() for r in routes], [oracle(r) for r in routes], NamConfig(seed=seed))
        rho = spearman(nam.block_scores(feats), oracle.weights)
        fctx = dataclasses.replace(ctx, sampler=BlockFilter(nam_top_k_filter(nam, feats, 50), 0.0, "nam"))
        filtered = np.mean([oracle(sample_route(rng, fctx)) for _ in range(500)])
        plain = np.mean([oracle(sample_route(rng, ctx)) for _ in range(500)])
        passed += rho >= 0.9 and filtered >= 1.5 * plain
        rows.append(f"{rho:.3f}/{filtered / plain:.2f}")
    report(8, passed >= 4, f"{passed}/5 seeds pass (spearman/ratio: {' '.join(rows)})",
           time.perf_counter() - t0, 300)


# -- 9. filter ordering ----------------------------------------------------------------

def test_filter_ordering(index):
    t0 = time.perf_counter()
    ctx = Context(index)
    blocks = index.blocks
    ds = generate_route_dataset(5000, np.random.default_rng(0), ctx)
    model, rep = train_block_classifier(ds, blocks, ClassifierConfig(hard_negatives=True))
    queries = [ds.keys[i] for i in ds.heldout if len(ds.blocks[i]) >= 2][:20]
    wins = 0
    for qi, q in enumerate(queries):
        qm = parse_smiles(q)
        qfp = morgan_count_fp(qm, 2, blocks.fp_dim)
        samplers = {
            "none": None,
            "sim": BlockFilter(sim_filter(qfp, blocks), 0.1, "sim"),
            "mlp": BlockFilter(classifier_filter(model, qfp, blocks), 0.1, "classifier"),
        }
        final = {}
        for kind, sampler in samplers.items():
            c = ctx if sampler is None else dataclasses.replace(ctx, sampler=sampler)
            _, hist = run_synga(GaConfig(population_size=100, offspring_size=10, budget=1000, seed=1000 + qi),
                                analog_fitness(qm), c)
            # the final analog is the most fit individual of the run
            final[kind] = hist.top(1)[0].fitness
        wins += final["mlp"] >= final["sim"] >= final["none"]
    ok = len(queries) == 20 and wins >= 14 and rep.auroc >= 0.9
    report(9, ok, f"ordering holds on {wins}/20 queries, held-out AUROC {rep.auroc:.4f}",
           time.perf_counter() - t0, 900)


# -- 10. SynGBO vs SynGA ---------------------------------------------------------------

def test_gbo_beats_ga(index):
    t0 = time.perf_counter()
    ctx = Context(index)
    budget = 2000
    rng = np.random.default_rng(123)
    deep = [t for t in (sample_route(rng, ctx) for _ in range(300)) if t.n_internal >= 3]
    makers = {
        "formula": lambda: formula_oracle(deep[1].mol.formula()),
        "similarity": lambda: similarity_oracle(deep[0].mol),
        "additive": lambda: additive_block_oracle(len(index.blocks), 7),
    }
    gbo = dict(budget=budget, proposal_size=20, inner_seed_top=200, inner_random=10, inner_population=200,
               inner_offspring=50, inner_generations=3, nam_top_k=50, nam_period=25, nam_min_samples=500,
               exploit_after=int(0.75 * budget))
    wins, rows = 0, []
    for name, make in makers.items():
        ga_auc, gbo_auc = [], []
        for seed in range(5):
            _, h = run_synga(GaConfig(population_size=100, initial_size=100, offspring_size=10,
                                      budget=budget, seed=seed), make(), ctx)
            ga_auc.append(top_k_auc(h.scores(), 10, 100, budget))
            h, _ = run_syngbo(GboConfig(seed=seed, **gbo), make(), ctx)
            gbo_auc.append(top_k_auc(h.scores(), 10, 100, budget))
        wins += np.mean(gbo_auc) >= np.mean(ga_auc)
        rows.append(f"{name} GA {np.mean(ga_auc):.3f} GBO {np.mean(gbo_auc):.3f}")
    report(10, wins >= 2, f"GBO >= GA on {wins}/3 ({'; '.join(rows)})", time.perf_counter() - t0, 1200)


# -- 11. metrics -----------------------------------------------------------------------

def test_metric_correctness():
    t0 = time.perf_counter()
    constant = all(top_k_auc([s] * 1000, 10, 100) == s for s in (0.0, 0.37, 0.5, 1.0))
    scores = np.zeros(200)
    scores[:100] = np.arange(100) / 1000
    scores[149] = 0.5
    f100 = np.mean(np.arange(90, 100) / 1000)
    f200 = (0.5 + np.sum(np.arange(91, 100) / 1000)) / 10
    fixture_err = abs(top_k_auc(scores, 10, 100) - (100 * f100 + 100 * (f100 + f200) / 2) / 200)
    clusters_ok = True
    for seed in range(5):
        order = np.random.default_rng(seed).permutation(len(FIXTURE))
        mols = [parse_smiles(FIXTURE[i]) for i in order]
        for cutoff in (0.2, 0.35, 0.5, 0.7, 1.0):
            clusters_ok &= greedy_cluster([morgan_count_fp(m) for m in mols], cutoff) == brute_scan(mols, cutoff)
    ok = constant and fixture_err <= 1e-12 and clusters_ok
    report(11, ok, f"constant exact {constant}, fixture error {fixture_err:.1e}, clustering exact {clusters_ok}",
           time.perf_counter() - t0, 30)


# -- 12. determinism -------------------------------------------------------------------

def snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        'seed = 5\nworkers = 1\n'
        '[oracle]\nname = "formula"\ntarget = "C14H13NO"\n'
        '[ga]\npopulation_size = 30\noffspring_size = 10\nbudget = 120\n'
        '[gbo]\nbudget = 80\nproposal_size = 8\ninner_generations = 2\ninner_offspring = 20\n'
        'inner_population = 40\ninner_seed_top = 30\ninner_random = 5\nnam_min_samples = 40\n'
        'nam_period = 2\nnam_top_k = 30\nexploit_after = 60\n'
        '[gbo.nam]\nhidden = [8]\nmax_epochs = 5\n'
        '[nam]\nhidden = [8]\nmax_epochs = 5\n'
        '[classifier]\nhidden = [8]\nfp_dim = 128\nsteps = 40\n'
        '[analog]\ntop = 5\n'
    )
    ga_hist = tmp_path / "ref" / "history.jsonl"
    assert cli_main(["ga", "run", "--config", str(cfg), "--out", str(ga_hist.parent)]) == 0

    def commands(out):
        ds = out / "dataset" / "dataset.jsonl"
        model = out / "filter" / "classifier.npz"
        base = ["--config", str(cfg)]
        return [
            ["blocks", "prepare", *base, "--out", str(out / "blocks")],
            ["routes", "sample", *base, "--n", "25", "--out", str(out / "routes")],
            ["dataset", "gen", *base, "--n", "80", "--out", str(out / "dataset")],
            ["filter", "train", *base, "--dataset", str(ds), "--out", str(out / "filter")],
            ["filter", "eval", *base, "--dataset", str(ds), "--model", str(model), "--out", str(out / "eval")],
            ["ga", "run", *base, "--out", str(out / "ga")],
            ["gbo", "run", *base, "--out", str(out / "gbo")],
            ["nam", "train", *base, "--history", str(ga_hist), "--out", str(out / "nam")],
            ["analog", "search", *base, "--query", "CC(=O)Nc1ccc(-c2ccccc2)cc1", "--filter", "sim",
             "--out", str(out / "analog")],
            ["report", str(ga_hist), "--csv", "--out", str(out / "report")],
        ]

    codes = []
    for run in ("a", "b"):
        codes += [cli_main(argv) for argv in commands(tmp_path / run)]
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    n_commands = len(commands(tmp_path / "a"))
    ok = all(c == 0 for c in codes) and not differing and len(a) > n_commands
    report(12, ok, f"{n_commands} commands, {len(a)} files, differing: {json.dumps(differing)}",
           time.perf_counter() - t0, 300)
