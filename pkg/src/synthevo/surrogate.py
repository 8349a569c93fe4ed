"""Gaussian-process surrogate on count fingerprints and the surrogate-guided GA."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .blockfilter import BlockFilter, nam_top_k_filter
from .chem import CountFingerprint, TanimotoIndex, morgan_count_fp, tanimoto, tanimoto_matrix
from .genetic import GaConfig, RunHistory, evaluate, initial_routes, run_synga
from .neural import NamConfig, fp_features, train_nam
from .synthesis import Context, Node

log = logging.getLogger(__name__)

JITTER_START = 1e-8
JITTER_MAX = 1e-2


def minmax_kernel(x: CountFingerprint | np.ndarray, y: CountFingerprint | np.ndarray, signal: float = 1.0) -> float:
    """Signal variance times count Tanimoto; 0 when both inputs are empty."""
    if isinstance(x, CountFingerprint) and isinstance(y, CountFingerprint):
        return signal * tanimoto(x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    den = np.maximum(x, y).sum()
    return 0.0 if den == 0 else signal * float(np.minimum(x, y).sum() / den)


def minmax_gram(a: np.ndarray, b: np.ndarray, signal: float = 1.0) -> np.ndarray:
    return signal * tanimoto_matrix(a, b)


class GpFitError(np.linalg.LinAlgError):
    pass


@dataclass
class GpModel:
    X: np.ndarray
    y_mean: float
    y_std: float
    noise: float
    signal: float
    jitter: float
    L: np.ndarray
    weights: np.ndarray
    index: TanimotoIndex
    n_clamped: int = 0

    def __len__(self) -> int:
        return len(self.X)


def fit_gp(X: np.ndarray, y: Sequence[float], noise: float = 1e-4, signal: float = 1.0,
           gram: np.ndarray | None = None) -> GpModel:
    """Exact GP regression on standardized targets with a Cholesky factor.

    ``gram`` may supply the precomputed Tanimoto matrix of ``X``. A failed
    factorization is retried with diagonal jitter starting at
    ``JITTER_START`` and doubling up to ``JITTER_MAX``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("need matching, nonempty X and y")
    mean = float(y.mean())
    std = float(y.std())
    if std == 0.0:
        std = 1.0
    z = (y - mean) / std
    index = TanimotoIndex(X)
    if gram is None:
        gram = index.query(X)
    elif gram.shape != (len(X), len(X)):
        raise ValueError("gram does not match X")
    K = signal * gram
    K[np.diag_indices_from(K)] += noise
    jitter = 0.0
    while True:
        try:
            L = cholesky(K + jitter * np.eye(len(K)), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else 2.0 * jitter
            if jitter > JITTER_MAX:
                eig = np.linalg.eigvalsh(K)
                raise GpFitError(
                    f"Gram matrix not positive definite with jitter {JITTER_MAX}: "
                    f"eigenvalues in [{eig[0]:.3e}, {eig[-1]:.3e}], n={len(K)}") from None
    if jitter:
        log.debug("GP factorization needed jitter %.1e", jitter)
    weights = cho_solve((L, True), z)
    return GpModel(X, mean, std, noise, signal, jitter, L, weights, index)


def posterior(model: GpModel, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance in the original target units."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    Ks = model.signal * model.index.query(Xq)
    mu = Ks @ model.weights
    V = solve_triangular(model.L, Ks.T, lower=True)
    prior = np.where(Xq.sum(axis=1) > 0, model.signal, 0.0)
    var = prior - np.einsum("ij,ij->j", V, V)
    neg = var < 0
    if neg.any():
        model.n_clamped += int(neg.sum())
        var = np.maximum(var, 0.0)
    return model.y_mean + model.y_std * mu, var * model.y_std ** 2


def ucb(model: GpModel, Xq: np.ndarray, beta: float) -> np.ndarray:
    """Posterior mean plus ``sqrt(beta)`` standard deviations."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    mu, var = posterior(model, Xq)
    if beta == 0:
        return mu
    return mu + np.sqrt(beta) * np.sqrt(var)


def gp_subset(scores: np.ndarray, n_top: int, n_random: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of the ``n_top`` best scores plus ``n_random`` others drawn uniformly."""
    n = len(scores)
    if n <= n_top + n_random:
        return np.arange(n)
    order = np.lexsort((np.arange(n), -np.asarray(scores)))
    top, rest = order[:n_top], order[n_top:]
    return np.sort(np.concatenate([top, rng.choice(rest, size=n_random, replace=False)]))


# -- outer loop ---------------------------------------------------------------------------

@dataclass
class GboConfig:
    proposal_size: int = 10
    budget: int = 10_000
    beta_min: float = 0.01
    beta_max: float = 1.0
    exploit_after: int = 5000
    nam_period: int = 25
    nam_min_samples: int = 500
    nam_top_k: int = 1000
    epsilon: float = 0.1
    gp_top: int = 2500
    gp_random: int = 2500
    noise: float = 1e-4
    fp_dim: int = 2048
    inner_generations: int = 5
    inner_offspring: int = 100
    inner_population: int = 1000
    inner_seed_top: int = 1000
    inner_random: int = 500
    crossover_rate: float = 0.8
    mutation_rate: float = 0.5
    seed: int = 0
    nam: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("proposal_size", "budget", "nam_period", "nam_top_k", "gp_top", "fp_dim",
                     "inner_generations", "inner_offspring", "inner_population"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.budget < self.proposal_size:
            raise ValueError("budget is below the proposal size")
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        NamConfig.from_dict(self.nam)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GboConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown GBO settings: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


class GramCache:
    """Tanimoto matrix over a growing list of fingerprints, extended row block by row block."""

    def __init__(self, dim: int):
        self.X = np.zeros((0, dim))
        self.K = np.zeros((0, 0))

    def __len__(self) -> int:
        return len(self.X)

    def extend(self, X_new: np.ndarray) -> None:
        X_new = np.asarray(X_new, dtype=np.float64)
        n, m = len(self.X), len(X_new)
        if m == 0:
            return
        K = np.empty((n + m, n + m))
        K[:n, :n] = self.K
        if n:
            cross = TanimotoIndex(X_new).query(self.X)
            K[:n, n:] = cross
            K[n:, :n] = cross.T
        K[n:, n:] = TanimotoIndex(X_new).query(X_new)
        self.X = np.vstack([self.X, X_new])
        self.K = K


class FingerprintCache:
    def __init__(self, dim: int):
        self.dim = dim
        self._fps: dict[str, np.ndarray] = {}

    def __call__(self, trees: Sequence[Node]) -> np.ndarray:
        out = np.zeros((len(trees), self.dim))
        for i, t in enumerate(trees):
            v = self._fps.get(t.key)
            if v is None:
                v = self._fps[t.key] = morgan_count_fp(t.mol, 2, self.dim).to_dense()
            out[i] = v
        return out


class Acquisition:
    """Batch UCB scorer in the shape the GA expects from a fitness."""

    def __init__(self, model: GpModel, beta: float, fps: FingerprintCache):
        self.model, self.beta, self.fps = model, beta, fps

    def evaluate_many(self, trees: Sequence[Node]) -> np.ndarray:
        return ucb(self.model, self.fps(trees), self.beta)

    def __call__(self, tree: Node) -> float:
        return float(self.evaluate_many([tree])[0])


@dataclass
class IterationLog:
    iteration: int
    n_history: int
    beta: float
    n_filter: int
    gp_size: int
    gp_jitter: float
    best_acquisition: float
    n_refill: int
    proposals: list[tuple[str, float]]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_syngbo(
    cfg: GboConfig,
    fitness: Callable[[Node], float],
    ctx: Context,
    *,
    rng: np.random.Generator | None = None,
    workers: int = 1,
    on_iteration: Callable[[IterationLog], None] | None = None,
) -> tuple[RunHistory, list[IterationLog]]:
    """Surrogate-guided search: an inner GA maximizes UCB, the oracle scores its best picks.

    Every outer iteration fits the GP to (a subset of) the history, runs a
    short GA on the acquisition and sends the ``proposal_size`` best unseen
    products to ``fitness``. Once enough data exists a block scorer is refit
    periodically and restricts leaf sampling to its top blocks.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    history = RunHistory(cfg.budget)
    fps = FingerprintCache(cfg.fp_dim)
    gram = GramCache(cfg.fp_dim)
    logs: list[IterationLog] = []
    nam_cfg = NamConfig.from_dict(cfg.nam)
    block_feats = fp_features(ctx.index.blocks.fp_matrix())
    filt: BlockFilter | None = None

    def score(trees: list[Node]) -> None:
        for t, s in zip(trees, evaluate(fitness, trees, workers)):
            history.add(t.key, s, t)
        gram.extend(fps(trees))

    score(initial_routes(cfg.proposal_size, rng, ctx))
    it = 0
    while not history.full:
        it += 1
        entries = history.entries()
        if len(entries) >= cfg.nam_min_samples and (filt is None or it % cfg.nam_period == 0):
            sets = [e.tree.leaves() for e in entries]
            nam_cfg = dataclasses.replace(nam_cfg, seed=int(rng.integers(2**31)))
            nam, _ = train_nam(block_feats, sets, [e.fitness for e in entries], nam_cfg)
            filt = BlockFilter(nam_top_k_filter(nam, block_feats, cfg.nam_top_k), cfg.epsilon, "nam")
        ictx = ctx if filt is None else dataclasses.replace(ctx, sampler=filt)

        scores = np.array([e.fitness for e in entries])
        sub = gp_subset(scores, cfg.gp_top, cfg.gp_random, rng)
        model = fit_gp(gram.X[sub], scores[sub], cfg.noise, gram=gram.K[np.ix_(sub, sub)])
        if len(history) < cfg.exploit_after:
            beta = float(np.exp(rng.uniform(np.log(cfg.beta_min), np.log(cfg.beta_max))))
        else:
            beta = 0.0
        acq = Acquisition(model, beta, fps)

        top = [e.tree for e in history.top(cfg.inner_seed_top)]
        seeds = top + initial_routes(cfg.inner_random, rng, ictx, exclude=[t.key for t in top])
        inner_cfg = GaConfig(
            population_size=cfg.inner_population, initial_size=len(seeds),
            offspring_size=cfg.inner_offspring, crossover_rate=cfg.crossover_rate,
            mutation_rate=cfg.mutation_rate,
            budget=len(seeds) + cfg.inner_generations * cfg.inner_offspring,
            max_generations=cfg.inner_generations,
        )
        _, inner = run_synga(inner_cfg, acq, ictx, rng=rng, initial=seeds)
        m = min(cfg.proposal_size, cfg.budget - len(history))
        ranked = sorted((e for e in inner.entries() if e.key not in history),
                        key=lambda e: (-e.fitness, e.call))
        picks = [e.tree for e in ranked[:m]]
        n_refill = 0
        if len(picks) < m:
            refill = initial_routes(m - len(picks), rng, ictx,
                                    exclude=[*history.keys(), *(t.key for t in picks)])
            n_refill = len(refill)
            picks += refill
        if not picks:
            log.warning("no unseen products left; stopping at %d/%d evaluations", len(history), cfg.budget)
            break
        before = len(history)
        score(picks)
        record = IterationLog(
            it, len(history), beta, len(filt) if filt is not None else len(ctx.index.blocks), len(sub),
            model.jitter, float(ranked[0].fitness) if ranked else float("nan"), n_refill,
            [(e.key, e.fitness) for e in history.entries()[before:]],
        )
        logs.append(record)
        if on_iteration is not None:
            on_iteration(record)
    return history, logs
