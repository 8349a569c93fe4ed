"""Building-block filters: epsilon sampling, similarity and learned filters."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .catalog import BuildingBlockSet
from .chem import CountFingerprint, fingerprint_matrix, fold, morgan_count_fp, parse_smiles, tanimoto_matrix
from .neural import Adam, DenseNet, NamModel, bce_with_logits, fp_features, load_model, save_model
from .synthesis import Context, sample_route

log = logging.getLogger(__name__)

FILTER_TAGS = ("none", "sim", "classifier", "nam")


class BlockFilter:
    """Preferred block ids plus the probability ``epsilon`` of ignoring them.

    Implements the block sampler interface of the synthesis operators, so a
    filter applies wherever a leaf block is drawn.
    """

    def __init__(self, ids, epsilon: float = 0.1, tag: str = "none"):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        if tag not in FILTER_TAGS:
            raise ValueError(f"unknown filter tag {tag!r}")
        self.ids = frozenset(int(i) for i in ids)
        self.epsilon = float(epsilon)
        self.tag = tag

    def __len__(self) -> int:
        return len(self.ids)

    def __repr__(self) -> str:
        return f"BlockFilter({len(self.ids)} ids, epsilon={self.epsilon}, tag={self.tag!r})"

    def sample(self, space: Sequence[int], rng: np.random.Generator) -> int:
        return epsilon_sample(space, self, rng)[0]


def epsilon_sample(space: Sequence[int], filt: BlockFilter, rng: np.random.Generator) -> tuple[int, bool]:
    """Draw one id from ``space``; the flag says whether the fallback branch ran.

    With a nonempty intersection the draw is uniform over it with probability
    ``1 - epsilon`` and uniform over ``space`` otherwise.
    """
    if len(space) == 0:
        raise ValueError("cannot sample from an empty space")
    inter = [b for b in space if b in filt.ids]
    if inter and rng.random() >= filt.epsilon:
        return int(inter[rng.integers(len(inter))]), False
    return int(space[rng.integers(len(space))]), True


def containment(query: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Share of each block's counts also present in the query."""
    blocks = np.asarray(blocks, dtype=np.float64)
    inter = np.minimum(blocks, np.asarray(query, dtype=np.float64)[None, :]).sum(axis=1)
    total = blocks.sum(axis=1)
    return np.divide(inter, total, out=np.zeros_like(inter), where=total > 0)


def sim_filter(query_fp: CountFingerprint, blocks: BuildingBlockSet, threshold: float = 0.5) -> set[int]:
    """Blocks whose containment in the query strictly exceeds ``threshold``."""
    if query_fp.dim != blocks.fp_dim:
        raise ValueError(f"dimension mismatch: {query_fp.dim} vs {blocks.fp_dim}")
    ratio = containment(query_fp.to_dense(), blocks.fp_matrix())
    return {int(i) for i in np.flatnonzero(ratio > threshold)}


# -- route datasets ----------------------------------------------------------------------

@dataclass
class RouteDataset:
    """Unique products with the set of blocks used to make them."""

    keys: list[str]
    blocks: list[tuple[int, ...]]
    heldout: list[int] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        if len(self.keys) != len(self.blocks):
            raise ValueError("keys and block sets differ in length")
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("duplicate products")
        if any(not b for b in self.blocks):
            raise ValueError("every product needs at least one block")
        self._fps: dict[int, list[CountFingerprint]] = {}

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def train(self) -> list[int]:
        held = set(self.heldout)
        return [i for i in range(len(self)) if i not in held]

    def split(self, fraction: float, rng: np.random.Generator) -> None:
        n = int(round(fraction * len(self)))
        self.heldout = sorted(int(i) for i in rng.permutation(len(self))[:n])

    def product_fps(self, dim: int) -> list[CountFingerprint]:
        if dim not in self._fps:
            self._fps[dim] = [morgan_count_fp(parse_smiles(k), 2, dim) for k in self.keys]
        return self._fps[dim]

    def save(self, path: str | Path) -> None:
        held = set(self.heldout)
        lines = [json.dumps({"key": k, "blocks": list(b), "heldout": i in held})
                 for i, (k, b) in enumerate(zip(self.keys, self.blocks))]
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "RouteDataset":
        keys, blocks, held = [], [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row.get("heldout"):
                    held.append(len(keys))
                keys.append(row["key"])
                blocks.append(tuple(row["blocks"]))
        return cls(keys, blocks, held)


def generate_route_dataset(
    n_products: int,
    rng: np.random.Generator,
    ctx: Context,
    *,
    heldout_fraction: float = 0.1,
    max_attempts: int | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> RouteDataset:
    """Sample routes until ``n_products`` distinct products are collected."""
    if n_products < 1:
        raise ValueError("n_products must be at least 1")
    limit = max_attempts if max_attempts is not None else 100 * n_products + 1000
    seen: dict[str, tuple[int, ...]] = {}
    attempts = 0
    while len(seen) < n_products:
        if attempts >= limit:
            raise RuntimeError(f"only {len(seen)} distinct products after {attempts} routes")
        attempts += 1
        tree = sample_route(rng, ctx)
        if tree.key not in seen:
            seen[tree.key] = tuple(sorted(set(tree.leaves())))
            if progress is not None:
                progress(len(seen), attempts)
            elif len(seen) % 1000 == 0:
                log.info("dataset: %d products from %d routes", len(seen), attempts)
    ds = RouteDataset(list(seen), list(seen.values()))
    ds.split(heldout_fraction, rng)
    return ds


# -- neighbors ---------------------------------------------------------------------------

def mine_neighbors(fps: np.ndarray, k: int = 100) -> np.ndarray:
    """Row ``i`` lists the ``k`` most similar other rows, ties broken by id."""
    fps = np.asarray(fps)
    n = len(fps)
    k = min(k, n - 1)
    sim = tanimoto_matrix(fps, fps)
    ids = np.arange(n)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        s = sim[i].copy()
        s[i] = -np.inf
        order = np.lexsort((ids, -s))
        out[i] = order[:k]
    return out


# -- block classifier -----------------------------------------------------------------------

@dataclass
class ClassifierConfig:
    hidden: tuple[int, ...] = (64, 64)
    fp_dim: int = 512
    norm: bool = True
    lr: float = 5e-4
    batch_size: int = 64
    steps: int = 3000
    hard_negatives: bool = False
    hard_prob: float = 0.5
    n_neighbors: int = 100
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown classifier settings: {sorted(unknown)}")
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def pair_features(query: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    """Rows ``[q, b, min(q, b)]`` on log-compressed counts; ``query`` broadcasts."""
    q = np.broadcast_to(np.asarray(query, dtype=np.float64), np.shape(blocks))
    b = np.asarray(blocks, dtype=np.float64)
    return fp_features(np.hstack([q, b, np.minimum(q, b)]))


class BlockClassifier:
    """Predicts whether a block appears in some route to a query product."""

    def __init__(self, net: DenseNet, fp_dim: int, config: dict | None = None):
        if net.input_dim != 3 * fp_dim:
            raise ValueError("network input does not match the fingerprint size")
        self.net = net
        self.fp_dim = fp_dim
        self.config = config or {}

    @classmethod
    def init(cls, cfg: ClassifierConfig, rng: np.random.Generator) -> "BlockClassifier":
        net = DenseNet((3 * cfg.fp_dim, *cfg.hidden, 1), rng, norm=cfg.norm)
        return cls(net, cfg.fp_dim, cfg.to_dict())

    def logits(self, query: np.ndarray, blocks: np.ndarray) -> np.ndarray:
        return self.net(pair_features(query, blocks))[:, 0]

    def predict(self, query: np.ndarray, blocks: np.ndarray) -> np.ndarray:
        return expit(self.logits(query, blocks))

    def save(self, path: str | Path) -> None:
        save_model(path, self.net, "block_classifier", {"fp_dim": self.fp_dim, "config": self.config})

    @classmethod
    def load(cls, path: str | Path) -> "BlockClassifier":
        net, header, _ = load_model(path)
        if header["kind"] != "block_classifier":
            raise ValueError(f"{path}: holds a {header['kind']} model")
        return cls(net, int(header["extra"]["fp_dim"]), header["extra"].get("config"))


def block_matrix(blocks: BuildingBlockSet, dim: int) -> np.ndarray:
    """Block fingerprints refolded to ``dim`` buckets."""
    if blocks.fp_dim == dim:
        return blocks.fp_matrix().astype(np.float64)
    return fingerprint_matrix([fold(b.fp, dim) for b in blocks], dtype=np.float64)


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney estimate with average ranks for ties."""
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need both classes")
    r = rankdata(scores)
    return float((r[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve as a step sum over thresholds."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if not labels.any():
        raise ValueError("need at least one positive")
    thresholds = np.unique(scores)[::-1]
    ap, prev_recall = 0.0, 0.0
    n_pos = labels.sum()
    for t in thresholds:
        sel = scores >= t
        tp = (labels & sel).sum()
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / sel.sum()
        prev_recall = recall
    return float(ap)


@dataclass
class ClassifierReport:
    losses: list[float]
    auroc: float
    auprc: float
    n_eval: int

    def to_dict(self) -> dict:
        return {"auroc": self.auroc, "auprc": self.auprc, "n_eval": self.n_eval,
                "final_loss": self.losses[-1] if self.losses else None}


def evaluate_classifier(model: BlockClassifier, ds: RouteDataset, blocks: BuildingBlockSet,
                        examples: Sequence[int] | None = None) -> tuple[float, float, int]:
    """Per-product AUROC and AUPRC over the whole catalog, then averaged."""
    examples = ds.heldout if examples is None else examples
    if not examples:
        raise ValueError("no examples to evaluate")
    B = block_matrix(blocks, model.fp_dim)
    fps = ds.product_fps(model.fp_dim)
    rocs, prcs = [], []
    for i in examples:
        labels = np.zeros(len(blocks), dtype=bool)
        labels[list(ds.blocks[i])] = True
        if labels.all():
            continue
        s = model.logits(fps[i].to_dense(), B)
        rocs.append(auroc(s, labels))
        prcs.append(average_precision(s, labels))
    return float(np.mean(rocs)), float(np.mean(prcs)), len(rocs)


def train_block_classifier(ds: RouteDataset, blocks: BuildingBlockSet,
                           cfg: ClassifierConfig | None = None) -> tuple[BlockClassifier, ClassifierReport]:
    """Binary cross-entropy on (product, block) pairs, balanced per draw.

    Each pair takes a random training product, then a block from its route
    with probability 1/2 or a block outside it otherwise. In hard-negative
    mode half of the negatives come from the neighbors of a positive block.
    """
    cfg = cfg or ClassifierConfig()
    if not ds.heldout:
        raise ValueError("dataset has no held-out split")
    train = ds.train
    if not train:
        raise ValueError("dataset has no training examples")
    rng = np.random.default_rng(cfg.seed)
    model = BlockClassifier.init(cfg, rng)
    B = block_matrix(blocks, cfg.fp_dim)
    Q = fingerprint_matrix(ds.product_fps(cfg.fp_dim), dtype=np.float64)
    n = len(blocks)
    neighbors = mine_neighbors(blocks.fp_matrix(), cfg.n_neighbors) if cfg.hard_negatives else None
    pos_sets = [set(b) for b in ds.blocks]
    opt = Adam(model.net.params, lr=cfg.lr)
    losses = []
    for step in range(cfg.steps):
        ex = rng.choice(train, size=cfg.batch_size)
        ys = (rng.random(cfg.batch_size) < 0.5).astype(np.float64)
        bids = np.empty(cfg.batch_size, dtype=np.int64)
        for k, (i, y) in enumerate(zip(ex, ys)):
            bids[k] = _draw_block(ds.blocks[i], pos_sets[i], bool(y), n, neighbors, cfg.hard_prob, rng)
        X = pair_features(Q[ex], B[bids])
        z, cache = model.net.forward(X)
        loss, dz = bce_with_logits(z[:, 0], ys)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at step {step}")
        grads, _ = model.net.backward(cache, dz[:, None])
        opt.step(grads)
        losses.append(loss)
    roc, prc, n_eval = evaluate_classifier(model, ds, blocks)
    return model, ClassifierReport(losses, roc, prc, n_eval)


def _draw_block(positives: Sequence[int], pos_set: set[int], positive: bool, n: int,
                neighbors: np.ndarray | None, hard_prob: float, rng: np.random.Generator) -> int:
    if positive:
        return int(positives[rng.integers(len(positives))])
    if len(pos_set) >= n:
        raise ValueError("a product uses every block; no negatives exist")
    if neighbors is not None and rng.random() < hard_prob:
        anchor = positives[rng.integers(len(positives))]
        hard = [int(b) for b in neighbors[anchor] if b not in pos_set]
        if hard:
            return hard[rng.integers(len(hard))]
    while True:
        b = int(rng.integers(n))
        if b not in pos_set:
            return b


def classifier_filter(model: BlockClassifier, query_fp: CountFingerprint, blocks: BuildingBlockSet,
                      mu: float = 0.5) -> set[int]:
    """Blocks whose predicted probability strictly exceeds ``mu``."""
    q = fold(query_fp, model.fp_dim) if query_fp.dim != model.fp_dim else query_fp
    p = model.predict(q.to_dense(), block_matrix(blocks, model.fp_dim))
    return {int(i) for i in np.flatnonzero(p > mu)}


def nam_top_k_filter(nam: NamModel, features: np.ndarray, k: int = 1000) -> set[int]:
    """The ``k`` best-scoring blocks under the per-block scorer, ties by id."""
    s = nam.block_scores(features)
    order = np.lexsort((np.arange(len(s)), -s))
    return {int(i) for i in order[:k]}
