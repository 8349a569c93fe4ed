"""Small numpy MLPs with hand-written gradients, Adam, and the additive block scorer."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import erf, expit, log_expit
from scipy.stats import rankdata

log = logging.getLogger(__name__)

_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
LN_EPS = 1e-5


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    return cdf + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


def fp_features(counts: np.ndarray) -> np.ndarray:
    """Compress raw fingerprint counts before they enter a network."""
    return np.log1p(np.asarray(counts, dtype=np.float64))


class DenseNet:
    """Fully connected net: hidden layers are affine, optional LayerNorm, GELU.

    The last layer is affine only; callers apply a sigmoid when they need one.
    Parameters live in ``self.params`` in the order W0, b0, [g0, beta0], W1, ...
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None,
                 norm: bool = True, zero: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.norm = bool(norm)
        rng = np.random.default_rng(0) if rng is None else rng
        self.params: list[np.ndarray] = []
        self.layout: list[tuple[int, ...]] = []  # per layer: indices into params
        for k, (i, o) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if zero:
                W = np.zeros((i, o))
            else:
                W = rng.normal(0.0, np.sqrt(2.0 / (i + o)), size=(i, o))
            idx = [len(self.params), len(self.params) + 1]
            self.params += [W, np.zeros(o)]
            if self.norm and k < len(self.sizes) - 2:
                idx += [len(self.params), len(self.params) + 1]
                self.params += [np.ones(o), np.zeros(o)]
            self.layout.append(tuple(idx))

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} features, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        cache = []
        h = x
        last = len(self.layout) - 1
        for k, idx in enumerate(self.layout):
            W, b = self.params[idx[0]], self.params[idx[1]]
            z = h @ W + b
            entry = {"in": h, "z": z}
            if k < last:
                if len(idx) == 4:
                    g, beta = self.params[idx[2]], self.params[idx[3]]
                    mu = z.mean(axis=1, keepdims=True)
                    var = z.var(axis=1, keepdims=True)
                    inv = 1.0 / np.sqrt(var + LN_EPS)
                    zhat = (z - mu) * inv
                    u = zhat * g + beta
                    entry.update(zhat=zhat, inv=inv)
                else:
                    u = z
                entry["u"] = u
                h = gelu(u)
            else:
                h = z
            cache.append(entry)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(upstream * output)`` for every parameter and the input."""
        grads = [np.zeros_like(p) for p in self.params]
        d = np.asarray(upstream, dtype=np.float64)
        if d.ndim == 1:
            d = d[:, None]
        last = len(self.layout) - 1
        for k in range(last, -1, -1):
            idx = self.layout[k]
            entry = cache[k]
            if k < last:
                du = d * gelu_grad(entry["u"])
                if len(idx) == 4:
                    g = self.params[idx[2]]
                    zhat, inv = entry["zhat"], entry["inv"]
                    grads[idx[2]] = (du * zhat).sum(axis=0)
                    grads[idx[3]] = du.sum(axis=0)
                    dzhat = du * g
                    n = zhat.shape[1]
                    dz = inv / n * (n * dzhat - dzhat.sum(axis=1, keepdims=True)
                                    - zhat * (dzhat * zhat).sum(axis=1, keepdims=True))
                else:
                    dz = du
            else:
                dz = d
            grads[idx[0]] = entry["in"].T @ dz
            grads[idx[1]] = dz.sum(axis=0)
            d = dz @ self.params[idx[0]].T
        return grads, d

    def copy(self) -> "DenseNet":
        out = DenseNet.__new__(DenseNet)
        out.sizes, out.norm, out.layout = self.sizes, self.norm, list(self.layout)
        out.params = [p.copy() for p in self.params]
        return out


def net_apply(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return net(x)


def net_gradients(net: DenseNet, x: np.ndarray, upstream: np.ndarray) -> list[np.ndarray]:
    _, cache = net.forward(x)
    return net.backward(cache, upstream)[0]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: Adam, grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    state.step(grads)
    return state.params


# -- losses ----------------------------------------------------------------------

def bce_with_logits(z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on logits and its gradient w.r.t. the logits."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    loss = -(y * log_expit(z) + (1.0 - y) * log_expit(-z))
    return float(loss.mean()), (expit(z) - y) / z.size


def pair_labels(targets: np.ndarray, ties_half: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All unordered pairs ``i < j`` with label 1 if ``t_i > t_j`` (ties 0.5 or 0)."""
    n = len(targets)
    i, j = np.triu_indices(n, k=1)
    ti, tj = targets[i], targets[j]
    y = (ti > tj).astype(np.float64)
    if ties_half:
        y[ti == tj] = 0.5
    return i, j, y


def ranknet_loss(scores: np.ndarray, targets: np.ndarray, ties_half: bool = True) -> tuple[float, np.ndarray]:
    """Mean pairwise logistic loss on score differences; gradient w.r.t. scores."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    i, j, y = pair_labels(targets, ties_half)
    if len(i) == 0:
        return 0.0, np.zeros_like(scores)
    loss, dd = bce_with_logits(scores[i] - scores[j], y)
    grad = np.zeros_like(scores)
    np.add.at(grad, i, dd)
    np.add.at(grad, j, -dd)
    return loss, grad


def mse_loss(scores: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    r = np.asarray(scores, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(r * r)), 2.0 * r / r.size


# -- additive block model ------------------------------------------------------------

class NamModel:
    """Per-block scorer ``s`` and an interpolation weight between sum and mean.

    ``score(B) = (alpha + (1 - alpha) / |B|) * sum_b s(b)`` with
    ``alpha = sigmoid(a)``.
    """

    def __init__(self, net: DenseNet, a: float = 0.0):
        if net.sizes[-1] != 1:
            raise ValueError("block scorer must have a scalar output")
        self.net = net
        self.a = np.array([float(a)])

    @property
    def alpha(self) -> float:
        return float(expit(self.a[0]))

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params + [self.a]

    def block_scores(self, features: np.ndarray) -> np.ndarray:
        return self.net(features)[:, 0]

    def score(self, block_scores: Sequence[float]) -> float:
        s = np.asarray(block_scores, dtype=np.float64)
        if s.size == 0:
            raise ValueError("empty block multiset")
        a = self.alpha
        return float((a + (1.0 - a) / s.size) * s.sum())

    def forward(self, features: np.ndarray, sets: Sequence[Sequence[int]]):
        """Scores for each multiset of rows of ``features``."""
        s, cache = self.net.forward(features)
        s = s[:, 0]
        a = self.alpha
        sums = np.array([s[list(b)].sum() for b in sets])
        sizes = np.array([len(b) for b in sets], dtype=np.float64)
        if np.any(sizes == 0):
            raise ValueError("empty block multiset")
        coef = a + (1.0 - a) / sizes
        return coef * sums, (cache, s, sums, sizes, coef)

    def backward(self, sets: Sequence[Sequence[int]], aux, d_rho: np.ndarray) -> list[np.ndarray]:
        cache, s, sums, sizes, coef = aux
        ds = np.zeros_like(s)
        for b, c, g in zip(sets, coef, d_rho):
            np.add.at(ds, list(b), c * g)
        grads, _ = self.net.backward(cache, ds)
        a = self.alpha
        d_alpha = float(np.sum(d_rho * (1.0 - 1.0 / sizes) * sums))
        return grads + [np.array([d_alpha * a * (1.0 - a)])]

    def copy(self) -> "NamModel":
        return NamModel(self.net.copy(), float(self.a[0]))


def nam_score(nam: NamModel, block_features: np.ndarray) -> float:
    """Score one block multiset given one feature row per block occurrence."""
    return nam.score(nam.block_scores(np.atleast_2d(block_features)))


def nam_loss(nam: NamModel, features: np.ndarray, sets, targets, mode: str = "ranknet",
             ties_half: bool = True) -> tuple[float, list[np.ndarray]]:
    rho, aux = nam.forward(features, sets)
    if mode == "ranknet":
        loss, d_rho = ranknet_loss(rho, np.asarray(targets), ties_half)
    elif mode == "mse":
        loss, d_rho = mse_loss(rho, targets)
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    return loss, nam.backward(sets, aux, d_rho)


def spearman(xs: Sequence[float], ys: Sequence[float], with_flag: bool = False):
    """Pearson correlation of average ranks; 0 (flagged) when an input is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences with at least 2 entries")
    rx, ry = rankdata(x), rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if den == 0:
        return (0.0, True) if with_flag else 0.0
    rho = float(np.clip((rx * ry).sum() / den, -1.0, 1.0))
    return (rho, False) if with_flag else rho


@dataclass
class NamConfig:
    hidden: tuple[int, ...] = (64, 64)
    norm: bool = True
    lr: float = 5e-4
    batch_size: int = 50
    max_epochs: int = 100
    patience: int = 5
    val_fraction: float = 0.1
    loss: str = "ranknet"
    ties_half: bool = True
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "NamConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown NAM settings: {sorted(unknown)}")
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass
class TrainLog:
    epochs: list[tuple[int, float, float]] = dataclasses.field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("nan")
    skipped: bool = False

    def text(self) -> str:
        rows = ["epoch\ttrain_loss\tval_spearman"]
        rows += [f"{e}\t{l:.6f}\t{v:.6f}" for e, l, v in self.epochs]
        return "\n".join(rows) + "\n"


def train_nam(
    features: np.ndarray,
    sets: Sequence[Sequence[int]],
    targets: Sequence[float],
    cfg: NamConfig | None = None,
) -> tuple[NamModel, TrainLog]:
    """Fit the block scorer on (block multiset, target) examples.

    ``features`` holds one row per catalog block; ``sets`` index into it.
    Early stopping tracks validation Spearman and restores the best epoch.
    """
    cfg = cfg or NamConfig()
    rng = np.random.default_rng(cfg.seed)
    targets = np.asarray(targets, dtype=np.float64)
    sets = [list(b) for b in sets]
    if len(sets) < 2:
        raise ValueError("need at least 2 examples")
    net = DenseNet((features.shape[1], *cfg.hidden, 1), rng, norm=cfg.norm)
    model = NamModel(net)
    logbook = TrainLog()
    if np.ptp(targets) == 0:
        log.warning("constant targets; returning the untrained model")
        logbook.skipped = True
        return model, logbook
    order = rng.permutation(len(sets))
    n_val = int(round(cfg.val_fraction * len(sets)))
    n_val = min(max(n_val, 1), len(sets) - 1)
    val, train = order[:n_val], order[n_val:]
    # Score only the blocks that appear, then remap set indices.
    used = sorted({b for s in sets for b in s})
    remap = {b: k for k, b in enumerate(used)}
    X = features[used]
    local = [[remap[b] for b in s] for s in sets]
    opt = Adam(model.params, lr=cfg.lr)
    best = model.copy()
    best_val = -np.inf
    bad = 0

    def validate() -> float:
        if len(val) < 2:
            return 0.0
        rho, _ = model.forward(X, [local[i] for i in val])
        return spearman(rho, targets[val])

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(train)
        losses = []
        for s in range(0, len(perm), cfg.batch_size):
            batch = perm[s:s + cfg.batch_size]
            if len(batch) < 2 and cfg.loss == "ranknet":
                continue
            loss, grads = nam_loss(model, X, [local[i] for i in batch], targets[batch],
                                   cfg.loss, cfg.ties_half)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
            losses.append(loss)
        v = validate()
        logbook.epochs.append((epoch, float(np.mean(losses)) if losses else 0.0, v))
        if v > best_val:
            best_val, best, bad = v, model.copy(), 0
            logbook.best_epoch = epoch
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    logbook.best_val = float(best_val)
    return best, logbook


# -- model files ----------------------------------------------------------------------

MODEL_FORMAT = "synthevo-model"
MODEL_VERSION = 1


def save_model(path: str | Path, net: DenseNet, kind: str, extra: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    """Versioned ``.npz``: a JSON header plus one array per parameter."""
    header = {
        "format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": kind,
        "sizes": list(net.sizes), "norm": net.norm,
        "shapes": [list(p.shape) for p in net.params], "extra": extra or {},
    }
    arrays = {f"p{k}": p for k, p in enumerate(net.params)}
    for k, v in (extra_arrays or {}).items():
        arrays[f"x_{k}"] = v
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_model(path: str | Path) -> tuple[DenseNet, dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a model file")
        if header.get("version") != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {header.get('version')}")
        net = DenseNet(header["sizes"], norm=header["norm"], zero=True)
        for k in range(len(net.params)):
            arr = data[f"p{k}"]
            if list(arr.shape) != header["shapes"][k]:
                raise ValueError(f"{path}: parameter {k} has the wrong shape")
            net.params[k][...] = arr
        extras = {k[2:]: data[k] for k in data.files if k.startswith("x_")}
    return net, header, extras
