"""Multi-input tabular classifier written directly in numpy.

Inputs are the categorical codes (one embedding table per field) and the
dense block ``[z-scored numerics, missing masks, tag embedding]``.  These are
concatenated and fed through rectified hidden layers with inverted dropout
to a single sigmoid output.  Training minimizes class-weighted binary
cross-entropy with Adam.

Backprop is hand-written, so :func:`gradient_check` compares it against
central finite differences.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .features import FeatureSchema, FeatureVector, stack

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ClassifierConfig:
    embedding_dim_per_categorical: int = 8
    hidden_sizes: tuple[int, ...] = (128, 64)
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    positive_class_weight: Union[float, str] = "auto"
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must not be empty")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.positive_class_weight != "auto" and not float(self.positive_class_weight) > 0:
            raise ValueError("positive_class_weight must be 'auto' or positive")


# -- building blocks (also used by the investor autoencoder) ------------------


def uniform_fan_in(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 6.0) -> np.ndarray:
    limit = np.sqrt(gain / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Adam:
    """Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1 - b1 ** self.t
        corr2 = 1 - b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def mlp_forward(params: dict, x: np.ndarray, n_layers: int, *, prefix: str = "",
                dropout: float = 0.0, rng: Optional[np.random.Generator] = None,
                final_activation: bool = False, rowwise: bool = False):
    """Stack of dense layers, ReLU between them.  Returns ``(out, cache)``.

    ``rowwise`` swaps BLAS for einsum, whose per-row summation order does not
    depend on how many rows are in the batch.
    """
    cache = []
    h = x
    for i in range(n_layers):
        W, b = params[f"{prefix}W{i}"], params[f"{prefix}b{i}"]
        z = (np.einsum("ij,jk->ik", h, W) if rowwise else h @ W) + b
        last = i == n_layers - 1
        if last and not final_activation:
            cache.append((h, None, None))
            h = z
            break
        a = np.maximum(z, 0.0)
        keep = None
        if dropout > 0 and rng is not None and not last:
            keep = (rng.random(a.shape) >= dropout) / (1.0 - dropout)
            a = a * keep
        cache.append((h, z, keep))
        h = a
    return h, cache


def mlp_backward(params: dict, cache, dout: np.ndarray, n_layers: int, *, prefix: str = "",
                 final_activation: bool = False):
    """Gradients for :func:`mlp_forward`; returns ``(grads, d_input)``."""
    grads = {}
    d = dout
    for i in reversed(range(n_layers)):
        h_in, z, keep = cache[i]
        if z is not None:
            if keep is not None:
                d = d * keep
            d = d * (z > 0)
        grads[f"{prefix}W{i}"] = h_in.T @ d
        grads[f"{prefix}b{i}"] = d.sum(axis=0)
        d = d @ params[f"{prefix}W{i}"].T
    return grads, d


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


def weighted_bce(logits: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted-mean binary cross-entropy and its gradient w.r.t. the logits."""
    total = w.sum()
    loss = -(w * (y * _log_sigmoid(logits) + (1 - y) * _log_sigmoid(-logits))).sum() / total
    dlogits = w * (sigmoid(logits) - y) / total
    return float(loss), dlogits


# -- the classifier ------------------------------------------------------------


@dataclass(eq=False)
class Classifier:
    schema: FeatureSchema
    config: ClassifierConfig
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden_sizes) + 1

    @property
    def input_width(self) -> int:
        return len(self.schema.categorical_fields) * self.config.embedding_dim_per_categorical \
            + self.schema.dense_width

    # forward / backward

    def _inputs(self, codes: np.ndarray, dense: np.ndarray) -> np.ndarray:
        parts = [self.params[f"emb{j}"][codes[:, j]] for j in range(codes.shape[1])]
        parts.append(dense)
        return np.concatenate(parts, axis=1) if parts else dense

    def logits(self, codes: np.ndarray, dense: np.ndarray, *, rng=None, rowwise: bool = False):
        x = self._inputs(codes, dense)
        out, cache = mlp_forward(self.params, x, self.n_layers,
                                 dropout=self.config.dropout_rate if rng is not None else 0.0, rng=rng,
                                 rowwise=rowwise)
        return out[:, 0], cache

    def loss_and_grads(self, codes, dense, y, w, *, rng=None):
        logits, cache = self.logits(codes, dense, rng=rng)
        loss, dlogits = weighted_bce(logits, y, w)
        grads, dx = mlp_backward(self.params, cache, dlogits[:, None], self.n_layers)
        e = self.config.embedding_dim_per_categorical
        for j in range(codes.shape[1]):
            table = self.params[f"emb{j}"]
            g = np.zeros_like(table)
            np.add.at(g, codes[:, j], dx[:, j * e:(j + 1) * e])
            grads[f"emb{j}"] = g
        return loss, grads

    def _check(self, codes: np.ndarray, dense: np.ndarray) -> None:
        c = len(self.schema.categorical_fields)
        if codes.shape[1] != c or dense.shape[1] != self.schema.dense_width:
            raise ValueError(
                f"inputs ({codes.shape[1]} codes, {dense.shape[1]} dense) do not match schema "
                f"({c} codes, {self.schema.dense_width} dense)")
        for j, size in enumerate(self.schema.vocab_sizes):
            if codes.shape[0] and (codes[:, j].min() < 0 or codes[:, j].max() >= size):
                raise ValueError(f"categorical code out of range for field {j}")

    def predict_matrix(self, codes: np.ndarray, dense: np.ndarray) -> np.ndarray:
        self._check(codes, dense)
        if codes.shape[0] == 0:
            return np.zeros(0)
        # a company's score must not depend on which other rows share the batch
        logits, _ = self.logits(codes, dense, rowwise=True)
        return sigmoid(logits)

    # persistence

    def save(self, path) -> None:
        meta = {"format": "classifier", "version": FORMAT_VERSION, "schema": self.schema.to_dict(),
                "config": asdict(self.config), "loss_curve": self.loss_curve,
                "shapes": {k: list(v.shape) for k, v in self.params.items()}}
        np.savez(path, meta=np.array(json.dumps(meta)), **{f"p_{k}": v for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "Classifier":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "classifier" or meta.get("version") != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint {path}")
            params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p_")}
        for k, shape in meta["shapes"].items():
            if list(params[k].shape) != shape:
                raise ValueError(f"checkpoint parameter {k} has shape {params[k].shape}, expected {shape}")
        cfg = ClassifierConfig(**meta["config"])
        return cls(FeatureSchema.from_dict(meta["schema"]), cfg, params, meta["loss_curve"])


def init_classifier(schema: FeatureSchema, cfg: ClassifierConfig = ClassifierConfig()) -> Classifier:
    """Fresh parameters: small uniform embeddings, fan-in scaled uniform dense weights."""
    if not schema.categorical_fields and schema.dense_width == 0:
        raise ValueError("schema has no inputs")
    rng = np.random.default_rng(cfg.seed)
    e = cfg.embedding_dim_per_categorical
    params: dict[str, np.ndarray] = {}
    for j, size in enumerate(schema.vocab_sizes):
        params[f"emb{j}"] = rng.uniform(-0.05, 0.05, size=(size, e))
    widths = [len(schema.vocab_sizes) * e + schema.dense_width, *cfg.hidden_sizes, 1]
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        params[f"W{i}"] = uniform_fan_in(rng, widths[i], widths[i + 1], 3.0 if last else 6.0)
        params[f"b{i}"] = np.zeros(widths[i + 1])
    return Classifier(schema, cfg, params)


def _as_matrices(model: Classifier, data):
    if isinstance(data, tuple):
        return data
    return stack(data, model.schema)


def _class_weights(y: np.ndarray, cfg: ClassifierConfig) -> np.ndarray:
    n_pos = float(y.sum())
    n_neg = float(len(y) - n_pos)
    if cfg.positive_class_weight == "auto":
        pw = n_neg / n_pos if n_pos else 1.0
    else:
        pw = float(cfg.positive_class_weight)
    return np.where(y > 0.5, pw, 1.0)


def train_classifier(model: Classifier, data, labels: Sequence[int],
                     cfg: Optional[ClassifierConfig] = None) -> Classifier:
    """Mini-batch Adam on weighted cross-entropy.

    ``data`` is a list of :class:`FeatureVector` or a ``(codes, dense)``
    pair.  ``loss_curve`` holds the full-data loss (dropout off) before
    training and after each epoch.
    """
    cfg = cfg or model.config
    codes, dense = _as_matrices(model, data)
    y = np.asarray(labels, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    model._check(codes, dense)
    w = _class_weights(y, cfg)

    def full_loss() -> float:
        logits, _ = model.logits(codes, dense)
        return weighted_bce(logits, y, w)[0]

    if y.min() == y.max():
        warnings.warn("single-class training data; fitting a constant prior model", RuntimeWarning,
                      stacklevel=2)
        prior = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
        last = model.n_layers - 1
        model.params[f"W{last}"][:] = 0.0
        model.params[f"b{last}"][:] = np.log(prior / (1 - prior))
        model.loss_curve = [full_loss()]
        return model

    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params, cfg.learning_rate)
    curve = [full_loss()]
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(codes[idx], dense[idx], y[idx], w[idx],
                                               rng=rng if cfg.dropout_rate > 0 else None)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}; "
                    f"last full-data losses {curve[-3:]}")
            opt.step(model.params, grads)
        curve.append(full_loss())
        if not np.isfinite(curve[-1]):
            raise TrainingError(f"non-finite loss after epoch {epoch}; curve {curve[-3:]}")
    model.loss_curve = curve
    logger.debug("trained on %d rows: loss %.4f -> %.4f", n, curve[0], curve[-1])
    return model


def predict(model: Classifier, vectors) -> np.ndarray:
    """Success probabilities; dropout is off so repeated calls agree exactly."""
    codes, dense = _as_matrices(model, vectors)
    return model.predict_matrix(codes, dense)


def gradient_check(model: Classifier, data, labels: Sequence[int], *, h: float = 1e-4,
                   samples_per_param: int = 20, seed: int = 0, weights=None) -> float:
    """Max relative error between backprop and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)`` over a random sample
    of entries from every parameter array (all entries when small).
    """
    codes, dense = _as_matrices(model, data)
    y = np.asarray(labels, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    _, grads = model.loss_and_grads(codes, dense, y, w)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        if flat.size <= samples_per_param:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, samples_per_param, replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            lp = weighted_bce(model.logits(codes, dense)[0], y, w)[0]
            flat[i] = old - h
            lm = weighted_bce(model.logits(codes, dense)[0], y, w)[0]
            flat[i] = old
            num = (lp - lm) / (2 * h)
            ana = grads[name].reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst


def write_loss_curve(model: Classifier, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(model.loss_curve):
            fh.write(f"{i},{v!r}\n")
    return path
