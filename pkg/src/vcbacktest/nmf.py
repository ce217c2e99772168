"""Non-negative matrix factorization of the company x tag matrix.

Lee-Seung multiplicative updates for the Frobenius objective::

    H <- H * (W^T X) / (W^T W H + eps)
    W <- W * (X H^T) / (W H H^T + eps)

Both updates keep factors non-negative and never increase ``||X - WH||_F^2``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-9
FORMAT_VERSION = 1


@dataclass
class NmfModel:
    H: np.ndarray
    tag_vocabulary: tuple[str, ...]
    k: int
    final_error: float = 0.0
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def m(self) -> int:
        return self.H.shape[1]

    def binary_row(self, tags: Iterable[str]) -> np.ndarray:
        index = {t: i for i, t in enumerate(self.tag_vocabulary)}
        row = np.zeros(self.m)
        for t in tags:
            j = index.get(t)
            if j is not None:
                row[j] = 1.0
        return row

    def save(self, path) -> None:
        np.savez(path, H=self.H, meta=np.array(json.dumps(self.meta())))

    def meta(self) -> dict:
        return {"format": "nmf", "version": FORMAT_VERSION, "k": self.k,
                "tag_vocabulary": list(self.tag_vocabulary),
                "final_error": self.final_error, "iterations": self.iterations}

    @classmethod
    def load(cls, path) -> "NmfModel":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "nmf" or meta.get("version") != FORMAT_VERSION:
                raise ValueError(f"unsupported NMF file {path}")
            return cls(z["H"].copy(), tuple(meta["tag_vocabulary"]), meta["k"],
                       meta["final_error"], meta["iterations"])


def objective(X: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    R = X - W @ H
    return float(np.sum(R * R))


def nmf_fit(X, k: int = 30, max_iters: int = 500, tol: float = 1e-6, seed: int = 0,
            tag_vocabulary: Optional[Sequence[str]] = None, record_trace: bool = False):
    """Factor a non-negative ``n x m`` matrix into ``W (n x k)`` and ``H (k x m)``.

    Stops after ``max_iters`` or when the relative objective improvement
    falls below ``tol``.  Returns ``(model, W)``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or min(X.shape) < 1:
        raise ValueError("X must be a non-empty 2-D matrix")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")
    n, m = X.shape
    if not 1 <= k <= min(n, m):
        raise ValueError(f"rank k={k} must satisfy 1 <= k <= min(n, m) = {min(n, m)}")
    vocab = tuple(tag_vocabulary) if tag_vocabulary is not None else tuple(str(j) for j in range(m))
    if len(vocab) != m:
        raise ValueError("tag vocabulary length does not match matrix width")

    if not X.any():
        warnings.warn("all-zero matrix; returning zero factors", RuntimeWarning, stacklevel=2)
        return NmfModel(np.zeros((k, m)), vocab, k, 0.0, 0), np.zeros((n, k))

    rng = np.random.default_rng(seed)
    # uniform on (0, 1]
    W = 1.0 - rng.random((n, k))
    H = 1.0 - rng.random((k, m))
    scale = np.sqrt(X.mean() / k)
    W *= scale
    H *= scale

    prev = objective(X, W, H)
    trace = [prev] if record_trace else []
    it = 0
    for it in range(1, max_iters + 1):
        H *= (W.T @ X) / (W.T @ W @ H + EPS)
        W *= (X @ H.T) / (W @ (H @ H.T) + EPS)
        cur = objective(X, W, H)
        if record_trace:
            trace.append(cur)
        if prev > 0 and (prev - cur) / prev < tol:
            prev = cur
            break
        prev = cur
    # Zero rows of X give exactly-zero codes.
    W[~X.any(axis=1)] = 0.0
    model = NmfModel(H, vocab, k, float(np.sqrt(prev)), it, trace)
    logger.debug("nmf fit n=%d m=%d k=%d iters=%d err=%.4g", n, m, k, it, model.final_error)
    return model, W


def nmf_transform(model: NmfModel, rows, max_iters: int = 200, tol: float = 1e-8) -> np.ndarray:
    """Non-negative codes for new rows with ``H`` held fixed.

    Accepts a single ``m``-vector (returns a ``k``-vector) or an ``r x m``
    matrix (returns ``r x k``).  With ``H`` fixed the rows decouple, so each
    row runs its own stopping test and gets the same code whatever batch it
    arrives in.
    """
    X = np.asarray(rows, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.m:
        raise ValueError(f"row length {X.shape[1]} does not match vocabulary size {model.m}")
    H = model.H
    W = np.full((X.shape[0], model.k), 0.5)
    # einsum keeps a fixed summation order per row (BLAS kernels may not)
    G = np.einsum("im,jm->ij", H, H)
    XHt = np.einsum("rm,km->rk", X, H)
    xx = np.einsum("rm,rm->r", X, X)

    def row_objective(Wa, XHa, xxa):
        WG = np.einsum("rk,kj->rj", Wa, G)
        return xxa - 2.0 * np.einsum("rk,rk->r", Wa, XHa) + np.einsum("rk,rk->r", Wa, WG), WG

    prev, WG = row_objective(W, XHt, xx)
    active = np.flatnonzero(X.any(axis=1))
    for _ in range(max_iters):
        if active.size == 0:
            break
        Wa = W[active] * XHt[active] / (WG[active] + EPS)
        W[active] = Wa
        cur, WGa = row_objective(Wa, XHt[active], xx[active])
        WG[active] = WGa
        p = prev[active]
        done = (p <= 0) | ((p - cur) / np.where(p > 0, p, 1.0) < tol)
        prev[active] = cur
        active = active[~done]
    W[~X.any(axis=1)] = 0.0
    return W[0] if single else W


def binary_matrix(tag_lists: Sequence[Iterable[str]], vocabulary: Optional[Sequence[str]] = None):
    """Company x tag 0/1 matrix; the vocabulary defaults to the sorted tag union."""
    tag_lists = [tuple(t) for t in tag_lists]
    if vocabulary is None:
        vocabulary = sorted({t for tags in tag_lists for t in tags})
    index = {t: j for j, t in enumerate(vocabulary)}
    X = np.zeros((len(tag_lists), len(vocabulary)))
    for i, tags in enumerate(tag_lists):
        for t in tags:
            j = index.get(t)
            if j is not None:
                X[i, j] = 1.0
    return X, tuple(vocabulary)


def fit_tag_model(tag_lists: Sequence[Iterable[str]], k: int = 30, max_iters: int = 200,
                  tol: float = 1e-5, seed: int = 0) -> NmfModel:
    """Fit NMF on tag lists, shrinking ``k`` when the data is too small for it."""
    X, vocab = binary_matrix(tag_lists)
    if X.shape[1] == 0 or X.shape[0] == 0:
        return NmfModel(np.zeros((k, 0)), vocab, k)
    k_eff = min(k, *X.shape)
    if k_eff < k:
        logger.warning("tag matrix %s too small for k=%d; using k=%d", X.shape, k, k_eff)
    model, _ = nmf_fit(X, k_eff, max_iters=max_iters, tol=tol, seed=seed, tag_vocabulary=vocab)
    if k_eff < k:
        model = NmfModel(np.vstack([model.H, np.zeros((k - k_eff, model.m))]), vocab, k,
                         model.final_error, model.iterations)
    return model
