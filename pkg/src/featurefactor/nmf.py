"""Rank-k non-negative matrix factorization via multiplicative updates,
plus a PCA baseline for contrast.

The factorization A ~= H W (H: rows x k, W: k x c, both non-negative) is
optimized for squared Frobenius loss with the classical multiplicative
update rules

    H <- H * (A W^T) / (H W W^T + eps)
    W <- W * (H^T A) / (H^T H W + eps)

which keep both factors non-negative and never increase the loss. Exact
zeros stay zero under these rules, so initialization is strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DegenerateInput, RankTooLarge, ShapeMismatch
from .tensors import FeatureMatrix

_EPS = np.float32(1e-12)


class InitScheme(str, Enum):
    SEEDED_UNIFORM = "seeded_uniform"
    NNDSVD = "nndsvd"


@dataclass(frozen=True)
class NmfConfig:
    k: int = 3
    max_iters: int = 400
    rel_tol: float = 1e-4
    init: InitScheme = InitScheme.SEEDED_UNIFORM
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be >= 0")


@dataclass(frozen=True)
class Factorization:
    """Result of an NMF run: H (rows x k), W (k x c) and the loss trace."""

    H: np.ndarray
    W: np.ndarray
    loss_trace: tuple[float, ...]
    iterations_run: int

    @property
    def k(self) -> int:
        return self.W.shape[0]

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1]


@dataclass(frozen=True)
class PcaResult:
    projection: np.ndarray
    approximation_error: float


def frobenius_loss(a: np.ndarray, h: np.ndarray, w: np.ndarray) -> float:
    """Squared Frobenius norm ||A - HW||_F^2, accumulated in float64."""
    if h.shape[1] != w.shape[0] or a.shape != (h.shape[0], w.shape[1]):
        raise ShapeMismatch(
            f"incompatible shapes A{a.shape}, H{h.shape}, W{w.shape}"
        )
    resid = a.astype(np.float64) - h.astype(np.float64) @ w.astype(np.float64)
    return float(np.sum(resid * resid))


def multiplicative_update_step(
    a: np.ndarray, h: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One Lee-Seung update of H then W. Inputs must be non-negative."""
    if h.shape[1] != w.shape[0] or a.shape != (h.shape[0], w.shape[1]):
        raise ShapeMismatch(
            f"incompatible shapes A{a.shape}, H{h.shape}, W{w.shape}"
        )
    h = h * (a @ w.T) / (h @ (w @ w.T) + _EPS)
    w = w * (h.T @ a) / ((h.T @ h) @ w + _EPS)
    return h, w


def init_factors(
    cfg: NmfConfig, rows: int, cols: int, a: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Initial strictly positive H0 (rows x k), W0 (k x cols).

    SeededUniform draws entries uniform in (0, s] with s = sqrt(mean(A)/k),
    so the initial product HW has magnitude comparable to A. Nndsvd is
    deterministic and seed-independent; its structural zeros are filled with
    a small positive constant so no entry starts locked at zero.
    """
    if cfg.init is InitScheme.NNDSVD:
        if a is None:
            raise ValueError("nndsvd initialization requires the data matrix")
        return _nndsvd(a, cfg.k)
    scale = 1.0 if a is None else np.sqrt(np.float64(a.mean()) / cfg.k)
    rng = np.random.default_rng(cfg.seed)
    # 1 - U[0,1) lands in (0, 1], keeping entries strictly positive.
    h0 = (scale * (1.0 - rng.random((rows, cfg.k)))).astype(np.float32)
    w0 = (scale * (1.0 - rng.random((cfg.k, cols)))).astype(np.float32)
    return h0, w0


def _nndsvd(a: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Boutsidis-Gallopoulos NNDSVD with mean fill for zeros."""
    u, s, vt = np.linalg.svd(a.astype(np.float64), full_matrices=False)
    h = np.zeros((a.shape[0], k))
    w = np.zeros((k, a.shape[1]))
    h[:, 0] = np.sqrt(s[0]) * np.abs(u[:, 0])
    w[0, :] = np.sqrt(s[0]) * np.abs(vt[0, :])
    for j in range(1, k):
        x, y = u[:, j], vt[j, :]
        xp, xn = np.maximum(x, 0), np.maximum(-x, 0)
        yp, yn = np.maximum(y, 0), np.maximum(-y, 0)
        xp_n, xn_n = np.linalg.norm(xp), np.linalg.norm(xn)
        yp_n, yn_n = np.linalg.norm(yp), np.linalg.norm(yn)
        mp, mn = xp_n * yp_n, xn_n * yn_n
        if mp >= mn:
            uu = xp / xp_n if xp_n > 0 else xp
            vv = yp / yp_n if yp_n > 0 else yp
            sigma = mp
        else:
            uu = xn / xn_n if xn_n > 0 else xn
            vv = yn / yn_n if yn_n > 0 else yn
            sigma = mn
        lam = np.sqrt(s[j] * sigma)
        h[:, j] = lam * uu
        w[j, :] = lam * vv
    # small positive fill keeps entries unlocked without distorting the init
    fill = a.mean() / 100.0
    h[h <= 0] = fill
    w[w <= 0] = fill
    return h.astype(np.float32), w.astype(np.float32)


def nmf_factorize(a: FeatureMatrix | np.ndarray, cfg: NmfConfig) -> Factorization:
    """Factorize a non-negative matrix; deterministic for fixed seed and input.

    Stops after ``cfg.max_iters`` updates or when the relative loss change
    drops below ``cfg.rel_tol``. The loss trace is recorded every iteration,
    starting with the loss of the initial factors.
    """
    data = a.data if isinstance(a, FeatureMatrix) else np.asarray(a, dtype=np.float32)
    rows, cols = data.shape
    if cfg.k > min(rows, cols):
        raise RankTooLarge(f"k={cfg.k} exceeds min(rows, cols)={min(rows, cols)}")
    if not data.any():
        raise DegenerateInput("input matrix is all zeros")

    h, w = init_factors(cfg, rows, cols, data)
    trace = [frobenius_loss(data, h, w)]
    iters = 0
    for _ in range(cfg.max_iters):
        h, w = multiplicative_update_step(data, h, w)
        iters += 1
        loss = frobenius_loss(data, h, w)
        trace.append(loss)
        prev = trace[-2]
        if prev > 0 and (prev - loss) / prev < cfg.rel_tol:
            break
    return Factorization(H=h, W=w, loss_trace=tuple(trace), iterations_run=iters)


def pca_baseline(a: FeatureMatrix | np.ndarray, k: int) -> PcaResult:
    """Optimal rank-k approximation A V_k V_k^T via SVD, for contrast with NMF."""
    data = a.data if isinstance(a, FeatureMatrix) else np.asarray(a, dtype=np.float32)
    rows, cols = data.shape
    if k > min(rows, cols):
        raise RankTooLarge(f"k={k} exceeds min(rows, cols)={min(rows, cols)}")
    _, _, vt = np.linalg.svd(data.astype(np.float64), full_matrices=False)
    vk = vt[:k].T
    approx = (data.astype(np.float64) @ vk) @ vk.T
    resid = data.astype(np.float64) - approx
    return PcaResult(projection=vk, approximation_error=float(np.sum(resid * resid)))


class ActivationNMF(TransformerMixin, BaseEstimator):
    """Sklearn-style wrapper around :func:`nmf_factorize`.

    ``fit_transform(A)`` returns the spatial coefficient matrix H; the
    channel-space factors W are exposed as ``components_`` after fitting.
    """

    def __init__(self, k=3, max_iters=400, rel_tol=1e-4,
                 init=InitScheme.SEEDED_UNIFORM, seed=0):
        self.k = k
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.init = init
        self.seed = seed

    def _config(self) -> NmfConfig:
        return NmfConfig(
            k=self.k, max_iters=self.max_iters, rel_tol=self.rel_tol,
            init=InitScheme(self.init), seed=self.seed,
        )

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        result = nmf_factorize(np.asarray(X, dtype=np.float32), self._config())
        self.factorization_ = result
        self.components_ = result.W
        self.reconstruction_err_ = result.final_loss
        self.n_iter_ = result.iterations_run
        return result.H

    def transform(self, X):
        """Project new rows onto the fitted W by NNLS-style multiplicative updates."""
        if not hasattr(self, "components_"):
            raise RuntimeError("ActivationNMF must be fitted before transform")
        data = np.asarray(X, dtype=np.float32)
        w = self.components_
        rng = np.random.default_rng(self.seed)
        h = (1.0 - rng.random((data.shape[0], w.shape[0]))).astype(np.float32)
        h *= np.sqrt(max(data.mean(), _EPS) / w.shape[0])
        wwt = w @ w.T
        awt = data @ w.T
        for _ in range(self.max_iters):
            h = h * awt / (h @ wwt + _EPS)
        return h
