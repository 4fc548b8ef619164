"""Contrastive losses for paired linear encoders.

Two losses are provided. The linear loss

    L(G) = -tr(G1 S G2^T) + (alpha / 4) ||G G^T - I||_F^2

where ``S`` is the U-statistic cross-covariance, and the symmetric softmax
(CLIP-style) loss over a batch of similarities ``s_ij = Sim(G1 x_i, G2 xt_j)``.
For inner-product similarity, ``tau * (L_softmax - 2 log b) / (2 (1 - 1/b))``
tends to the unpenalized linear loss as ``tau -> inf``.

Gradients are returned as a single ``(r, d1 + d2)`` matrix ``[dG1, dG2]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np
from scipy.special import log_softmax

from .synthdata import PairedDataset


@dataclass(frozen=True, eq=False)
class EncoderPair:
    """Linear encoders ``f(x) = G1 x`` and ``f~(xt) = G2 xt``."""

    G1: np.ndarray
    G2: np.ndarray

    def __post_init__(self) -> None:
        G1 = np.array(self.G1, dtype=np.float64, ndmin=2)
        G2 = np.array(self.G2, dtype=np.float64, ndmin=2)
        if G1.ndim != 2 or G2.ndim != 2 or G1.shape[0] != G2.shape[0]:
            raise ValueError(f"inconsistent encoder shapes {G1.shape} and {G2.shape}")
        if not (np.isfinite(G1).all() and np.isfinite(G2).all()):
            raise ValueError("encoder entries must be finite")
        object.__setattr__(self, "G1", G1)
        object.__setattr__(self, "G2", G2)

    @classmethod
    def from_full(cls, G: np.ndarray, d1: int) -> "EncoderPair":
        G = np.asarray(G, dtype=np.float64)
        return cls(G[:, :d1], G[:, d1:])

    @property
    def G(self) -> np.ndarray:
        return np.hstack([self.G1, self.G2])

    @property
    def r(self) -> int:
        return self.G1.shape[0]

    @property
    def d1(self) -> int:
        return self.G1.shape[1]

    @property
    def d2(self) -> int:
        return self.G2.shape[1]

    def rotate(self, O: np.ndarray) -> "EncoderPair":
        return EncoderPair(O @ self.G1, O @ self.G2)


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    tau: float = 1.0
    similarity: Literal["inner_product", "cosine"] = "inner_product"

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.tau <= 0:
            raise ValueError(f"alpha and tau must be positive, got {self.alpha}, {self.tau}")
        if self.similarity not in ("inner_product", "cosine"):
            raise ValueError(f"unknown similarity {self.similarity!r}")


@dataclass(frozen=True, eq=False)
class CrossCovariance:
    matrix: np.ndarray
    source: Literal["full", "batch"]
    n_or_b: int


SigmaLike = Union[CrossCovariance, np.ndarray]


def _sigma(s: SigmaLike) -> np.ndarray:
    return s.matrix if isinstance(s, CrossCovariance) else np.asarray(s, dtype=np.float64)


def _u_statistic(X: np.ndarray, Xt: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    mu = X.mean(axis=0)
    mut = Xt.mean(axis=0)
    return (X.T @ Xt) / (n - 1) - (n / (n - 1)) * np.outer(mu, mut)


def cross_covariance(ds: PairedDataset) -> CrossCovariance:
    """``(1/n) sum_i x_i xt_i^T - 1/(n(n-1)) sum_{i != j} x_i xt_j^T`` in O(n d1 d2)."""
    return CrossCovariance(_u_statistic(ds.X, ds.Xt), "full", ds.n)


def _check_batch(batch: Sequence[int], n: int) -> np.ndarray:
    idx = np.asarray(batch, dtype=np.intp)
    if idx.ndim != 1 or idx.size < 2:
        raise ValueError(f"batch must hold at least 2 indices, got {idx.size}")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError(f"batch indices out of range [0, {n})")
    if np.unique(idx).size != idx.size:
        raise ValueError("batch indices must be unique")
    return idx


def batch_cross_covariance(ds: PairedDataset, batch: Sequence[int]) -> CrossCovariance:
    idx = _check_batch(batch, ds.n)
    return CrossCovariance(_u_statistic(ds.X[idx], ds.Xt[idx]), "batch", idx.size)


def _split(G: EncoderPair, S: np.ndarray) -> None:
    if S.shape != (G.d1, G.d2):
        raise ValueError(f"cross-covariance shape {S.shape} does not match encoders ({G.d1}, {G.d2})")


def penalty(G: EncoderPair, alpha: float) -> float:
    M = G.G @ G.G.T - np.eye(G.r)
    return float(alpha / 4.0 * np.sum(M * M))


def linear_loss(G: EncoderPair, sigma_hat: SigmaLike, alpha: float) -> float:
    S = _sigma(sigma_hat)
    _split(G, S)
    return float(-np.trace(G.G1 @ S @ G.G2.T) + penalty(G, alpha))


def linear_grad(G: EncoderPair, sigma_hat: SigmaLike, alpha: float) -> np.ndarray:
    S = _sigma(sigma_hat)
    _split(G, S)
    full = G.G
    pen = alpha * (full @ full.T - np.eye(G.r)) @ full
    pen[:, :G.d1] -= G.G2 @ S.T
    pen[:, G.d1:] -= G.G1 @ S
    return pen


def hessian_quadratic_form(G: EncoderPair, sigma_hat: SigmaLike, alpha: float,
                           Z: np.ndarray) -> float:
    """``vec(Z)^T H vec(Z)`` for the Hessian ``H`` of :func:`linear_loss` at ``G``.

    Uses the trace identity

        -2 tr(Z1^T Z2 S^T) - a tr(Z^T Z) + a tr(Z G^T Z G^T)
            + a tr(Z^T G G^T Z) + a tr(Z^T Z G^T G)

    so the ``rd x rd`` Hessian is never formed.
    """
    S = _sigma(sigma_hat)
    _split(G, S)
    Z = np.asarray(Z, dtype=np.float64)
    full = G.G
    if Z.shape != full.shape:
        raise ValueError(f"direction shape {Z.shape} != {full.shape}")
    Z1, Z2 = Z[:, :G.d1], Z[:, G.d1:]
    ZGt = Z @ full.T
    val = -2.0 * np.sum((Z1 @ S) * Z2)
    val += alpha * (-np.sum(Z * Z) + np.sum(ZGt * ZGt.T)
                    + np.sum((full @ full.T) * (Z @ Z.T)) + np.sum(ZGt * ZGt))
    return float(val)


def _embed(G: EncoderPair, ds: PairedDataset, batch: Optional[Sequence[int]]):
    if G.d1 != ds.d1 or G.d2 != ds.d2:
        raise ValueError("encoder dimensions do not match the dataset")
    idx = np.arange(ds.n) if batch is None else _check_batch(batch, ds.n)
    X, Xt = ds.X[idx], ds.Xt[idx]
    return X, Xt, X @ G.G1.T, Xt @ G.G2.T


def _normalize(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(F, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero embedding under cosine similarity")
    return F / norms[:, None], norms


def _similarities(F, Ft, cfg: LossConfig):
    if cfg.similarity == "cosine":
        Fn, nf = _normalize(F)
        Ftn, nft = _normalize(Ft)
        return Fn @ Ftn.T, (Fn, nf, Ftn, nft)
    return F @ Ft.T, None


def clip_loss(G: EncoderPair, ds: PairedDataset, batch: Optional[Sequence[int]],
              cfg: LossConfig) -> float:
    """Symmetric softmax contrastive loss over ``batch`` (all pairs when ``None``)."""
    _, _, F, Ft = _embed(G, ds, batch)
    S, _ = _similarities(F, Ft, cfg)
    logits = S / cfg.tau
    b = logits.shape[0]
    rows = np.diagonal(log_softmax(logits, axis=1))
    cols = np.diagonal(log_softmax(logits, axis=0))
    return float(-(rows.sum() + cols.sum()) / b)


def clip_grad(G: EncoderPair, ds: PairedDataset, batch: Optional[Sequence[int]],
              cfg: LossConfig) -> np.ndarray:
    X, Xt, F, Ft = _embed(G, ds, batch)
    S, cache = _similarities(F, Ft, cfg)
    logits = S / cfg.tau
    b = logits.shape[0]
    P = np.exp(log_softmax(logits, axis=1)) + np.exp(log_softmax(logits, axis=0))
    dS = (P - 2.0 * np.eye(b)) / (b * cfg.tau)
    if cache is None:
        dF, dFt = dS @ Ft, dS.T @ F
    else:
        Fn, nf, Ftn, nft = cache
        dFn, dFtn = dS @ Ftn, dS.T @ Fn
        dF = (dFn - Fn * np.sum(dFn * Fn, axis=1, keepdims=True)) / nf[:, None]
        dFt = (dFtn - Ftn * np.sum(dFtn * Ftn, axis=1, keepdims=True)) / nft[:, None]
    return np.hstack([dF.T @ X, dFt.T @ Xt])
