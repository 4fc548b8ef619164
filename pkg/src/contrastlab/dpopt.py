"""Private mini-batch gradient descent with per-batch clipping.

Each iteration samples a batch of ``b`` distinct indices, computes the batch
gradient ``g`` of the contrastive loss (which does not split into per-example
terms, so the whole batch gradient is clipped), and steps

    G <- G - eta * (min(1, c / ||g||_F) * g + sigma * c * Gamma)

with ``Gamma`` a standard normal ``r x d`` matrix.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np

from ._rng import stream
from .loss import (EncoderPair, LossConfig, _u_statistic, clip_grad, clip_loss,
                   cross_covariance, linear_grad, linear_loss)
from .oracle import OracleSolution, procrustes_distance
from .synthdata import PairedDataset

DIVERGENCE_NORM = 1e6
TRACE_COLUMNS = ("t", "loss", "grad_norm", "clip_factor", "noise_norm", "dist_to_oracle")


class DivergenceError(RuntimeError):
    def __init__(self, t: int, reason: str):
        super().__init__(f"training diverged at iteration {t}: {reason}")
        self.t = t


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one private training run.

    ``sigma = 0`` gives ordinary (non-private) clipped mini-batch descent.
    """

    eta: float
    T: int
    b: int
    c: float
    sigma: float = 0.0
    loss_kind: Literal["linear", "softmax"] = "linear"
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eta <= 0 or self.c <= 0:
            raise ValueError(f"eta and c must be positive, got eta={self.eta}, c={self.c}")
        if self.T < 0 or self.b < 1:
            raise ValueError(f"need T >= 0 and b >= 1, got T={self.T}, b={self.b}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.loss_kind not in ("linear", "softmax"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class TrainTrace:
    """Per-iteration record; row ``t`` describes the step taken from ``G(t)``.

    ``dist_to_oracle[t]`` is the Procrustes distance of ``G(t)`` to the oracle
    and ``final_dist`` that of ``G(T)``. The optional ``grads``, ``noises`` and
    ``iterates`` hold the raw matrices when the run keeps them.
    """

    t: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    clip_factor: np.ndarray
    noise_norm: np.ndarray
    dist_to_oracle: Optional[np.ndarray]
    final: EncoderPair
    final_dist: Optional[float] = None
    grads: Optional[list] = None
    noises: Optional[list] = None
    iterates: Optional[list] = None

    def __len__(self) -> int:
        return int(self.t.size)

    def distances(self) -> np.ndarray:
        """Distances of ``G(0), ..., G(T)`` to the oracle."""
        if self.dist_to_oracle is None:
            raise ValueError("trace was recorded without an oracle")
        return np.append(self.dist_to_oracle, self.final_dist)

    def to_csv(self, path: Optional[str | Path] = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for i in range(len(self)):
            dist = "" if self.dist_to_oracle is None else repr(float(self.dist_to_oracle[i]))
            w.writerow([int(self.t[i]), repr(float(self.loss[i])), repr(float(self.grad_norm[i])),
                        repr(float(self.clip_factor[i])), repr(float(self.noise_norm[i])), dist])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def sample_batch(n: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """``b`` distinct indices drawn uniformly from ``range(n)``, sorted."""
    if not 1 <= b <= n:
        raise ValueError(f"need 1 <= b <= n, got b={b}, n={n}")
    if b == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=b, replace=False))


def clip_gradient(g: np.ndarray, c: float) -> tuple[np.ndarray, float]:
    """Scale ``g`` to Frobenius norm at most ``c``; a zero gradient gets factor 1."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    norm = float(np.linalg.norm(g))
    h = 1.0 if norm <= c else c / norm
    return h * g, h


def init_near_oracle(oracle: OracleSolution, rho: float, seed: int) -> EncoderPair:
    """``G_hat + rho * N / ||N||_F`` for a seeded Gaussian ``N``."""
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    G = oracle.G_hat.G
    N = stream(seed, "init").standard_normal(G.shape)
    return EncoderPair.from_full(G + rho * N / np.linalg.norm(N), oracle.G_hat.d1)


def dp_train(ds: PairedDataset, G0: EncoderPair, cfg: TrainConfig,
             oracle: Optional[OracleSolution] = None, keep: bool = False
             ) -> tuple[EncoderPair, TrainTrace]:
    """Run ``cfg.T`` private descent steps from ``G0``.

    Batches and noise come from separate streams of ``cfg.seed``, so runs that
    differ only in ``sigma`` see the same batch sequence.

    Raises
    ------
    DivergenceError
        On a non-finite loss or iterate, or ``||G||_F > 1e6``.
    """
    if G0.d1 != ds.d1 or G0.d2 != ds.d2:
        raise ValueError(f"encoder dims ({G0.d1}, {G0.d2}) do not match data ({ds.d1}, {ds.d2})")
    if cfg.b > ds.n:
        raise ValueError(f"batch size {cfg.b} exceeds n={ds.n}")
    if cfg.b < 2:
        raise ValueError("the contrastive loss needs batches of at least 2 pairs")
    T, d1 = cfg.T, ds.d1
    alpha = cfg.loss_cfg.alpha
    batches = stream(cfg.seed, "batch")
    noise_rng = stream(cfg.seed, "noise")
    full_sigma = cross_covariance(ds).matrix if cfg.loss_kind == "linear" else None
    G_ref = oracle.G_hat.G if oracle is not None else None

    losses = np.empty(T)
    gnorms = np.empty(T)
    hs = np.empty(T)
    nnorms = np.empty(T)
    dists = np.empty(T) if oracle is not None else None
    grads, noises, iterates = ([], [], []) if keep else (None, None, None)

    G = G0.G.copy()
    for t in range(T):
        enc = EncoderPair.from_full(G, d1)
        idx = sample_batch(ds.n, cfg.b, batches)
        if cfg.loss_kind == "linear":
            S = full_sigma if cfg.b == ds.n else _u_statistic(ds.X[idx], ds.Xt[idx])
            g = linear_grad(enc, S, alpha)
            losses[t] = linear_loss(enc, S, alpha)
        else:
            g = clip_grad(enc, ds, idx, cfg.loss_cfg)
            losses[t] = clip_loss(enc, ds, idx, cfg.loss_cfg)
        if not np.isfinite(losses[t]):
            raise DivergenceError(t, "non-finite loss")
        gbar, h = clip_gradient(g, cfg.c)
        gnorms[t] = np.linalg.norm(g)
        hs[t] = h
        if cfg.sigma > 0:
            noise = cfg.sigma * cfg.c * noise_rng.standard_normal(G.shape)
        else:
            noise = np.zeros_like(G)
        nnorms[t] = np.linalg.norm(noise)
        if dists is not None:
            dists[t] = procrustes_distance(G, G_ref)[0]
        if keep:
            grads.append(g)
            noises.append(noise)
            iterates.append(G.copy())
        G = G - cfg.eta * (gbar + noise)
        if not np.all(np.isfinite(G)):
            raise DivergenceError(t, "non-finite parameters")
        if np.linalg.norm(G) > DIVERGENCE_NORM:
            raise DivergenceError(t, f"||G||_F exceeded {DIVERGENCE_NORM:g}")

    final = EncoderPair.from_full(G, d1)
    final_dist = procrustes_distance(G, G_ref)[0] if oracle is not None else None
    if keep:
        iterates.append(G.copy())
    trace = TrainTrace(np.arange(T), losses, gnorms, hs, nnorms, dists, final, final_dist,
                       grads, noises, iterates)
    return final, trace
