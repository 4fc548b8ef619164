"""Closed-form minimizers, local convexity constants and alignment distances.

For a cross-covariance ``S`` with singular values ``l_1 >= l_2 >= ...`` and a
strict gap ``l_r > l_{r+1}``, the linear loss is minimized by

    G1 = V (I + L/alpha)^{1/2} P^T / sqrt(2),   G2 = V (I + L/alpha)^{1/2} Q^T / sqrt(2)

with ``P``, ``Q`` the top-``r`` singular vectors and ``V`` any orthogonal
``r x r`` matrix (fixed to the identity here). The minimum value is
``-(1/2) sum_{i<=r} (l_i + l_i^2 / (2 alpha))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .loss import EncoderPair, SigmaLike, _sigma
from .synthdata import SpikedModelSpec, population_cross_covariance

GAP_TOL = 1e-10
PINV_RTOL = 1e-12


class DegenerateGapError(ValueError):
    """Raised when ``l_r - l_{r+1}`` is not strictly positive."""

    def __init__(self, r: int, gap: float):
        super().__init__(f"singular value gap at rank {r} is {gap:.3e} (<= {GAP_TOL:g})")
        self.r = r
        self.gap = gap


@dataclass(frozen=True, eq=False)
class OracleSolution:
    G_hat: EncoderPair
    V: np.ndarray
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    optimal_loss: float
    alpha: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "G1": self.G_hat.G1.tolist(),
            "G2": self.G_hat.G2.tolist(),
            "V": self.V.tolist(),
            "singular_values": self.singular_values.tolist(),
            "left_vectors": self.left_vectors.tolist(),
            "right_vectors": self.right_vectors.tolist(),
            "optimal_loss": self.optimal_loss,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class ConvexityCertificate:
    beta_u: float
    beta_l: float
    gamma: float
    spectral_gap: float


@dataclass(frozen=True, eq=False)
class AlignmentReport:
    procrustes_dist: float
    procrustes_map: np.ndarray
    linear_error: float
    linear_map: np.ndarray


def _svd(S: np.ndarray):
    P, lam, Qt = np.linalg.svd(S)
    Q = Qt.T
    k = lam.size
    P, Q = P[:, :k], Q[:, :k]
    # largest-magnitude entry of each left vector positive
    idx = np.argmax(np.abs(P), axis=0)
    signs = np.sign(P[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    return P * signs, lam, Q * signs


def _gap(lam: np.ndarray, r: int) -> float:
    if not 1 <= r <= lam.size:
        raise ValueError(f"rank r={r} outside [1, {lam.size}]")
    nxt = lam[r] if r < lam.size else 0.0
    return float(lam[r - 1] - nxt)


def empirical_minimizer(sigma_hat: SigmaLike, r: int, alpha: float) -> OracleSolution:
    """Global minimizer of the linear loss for cross-covariance ``sigma_hat``.

    Raises
    ------
    DegenerateGapError
        If the ``r``-th singular value gap is at most ``GAP_TOL``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    S = _sigma(sigma_hat)
    P, lam, Q = _svd(S)
    gap = _gap(lam, r)
    if gap <= GAP_TOL:
        raise DegenerateGapError(r, gap)
    top = lam[:r]
    scale = np.sqrt((1.0 + top / alpha) / 2.0)[:, None]
    G = EncoderPair(scale * P[:, :r].T, scale * Q[:, :r].T)
    opt = -0.5 * float(np.sum(top + top ** 2 / (2.0 * alpha)))
    return OracleSolution(G, np.eye(r), lam, P[:, :r], Q[:, :r], opt, float(alpha))


def population_minimizer(spec: SpikedModelSpec, alpha: float) -> OracleSolution:
    """Minimizer of the expected loss, i.e. the oracle at ``U1 diag(sigma_z) U2^T``."""
    return empirical_minimizer(population_cross_covariance(spec), spec.r, alpha)


def convexity_certificate(sigma_hat: SigmaLike, r: int, alpha: float) -> ConvexityCertificate:
    """Smoothness / directional strong convexity constants around the minimizer.

    ``beta_u = 8 l_1 + 12 alpha``, ``beta_l = (l_r - l_{r+1}) / 2`` and
    ``gamma = min(1, (l_r - l_{r+1}) / (18 alpha sqrt(1 + l_1 / alpha)))``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    lam = np.linalg.svd(_sigma(sigma_hat), compute_uv=False)
    gap = _gap(lam, r)
    if gap <= GAP_TOL:
        raise DegenerateGapError(r, gap)
    l1 = float(lam[0])
    gamma = min(1.0, gap / (18.0 * alpha * np.sqrt(1.0 + l1 / alpha)))
    return ConvexityCertificate(8.0 * l1 + 12.0 * alpha, gap / 2.0, float(gamma), gap)


def procrustes_distance(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    """``min_O ||O A - B||_F`` over orthogonal ``O``, and the minimizing ``O``.

    With ``A B^T = U S W^T`` the minimizer is ``O = W U^T``; then ``O A B^T``
    is symmetric PSD.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    U, _, Wt = np.linalg.svd(A @ B.T)
    O = Wt.T @ U.T
    return float(np.linalg.norm(O @ A - B)), O


def linear_alignment_error(G: np.ndarray, G_ref: np.ndarray) -> tuple[float, np.ndarray]:
    """``min_A ||A G - G_ref||_F`` over all ``r x r`` matrices and the minimizer."""
    G = np.asarray(G, dtype=np.float64)
    G_ref = np.asarray(G_ref, dtype=np.float64)
    if G.shape != G_ref.shape:
        raise ValueError(f"shape mismatch {G.shape} vs {G_ref.shape}")
    A = G_ref @ G.T @ np.linalg.pinv(G @ G.T, rcond=PINV_RTOL, hermitian=True)
    return float(np.linalg.norm(A @ G - G_ref)), A


def alignment_report(A: np.ndarray, B: np.ndarray) -> AlignmentReport:
    dist, O = procrustes_distance(A, B)
    err, M = linear_alignment_error(A, B)
    return AlignmentReport(dist, O, err, M)


def excess_information_loss(G: EncoderPair, G_ref: EncoderPair) -> float:
    """Worse of the two per-modality linear alignment errors."""
    e1, _ = linear_alignment_error(G.G1, G_ref.G1)
    e2, _ = linear_alignment_error(G.G2, G_ref.G2)
    return max(e1, e2)
