"""Paired two-modality data from a shared low-rank latent signal.

Each pair is ``x = U1 z + xi`` and ``xt = U2 z + xi_t`` with ``z ~ N(0, diag(sigma_z))``
and independent Gaussian noise in each modality. ``U1`` and ``U2`` have
orthonormal columns and ``max(sigma_z) == 1``, so the population
cross-covariance ``U1 diag(sigma_z) U2^T`` has top singular value one.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ._rng import stream

_ORTHO_TOL = 1e-10
SCHEMA_VERSION = 1


def _orthonormal_factor(rng: np.random.Generator, d: int, r: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, r)))
    # first nonzero entry of each column positive
    for j in range(r):
        nz = np.flatnonzero(np.abs(q[:, j]) > 1e-14)
        if nz.size and q[nz[0], j] < 0:
            q[:, j] = -q[:, j]
    return q


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def effective_rank(a: np.ndarray) -> float:
    """Trace over operator norm; ``nan`` for the zero matrix."""
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a, 2)
    if norm == 0.0:
        return float("nan")
    return float(np.trace(a) / norm)


@dataclass(frozen=True, eq=False)
class SpikedModelSpec:
    """Ground-truth generative model for paired data.

    Attributes
    ----------
    U1 : (d1, r) ndarray
        Loadings of the first modality, orthonormal columns.
    U2 : (d2, r) ndarray
        Loadings of the second modality, orthonormal columns.
    sigma_z : (r,) ndarray
        Latent variances, positive, nonincreasing, largest entry exactly 1.
    noise_cov_1, noise_cov_2 : ndarray
        Symmetric PSD noise covariances, ``(d1, d1)`` and ``(d2, d2)``.
    """

    U1: np.ndarray
    U2: np.ndarray
    sigma_z: np.ndarray
    noise_cov_1: np.ndarray
    noise_cov_2: np.ndarray

    def __post_init__(self) -> None:
        for name in ("U1", "U2", "sigma_z", "noise_cov_1", "noise_cov_2"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        U1, U2, s = self.U1, self.U2, self.sigma_z
        if U1.ndim != 2 or U2.ndim != 2 or s.ndim != 1:
            raise ValueError("U1, U2 must be 2-D and sigma_z 1-D")
        r = s.size
        if U1.shape[1] != r or U2.shape[1] != r:
            raise ValueError(f"latent dimension mismatch: U1 {U1.shape}, U2 {U2.shape}, r={r}")
        if not r < min(self.d1, self.d2):
            raise ValueError(f"need r < min(d1, d2), got r={r}, d1={self.d1}, d2={self.d2}")
        eye = np.eye(r)
        if np.abs(U1.T @ U1 - eye).max() > _ORTHO_TOL or np.abs(U2.T @ U2 - eye).max() > _ORTHO_TOL:
            raise ValueError("U1 and U2 must have orthonormal columns")
        if np.any(s <= 0) or np.any(np.diff(s) > 0) or s[0] != 1.0:
            raise ValueError("sigma_z must be positive, nonincreasing, with max entry exactly 1")
        for cov, d in ((self.noise_cov_1, self.d1), (self.noise_cov_2, self.d2)):
            if cov.shape != (d, d):
                raise ValueError(f"noise covariance shape {cov.shape} != {(d, d)}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ValueError("noise covariance must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ValueError("noise covariance must be PSD")

    @property
    def d1(self) -> int:
        return self.U1.shape[0]

    @property
    def d2(self) -> int:
        return self.U2.shape[0]

    @property
    def r(self) -> int:
        return self.sigma_z.size

    @property
    def d(self) -> int:
        return self.d1 + self.d2

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "d1": self.d1,
            "d2": self.d2,
            "r": self.r,
            "U1": self.U1.tolist(),
            "U2": self.U2.tolist(),
            "sigma_z": self.sigma_z.tolist(),
            "noise_cov_1": self.noise_cov_1.tolist(),
            "noise_cov_2": self.noise_cov_2.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "SpikedModelSpec":
        return cls(obj["U1"], obj["U2"], obj["sigma_z"], obj["noise_cov_1"], obj["noise_cov_2"])

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path: str | Path) -> "SpikedModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """``n`` observed pairs stored as two row-aligned matrices."""

    X: np.ndarray
    Xt: np.ndarray
    provenance: Optional[dict[str, Any]] = field(default=None)

    def __post_init__(self) -> None:
        X = np.array(self.X, dtype=np.float64)
        Xt = np.array(self.Xt, dtype=np.float64)
        if X.ndim != 2 or Xt.ndim != 2:
            raise ValueError("X and Xt must be 2-D")
        if X.shape[0] != Xt.shape[0]:
            raise ValueError(f"row count mismatch: {X.shape[0]} vs {Xt.shape[0]}")
        if X.shape[0] < 2:
            raise ValueError("need at least 2 pairs")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Xt", Xt)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d1(self) -> int:
        return self.X.shape[1]

    @property
    def d2(self) -> int:
        return self.Xt.shape[1]

    def to_csv(self, path: str | Path) -> None:
        header = ",".join([f"x_{j}" for j in range(self.d1)] + [f"xt_{j}" for j in range(self.d2)])
        np.savetxt(path, np.hstack([self.X, self.Xt]), delimiter=",", header=header,
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path) -> "PairedDataset":
        with open(path) as fh:
            cols = fh.readline().strip().split(",")
        d1 = sum(c.startswith("x_") for c in cols)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :d1], data[:, d1:])


@dataclass(frozen=True)
class DatasetStats:
    data_radius: float
    snr1: float
    snr2: float
    kappa: float
    eff_rank_noise_1: float
    eff_rank_noise_2: float


def build_model_spec(d1: int, d2: int, r: int, snr1: float, snr2: float, kappa: float,
                     seed: int) -> SpikedModelSpec:
    """Draw a spiked model with the requested SNRs and latent condition number.

    ``sigma_z`` is geometric from 1 down to ``1/kappa``; noise is isotropic with
    operator norm ``1/snr`` so that the signal-to-noise ratio is exact.
    """
    if not 0 < r < min(d1, d2):
        raise ValueError(f"need 0 < r < min(d1, d2), got r={r}, d1={d1}, d2={d2}")
    if snr1 <= 0 or snr2 <= 0:
        raise ValueError(f"SNRs must be positive, got {snr1}, {snr2}")
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if r == 1 and kappa != 1:
        raise ValueError("a single spike has condition number 1")
    rng = stream(seed, "model")
    U1 = _orthonormal_factor(rng, d1, r)
    U2 = _orthonormal_factor(rng, d2, r)
    sigma_z = np.geomspace(1.0, 1.0 / kappa, r)
    sigma_z[0] = 1.0
    if r > 1:
        sigma_z[-1] = 1.0 / kappa
    return SpikedModelSpec(U1, U2, sigma_z, np.eye(d1) / snr1, np.eye(d2) / snr2)


def generate_pairs(spec: SpikedModelSpec, n: int, seed: int) -> PairedDataset:
    """Sample ``n`` pairs; identical ``(spec, n, seed)`` give identical arrays."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    z = stream(seed, "data", 0).standard_normal((n, spec.r)) * np.sqrt(spec.sigma_z)
    xi = stream(seed, "data", 1).standard_normal((n, spec.d1)) @ _sqrt_psd(spec.noise_cov_1)
    xi_t = stream(seed, "data", 2).standard_normal((n, spec.d2)) @ _sqrt_psd(spec.noise_cov_2)
    X = z @ spec.U1.T + xi
    Xt = z @ spec.U2.T + xi_t
    return PairedDataset(X, Xt, provenance={"seed": int(seed), "n": int(n)})


def dataset_stats(ds: PairedDataset, spec: SpikedModelSpec) -> DatasetStats:
    radius = float(np.linalg.norm(ds.X, axis=1).max() * np.linalg.norm(ds.Xt, axis=1).max())
    sz = spec.sigma_z.max()
    n1 = np.linalg.norm(spec.noise_cov_1, 2)
    n2 = np.linalg.norm(spec.noise_cov_2, 2)
    return DatasetStats(
        data_radius=radius,
        snr1=float(sz / n1) if n1 > 0 else float("inf"),
        snr2=float(sz / n2) if n2 > 0 else float("inf"),
        kappa=float(sz / spec.sigma_z.min()),
        eff_rank_noise_1=effective_rank(spec.noise_cov_1),
        eff_rank_noise_2=effective_rank(spec.noise_cov_2),
    )


def population_cross_covariance(spec: SpikedModelSpec) -> np.ndarray:
    """``E[x xt^T] = U1 diag(sigma_z) U2^T``."""
    return (spec.U1 * spec.sigma_z) @ spec.U2.T
