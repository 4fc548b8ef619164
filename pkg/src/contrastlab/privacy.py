"""Noise calibration and a Renyi-DP accountant for cross-checking it.

``calibrate_sigma`` evaluates ``sigma = C_sigma sqrt(T ln(1/delta)) / (n eps)``,
valid for ``b < n/10`` and ``eps <= C_eps b^2 T / n^2``. The constants have no
known numeric values; both default to 1 and are always reported.

``rdp_epsilon`` is an independent numeric accountant for the Poisson-subsampled
Gaussian mechanism. Training samples fixed-size batches without replacement,
so its output is an approximation of the training run's privacy loss, labelled
as such wherever it is reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

DEFAULT_ORDERS = tuple(range(2, 65))
ACCOUNTANT_LABEL = "approximate (sampling model mismatch: Poisson accountant, fixed-size batches)"


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class CalibrationConstants:
    c_sigma: float = 1.0
    c_eps: float = 1.0

    def __post_init__(self) -> None:
        if self.c_sigma <= 0 or self.c_eps <= 0:
            raise ValueError("calibration constants must be positive")


class PreconditionError(ValueError):
    """A calibration precondition failed; ``slack`` is negative by this much."""

    def __init__(self, name: str, bound: str, slack: float):
        super().__init__(f"precondition {name} violated: {bound} (slack {slack:.6g})")
        self.name = name
        self.bound = bound
        self.slack = slack


def preconditions(n: int, b: int, T: int, budget: PrivacyBudget,
                  consts: CalibrationConstants = CalibrationConstants()) -> dict:
    """Slack of each calibration precondition (positive means satisfied)."""
    eps_max = consts.c_eps * b * b * T / (n * n)
    return {
        "batch_fraction": {"bound": "b < n/10", "slack": n / 10 - b, "ok": b < n / 10},
        "epsilon_max": {"bound": f"eps <= C_eps b^2 T / n^2 = {eps_max:.6g}",
                        "slack": eps_max - budget.epsilon, "ok": budget.epsilon <= eps_max},
    }


def calibrate_sigma(n: int, b: int, T: int, budget: PrivacyBudget,
                    consts: CalibrationConstants = CalibrationConstants(),
                    strict: bool = True) -> float:
    """Noise multiplier for an ``(eps, delta)`` target.

    With ``strict=False`` the formula is evaluated even when a precondition
    fails; callers are then responsible for reporting :func:`preconditions`.

    Raises
    ------
    PreconditionError
        If ``strict`` and ``b >= n/10`` or ``eps > C_eps b^2 T / n^2``.
    """
    if n < 1 or b < 1 or T < 1:
        raise ValueError(f"n, b, T must be positive, got {n}, {b}, {T}")
    for name, chk in preconditions(n, b, T, budget, consts).items():
        if strict and not chk["ok"]:
            raise PreconditionError(name, chk["bound"], chk["slack"])
    return consts.c_sigma * math.sqrt(T * math.log(1.0 / budget.delta)) / (n * budget.epsilon)


def gaussian_rdp(noise_multiplier: float, order: float) -> float:
    """Renyi divergence of order ``order`` for the Gaussian mechanism."""
    if noise_multiplier <= 0 or order <= 1:
        raise ValueError(f"need noise_multiplier > 0 and order > 1, got {noise_multiplier}, {order}")
    return order / (2.0 * noise_multiplier ** 2)


def _log_a(q: float, sigma: float, alpha: int) -> float:
    k = np.arange(alpha + 1)
    log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
    with np.errstate(divide="ignore"):
        terms = (log_binom + k * math.log(q) + (alpha - k) * np.log1p(-q)
                 + (k * k - k) / (2.0 * sigma ** 2))
    return float(logsumexp(terms))


def subsampled_gaussian_rdp(noise_multiplier: float, sampling_rate: float, order: int) -> float:
    """RDP at integer ``order`` of one Poisson-subsampled Gaussian step."""
    if sampling_rate == 1.0:
        return gaussian_rdp(noise_multiplier, order)
    if sampling_rate == 0.0:
        return 0.0
    return _log_a(sampling_rate, noise_multiplier, int(order)) / (order - 1)


def rdp_epsilon(noise_multiplier: float, sampling_rate: float, T: int, delta: float,
                orders: Optional[Iterable[int]] = None) -> float:
    """Smallest ``eps`` over ``orders`` after ``T``-fold composition.

    Uses ``eps = T * rdp(alpha) + ln(1/delta) / (alpha - 1)``.
    """
    orders = list(DEFAULT_ORDERS if orders is None else orders)
    if not orders:
        raise ValueError("order list is empty")
    if noise_multiplier <= 0 or not 0 <= sampling_rate <= 1 or T < 0 or not 0 < delta < 1:
        raise ValueError("invalid accountant parameters")
    if any(int(a) != a or a < 2 for a in orders):
        raise ValueError("orders must be integers >= 2")
    eps = [T * subsampled_gaussian_rdp(noise_multiplier, sampling_rate, int(a))
           + math.log(1.0 / delta) / (a - 1) for a in orders]
    return float(min(eps))
