"""Experiment runners.

Each runner returns an :class:`ExperimentReport` whose ``checks`` list holds the
trend assertions for that experiment. Assertions use tolerance corridors
(slope brackets, monotonicity up to one standard error) because the
theoretical bounds only hold up to unspecified constants.

Seeding: the dataset and training seeds of repeat ``k`` are derived from
``(cfg.seed, k)`` when ``cfg.paired`` is set, so every cell of a sweep sees the
same datasets, batches and standard-normal noise draws and only the swept
quantity changes. With ``paired=False`` they are derived from
``(cfg.seed, cell, k)`` and cells are independent.
"""
from __future__ import annotations

import itertools
import math
import platform
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy

from .. import __version__
from .._rng import derive_seed, stream
from ..dpopt import TrainConfig, dp_train, init_near_oracle, sample_batch
from ..loss import (EncoderPair, LossConfig, batch_cross_covariance, clip_loss,
                    cross_covariance, linear_grad, linear_loss)
from ..oracle import (ConvexityCertificate, OracleSolution, convexity_certificate,
                      empirical_minimizer, excess_information_loss, population_minimizer,
                      procrustes_distance)
from ..privacy import (ACCOUNTANT_LABEL, CalibrationConstants, PrivacyBudget,
                       calibrate_sigma, rdp_epsilon)
from ..synthdata import PairedDataset, SpikedModelSpec, build_model_spec, generate_pairs
from .config import ExperimentConfig, TrainParams

REPORT_SCHEMA_VERSION = 1
DIST_FLOOR = 1e-12

_DATA, _TRAIN = 0, 1


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    cells: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kind": self.kind,
            "config": self.config,
            "cells": self.cells,
            "fits": self.fits,
            "checks": self.checks,
            "extra": self.extra,
            "provenance": self.provenance,
        }


def _provenance(seeds: dict) -> dict:
    return {
        "seeds": seeds,
        "versions": {
            "contrastlab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _check(name: str, passed: bool, **detail: Any) -> dict:
    return {"name": name, "passed": bool(passed), "detail": _plain(detail)}


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays to JSON-friendly Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _summary(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"values": v.tolist(), "mean": float(v.mean()), "std": std,
            "se": std / math.sqrt(v.size), "count": int(v.size)}


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> dict:
    """Least-squares line through ``(log x, log y)`` with residual diagnostics."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coef[0]), "intercept": float(coef[1]),
            "residuals": resid.tolist(), "r_squared": r2}


def _seed(cfg: ExperimentConfig, role: int, cell: int, repeat: int) -> int:
    if cfg.paired:
        return derive_seed(cfg.seed, role, repeat)
    return derive_seed(cfg.seed, role, cell, repeat)


def build_spec(cfg: ExperimentConfig) -> SpikedModelSpec:
    m = cfg.model
    return build_model_spec(m.d1, m.d2, m.r, m.snr1, m.snr2, m.kappa, m.seed)


@dataclass
class Problem:
    """A dataset with its empirical oracle and convexity certificate."""

    ds: PairedDataset
    oracle: OracleSolution
    cert: ConvexityCertificate


def make_problem(spec: SpikedModelSpec, n: int, alpha: float, seed: int) -> Problem:
    ds = generate_pairs(spec, n, seed)
    S = cross_covariance(ds)
    return Problem(ds, empirical_minimizer(S, spec.r, alpha), convexity_certificate(S, spec.r, alpha))


def eta_bound(cert: ConvexityCertificate, sigma: float, c: float, r: int, d: int, n: int,
              T: int) -> float:
    """Largest learning rate inside the linear-convergence regime."""
    first = 1.0 / (2.0 * cert.beta_u)
    if sigma == 0:
        return first
    log_term = math.log(max(T, 1) * (n + d))
    second = cert.beta_l * cert.gamma ** 2 / (4.0 * sigma ** 2 * c ** 2 * (2 * r * d + 60 * log_term))
    return min(first, second)


def train_once(problem: Problem, tp: TrainParams, sigma: float, seed: int,
               with_oracle: bool = False):
    """Initialize near the empirical oracle and run private descent."""
    eta = tp.eta if tp.eta is not None else 1.0 / (2.0 * problem.cert.beta_u)
    rho = tp.init_rho if tp.init_rho is not None else problem.cert.gamma / 4.0
    G0 = init_near_oracle(problem.oracle, rho, seed)
    cfg = TrainConfig(eta=eta, T=tp.T, b=tp.b, c=tp.c, sigma=sigma, loss_kind=tp.loss_kind,
                      loss_cfg=LossConfig(tp.alpha, tp.tau, tp.similarity), seed=seed)
    G, trace = dp_train(problem.ds, G0, cfg, problem.oracle if with_oracle else None)
    return G, trace, cfg


def _final_metrics(problem: Problem, G: EncoderPair, G_star: EncoderPair, alpha: float) -> dict:
    S = cross_covariance(problem.ds)
    return {
        "alignment_error": excess_information_loss(G, G_star),
        "procrustes_to_hat": procrustes_distance(G.G, problem.oracle.G_hat.G)[0],
        "final_loss": linear_loss(G, S, alpha),
    }


def _aggregate(per_repeat: list[dict]) -> dict:
    return {key: _summary([m[key] for m in per_repeat]) for key in per_repeat[0]}


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

def run_convergence_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Private descent from near the empirical oracle over a list of ``sigma``.

    The ``sigma = 0`` cell must show linear convergence at least at the
    certified rate; cells with ``sigma > 0`` record their noise plateau, which
    must grow with ``sigma``.
    """
    if cfg.sweep.axis != "sigma":
        raise ValueError("convergence experiment sweeps sigma")
    sigmas = [float(s) for s in cfg.sweep.values]
    if 0.0 not in sigmas:
        raise ValueError("convergence experiment needs a sigma = 0 cell")
    spec = build_spec(cfg)
    tp = cfg.train
    report = ExperimentReport("convergence", cfg.provenance_dict())
    seeds: dict = {}
    cells = []
    for ci, sigma in enumerate(sigmas):
        slopes, plateaus, finals, monotone, regimes = [], [], [], [], []
        rate_targets = []
        for k in range(cfg.repeats):
            ds_seed, tr_seed = _seed(cfg, _DATA, ci, k), _seed(cfg, _TRAIN, ci, k)
            seeds[f"{ci}/{k}"] = {"data": ds_seed, "train": tr_seed}
            prob = make_problem(spec, cfg.n, tp.alpha, ds_seed)
            _, trace, tcfg = train_once(prob, tp, sigma, tr_seed, with_oracle=True)
            dist = trace.distances()
            bound = eta_bound(prob.cert, sigma, tp.c, spec.r, spec.d, cfg.n, tp.T)
            regimes.append(tcfg.eta <= bound * (1 + 1e-12))
            rate_targets.append(0.5 * math.log(1.0 - tcfg.eta * prob.cert.beta_l))
            above = np.flatnonzero(dist > DIST_FLOOR)
            if above.size >= 2:
                slopes.append(float(np.polyfit(above, np.log(dist[above]), 1)[0]))
            else:
                slopes.append(float("-inf"))
            tail = dist[dist.size // 2:]
            plateaus.append(float(np.mean(tail ** 2)))
            finals.append(float(dist[-1]))
            d1 = dist[1:]
            d1 = d1[d1 > DIST_FLOOR]
            monotone.append(bool(np.all(np.diff(d1) <= 0)))
        cells.append({
            "index": ci, "sigma": sigma,
            "log_dist_slope": _summary(slopes), "rate_target": _summary(rate_targets),
            "plateau_dist2": _summary(plateaus), "final_dist": _summary(finals),
            "monotone_fraction": float(np.mean(monotone)),
            "inside_regime": bool(all(regimes)),
        })
    report.cells = cells
    base = cells[sigmas.index(0.0)]
    flagged = [c["sigma"] for c in cells if not c["inside_regime"]]
    report.extra["outside_theorem_regime"] = flagged
    if base["inside_regime"]:
        worst = max(s - t for s, t in zip(base["log_dist_slope"]["values"], base["rate_target"]["values"]))
        report.checks.append(_check("sigma0_rate", worst <= 1e-3, worst_excess=worst))
        report.checks.append(_check("sigma0_monotone", base["monotone_fraction"] == 1.0,
                                    fraction=base["monotone_fraction"]))
    noisy = sorted((c for c in cells if c["sigma"] > 0), key=lambda c: c["sigma"])
    if len(noisy) >= 2:
        means = [c["plateau_dist2"]["mean"] for c in noisy]
        report.checks.append(_check("plateau_ordering", all(np.diff(means) > 0),
                                    sigmas=[c["sigma"] for c in noisy], plateaus=means))
    report.provenance = _provenance(seeds)
    return report


# ---------------------------------------------------------------------------
# privacy-utility trade-off
# ---------------------------------------------------------------------------

def trend_checks(means: Sequence[float], ses: Sequence[float], base_mean: float, base_se: float
                 ) -> list[dict]:
    """Nonincreasing with at most one inversion, each within one standard error
    of the difference; the last cell within two standard errors of baseline."""
    inversions = []
    for i in range(len(means) - 1):
        rise = means[i + 1] - means[i]
        if rise > 0:
            inversions.append({"between": [i, i + 1], "rise": rise,
                               "se": math.hypot(ses[i], ses[i + 1])})
    ok_trend = len(inversions) <= 1 and all(v["rise"] <= v["se"] for v in inversions)
    gap = abs(means[-1] - base_mean)
    se = math.hypot(ses[-1], base_se)
    return [
        _check("error_nonincreasing_in_epsilon", ok_trend, inversions=inversions),
        _check("largest_epsilon_near_baseline", gap <= 2 * se, gap=gap, two_se=2 * se),
    ]


def run_tradeoff_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Calibrate ``sigma`` for each ``epsilon`` and measure the final alignment
    error against the population minimizer. Cell 0 is the non-private baseline."""
    if cfg.sweep.axis != "epsilon":
        raise ValueError("trade-off sweep needs an epsilon axis")
    spec = build_spec(cfg)
    tp = cfg.train
    G_star = population_minimizer(spec, tp.alpha).G_hat
    delta = cfg.delta()
    consts = CalibrationConstants(cfg.privacy.c_sigma, cfg.privacy.c_eps)
    report = ExperimentReport("tradeoff", cfg.provenance_dict())
    report.extra["calibration_constants"] = {"c_sigma": consts.c_sigma, "c_eps": consts.c_eps}
    report.extra["delta"] = delta
    report.extra["accountant_note"] = ACCOUNTANT_LABEL
    seeds: dict = {}
    problems: dict[int, Problem] = {}
    axis = [None] + [float(e) for e in cfg.sweep.values]
    for ci, eps in enumerate(axis):
        cell: dict = {"index": ci, "epsilon": eps}
        if eps is None:
            sigma = 0.0
        else:
            try:
                sigma = calibrate_sigma(cfg.n, tp.b, tp.T, PrivacyBudget(eps, delta), consts)
            except ValueError as exc:
                cell["error"] = str(exc)
                report.cells.append(cell)
                continue
            cell["accountant_epsilon"] = rdp_epsilon(sigma / 2.0, tp.b / cfg.n, tp.T, delta)
        cell["sigma"] = sigma
        metrics = []
        for k in range(cfg.repeats):
            ds_seed, tr_seed = _seed(cfg, _DATA, ci, k), _seed(cfg, _TRAIN, ci, k)
            seeds[f"{ci}/{k}"] = {"data": ds_seed, "train": tr_seed}
            key = ds_seed
            if key not in problems:
                problems[key] = make_problem(spec, cfg.n, tp.alpha, ds_seed)
            prob = problems[key]
            G, _, _ = train_once(prob, tp, sigma, tr_seed)
            metrics.append(_final_metrics(prob, G, G_star, tp.alpha))
        cell.update(_aggregate(metrics))
        report.cells.append(cell)
    report.provenance = _provenance(seeds)
    ok = [c for c in report.cells if c["epsilon"] is not None and "error" not in c]
    failed = [c for c in report.cells if "error" in c]
    report.checks.append(_check("calibration_preconditions", not failed,
                                failed=[c["epsilon"] for c in failed]))
    if ok:
        eps = [c["epsilon"] for c in ok]
        means = [c["alignment_error"]["mean"] for c in ok]
        ses = [c["alignment_error"]["se"] for c in ok]
        base = report.cells[0]["alignment_error"]
        if len(ok) >= 2:
            report.fits["log_error_vs_log_epsilon"] = loglog_fit(eps, means)
        report.checks.extend(trend_checks(means, ses, base["mean"], base["se"]))
    return report


# ---------------------------------------------------------------------------
# statistical error
# ---------------------------------------------------------------------------

def statistical_errors(spec: SpikedModelSpec, n: int, alpha: float, seeds: Sequence[int]
                       ) -> np.ndarray:
    """Alignment error of the empirical oracle against the population one."""
    G_star = population_minimizer(spec, alpha).G_hat
    out = []
    for s in seeds:
        G_hat = empirical_minimizer(cross_covariance(generate_pairs(spec, n, s)), spec.r, alpha).G_hat
        out.append(excess_information_loss(G_hat, G_star))
    return np.array(out)


def run_statistical_sweep(cfg: ExperimentConfig, slope_range=(-0.65, -0.35)) -> ExperimentReport:
    if cfg.sweep.axis != "n":
        raise ValueError("statistical sweep needs an n axis")
    ns = [int(v) for v in cfg.sweep.values]
    spec = build_spec(cfg)
    report = ExperimentReport("statistical", cfg.provenance_dict())
    seeds: dict = {}
    for ci, n in enumerate(ns):
        # datasets of different sizes are never paired
        s = [derive_seed(cfg.seed, _DATA, ci, k) for k in range(cfg.repeats)]
        seeds.update({f"{ci}/{k}": {"data": v} for k, v in enumerate(s)})
        errs = statistical_errors(spec, n, cfg.train.alpha, s)
        report.cells.append({"index": ci, "n": n, "alignment_error": _summary(errs)})
    report.provenance = _provenance(seeds)
    if len(ns) >= 2:
        fit = loglog_fit(ns, [c["alignment_error"]["mean"] for c in report.cells])
        report.fits["log_error_vs_log_n"] = fit
        lo, hi = slope_range
        report.checks.append(_check("slope_in_range", lo <= fit["slope"] <= hi,
                                    slope=fit["slope"], range=[lo, hi]))
    return report


# ---------------------------------------------------------------------------
# mini-batch gradient checks
# ---------------------------------------------------------------------------

def run_unbiasedness_check(n: int = 6, b: int = 3, trials: int = 10, seed: int = 0,
                           r: int = 2, d1: int = 4, d2: int = 3, alpha: float = 1.0,
                           tol: float = 1e-12) -> dict:
    """Average of the mini-batch gradient over every size-``b`` batch versus
    the full-data gradient, at ``trials`` random encoders."""
    if math.comb(n, b) > 10 ** 5:
        raise ValueError("too many batches to enumerate")
    rng = stream(seed, "data")
    ds = PairedDataset(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    S_full = cross_covariance(ds)
    batches = [list(c) for c in itertools.combinations(range(n), b)]
    devs = []
    for _ in range(trials):
        G = EncoderPair(rng.standard_normal((r, d1)), rng.standard_normal((r, d2)))
        avg = np.mean([linear_grad(G, batch_cross_covariance(ds, B), alpha) for B in batches], axis=0)
        devs.append(float(np.abs(avg - linear_grad(G, S_full, alpha)).max()))
    worst = max(devs)
    return {"n": n, "b": b, "batches": len(batches), "max_deviation": worst,
            "passed": worst <= tol, "tolerance": tol}


def run_subsampling_deviation(ds: PairedDataset, G: EncoderPair, b_list: Sequence[int],
                              draws: int = 400, seed: int = 0, alpha: float = 1.0,
                              slope_range=(0.3, 0.7)) -> dict:
    """Largest mini-batch gradient deviation over ``draws`` batches for each ``b``.

    The deviation should shrink like ``sqrt((1 - b/n) / b)``; the slope of
    ``log deviation`` on ``log((1 - b/n)/b)`` is checked against ``slope_range``.
    """
    b_list = [int(b) for b in b_list]
    if any(y <= x for x, y in zip(b_list, b_list[1:])):
        raise ValueError("b_list must be increasing")
    rng = stream(seed, "batch")
    full = linear_grad(G, cross_covariance(ds), alpha)
    max_dev, rms_dev = [], []
    for b in b_list:
        if b == ds.n:
            max_dev.append(0.0)
            rms_dev.append(0.0)
            continue
        d = np.array([np.linalg.norm(linear_grad(G, batch_cross_covariance(ds, sample_batch(ds.n, b, rng)),
                                                 alpha) - full) for _ in range(draws)])
        max_dev.append(float(d.max()))
        rms_dev.append(float(np.sqrt(np.mean(d ** 2))))
    out = {"b": b_list, "max_deviation": max_dev, "rms_deviation": rms_dev,
           "decreasing": bool(all(np.diff(max_dev) < 0))}
    usable = [i for i, b in enumerate(b_list) if b < ds.n]
    if len(usable) >= 2:
        x = [(1 - b_list[i] / ds.n) / b_list[i] for i in usable]
        fit = loglog_fit(x, [max_dev[i] for i in usable])
        out["fit"] = fit
        out["slope_ok"] = slope_range[0] <= fit["slope"] <= slope_range[1]
    out["passed"] = out["decreasing"] and out.get("slope_ok", True)
    return out


def tau_limit_errors(ds: PairedDataset, G: EncoderPair, taus: Sequence[float]) -> np.ndarray:
    """``|tau (L_softmax - 2 log n) / (2 (1 - 1/n)) - L_linear_unpenalized|`` per ``tau``."""
    n = ds.n
    unpen = -float(np.trace(G.G1 @ cross_covariance(ds).matrix @ G.G2.T))
    errs = []
    for tau in taus:
        val = clip_loss(G, ds, None, LossConfig(alpha=1.0, tau=float(tau)))
        errs.append(abs(tau * (val - 2 * math.log(n)) / (2 * (1 - 1 / n)) - unpen))
    return np.array(errs)


def run_tau_limit_check(ds: PairedDataset, G: EncoderPair, taus: Sequence[float] = (1e3, 1e4),
                        ratio_range=(5.0, 20.0)) -> dict:
    taus = [float(t) for t in taus]
    if any(y <= x for x, y in zip(taus, taus[1:])):
        raise ValueError("tau list must be increasing")
    errs = tau_limit_errors(ds, G, taus)
    ratios = (errs[:-1] / errs[1:]).tolist() if np.all(errs[1:] > 0) else []
    expected = [taus[i + 1] / taus[i] for i in range(len(taus) - 1)]
    ratio_ok = all(e / 2 <= r <= e * 2 for r, e in zip(ratios, expected))
    return {"tau": taus, "errors": errs.tolist(), "ratios": ratios,
            "nonincreasing": bool(np.all(np.diff(errs) <= 0)),
            "ratio_ok": ratio_ok,
            "passed": bool(ratio_ok and np.all(np.diff(errs) <= 0))}
