"""Invariant suite behind ``contrastlab verify``.

Every check is independent and seeded; each returns a dict with ``name``,
``passed`` and a ``detail`` payload.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .._rng import stream
from ..dpopt import TrainConfig, clip_gradient, dp_train, init_near_oracle
from ..loss import (EncoderPair, LossConfig, clip_grad, clip_loss, cross_covariance,
                    hessian_quadratic_form, linear_grad, linear_loss)
from ..oracle import empirical_minimizer, procrustes_distance
from ..privacy import gaussian_rdp, rdp_epsilon
from ..synthdata import PairedDataset, build_model_spec
from .experiments import (_check, make_problem, run_tau_limit_check, run_unbiasedness_check)


def random_instance(rng: np.random.Generator, max_d: int = 10, max_r: int = 4, n: int = 8):
    d1 = int(rng.integers(2, max_d + 1))
    d2 = int(rng.integers(2, max_d + 1))
    r = int(rng.integers(1, min(max_r, d1, d2) + 1))
    G = EncoderPair(rng.standard_normal((r, d1)), rng.standard_normal((r, d2)))
    ds = PairedDataset(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    return G, ds


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_gradients(instances: int = 50, seed: int = 0, tol: float = 1e-5) -> dict:
    rng = stream(seed, "init", 1)
    worst = {"linear": 0.0, "inner_product": 0.0, "cosine": 0.0}
    for _ in range(instances):
        G, ds = random_instance(rng)
        d1 = G.d1
        S = cross_covariance(ds)
        alpha = float(rng.uniform(0.1, 2.0))
        fd = central_difference(lambda x: linear_loss(EncoderPair.from_full(x, d1), S, alpha), G.G)
        worst["linear"] = max(worst["linear"], rel_err(linear_grad(G, S, alpha), fd))
        for sim in ("inner_product", "cosine"):
            cfg = LossConfig(alpha, float(rng.uniform(0.5, 5.0)), sim)
            fd = central_difference(lambda x: clip_loss(EncoderPair.from_full(x, d1), ds, None, cfg), G.G)
            worst[sim] = max(worst[sim], rel_err(clip_grad(G, ds, None, cfg), fd))
    return _check("gradient_finite_differences", max(worst.values()) <= tol, worst=worst, tol=tol)


def check_hessian(instances: int = 50, seed: int = 0, tol: float = 1e-4) -> dict:
    rng = stream(seed, "init", 2)
    worst = 0.0
    for _ in range(instances):
        G, ds = random_instance(rng)
        S = cross_covariance(ds)
        alpha = float(rng.uniform(0.1, 2.0))
        Z = rng.standard_normal(G.G.shape)
        h = 1e-4
        f = lambda t: linear_loss(EncoderPair.from_full(G.G + t * Z, G.d1), S, alpha)
        fd = (f(h) - 2 * f(0.0) + f(-h)) / h ** 2
        exact = hessian_quadratic_form(G, S, alpha, Z)
        worst = max(worst, abs(exact - fd) / max(abs(fd), 1e-8))
    return _check("hessian_finite_differences", worst <= tol, worst=worst, tol=tol)


def check_u_statistic(instances: int = 20, seed: int = 0, tol: float = 1e-12) -> dict:
    rng = stream(seed, "init", 3)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 9))
        ds = PairedDataset(rng.standard_normal((n, 3)), rng.standard_normal((n, 4)))
        direct = sum(np.outer(ds.X[i], ds.Xt[i]) for i in range(n)) / n
        direct -= sum(np.outer(ds.X[i], ds.Xt[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
        worst = max(worst, float(np.abs(direct - cross_covariance(ds).matrix).max()))
    return _check("u_statistic_equivalence", worst <= tol, worst=worst, tol=tol)


def check_unbiasedness() -> dict:
    res = [run_unbiasedness_check(6, 3, 10), run_unbiasedness_check(4, 2, 10)]
    return _check("minibatch_unbiasedness", all(r["passed"] for r in res),
                  max_deviation=[r["max_deviation"] for r in res])


def check_oracle(instances: int = 20, seed: int = 0) -> dict:
    rng = stream(seed, "init", 4)
    worst_grad, worst_val, worst_probe = 0.0, 0.0, -np.inf
    for _ in range(instances):
        d1, d2 = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        r = int(rng.integers(1, min(d1, d2)))
        S = rng.standard_normal((d1, d2))
        alpha = float(rng.uniform(0.2, 3.0))
        sol = empirical_minimizer(S, r, alpha)
        lam = np.linalg.svd(S, compute_uv=False)[:r]
        worst_grad = max(worst_grad, float(np.linalg.norm(linear_grad(sol.G_hat, S, alpha))))
        worst_val = max(worst_val, abs(sol.optimal_loss + 0.5 * np.sum(lam + lam ** 2 / (2 * alpha))))
        for _ in range(1000):
            G = rng.standard_normal((r, d1 + d2))
            G *= rng.uniform(0, 3.0) / np.linalg.norm(G, 2)
            worst_probe = max(worst_probe, sol.optimal_loss - linear_loss(EncoderPair.from_full(G, d1), S, alpha))
        G = sol.G_hat.G
        step = 1.0 / (8 * lam[0] + 12 * alpha)
        for _ in range(100):
            G = G - step * linear_grad(EncoderPair.from_full(G, d1), S, alpha)
        worst_probe = max(worst_probe, sol.optimal_loss - linear_loss(EncoderPair.from_full(G, d1), S, alpha))
    passed = worst_grad <= 1e-8 and worst_val <= 1e-10 and worst_probe <= 1e-9
    return _check("oracle_optimality", passed, max_grad=worst_grad, max_value_error=worst_val,
                  max_probe_improvement=worst_probe)


def check_procrustes(instances: int = 10, probes: int = 1000, seed: int = 0) -> dict:
    rng = stream(seed, "init", 5)
    worst = -np.inf
    for _ in range(instances):
        r, d = int(rng.integers(1, 5)), int(rng.integers(5, 12))
        A, B = rng.standard_normal((r, d)), rng.standard_normal((r, d))
        val, O = procrustes_distance(A, B)
        for _ in range(probes):
            Q, _ = np.linalg.qr(rng.standard_normal((r, r)))
            worst = max(worst, val - float(np.linalg.norm(Q @ A - B)))
    return _check("procrustes_optimality", worst <= 1e-10, max_probe_improvement=worst)


def check_clipping(seed: int = 0) -> dict:
    rng = stream(seed, "init", 6)
    ok = True
    for _ in range(100):
        g = rng.standard_normal((3, 7)) * rng.uniform(0, 10)
        c = float(rng.uniform(0.1, 5))
        out, h = clip_gradient(g, c)
        ok &= np.linalg.norm(out) <= c * (1 + 1e-12)
        ok &= math.isclose(h, min(1.0, c / np.linalg.norm(g)), rel_tol=1e-12)
    out, h = clip_gradient(np.zeros((2, 3)), 1.0)
    ok &= h == 1.0 and not out.any()
    return _check("clipping_identities", bool(ok))


def check_accountant() -> dict:
    sigmas = [0.6, 0.8, 1.0, 1.5, 2.0]
    Ts = [1, 10, 100, 1000, 5000]
    qs = [0.01, 0.05, 0.2]
    grid = np.array([[[rdp_epsilon(s, q, T, 1e-5) for q in qs] for T in Ts] for s in sigmas])
    mono = (np.all(np.diff(grid, axis=0) <= 1e-12) and np.all(np.diff(grid, axis=1) >= -1e-12)
            and np.all(np.diff(grid, axis=2) >= -1e-12))
    exact = min(gaussian_rdp(1.3, a) + math.log(1e5) / (a - 1) for a in range(2, 65))
    match = abs(rdp_epsilon(1.3, 1.0, 1, 1e-5) - exact) <= 1e-10
    return _check("accountant_monotone", bool(mono and match), monotone=bool(mono), q1_match=bool(match))


def check_rotation_invariance(instances: int = 20, seed: int = 0) -> dict:
    rng = stream(seed, "init", 7)
    worst = 0.0
    for _ in range(instances):
        G, ds = random_instance(rng, n=6)
        O, _ = np.linalg.qr(rng.standard_normal((G.r, G.r)))
        S = cross_covariance(ds)
        worst = max(worst, abs(linear_loss(G, S, 0.7) - linear_loss(G.rotate(O), S, 0.7)))
        for sim in ("inner_product", "cosine"):
            cfg = LossConfig(0.7, 1.3, sim)
            worst = max(worst, abs(clip_loss(G, ds, None, cfg) - clip_loss(G.rotate(O), ds, None, cfg)))
    return _check("rotation_invariance", worst <= 1e-10, worst=worst)


def check_tau_limit(seed: int = 0) -> dict:
    rng = stream(seed, "init", 8)
    ds = PairedDataset(rng.standard_normal((10, 4)), rng.standard_normal((10, 3)))
    G = EncoderPair(rng.standard_normal((2, 4)), rng.standard_normal((2, 3)))
    res = run_tau_limit_check(ds, G, (1e3, 1e4))
    return _check("tau_limit", res["passed"] and 5 <= res["ratios"][0] <= 20,
                  errors=res["errors"], ratios=res["ratios"])


def check_contraction(instances: int = 20, T: int = 500, alpha: float = 0.5) -> dict:
    """Full-batch noiseless descent from distance ``gamma/4``."""
    fractions, finals = [], []
    for i in range(instances):
        spec = build_model_spec(8, 8, 2, 4.0, 4.0, 1.5, seed=i)
        prob = make_problem(spec, 1000, alpha, seed=1000 + i)
        eta = 1.0 / (2.0 * prob.cert.beta_u)
        G0 = init_near_oracle(prob.oracle, prob.cert.gamma / 4.0, seed=i)
        cfg = TrainConfig(eta=eta, T=T, b=prob.ds.n, c=1e9, sigma=0.0, loss_cfg=LossConfig(alpha))
        _, trace = dp_train(prob.ds, G0, cfg, prob.oracle)
        d2 = trace.distances() ** 2
        keep = d2[:-1] > 1e-24
        ratio = d2[1:][keep] / d2[:-1][keep]
        fractions.append(float(np.mean(ratio <= (1 - eta * prob.cert.beta_l) * 1.05)))
        finals.append(float(np.sqrt(d2[-1])))
    passed = min(fractions) >= 0.95 and max(finals) <= 1e-6
    return _check("sigma0_contraction", passed, min_fraction=min(fractions), max_final=max(finals))


CHECKS = (check_gradients, check_hessian, check_u_statistic, check_unbiasedness, check_oracle,
          check_procrustes, check_clipping, check_accountant, check_rotation_invariance,
          check_tau_limit, check_contraction)


def run_all() -> list[dict]:
    return [chk() for chk in CHECKS]
