"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The oracles here are written independently of ``contrastlab.harness.checks``
(finite differences, brute-force sums, closed-form arithmetic); the sweep
criteria drive the harness runners and recompute their verdicts locally.
"""
from __future__ import annotations

import itertools
import math
import time

import numpy as np

from contrastlab.dpopt import TrainConfig, dp_train, init_near_oracle
from contrastlab.harness.cli import main as cli_main
from contrastlab.harness.config import epsilon_sweep_config, n_sweep_config
from contrastlab.harness.experiments import (run_statistical_sweep, run_subsampling_deviation,
                                             run_tradeoff_sweep)
from contrastlab.loss import (EncoderPair, LossConfig, batch_cross_covariance, clip_grad, clip_loss,
                              cross_covariance, hessian_quadratic_form, linear_grad, linear_loss)
from contrastlab.oracle import convexity_certificate, empirical_minimizer, procrustes_distance
from contrastlab.privacy import (CalibrationConstants, PrivacyBudget, calibrate_sigma, gaussian_rdp,
                                 rdp_epsilon)
from contrastlab.synthdata import PairedDataset, build_model_spec, generate_pairs

from conftest import ACCEPTANCE_LINES, central_difference, rel_err


class Criterion:
    """Context manager timing one criterion and recording its verdict line."""

    def __init__(self, number: int, title: str, budget_s: float):
        self.number, self.title, self.budget = number, title, budget_s
        self.detail = ""
        self.ok = False

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        self.ok = self.ok and exc_type is None and elapsed <= self.budget
        verdict = "PASS" if self.ok else "FAIL"
        line = f"{verdict} criterion {self.number}: {self.title} ({elapsed:.1f}s / {self.budget:g}s) {self.detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        if exc_type is None:
            assert self.ok, line
        return False


def _instance(rng, n=8):
    d1, d2 = int(rng.integers(2, 11)), int(rng.integers(2, 11))
    r = int(rng.integers(1, min(4, d1, d2) + 1))
    G = EncoderPair(rng.standard_normal((r, d1)), rng.standard_normal((r, d2)))
    ds = PairedDataset(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    return G, ds


def test_criterion_01_gradients():
    with Criterion(1, "gradients match finite differences", 10) as c:
        rng = np.random.default_rng(101)
        worst = {"linear": 0.0, "inner_product": 0.0, "cosine": 0.0}
        for _ in range(50):
            G, ds = _instance(rng)
            S = cross_covariance(ds)
            alpha = float(rng.uniform(0.1, 2.0))
            f = lambda x: linear_loss(EncoderPair.from_full(x, G.d1), S, alpha)
            worst["linear"] = max(worst["linear"], rel_err(linear_grad(G, S, alpha), central_difference(f, G.G)))
            for sim in ("inner_product", "cosine"):
                cfg = LossConfig(alpha, float(rng.uniform(0.5, 5.0)), sim)
                f = lambda x: clip_loss(EncoderPair.from_full(x, G.d1), ds, None, cfg)
                worst[sim] = max(worst[sim], rel_err(clip_grad(G, ds, None, cfg), central_difference(f, G.G)))
        c.ok = max(worst.values()) <= 1e-5
        c.detail = "worst " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


def test_criterion_02_hessian():
    with Criterion(2, "Hessian quadratic form matches second differences", 10) as c:
        rng = np.random.default_rng(202)
        worst = 0.0
        for _ in range(50):
            G, ds = _instance(rng)
            S = cross_covariance(ds)
            alpha = float(rng.uniform(0.1, 2.0))
            Z = rng.standard_normal(G.G.shape)
            f = lambda t: linear_loss(EncoderPair.from_full(G.G + t * Z, G.d1), S, alpha)
            h = 1e-4
            fd = (f(h) - 2 * f(0.0) + f(-h)) / h ** 2
            worst = max(worst, abs(hessian_quadratic_form(G, S, alpha, Z) - fd) / abs(fd))
        c.ok = worst <= 1e-4
        c.detail = f"worst relative error {worst:.1e}"


def test_criterion_03_oracle_optimality():
    with Criterion(3, "closed-form oracle is optimal", 30) as c:
        rng = np.random.default_rng(303)
        g_max, v_max, beat = 0.0, 0.0, -np.inf
        for _ in range(20):
            d1, d2 = int(rng.integers(3, 9)), int(rng.integers(3, 9))
            r = int(rng.integers(1, min(d1, d2)))
            S = rng.standard_normal((d1, d2))
            alpha = float(rng.uniform(0.2, 3.0))
            sol = empirical_minimizer(S, r, alpha)
            lam = np.linalg.svd(S, compute_uv=False)[:r]
            g_max = max(g_max, float(np.linalg.norm(linear_grad(sol.G_hat, S, alpha))))
            v_max = max(v_max, abs(sol.optimal_loss + 0.5 * float(np.sum(lam + lam ** 2 / (2 * alpha)))))
            for _ in range(1000):
                G = rng.standard_normal((r, d1 + d2))
                G *= rng.uniform(0, 3.0) / np.linalg.norm(G, 2)
                beat = max(beat, sol.optimal_loss - linear_loss(EncoderPair.from_full(G, d1), S, alpha))
        c.ok = g_max <= 1e-8 and v_max <= 1e-10 and beat <= 1e-9
        c.detail = f"max grad {g_max:.1e}, max value error {v_max:.1e}, best probe margin {beat:.2e}"


def test_criterion_04_unbiasedness():
    with Criterion(4, "mini-batch gradient is unbiased", 5) as c:
        rng = np.random.default_rng(404)
        n, b, r, alpha = 6, 3, 2, 1.0
        ds = PairedDataset(rng.standard_normal((n, 4)), rng.standard_normal((n, 3)))
        batches = list(itertools.combinations(range(n), b))
        worst = 0.0
        for _ in range(10):
            G = EncoderPair(rng.standard_normal((r, 4)), rng.standard_normal((r, 3)))
            avg = sum(linear_grad(G, batch_cross_covariance(ds, B), alpha) for B in batches) / len(batches)
            worst = max(worst, float(np.abs(avg - linear_grad(G, cross_covariance(ds), alpha)).max()))
        c.ok = worst <= 1e-12
        c.detail = f"{len(batches)} batches, max deviation {worst:.1e}"


def test_criterion_05_noiseless_linear_convergence():
    with Criterion(5, "sigma=0 full-batch descent contracts linearly", 60) as c:
        fractions, finals = [], []
        alpha, T = 0.5, 500
        for i in range(20):
            spec = build_model_spec(8, 8, 2, 4.0, 4.0, 1.5, seed=500 + i)
            ds = generate_pairs(spec, 1000, seed=600 + i)
            S = cross_covariance(ds)
            sol = empirical_minimizer(S, 2, alpha)
            cert = convexity_certificate(S, 2, alpha)
            eta = 1 / (2 * cert.beta_u)
            G0 = init_near_oracle(sol, cert.gamma / 4, seed=i)
            G, trace = dp_train(ds, G0, TrainConfig(eta=eta, T=T, b=ds.n, c=1e9, loss_cfg=LossConfig(alpha)), sol)
            d2 = trace.distances() ** 2
            assert d2[0] == procrustes_distance(G0.G, sol.G_hat.G)[0] ** 2
            # steps taken once the distance is at round-off level carry no information
            live = d2[:-1] > 1e-24
            ratios = d2[1:][live] / d2[:-1][live]
            fractions.append(float(np.mean(ratios <= (1 - eta * cert.beta_l) * 1.05)))
            finals.append(procrustes_distance(G.G, sol.G_hat.G)[0])
        c.ok = min(fractions) >= 0.95 and max(finals) <= 1e-6
        c.detail = f"min contracting fraction {min(fractions):.3f}, max final distance {max(finals):.1e}"


def test_criterion_06_privacy_calibration():
    with Criterion(6, "noise calibration formula and scaling", 1) as c:
        # C_sigma = 1 as stated; C_eps = 4 so that eps = 1 satisfies eps <= C_eps b^2 T / n^2
        consts = CalibrationConstants(1.0, 4.0)
        sigma = calibrate_sigma(10_000, 500, 100, PrivacyBudget(1.0, 5e-5), consts)
        digits = f"{sigma:.4g}" == "0.003147"
        wide = CalibrationConstants(1.0, 1e9)
        base = calibrate_sigma(10_000, 500, 100, PrivacyBudget(0.1, 5e-5), wide)
        ratios = {
            "sqrt_T": calibrate_sigma(10_000, 500, 400, PrivacyBudget(0.1, 5e-5), wide) / base / 2,
            "inv_n": calibrate_sigma(40_000, 500, 100, PrivacyBudget(0.1, 5e-5), wide) / base * 4,
            "inv_eps": calibrate_sigma(10_000, 500, 100, PrivacyBudget(0.05, 5e-5), wide) / base / 2,
            "sqrt_log": calibrate_sigma(10_000, 500, 100, PrivacyBudget(0.1, 5e-5 ** 4), wide) / base / 2,
        }
        worst = max(abs(v - 1) for v in ratios.values())
        c.ok = digits and worst <= 1e-12
        c.detail = f"sigma={sigma:.6e}, worst scaling deviation {worst:.1e}"


def test_criterion_07_accountant():
    with Criterion(7, "accountant monotone and exact without subsampling", 5) as c:
        sigmas = [0.6, 0.8, 1.0, 1.5, 2.0]
        Ts = [1, 10, 100, 1000, 5000]
        qs = [0.01, 0.05, 0.2]
        grid = np.array([[[rdp_epsilon(s, q, T, 1e-5) for q in qs] for T in Ts] for s in sigmas])
        mono = (np.all(np.diff(grid, axis=0) <= 0) and np.all(np.diff(grid, axis=1) >= 0)
                and np.all(np.diff(grid, axis=2) >= 0))
        closed = min(a / (2 * 1.3 ** 2) + math.log(1e5) / (a - 1) for a in range(2, 65))
        match = abs(rdp_epsilon(1.3, 1.0, 1, 1e-5) - closed)
        assert gaussian_rdp(1.3, 2) == 2 / (2 * 1.3 ** 2)
        c.ok = bool(mono) and match <= 1e-10
        c.detail = f"monotone={bool(mono)}, q=1 mismatch {match:.1e}"


def test_criterion_08_privacy_utility_trend():
    with Criterion(8, "alignment error nonincreasing in epsilon", 180) as c:
        report = run_tradeoff_sweep(epsilon_sweep_config())
        cells = report.cells
        base = cells[0]["alignment_error"]
        priv = cells[1:]
        assert [cell["epsilon"] for cell in priv] == [0.25, 0.5, 1.0, 3.0, 10.0]
        assert all(cell["alignment_error"]["count"] == 10 for cell in priv)
        means = [cell["alignment_error"]["mean"] for cell in priv]
        ses = [cell["alignment_error"]["se"] for cell in priv]
        rises = [(i, means[i + 1] - means[i], math.hypot(ses[i], ses[i + 1]))
                 for i in range(len(means) - 1) if means[i + 1] > means[i]]
        trend = len(rises) <= 1 and all(rise <= se for _, rise, se in rises)
        gap = abs(means[-1] - base["mean"])
        near = gap <= 2 * math.hypot(ses[-1], base["se"])
        c.ok = trend and near and report.passed
        c.detail = (f"baseline {base['mean']:.4f}, means " + ", ".join(f"{m:.4f}" for m in means)
                    + f"; inversions {len(rises)}; eps=10 gap {gap:.4f}")


def test_criterion_09_statistical_rate():
    with Criterion(9, "statistical error slope in n", 120) as c:
        report = run_statistical_sweep(n_sweep_config())
        ns = [cell["n"] for cell in report.cells]
        means = [cell["alignment_error"]["mean"] for cell in report.cells]
        assert ns == [500, 2000, 8000] and all(cl["alignment_error"]["count"] == 20 for cl in report.cells)
        slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
        c.ok = -0.65 <= slope <= -0.35
        c.detail = f"slope {slope:.3f}"


def test_criterion_10_subsampling_rate():
    with Criterion(10, "mini-batch deviation slope in (1-b/n)/b", 60) as c:
        spec = build_model_spec(8, 8, 2, 4.0, 4.0, 1.5, seed=0)
        ds = generate_pairs(spec, 1024, seed=1010)
        rng = np.random.default_rng(1011)
        G = EncoderPair(rng.standard_normal((2, 8)), rng.standard_normal((2, 8)))
        b_list = [16, 64, 256]
        res = run_subsampling_deviation(ds, G, b_list, draws=400, seed=1012)
        x = [(1 - b / ds.n) / b for b in b_list]
        slope = float(np.polyfit(np.log(x), np.log(res["max_deviation"]), 1)[0])
        decreasing = all(np.diff(res["max_deviation"]) < 0)
        c.ok = decreasing and 0.3 <= slope <= 0.7
        c.detail = f"deviations {[round(v, 4) for v in res['max_deviation']]}, slope {slope:.3f}"


def test_criterion_11_temperature_limit():
    with Criterion(11, "softmax loss tends to the linear loss as tau grows", 5) as c:
        rng = np.random.default_rng(1111)
        n = 10
        ds = PairedDataset(rng.standard_normal((n, 5)), rng.standard_normal((n, 4)))
        G = EncoderPair(rng.standard_normal((2, 5)), rng.standard_normal((2, 4)))
        F, Ft = ds.X @ G.G1.T, ds.Xt @ G.G2.T
        s = F @ Ft.T
        # unpenalized per-pair linear loss, computed from the similarity matrix directly
        unpen = -np.trace(s) / n + (s.sum() - np.trace(s)) / (n * (n - 1))
        errs = []
        for tau in (1e3, 1e4):
            val = clip_loss(G, ds, None, LossConfig(tau=tau))
            errs.append(abs(tau * (val - 2 * math.log(n)) / (2 * (1 - 1 / n)) - unpen))
        ratio = errs[0] / errs[1]
        c.ok = 5 <= ratio <= 20
        c.detail = f"errors {errs[0]:.2e}, {errs[1]:.2e}; ratio {ratio:.2f}"


def test_criterion_12_determinism(tmp_path, capsys):
    with Criterion(12, "train and sweeps are byte-identical across runs", 240) as c:
        outputs = {}
        for run in ("first", "second"):
            base = tmp_path / run
            codes = [
                cli_main(["train", "--out", str(base / "train")]),
                cli_main(["sweep-epsilon", "--out", str(base / "eps")]),
                cli_main(["sweep-n", "--out", str(base / "n")]),
            ]
            capsys.readouterr()
            assert codes == [0, 0, 0], codes
            outputs[run] = {p.relative_to(base): p.read_bytes() for p in sorted(base.rglob("*")) if p.is_file()}
        files = sorted(outputs["first"])
        same = files == sorted(outputs["second"]) and all(
            outputs["first"][f] == outputs["second"][f] for f in files)
        c.ok = same and len(files) == 6
        c.detail = f"{len(files)} files compared: " + ", ".join(str(f) for f in files)
