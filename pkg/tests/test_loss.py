from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastlab.loss import (CrossCovariance, EncoderPair, LossConfig, batch_cross_covariance,
                              clip_grad, clip_loss, cross_covariance, hessian_quadratic_form,
                              linear_grad, linear_loss, penalty)
from contrastlab.oracle import empirical_minimizer, procrustes_distance
from contrastlab.synthdata import PairedDataset

from conftest import central_difference, random_orthogonal, rel_err

TWO_POINT = PairedDataset(np.eye(2), np.eye(2))


def double_sum_cross_cov(X, Xt):
    n = X.shape[0]
    diag = sum(np.outer(X[i], Xt[i]) for i in range(n)) / n
    off = sum(np.outer(X[i], Xt[j]) for i in range(n) for j in range(n) if i != j)
    return diag - off / (n * (n - 1))


def pairwise_linear_loss(G: EncoderPair, X, Xt, alpha):
    """Per-pair form: mean positive similarity against mean negative similarity."""
    n = X.shape[0]
    s = lambda i, j: float((G.G1 @ X[i]) @ (G.G2 @ Xt[j]))
    pos = sum(s(i, i) for i in range(n)) / n
    neg = sum(s(i, j) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    GG = G.G @ G.G.T
    return -pos + neg + alpha / 4 * float(np.sum((GG - np.eye(G.r)) ** 2))


def brute_clip_loss(G: EncoderPair, X, Xt, tau, cosine=False):
    b = X.shape[0]
    F = [G.G1 @ x for x in X]
    Ft = [G.G2 @ x for x in Xt]
    if cosine:
        F = [f / np.linalg.norm(f) for f in F]
        Ft = [f / np.linalg.norm(f) for f in Ft]
    s = [[float(F[i] @ Ft[j]) / tau for j in range(b)] for i in range(b)]
    total = 0.0
    for i in range(b):
        total -= math.log(math.exp(s[i][i]) / sum(math.exp(s[i][j]) for j in range(b)))
        total -= math.log(math.exp(s[i][i]) / sum(math.exp(s[j][i]) for j in range(b)))
    return total / b


def random_problem(seed, n=7):
    rng = np.random.default_rng(seed)
    d1, d2 = int(rng.integers(2, 8)), int(rng.integers(2, 8))
    r = int(rng.integers(1, min(d1, d2) + 1))
    G = EncoderPair(rng.standard_normal((r, d1)), rng.standard_normal((r, d2)))
    ds = PairedDataset(rng.standard_normal((n, d1)), rng.standard_normal((n, d2)))
    return rng, G, ds


# ---------------------------------------------------------------- cross-covariance

def test_two_point_cross_covariance():
    S = cross_covariance(TWO_POINT)
    np.testing.assert_allclose(S.matrix, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(double_sum_cross_cov(np.eye(2), np.eye(2)), S.matrix, atol=1e-15)
    assert S.source == "full" and S.n_or_b == 2


def test_zero_second_modality_gives_zero_matrix():
    ds = PairedDataset(np.random.default_rng(0).standard_normal((5, 3)), np.zeros((5, 2)))
    assert not cross_covariance(ds).matrix.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10 ** 6))
def test_u_statistic_matches_double_sum(n, seed):
    rng = np.random.default_rng(seed)
    X, Xt = rng.standard_normal((n, 3)), rng.standard_normal((n, 4))
    np.testing.assert_allclose(cross_covariance(PairedDataset(X, Xt)).matrix,
                               double_sum_cross_cov(X, Xt), atol=1e-12)


def test_full_batch_equals_full_cross_covariance():
    _, _, ds = random_problem(1)
    np.testing.assert_allclose(batch_cross_covariance(ds, range(ds.n)).matrix,
                               cross_covariance(ds).matrix, atol=1e-15)


def test_size_two_batch_on_two_point_example():
    ds = PairedDataset(np.vstack([np.eye(2), [[5.0, 5.0]]]), np.vstack([np.eye(2), [[1.0, -2.0]]]))
    S = batch_cross_covariance(ds, [0, 1])
    np.testing.assert_allclose(S.matrix, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    assert S.source == "batch" and S.n_or_b == 2


@pytest.mark.parametrize("n,b", [(6, 3), (5, 2), (4, 4)])
def test_average_over_all_batches_equals_full(n, b):
    rng = np.random.default_rng(n * 10 + b)
    ds = PairedDataset(rng.standard_normal((n, 3)), rng.standard_normal((n, 2)))
    avg = np.mean([batch_cross_covariance(ds, B).matrix
                   for B in itertools.combinations(range(n), b)], axis=0)
    np.testing.assert_allclose(avg, cross_covariance(ds).matrix, atol=1e-12)


@pytest.mark.parametrize("batch", [[0], [0, 0, 1], [0, 7], [-1, 2]])
def test_batch_validation(batch):
    _, _, ds = random_problem(2)
    with pytest.raises(ValueError):
        batch_cross_covariance(ds, batch)


# ---------------------------------------------------------------- penalty and linear loss

def test_penalty_examples():
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 2)))[0].T
    assert penalty(EncoderPair.from_full(Q, 3), 1.0) == pytest.approx(0.0, abs=1e-24)
    G = EncoderPair(np.array([[2.0, 0.0]]), np.array([[0.0]]))
    assert penalty(G, 1.0) == 2.25
    assert penalty(G, 2.0) == 2 * penalty(G, 1.0)


def test_linear_loss_two_point_example():
    G = EncoderPair(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]))
    S = cross_covariance(TWO_POINT)
    assert linear_loss(G, S, 1e-14) == pytest.approx(-0.5, abs=1e-13)
    assert pairwise_linear_loss(G, np.eye(2), np.eye(2), 0.0) == pytest.approx(-0.5, abs=1e-15)


def test_linear_loss_at_zero_is_penalty_of_identity():
    S = np.random.default_rng(0).standard_normal((4, 3))
    G = EncoderPair(np.zeros((3, 4)), np.zeros((3, 3)))
    assert linear_loss(G, S, 0.8) == pytest.approx(0.8 / 4 * 3, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 5.0))
def test_trace_form_equals_pairwise_form(seed, alpha):
    _, G, ds = random_problem(seed)
    assert linear_loss(G, cross_covariance(ds), alpha) == pytest.approx(
        pairwise_linear_loss(G, ds.X, ds.Xt, alpha), abs=1e-12 * max(1.0, abs(linear_loss(G, cross_covariance(ds), alpha))))


def test_linear_loss_dimension_mismatch():
    G = EncoderPair(np.ones((1, 3)), np.ones((1, 2)))
    with pytest.raises(ValueError):
        linear_loss(G, np.ones((2, 3)), 1.0)


# ---------------------------------------------------------------- linear gradient and Hessian

def test_gradient_vanishes_at_oracle():
    rng = np.random.default_rng(3)
    S = rng.standard_normal((6, 5))
    sol = empirical_minimizer(S, 2, 2.0)
    assert np.linalg.norm(linear_grad(sol.G_hat, S, 2.0)) <= 1e-8


def test_gradient_vanishes_for_zero_sigma_and_orthonormal_rows():
    Q = np.linalg.qr(np.random.default_rng(1).standard_normal((7, 3)))[0].T
    G = EncoderPair.from_full(Q, 4)
    assert np.abs(linear_grad(G, np.zeros((4, 3)), 1.3)).max() <= 1e-15


@pytest.mark.parametrize("seed", range(10))
def test_linear_grad_matches_finite_differences(seed):
    rng, G, ds = random_problem(seed)
    S = cross_covariance(ds)
    alpha = float(rng.uniform(0.1, 2.0))
    fd = central_difference(lambda x: linear_loss(EncoderPair.from_full(x, G.d1), S, alpha), G.G)
    assert rel_err(linear_grad(G, S, alpha), fd) <= 1e-6


def test_hessian_zero_direction():
    _, G, ds = random_problem(4)
    assert hessian_quadratic_form(G, cross_covariance(ds), 1.0, np.zeros_like(G.G)) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_hessian_matches_second_differences(seed):
    rng, G, ds = random_problem(seed)
    S = cross_covariance(ds)
    Z = rng.standard_normal(G.G.shape)
    f = lambda t: linear_loss(EncoderPair.from_full(G.G + t * Z, G.d1), S, 0.9)
    h = 1e-4
    fd = (f(h) - 2 * f(0.0) + f(-h)) / h ** 2
    assert hessian_quadratic_form(G, S, 0.9, Z) == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_hessian_at_oracle_bounded_below_by_gap_along_aligned_directions(seed):
    rng = np.random.default_rng(100 + seed)
    S = rng.standard_normal((5, 4))
    r, alpha = 2, 1.0
    sol = empirical_minimizer(S, r, alpha)
    lam = np.linalg.svd(S, compute_uv=False)
    G_hat = sol.G_hat.G
    for _ in range(20):
        G = G_hat + 0.1 * rng.standard_normal(G_hat.shape)
        _, O = procrustes_distance(G, G_hat)
        D = O @ G - G_hat
        val = hessian_quadratic_form(sol.G_hat, S, alpha, D)
        assert val >= (lam[r - 1] - lam[r]) * np.sum(D * D) - 1e-12


# ---------------------------------------------------------------- softmax loss

def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(alpha=0.0)
    with pytest.raises(ValueError):
        LossConfig(tau=-1.0)
    with pytest.raises(ValueError):
        LossConfig(similarity="euclidean")


def test_equal_similarities_give_two_log_n():
    _, _, ds = random_problem(5, n=6)
    G = EncoderPair(np.zeros((2, ds.d1)), np.zeros((2, ds.d2)))
    assert clip_loss(G, ds, None, LossConfig()) == pytest.approx(2 * math.log(6), abs=1e-14)
    assert np.abs(clip_grad(G, ds, None, LossConfig())).max() == 0.0


def test_saturated_softmax_gives_vanishing_loss():
    ds = PairedDataset(10 * np.eye(3), 10 * np.eye(3))
    G = EncoderPair(np.eye(3), np.eye(3))
    assert 0.0 <= clip_loss(G, ds, None, LossConfig(tau=2.0)) <= 1e-15


@pytest.mark.parametrize("similarity", ["inner_product", "cosine"])
@pytest.mark.parametrize("seed", range(5))
def test_clip_loss_matches_brute_force(similarity, seed):
    rng, G, ds = random_problem(seed, n=5)
    batch = [0, 2, 3, 4]
    cfg = LossConfig(1.0, float(rng.uniform(0.3, 3.0)), similarity)
    expected = brute_clip_loss(G, ds.X[batch], ds.Xt[batch], cfg.tau, cosine=similarity == "cosine")
    assert clip_loss(G, ds, batch, cfg) == pytest.approx(expected, rel=1e-12)


def test_clip_loss_is_stable_at_small_temperature():
    rng, G, ds = random_problem(7)
    val = clip_loss(G, ds, None, LossConfig(tau=1e-4))
    assert np.isfinite(val) and val >= 0


@pytest.mark.parametrize("similarity", ["inner_product", "cosine"])
@pytest.mark.parametrize("seed", range(8))
def test_clip_grad_matches_finite_differences(similarity, seed):
    rng, G, ds = random_problem(seed)
    cfg = LossConfig(1.0, float(rng.uniform(0.5, 5.0)), similarity)
    batch = [1, 2, 4, 6]
    fd = central_difference(lambda x: clip_loss(EncoderPair.from_full(x, G.d1), ds, batch, cfg), G.G)
    assert rel_err(clip_grad(G, ds, batch, cfg), fd) <= 1e-5


def test_cosine_rejects_zero_embedding():
    ds = PairedDataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.eye(2))
    G = EncoderPair(np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]]))
    with pytest.raises(ValueError):
        clip_loss(G, ds, None, LossConfig(similarity="cosine"))
    with pytest.raises(ValueError):
        clip_grad(G, ds, None, LossConfig(similarity="cosine"))


def test_temperature_limit_recovers_unpenalized_linear_loss():
    rng, G, ds = random_problem(11, n=10)
    n = ds.n
    unpen = linear_loss(G, cross_covariance(ds), 1.0) - penalty(G, 1.0)
    errs = []
    for tau in (1e3, 1e4):
        val = clip_loss(G, ds, None, LossConfig(tau=tau))
        errs.append(abs(tau * (val - 2 * math.log(n)) / (2 * (1 - 1 / n)) - unpen))
    assert 5 <= errs[0] / errs[1] <= 20


# ---------------------------------------------------------------- invariances

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_losses_are_rotation_invariant(seed):
    rng, G, ds = random_problem(seed, n=5)
    O = random_orthogonal(rng, G.r)
    S = cross_covariance(ds)
    assert linear_loss(G.rotate(O), S, 0.7) == pytest.approx(linear_loss(G, S, 0.7), abs=1e-10)
    for sim in ("inner_product", "cosine"):
        cfg = LossConfig(0.7, 1.5, sim)
        assert clip_loss(G.rotate(O), ds, None, cfg) == pytest.approx(clip_loss(G, ds, None, cfg), abs=1e-10)


def test_encoder_pair_validation():
    with pytest.raises(ValueError):
        EncoderPair(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        EncoderPair(np.array([[np.nan]]), np.array([[1.0]]))


def test_cross_covariance_container_is_accepted_everywhere():
    _, G, ds = random_problem(8)
    S = cross_covariance(ds)
    assert isinstance(S, CrossCovariance)
    assert linear_loss(G, S, 1.0) == linear_loss(G, S.matrix, 1.0)
