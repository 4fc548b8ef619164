"""The linear contrastive loss has a closed-form minimizer.

For cross-covariance S = P diag(l) Q^T the minimizer is
G1 = diag(sqrt((1 + l/alpha)/2)) P_r^T, and G2 likewise with Q_r, up to an
r x r rotation. Here we check that against plain gradient descent.
"""
import numpy as np

from contrastlab.loss import EncoderPair, cross_covariance, linear_grad, linear_loss
from contrastlab.oracle import convexity_certificate, empirical_minimizer, procrustes_distance
from contrastlab.synthdata import build_model_spec, generate_pairs

alpha = 0.5
spec = build_model_spec(8, 8, 2, 4.0, 4.0, 1.5, seed=0)
ds = generate_pairs(spec, 2000, seed=0)
S = cross_covariance(ds)

sol = empirical_minimizer(S, spec.r, alpha)
cert = convexity_certificate(S, spec.r, alpha)
print("optimal loss", sol.optimal_loss)
print("gradient norm at the oracle", np.linalg.norm(linear_grad(sol.G_hat, S, alpha)))
print(f"certificate: beta_u={cert.beta_u:.3f} beta_l={cert.beta_l:.4f} gamma={cert.gamma:.4f}")

# start gradient descent from a random point and watch it reach the oracle orbit
rng = np.random.default_rng(0)
G = 0.1 * rng.standard_normal(sol.G_hat.G.shape)
eta = 1 / cert.beta_u
for t in range(3001):
    enc = EncoderPair.from_full(G, ds.d1)
    if t % 500 == 0:
        dist, _ = procrustes_distance(G, sol.G_hat.G)
        print(f"step {t:4d}  loss {linear_loss(enc, S, alpha): .6f}  distance to oracle {dist:.2e}")
    G = G - eta * linear_grad(enc, S, alpha)
