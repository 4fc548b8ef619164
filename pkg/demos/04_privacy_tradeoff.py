"""Privacy against utility on the synthetic model.

For each epsilon the noise multiplier is calibrated as
C_sigma sqrt(T ln(1/delta)) / (n eps); the alignment error against the
population minimizer falls as epsilon grows, towards the non-private baseline.
This demo uses 3 repeats to stay quick; the acceptance suite uses 10.
"""
from contrastlab.harness.config import epsilon_sweep_config
from contrastlab.harness.experiments import run_tradeoff_sweep
from contrastlab.harness.io import render_markdown
from contrastlab.privacy import PrivacyBudget, calibrate_sigma, preconditions, rdp_epsilon

budget = PrivacyBudget(1.0, 1 / 4000)
print("preconditions at n=2000, b=100, T=4000:", {k: v["ok"] for k, v in preconditions(2000, 100, 4000, budget).items()})
sigma = calibrate_sigma(2000, 100, 4000, budget)
print(f"sigma for eps=1: {sigma:.5f}; RDP accountant says eps = {rdp_epsilon(sigma / 2, 0.05, 4000, 1 / 4000):.3g}")
print("(the calibration constants are not tight, so the two need not agree)\n")

report = run_tradeoff_sweep(epsilon_sweep_config(repeats=3))
print(render_markdown(report.to_dict()))
