"""Without privacy the only error left is statistical: about 1/sqrt(n)."""
import numpy as np

from contrastlab.harness.experiments import loglog_fit, statistical_errors
from contrastlab.synthdata import build_model_spec

spec = build_model_spec(8, 8, 2, 4.0, 4.0, 1.5, seed=0)
ns = [250, 500, 1000, 2000, 4000, 8000, 16000]
means = []
for n in ns:
    errs = statistical_errors(spec, n, alpha=0.5, seeds=range(20))
    means.append(errs.mean())
    print(f"n={n:6d}  mean alignment error {errs.mean():.4f} +- {errs.std(ddof=1) / np.sqrt(errs.size):.4f}")

fit = loglog_fit(ns, means)
print(f"log-log slope {fit['slope']:.3f} (R^2 {fit['r_squared']:.3f}); theory: -1/2 up to log factors")
