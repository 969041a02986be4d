"""Monte Carlo check of the second-order noise expansion.

Perturbs a fixed 3x3 input with transport-shaped noise of size eta and
compares the mean change in squared loss with the predicted
eta^2 (penalty) term.  The ratio should approach 1 as eta shrinks.

    python demos/expansion_check.py [--draws N]
"""
import argparse

from wassreg.config import load_config
from wassreg.experiments import run_verify_expansion

ap = argparse.ArgumentParser()
ap.add_argument("--draws", type=int, default=200_000)
args = ap.parse_args()

for model in ("linear", "mlp"):
    cfg = load_config(None, {"expansion.model": model, "expansion.draws": args.draws})
    print(model)
    for r in run_verify_expansion(cfg):
        print(f"  eta {r.eta:<5g} empirical {r.empirical_delta:+.3e}  "
              f"predicted {r.predicted_delta:+.3e}  ratio {r.ratio:.4f}  "
              f"remainder/eta^2 {abs(r.empirical_delta - r.predicted_delta) / r.eta**2:.3f}")
