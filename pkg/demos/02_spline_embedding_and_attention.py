"""How a scalar dose turns into a feature vector and steers the outcome head.

The treatment embedding is a fixed truncated power basis; the outcome head
attends from that embedding (one query) over the representation split into
tokens (keys/values). Watch the attention weights move as the dose sweeps
across [0, 1].
"""

import numpy as np

from acfr import model as md
from acfr.splines import SplineConfig, basis_eval, basis_matrix

cfg = SplineConfig(degree=2, knots=(1 / 3, 2 / 3))
print(f"spline basis: degree {cfg.degree}, knots {cfg.knots}, dimension {cfg.dim}")
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"  S({t:4.2f}) = {np.round(basis_eval(t, cfg), 4)}")

# continuity at a knot: value and slope agree from both sides
k = cfg.knots[0]
eps = 1e-7
lo, hi = basis_eval(k - eps, cfg), basis_eval(k + eps, cfg)
print(f"\njump across knot {k:.4f}: {np.max(np.abs(hi - lo)):.2e}")

# attention weights as a function of the dose
mcfg = md.ModelConfig(input_dim=10, method="acfr", hidden_width=16,
                      hidden_layers=1, repr_dim=16, attn_dim=8, value_dim=8,
                      tokens=4, head_hidden=8, spline=cfg)
params = md.init_params(mcfg, seed=5)
rng = np.random.default_rng(3)
z = md.encode(params, rng.normal(size=(1, 10))).data

print("\nattention over 4 representation tokens as the dose moves:")
for t in np.linspace(0, 1, 6):
    w = md.attention_weights(params, z, np.array([t]))[0]
    bar = "  ".join(f"{v:.3f}" for v in w)
    print(f"  t={t:4.2f}:  {bar}")

ts = np.linspace(0, 1, 65)
curve = md.response_curves(params, rng.normal(size=(1, 10)), ts)[0]
print(f"\nan untrained response curve spans [{curve.min():.3f}, {curve.max():.3f}]"
      f" across the dose grid (shape comes from the spline query)")
print(f"basis matrix for the 65-point grid has shape {basis_matrix(ts, cfg).shape}")
