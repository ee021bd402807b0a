"""Energy functions, the intervention operator, and a gradient check.

Lower energy means a more plausible triple for every model.
Run:  python demos/01_energies_and_gradients.py
"""

import numpy as np

from cause_kge import ScoreModel, energy, energy_grad, intervene

rng = np.random.default_rng(0)

# one head / tail pair of width 8; relation width depends on the model
h, t = rng.normal(size=(2, 8))
for kind in ("TransE", "DistMult", "ComplEx", "RotatE", "PairRE"):
    model = ScoreModel(kind)
    r = rng.normal(size=model.relation_dim(8))
    print(f"{kind:9s} d_r={len(r):2d}  energy={energy(model, h, r, t):+.4f}")

# TransE is zero exactly when h + r = t
m = ScoreModel("TransE")
print("TransE at h + r = t:", energy(m, np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])))

# the intervention operator recombines causal and confounder vectors
caus, conf = np.array([1.0, 2.0]), np.array([3.0, 4.0])
for op in ("add", "subtract", "multiply", "concat"):
    print(f"{op:9s}", intervene(caus, conf, op))

# analytic gradient vs a central difference on one coordinate
m = ScoreModel("ComplEx")
r = rng.normal(size=8)
e, g = energy_grad(m, h, r, t)
step = 1e-6
bump = np.zeros(8)
bump[3] = step
numeric = (energy(m, h + bump, r, t) - energy(m, h - bump, r, t)) / (2 * step)
print(f"dE/dh[3]: analytic {g.d_head[3]:+.10f}  numeric {numeric:+.10f}")
