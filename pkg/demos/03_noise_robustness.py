"""Plain vs CausE training as the training split gets noisier.

Each noise rate replaces that fraction of training triples by false ones;
both trainers see the same noisy split and are scored on the clean test
split.  Run:  python demos/03_noise_robustness.py [n_seeds]
(5 seeds take a few minutes.)
"""

import sys

from cause_kge.experiments import noise_robustness
from cause_kge.resources import load_synthetic50, synthetic50_config

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
run = noise_robustness(load_synthetic50(), synthetic50_config(), (0.0, 0.05, 0.10), range(n_seeds))
print("median filtered test MRR")
print(run.table())
print("median AUC (causal, confounder, intervention) on clean data:",
      tuple(round(a, 3) for a in run.median_separation()))
