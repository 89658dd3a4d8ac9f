"""Two ways to turn (reference distribution, offset Gaussian) into a target.

Expectation inference blends all candidate reference blocks by probability;
sampling inference commits to one concrete block, which is interpretable but
noisy. The annealed loss bridges the two by averaging N sampled pairs and
shrinking N.

Run:  python demos/04_expectation_vs_sampling.py
"""

import numpy as np

from blockworld import AnnealSchedule, predict_expectation, predict_sample
from blockworld import autodiff as ad
from blockworld.target import intermediate_loss

positions = np.array([[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [2.0, 0.0, 3.0]])
ref_probs = np.array([0.70, 0.20, 0.10])
offset_center = np.array([1.0, 0.0, 0.0])
sigma = 0.5
truth = positions[0] + [1.0, 0.0, 0.0]

exp = predict_expectation(ref_probs, positions, offset_center)
print("expectation prediction:", np.round(exp.position, 3))

rng = np.random.default_rng(0)
print("\nfive sampled predictions (note the committed reference index):")
for _ in range(5):
    s = predict_sample(ref_probs, positions, offset_center, sigma, rng)
    print(f"  ref block {s.ref_index}  position {np.round(s.position, 3)}")

# The annealed loss interpolates between those regimes as N shrinks.
schedule = AnnealSchedule()
print("\nanneal schedule (epochs_per_stage=2):",
      [schedule.current(e) for e in range(0, 22, 2)])

print("\nintermediate loss vs N (distance to truth", np.round(truth, 2), "):")
exact = np.linalg.norm(truth - (ref_probs @ positions + offset_center))
for n in (1, 5, 20, 1000, 100_000):
    losses = [
        float(intermediate_loss(ad.tensor(ref_probs), ad.tensor(offset_center),
                                positions, truth, n, sigma,
                                np.random.default_rng(seed)).values)
        for seed in range(5)
    ]
    print(f"  N={n:>6}: mean {np.mean(losses):.3f}  spread {np.std(losses):.3f}")
print(f"  distance to exact expectation: {exact:.3f} (the large-N limit)")
