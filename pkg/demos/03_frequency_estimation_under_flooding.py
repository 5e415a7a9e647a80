"""Public versus private sign vectors in frequency estimation.

HST publishes each user's random sign vector, so a corrupted user can only
send one scalar and moves every coordinate by at most 2c/n.  The variant that
lets users pick and transmit their own sign vectors hands the adversary a
d-dimensional lever: the l1 damage grows with d.
"""
import numpy as np

from ldpm import experiments

n, m, eps = 20_000, 200, 1.0
print(f"n={n}, m={m}, eps={eps}")
print(f"{'d':>4s} {'private signs':>14s} {'public signs':>13s} {'ratio':>6s} {'sqrt(d)/4':>9s}")
for d in (1, 4, 16, 64):
    g = experiments.suboptimality_gap(n, d, eps, m, trials=5, rng=d)
    print(f"{d:4d} {g.l1_bias_suboptimal:14.4f} {g.l1_bias_hst:13.4f} {g.ratio:6.2f} {np.sqrt(d) / 4:9.2f}")

print("\nhonest error of hst shrinks like 1/sqrt(n):")
plan = experiments.ExperimentPlan("hst", {"n": [1000, 4000, 16000], "d": [16]}, trials=100, seed=3)
report = experiments.run_plan(plan)
for row in report.rows:
    print(f"  n={row['n']:6d}  mean l-inf error {row['mean_err']:.4f}")
print(f"  fitted slope {report.slopes()[0]['slope']:+.3f}")
