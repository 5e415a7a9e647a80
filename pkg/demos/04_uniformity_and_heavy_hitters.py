"""Uniformity testing and heavy hitters at realistic scale.

The uniformity tester needs n large enough that its threshold stays below
1/2; with 1428 groups that means tens of millions of users.  Honest runs on
iid data are simulated group by group with exact binomial counts, so this
runs in about a second.  The heavy-hitter protocol then recovers a value all
users share, with a hash range of several million buckets.
"""
import numpy as np

from ldpm import channel as ch
from ldpm import protocols as pr

d, beta = 64, 0.1
groups = pr.raptor_group_count(beta)
n = groups * 25_000
tester = pr.raptor_protocol(n, d, 1.0, beta=beta)
print(f"uniformity tester: G={groups}, n={n:,}, threshold alpha={tester.alpha:.4f}")

h = ch.SubsetH.random(d, np.random.default_rng(1))
for mu in (0.0, 2 * tester.alpha, 4 * tester.alpha, 8 * tester.alpha):
    src = pr.PlantedHalf(h, min(mu, 1.0))
    rate = np.mean([tester.run_iid(src, seed=(7, t)) == pr.NOT_UNIFORM for t in range(100)])
    print(f"  planted mu={mu:.3f}: says 'not uniform' in {rate:.0%} of runs")

n, d = 512, 256
k = pr.hh_k(n)
hh = pr.hh_protocol(n, d, k, 1.0)
found = 0
for t in range(20):
    out, _ = hh.run(pr.point_source(d, 99), seed=t)
    found += 99 in out
print(f"\nheavy hitters: n={n}, d={d}, k={k:,}; value 99 listed in {found}/20 runs")
