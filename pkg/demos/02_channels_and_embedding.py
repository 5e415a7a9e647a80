"""Channel algebra: every private binary randomizer is randomized response plus post-processing.

We draw a random eps-private channel, factor it through randomized response,
and recompose.  Then we embed a d-ary randomized response into a binary
channel by averaging over a random half H of the universe and watch its
privacy loss shrink to roughly 2(e^eps - 1)/d.
"""
import math

import numpy as np

from ldpm import analysis
from ldpm import channel as ch

rng = np.random.default_rng(0)
eps = 0.8
r, level = ch.random_private_channel(eps, 5, rng, tight=True)
print("random channel (rows are inputs +1, -1):")
print(np.array2string(r.matrix, precision=4))
print(f"measured eps = {level:.4f}")

post = ch.kov_decompose(r, level)
print("post-processor applied to randomized response:")
print(np.array2string(post.matrix, precision=4))
back = ch.compose(post, ch.rr_channel(level))
print(f"recomposition error (max row TV): {back.row_tv(r).max():.2e}")

print("\nembedding d-ary randomized response at eps = 0.5")
for d in (8, 32, 256):
    h = ch.SubsetH.random(d, rng)
    q = ch.embed_channel(ch.kary_rr_channel(d, 0.5), h)
    got = ch.measure_privacy(q).epsilon
    print(f"  d={d:4d}: eps' = {got:.6f}  closed form {math.log1p(2 * math.expm1(0.5) / d):.6f}")

rep = analysis.embedding_privacy_survey([ch.kary_rr_channel(256, 0.5)], 256, 50, rng)
print(f"survey over 50 random H: fraction under the bound {rep.fraction:.2f}, "
      f"bound {rep.details['dependent_bound']:.4f}")
