"""How much can m fake users move a randomized-response mean?

Honest users hold +-1 bits and report them through randomized response; the
server rescales and averages.  A handful of corrupted users who skip the
randomizer and always send the top message shift the estimate by c_eps * m/n,
a factor c_eps more than they could by lying about their data.  We then check
that this shift is invisible: the attacked run on Rad(0) data is statistically
close to an honest run on Rad(mu) data.
"""
import numpy as np

from ldpm import analysis, attacks
from ldpm import protocols as pr

n, m, eps, trials = 10_000, 500, 1.0, 400
proto = pr.rr_mean_protocol(n, eps)
print(f"n={n}, m={m}, eps={eps}, c_eps={proto.c:.4f}")

for label, adv in [("honest", None), ("lie about data", attacks.InputManipulation(1)),
                   ("skip the randomizer", attacks.RRPlusOne())]:
    outs = [attacks.run_manip_game(proto, pr.Rademacher(0.0), adv,
                                   attacks.GameConfig(n, 0 if adv is None else m, seed=t)).output
            for t in range(trials)]
    print(f"  {label:<22s} mean output {np.mean(outs):+.4f}")
print(f"  predicted shifts: m/n = {m / n:.4f}, c_eps*m/n = {proto.c * m / n:.4f}")

# the server cannot tell which world it is in
n, m = 1000, 100
_, mu = attacks.mu_threshold(m, n, eps)
honest, attacked = analysis.rr_count_distributions(n, m, eps, mu)
exact = analysis.indistinguishability_margin(honest, attacked)
print(f"\nexact test margin (honest Rad({mu:.3f}) vs attacked Rad(0)), n={n}, m={m}: {exact.margin:+.4f}")
mc = analysis.attack_indistinguishability_test(pr.rr_mean_protocol(n, eps), attacks.RRPlusOne(),
                                               pr.Rademacher(mu), pr.Rademacher(0.0),
                                               trials=2000, seed=1, m=m)
print(f"Monte Carlo threshold margin {mc.margin:+.4f} (3 x conf = {3 * mc.confidence:.4f}), "
      f"passes: {mc.passed}")
