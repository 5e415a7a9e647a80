"""Exact and Monte Carlo verifiers for indistinguishability and amplification claims."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import channel as ch
from .channel import Channel, SubsetH

CLAIM_FACTOR = 51.0
CLAIM_SLACK = 1.0 / 3.0
CLAIM_MIN_N = 931
UNIFORM_RATE = 1.0 / 80.0
ATTACKED_RATE = 1.0 / 120.0


@dataclass
class Report:
    """Verifier outcome; ``details`` holds claim-specific extras."""

    claim: str
    parameters: dict
    margin_or_fraction: float
    confidence: float | None
    passed: bool
    details: dict = field(default_factory=dict)

    kind = "report"

    def to_dict(self) -> dict:
        return {"report": self.kind, "claim": self.claim, "parameters": self.parameters,
                "margin_or_fraction": self.margin_or_fraction, "confidence": self.confidence,
                "pass": bool(self.passed), "details": self.details}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "Report":
        kind = REPORT_KINDS.get(doc.get("report", "report"), Report)
        return kind(doc["claim"], dict(doc["parameters"]), doc["margin_or_fraction"],
                    doc["confidence"], bool(doc["pass"]), dict(doc.get("details", {})))

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, Report) and self.to_dict() == other.to_dict()


class IndistinguishabilityReport(Report):
    """One-sided relation P(Y) <= factor * Q(Y) + slack, checked over the worst set."""

    kind = "indistinguishability"

    @property
    def margin(self) -> float:
        return self.margin_or_fraction

    @property
    def witness(self):
        return self.details.get("witness")


class AmplificationReport(Report):
    kind = "amplification"

    @property
    def fraction(self) -> float:
        return self.margin_or_fraction

    @property
    def measured(self) -> list:
        return self.details["measured_epsilon"]


REPORT_KINDS = {"report": Report, "indistinguishability": IndistinguishabilityReport,
                "amplification": AmplificationReport}


# ---------------------------------------------------------------------------
# finite distributions


def _as_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"distributions have mismatched supports: {p.shape} vs {q.shape}")
    return p, q


def indistinguishability_margin(p, q, factor: float = CLAIM_FACTOR, slack: float = CLAIM_SLACK,
                                labels=None) -> IndistinguishabilityReport:
    """sup over sets Y of p(Y) - factor * q(Y) - slack, attained on {y : p(y) > factor * q(y)}."""
    p, q = _as_pair(p, q)
    gap = p - factor * q
    worst = np.flatnonzero(gap > 0)
    margin = math.fsum(gap[worst].tolist()) - slack
    wit = worst.tolist() if labels is None else [labels[i] for i in worst]
    return IndistinguishabilityReport(
        "indistinguishability", {"factor": factor, "slack": slack, "support": int(p.size)},
        margin, 0.0, margin <= 0, {"witness": wit})


def distribution_distance(p, q, norm: str = "l1") -> float:
    p, q = _as_pair(p, q)
    diff = np.abs(p - q)
    if norm == "l1":
        return math.fsum(diff.tolist())
    if norm == "tv":
        return 0.5 * math.fsum(diff.tolist())
    if norm == "l2":
        return float(np.sqrt(math.fsum((diff ** 2).tolist())))
    if norm == "linf":
        return float(diff.max())
    raise ValueError(f"unknown norm {norm!r}")


def binomial_pmfs(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """PMFs over 0..n of W = m + Bin(n - m, 1/2) and W+ = Bin(n, p+), in log space."""
    if not (0 <= m <= n):
        raise ValueError("need 0 <= m <= n")
    k = np.arange(n + 1)
    log_w = np.full(n + 1, -np.inf)
    log_w[m:] = stats.binom.logpmf(k[m:] - m, n - m, 0.5)
    p_plus = min(1.0, 0.5 + m / (2 * n) + math.sqrt(math.log(6) / (2 * n)))
    log_plus = stats.binom.logpmf(k, n, p_plus)
    return log_w, log_plus


def binomial_claim_verify(n: int, m: int) -> IndistinguishabilityReport:
    """Exact worst-set margin of Pr[W+ in S] <= 51 Pr[W in S] + 1/3."""
    log_w, log_plus = binomial_pmfs(n, m)
    pmf_w, pmf_plus = np.exp(log_w), np.exp(log_plus)
    worst = np.flatnonzero(log_plus > math.log(CLAIM_FACTOR) + log_w)
    margin = math.fsum((pmf_plus[worst] - CLAIM_FACTOR * pmf_w[worst]).tolist()) - CLAIM_SLACK
    sums = (math.fsum(pmf_w.tolist()), math.fsum(pmf_plus.tolist()))
    in_range = n >= CLAIM_MIN_N and 8 * m <= n
    details = {
        "worst_set_size": int(worst.size),
        "worst_set_range": [int(worst.min()), int(worst.max())] if worst.size else None,
        "pmf_sums": list(sums),
        "p_plus": min(1.0, 0.5 + m / (2 * n) + math.sqrt(math.log(6) / (2 * n))),
        "in_range": in_range,
    }
    if not in_range:
        details["note"] = "out-of-range: the claim covers n >= 931 and m <= n/8"
    return IndistinguishabilityReport("binomial", {"n": n, "m": m, "factor": CLAIM_FACTOR,
                                                   "slack": CLAIM_SLACK},
                                      margin, 0.0, margin <= 0, details)


def rr_count_distributions(n: int, m: int, epsilon: float, mu: float):
    """Exact distributions of the number of +1 messages under randomized response.

    Returns ``(honest, attacked)``: all n users honest on Rad(mu), and n - m
    honest users on Rad(0) plus m users always sending +1.
    """
    a = ch.keep_probability(epsilon)
    k = np.arange(n + 1)
    q_plus = 0.5 * (1 + mu) * a + 0.5 * (1 - mu) * (1 - a)
    honest = stats.binom.pmf(k, n, q_plus)
    attacked = np.zeros(n + 1)
    attacked[m:] = stats.binom.pmf(k[m:] - m, n - m, 0.5)
    return honest, attacked


# ---------------------------------------------------------------------------
# leaky messages and amplification


def leaky_message_set(channel: Channel, subset: SubsetH, v: float) -> frozenset:
    """Outputs whose log-likelihood ratio between R(U_H) and R(U) exceeds v in magnitude."""
    if channel.input_size != subset.universe_size:
        raise ValueError("channel and H live in different universes")
    p_h = channel.matrix[subset.mask].mean(axis=0)
    p_u = channel.matrix.mean(axis=0)
    leaky = []
    for j, y in enumerate(channel.output_labels):
        if p_u[j] == 0:
            if p_h[j] > 0:
                leaky.append(y)
            continue
        if p_h[j] == 0 or abs(math.log(p_h[j] / p_u[j])) > v:
            leaky.append(y)
    return frozenset(leaky)


def dependent_bound(epsilon: float, d: int, outputs: int, distinct: int) -> float:
    return math.expm1(2 * epsilon) * math.sqrt(16.0 / d * math.log(12.0 * outputs * distinct))


def dependent_side_condition(epsilon: float, d: int, outputs: int, distinct: int) -> bool:
    return d > 4 * math.expm1(2 * epsilon) ** 2 * math.log(12.0 * outputs * distinct)


def independent_delta(n: int) -> float:
    return 1.0 / (180 * n)


def independent_bound(epsilon: float, d: int, n: int) -> float:
    delta = independent_delta(n)
    return math.expm1(2 * epsilon) * math.sqrt(16.0 / d * math.log(24 * math.exp(epsilon) * n / delta))


def independent_side_condition(epsilon: float, d: int, n: int) -> bool:
    delta = independent_delta(n)
    return d > 4 * math.expm1(2 * epsilon) ** 2 * math.log(12 * math.exp(epsilon) * n / delta)


def embedding_privacy_survey(channels, d: int, num_h: int, rng, n: int | None = None) -> AmplificationReport:
    """Measure the privacy of every Q_{H,R_i} for ``num_h`` random balanced H.

    ``n`` is the number of users (defaults to the number of channels) and
    only enters the independent bound.
    """
    channels = list(channels)
    if d % 2:
        raise ValueError("d must be even")
    for c in channels:
        if c.input_size != d:
            raise ValueError("every channel must take inputs in [d]")
    rng = np.random.default_rng(rng)
    n = len(channels) if n is None else n
    distinct = ch.unique_channels(channels)
    eps = max(ch.measure_privacy(c).epsilon for c in distinct)
    outputs = max(c.output_size for c in distinct)
    dep = dependent_bound(eps, d, outputs, len(distinct)) if math.isfinite(eps) else math.inf
    ind = independent_bound(eps, d, n) if math.isfinite(eps) else math.inf
    delta = independent_delta(n)
    measured, meets_dep, meets_ind = [], [], []
    for _ in range(num_h):
        h = SubsetH.random(d, rng)
        qs = [ch.embed_channel(c, h) for c in distinct]
        e = max(ch.measure_privacy(q).epsilon for q in qs)
        measured.append(e)
        meets_dep.append(e <= dep)
        meets_ind.append(math.isfinite(ind) and
                         all(ch.measure_privacy(q, ind).delta <= delta for q in qs))
    frac_dep = float(np.mean(meets_dep)) if num_h else 1.0
    frac_ind = float(np.mean(meets_ind)) if num_h else 1.0
    details = {
        "measured_epsilon": [e if math.isfinite(e) else "inf" for e in measured],
        "base_epsilon": eps if math.isfinite(eps) else "inf",
        "distinct_channels": len(distinct),
        "outputs": outputs,
        "dependent_bound": dep if math.isfinite(dep) else "inf",
        "independent_bound": ind if math.isfinite(ind) else "inf",
        "independent_delta": delta,
        "fraction_dependent": frac_dep,
        "fraction_independent": frac_ind,
        "dependent_side_condition": bool(math.isfinite(eps)
                                         and dependent_side_condition(eps, d, outputs, len(distinct))),
        "independent_side_condition": bool(math.isfinite(eps) and independent_side_condition(eps, d, n)),
    }
    return AmplificationReport("amplification", {"d": d, "num_h": num_h, "n": n},
                               frac_dep, None, frac_dep >= 2.0 / 3.0, details)


# ---------------------------------------------------------------------------
# Monte Carlo indistinguishability of protocol outputs


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def threshold_margin(honest, attacked, factor: float = CLAIM_FACTOR, slack: float = CLAIM_SLACK):
    """Largest empirical P_h(T) - factor * P_a(T) - slack over one-sided threshold sets T.

    Returns ``(margin, confidence, test)`` where ``confidence`` is the binomial
    standard error of the maximising test.
    """
    h = np.sort(np.asarray(honest, dtype=np.float64))
    a = np.sort(np.asarray(attacked, dtype=np.float64))
    th, ta = h.size, a.size
    cuts = np.unique(np.concatenate([h, a]))
    best = (-math.inf, 0.0, None)
    for side in ("ge", "le"):
        if side == "ge":
            ph = (th - np.searchsorted(h, cuts, side="left")) / th
            pa = (ta - np.searchsorted(a, cuts, side="left")) / ta
        else:
            ph = np.searchsorted(h, cuts, side="right") / th
            pa = np.searchsorted(a, cuts, side="right") / ta
        gap = ph - factor * pa - slack
        j = int(np.argmax(gap))
        if gap[j] > best[0]:
            conf = math.sqrt(ph[j] * (1 - ph[j]) / th + factor ** 2 * pa[j] * (1 - pa[j]) / ta)
            best = (float(gap[j]), conf, (side, float(cuts[j])))
    # the empty set is always a test
    if -slack > best[0]:
        best = (-slack, 0.0, ("empty", None))
    return best


def attack_indistinguishability_test(protocol, adversary, source_honest, source_attacked,
                                     trials: int, seed, m: int, factor: float = CLAIM_FACTOR,
                                     slack: float = CLAIM_SLACK, statistic=None,
                                     adaptive: bool = False) -> IndistinguishabilityReport:
    """Compare honest runs on ``source_honest`` with attacked runs on ``source_attacked``.

    Scalar outputs (or ``statistic(output)``) are compared with threshold
    tests; the report passes when the margin stays within three standard
    errors of zero.  Verdict outputs are scored by the two failure rates
    ``P(honest says "uniform")`` and ``P(attacked says "not uniform")``; the
    report passes when either reaches its stated rate.
    """
    from .attacks import GameConfig, run_manip_game
    from .protocols import NOT_UNIFORM, UNIFORM

    ss = np.random.SeedSequence(seed)
    seeds = ss.generate_state(2 * trials, dtype=np.uint64)
    honest, attacked = [], []
    for t in range(trials):
        honest.append(run_manip_game(protocol, source_honest, None,
                                     GameConfig(protocol.n, 0, adaptive, int(seeds[2 * t]))).output)
        attacked.append(run_manip_game(protocol, source_attacked, adversary,
                                       GameConfig(protocol.n, m, adaptive, int(seeds[2 * t + 1]))).output)
    params = {"protocol": protocol.describe(), "m": m, "trials": trials, "factor": factor,
              "slack": slack, "adversary": adversary.describe() if adversary else None}
    if isinstance(honest[0], str):
        r1 = sum(o == UNIFORM for o in honest)
        r2 = sum(o == NOT_UNIFORM for o in attacked)
        rate1, rate2 = r1 / trials, r2 / trials
        ci1, ci2 = wilson_interval(r1, trials), wilson_interval(r2, trials)
        passed = rate1 >= UNIFORM_RATE or rate2 >= ATTACKED_RATE
        conf = max(ci1[1] - ci1[0], ci2[1] - ci2[0]) / 2
        return IndistinguishabilityReport(
            "attack-indist", params, max(rate1 / UNIFORM_RATE, rate2 / ATTACKED_RATE), conf, passed,
            {"honest_uniform_rate": rate1, "honest_uniform_ci": list(ci1),
             "attacked_not_uniform_rate": rate2, "attacked_not_uniform_ci": list(ci2)})
    if statistic is not None:
        honest = [statistic(o) for o in honest]
        attacked = [statistic(o) for o in attacked]
    if np.ndim(honest[0]) != 0:
        raise ValueError("vector outputs need a scalar statistic")
    margin, conf, test = threshold_margin(honest, attacked, factor, slack)
    return IndistinguishabilityReport("attack-indist", params, margin, conf, margin <= 3 * conf,
                                      {"test": list(test), "honest_mean": float(np.mean(honest)),
                                       "attacked_mean": float(np.mean(attacked))})

