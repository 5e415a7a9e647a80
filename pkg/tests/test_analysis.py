import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldpm import analysis as an
from ldpm import attacks as at
from ldpm import channel as ch
from ldpm import protocols as pr

# Worst-set margins from a 40-digit mpmath summation of both binomial PMFs.
BINOMIAL_MARGINS = {
    (931, 0): -0.267959345037365,
    (931, 58): -0.247752015404853,
    (931, 116): -0.224937897086489,
    (1200, 0): -0.267962919170818,
    (1200, 75): -0.247575447487467,
    (1200, 150): -0.224716396302759,
    (2000, 0): -0.267934285162905,
    (2000, 125): -0.247459665053008,
    (2000, 250): -0.224323218720709,
    (10, 0): -0.276683023252193,
}


@pytest.mark.parametrize("nm", sorted(BINOMIAL_MARGINS))
def test_binomial_margin_matches_high_precision_value(nm):
    rep = an.binomial_claim_verify(*nm)
    assert rep.margin == pytest.approx(BINOMIAL_MARGINS[nm], abs=1e-12)
    assert rep.details["pmf_sums"] == pytest.approx([1.0, 1.0], abs=1e-9)


def test_binomial_out_of_range_note():
    rep = an.binomial_claim_verify(10, 0)
    assert not rep.details["in_range"]
    assert "out-of-range" in rep.details["note"]
    assert an.binomial_claim_verify(931, 116).details["in_range"]


def test_rr_count_distributions_reproduce_binomial_claim():
    n, m, eps = 1000, 100, 1.0
    _, mu = at.mu_threshold(m, n, eps)
    honest, attacked = an.rr_count_distributions(n, m, eps, mu)
    assert honest.sum() == pytest.approx(1.0)
    assert attacked.sum() == pytest.approx(1.0)
    rep = an.indistinguishability_margin(honest, attacked)
    assert rep.passed
    assert rep.margin == pytest.approx(an.binomial_claim_verify(n, m).margin, abs=1e-9)


def test_margin_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert an.indistinguishability_margin(p, p, factor=1, slack=0).margin == pytest.approx(0.0)
    rep = an.indistinguishability_margin([1.0, 0.0], [0.0, 1.0], labels=["a", "b"])
    assert rep.margin == pytest.approx(2 / 3)
    assert rep.witness == ["a"]
    assert not rep.passed


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12).flatmap(lambda k: st.tuples(
    st.lists(st.floats(0.001, 1), min_size=k, max_size=k),
    st.lists(st.floats(0.001, 1), min_size=k, max_size=k))))
def test_margin_with_unit_factor_is_total_variation(pq):
    p = np.array(pq[0]) / sum(pq[0])
    q = np.array(pq[1]) / sum(pq[1])
    tv = an.distribution_distance(p, q, "tv")
    assert an.indistinguishability_margin(p, q, 1, 0).margin == pytest.approx(tv, abs=1e-12)


def test_distance_examples():
    d = 7
    u = np.full(d, 1 / d)
    pt = np.eye(d)[0]
    assert an.distribution_distance(u, u) == 0.0
    assert an.distribution_distance(u, pt) == pytest.approx(2 * (1 - 1 / d))
    planted = pr.PlantedHalf(ch.SubsetH(8, (1, 2, 4, 8)), 0.37).pmf()
    assert an.distribution_distance(np.full(8, 1 / 8), planted) == pytest.approx(0.37)
    assert an.distribution_distance([0.1, -0.2, 0.05], [0, 0, 0], "linf") == pytest.approx(0.2)
    with pytest.raises(ValueError):
        an.distribution_distance(u, u, "l7")
    with pytest.raises(ValueError):
        an.distribution_distance(u, u[:3])


def test_leaky_set_examples():
    d, eps = 8, 1.0
    h = ch.SubsetH(d, (1, 2, 3, 4))
    const = ch.constant_channel(np.full(3, 1 / 3), (1, 2, 3), tuple(range(1, d + 1)))
    assert an.leaky_message_set(const, h, 0.0) == frozenset()
    assert an.leaky_message_set(const, h, 0.5) == frozenset()
    r = ch.kary_rr_channel(d, eps)
    e = math.e
    assert an.leaky_message_set(r, h, 0.0) == frozenset(range(1, d + 1))
    inside = math.log(1 + (e - 1) / (e + d - 1))
    outside = math.log((e + d - 1) / d)
    v = max(inside, outside) + 1e-9
    assert an.leaky_message_set(r, h, v) == frozenset()
    between = min(inside, outside) + 1e-9
    expected = frozenset(h.members) if inside > outside else frozenset(h.complement().members)
    assert an.leaky_message_set(r, h, between) == expected


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), v1=st.floats(0, 2), v2=st.floats(0, 2))
def test_leaky_set_monotone(seed, v1, v2):
    rng = np.random.default_rng(seed)
    d = 6
    r = ch.Channel(rng.dirichlet(np.ones(4), size=d), (1, 2, 3, 4), tuple(range(1, d + 1)))
    h = ch.SubsetH.random(d, rng)
    lo, hi = sorted((v1, v2))
    assert an.leaky_message_set(r, h, hi) <= an.leaky_message_set(r, h, lo)


def test_dependent_bound_value():
    # 40-digit evaluation: (e - 1) sqrt(16/256 ln(12 * 256)) = 1.2173...
    assert an.dependent_bound(0.5, 256, 256, 1) == pytest.approx(
        math.expm1(1.0) * math.sqrt(16 / 256 * math.log(12 * 256)), rel=1e-15)
    assert an.dependent_bound(0.5, 256, 256, 1) == pytest.approx(1.2173, abs=1e-4)
    assert an.independent_delta(100) == pytest.approx(1 / 18000)


def test_survey_examples():
    d = 8
    const = ch.constant_channel(np.full(4, 0.25), (1, 2, 3, 4), tuple(range(1, d + 1)))
    rep = an.embedding_privacy_survey([const] * 3, d, 20, 0)
    assert rep.fraction == 1.0
    assert rep.measured == [0.0] * 20
    rep = an.embedding_privacy_survey([ch.kary_rr_channel(d, 0.5)], d, 30, 1)
    assert rep.measured == pytest.approx([0.15029782511280559294] * 30, abs=1e-12)
    assert rep.details["distinct_channels"] == 1


def test_survey_never_exceeds_base_privacy():
    rng = np.random.default_rng(3)
    d = 10
    chans = [ch.Channel(rng.dirichlet(np.ones(5), size=d), tuple(range(5)), tuple(range(1, d + 1)))
             for _ in range(4)]
    rep = an.embedding_privacy_survey(chans, d, 25, 4)
    assert max(rep.measured) <= rep.details["base_epsilon"] + 1e-12


def test_report_round_trip():
    reports = [an.binomial_claim_verify(931, 58),
               an.embedding_privacy_survey([ch.kary_rr_channel(8, 0.5)], 8, 5, 0)]
    for rep in reports:
        back = an.Report.from_json(rep.to_json())
        assert type(back) is type(rep)
        assert back == rep
    doc = reports[0].to_dict()
    assert {"claim", "parameters", "margin_or_fraction", "confidence", "pass"} <= set(doc)


def test_wilson_interval():
    lo, hi = an.wilson_interval(0, 100)
    assert lo == 0.0 and 0.03 < hi < 0.04
    lo, hi = an.wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert an.wilson_interval(0, 0) == (0.0, 1.0)


def test_threshold_margin_empty_set_floor():
    margin, conf, test = an.threshold_margin(np.zeros(50), np.zeros(50))
    assert margin == pytest.approx(-1 / 3)
    assert conf == 0.0


def test_identical_runs_stay_within_band():
    p = pr.rr_mean_protocol(200, 1.0)
    rep = an.attack_indistinguishability_test(p, None, pr.Rademacher(0.0), pr.Rademacher(0.0),
                                              trials=400, seed=1, m=0)
    assert abs(rep.margin + 1 / 3) <= 3 * rep.confidence + 1e-12
    assert rep.passed


def test_scalar_statistic_needed_for_vectors():
    p = pr.hst_protocol(20, 3, 1.0)
    with pytest.raises(ValueError):
        an.attack_indistinguishability_test(p, None, pr.uniform_source(3), pr.uniform_source(3),
                                            trials=3, seed=0, m=0)
    rep = an.attack_indistinguishability_test(p, None, pr.uniform_source(3), pr.uniform_source(3),
                                              trials=20, seed=0, m=0, statistic=lambda o: o[0])
    assert rep.passed


def test_verdict_outputs_use_failure_rates():
    p = pr.raptor_protocol(4000, 8, 1.0, beta=0.1, groups=4)
    planted = pr.PlantedHalf(ch.SubsetH(8, (1, 2, 3, 4)), 0.05)
    rep = an.attack_indistinguishability_test(p, at.FiniteUniverse(ch.SubsetH(8, (1, 2, 3, 4))),
                                              planted, pr.uniform_source(8), trials=40, seed=2, m=400)
    assert rep.passed
    assert 0 <= rep.details["honest_uniform_rate"] <= 1
    assert rep.details["honest_uniform_ci"][0] <= rep.details["honest_uniform_rate"]
