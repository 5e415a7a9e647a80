import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ldpm import channel as ch
from ldpm import protocols as pr

C1 = 2.163953413738652848770


def outputs(protocol, source, trials, seed=0):
    return np.array([pr.run_honest(protocol, source, seed=(seed, t))[0] for t in range(trials)])


def assert_unbiased(samples, target, k=4.0):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64).T).T
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    assert np.all(np.abs(mean - target) <= k * se + 1e-12), (mean, target, se)


def test_rr_mean_high_epsilon_is_nearly_exact():
    p = pr.rr_mean_protocol(100, 20.0)
    out = outputs(p, pr.Fixed(np.ones(100, dtype=int)), 1000)
    assert out.mean() == pytest.approx(1.0, abs=1e-6)


def test_rr_mean_honest_rademacher_zero():
    n, trials = 10_000, 200
    p = pr.rr_mean_protocol(n, 1.0)
    out = outputs(p, pr.Rademacher(0.0), trials, seed=3)
    assert abs(out.mean()) <= 3 * C1 / math.sqrt(n * trials)


def test_rr_mean_ground_truth_for_fixed_data():
    p = pr.rr_mean_protocol(50, 1.0)
    _, truth = pr.run_honest(p, pr.Fixed(np.ones(50, dtype=int)), seed=1)
    assert truth == 1.0


def test_est_inf_unbiased():
    n, d = 60, 3
    p = pr.est_inf_protocol(n, d, 1.0)
    zeros = outputs(p, pr.Fixed(np.zeros((n, d))), 1500)
    assert_unbiased(zeros, np.zeros(d))
    ones = outputs(p, pr.Fixed(np.ones((n, d))), 1500, seed=1)
    assert_unbiased(ones, np.ones(d))


def test_hst_single_user_unbiased():
    d = 5
    p = pr.hst_protocol(1, d, 1.0)
    out = outputs(p, pr.Fixed(np.array([2])), 6000)
    target = np.zeros(d)
    target[1] = 1.0
    assert_unbiased(out, target)


def test_hst_ground_truth_sums_to_one():
    data = np.array([1, 2, 2, 4, 4, 4])
    p = pr.hst_protocol(6, 4, 1.0)
    _, truth = pr.run_honest(p, pr.Fixed(data), seed=0)
    assert truth == pytest.approx([1 / 6, 2 / 6, 0, 3 / 6])
    assert truth.sum() == pytest.approx(1.0)


def test_est1_unbiased_on_signed_basis_vectors():
    n, d = 40, 3
    p = pr.est1_protocol(n, d, 1.0)
    e1 = np.zeros((n, d))
    e1[:, 0] = 1
    out = outputs(p, pr.Fixed(e1), 2000)
    assert_unbiased(out, [1, 0, 0])
    neg = np.zeros((n, d))
    neg[:, 1] = -1
    out = outputs(p, pr.Fixed(neg), 2000, seed=1)
    assert_unbiased(out, [0, -1, 0])


def test_est1_bins_route_sign_correctly():
    p = pr.est1_protocol(2, 2, 1.0)
    data = np.array([[0, -1.0], [1.0, 0]])
    bins = p.encode_bins(data, np.random.default_rng(0))
    assert bins.tolist() == [4, 1]


def test_est2_calibration_constants():
    assert pr.sphere_mean_abs(1) == pytest.approx(1.0)
    assert pr.sphere_mean_abs(3) == pytest.approx(0.5)


def test_est2_d1_is_signed_rr():
    n = 50
    p = pr.est2_protocol(n, 1, 1.0)
    out = outputs(p, pr.Fixed(-np.ones((n, 1))), 2000)
    assert_unbiased(out, [-1.0])


def test_est2_unbiased_on_basis_vector():
    n, d = 50, 3
    p = pr.est2_protocol(n, d, 1.0)
    x = np.zeros((n, d))
    x[:, 0] = 1
    out = outputs(p, pr.Fixed(x), 3000)
    assert_unbiased(out, [1, 0, 0])


def test_est2_rejects_non_unit_vectors():
    p = pr.est2_protocol(2, 2, 1.0)
    with pytest.raises(pr.ProtocolError):
        p.prepare(np.array([[0.5, 0.0], [1.0, 0.0]]))


def test_divisibility_is_required():
    with pytest.raises(pr.ProtocolError):
        pr.est_inf_protocol(10, 3, 1.0)
    with pytest.raises(pr.ProtocolError):
        pr.raptor_protocol(1000, 64, 1.0)
    with pytest.raises(pr.ProtocolError):
        pr.hh_protocol(10, 16, 100, 1.0)
    with pytest.raises(pr.ProtocolError):
        pr.hh_protocol(12, 12, 100, 1.0)


def test_input_validation():
    with pytest.raises(pr.ProtocolError):
        pr.rr_mean_protocol(3, 1.0).prepare(np.array([1, 0, -1]))
    with pytest.raises(pr.ProtocolError):
        pr.hst_protocol(3, 4, 1.0).prepare(np.array([1, 5, 2]))
    with pytest.raises(pr.ProtocolError):
        pr.rr_mean_protocol(3, 1.0).prepare(np.array([1, 1]))
    with pytest.raises(pr.ProtocolError):
        pr.rr_mean_protocol(3, 0.0)


def test_raptor_group_count():
    # ln 20 / ln(477/476) = 1427.4659...
    assert pr.raptor_group_count(0.1) == 1428


def test_raptor_rejects_vacuous_threshold():
    with pytest.raises(pr.ProtocolError, match="alpha"):
        pr.raptor_protocol(1428 * 14, 64, 1.0)


def small_raptor():
    return pr.raptor_protocol(4000, 8, 1.0, beta=0.1, groups=4)


def test_raptor_iid_shortcut_matches_per_user_path():
    p = small_raptor()
    h = ch.SubsetH(8, (1, 2, 3, 4))
    src = pr.PlantedHalf(h, 0.4)
    public = p.sample_public(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    slow, fast = [], []
    for _ in range(400):
        data = src.sample(p.n, rng)
        slow.append(p.statistic(p.encode(data, public, rng), public))
        fast.append(p.sample_statistic_iid(src, public, rng))
    slow, fast = np.array(slow), np.array(fast)
    for g in range(p.groups):
        assert stats.ks_2samp(slow[:, g], fast[:, g]).pvalue > 1e-3


def test_raptor_verdicts_small_scale():
    p = small_raptor()
    uniform = [p.run_iid(pr.uniform_source(8), seed=t) for t in range(100)]
    assert uniform.count(pr.UNIFORM) >= 90
    out, truth = pr.run_honest(p, pr.uniform_source(8), seed=0)
    assert out in (pr.UNIFORM, pr.NOT_UNIFORM)
    assert truth == pr.UNIFORM


@settings(max_examples=100, deadline=None)
@given(vals=st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4), idx=st.integers(0, 3),
       bump=st.floats(0, 2))
def test_raptor_verdict_monotone(vals, idx, bump):
    p = small_raptor()
    before = np.array(vals)
    after = before.copy()
    after[idx] = np.sign(after[idx] or 1.0) * (abs(after[idx]) + bump)
    if p.verdict(before) == pr.NOT_UNIFORM:
        assert p.verdict(after) == pr.NOT_UNIFORM


def test_hh_bit_order():
    levels = 3
    x = np.array([1, 2, 5, 8])
    bits = np.stack([pr.hh_bit(g, x, levels) for g in (1, 2, 3)], axis=1)
    assert bits.tolist() == [[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 1, 1]]


def test_hh_k_rules():
    assert pr.hh_k(512) == 7_864_320
    assert pr.hh_k(10, rule="main") == 30_000
    with pytest.raises(pr.ProtocolError):
        pr.hh_k(10, rule="other")


def test_hh_tie_gives_bit_zero():
    p = pr.hh_protocol(8, 16, 40, 1.0)
    public = p.sample_public(np.random.default_rng(0))
    values = p.bucket_values(np.zeros(p.n), public)
    assert set(values.values()) == {1}


def test_hh_recovers_planted_value():
    n, d = 64, 16
    p = pr.hh_protocol(n, d, pr.hh_k(n), 2.0)
    hits = 0
    for t in range(20):
        run = pr.run_honest_full(p, pr.point_source(d, 11), seed=t)
        hits += p.bucket_values(run.messages, run.public)[int(run.public.hash[10])] == 11
        assert 11 in run.output or hits < t + 1
    assert hits >= 16


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 12), seed=st.integers(0, 10_000))
def test_hh_list_never_exceeds_k(k, seed):
    p = pr.hh_protocol(8, 16, k, 1.0)
    out, _ = pr.run_honest(p, pr.uniform_source(16), seed=seed)
    assert len(out) <= k
    assert all(1 <= v <= 16 for v in out)


def test_hh_junk_probability_matches_enumeration():
    m = 6
    total = 0.0
    for plus in range(m + 1):
        for minus in range(m + 1 - plus):
            if plus > minus:
                total += stats.multinomial.pmf([plus, minus, m - plus - minus], m, [0.25, 0.25, 0.5])
    assert pr._prob_strict_win(m) == pytest.approx(total, abs=1e-14)


@pytest.mark.parametrize("name,make,source", [
    ("rr_mean", lambda: pr.rr_mean_protocol(30, 1.0), pr.Rademacher(0.2)),
    ("hst", lambda: pr.hst_protocol(30, 6, 1.0), pr.uniform_source(6)),
    ("est2", lambda: pr.est2_protocol(30, 3, 1.0), pr.UnitSphere(3)),
    ("hh", lambda: pr.hh_protocol(32, 16, 1000, 1.0), pr.uniform_source(16)),
    ("suboptimal", lambda: pr.suboptimal_hst_protocol(30, 6, 1.0), pr.uniform_source(6)),
])
def test_replay_is_byte_identical(name, make, source):
    p = make()
    a = pr.run_honest_full(p, source, seed=42)
    b = pr.run_honest_full(p, source, seed=42)
    assert a.messages.tobytes() == b.messages.tobytes()
    assert pr.public_digest(a.public) == pr.public_digest(b.public)
    c = pr.run_honest_full(p, source, seed=43)
    assert a.messages.tobytes() != c.messages.tobytes()


def test_suboptimal_matches_hst_in_distribution():
    n, d, trials = 200, 4, 500
    src = pr.Categorical(np.array([0.4, 0.3, 0.2, 0.1]))
    a = outputs(pr.hst_protocol(n, d, 1.0), src, trials, seed=1)
    b = outputs(pr.suboptimal_hst_protocol(n, d, 1.0), src, trials, seed=2)
    se = np.sqrt(a.var(axis=0, ddof=1) / trials + b.var(axis=0, ddof=1) / trials)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) <= 3 * se)


def test_suboptimal_messages_are_full_vectors():
    p = pr.suboptimal_hst_protocol(10, 5, 1.0)
    run = pr.run_honest_full(p, pr.uniform_source(5), seed=0)
    assert run.messages.shape == (10, 5)
    assert np.allclose(np.abs(run.messages), p.c)
    assert run.public is None


def test_reduction_keeps_output_distribution():
    n = 40
    rng = np.random.default_rng(7)
    chans = [ch.random_private_channel(1.0, 3, rng)[0] for _ in range(2)]
    chans = [chans[i % 2] for i in range(n)]
    weights = np.array([1.0, 0.0, -1.0])

    def agg(msgs):
        return float(weights[np.asarray(msgs, dtype=int) - 1].mean())

    base = pr.ChannelProtocol(chans, agg, 1.0)
    reduced = pr.rr_reduction(base)
    assert len(reduced.posts) == 2
    src = pr.Rademacher(0.3)
    a = outputs(base, src, 800, seed=1)
    b = outputs(reduced, src, 800, seed=2)
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_reduction_rejects_non_binary():
    with pytest.raises(pr.ProtocolError):
        pr.rr_reduction(pr.hst_protocol(10, 4, 1.0))


def test_user_channels_are_private_at_epsilon():
    rng = np.random.default_rng(0)
    hst = pr.hst_protocol(5, 6, 0.7)
    public = hst.sample_public(rng)
    c = hst.user_channel(2, public)
    assert ch.measure_privacy(c).epsilon <= 0.7 + 1e-12
    hh = pr.hh_protocol(8, 16, 50, 0.7)
    c = hh.user_channel(3, hh.sample_public(rng))
    assert c.input_size == 16
    assert ch.measure_privacy(c).epsilon <= 0.7 + 1e-12


def test_planted_source_distance():
    h = ch.SubsetH(8, (2, 3, 5, 7))
    src = pr.PlantedHalf(h, 0.3)
    assert np.abs(src.pmf() - 1 / 8).sum() == pytest.approx(0.3)
