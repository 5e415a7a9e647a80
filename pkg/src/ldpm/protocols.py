"""Non-interactive LDP protocols: randomizers, public randomness and aggregators.

Every protocol exposes the same small surface:

``sample_public(rng)``
    draw the public string (``None`` when a protocol has none);
``encode(data, public, rng)``
    honest messages for all users, one row (or scalar) per user;
``aggregate(messages, public, rng=None)``
    the server's output;
``statistic(messages, public)``
    the linear quantity the aggregator thresholds or reports.  Because it is a
    plain sum over users, the influence of any set of users is the statistic
    of their messages with everybody else zeroed.

Scalar messages take the values ``+c`` and ``-c`` with ``c = rr_scale(eps)``.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from . import channel as ch
from ._rng import game_streams
from .channel import Channel, PrivacyParams, SubsetH, keep_probability, rr_scale

UNIFORM = "uniform"
NOT_UNIFORM = "not uniform"

RAPTOR_DETECT_RATE = 477.0  # a random half-set catches a far-from-uniform P w.p. > 1/477
NORM_TOL = 1e-12
SPHERE_TOL = 1e-9


class ProtocolError(ValueError):
    pass


# ---------------------------------------------------------------------------
# public randomness


def _digest(kind: str, *arrays) -> str:
    h = hashlib.sha256(kind.encode())
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class Partition:
    """Users split into equal groups; ``group[i]`` is user i's 0-based group."""

    group: np.ndarray
    num_groups: int

    def __post_init__(self):
        counts = np.bincount(self.group, minlength=self.num_groups)
        if counts.size != self.num_groups or np.any(counts != counts[0]):
            raise ProtocolError("partition groups must have equal sizes and cover every user")

    @classmethod
    def random(cls, n: int, groups: int, rng: np.random.Generator) -> "Partition":
        g = np.empty(n, dtype=np.int64)
        g[rng.permutation(n)] = np.arange(n) // (n // groups)
        return cls(g, groups)

    def members(self, g: int) -> np.ndarray:
        return np.flatnonzero(self.group == g)

    def digest(self) -> str:
        return _digest("partition", self.group)


@dataclass(frozen=True, eq=False)
class SignVectors:
    signs: np.ndarray  # (n, D) int8 in {-1, +1}

    def digest(self) -> str:
        return _digest("signs", self.signs)


@dataclass(frozen=True, eq=False)
class SphereVectors:
    vectors: np.ndarray  # (n, d) unit rows

    def digest(self) -> str:
        return _digest("sphere", self.vectors)


@dataclass(frozen=True, eq=False)
class RaptorSets:
    members: np.ndarray  # (G, d) bool, each row has d/2 True

    def digest(self) -> str:
        return _digest("raptor", self.members)


@dataclass(frozen=True, eq=False)
class HHBundle:
    """Public string of the heavy-hitter protocol.

    ``hash`` maps each value in [d] to a bucket in [k].  Sign vectors over the
    2k bins are only materialised for the buckets some value hashes to
    (``buckets``); column ``2t`` holds bin ``2*buckets[t] - 1`` and column
    ``2t + 1`` holds bin ``2*buckets[t]``.  The remaining columns never meet
    an honest message, so the aggregator draws their effect from
    ``junk_seed`` directly.
    """

    partition: Partition
    hash: np.ndarray
    buckets: np.ndarray
    signs: np.ndarray
    junk_seed: int

    def bucket_column(self, v: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.buckets, v)

    def digest(self) -> str:
        return _digest(f"hh:{self.junk_seed}", self.partition.group, self.hash, self.signs)


def public_digest(public) -> str:
    if public is None:
        return _digest("none")
    return public.digest()


# ---------------------------------------------------------------------------
# data sources


class Source:
    universe = "binary"

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def pmf(self):
        """Exact distribution over [d] for categorical sources, else None."""
        return None

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Rademacher(Source):
    mu: float = 0.0
    universe = "binary"

    def __post_init__(self):
        if not (-1.0 <= self.mu <= 1.0):
            raise ProtocolError("Rademacher mean must lie in [-1, 1]")

    def sample(self, n, rng):
        return np.where(rng.random(n) < 0.5 * (1.0 + self.mu), 1, -1).astype(np.int64)

    def to_dict(self):
        return {"kind": "rademacher", "mu": self.mu}


@dataclass(frozen=True, eq=False)
class Categorical(Source):
    probs: np.ndarray
    universe = "categorical"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ProtocolError("categorical probabilities must be a probability vector")
        object.__setattr__(self, "probs", p / p.sum())

    @property
    def d(self) -> int:
        return self.probs.size

    def sample(self, n, rng):
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
        return np.minimum(idx, self.d - 1).astype(np.int64) + 1

    def pmf(self):
        return self.probs

    def to_dict(self):
        return {"kind": "categorical", "probs": self.probs.tolist()}


def uniform_source(d: int) -> Categorical:
    return Categorical(np.full(d, 1.0 / d))


def point_source(d: int, value: int) -> Categorical:
    p = np.zeros(d)
    p[value - 1] = 1.0
    return Categorical(p)


class PlantedHalf(Categorical):
    """P_{H,mu}: mass (1+mu)/d on each element of H and (1-mu)/d off it."""

    def __init__(self, subset: SubsetH, mu: float):
        if not (-1.0 <= mu <= 1.0):
            raise ProtocolError("planted mean must lie in [-1, 1]")
        d = subset.universe_size
        p = np.where(subset.mask, (1.0 + mu) / d, (1.0 - mu) / d)
        object.__setattr__(self, "subset", subset)
        object.__setattr__(self, "mu", float(mu))
        Categorical.__init__(self, p)

    def to_dict(self):
        return {"kind": "planted", "d": self.subset.universe_size,
                "H": sorted(self.subset.members), "mu": self.mu}


@dataclass(frozen=True, eq=False)
class Fixed(Source):
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data))

    @property
    def universe(self):
        if self.data.ndim == 2:
            return "vector"
        vals = set(np.unique(self.data).tolist())
        return "binary" if vals <= {-1, 1} else "categorical"

    def sample(self, n, rng):
        if self.data.shape[0] != n:
            raise ProtocolError(f"fixed dataset has {self.data.shape[0]} rows, protocol has {n} users")
        return self.data.copy()

    def to_dict(self):
        return {"kind": "fixed", "data": self.data.tolist()}


@dataclass(frozen=True)
class UnitSphere(Source):
    """Independent uniform directions on the unit sphere of R^d."""

    d: int
    universe = "vector"

    def sample(self, n, rng):
        return random_unit_vectors(n, self.d, rng)

    def to_dict(self):
        return {"kind": "sphere", "d": self.d}


def random_unit_vectors(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.where(rng.random((n, 1)) < 0.5, 1.0, -1.0)
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def freq(data: np.ndarray, d: int) -> np.ndarray:
    """Empirical frequency vector of values in [d]."""
    return np.bincount(np.asarray(data) - 1, minlength=d)[:d] / len(data)


def one_hot(data: np.ndarray, d: int) -> np.ndarray:
    data = np.asarray(data, dtype=np.int64)
    out = np.zeros((data.size, d))
    out[np.arange(data.size), data - 1] = 1.0
    return out


# ---------------------------------------------------------------------------
# shared randomized-response step


def rr_signs(bits: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Raw randomized response applied elementwise to +-1 bits."""
    flip = rng.random(np.shape(bits)) >= keep_probability(epsilon)
    return np.where(flip, -bits, bits).astype(np.int64)


def _sign_channel(signs: np.ndarray, epsilon: float, c: float) -> Channel:
    """Channel on [len(signs)] that maps x to RR(signs[x]) over outputs (+c, -c)."""
    a = keep_probability(epsilon)
    rows = np.where(signs[:, None] > 0, [a, 1 - a], [1 - a, a])
    return Channel(rows, (c, -c), tuple(range(1, len(signs) + 1)))


def sample_subsets(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` uniform half-size subsets of [d] as a boolean matrix."""
    keys = rng.random((count, d))
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    return ranks < d // 2


# ---------------------------------------------------------------------------
# protocols


class Protocol:
    """Base class; subclasses fill in the randomizer and aggregator."""

    name = "protocol"
    universe = "binary"        # binary | categorical | linf | l1 | sphere
    output_kind = "scalar"     # scalar | vector | verdict | list
    scalar_messages = True

    def __init__(self, n: int, epsilon: float):
        if int(n) != n or n < 1:
            raise ProtocolError("n must be a positive integer")
        if not (epsilon > 0) or math.isinf(epsilon):
            raise ProtocolError("epsilon must be positive and finite")
        self.n = int(n)
        self.epsilon = float(epsilon)
        self.c = rr_scale(self.epsilon)

    # -- description
    @property
    def privacy(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, 0.0)

    @property
    def d(self) -> int:
        return getattr(self, "_d", 1)

    @property
    def plus_message(self):
        """Message an honest user sends after a raw +1 survives randomized response."""
        return self.c

    def describe(self) -> dict:
        return {"protocol": self.name, "n": self.n, "d": self.d, "epsilon": self.epsilon}

    # -- data handling
    def prepare(self, data) -> np.ndarray:
        data = np.asarray(data)
        if data.shape[0] != self.n:
            raise ProtocolError(f"expected {self.n} users, got {data.shape[0]}")
        return self._validate(data)

    def _validate(self, data):
        return data

    def truth(self, data, source: Source | None = None):
        raise NotImplementedError

    # -- protocol pieces
    def sample_public(self, rng: np.random.Generator):
        return None

    def encode(self, data, public, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def statistic(self, messages, public) -> np.ndarray:
        raise NotImplementedError

    def aggregate(self, messages, public, rng=None):
        return self.statistic(messages, public)

    def contribution(self, messages, public, users) -> np.ndarray:
        """Statistic of the messages of ``users`` alone (everybody else sends 0)."""
        masked = np.zeros_like(np.asarray(messages, dtype=np.float64))
        users = np.asarray(users, dtype=np.int64)
        masked[users] = np.asarray(messages, dtype=np.float64)[users]
        return self.statistic(masked, public)

    def user_channel(self, i: int, public) -> Channel:
        raise ProtocolError(f"{self.name} has no finite per-user channel")

    # -- convenience
    def run(self, source: Source, seed=None):
        return run_honest(self, source, seed)


def _check_binary(data):
    if not np.all(np.isin(data, (-1, 1))):
        raise ProtocolError("binary data must be +1 or -1")
    return data.astype(np.int64)


def _check_categorical(data, d):
    if data.ndim != 1 or not np.issubdtype(data.dtype, np.integer) or data.min() < 1 or data.max() > d:
        raise ProtocolError(f"categorical data must be integers in [1, {d}]")
    return data.astype(np.int64)


class RRMean(Protocol):
    """Rescaled randomized response averaged by the server."""

    name = "rr_mean"
    universe = "binary"

    def _validate(self, data):
        return _check_binary(data)

    def truth(self, data, source=None):
        return float(np.mean(data))

    def encode(self, data, public, rng):
        return self.c * rr_signs(data, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        return np.array([np.sum(messages) / self.n])

    def aggregate(self, messages, public, rng=None):
        return float(self.statistic(messages, public)[0])

    def user_channel(self, i, public):
        return ch.rr_channel(self.epsilon, rescaled=True)

    def channel_classes(self, public):
        return [(self.user_channel(0, public), np.arange(self.n))]


class _VectorData:
    """Mixin for protocols whose data are vectors; integers are read as one-hot vectors."""

    def _as_vectors(self, data):
        if data.ndim == 1:
            return one_hot(_check_categorical(data, self.d), self.d)
        if data.ndim != 2 or data.shape[1] != self.d:
            raise ProtocolError(f"vector data must have shape (n, {self.d})")
        return data.astype(np.float64)

    def truth(self, data, source=None):
        return np.asarray(data, dtype=np.float64).mean(axis=0)


class EstInf(_VectorData, Protocol):
    """Mean estimation in the l-inf ball: group g reports coordinate g."""

    name = "est_inf"
    universe = "linf"
    output_kind = "vector"

    def __init__(self, n, d, epsilon):
        super().__init__(n, epsilon)
        if d < 1 or n % d:
            raise ProtocolError(f"d={d} must divide n={n}")
        self._d = int(d)

    def _validate(self, data):
        x = self._as_vectors(data)
        if np.any(np.abs(x) > 1 + NORM_TOL):
            raise ProtocolError("data must lie in the l-inf unit ball")
        return x

    def sample_public(self, rng):
        return Partition.random(self.n, self.d, rng)

    def encode(self, data, public, rng):
        coord = data[np.arange(self.n), public.group]
        bits = np.where(rng.random(self.n) < 0.5 + 0.5 * coord, 1, -1)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        return np.bincount(public.group, weights=messages, minlength=self.d) * (self.d / self.n)


class HST(Protocol):
    """Frequency estimation with public sign vectors in {+-1}^d."""

    name = "hst"
    universe = "categorical"
    output_kind = "vector"

    def __init__(self, n, d, epsilon):
        super().__init__(n, epsilon)
        if d < 1:
            raise ProtocolError("d must be positive")
        self._d = int(d)

    def _validate(self, data):
        return _check_categorical(data, self.d)

    def truth(self, data, source=None):
        return freq(data, self.d)

    def sample_public(self, rng):
        return SignVectors(np.where(rng.random((self.n, self.d)) < 0.5, 1, -1).astype(np.int8))

    def encode(self, data, public, rng):
        bits = public.signs[np.arange(self.n), data - 1].astype(np.int64)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        return (messages @ public.signs) / self.n

    def user_channel(self, i, public):
        return _sign_channel(public.signs[i], self.epsilon, self.c)


class Est1(_VectorData, Protocol):
    """Mean estimation in the l1 ball via a (2d+1)-bin sign-vector histogram."""

    name = "est1"
    universe = "l1"
    output_kind = "vector"

    def __init__(self, n, d, epsilon):
        super().__init__(n, epsilon)
        if d < 1:
            raise ProtocolError("d must be positive")
        self._d = int(d)

    @property
    def bins(self) -> int:
        return 2 * self.d + 1

    def _validate(self, data):
        x = self._as_vectors(data)
        if np.any(np.abs(x).sum(axis=1) > 1 + NORM_TOL):
            raise ProtocolError("data must lie in the l1 unit ball")
        return x

    def encode_bins(self, data, rng) -> np.ndarray:
        """Sample each user's bin in [2d+1] so that P(2j-1) - P(2j) = x_j."""
        p = np.zeros((self.n, self.bins))
        p[:, 0:2 * self.d:2] = np.clip(data, 0, None)
        p[:, 1:2 * self.d:2] = np.clip(-data, 0, None)
        p[:, -1] = np.clip(1.0 - np.abs(data).sum(axis=1), 0, None)
        cdf = np.cumsum(p, axis=1)
        u = rng.random(self.n) * cdf[:, -1]
        return np.minimum((u[:, None] >= cdf).sum(axis=1), self.bins - 1) + 1

    def sample_public(self, rng):
        return SignVectors(np.where(rng.random((self.n, self.bins)) < 0.5, 1, -1).astype(np.int8))

    def encode(self, data, public, rng):
        b = self.encode_bins(data, rng)
        bits = public.signs[np.arange(self.n), b - 1].astype(np.int64)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        """The (2d+1) bin estimates z."""
        return (messages @ public.signs) / self.n

    def aggregate(self, messages, public, rng=None):
        z = self.statistic(messages, public)
        return z[0:2 * self.d:2] - z[1:2 * self.d:2]

    def user_channel(self, i, public):
        # a one-hot input e_j always lands in bin 2j - 1
        return _sign_channel(public.signs[i, 0:2 * self.d:2], self.epsilon, self.c)


def sphere_mean_abs(d: int) -> float:
    """E|v_1| for v uniform on the unit sphere of R^d."""
    return math.exp(gammaln(d / 2) - gammaln((d + 1) / 2)) / math.sqrt(math.pi)


class Est2(_VectorData, Protocol):
    """Mean estimation on the unit sphere with public random directions."""

    name = "est2"
    universe = "sphere"
    output_kind = "vector"

    def __init__(self, n, d, epsilon):
        super().__init__(n, epsilon)
        if d < 1:
            raise ProtocolError("d must be positive")
        self._d = int(d)
        self.gamma = sphere_mean_abs(self.d)

    def _validate(self, data):
        x = self._as_vectors(data)
        if np.any(np.abs(np.linalg.norm(x, axis=1) - 1.0) > SPHERE_TOL):
            raise ProtocolError("data must be unit vectors")
        return x

    def sample_public(self, rng):
        return SphereVectors(random_unit_vectors(self.n, self.d, rng))

    def encode(self, data, public, rng):
        proj = np.einsum("ij,ij->i", public.vectors, data)
        bits = np.where(proj >= 0, 1, -1)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        return (messages @ public.vectors) / (self.gamma * self.n)


def raptor_group_count(beta: float) -> int:
    return math.ceil(math.log(2.0 / beta) / math.log1p(1.0 / (RAPTOR_DETECT_RATE - 1.0)))


class Raptor(Protocol):
    """Uniformity tester: group g reports membership in a public half-set S_g."""

    name = "raptor"
    universe = "categorical"
    output_kind = "verdict"

    def __init__(self, n, d, epsilon, beta=0.1, m_budget=0, groups=None):
        super().__init__(n, epsilon)
        if d < 2 or d % 2:
            raise ProtocolError("d must be even")
        if not (0 < beta < 1):
            raise ProtocolError("beta must lie in (0, 1)")
        if not (0 <= m_budget < n):
            raise ProtocolError("the corruption budget must satisfy 0 <= m < n")
        self._d = int(d)
        self.beta = float(beta)
        self.m_budget = int(m_budget)
        self.groups = int(groups) if groups is not None else raptor_group_count(beta)
        if n % self.groups:
            raise ProtocolError(f"G={self.groups} must divide n={n}")
        self.alpha = self.c * (math.sqrt(6 * self.groups / n * math.log(4 * self.groups / beta))
                               + 2 * self.m_budget * self.groups / n)
        if self.alpha >= 0.5:
            raise ProtocolError(f"threshold alpha_G={self.alpha:.4f} >= 1/2 makes the test vacuous; increase n")

    @property
    def group_size(self) -> int:
        return self.n // self.groups

    def describe(self):
        return {**super().describe(), "beta": self.beta, "groups": self.groups,
                "m_budget": self.m_budget, "alpha": self.alpha}

    def group_of(self, i):
        return np.asarray(i) // self.group_size

    def _validate(self, data):
        return _check_categorical(data, self.d)

    def truth(self, data, source=None):
        if source is None or source.pmf() is None:
            return None
        p = source.pmf()
        return UNIFORM if np.allclose(p, 1.0 / p.size, rtol=0, atol=1e-15) else NOT_UNIFORM

    def sample_public(self, rng):
        return RaptorSets(sample_subsets(self.groups, self.d, rng))

    def encode(self, data, public, rng):
        g = self.group_of(np.arange(self.n))
        bits = np.where(public.members[g, data - 1], 1, -1)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        """Per-group estimates of E[+-1 membership in S_g]."""
        return np.asarray(messages).reshape(self.groups, self.group_size).sum(axis=1) / self.group_size

    def verdict(self, p_tilde) -> str:
        return NOT_UNIFORM if np.any(np.abs(p_tilde) > 2 * self.alpha) else UNIFORM

    def aggregate(self, messages, public, rng=None):
        return self.verdict(self.statistic(messages, public))

    def user_channel(self, i, public):
        signs = np.where(public.members[self.group_of(i)], 1, -1)
        return _sign_channel(signs, self.epsilon, self.c)

    def channel_classes(self, public):
        size = self.group_size
        return [(self.user_channel(g * size, public), np.arange(g * size, (g + 1) * size))
                for g in range(self.groups)]

    def sample_statistic_iid(self, source: Source, public, rng) -> np.ndarray:
        """Per-group statistic of an honest run on iid data, drawn exactly in distribution.

        Group g's statistic only depends on how many of its users fall in S_g
        and how many of those survive randomized response, so binomial counts
        replace the per-user simulation.
        """
        pmf = source.pmf()
        if pmf is None or pmf.size != self.d:
            raise ProtocolError("the iid shortcut needs a categorical source over [d]")
        size = self.group_size
        a = keep_probability(self.epsilon)
        p_in = np.clip(public.members.astype(np.float64) @ pmf, 0.0, 1.0)
        inside = rng.binomial(size, p_in)
        plus = rng.binomial(inside, a) + rng.binomial(size - inside, 1.0 - a)
        return self.c * (2.0 * plus - size) / size

    def run_iid(self, source: Source, seed=None) -> str:
        """Honest verdict on iid data without materialising per-user messages."""
        st = game_streams(seed)
        public = self.sample_public(st.public)
        return self.verdict(self.sample_statistic_iid(source, public, st.messages))


def hh_bit(g: np.ndarray, x: np.ndarray, levels: int) -> np.ndarray:
    """The g-th most significant bit (g = 1..levels) of x - 1."""
    return (np.asarray(x) - 1) >> (levels - np.asarray(g)) & 1


def hh_k(n: int, beta: float = 0.1, rule: str = "appendix") -> int:
    """Hash range: ceil(3 n^2 / beta), or 300 n^2 under the main-text rule."""
    if rule == "appendix":
        return math.ceil(3 * n * n / beta)
    if rule == "main":
        return 300 * n * n
    raise ProtocolError(f"unknown hash-range rule {rule!r}")


def _prob_strict_win(m: int) -> float:
    """P(N+ > N-) for (N+, N-, rest) ~ Multinomial(m; 1/4, 1/4, 1/2)."""
    j = np.arange(m // 2 + 1)
    logp = (gammaln(m + 1) - 2 * gammaln(j + 1) - gammaln(m - 2 * j + 1)
            + 2 * j * math.log(0.25) + (m - 2 * j) * math.log(0.5))
    tie = math.fsum(np.exp(logp))
    return 0.5 * (1.0 - tie)


class HH(Protocol):
    """Heavy hitters: hash into k buckets and learn one bit of the value per user group."""

    name = "hh"
    universe = "categorical"
    output_kind = "list"

    def __init__(self, n, d, k, epsilon):
        super().__init__(n, epsilon)
        if d < 2 or d & (d - 1):
            raise ProtocolError("d must be a power of two")
        self._d = int(d)
        self.levels = int(d).bit_length() - 1
        if n % self.levels:
            raise ProtocolError(f"log2(d)={self.levels} must divide n={n}")
        if k < 1:
            raise ProtocolError("k must be positive")
        self.k = int(k)
        self.group_size = n // self.levels

    def describe(self):
        return {**super().describe(), "k": self.k}

    def _validate(self, data):
        return _check_categorical(data, self.d)

    def truth(self, data, source=None):
        return freq(data, self.d)

    def sample_public(self, rng):
        part = Partition.random(self.n, self.levels, rng)
        h = rng.integers(1, self.k + 1, size=self.d)
        buckets = np.unique(h)
        signs = np.where(rng.random((self.n, 2 * buckets.size)) < 0.5, 1, -1).astype(np.int8)
        junk_seed = int(rng.integers(0, 2**63))
        return HHBundle(part, h, buckets, signs, junk_seed)

    def bins(self, data, public) -> np.ndarray:
        """OneHotHash position in [2k] of each user's value."""
        g = public.partition.group + 1
        return 2 * public.hash[data - 1] - hh_bit(g, data, self.levels)

    def _columns(self, bins, public):
        v = (bins + 1) // 2
        return 2 * public.bucket_column(v) + (1 - bins % 2)

    def encode(self, data, public, rng):
        cols = self._columns(self.bins(data, public), public)
        bits = public.signs[np.arange(self.n), cols].astype(np.int64)
        return self.c * rr_signs(bits, self.epsilon, rng).astype(np.float64)

    def statistic(self, messages, public):
        """Histogram estimates z^(g) on the materialised bins, shape (levels, 2T)."""
        msgs = np.asarray(messages, dtype=np.float64)
        z = np.zeros((self.levels, public.signs.shape[1]))
        for g in range(self.levels):
            idx = public.partition.members(g)
            z[g] = msgs[idx] @ public.signs[idx] / self.group_size
        return z

    def bucket_values(self, messages, public) -> dict:
        """Value reconstructed from each bucket that some element of [d] hashes to."""
        z = self.statistic(messages, public)
        bits = (z[:, 0::2] > z[:, 1::2]).astype(np.int64)  # ties give bit 0
        weights = 1 << np.arange(self.levels - 1, -1, -1)
        values = weights @ bits + 1
        return dict(zip(public.buckets.tolist(), values.tolist()))

    def junk_values(self, public) -> np.ndarray:
        """Values recovered from the buckets no element hashes to."""
        empty = self.k - public.buckets.size
        if empty == 0:
            return np.empty(0, dtype=np.int64)
        q = _prob_strict_win(self.group_size)
        ones = np.array([bin(x).count("1") for x in range(self.d)])
        with np.errstate(divide="ignore"):
            logp = ones * np.log(q) + (self.levels - ones) * np.log1p(-q)
        p = np.exp(logp - logp.max())
        counts = np.random.default_rng(public.junk_seed).multinomial(empty, p / p.sum())
        return np.flatnonzero(counts) + 1

    def aggregate(self, messages, public, rng=None):
        found = set(self.bucket_values(messages, public).values())
        found.update(self.junk_values(public).tolist())
        return tuple(sorted(found))

    def user_channel(self, i, public):
        values = np.arange(1, self.d + 1)
        g = public.partition.group[i] + 1
        b = 2 * public.hash - hh_bit(g, values, self.levels)
        cols = self._columns(b, public)
        return _sign_channel(public.signs[i, cols].astype(np.int64), self.epsilon, self.c)


class SuboptimalHST(Protocol):
    """HST variant whose sign vectors are chosen privately and sent with the message."""

    name = "suboptimal_hst"
    universe = "categorical"
    output_kind = "vector"
    scalar_messages = False

    def __init__(self, n, d, epsilon):
        super().__init__(n, epsilon)
        if d < 1:
            raise ProtocolError("d must be positive")
        self._d = int(d)

    def _validate(self, data):
        return _check_categorical(data, self.d)

    def truth(self, data, source=None):
        return freq(data, self.d)

    def encode(self, data, public, rng):
        s = np.where(rng.random((self.n, self.d)) < 0.5, 1, -1)
        gamma = rr_signs(s[np.arange(self.n), data - 1], self.epsilon, rng)
        return self.c * (gamma[:, None] * s).astype(np.float64)

    def statistic(self, messages, public):
        return np.asarray(messages).sum(axis=0) / self.n


class ChannelProtocol(Protocol):
    """Binary-input protocol given by explicit per-user channels and an aggregator.

    ``aggregator`` receives the array of message labels.  All channels must
    share their output labels.
    """

    name = "channel_protocol"
    universe = "binary"

    def __init__(self, channels: Sequence[Channel] | Channel, aggregator: Callable, epsilon: float,
                 n: int | None = None, delta: float = 0.0):
        if isinstance(channels, Channel):
            if n is None:
                raise ProtocolError("pass n when a single channel is shared by all users")
            channels = [channels] * n
        channels = list(channels)
        super().__init__(len(channels), epsilon)
        labels = channels[0].output_labels
        for c in channels:
            if c.input_labels != ch.BINARY:
                raise ProtocolError("channels must take inputs (+1, -1)")
            if c.output_labels != labels:
                raise ProtocolError("all channels must share output labels")
        self.channels = channels
        self.labels = np.asarray(labels)
        self.aggregator = aggregator
        self.delta = float(delta)
        # stacked matrices: (n, 2, |Y|)
        self._mats = np.stack([c.matrix for c in channels])

    @property
    def privacy(self):
        return PrivacyParams(self.epsilon, self.delta)

    @property
    def plus_message(self):
        raise ProtocolError("a generic channel protocol has no canonical +1 message")

    def _validate(self, data):
        return _check_binary(data)

    def truth(self, data, source=None):
        return float(np.mean(data))

    def encode(self, data, public, rng):
        rows = self._mats[np.arange(self.n), np.where(data > 0, 0, 1)]
        cdf = np.cumsum(rows, axis=1)
        idx = np.minimum((rng.random(self.n)[:, None] >= cdf).sum(axis=1), self.labels.size - 1)
        return self.labels[idx]

    def statistic(self, messages, public):
        raise ProtocolError("generic channel protocols have no linear statistic")

    def aggregate(self, messages, public, rng=None):
        return self.aggregator(np.asarray(messages))

    def user_channel(self, i, public):
        return self.channels[i]


class ReducedProtocol(Protocol):
    """Randomized-response form of a binary protocol.

    Every user runs plain randomized response; the aggregator first maps each
    message through that user's post-processor (so the messages become
    distributed exactly like the original protocol's) and then runs the
    original aggregator.
    """

    universe = "binary"

    def __init__(self, base: Protocol, delta: float = 0.0):
        if base.universe != "binary":
            raise ProtocolError("only binary protocols reduce to randomized response")
        super().__init__(base.n, base.epsilon)
        self.base = base
        self.delta = float(delta)
        self.name = f"reduced_{base.name}"
        self.base_channel = (ch.rr_channel(self.epsilon) if self.delta == 0
                             else ch.rr_delta_channel(self.epsilon, self.delta))
        posts = {}
        self.post_index = np.empty(self.n, dtype=np.int64)
        self.posts = []
        for i in range(self.n):
            c = base.user_channel(i, None)
            key = (c.output_labels, c.matrix.tobytes())
            if key not in posts:
                posts[key] = len(self.posts)
                self.posts.append(ch.kov_decompose(c, self.epsilon, self.delta))
            self.post_index[i] = posts[key]

    @property
    def privacy(self):
        return PrivacyParams(self.epsilon, self.delta)

    @property
    def plus_message(self):
        return 1

    def post_processor(self, i: int) -> Channel:
        return self.posts[self.post_index[i]]

    def _validate(self, data):
        return _check_binary(data)

    def truth(self, data, source=None):
        return self.base.truth(data, source)

    def encode(self, data, public, rng):
        labels = np.asarray(self.base_channel.output_labels)
        idx = ch.sample_many(self.base_channel, data.tolist(), rng)
        return labels[idx]

    def translate(self, messages, rng) -> np.ndarray:
        """Apply each user's post-processor to its randomized-response message."""
        msgs = np.asarray(messages)
        labels = np.asarray(self.posts[0].output_labels)
        out_idx = np.empty(self.n, dtype=np.int64)
        u = rng.random(self.n)
        for p, post in enumerate(self.posts):
            for r, x in enumerate(post.input_labels):
                users = np.flatnonzero((self.post_index == p) & (msgs == x))
                cdf = np.cumsum(post.matrix[r])
                out_idx[users] = np.minimum((u[users, None] >= cdf).sum(axis=1), labels.size - 1)
        return labels[out_idx]

    def statistic(self, messages, public):
        raise ProtocolError("the reduced aggregator is randomized; use aggregate")

    def aggregate(self, messages, public, rng=None):
        if rng is None:
            raise ProtocolError("the reduced aggregator needs a random generator")
        return self.base.aggregate(self.translate(messages, rng), public, rng)


def rr_reduction(protocol: Protocol, delta: float = 0.0) -> ReducedProtocol:
    return ReducedProtocol(protocol, delta)


# ---------------------------------------------------------------------------
# constructors with the canonical names


def rr_mean_protocol(n, epsilon):
    return RRMean(n, epsilon)


def est_inf_protocol(n, d, epsilon):
    return EstInf(n, d, epsilon)


def hst_protocol(n, d, epsilon):
    return HST(n, d, epsilon)


def est1_protocol(n, d, epsilon):
    return Est1(n, d, epsilon)


def est2_protocol(n, d, epsilon):
    return Est2(n, d, epsilon)


def raptor_protocol(n, d, epsilon, beta=0.1, m_budget=0, groups=None):
    return Raptor(n, d, epsilon, beta, m_budget, groups)


def hh_protocol(n, d, k, epsilon):
    return HH(n, d, k, epsilon)


def suboptimal_hst_protocol(n, d, epsilon):
    return SuboptimalHST(n, d, epsilon)


@dataclass
class HonestRun:
    output: object
    truth: object
    data: np.ndarray = field(repr=False)
    public: object = field(repr=False)
    messages: np.ndarray = field(repr=False)


def run_honest_full(protocol: Protocol, source: Source, seed=None) -> HonestRun:
    st = game_streams(seed)
    data = protocol.prepare(source.sample(protocol.n, st.data))
    public = protocol.sample_public(st.public)
    messages = protocol.encode(data, public, st.messages)
    out = protocol.aggregate(messages, public, st.aggregator)
    return HonestRun(out, protocol.truth(data, source), data, public, messages)


def run_honest(protocol: Protocol, source: Source, seed=None):
    """One honest execution; returns ``(output, ground_truth)``."""
    r = run_honest_full(protocol, source, seed)
    return r.output, r.truth
