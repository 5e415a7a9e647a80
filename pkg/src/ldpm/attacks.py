"""The manipulation game and the adversaries that play it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import channel as ch
from ._rng import game_streams
from .channel import Channel, SubsetH, rr_scale
from .protocols import (HST, Protocol, ProtocolError, ReducedProtocol, SuboptimalHST, Source,
                        public_digest)


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class GameConfig:
    n: int
    m: int
    adaptive: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise AttackError("n must be positive")
        if not (0 <= self.m <= self.n):
            raise AttackError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")


@dataclass(eq=False)
class GameResult:
    output: object
    truth: object
    corrupt: np.ndarray
    sent: np.ndarray
    counterfactual: np.ndarray
    digest: str
    protocol: Protocol = field(repr=False)
    public: object = field(repr=False)
    data: np.ndarray = field(repr=False)
    messages: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return int(self.corrupt.size)

    def _full(self, corrupt_messages):
        shape = (self.protocol.n,) + np.shape(corrupt_messages)[1:]
        full = np.zeros(shape)
        full[self.corrupt] = corrupt_messages
        return full

    def corrupt_contribution(self) -> np.ndarray:
        """Statistic of the corrupted users' sent messages alone."""
        return self.protocol.contribution(self._full(self.sent), self.public, self.corrupt)

    def manipulation_term(self) -> np.ndarray:
        """Change in the protocol statistic caused by replacing the counterfactual messages."""
        p = self.protocol
        return (p.contribution(self._full(self.sent), self.public, self.corrupt)
                - p.contribution(self._full(self.counterfactual), self.public, self.corrupt))

    def honest_messages(self) -> np.ndarray:
        """All messages with the corrupted users' counterfactuals put back."""
        out = self.messages.copy()
        out[self.corrupt] = self.counterfactual
        return out

    def honest_output(self, rng=None):
        """Aggregate of the counterfactual honest run (same public string and coins)."""
        return self.protocol.aggregate(self.honest_messages(), self.public, rng)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, tuple):
                return list(v)
            return v
        return {
            "protocol": self.protocol.describe(),
            "output": plain(self.output),
            "truth": plain(self.truth),
            "corrupt": self.corrupt.tolist(),
            "sent": np.asarray(self.sent).tolist(),
            "counterfactual": np.asarray(self.counterfactual).tolist(),
            "public_digest": self.digest,
        }


# ---------------------------------------------------------------------------
# adversaries


class Adversary:
    """Default behaviour: corrupt a uniform m-subset; subclasses choose messages."""

    name = "adversary"

    def check(self, protocol: Protocol) -> None:
        pass

    def choose_corrupt(self, protocol, m, public, rng) -> np.ndarray:
        return np.sort(rng.choice(protocol.n, size=m, replace=False))

    def messages(self, protocol, corrupt, public, data, rng) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"adversary": self.name}


class Honest(Adversary):
    """Corrupted users behave honestly (their counterfactual messages are sent)."""

    name = "none"

    def messages(self, protocol, corrupt, public, data, rng):
        return None


class InputManipulation(Adversary):
    """Corrupted users run the honest randomizer on replacement data."""

    name = "input"

    def __init__(self, value):
        self.value = value

    def messages(self, protocol, corrupt, public, data, rng):
        fake = np.array(data, copy=True)
        fake[corrupt] = self.value
        fake = protocol.prepare(fake)
        return protocol.encode(fake, public, rng)[corrupt]

    def describe(self):
        v = self.value.tolist() if isinstance(self.value, np.ndarray) else self.value
        return {"adversary": self.name, "value": v}


class RRPlusOne(Adversary):
    """Every corrupted user sends the message of a raw +1 that survived randomized response."""

    name = "rr_plus_one"

    def check(self, protocol):
        if not protocol.scalar_messages:
            raise AttackError(f"{protocol.name} messages are not scalars")
        try:
            protocol.plus_message
        except ProtocolError as exc:
            raise AttackError(str(exc)) from None

    def messages(self, protocol, corrupt, public, data, rng):
        return np.full(corrupt.size, protocol.plus_message, dtype=np.float64)


def rr_plus_one_adversary() -> RRPlusOne:
    return RRPlusOne()


def channel_classes(protocol: Protocol, public) -> list[tuple[Channel, np.ndarray]]:
    """Distinct per-user channels together with the users that run each."""
    classes = getattr(protocol, "channel_classes", None)
    if classes is not None:
        return classes(public)
    found: dict[tuple, int] = {}
    chans, users = [], []
    for i in range(protocol.n):
        c = protocol.user_channel(i, public)
        key = (c.output_labels, c.matrix.tobytes())
        if key not in found:
            found[key] = len(chans)
            chans.append(c)
            users.append([])
        users[found[key]].append(i)
    return [(c, np.asarray(u)) for c, u in zip(chans, users)]


@dataclass
class Certificate:
    """Privacy of every embedded channel Q_{H,R_i} for one H."""

    epsilon: float
    delta: float
    embedded: list = field(repr=False)
    users: list = field(repr=False)

    def post_processors(self) -> list[Channel]:
        return [ch.kov_decompose(q, self.epsilon, self.delta) for q in self.embedded]


def smallest_epsilon(channels: list[Channel], delta: float, hi: float = 64.0, iters: int = 80) -> float:
    """Smallest epsilon at which every channel is (epsilon, delta)-private, by bisection."""
    def ok(e):
        return all(ch.measure_privacy(c, e).delta <= delta for c in channels)
    if ok(0.0):
        return 0.0
    if not ok(hi):
        return math.inf
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def certify_embedding(protocol: Protocol, public, subset: SubsetH) -> Certificate:
    classes = channel_classes(protocol, public)
    embedded = [ch.embed_channel(c, subset) for c, _ in classes]
    users = [u for _, u in classes]
    eps = max(ch.measure_privacy(q).epsilon for q in embedded)
    if math.isfinite(eps):
        return Certificate(eps, 0.0, embedded, users)
    delta = 1.0 / (180 * protocol.n)
    eps = smallest_epsilon(embedded, delta)
    if not math.isfinite(eps):
        raise AttackError("no finite epsilon certifies the embedded channels at delta = 1/(180 n)")
    # measured by bisection from above; nudge so the LP sees a feasible problem
    return Certificate(eps * (1 + 1e-9) + 1e-12, delta, embedded, users)


class FiniteUniverse(Adversary):
    """Make uniform data look planted on a random half H of the universe.

    Each corrupted user samples the post-processor of its own embedded
    channel Q_{H,R_i} at input +1.  The post-processors are taken at the
    largest privacy loss measured across all users' embedded channels.
    """

    name = "finite_universe"

    def __init__(self, fixed_h: SubsetH | None = None):
        self.fixed_h = fixed_h
        self.last_certificate: Certificate | None = None
        self.last_h: SubsetH | None = None

    def check(self, protocol):
        if protocol.universe != "categorical" or protocol.d % 2:
            raise AttackError("the finite-universe attack needs categorical data over an even d")
        if not protocol.scalar_messages:
            raise AttackError(f"{protocol.name} has no finite per-user channels")

    def messages(self, protocol, corrupt, public, data, rng):
        h = self.fixed_h or SubsetH.random(protocol.d, rng)
        if h.universe_size != protocol.d:
            raise AttackError("H lives in a different universe than the protocol")
        cert = certify_embedding(protocol, public, h)
        self.last_certificate, self.last_h = cert, h
        owner = np.empty(protocol.n, dtype=np.int64)
        for k, u in enumerate(cert.users):
            owner[u] = k
        out = np.empty(corrupt.size)
        u = rng.random(corrupt.size)
        for k in np.unique(owner[corrupt]):
            post = ch.kov_decompose(cert.embedded[k], cert.epsilon, cert.delta)
            row = post.row(1)
            who = np.flatnonzero(owner[corrupt] == k)
            idx = np.minimum((u[who, None] >= np.cumsum(row)).sum(axis=1), row.size - 1)
            out[who] = np.asarray(post.output_labels, dtype=np.float64)[idx]
        return out

    def describe(self):
        d = {"adversary": self.name}
        if self.fixed_h is not None:
            d["H"] = sorted(self.fixed_h.members)
        return d


def finite_universe_adversary(protocol: Protocol | None = None, fixed_h: SubsetH | None = None):
    adv = FiniteUniverse(fixed_h)
    if protocol is not None:
        adv.check(protocol)
    return adv


class Transferred(Adversary):
    """Run an attack on the randomized-response form, then post-process its messages."""

    name = "transferred"

    def __init__(self, reduced_attack: Adversary, delta: float = 0.0):
        self.reduced_attack = reduced_attack
        self.delta = delta
        self._cache: dict[int, ReducedProtocol] = {}

    def reduced(self, protocol) -> ReducedProtocol:
        key = id(protocol)
        if key not in self._cache:
            try:
                self._cache[key] = ReducedProtocol(protocol, self.delta)
            except ch.DecompositionError as exc:
                raise AttackError(f"cannot transfer the attack: {exc}") from None
        return self._cache[key]

    def check(self, protocol):
        if protocol.universe != "binary":
            raise AttackError("attack transfer needs a binary protocol")
        self.reduced_attack.check(self.reduced(protocol))

    def messages(self, protocol, corrupt, public, data, rng):
        red = self.reduced(protocol)
        raw = self.reduced_attack.messages(red, corrupt, public, data, rng)
        full = np.ones(protocol.n, dtype=np.int64)
        full[corrupt] = raw
        out = red.translate(full, rng)[corrupt]
        return out

    def describe(self):
        return {"adversary": self.name, "reduced": self.reduced_attack.describe()}


def transferred_attack(protocol: Protocol, attack_on_reduced: Adversary, delta: float = 0.0):
    adv = Transferred(attack_on_reduced, delta)
    adv.check(protocol)
    return adv


class VectorFlood(Adversary):
    """Push every coordinate of a frequency estimate in the direction of a sign vector v.

    Against the privately-signed HST variant each corrupted user sends
    ``c * v``.  Against HST, whose sign vectors are public, the best a single
    scalar can do is ``c * sign(<s_i, v>)``.
    """

    name = "vector_flood"

    def __init__(self, direction):
        v = np.asarray(direction, dtype=np.int64)
        if v.ndim != 1 or not np.all(np.isin(v, (-1, 1))):
            raise AttackError("direction must be a +-1 vector")
        self.direction = v

    def check(self, protocol):
        if not isinstance(protocol, (SuboptimalHST, HST)):
            raise AttackError("vector flooding targets hst and suboptimal_hst")
        if self.direction.size != protocol.d:
            raise AttackError(f"direction has length {self.direction.size}, expected {protocol.d}")

    def messages(self, protocol, corrupt, public, data, rng):
        c = protocol.c
        if isinstance(protocol, SuboptimalHST):
            return np.tile(c * self.direction.astype(np.float64), (corrupt.size, 1))
        proj = public.signs[corrupt].astype(np.int64) @ self.direction
        return c * np.where(proj >= 0, 1.0, -1.0)

    def describe(self):
        return {"adversary": self.name, "direction": self.direction.tolist()}


class Custom(Adversary):
    """Adversary built from two callables.

    ``chooser(protocol, m, public, rng)`` returns the corrupted indices
    (``public`` is None unless the game is adaptive);
    ``sender(protocol, corrupt, public, corrupt_data, rng)`` returns their messages.
    """

    name = "custom"

    def __init__(self, sender: Callable, chooser: Callable | None = None):
        self.sender = sender
        self.chooser = chooser

    def choose_corrupt(self, protocol, m, public, rng):
        if self.chooser is None:
            return super().choose_corrupt(protocol, m, public, rng)
        return np.sort(np.asarray(self.chooser(protocol, m, public, rng), dtype=np.int64))

    def messages(self, protocol, corrupt, public, data, rng):
        return np.asarray(self.sender(protocol, corrupt, public, data[corrupt], rng))


# ---------------------------------------------------------------------------
# the game


def run_manip_game(protocol: Protocol, source: Source, adversary: Adversary | None,
                   config: GameConfig) -> GameResult:
    """Play the manipulation game once.

    Data, public randomness, honest messages and the aggregator's coins come
    from the same seeded streams as :func:`ldpm.protocols.run_honest`, so
    users outside the corrupted set send exactly what they would have sent in
    the honest run with the same seed.
    """
    if config.n != protocol.n:
        raise AttackError(f"config has n={config.n} but the protocol has n={protocol.n}")
    adversary = adversary or Honest()
    adversary.check(protocol)
    st = game_streams(config.seed)
    data = protocol.prepare(source.sample(protocol.n, st.data))
    public = protocol.sample_public(st.public)
    corrupt = adversary.choose_corrupt(protocol, config.m, public if config.adaptive else None,
                                       st.adversary)
    corrupt = np.asarray(corrupt, dtype=np.int64)
    if corrupt.size != config.m or np.unique(corrupt).size != corrupt.size:
        raise AttackError(f"adversary must corrupt exactly {config.m} distinct users")
    if corrupt.size and (corrupt.min() < 0 or corrupt.max() >= protocol.n):
        raise AttackError("corrupted index out of range")
    honest = protocol.encode(data, public, st.messages)
    counterfactual = honest[corrupt].copy()
    if corrupt.size:
        sent = adversary.messages(protocol, corrupt, public, data, st.adversary)
        sent = counterfactual if sent is None else np.asarray(sent, dtype=honest.dtype)
        if sent.shape != counterfactual.shape:
            raise AttackError(f"adversary sent shape {sent.shape}, expected {counterfactual.shape}")
    else:
        sent = counterfactual
    messages = honest.copy()
    messages[corrupt] = sent
    out = protocol.aggregate(messages, public, st.aggregator)
    return GameResult(out, protocol.truth(data, source), corrupt, sent, counterfactual,
                      public_digest(public), protocol, public, data, messages)


def mu_threshold(m: int, n: int, epsilon: float) -> tuple[float, float]:
    """(m/n + sqrt(2 ln 6 / n), c_eps times that); the scaled value must not exceed 1."""
    if n < 1 or m < 0:
        raise AttackError("need n >= 1 and m >= 0")
    mu = m / n + math.sqrt(2.0 * math.log(6.0) / n)
    mu_eps = rr_scale(epsilon) * mu
    if mu_eps > 1.0:
        raise AttackError(f"mu(m, n, eps) = {mu_eps:.4f} exceeds 1; no Rademacher mean matches it")
    return mu, mu_eps


ADVERSARIES = {
    "none": lambda **kw: Honest(),
    "input": lambda value=1, **kw: InputManipulation(value),
    "rr_plus_one": lambda **kw: RRPlusOne(),
    "finite_universe": lambda **kw: FiniteUniverse(),
    "vector_flood": lambda d=1, **kw: VectorFlood(np.ones(d, dtype=np.int64)),
}


def make_adversary(name: str, **kw) -> Adversary:
    try:
        return ADVERSARIES[name](**kw)
    except KeyError:
        raise AttackError(f"unknown adversary {name!r}; choose from {sorted(ADVERSARIES)}") from None
