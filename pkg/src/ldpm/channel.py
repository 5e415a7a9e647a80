"""Finite stochastic channels.

A :class:`Channel` is a row-stochastic matrix: row ``x`` is the output
distribution of a local randomizer on input ``x``.  Binary channels use the
input order ``(+1, -1)`` throughout the package.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

ROW_TOL = 1e-12
RECON_TOL = 1e-9
CLAMP_TOL = 1e-12

BINARY = (1, -1)
INFINITE = math.inf


class ChannelError(ValueError):
    pass


class DecompositionError(ChannelError):
    """Raised when a channel cannot be written as post-processed randomized response."""


def _label(v: Any) -> Any:
    # numpy scalars do not survive json.dumps
    if isinstance(v, np.generic):
        return v.item()
    return v


@dataclass(frozen=True, eq=False)
class Channel:
    """Row-stochastic matrix with labelled inputs and outputs."""

    matrix: np.ndarray
    output_labels: tuple
    input_labels: tuple = field(default=())

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise ChannelError("matrix must be 2-D with at least one row")
        outs = tuple(_label(v) for v in self.output_labels)
        if mat.shape[1] != len(outs):
            raise ChannelError(
                f"rows have {mat.shape[1]} entries but there are {len(outs)} output labels")
        if len(set(outs)) != len(outs):
            raise ChannelError("output labels must be distinct")
        ins = tuple(_label(v) for v in self.input_labels) or tuple(range(1, mat.shape[0] + 1))
        if len(ins) != mat.shape[0]:
            raise ChannelError("one input label per row is required")
        if not np.all(np.isfinite(mat)) or np.any(mat < 0):
            raise ChannelError("entries must be finite and nonnegative")
        sums = mat.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ChannelError(f"rows must sum to 1 (worst deviation {np.max(np.abs(sums - 1)):.3e})")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "output_labels", outs)
        object.__setattr__(self, "input_labels", ins)

    @property
    def input_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def output_size(self) -> int:
        return self.matrix.shape[1]

    def row(self, x) -> np.ndarray:
        return self.matrix[self.input_index(x)]

    def input_index(self, x) -> int:
        try:
            return self.input_labels.index(_label(x))
        except ValueError:
            raise ChannelError(f"unknown input {x!r}") from None

    def output_index(self, y) -> int:
        try:
            return self.output_labels.index(_label(y))
        except ValueError:
            raise ChannelError(f"unknown output {y!r}") from None

    def allclose(self, other: "Channel", atol: float = 1e-12) -> bool:
        return (self.input_labels == other.input_labels
                and self.output_labels == other.output_labels
                and np.allclose(self.matrix, other.matrix, rtol=0, atol=atol))

    def row_tv(self, other: "Channel") -> np.ndarray:
        """Per-row total variation distance to a channel with the same labels."""
        if self.matrix.shape != other.matrix.shape or self.output_labels != other.output_labels:
            raise ChannelError("channels have different shapes or output labels")
        return 0.5 * np.abs(self.matrix - other.matrix).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "input_labels": list(self.input_labels),
            "output_labels": list(self.output_labels),
            "matrix": self.matrix.tolist(),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "Channel":
        try:
            matrix = doc["matrix"]
            outs = doc["output_labels"]
        except KeyError as exc:
            raise ChannelError(f"channel document lacks {exc.args[0]!r}") from None
        ins = doc.get("input_labels") or ()
        size = doc.get("input_size")
        if size is not None and size != len(matrix):
            raise ChannelError("input_size disagrees with the number of matrix rows")
        # json has no tuples; labels come back as ints/floats/strings
        return cls(np.asarray(matrix, dtype=np.float64), tuple(outs), tuple(ins))

    @classmethod
    def from_json(cls, text: str) -> "Channel":
        return cls.from_dict(json.loads(text))


# A post-processor is a channel whose inputs are another channel's outputs.
PostProcessor = Channel


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not (self.epsilon >= 0):
            raise ValueError("epsilon must be nonnegative")
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")

    @property
    def is_infinite(self) -> bool:
        return self.epsilon == INFINITE

    def to_dict(self) -> dict:
        return {"epsilon": "inf" if self.is_infinite else self.epsilon, "delta": self.delta}


@dataclass(frozen=True)
class SubsetH:
    """A balanced subset H of [d] (1-based) with |H| = d/2."""

    universe_size: int
    members: frozenset

    def __post_init__(self):
        d = self.universe_size
        if d < 2 or d % 2:
            raise ValueError("universe size must be even and at least 2")
        mem = frozenset(int(v) for v in self.members)
        if len(mem) != d // 2:
            raise ValueError(f"|H| must be exactly {d // 2}, got {len(mem)}")
        if min(mem) < 1 or max(mem) > d:
            raise ValueError("members must lie in [1, d]")
        object.__setattr__(self, "members", mem)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "SubsetH":
        return cls(d, frozenset((rng.permutation(d)[: d // 2] + 1).tolist()))

    @property
    def mask(self) -> np.ndarray:
        """Boolean membership flags indexed by ``value - 1``."""
        m = np.zeros(self.universe_size, dtype=bool)
        m[[v - 1 for v in self.members]] = True
        return m

    def complement(self) -> "SubsetH":
        return SubsetH(self.universe_size,
                       frozenset(range(1, self.universe_size + 1)) - self.members)

    def __contains__(self, v) -> bool:
        return int(v) in self.members


def keep_probability(epsilon: float) -> float:
    """e^eps / (e^eps + 1), computed without overflow."""
    return 1.0 / (1.0 + math.exp(-epsilon))


def rr_scale(epsilon: float) -> float:
    """The unbiasing scale c_eps = (e^eps + 1) / (e^eps - 1)."""
    if epsilon <= 0:
        raise ChannelError("the rescaled form needs epsilon > 0")
    return 1.0 / math.tanh(epsilon / 2.0)


def rr_channel(epsilon: float, rescaled: bool = False) -> Channel:
    """Binary randomized response: keep the input w.p. e^eps/(e^eps+1)."""
    if not (epsilon >= 0) or math.isinf(epsilon):
        raise ChannelError("epsilon must be finite and nonnegative")
    a = keep_probability(epsilon)
    b = 1.0 - a
    labels = (rr_scale(epsilon), -rr_scale(epsilon)) if rescaled else BINARY
    return Channel(np.array([[a, b], [b, a]]), labels, BINARY)


def rr_delta_channel(epsilon: float, delta: float) -> Channel:
    """Randomized response that reveals 2x with probability delta."""
    if not (epsilon >= 0) or math.isinf(epsilon):
        raise ChannelError("epsilon must be finite and nonnegative")
    if not (0.0 <= delta <= 1.0):
        raise ChannelError("delta must lie in [0, 1]")
    a = keep_probability(epsilon)
    b = 1.0 - a
    keep, flip = (1 - delta) * a, (1 - delta) * b
    # outputs ordered (-2, -1, +1, +2)
    mat = np.array([[0.0, flip, keep, delta],
                    [delta, keep, flip, 0.0]])
    return Channel(mat, (-2, -1, 1, 2), BINARY)


def kary_rr_channel(d: int, epsilon: float) -> Channel:
    """d-ary randomized response on [d]."""
    if d < 2:
        raise ChannelError("d must be at least 2")
    e = math.exp(epsilon)
    mat = np.full((d, d), 1.0 / (e + d - 1))
    np.fill_diagonal(mat, e / (e + d - 1))
    labels = tuple(range(1, d + 1))
    return Channel(mat, labels, labels)


def identity_channel(labels: Sequence) -> Channel:
    labels = tuple(labels)
    return Channel(np.eye(len(labels)), labels, labels)


def constant_channel(row: Sequence[float], output_labels: Sequence, input_labels: Sequence) -> Channel:
    row = np.asarray(row, dtype=np.float64)
    return Channel(np.tile(row, (len(input_labels), 1)), tuple(output_labels), tuple(input_labels))


def measure_privacy(channel: Channel, epsilon: float | None = None) -> PrivacyParams:
    """Exact privacy of a channel.

    Without ``epsilon`` this returns the smallest pure epsilon (``INFINITE``
    when some output has zero probability under one input and positive
    probability under another).  With ``epsilon`` it returns the smallest
    delta at that epsilon.
    """
    mat = channel.matrix
    if epsilon is None:
        pos = mat > 0
        # zero/nonzero pair in some column
        if np.any(pos.any(axis=0) & ~pos.all(axis=0)):
            return PrivacyParams(INFINITE, 0.0)
        logs = np.log(mat[:, pos.all(axis=0)])
        if logs.size == 0:
            return PrivacyParams(0.0, 0.0)
        eps = float(np.max(logs.max(axis=0) - logs.min(axis=0)))
        return PrivacyParams(max(eps, 0.0), 0.0)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    scale = math.exp(epsilon) if epsilon < 700 else INFINITE
    # excess[x, x', y] = P(y|x) - e^eps P(y|x'); only outputs impossible under x' survive an infinite scale
    other = mat[None, :, :]
    with np.errstate(invalid="ignore", over="ignore"):
        excess = np.where(other > 0, mat[:, None, :] - scale * other, mat[:, None, :])
    delta = float(np.max(np.clip(excess, 0.0, None).sum(axis=2)))
    return PrivacyParams(epsilon, min(max(delta, 0.0), 1.0))


def compose(post: Channel, base: Channel) -> Channel:
    """Run ``base`` then ``post`` on its output."""
    if post.input_labels != base.output_labels:
        raise ChannelError(
            f"post-processor inputs {post.input_labels} do not match base outputs {base.output_labels}")
    mat = base.matrix @ post.matrix
    mat = np.clip(mat, 0.0, None)
    mat /= mat.sum(axis=1, keepdims=True)
    return Channel(mat, post.output_labels, base.input_labels)


def _clamp_rows(mat: np.ndarray, tol: float) -> np.ndarray:
    worst = mat.min()
    if worst < -tol:
        raise DecompositionError(
            f"negative post-processing probability {worst:.3e}; the channel is not private at this level")
    mat = np.where(mat < 0, 0.0, mat)
    return mat / mat.sum(axis=1, keepdims=True)


def _check_binary(channel: Channel) -> None:
    if channel.input_labels != BINARY:
        raise ChannelError(f"expected a binary channel with inputs {BINARY}, got {channel.input_labels}")


def kov_decompose(channel: Channel, epsilon: float, delta: float = 0.0) -> Channel:
    """Post-processor turning randomized response into ``channel``.

    With ``delta == 0`` the result takes inputs ``(+1, -1)`` and satisfies
    ``compose(result, rr_channel(epsilon)) == channel``; otherwise it takes
    inputs ``(-2, -1, +1, +2)`` and recomposes with ``rr_delta_channel``.
    """
    _check_binary(channel)
    if delta == 0:
        post = _kov_pure(channel, epsilon)
        base = rr_channel(epsilon)
    else:
        post = _kov_approx(channel, epsilon, delta)
        base = rr_delta_channel(epsilon, delta)
    err = compose(post, base).row_tv(channel).max()
    if err >= RECON_TOL:
        raise DecompositionError(
            f"reconstruction error {err:.3e} exceeds {RECON_TOL:g}; channel is not ({epsilon}, {delta})-private")
    return post


def _kov_pure(channel: Channel, epsilon: float) -> Channel:
    r_pos, r_neg = channel.matrix
    if epsilon == 0:
        if not np.allclose(r_pos, r_neg, rtol=0, atol=RECON_TOL):
            raise DecompositionError("an input-dependent channel is not 0-private")
        rows = np.vstack([r_pos, r_pos])
    else:
        a = keep_probability(epsilon)
        b = 1.0 - a
        # a^2 - b^2 = a - b
        det = a - b
        p_plus = (a * r_pos - b * r_neg) / det
        p_minus = (a * r_neg - b * r_pos) / det
        rows = _clamp_rows(np.vstack([p_plus, p_minus]), CLAMP_TOL)
    return Channel(rows, channel.output_labels, BINARY)


def _kov_approx(channel: Channel, epsilon: float, delta: float) -> Channel:
    """Feasibility LP over the four post-processor rows, minimising the L-inf error."""
    ny = channel.output_size
    base = rr_delta_channel(epsilon, delta).matrix  # 2 x 4, columns (-2, -1, +1, +2)
    nv = 4 * ny + 1  # post rows for -2, -1, +1, +2 then the error bound t
    a_eq = np.zeros((4, nv))
    for r in range(4):
        a_eq[r, r * ny:(r + 1) * ny] = 1.0
    b_eq = np.ones(4)
    # |base @ post - R| <= t, entrywise
    rows, rhs = [], []
    for x in range(2):
        for y in range(ny):
            coef = np.zeros(nv)
            for r in range(4):
                coef[r * ny + y] = base[x, r]
            target = channel.matrix[x, y]
            up = coef.copy()
            up[-1] = -1.0
            lo = -coef
            lo[-1] = -1.0
            rows += [up, lo]
            rhs += [target, -target]
    cost = np.zeros(nv)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * nv, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise DecompositionError(f"decomposition LP failed: {res.message}")
    post = np.asarray(res.x[:-1]).reshape(4, ny)
    post = _clamp_rows(post, 1e-9)
    return Channel(post, channel.output_labels, (-2, -1, 1, 2))


def embed_channel(channel: Channel, subset: SubsetH) -> Channel:
    """Binary channel Q_{H,R}: +1 runs R on a uniform element of H, -1 on its complement."""
    d = subset.universe_size
    if channel.input_size != d:
        raise ChannelError(f"channel has {channel.input_size} inputs but H lives in [{d}]")
    mask = subset.mask
    mat = np.vstack([channel.matrix[mask].mean(axis=0), channel.matrix[~mask].mean(axis=0)])
    mat /= mat.sum(axis=1, keepdims=True)
    return Channel(mat, channel.output_labels, BINARY)


def output_distribution(channel: Channel, input_dist: Sequence[float] | np.ndarray) -> np.ndarray:
    """Exact output distribution when the input is drawn from ``input_dist``."""
    p = np.asarray(input_dist, dtype=np.float64)
    if p.shape != (channel.input_size,):
        raise ChannelError("input distribution has the wrong length")
    if np.any(p < 0) or abs(p.sum() - 1) > ROW_TOL:
        raise ChannelError("input distribution must be a probability vector")
    out = p @ channel.matrix
    return out / out.sum()


def sample(channel: Channel, x, rng: np.random.Generator):
    """One output label for input ``x``."""
    row = channel.row(x)
    return channel.output_labels[int(rng.choice(channel.output_size, p=row))]


def sample_many(channel: Channel, inputs: Iterable, rng: np.random.Generator) -> np.ndarray:
    """Output indices for a batch of inputs via inverse-CDF sampling."""
    idx = np.fromiter((channel.input_index(x) for x in inputs), dtype=np.int64)
    cdf = np.cumsum(channel.matrix, axis=1)
    u = rng.random(idx.size)
    out = (u[:, None] >= cdf[idx]).sum(axis=1)
    return np.minimum(out, channel.output_size - 1)


def random_private_channel(epsilon: float, outputs: int, rng: np.random.Generator,
                           tight: bool = False) -> tuple[Channel, float]:
    """A random binary channel with ``outputs`` symbols and a privacy level it satisfies.

    By default the channel is a random post-processing of randomized
    response, so it is ``epsilon``-private.  With ``tight=True`` the rows are
    perturbed independently and the returned level is the channel's measured
    epsilon, which puts some log ratios exactly on the boundary.
    """
    labels = tuple(range(1, outputs + 1))
    if not tight:
        post = Channel(rng.dirichlet(np.ones(outputs), size=2), labels, BINARY)
        return compose(post, rr_channel(epsilon)), epsilon
    base = rng.dirichlet(np.ones(outputs))
    ratio = np.exp(rng.uniform(-epsilon / 2, epsilon / 2, size=outputs))
    rows = np.vstack([base * ratio, base / ratio])
    r = Channel(rows / rows.sum(axis=1, keepdims=True), labels, BINARY)
    return r, measure_privacy(r).epsilon


def unique_channels(channels: Iterable[Channel]) -> list[Channel]:
    """Distinct channels by exact matrix and label equality, in first-seen order."""
    seen: dict[tuple, Channel] = {}
    for ch in channels:
        key = (ch.input_labels, ch.output_labels, ch.matrix.tobytes())
        seen.setdefault(key, ch)
    return list(seen.values())
