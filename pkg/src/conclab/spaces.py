"""Finite state spaces, tabulated measures and their disintegration kernels.

Every space is a finite subset of a product ``S_1 x ... x S_n`` whose states
are stored as an ``(N, n)`` integer array of coordinate values.  Spin spaces
use the bit word of a configuration as its index (bit ``i`` set means
``sigma_i = +1``); the other kinds index states by enumeration order.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

SPIN_LIMIT = 24
PERM_LIMIT = 9
STATE_LIMIT = 1 << 24

__all__ = [
    "LimitExceeded",
    "StateSpace",
    "TabulatedMeasure",
    "IndexFamily",
    "ConditionalKernel",
    "enumerate_space",
    "spin_space",
    "slice_space",
    "perm_space",
    "product_space",
    "disintegrate",
    "kernel_support",
    "dump_measure",
    "load_measure",
]


class LimitExceeded(ValueError):
    """Raised when an enumeration would exceed a configured size limit."""

    def __init__(self, what: str, value: int, limit: int):
        self.what = what
        self.value = value
        self.limit = limit
        super().__init__(f"{what} = {value} exceeds limit {limit}")


def spins_from_bits(bits, n: int) -> np.ndarray:
    """Decode bit words into +-1 rows (bit ``i`` set <=> sigma_i = +1)."""
    bits = np.asarray(bits, dtype=np.int64)
    shifts = np.arange(n, dtype=np.int64)
    return (((bits[..., None] >> shifts) & 1) * 2 - 1).astype(np.int8)


def bits_from_spins(spins) -> np.ndarray:
    spins = np.asarray(spins)
    n = spins.shape[-1]
    weights = np.int64(1) << np.arange(n, dtype=np.int64)
    return ((spins > 0).astype(np.int64) * weights).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """An enumerated finite state space with a state <-> index codec.

    ``kind`` is one of ``spins``, ``slice``, ``perms`` or ``product``.
    ``alphabets`` lists the admissible values of each coordinate, which is
    what decides whether the space is a full product.
    """

    kind: str
    n: int
    states: np.ndarray
    alphabets: tuple[tuple[int, ...], ...]
    r: int | None = None

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @cached_property
    def _lookup(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(v) for v in row): k for k, row in enumerate(self.states)}

    def index(self, state: Sequence[int]) -> int:
        """Index of ``state`` (a coordinate tuple; spins may also be a bit word)."""
        if self.kind == "spins" and isinstance(state, (int, np.integer)):
            if not 0 <= state < self.size:
                raise KeyError(state)
            return int(state)
        key = tuple(int(v) for v in state)
        if self.kind == "spins":
            if len(key) != self.n or any(v not in (-1, 1) for v in key):
                raise KeyError(key)
            return int(bits_from_spins(np.array(key)))
        return self._lookup[key]

    def state(self, index: int) -> tuple[int, ...]:
        return tuple(int(v) for v in self.states[index])

    def encode(self, state: Sequence[int]) -> int:
        """Bit word for spin/slice states, enumeration index otherwise."""
        key = np.asarray(state)
        if self.kind == "spins":
            return int(bits_from_spins(key))
        if self.kind == "slice":
            return int(((key != 0).astype(np.int64) << np.arange(self.n)).sum())
        return self.index(state)

    def decode(self, code: int) -> tuple[int, ...]:
        if self.kind == "spins":
            return tuple(int(v) for v in spins_from_bits(code, self.n))
        if self.kind == "slice":
            return tuple((int(code) >> i) & 1 for i in range(self.n))
        return self.state(code)

    def __iter__(self) -> Iterator[tuple[int, ...]]:
        for k in range(self.size):
            yield self.state(k)

    @property
    def is_full_product(self) -> bool:
        return self.size == math.prod(len(a) for a in self.alphabets)

    def label(self, index: int) -> str:
        """Text form used by the measure dump: bit string or tuple."""
        if self.kind in ("spins", "slice"):
            word = self.encode(self.states[index])
            return format(word, f"0{self.n}b")
        return "(" + ",".join(str(int(v)) for v in self.states[index]) + ")"

    def flip_index(self, i: int) -> np.ndarray:
        """For spin spaces: index of ``T_i sigma`` for every state."""
        if self.kind != "spins":
            raise TypeError("spin flips are defined on spin spaces only")
        return np.arange(self.size, dtype=np.int64) ^ (1 << i)


def spin_space(n: int, limit: int = SPIN_LIMIT) -> StateSpace:
    if n < 1:
        raise ValueError("n must be positive")
    if n > limit:
        raise LimitExceeded("spins n", n, limit)
    states = spins_from_bits(np.arange(1 << n, dtype=np.int64), n)
    return StateSpace("spins", n, states, ((-1, 1),) * n)


def slice_space(n: int, r: int, limit: int = STATE_LIMIT) -> StateSpace:
    if not 0 <= r <= n:
        raise ValueError("need 0 <= r <= n")
    if n > 32:
        raise LimitExceeded("slice n", n, 32)
    count = math.comb(n, r)
    if count > limit:
        raise LimitExceeded("slice states", count, limit)
    rows = []
    for ones in itertools.combinations(range(n), r):
        row = np.zeros(n, dtype=np.int8)
        row[list(ones)] = 1
        rows.append(row)
    words = [int((row.astype(np.int64) << np.arange(n)).sum()) for row in rows]
    order = np.argsort(words, kind="stable")
    states = np.array(rows, dtype=np.int8).reshape(count, n)[order]
    return StateSpace("slice", n, states, ((0, 1),) * n, r=r)


def perm_space(n: int, limit: int = PERM_LIMIT) -> StateSpace:
    if n > limit:
        raise LimitExceeded("perms n", n, limit)
    states = np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int16)
    return StateSpace("perms", n, states.reshape(-1, n), (tuple(range(1, n + 1)),) * n)


def product_space(alphabets: Sequence[Iterable[int]], limit: int = STATE_LIMIT) -> StateSpace:
    alphabets = tuple(tuple(int(v) for v in a) for a in alphabets)
    count = math.prod(len(a) for a in alphabets)
    if count > limit:
        raise LimitExceeded("product states", count, limit)
    states = np.array(list(itertools.product(*alphabets)), dtype=np.int64)
    return StateSpace("product", len(alphabets), states.reshape(count, len(alphabets)), alphabets)


def enumerate_space(kind: str, n: int, r: int | None = None, *, limit: int | None = None) -> StateSpace:
    """Build the codec for ``spins(n)``, ``slice(n, r)`` or ``perms(n)``."""
    if kind == "spins":
        return spin_space(n, SPIN_LIMIT if limit is None else limit)
    if kind == "slice":
        if r is None:
            raise ValueError("slice space needs r")
        return slice_space(n, r, STATE_LIMIT if limit is None else limit)
    if kind == "perms":
        return perm_space(n, PERM_LIMIT if limit is None else limit)
    raise ValueError(f"unknown space kind {kind!r}")


@dataclass(frozen=True)
class IndexFamily:
    """A family of nonempty site sets; sites are 0-based internally."""

    subsets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        subsets = tuple(tuple(sorted(int(i) for i in s)) for s in self.subsets)
        if not subsets:
            raise ValueError("index family must be nonempty")
        if any(len(s) == 0 for s in subsets):
            raise ValueError("index sets must be nonempty")
        if any(len(set(s)) != len(s) for s in subsets):
            raise ValueError("index set with repeated site")
        if len(set(subsets)) != len(subsets):
            raise ValueError("duplicate index sets in family")
        object.__setattr__(self, "subsets", subsets)

    def __len__(self) -> int:
        return len(self.subsets)

    def __iter__(self):
        return iter(self.subsets)

    def check_sites(self, n: int) -> None:
        for s in self.subsets:
            if s[0] < 0 or s[-1] >= n:
                raise ValueError(f"index set {s} out of range for n={n}")

    @classmethod
    def singletons(cls, n: int) -> "IndexFamily":
        return cls(tuple((i,) for i in range(n)))

    @classmethod
    def pairs(cls, n: int) -> "IndexFamily":
        """All pairs ``{i, j}`` with ``i < j``."""
        return cls(tuple(itertools.combinations(range(n), 2)))

    @classmethod
    def ring_pairs(cls, n: int) -> "IndexFamily":
        """Nearest-neighbour pairs ``{i, i+1}`` on a ring (``n`` wraps to 1)."""
        if n < 3:
            raise ValueError("ring pairs need n >= 3 to be distinct")
        return cls(tuple((i, (i + 1) % n) for i in range(n)))


@dataclass(frozen=True, eq=False)
class ConditionalKernel:
    """The kernels ``m_{xbar_I}`` of a measure for one index set ``I``.

    Internally every state carries the id of its context (its coordinates off
    ``I``).  ``rows/cols/vals`` list the kernel as a sparse matrix
    ``M[x, y] = m_{xbar_I}(y_I)`` over states sharing a context; contexts of
    zero marginal mass carry no entries.
    """

    space: StateSpace
    I: tuple[int, ...]
    context_of: np.ndarray
    context_keys: tuple[tuple[int, ...], ...]
    context_mass: np.ndarray
    row_prob: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def n_contexts(self) -> int:
        return len(self.context_keys)

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        N = self.space.size
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(N, N))

    @cached_property
    def _context_lookup(self) -> dict[tuple[int, ...], int]:
        return {key: c for c, key in enumerate(self.context_keys)}

    @cached_property
    def _support_groups(self):
        # positive-mass states sorted by context, with segment starts
        support = np.flatnonzero(self.row_prob > 0)
        order = support[np.argsort(self.context_of[support], kind="stable")]
        ctx = self.context_of[order]
        if order.size == 0:
            return order, np.zeros(0, dtype=np.int64), np.full(self.n_contexts, -1)
        starts = np.flatnonzero(np.r_[True, ctx[1:] != ctx[:-1]])
        segment = np.full(self.n_contexts, -1, dtype=np.int64)
        segment[ctx[starts]] = np.arange(starts.size)
        return order, starts, segment

    @property
    def table(self) -> dict[tuple[int, ...], dict[tuple[int, ...], float]]:
        """Context -> {completion y_I: probability}, positive-mass contexts only."""
        out: dict[tuple[int, ...], dict[tuple[int, ...], float]] = {}
        idx = list(self.I)
        for x in range(self.space.size):
            c = self.context_of[x]
            if self.context_mass[c] <= 0:
                continue
            row = out.setdefault(self.context_keys[c], {})
            row[tuple(int(v) for v in self.space.states[x, idx])] = float(self.row_prob[x])
        return out

    def row(self, context: Sequence[int]) -> dict[tuple[int, ...], float]:
        key = tuple(int(v) for v in context)
        c = self._context_lookup.get(key)
        if c is None or self.context_mass[c] <= 0:
            raise KeyError(f"no kernel row for context {key}")
        idx = list(self.I)
        members = np.flatnonzero(self.context_of == c)
        return {tuple(int(v) for v in self.space.states[x, idx]): float(self.row_prob[x]) for x in members}

    def expect(self, values: np.ndarray) -> np.ndarray:
        """Per state x: the integral of ``values(xbar_I, .)`` against ``m_{xbar_I}``."""
        return self.matrix @ values

    def group_range(self, values: np.ndarray) -> np.ndarray:
        """Per state: max minus min of ``values`` over the kernel support of its context.

        ``values`` may carry extra trailing axes; zero-mass contexts give 0.
        """
        values = np.asarray(values, dtype=float)
        order, starts, segment = self._support_groups
        out_shape = values.shape
        if starts.size == 0:
            return np.zeros(out_shape)
        sorted_vals = values[order]
        hi = np.maximum.reduceat(sorted_vals, starts, axis=0)
        lo = np.minimum.reduceat(sorted_vals, starts, axis=0)
        spread = hi - lo
        seg = segment[self.context_of]
        result = np.zeros(out_shape)
        ok = seg >= 0
        result[ok] = spread[seg[ok]]
        return result


def _context_ids(states: np.ndarray, complement: list[int]) -> tuple[np.ndarray, np.ndarray]:
    if not complement:
        return np.zeros(states.shape[0], dtype=np.int64), np.zeros((1, 0), dtype=states.dtype)
    keys, inverse = np.unique(states[:, complement], axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64), keys


def build_kernel(space: StateSpace, probs: np.ndarray, I: Sequence[int]) -> ConditionalKernel:
    I = tuple(sorted(int(i) for i in I))
    if not I or I[0] < 0 or I[-1] >= space.n:
        raise ValueError(f"index set {I} out of range for n={space.n}")
    complement = [k for k in range(space.n) if k not in I]
    context_of, keys = _context_ids(space.states, complement)
    n_ctx = keys.shape[0]
    mass = np.bincount(context_of, weights=probs, minlength=n_ctx)
    with np.errstate(invalid="ignore", divide="ignore"):
        row_prob = np.where(mass[context_of] > 0, probs / mass[context_of], 0.0)
    # pairs (x, y) within positive-mass contexts with m(y) > 0
    order = np.argsort(context_of, kind="stable")
    ctx_sorted = context_of[order]
    starts = np.flatnonzero(np.r_[True, ctx_sorted[1:] != ctx_sorted[:-1]])
    ends = np.r_[starts[1:], order.size]
    rows, cols = [], []
    sizes = ends - starts
    for size in np.unique(sizes):
        # vectorize over all groups of equal size
        sel = starts[sizes == size]
        members = order[sel[:, None] + np.arange(size)]
        g_rows = np.repeat(members, size, axis=1)
        g_cols = np.tile(members, (1, size))
        rows.append(g_rows.ravel())
        cols.append(g_cols.ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = row_prob[cols]
    keep = (vals > 0) & (mass[context_of[rows]] > 0)
    context_keys = tuple(tuple(int(v) for v in key) for key in keys)
    return ConditionalKernel(
        space=space,
        I=I,
        context_of=context_of,
        context_keys=context_keys,
        context_mass=mass,
        row_prob=row_prob,
        rows=rows[keep],
        cols=cols[keep],
        vals=vals[keep],
    )


@dataclass(frozen=True, eq=False)
class TabulatedMeasure:
    """An explicit probability vector over an enumerated space."""

    space: StateSpace
    probs: np.ndarray
    log_probs: np.ndarray
    _kernels: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (self.space.size,):
            raise ValueError("probability vector does not match the space")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")

    @classmethod
    def from_log_weights(cls, space: StateSpace, log_w) -> "TabulatedMeasure":
        log_w = np.asarray(log_w, dtype=float)
        log_p = log_w - logsumexp(log_w)
        probs = np.exp(log_p)
        probs /= probs.sum()
        return cls(space, probs, log_p)

    @classmethod
    def from_weights(cls, space: StateSpace, weights) -> "TabulatedMeasure":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights have no mass")
        probs = w / total
        probs /= probs.sum()
        with np.errstate(divide="ignore"):
            log_p = np.log(probs)
        return cls(space, probs, log_p)

    @classmethod
    def uniform(cls, space: StateSpace) -> "TabulatedMeasure":
        return cls.from_weights(space, np.ones(space.size))

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)

    @property
    def has_full_support(self) -> bool:
        return self.space.is_full_product and bool(np.all(self.probs > 0))

    def expect(self, values) -> float:
        return float(np.dot(self.probs, values))

    def kernel(self, I: Sequence[int]) -> ConditionalKernel:
        key = tuple(sorted(int(i) for i in I))
        k = self._kernels.get(key)
        if k is None:
            k = build_kernel(self.space, self.probs, key)
            self._kernels[key] = k
        return k

    def coordinate_marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Values of coordinate ``i`` and their probabilities."""
        values, inverse = np.unique(self.space.states[:, i], return_inverse=True)
        return values, np.bincount(inverse.reshape(-1), weights=self.probs, minlength=values.size)


@dataclass(frozen=True)
class ComplementMarginal:
    """The push-forward of a measure onto the coordinates outside ``I``."""

    complement: tuple[int, ...]
    contexts: tuple[tuple[int, ...], ...]
    mass: np.ndarray

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {c: float(m) for c, m in zip(self.contexts, self.mass)}


def disintegrate(mu: TabulatedMeasure, I: Sequence[int]) -> tuple[ComplementMarginal, ConditionalKernel]:
    """Split ``mu`` into its marginal off ``I`` and the kernel on ``S_I``."""
    kernel = mu.kernel(I)
    complement = tuple(k for k in range(mu.n) if k not in kernel.I)
    return ComplementMarginal(complement, kernel.context_keys, kernel.context_mass.copy()), kernel


def reconstruct_expectation(mu: TabulatedMeasure, I: Sequence[int], f) -> float:
    """Integrate ``f`` through the disintegration: marginal, then kernel rows."""
    marginal, kernel = disintegrate(mu, I)
    f = np.asarray(f, dtype=float)
    inner = np.bincount(kernel.context_of, weights=kernel.row_prob * f, minlength=kernel.n_contexts)
    return float(np.dot(marginal.mass, inner))


def kernel_support(kernel: ConditionalKernel, context: Sequence[int]) -> set[tuple[int, ...]]:
    """Completions ``y_I`` carrying positive mass under ``m_context``."""
    return {y for y, p in kernel.row(context).items() if p > 0}


def dump_measure(mu: TabulatedMeasure) -> str:
    """One line per state: ``<index> <state> <prob>`` with 17 significant digits."""
    lines = [f"{k} {mu.space.label(k)} {mu.probs[k]:.17g}" for k in range(mu.space.size)]
    return "\n".join(lines) + "\n"


def load_measure(space: StateSpace, text: str) -> TabulatedMeasure:
    probs = np.zeros(space.size)
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected '<index> <state> <prob>'")
        k = int(parts[0])
        if k in seen or not 0 <= k < space.size:
            raise ValueError(f"line {lineno}: bad or repeated index {k}")
        if parts[1] != space.label(k):
            raise ValueError(f"line {lineno}: state {parts[1]} does not match index {k}")
        seen.add(k)
        probs[k] = float(parts[2])
    if abs(probs.sum() - 1.0) <= 1e-12 and np.all(probs >= 0):
        # already normalized: keep the parsed values bit for bit
        with np.errstate(divide="ignore"):
            return TabulatedMeasure(space, probs, np.log(probs))
    return TabulatedMeasure.from_weights(space, probs)
