"""Single-update Markov chains, their transition matrices, and empirical tails.

Every chain consumes uniforms from its own ``Philox`` stream keyed by
``(seed, task)``; uniforms are drawn in fixed-size blocks so a run is a pure
function of the ChainSpec, whatever the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .functionals import dirichlet_form
from .ising import IsingModel, conditional_plus_all
from .spaces import IndexFamily, StateSpace, TabulatedMeasure, perm_space, slice_space

BLOCK = 1 << 16
KINDS = ("glauber", "transposition", "bl", "ssep")


# ---------------------------------------------------------------------------
# step kernels: each consumes two uniforms per update


@numba.njit(cache=True, nogil=True)
def _glauber_steps(J, h_field, state, fields, u, n_steps, t0, thin, out, out_pos):
    n = state.shape[0]
    k = out_pos
    for t in range(n_steps):
        i = min(int(u[2 * t] * n), n - 1)
        p = 0.5 * (1.0 + math.tanh(fields[i]))
        new = 1 if u[2 * t + 1] < p else -1
        old = state[i]
        if new != old:
            state[i] = new
            delta = float(new - old)
            for j in range(n):
                fields[j] += J[j, i] * delta
        if thin > 0 and (t0 + t + 1) % thin == 0:
            out[k, :] = state
            k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _pair_from_uniform(u, n):
    # uniform unordered pair i < j
    m = n * (n - 1) // 2
    r = min(int(u * m), m - 1)
    i = 0
    while r >= n - 1 - i:
        r -= n - 1 - i
        i += 1
    return i, i + 1 + r


@numba.njit(cache=True, nogil=True)
def _transposition_steps(state, u, n_steps, t0, thin, out, out_pos):
    n = state.shape[0]
    k = out_pos
    for t in range(n_steps):
        i, j = _pair_from_uniform(u[2 * t], n)
        tmp = state[i]
        state[i] = state[j]
        state[j] = tmp
        if thin > 0 and (t0 + t + 1) % thin == 0:
            out[k, :] = state
            k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _bl_steps(state, u, n_steps, t0, thin, out, out_pos):
    n = state.shape[0]
    r = 0
    for i in range(n):
        r += state[i]
    k = out_pos
    occ = np.empty(n, dtype=np.int64)
    emp = np.empty(n, dtype=np.int64)
    for t in range(n_steps):
        if 0 < r < n:
            a = 0
            b = 0
            for i in range(n):
                if state[i] == 1:
                    occ[a] = i
                    a += 1
                else:
                    emp[b] = i
                    b += 1
            i = occ[min(int(u[2 * t] * a), a - 1)]
            j = emp[min(int(u[2 * t + 1] * b), b - 1)]
            state[i] = 0
            state[j] = 1
        if thin > 0 and (t0 + t + 1) % thin == 0:
            out[k, :] = state
            k += 1
    return k


@numba.njit(cache=True, nogil=True)
def _ssep_steps(state, u, n_steps, t0, thin, out, out_pos):
    n = state.shape[0]
    k = out_pos
    for t in range(n_steps):
        i = min(int(u[2 * t] * n), n - 1)
        j = (i + 1) % n
        tmp = state[i]
        state[i] = state[j]
        state[j] = tmp
        if thin > 0 and (t0 + t + 1) % thin == 0:
            out[k, :] = state
            k += 1
    return k


# ---------------------------------------------------------------------------
# specs and runs


@dataclass(frozen=True, eq=False)
class ChainSpec:
    kind: str
    n: int
    steps: int
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    task: int = 0
    r: int | None = None
    model: IsingModel | None = None
    initial: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown chain kind {self.kind!r}")
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn_in")
        if self.burn_in < 0 or self.thinning < 1:
            raise ValueError("need burn_in >= 0 and thinning >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.kind == "glauber":
            if self.model is None or self.model.n != self.n:
                raise ValueError("glauber chain needs an Ising model with matching n")
        if self.kind in ("bl", "ssep") and (self.r is None or not 0 <= self.r <= self.n):
            raise ValueError("slice chains need 0 <= r <= n")
        if self.kind == "ssep" and self.n < 3:
            raise ValueError("ring needs n >= 3")
        if self.kind in ("transposition", "bl") and self.n < 2:
            raise ValueError("pair swaps need n >= 2")

    @property
    def n_samples(self) -> int:
        return (self.steps - self.burn_in) // self.thinning

    def with_task(self, task: int) -> "ChainSpec":
        return replace(self, task=task)


def default_burn_in(n: int) -> int:
    """Heuristic ``10 n log n`` single-site updates."""
    return int(math.ceil(10 * n * math.log(max(n, 2))))


def chain_rng(seed: int, task: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, task], dtype=np.uint64)))


def _initial_state(spec: ChainSpec) -> np.ndarray:
    if spec.initial is not None:
        return np.array(spec.initial, dtype=np.int8 if spec.kind != "transposition" else np.int64)
    if spec.kind == "glauber":
        return np.ones(spec.n, dtype=np.int8)
    if spec.kind == "transposition":
        return np.arange(1, spec.n + 1, dtype=np.int64)
    state = np.zeros(spec.n, dtype=np.int8)
    state[: spec.r] = 1
    return state


def run_states(spec: ChainSpec) -> np.ndarray:
    """Run the chain; returns the ``n_samples`` recorded states after burn-in."""
    rng = chain_rng(spec.seed, spec.task)
    state = _initial_state(spec)
    out = np.empty((spec.n_samples, spec.n), dtype=state.dtype)
    scratch = np.empty((1, spec.n), dtype=state.dtype)
    if spec.kind == "glauber":
        J = np.ascontiguousarray(spec.model.J)
        hf = np.ascontiguousarray(spec.model.h)
        fields = J @ state.astype(float) + hf

    kernel = {"transposition": _transposition_steps, "bl": _bl_steps, "ssep": _ssep_steps}.get(spec.kind)

    def advance(n_steps: int, thin: int, buf: np.ndarray, pos: int) -> int:
        done = 0
        while done < n_steps:
            m = min(BLOCK, n_steps - done)
            u = rng.random(2 * m)
            if spec.kind == "glauber":
                pos = _glauber_steps(J, hf, state, fields, u, m, done, thin, buf, pos)
            else:
                pos = kernel(state, u, m, done, thin, buf, pos)
            done += m
        return pos

    advance(spec.burn_in, 0, scratch, 0)
    pos = advance(spec.n_samples * spec.thinning, spec.thinning, out, 0)
    assert pos == spec.n_samples
    return out


@dataclass(frozen=True, eq=False)
class SampleBatch:
    values: np.ndarray
    spec: ChainSpec
    observable: str


def run_chain(spec: ChainSpec, observable: Callable[[np.ndarray], np.ndarray], name: str = "f") -> SampleBatch:
    states = run_states(spec)
    values = np.asarray(observable(states), dtype=float)
    if values.shape != (spec.n_samples,):
        raise ValueError("observable must map the state batch to one value per sample")
    return SampleBatch(values, spec, name)


def run_chains(spec: ChainSpec, observable, tasks: int, threads: int = 1, name: str = "f") -> list[SampleBatch]:
    """Independent replicas with task ids ``0..tasks-1``; result order is by task id."""
    specs = [spec.with_task(k) for k in range(tasks)]
    if threads <= 1:
        return [run_chain(s, observable, name) for s in specs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: run_chain(s, observable, name), specs))


@dataclass(frozen=True, eq=False)
class TailCurve:
    t: np.ndarray
    empirical: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray | None = None

    def rows(self):
        b = self.bound if self.bound is not None else np.full(self.t.shape, np.nan)
        return list(zip(self.t, self.empirical, b, self.stderr))


def empirical_tail(values, t_grid, center: float | None = None, batches: int = 50) -> TailCurve:
    """Fraction of samples with ``|f - center| >= t``; stderr from batch means.

    ``center`` defaults to the sample mean.
    """
    values = np.asarray(values, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    c = float(values.mean()) if center is None else float(center)
    dev = np.abs(values - c)
    ind = dev[None, :] >= t_grid[:, None]
    ind[t_grid <= 0] = True
    emp = ind.mean(axis=1)
    m = values.size // batches
    if m >= 1 and batches >= 2:
        means = ind[:, : m * batches].reshape(t_grid.size, batches, m).mean(axis=2)
        err = means.std(axis=1, ddof=1) / math.sqrt(batches)
    else:
        err = np.full(t_grid.size, np.nan)
    return TailCurve(t_grid, emp, err)


# ---------------------------------------------------------------------------
# assembled transition matrices


def chain_space(kind: str, n: int, r: int | None = None) -> StateSpace:
    from .spaces import spin_space

    if kind == "glauber":
        return spin_space(n)
    if kind == "transposition":
        return perm_space(n)
    return slice_space(n, r)


def glauber_matrix(model: IsingModel) -> sparse.csr_matrix:
    n = model.n
    N = 1 << n
    idx = np.arange(N)
    from .spaces import spins_from_bits

    s = spins_from_bits(idx, n)
    p_plus = conditional_plus_all(model, s)
    p_flip = np.where(s > 0, 1.0 - p_plus, p_plus) / n
    rows = np.concatenate([np.repeat(idx, n), idx])
    cols = np.concatenate([(idx[:, None] ^ (1 << np.arange(n))[None, :]).ravel(), idx])
    vals = np.concatenate([p_flip.ravel(), 1.0 - p_flip.sum(axis=1)])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


def _swap_matrix(space: StateSpace, pairs: list[tuple[int, int]], weights=None) -> sparse.csr_matrix:
    N = space.size
    lookup = space._lookup
    rows, cols, vals = [], [], []
    w = np.full(len(pairs), 1.0 / len(pairs)) if weights is None else weights
    for x in range(N):
        st = space.states[x].copy()
        for (i, j), wt in zip(pairs, w):
            y = st.copy()
            y[i], y[j] = y[j], y[i]
            rows.append(x)
            cols.append(lookup[tuple(int(v) for v in y)])
            vals.append(wt)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


def transposition_matrix(n: int) -> sparse.csr_matrix:
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return _swap_matrix(perm_space(n), pairs)


def ssep_matrix(n: int, r: int) -> sparse.csr_matrix:
    pairs = [(i, (i + 1) % n) for i in range(n)]
    return _swap_matrix(slice_space(n, r), pairs)


def bl_matrix(n: int, r: int) -> sparse.csr_matrix:
    space = slice_space(n, r)
    N = space.size
    lookup = space._lookup
    rows, cols, vals = [], [], []
    for x in range(N):
        st = space.states[x]
        occ = np.flatnonzero(st == 1)
        emp = np.flatnonzero(st == 0)
        if occ.size == 0 or emp.size == 0:
            rows.append(x)
            cols.append(x)
            vals.append(1.0)
            continue
        w = 1.0 / (occ.size * emp.size)
        for i in occ:
            for j in emp:
                y = st.copy()
                y[i], y[j] = 0, 1
                rows.append(x)
                cols.append(lookup[tuple(int(v) for v in y)])
                vals.append(w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


def transition_matrix(spec_or_kind, n: int | None = None, r: int | None = None, model: IsingModel | None = None):
    if isinstance(spec_or_kind, ChainSpec):
        kind, n, r, model = spec_or_kind.kind, spec_or_kind.n, spec_or_kind.r, spec_or_kind.model
    else:
        kind = spec_or_kind
    if kind == "glauber":
        return glauber_matrix(model)
    if kind == "transposition":
        return transposition_matrix(n)
    if kind == "bl":
        return bl_matrix(n, r)
    if kind == "ssep":
        return ssep_matrix(n, r)
    raise ValueError(f"unknown chain kind {kind!r}")


@dataclass(frozen=True)
class ChainCheck:
    row_sums: float
    stationarity: float
    detailed_balance: float
    irreducible: bool


def check_chain(P: sparse.csr_matrix, pi: np.ndarray) -> ChainCheck:
    P = sparse.csr_matrix(P)
    rs = float(np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0).max())
    stat = float(np.abs(P.T @ pi - pi).max())
    F = sparse.diags(pi) @ P
    db = float(np.abs((F - F.T).toarray()).max()) if F.shape[0] <= 8192 else float(abs(F - F.T).max())
    k, _ = connected_components(P, directed=True, connection="strong")
    return ChainCheck(rs, stat, db, k == 1)


# ---------------------------------------------------------------------------
# slice Dirichlet forms


def slice_generator(kind: str, n: int, r: int) -> sparse.csr_matrix:
    """``K f(eta) = sum_{i,j} eta_i (1 - eta_j)(f(tau_ij eta) - f(eta))`` or the ring ``L``."""
    space = slice_space(n, r)
    N = space.size
    lookup = space._lookup
    rows, cols, vals = [], [], []
    for x in range(N):
        st = space.states[x]
        if kind == "bl":
            pairs = [(i, j) for i in range(n) for j in range(n) if st[i] == 1 and st[j] == 0]
        elif kind == "ssep":
            pairs = [(i, (i + 1) % n) for i in range(n)]
        else:
            raise ValueError(f"unknown slice dynamics {kind!r}")
        for i, j in pairs:
            y = st.copy()
            y[i], y[j] = y[j], y[i]
            y_idx = lookup[tuple(int(v) for v in y)]
            rows += [x, x]
            cols += [y_idx, x]
            vals += [1.0, -1.0]
    return sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))


def slice_family(kind: str, n: int) -> IndexFamily:
    return IndexFamily.pairs(n) if kind == "bl" else IndexFamily.ring_pairs(n)


@dataclass(frozen=True)
class DirichletComparison:
    lhs: float
    rhs: float

    @property
    def kappa(self) -> float:
        return self.lhs / self.rhs if self.rhs != 0 else math.nan


def dirichlet_equality_check(kind: str, n: int, r: int, f) -> DirichletComparison:
    """``int |df|^2 dmu`` (pairs or ring pairs) against ``-E f G f`` for the matching generator."""
    space = slice_space(n, r)
    mu = TabulatedMeasure.uniform(space)
    f = np.asarray(f, dtype=float)
    lhs = dirichlet_form(mu, slice_family(kind, n), f)
    G = slice_generator(kind, n, r)
    rhs = -float(np.dot(mu.probs, f * (G @ f)))
    return DirichletComparison(lhs, rhs)


@dataclass(frozen=True)
class NamedScaling:
    kind: str
    formula: str
    family: str
    fn: Callable[..., float] = field(repr=False)
    c_unspecified: bool = True

    def __call__(self, n: int, r: int | None = None, c: float = 1.0) -> float:
        return c * self.fn(n, r)


def named_lsi_scalings(kind: str) -> NamedScaling:
    """LSI constant scalings up to an unspecified absolute constant ``c`` (set to 1)."""
    if kind == "transposition":
        return NamedScaling(kind, "c log(n)/n", "pairs", lambda n, r=None: math.log(n) / n)
    if kind == "bl":
        return NamedScaling(kind, "c log(n^2/(r(n-r)))/n", "pairs i<j",
                            lambda n, r: math.log(n * n / (r * (n - r))) / n)
    if kind == "ssep":
        return NamedScaling(kind, "c n^2", "ring pairs", lambda n, r=None: float(n * n))
    raise ValueError(f"no named scaling for {kind!r}")
