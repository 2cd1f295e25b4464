"""Polynomial observables in the spins and their tail bounds."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .ising import IsingModel, gibbs_measure
from .spaces import TabulatedMeasure, spins_from_bits

CHUNK = 1 << 14


class UnsupportedOrder(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoefficientTensor:
    """Symmetric order-``d`` tensor with zero generalized diagonal.

    Stored sparsely as ``{sorted index tuple: value}`` (0-based); ``uniform``
    marks the tensor with every off-diagonal entry equal to one value, which
    is never densified.  ``a[i1..id]`` equals the value of the sorted tuple,
    so ordered sums count every set ``d!`` times.
    """

    n: int
    d: int
    entries: dict = field(default_factory=dict)
    uniform: float | None = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("order must be >= 1")
        if self.uniform is not None and self.entries:
            raise ValueError("uniform tensor takes no explicit entries")
        clean = {}
        for key, v in self.entries.items():
            key = tuple(int(i) for i in key)
            if len(key) != self.d:
                raise ValueError(f"index {key} has the wrong length for order {self.d}")
            if list(key) != sorted(key) or len(set(key)) != self.d:
                raise ValueError(f"index {key} must be strictly increasing (no diagonal entries)")
            if key[0] < 0 or key[-1] >= self.n:
                raise ValueError(f"index {key} out of range for n={self.n}")
            if v != 0:
                clean[key] = float(v)
        object.__setattr__(self, "entries", clean)

    @classmethod
    def from_dense(cls, A, atol: float = 1e-12) -> "CoefficientTensor":
        A = np.asarray(A, dtype=float)
        d, n = A.ndim, A.shape[0]
        if any(s != n for s in A.shape):
            raise ValueError("tensor must be n x ... x n")
        for perm in itertools.permutations(range(d)):
            if not np.allclose(A, A.transpose(perm), atol=atol, rtol=0):
                raise ValueError("tensor is not symmetric")
        if d > 1:
            idx = np.indices(A.shape).reshape(d, -1)
            diag = np.zeros(idx.shape[1], dtype=bool)
            for a, b in itertools.combinations(range(d), 2):
                diag |= idx[a] == idx[b]
            if np.any(np.abs(A.reshape(-1)[diag]) > atol):
                raise ValueError("tensor does not vanish on the generalized diagonal")
        entries = {I: A[I] for I in itertools.combinations(range(n), d) if A[I] != 0}
        return cls(n, d, entries)

    @classmethod
    def all_ones(cls, n: int, d: int, value: float = 1.0) -> "CoefficientTensor":
        return cls(n, d, uniform=float(value))

    @classmethod
    def random(cls, n: int, d: int, rng: np.random.Generator, density: float = 1.0) -> "CoefficientTensor":
        entries = {I: rng.normal() for I in itertools.combinations(range(n), d) if rng.random() < density}
        return cls(n, d, entries)

    def items(self):
        if self.uniform is not None:
            return ((I, self.uniform) for I in itertools.combinations(range(self.n), self.d))
        return iter(self.entries.items())

    @cached_property
    def _dense(self) -> np.ndarray:
        A = np.zeros((self.n,) * self.d)
        for I, v in self.items():
            for perm in itertools.permutations(I):
                A[perm] = v
        A.setflags(write=False)
        return A

    def dense(self) -> np.ndarray:
        return self._dense

    def slice(self, i: int) -> "CoefficientTensor":
        """``A^(i)``: the order ``d-1`` tensor ``a[i, ...]``."""
        if self.d < 2:
            raise ValueError("cannot slice an order-1 tensor")
        out = {}
        for I, v in self.items():
            if i in I:
                out[tuple(j for j in I if j != i)] = v
        return CoefficientTensor(self.n, self.d - 1, out)

    def scaled(self, s: float) -> "CoefficientTensor":
        if self.uniform is not None:
            return CoefficientTensor(self.n, self.d, uniform=self.uniform * s)
        return CoefficientTensor(self.n, self.d, {I: v * s for I, v in self.entries.items()})


def tensor_norms(A: CoefficientTensor) -> tuple[float, float]:
    """``(||A||_HS, ||A||_inf)``, the HS norm summing over ordered tuples."""
    f = math.factorial(A.d)
    if A.uniform is not None:
        count = math.comb(A.n, A.d)
        return math.sqrt(f * count) * abs(A.uniform) if count else 0.0, abs(A.uniform) if count else 0.0
    vals = np.array(list(A.entries.values()), dtype=float)
    if vals.size == 0:
        return 0.0, 0.0
    return math.sqrt(f * float(np.sum(vals**2))), float(np.abs(vals).max())


def read_tensor(path, n: int, d: int) -> CoefficientTensor:
    """Parse lines ``i j ... value`` with 1-based strictly increasing indices."""
    entries = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != d + 1:
            raise ValueError(f"{path}:{lineno}: expected {d} indices and a value")
        try:
            idx = tuple(int(p) - 1 for p in parts[:d])
            value = float(parts[d])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if idx in entries:
            raise ValueError(f"{path}:{lineno}: repeated index {tuple(i + 1 for i in idx)}")
        if list(idx) != sorted(set(idx)):
            raise ValueError(f"{path}:{lineno}: indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= n:
            raise ValueError(f"{path}:{lineno}: index out of range 1..{n}")
        entries[idx] = value
    return CoefficientTensor(n, d, entries)


def write_tensor(A: CoefficientTensor) -> str:
    lines = [" ".join(str(i + 1) for i in I) + f" {v:.17g}" for I, v in sorted(A.items())]
    return "\n".join(lines) + "\n"


def elementary_symmetric(spins: np.ndarray, d: int) -> np.ndarray:
    """``e_d`` of each row, i.e. the sum of ``sigma_I`` over all ``|I| = d``."""
    s = np.asarray(spins, dtype=float)
    e = np.zeros((d + 1,) + s.shape[:-1])
    e[0] = 1.0
    for i in range(s.shape[-1]):
        x = s[..., i]
        for k in range(d, 0, -1):
            e[k] = e[k] + x * e[k - 1]
    return e[d]


def poly_eval(spins, A: CoefficientTensor) -> np.ndarray:
    """``f(sigma) = sum_{|I| = d} a_I sigma_I`` (sum over sets), rowwise."""
    s = np.asarray(spins, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    if A.uniform is not None:
        out = A.uniform * elementary_symmetric(s, A.d)
    elif not A.entries:
        out = np.zeros(s.shape[0])
    else:
        keys = np.array(list(A.entries.keys()), dtype=np.int64)
        vals = np.array(list(A.entries.values()))
        out = np.empty(s.shape[0])
        for start in range(0, s.shape[0], CHUNK):
            block = s[start : start + CHUNK]
            out[start : start + block.shape[0]] = np.prod(block[:, keys], axis=2) @ vals
    return out[0] if single else out


def _contract(A: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``sum a_{i1..id} Y_{i1} ... Y_{id}`` for every row of ``Y``."""
    out = np.empty(Y.shape[0])
    for start in range(0, Y.shape[0], CHUNK):
        y = Y[start : start + CHUNK]
        t = np.broadcast_to(A, (y.shape[0],) + A.shape)
        for _ in range(A.ndim):
            t = np.einsum("s...i,si->s...", t, y)
        out[start : start + y.shape[0]] = t
    return out


@dataclass(frozen=True, eq=False)
class CenteredMoments:
    """Exact moments of the centered spins ``Y = sigma - E sigma`` under a tabulated measure."""

    mu: TabulatedMeasure
    Y: np.ndarray
    mean: np.ndarray

    @classmethod
    def of(cls, mu: TabulatedMeasure) -> "CenteredMoments":
        if mu.space.kind != "spins":
            raise TypeError("centered polynomials are defined on spin spaces")
        s = mu.space.states.astype(float)
        mean = mu.probs @ s
        return cls(mu, s - mean, mean)

    @cached_property
    def m2(self) -> np.ndarray:
        return np.einsum("s,si,sj->ij", self.mu.probs, self.Y, self.Y)

    @cached_property
    def m3(self) -> np.ndarray:
        return np.einsum("s,si,sj,sk->ijk", self.mu.probs, self.Y, self.Y, self.Y)


def centered_poly(moments: CenteredMoments, A: CoefficientTensor) -> np.ndarray:
    """``f_{d,A}`` on every state, with all sums over ordered index tuples (d <= 4)."""
    d = A.d
    if d > 4:
        raise UnsupportedOrder(f"centered polynomials are implemented for d <= 4, got {d}")
    Y, p = moments.Y, moments.mu.probs
    a = A.dense()
    if d == 1:
        return Y @ a
    g = _contract(a, Y)
    g = g - float(p @ g)
    if d == 2:
        return g
    if d == 3:
        lin = np.einsum("ijk,jk->i", a, moments.m2)
        return g - 3.0 * (Y @ lin)
    m2 = moments.m2
    lin = np.einsum("ijkl,jkl->i", a, moments.m3)
    quad = np.einsum("ijkl,kl->ij", a, m2)
    const = float(np.einsum("ij,ij->", quad, m2))
    return g - 4.0 * (Y @ lin) - 6.0 * np.einsum("si,ij,sj->s", Y, quad, Y) + 6.0 * const


@dataclass(frozen=True)
class RecursionCheck:
    c: float
    residual: float


def h_recursion_check(model_or_mu, A: CoefficientTensor, c: float | None = None) -> RecursionCheck:
    """Compare ``h_i f_{d,A}`` with ``c |f_{d-1,A^(i)} - E f_{d-1,A^(i)}|`` over all states and sites.

    When ``c`` is omitted it is read off from the largest nonzero right side.
    """
    from .difference import h_single

    mu = gibbs_measure(model_or_mu) if isinstance(model_or_mu, IsingModel) else model_or_mu
    if not 2 <= A.d <= 4:
        raise UnsupportedOrder("recursion is checked for d in {2, 3, 4}")
    mom = CenteredMoments.of(mu)
    f = centered_poly(mom, A)
    lhs, rhs = [], []
    for i in range(mu.n):
        lhs.append(h_single(f, mu, (i,)))
        g = centered_poly(mom, A.slice(i))
        rhs.append(np.abs(g - mu.expect(g)))
    lhs, rhs = np.stack(lhs), np.stack(rhs)
    if c is None:
        k = np.unravel_index(np.argmax(rhs), rhs.shape)
        c = float(lhs[k] / rhs[k]) if rhs[k] > 0 else 0.0
    return RecursionCheck(c, float(np.abs(lhs - c * rhs).max(initial=0.0)))


def tail_bound(kind: str, d: int, t, *, c: float, n: int | None = None, a_inf: float | None = None,
               hs: float | None = None):
    """``2 exp(-t^{2/d} / (c n ||a||_inf^{2/d}))`` or ``2 exp(-t^{2/d} / (c ||A||_HS^{2/d}))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if kind == "thm13":
        scale = c * n * a_inf ** (2.0 / d)
    elif kind == "thm14":
        scale = c * hs ** (2.0 / d)
    else:
        raise ValueError(f"unknown bound {kind!r}")
    with np.errstate(divide="ignore"):
        out = 2.0 * np.exp(-(t ** (2.0 / d)) / scale) if scale > 0 else np.where(t > 0, 0.0, 2.0)
    return float(out) if out.ndim == 0 else out


def adaptive_eta(t, h_norms, a_norm: float, d: int, C: float):
    """``min(t^{2/d} / (2C ||A||^{2/d}), min_k t^{2/k} / (2C ||h^(k) f||_2^{2/k}))``."""
    t = np.asarray(t, dtype=float)
    h_norms = list(h_norms)
    if len(h_norms) != d - 1:
        raise ValueError(f"need {d - 1} lower-order norms for d={d}")
    if a_norm <= 0 or any(h <= 0 for h in h_norms):
        raise ValueError("norms must be positive")
    eta = t ** (2.0 / d) / (2.0 * C * a_norm ** (2.0 / d))
    for k, h in enumerate(h_norms, start=1):
        eta = np.minimum(eta, t ** (2.0 / k) / (2.0 * C * h ** (2.0 / k)))
    return eta


def tail_bound_adaptive(t, h_norms, a_norm: float, d: int, C: float, rescaled: bool = False):
    """``e^2 exp(-eta_f(t))`` bounds the tail at ``(de) t``; ``rescaled`` bounds it at ``t``."""
    eta = adaptive_eta(t, h_norms, a_norm, d, C)
    if rescaled:
        eta = eta / (d * math.e) ** 2
    out = math.e**2 * np.exp(-eta)
    return float(out) if np.ndim(out) == 0 else out


def adaptive_crossover(h_norm: float, a_norm: float) -> float:
    """For ``d = 2``: the ``t`` where the two branches of ``eta_f`` coincide, ``h^2 / ||A||``."""
    return h_norm**2 / a_norm


@dataclass(frozen=True, eq=False)
class ThirdOrderCorrection:
    f_tilde: np.ndarray
    f: np.ndarray
    c: np.ndarray


def third_order_correction(model_or_mu, A: CoefficientTensor) -> ThirdOrderCorrection:
    """``f = f~ - sum_l c_l sigma_l`` with ``c_l = sum_{i<j} a_{sort(i,j,l)} E sigma_i sigma_j``.

    ``f~ = sum_{i<j<k} a_ijk sigma_i sigma_j sigma_k``; the coefficient of
    ``sigma_l`` collects every triple containing ``l``.
    """
    if A.d != 3:
        raise ValueError("third-order correction needs an order-3 tensor")
    mu = gibbs_measure(model_or_mu) if isinstance(model_or_mu, IsingModel) else model_or_mu
    s = mu.space.states.astype(float)
    corr = np.einsum("s,si,sj->ij", mu.probs, s, s)
    c = np.zeros(A.n)
    for (i, j, k), v in A.items():
        c[i] += v * corr[j, k]
        c[j] += v * corr[i, k]
        c[k] += v * corr[i, j]
    f_tilde = poly_eval(s, A)
    return ThirdOrderCorrection(f_tilde, f_tilde - s @ c, c)


def corollary_bound(t: float, n: int, C1: float, C2: float) -> float:
    """``4 exp(-t^{2/3} / (2 C2 n))``, valid for ``t > 2 C1 n^{3/2}``."""
    if t <= 2.0 * C1 * n**1.5:
        raise ValueError(f"bound needs t > 2 C1 n^(3/2) = {2.0 * C1 * n**1.5:.6g}")
    return 4.0 * math.exp(-(t ** (2.0 / 3.0)) / (2.0 * C2 * n))


def uniform_poly_distribution(n: int, d: int, chunk: int = 1 << 20) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of ``e_d(sigma)`` under uniform spins, by enumerating all ``2^n`` states.

    Returns the distinct values and their probabilities.  ``e_d`` depends on
    the state only through the number of plus spins, which is tabulated once.
    """
    if n > 32:
        raise ValueError("enumeration limited to n <= 32")
    k = np.arange(n + 1)
    spins = np.where(np.arange(n)[None, :] < k[:, None], 1.0, -1.0)
    by_count = elementary_symmetric(spins, d)
    counts = np.zeros(n + 1)
    total = 1 << n
    for start in range(0, total, chunk):
        words = np.arange(start, min(total, start + chunk), dtype=np.uint64)
        pc = np.zeros(words.size, dtype=np.int64)
        w = words.copy()
        while np.any(w):
            pc += (w & np.uint64(1)).astype(np.int64)
            w >>= np.uint64(1)
        counts += np.bincount(pc, minlength=n + 1)
    probs = counts / total
    values, inverse = np.unique(np.round(by_count, 9), return_inverse=True)
    return values, np.bincount(inverse, weights=probs)


def exact_tail(values: np.ndarray, probs: np.ndarray, t_grid) -> np.ndarray:
    """``P(|f - E f| >= t)`` for a discrete law given by atoms and weights."""
    mean = float(np.dot(values, probs))
    dev = np.abs(values - mean)
    t_grid = np.asarray(t_grid, dtype=float)
    return np.array([probs[dev >= t - 1e-9 * max(1.0, t)].sum() for t in t_grid])
