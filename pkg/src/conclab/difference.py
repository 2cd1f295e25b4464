"""Difference operators built from disintegration kernels.

``d_lower`` is the conditional L2 deviation, ``h_upper`` the conditional
sup-deviation over the kernel support.  ``h_tensor`` iterates ``h_upper``
coordinatewise; ``h_product_bound`` is the Ising-only tensor of iterated
spin-flip differences, which dominates ``h_tensor`` entrywise for d <= 2 only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spaces import IndexFamily, TabulatedMeasure

MEMORY_BUDGET = 2 * 1024**3


class MemoryBudgetExceeded(MemoryError):
    pass


@dataclass(frozen=True, eq=False)
class DifferenceTensor:
    """Per-state array of difference magnitudes indexed by ``family^order``.

    ``values`` has shape ``(N,) + (len(family),) * order``.
    """

    order: int
    family: IndexFamily
    values: np.ndarray

    def norm(self) -> np.ndarray:
        """Per-state Euclidean norm over all multi-indices."""
        flat = self.values.reshape(self.values.shape[0], -1)
        return np.sqrt(np.einsum("ij,ij->i", flat, flat))

    def entry(self, *index: int) -> np.ndarray:
        return self.values[(slice(None),) + tuple(index)]


def _family(mu: TabulatedMeasure, family: IndexFamily | None) -> IndexFamily:
    family = IndexFamily.singletons(mu.n) if family is None else family
    family.check_sites(mu.n)
    return family


def d_lower_sq(f, mu: TabulatedMeasure, I) -> np.ndarray:
    """``(d_I f)^2`` per state, i.e. half the kernel average of squared jumps."""
    k = mu.kernel(I)
    f = np.asarray(f, dtype=float)
    diff = f[k.rows] - f[k.cols]
    return 0.5 * np.bincount(k.rows, weights=k.vals * diff * diff, minlength=f.shape[0])


def d_lower(f, mu: TabulatedMeasure, family: IndexFamily | None = None) -> DifferenceTensor:
    family = _family(mu, family)
    cols = [np.sqrt(d_lower_sq(f, mu, I)) for I in family]
    return DifferenceTensor(1, family, np.stack(cols, axis=1))


def h_single(values, mu: TabulatedMeasure, I) -> np.ndarray:
    """``h_I`` applied to ``values`` (extra trailing axes are handled columnwise)."""
    return mu.kernel(I).group_range(values) / math.sqrt(2.0)


def h_upper(f, mu: TabulatedMeasure, family: IndexFamily | None = None) -> DifferenceTensor:
    family = _family(mu, family)
    f = np.asarray(f, dtype=float)
    return DifferenceTensor(1, family, np.stack([h_single(f, mu, I) for I in family], axis=1))


def _guard(n_states: int, k: int, d: int, budget: int) -> None:
    need = 8 * n_states * k**d
    if need > budget:
        raise MemoryBudgetExceeded(f"order-{d} tensor needs {need} bytes, budget is {budget}")


def h_tensor(f, mu: TabulatedMeasure, family: IndexFamily | None = None, d: int = 1,
             budget: int = MEMORY_BUDGET) -> DifferenceTensor:
    """Iterated tensor with entries ``h_{I1}(h_{I2 ... Id} f)``."""
    if d < 1:
        raise ValueError("order must be >= 1")
    family = _family(mu, family)
    k = len(family)
    N = mu.space.size
    _guard(N, k, d, budget)
    cur = np.asarray(f, dtype=float).reshape(N, 1)
    for _ in range(d):
        cur = np.stack([h_single(cur, mu, I) for I in family], axis=1).reshape(N, -1)
    return DifferenceTensor(d, family, cur.reshape((N,) + (k,) * d))


def h_product_bound(f, mu: TabulatedMeasure, d: int, budget: int = MEMORY_BUDGET) -> DifferenceTensor:
    """Entries ``2^{-d/2} |prod_j (Id - T_{i_j}) f|`` on distinct ordered tuples.

    Spin spaces with single-site family only; tuples with a repeated site are 0.
    For d <= 2 each entry bounds the matching ``h_tensor`` entry (reverse
    triangle inequality); from d = 3 on the iterated absolute values can
    exceed it, so it is not a bound there.
    """
    space = mu.space
    if space.kind != "spins":
        raise TypeError("the product bound is defined for spin spaces")
    n, N = space.n, space.size
    _guard(N, n, d, budget)
    f = np.asarray(f, dtype=float)
    out = np.zeros((N,) + (n,) * d)
    flips = [space.flip_index(i) for i in range(n)]
    scale = 2.0 ** (-d / 2.0)

    def walk(prefix: tuple[int, ...], g: np.ndarray):
        if len(prefix) == d:
            out[(slice(None),) + prefix] = scale * np.abs(g)
            return
        for i in range(n):
            if i in prefix:
                continue
            walk(prefix + (i,), g - g[flips[i]])

    walk((), f)
    return DifferenceTensor(d, IndexFamily.singletons(n), out)


def product_bound_unordered_norm(f, mu: TabulatedMeasure, d: int) -> np.ndarray:
    """``(2^{-d} sum_{|I|=d} (prod_{i in I}(Id - T_i) f)^2)^{1/2}`` over unordered sets."""
    T = h_product_bound(f, mu, d)
    return T.norm() / math.sqrt(math.factorial(d))


def tensor_norm(T: DifferenceTensor, mu: TabulatedMeasure | None = None, p: float | None = None):
    """Per-state Euclidean norm, aggregated in ``L^p(mu)`` when ``p`` is given."""
    per_state = T.norm()
    if p is None:
        return per_state
    if mu is None:
        raise ValueError("aggregation needs a measure")
    from .functionals import lp_norm

    return lp_norm(mu, per_state, p)


def ising_d_lower_sq(model, f) -> np.ndarray:
    """``|df|^2(s) = 0.5 sum_i (f(s) - f(T_i s))^2 q_i(-s_i | sbar_i)`` on all states."""
    from .ising import conditional_plus_all
    from .spaces import spins_from_bits

    n = model.n
    N = 1 << n
    f = np.asarray(f, dtype=float)
    spins = spins_from_bits(np.arange(N), n)
    p_plus = conditional_plus_all(model, spins)
    p_flip = np.where(spins > 0, 1.0 - p_plus, p_plus)
    out = np.zeros(N)
    for i in range(n):
        flipped = np.arange(N) ^ (1 << i)
        out += (f - f[flipped]) ** 2 * p_flip[:, i]
    return 0.5 * out


def ising_h_upper_sq(n: int, f) -> np.ndarray:
    """``|hf|^2(s) = 0.5 sum_i (f(s) - f(T_i s))^2``."""
    N = 1 << n
    f = np.asarray(f, dtype=float)
    out = np.zeros(N)
    for i in range(n):
        out += (f - f[np.arange(N) ^ (1 << i)]) ** 2
    return 0.5 * out


def lemma_chain_violation(f, mu: TabulatedMeasure, d: int, family: IndexFamily | None = None) -> float:
    """Largest pointwise excess of ``|h |h^(d) f||`` over ``|h^(d+1) f|`` (<= 0 when the chain holds)."""
    family = _family(mu, family)
    g = h_tensor(f, mu, family, d).norm()
    lhs = h_upper(g, mu, family).norm()
    rhs = h_tensor(f, mu, family, d + 1).norm()
    return float((lhs - rhs).max())
