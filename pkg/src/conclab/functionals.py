"""Entropy, variance and moment functionals; Poincare and log-Sobolev checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .difference import d_lower_sq, h_single, h_tensor
from .spaces import IndexFamily, TabulatedMeasure

P_MAX = 64.0


class ConditionViolated(ValueError):
    def __init__(self, k: int, norm: float, threshold: float):
        self.k = k
        super().__init__(f"condition at order k={k} fails: {norm:.6g} > {threshold:.6g}")


class DegenerateForm(ValueError):
    pass


def _phi(u: np.ndarray) -> np.ndarray:
    """``(1+u) log(1+u) - u`` without cancellation near ``u = 0``."""
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-3
    s = u[small]
    # sum_{k>=2} (-1)^k u^k / (k (k-1))
    out[small] = s * s * (0.5 + s * (-1.0 / 6 + s * (1.0 / 12 + s * (-1.0 / 20 + s * (1.0 / 30)))))
    big = ~small
    ub = u[big]
    with np.errstate(divide="ignore", invalid="ignore"):
        out[big] = np.where(ub == -1.0, 1.0, (1.0 + ub) * np.log1p(ub) - ub)
    return out


def entropy_from_values(probs: np.ndarray, g: np.ndarray) -> float:
    """``E g log g - E g log E g`` for weights ``probs`` (zero-weight entries ignored)."""
    probs = np.asarray(probs, dtype=float)
    g = np.asarray(g, dtype=float)
    on = probs > 0
    p, g = probs[on], g[on]
    if np.any(g < 0):
        raise ValueError("entropy needs a nonnegative function")
    mean = float(np.dot(p, g))
    if mean <= 0.0:
        return 0.0
    u = g / mean - 1.0
    return max(mean * float(np.dot(p, _phi(u))), 0.0)


def entropy(mu: TabulatedMeasure, g) -> float:
    return entropy_from_values(mu.probs, g)


def variance(mu: TabulatedMeasure, f) -> float:
    f = np.asarray(f, dtype=float)
    m = mu.expect(f)
    return max(mu.expect((f - m) ** 2), 0.0)


def lp_norm(mu: TabulatedMeasure, f, p: float) -> float:
    """``(E |f|^p)^{1/p}``; ``p = inf`` is the max over the support."""
    a = np.abs(np.asarray(f, dtype=float))[mu.probs > 0]
    w = mu.probs[mu.probs > 0]
    top = float(a.max(initial=0.0))
    if math.isinf(p):
        return top
    if p <= 0:
        raise ValueError("p must be positive")
    if top == 0.0:
        return 0.0
    # scaled by the maximum, which keeps large p in range
    return top * float(np.dot(w, (a / top) ** p)) ** (1.0 / p)


def conditional_entropy_sum(mu: TabulatedMeasure, family: IndexFamily, g) -> float:
    """``sum_I int Ent_{m_{xbar_I}}(g(xbar_I, .)) dmu_bar``."""
    g = np.asarray(g, dtype=float)
    total = 0.0
    for I in family:
        k = mu.kernel(I)
        mean = np.bincount(k.context_of, weights=k.row_prob * g, minlength=k.n_contexts)
        u = np.zeros_like(g)
        pos = mean[k.context_of] > 0
        u[pos] = g[pos] / mean[k.context_of][pos] - 1.0
        inner = np.bincount(k.context_of, weights=k.row_prob * _phi(u), minlength=k.n_contexts)
        total += float(np.dot(k.context_mass, mean * inner))
    return total


def dirichlet_form(mu: TabulatedMeasure, family: IndexFamily, f) -> float:
    """``int |df|^2 dmu``."""
    return sum(mu.expect(d_lower_sq(f, mu, I)) for I in family)


def h_energy(mu: TabulatedMeasure, family: IndexFamily, f) -> float:
    """``int |hf|^2 dmu``."""
    f = np.asarray(f, dtype=float)
    return sum(mu.expect(h_single(f, mu, I) ** 2) for I in family)


def averaged_kernel(mu: TabulatedMeasure, family: IndexFamily) -> sparse.csr_matrix:
    """``m_x = |family|^{-1} sum_I m_{xbar_I}`` as a sparse matrix."""
    M = sum(mu.kernel(I).matrix for I in family)
    return (M / len(family)).tocsr()


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    kappa: float
    residual: float


def laplacian_identity_check(mu: TabulatedMeasure, family: IndexFamily, f) -> IdentityCheck:
    """Compare ``int |df|^2`` with ``kappa <f, -Lf>``, ``kappa = |family|``.

    ``L f(x) = int (f(y) - f(x)) dm_x(y)`` with the averaged kernel.
    """
    f = np.asarray(f, dtype=float)
    lhs = dirichlet_form(mu, family, f)
    M = averaged_kernel(mu, family)
    Lf = M @ f - f
    rhs = -float(np.dot(mu.probs, f * Lf))
    kappa = float(len(family))
    return IdentityCheck(lhs, rhs, kappa, abs(lhs - kappa * rhs))


def positive_part_representation(mu: TabulatedMeasure, family: IndexFamily, f) -> float:
    """``sum_I iint (f(x) - f(xbar_I, z_I))_+^2 dm(z) dmu(x)``."""
    f = np.asarray(f, dtype=float)
    total = 0.0
    for I in family:
        k = mu.kernel(I)
        jump = np.maximum(f[k.rows] - f[k.cols], 0.0)
        total += float(np.dot(mu.probs[k.rows] * k.vals, jump * jump))
    return total


def dirichlet_matrix(mu: TabulatedMeasure, family: IndexFamily) -> np.ndarray:
    """Dense ``D`` with ``f^T D f = int |df|^2 dmu``."""
    N = mu.space.size
    D = np.zeros((N, N))
    for I in family:
        k = mu.kernel(I)
        w = mu.probs[k.rows] * k.vals
        np.add.at(D, (k.rows, k.rows), w)
        np.add.at(D, (k.rows, k.cols), -w)
    return 0.5 * (D + D.T)


@dataclass(frozen=True)
class PoincareResult:
    constant: float
    eigenfunction: np.ndarray


def pi_constant_exact(mu: TabulatedMeasure, family: IndexFamily, tol: float = 1e-10) -> PoincareResult:
    """Smallest ``s2`` with ``Var(f) <= s2 int |df|^2`` for all ``f``.

    Works in ``sqrt(mu)``-weighted coordinates on the support, where the
    answer is the reciprocal of the second-smallest eigenvalue of the
    symmetrized Dirichlet matrix.
    """
    supp = mu.support
    D = dirichlet_matrix(mu, family)[np.ix_(supp, supp)]
    r = np.sqrt(mu.probs[supp])
    S = D / np.outer(r, r)
    S = 0.5 * (S + S.T)
    evals, evecs = np.linalg.eigh(S)
    if supp.size < 2:
        raise DegenerateForm("measure is a point mass")
    lam = evals[1]
    if lam <= tol * max(1.0, evals[-1]):
        raise DegenerateForm("Dirichlet form is not positive definite on mean-zero functions")
    f = np.zeros(mu.space.size)
    f[supp] = evecs[:, 1] / r
    return PoincareResult(1.0 / lam, f)


def lsi_ratio(mu: TabulatedMeasure, family: IndexFamily, f, gamma: str = "d") -> float:
    """``Ent(f^2) / (2 E |Gamma f|^2)``; ``nan`` when the denominator vanishes.

    Functions whose relative oscillation is below about 1e-6 are rejected too:
    there the rounding error of ``f^2`` swamps the entropy and the ratio is noise.
    """
    f = np.asarray(f, dtype=float)
    denom = dirichlet_form(mu, family, f) if gamma == "d" else h_energy(mu, family, f)
    scale = mu.expect(f * f)
    if denom <= 1e-12 * max(scale, 1e-300) or denom == 0.0:
        return math.nan
    return entropy(mu, f * f) / (2.0 * denom)


@dataclass(frozen=True)
class SearchResult:
    value: float
    f: np.ndarray = field(repr=False)


def lsi_ratio_search(mu: TabulatedMeasure, family: IndexFamily, gamma: str = "d", *,
                     restarts: int = 8, steps: int = 1500, seed: int = 0,
                     seeds: list | None = None) -> SearchResult:
    """Lower bound on the LSI constant from a randomized hill climb.

    Starting points are random functions plus any ``seeds`` supplied; each
    run perturbs one coordinate at a time and keeps improvements, adapting the
    step size.  The reported value is the exact ratio at the returned ``f``.
    """
    rng = np.random.default_rng(seed)
    supp = mu.support
    N = mu.space.size
    starts = [np.asarray(s, dtype=float) for s in (seeds or [])]
    for _ in range(restarts):
        f0 = np.zeros(N)
        kind = rng.integers(3)
        if kind == 0:
            f0[supp] = rng.normal(size=supp.size)
        elif kind == 1:
            f0[supp] = 1.0 + 0.3 * rng.normal(size=supp.size)
        else:
            f0[supp] = rng.exponential(size=supp.size) * (rng.random(supp.size) < 0.3)
        starts.append(f0)

    best_val, best_f = -math.inf, None
    for f in starts:
        f = f.copy()
        val = lsi_ratio(mu, family, f, gamma)
        if math.isnan(val):
            continue
        if val > best_val:
            best_val, best_f = val, f.copy()
        scale = max(float(np.sqrt(mu.expect(f * f))), 1e-8)
        step = 0.3 * scale
        for _ in range(steps):
            j = supp[rng.integers(supp.size)]
            old = f[j]
            f[j] = old + step * rng.normal()
            new = lsi_ratio(mu, family, f, gamma)
            if not math.isnan(new) and new > val:
                val = new
                step *= 1.3
            else:
                f[j] = old
                step *= 0.9
                step = max(step, 1e-10 * scale)
        if val > best_val:
            best_val, best_f = val, f.copy()
    if best_f is None:
        raise ValueError("no admissible (non-constant) starting function")
    return SearchResult(lsi_ratio(mu, family, best_f, gamma), best_f)


def pi_seeds(mu: TabulatedMeasure, family: IndexFamily, amplitudes=(1e-3, 1e-4, 1e-5)) -> list[np.ndarray]:
    """Starting points ``1 +- eps v`` around the Poincare-extremal eigenfunction ``v``."""
    v = pi_constant_exact(mu, family).eigenfunction
    v = v / max(np.abs(v).max(), 1e-300)
    return [1.0 + s * a * v for a in amplitudes for s in (1.0, -1.0)]


@dataclass(frozen=True)
class MomentRow:
    p: float
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def moment_inequality_check(mu: TabulatedMeasure, family: IndexFamily, sigma2: float, f,
                            p_grid=(2, 2.5, 3, 4, 8, 16, 32), gamma: str = "d") -> list[MomentRow]:
    """``||f||_p^2 - ||f||_2^2`` against ``2 sigma2 (p - 2) ||Gamma f||_p^2`` per ``p``."""
    f = np.asarray(f, dtype=float)
    if gamma == "d":
        grad = np.sqrt(sum(d_lower_sq(f, mu, I) for I in family))
    elif gamma == "h":
        grad = np.sqrt(sum(h_single(f, mu, I) ** 2 for I in family))
    else:
        raise ValueError("gamma must be 'd' or 'h'")
    n2 = lp_norm(mu, f, 2.0) ** 2
    rows = []
    for p in p_grid:
        p = float(p)
        if not 2.0 <= p <= P_MAX:
            raise ValueError(f"p = {p} outside [2, {P_MAX}]")
        lhs = lp_norm(mu, f, p) ** 2 - n2
        rhs = 2.0 * sigma2 * (p - 2.0) * lp_norm(mu, grad, p) ** 2
        rows.append(MomentRow(p, lhs, rhs))
    return rows


def lp_norm_sq_derivative(mu: TabulatedMeasure, f, p: float) -> float:
    """``d/dp ||f||_p^2 = (2/p^2) ||f||_p^{2-p} Ent(|f|^p)``."""
    a = np.abs(np.asarray(f, dtype=float))
    norm = lp_norm(mu, a, p)
    return 2.0 / p**2 * norm ** (2.0 - p) * entropy(mu, a**p)


def exp_moment_constant(gamma: float) -> float:
    """``c = 1/(2 gamma e)``: if ``||f||_k <= gamma k`` for all k then ``E e^{c|f|} <= 2``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return 1.0 / (2.0 * gamma * math.e)


@dataclass(frozen=True)
class HigherOrderCertificate:
    d: int
    conditions: list  # (k, norm, threshold)
    c: float
    moment: float | None

    @property
    def moment_ok(self) -> bool:
        return self.moment is None or self.moment <= 2.0


def higher_order_certificate(mu: TabulatedMeasure, sigma2: float, f, d: int,
                             family: IndexFamily | None = None, exact: bool = True,
                             slack: float = 1e-12) -> HigherOrderCertificate:
    """Verify the bounded-differences conditions of order ``d`` and the exponential moment.

    Requires ``||h^(k) f||_2 <= min(1, sigma^(d-k))`` for ``k < d`` and
    ``||h^(d) f||_inf <= 1`` (iterated tensors); then ``c = 1/(12 sigma2 e)``.
    """
    family = IndexFamily.singletons(mu.n) if family is None else family
    f = np.asarray(f, dtype=float)
    sigma = math.sqrt(sigma2)
    conditions = []
    for k in range(1, d + 1):
        per_state = h_tensor(f, mu, family, k).norm()
        if k < d:
            norm = lp_norm(mu, per_state, 2.0)
            threshold = min(1.0, sigma ** (d - k))
        else:
            norm = lp_norm(mu, per_state, math.inf)
            threshold = 1.0
        conditions.append((k, norm, threshold))
        if norm > threshold + slack:
            raise ConditionViolated(k, norm, threshold)
    c = exp_moment_constant(6.0 * sigma2)
    moment = None
    if exact:
        centered = np.abs(f - mu.expect(f))
        moment = mu.expect(np.exp(c * centered ** (2.0 / d)))
    return HigherOrderCertificate(d, conditions, c, moment)


def mlsi_check(mu: TabulatedMeasure, f, C: float, beta: float,
               family: IndexFamily | None = None) -> tuple[float, float]:
    """``Ent(e^f)`` against ``(2C/beta) int |df|^2 e^f``; returns ``(lhs, rhs)``."""
    family = IndexFamily.singletons(mu.n) if family is None else family
    f = np.asarray(f, dtype=float)
    shift = float(f[mu.probs > 0].max(initial=0.0))
    g = np.exp(f - shift)
    lhs = entropy(mu, g)
    grad2 = sum(d_lower_sq(f, mu, I) for I in family)
    rhs = 2.0 * C / beta * mu.expect(grad2 * g)
    scale = math.exp(shift)
    return lhs * scale, rhs * scale
