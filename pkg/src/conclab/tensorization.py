"""Distances between measures on product spaces and approximate tensorization of entropy.

The W2-type distance ``min_pi (sum_i pi(x_i != y_i)^2)^{1/2}`` is a convex
problem over the transportation polytope.  It is solved in the image space
``s(pi) = (pi(x_i != y_i))_i``: the image of the polytope is again a polytope
whose vertices come from transport LPs, and the smallest-norm point of it is
found with Wolfe's algorithm.  The stopping rule is the duality bound
``min ||s|| >= <x, v> / ||x||`` where ``v`` minimizes ``<x, .>``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .functionals import conditional_entropy_sum, entropy
from .ising import DobrushinViolated, opnorm_2to2
from .spaces import IndexFamily, StateSpace, TabulatedMeasure, product_space

W2_STATE_LIMIT = 4096


class AbsoluteContinuityError(ValueError):
    pass


class FullSupportError(ValueError):
    pass


class TransportError(RuntimeError):
    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (last gap {gap:.3g})")
        self.gap = gap


def _same_space(mu: TabulatedMeasure, nu: TabulatedMeasure) -> None:
    if mu.space is nu.space:
        return
    if mu.space.states.shape != nu.space.states.shape or not np.array_equal(mu.space.states, nu.space.states):
        raise ValueError("measures live on different state codecs")


def tv(mu: TabulatedMeasure, nu: TabulatedMeasure) -> float:
    _same_space(mu, nu)
    return min(1.0, 0.5 * float(np.abs(mu.probs - nu.probs).sum()))


def coordinate_tvs(mu: TabulatedMeasure, nu: TabulatedMeasure) -> np.ndarray:
    """``d_TV(mu_i, nu_i)`` for every coordinate ``i``."""
    _same_space(mu, nu)
    out = np.empty(mu.n)
    for i in range(mu.n):
        _, a = mu.coordinate_marginal(i)
        _, b = nu.coordinate_marginal(i)
        out[i] = 0.5 * np.abs(a - b).sum()
    return out


@dataclass(frozen=True, eq=False)
class TransportPlan:
    joint: np.ndarray

    @property
    def row_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def disagreement(self, states: np.ndarray) -> np.ndarray:
        """``pi(x_i != y_i)`` per coordinate."""
        mism = states[:, None, :] != states[None, :, :]
        return np.einsum("xy,xyi->i", self.joint, mism)


@dataclass(frozen=True)
class W2Result:
    value: float
    lower: float
    plan: TransportPlan
    iterations: int


class _TransportOracle:
    """Exact linear minimization over couplings of ``p`` and ``q``."""

    def __init__(self, states: np.ndarray, p: np.ndarray, q: np.ndarray):
        self.rows = np.flatnonzero(p > 0)
        self.cols = np.flatnonzero(q > 0)
        self.p = p[self.rows]
        self.q = q[self.cols]
        a, b = self.rows.size, self.cols.size
        self.mism = (states[self.rows][:, None, :] != states[self.cols][None, :, :]).reshape(a * b, -1).astype(float)
        ri = np.repeat(np.arange(a), b)
        ci = np.tile(np.arange(b), a)
        k = np.arange(a * b)
        self.A = sparse.vstack([
            sparse.csr_matrix((np.ones(a * b), (ri, k)), shape=(a, a * b)),
            sparse.csr_matrix((np.ones(a * b), (ci, k)), shape=(b, a * b)),
        ]).tocsr()
        self.b = np.concatenate([self.p, self.q])
        self.shape = (a, b)

    def solve(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cost = self.mism @ g
        res = linprog(cost, A_eq=self.A, b_eq=self.b, bounds=(0, None), method="highs")
        if res.status != 0:
            raise TransportError(f"transport LP failed: {res.message}", math.nan)
        x = np.maximum(res.x, 0.0)
        # re-solve on the basis so the marginals hold to rounding error
        supp = np.flatnonzero(x > 1e-13)
        sub = self.A[:, supp].toarray()
        y, *_ = np.linalg.lstsq(sub, self.b, rcond=None)
        if np.all(y >= -1e-14) and np.abs(sub @ y - self.b).max() < 1e-14:
            x = np.zeros_like(x)
            x[supp] = np.maximum(y, 0.0)
        return x, self.mism.T @ x

    def joint(self, x: np.ndarray, N: int) -> np.ndarray:
        out = np.zeros((N, N))
        out[np.ix_(self.rows, self.cols)] = x.reshape(self.shape)
        return out


def _affine_minimizer(V: np.ndarray) -> np.ndarray:
    m = V.shape[1]
    K = np.zeros((m + 1, m + 1))
    K[:m, :m] = V.T @ V
    K[:m, m] = 1.0
    K[m, :m] = 1.0
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:m]


def w2_states(states: np.ndarray, p: np.ndarray, q: np.ndarray, tol: float = 1e-6,
              max_iter: int = 2000) -> W2Result:
    """W2-type distance between two probability vectors over ``states``."""
    N = states.shape[0]
    if N > W2_STATE_LIMIT:
        raise ValueError(f"W2 supports at most {W2_STATE_LIMIT} states per side")
    oracle = _TransportOracle(np.asarray(states), np.asarray(p, float), np.asarray(q, float))
    n = states.shape[1]
    plan, v = oracle.solve(np.ones(n))
    atoms = [v]
    plans = [plan]
    lam = np.array([1.0])
    x = v.copy()
    lower = 0.0
    for it in range(1, max_iter + 1):
        norm = float(np.linalg.norm(x))
        if norm <= tol:
            lower = 0.0
            break
        plan, v = oracle.solve(x)
        lower = max(0.0, float(x @ v) / norm)
        if norm - lower <= tol or float(x @ x - x @ v) <= 1e-15:
            break
        atoms.append(v)
        plans.append(plan)
        lam = np.append(lam, 0.0)
        while True:
            V = np.stack(atoms, axis=1)
            alpha = _affine_minimizer(V)
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            neg = alpha <= 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = float(np.clip(ratios.min(), 0.0, 1.0))
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > 1e-15
            if keep.all():
                keep[int(np.argmin(lam))] = False
            atoms = [a for a, k in zip(atoms, keep) if k]
            plans = [pl for pl, k in zip(plans, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = np.stack(atoms, axis=1) @ lam
    else:
        raise TransportError("W2 solver did not reach the tolerance", float(np.linalg.norm(x)) - lower)
    flat = sum(w * pl for w, pl in zip(lam, plans))
    joint = oracle.joint(flat, N)
    value = float(np.linalg.norm(x))
    return W2Result(value, lower, TransportPlan(joint), it)


def w2(mu: TabulatedMeasure, nu: TabulatedMeasure, tol: float = 1e-6) -> W2Result:
    _same_space(mu, nu)
    return w2_states(mu.space.states, mu.probs, nu.probs, tol)


@dataclass(frozen=True)
class Sandwich:
    """``lower <= w2 <= upper`` with ``upper = d_TV(mu, nu)`` as stated in the literature.

    That upper side is not valid in general: two point masses differing in
    ``k >= 2`` coordinates have ``w2 = sqrt(k)`` but ``d_TV = 1``.  The maximal
    coupling gives the valid bound ``upper_valid = sqrt(n) d_TV``.
    """

    lower: float
    w2: float
    upper: float
    upper_valid: float = math.inf

    def holds(self, tol: float = 1e-6) -> bool:
        return self.lower - tol <= self.w2 <= self.upper + tol

    def holds_valid(self, tol: float = 1e-6) -> bool:
        return self.lower - tol <= self.w2 <= self.upper_valid + tol


def sandwich_check(mu: TabulatedMeasure, nu: TabulatedMeasure, tol: float = 1e-6) -> Sandwich:
    lower = float(np.sqrt(np.sum(coordinate_tvs(mu, nu) ** 2)))
    d = tv(mu, nu)
    return Sandwich(lower, w2(mu, nu, tol).value, d, math.sqrt(mu.n) * d)


def _as_probs(m) -> np.ndarray:
    return m.probs if isinstance(m, TabulatedMeasure) else np.asarray(m, dtype=float)


def rel_entropy(p, q) -> float:
    """``H(p || q) = sum p log(p/q)`` over the support of ``p``."""
    p, q = _as_probs(p), _as_probs(q)
    on = p > 0
    if np.any(q[on] <= 0):
        raise AbsoluteContinuityError("p is not absolutely continuous with respect to q")
    return max(float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on])))), 0.0)


def beta_support(q) -> float:
    """Smallest positive atom of ``q``."""
    q = _as_probs(q)
    return float(q[q > 0].min())


@dataclass(frozen=True)
class LemmaCheck:
    h: float
    tv: float
    beta: float
    bound_linear: float
    bound_quadratic: float

    @property
    def bound(self) -> float:
        return min(self.bound_linear, self.bound_quadratic)

    @property
    def slack(self) -> float:
        return self.bound - self.h


def lemma_bound_check(p, q) -> LemmaCheck:
    """Relative entropy against ``min((2/beta) tv, (4/beta) tv^2)``."""
    pp, qq = _as_probs(p), _as_probs(q)
    h = rel_entropy(pp, qq)
    d = 0.5 * float(np.abs(pp - qq).sum())
    b = beta_support(qq)
    return LemmaCheck(h, d, b, 2.0 / b * d, 4.0 / b * d * d)


def entropy_chain_rule_check(p: TabulatedMeasure, q: TabulatedMeasure) -> float:
    """Residual of ``H(p||q) = (1/n) sum_i [H(p_i||q_i) + int H(pbar_i(.|y_i) || qbar_i(.|y_i)) dp_i]``."""
    _same_space(p, q)
    total = rel_entropy(p, q)
    on = p.probs > 0
    acc = 0.0
    for i in range(p.n):
        values, pi = p.coordinate_marginal(i)
        _, qi = q.coordinate_marginal(i)
        acc += rel_entropy(pi, qi)
        pos = np.searchsorted(values, p.space.states[:, i])
        # conditional of the other coordinates given x_i, integrated against p_i
        log_cond_p = p.log_probs[on] - np.log(pi[pos[on]])
        log_cond_q = q.log_probs[on] - np.log(qi[pos[on]])
        acc += float(np.sum(p.probs[on] * (log_cond_p - log_cond_q)))
    return abs(total - acc / p.n)


def require_full_support(q: TabulatedMeasure) -> None:
    if not q.space.is_full_product:
        raise FullSupportError("measure lives on a proper subset of the product space")
    if np.any(q.probs <= 0):
        raise FullSupportError("measure has zero-probability configurations")


def beta_conditional(q: TabulatedMeasure) -> float:
    """``min_i min_x q_i(x_i | xbar_i)``; needs full support."""
    require_full_support(q)
    return min(float(q.kernel((i,)).row_prob.min()) for i in range(q.n))


def _product_codes(space: StateSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mixed-radix code of every state, the code -> index table, and the strides."""
    dims = [len(a) for a in space.alphabets]
    pos = np.stack([np.searchsorted(np.array(a), space.states[:, k]) for k, a in enumerate(space.alphabets)], axis=1)
    codes = np.ravel_multi_index(pos.T, dims)
    lookup = np.empty(math.prod(dims), dtype=np.int64)
    lookup[codes] = np.arange(space.size)
    strides = np.array([math.prod(dims[k + 1:]) for k in range(len(dims))], dtype=np.int64)
    return pos, lookup, strides


def generic_coupling_matrix(q: TabulatedMeasure) -> np.ndarray:
    """``A_ik = max d_TV(q_i(.|xbar_i), q_i(.|zbar_i))`` over ``x, z`` differing only at ``k``."""
    require_full_support(q)
    space = q.space
    n = space.n
    pos, lookup, strides = _product_codes(space)
    codes = (pos * strides).sum(axis=1)
    A = np.zeros((n, n))
    for i in range(n):
        k_i = q.kernel((i,))
        size_i = len(space.alphabets[i])
        # conditional row of every state as a vector over the alphabet of i
        cond = np.zeros((k_i.n_contexts, size_i))
        cond[k_i.context_of, pos[:, i]] = k_i.row_prob
        rows = cond[k_i.context_of]
        for k in range(n):
            if k == i:
                continue
            for v in range(len(space.alphabets[k])):
                other = lookup[codes + (v - pos[:, k]) * strides[k]]
                d = 0.5 * np.abs(rows - rows[other]).sum(axis=1)
                A[i, k] = max(A[i, k], float(d.max()))
    return A


@dataclass(frozen=True)
class TensorizationCheck:
    lhs: float
    rhs: float
    c: float
    beta: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def tensorization_constant(q: TabulatedMeasure, A: np.ndarray | None = None) -> tuple[float, float]:
    """``(C, beta_conditional)`` with ``C = (1 - ||A||_{2->2})^{-2}``."""
    require_full_support(q)
    A = generic_coupling_matrix(q) if A is None else np.asarray(A, dtype=float)
    a = opnorm_2to2(A)
    if a >= 1.0:
        raise DobrushinViolated(f"||A||_2->2 = {a:.6g} >= 1")
    return (1.0 - a) ** -2, beta_conditional(q)


def approx_tensorization_check(q: TabulatedMeasure, f, A: np.ndarray | None = None,
                               constants: tuple[float, float] | None = None) -> TensorizationCheck:
    """``Ent_q(f)`` against ``(2C/beta) sum_i int Ent_{q_i(.|ybar_i)}(f) dqbar_i``."""
    C, beta = tensorization_constant(q, A) if constants is None else constants
    f = np.asarray(f, dtype=float)
    lhs = entropy(q, f)
    rhs = 2.0 * C / beta * conditional_entropy_sum(q, IndexFamily.singletons(q.n), f)
    return TensorizationCheck(lhs, rhs, C, beta)


def conditional_relative_entropy_sum(p: TabulatedMeasure, q: TabulatedMeasure) -> float:
    """``sum_i E_{pbar_i} H(p_i(.|ybar_i) || q_i(.|ybar_i))``."""
    _same_space(p, q)
    total = 0.0
    for i in range(p.n):
        kp, kq = p.kernel((i,)), q.kernel((i,))
        on = p.probs > 0
        if np.any(kq.row_prob[on] <= 0):
            raise AbsoluteContinuityError("conditional of p not dominated by that of q")
        total += float(np.sum(p.probs[on] * (np.log(kp.row_prob[on]) - np.log(kq.row_prob[on]))))
    return total


def w2_condition_check(p: TabulatedMeasure, q: TabulatedMeasure, C: float, tol: float = 1e-6,
                       max_n: int = 4) -> float:
    """Smallest slack of the conditional W2 hypothesis over all ``I`` and contexts.

    For every nonempty ``I`` and every context ``ybar_I`` of positive ``p`` mass
    compares ``W2^2(p_I(.|ybar_I), q_I(.|ybar_I))`` with
    ``C sum_{i in I} E_{p_I(.|ybar_I)} d_TV^2(p_i(.|ybar_i), q_i(.|ybar_i))``.
    Exponential in ``n``; refused above ``max_n``.
    """
    _same_space(p, q)
    require_full_support(q)
    n = p.n
    if n > max_n:
        raise ValueError(f"exhaustive condition check limited to n <= {max_n}")
    space = p.space
    # per-state squared TV between one-site conditionals of p and q
    tv2 = np.zeros((space.size, n))
    for i in range(n):
        kp, kq = p.kernel((i,)), q.kernel((i,))
        pos = np.searchsorted(np.array(space.alphabets[i]), space.states[:, i])
        size = len(space.alphabets[i])
        rp = np.zeros((kp.n_contexts, size))
        rq = np.zeros((kq.n_contexts, size))
        rp[kp.context_of, pos] = kp.row_prob
        rq[kq.context_of, pos] = kq.row_prob
        tv2[:, i] = (0.5 * np.abs(rp[kp.context_of] - rq[kq.context_of]).sum(axis=1)) ** 2
    worst = math.inf
    for size in range(1, n + 1):
        for I in itertools.combinations(range(n), size):
            kp, kq = p.kernel(I), q.kernel(I)
            for c in range(kp.n_contexts):
                if kp.context_mass[c] <= 0:
                    continue
                members = np.flatnonzero(kp.context_of == c)
                sub_states = space.states[members][:, list(I)]
                res = w2_states(sub_states, kp.row_prob[members], kq.row_prob[members], tol)
                rhs = C * float(np.dot(kp.row_prob[members], tv2[members][:, list(I)].sum(axis=1)))
                worst = min(worst, rhs - res.value**2)
    return worst


def permutation_pushforward(n: int) -> TabulatedMeasure:
    """Uniform permutations viewed as vectors in ``{1..n}^n`` (not of full support)."""
    from .spaces import perm_space

    return TabulatedMeasure.uniform(perm_space(n))


def embed_in_product(mu: TabulatedMeasure) -> TabulatedMeasure:
    """The same measure on the full product of its coordinate alphabets."""
    full = product_space(mu.space.alphabets)
    probs = np.zeros(full.size)
    for k in range(mu.space.size):
        probs[full.index(mu.space.states[k])] = mu.probs[k]
    return TabulatedMeasure.from_weights(full, probs)
