"""Ising Gibbs measures, local specifications and the LSI certificate chain."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .spaces import SPIN_LIMIT, LimitExceeded, TabulatedMeasure, spin_space, spins_from_bits

CHUNK = 1 << 16


class DobrushinViolated(ValueError):
    """The coupling matrix has operator norm >= 1; no tensorization constant."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, last):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True, eq=False)
class IsingModel:
    """Pairwise Ising model with energy ``0.5 <s, J s> + <h, s>``."""

    J: np.ndarray
    h: np.ndarray
    limit: int = SPIN_LIMIT

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        h = np.array(self.h, dtype=float).reshape(-1)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be square")
        if h.shape[0] != J.shape[0]:
            raise ValueError("h and J disagree on n")
        if not np.allclose(J, J.T, atol=1e-14, rtol=0):
            raise ValueError("J must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValueError("J must have zero diagonal")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @classmethod
    def curie_weiss(cls, n: int, beta0: float, h: float = 0.0) -> "IsingModel":
        J = np.full((n, n), beta0 / n)
        np.fill_diagonal(J, 0.0)
        return cls(J, np.full(n, float(h)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, j_norm: float = 0.9, h_max: float = 1.0) -> "IsingModel":
        """Random symmetric couplings rescaled to ``||J||_{1->1} = j_norm``."""
        W = rng.normal(size=(n, n))
        W = np.triu(W, 1)
        W = W + W.T
        rowsum = np.abs(W).sum(axis=1).max()
        J = W * (j_norm / rowsum) if rowsum > 0 else W
        h = rng.uniform(-h_max, h_max, size=n)
        return cls(J, h)

    def energy(self, spins) -> np.ndarray:
        s = np.asarray(spins, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", s, self.J, s) + s @ self.h

    def _check_limit(self):
        if self.n > self.limit:
            raise LimitExceeded("spins n", self.n, self.limit)

    def log_weights(self) -> np.ndarray:
        self._check_limit()
        N = 1 << self.n
        out = np.empty(N)
        for start in range(0, N, CHUNK):
            bits = np.arange(start, min(N, start + CHUNK), dtype=np.int64)
            out[start : start + bits.size] = self.energy(spins_from_bits(bits, self.n))
        return out

    @cached_property
    def log_z(self) -> float:
        return float(logsumexp(self.log_weights()))

    def local_fields(self, spins) -> np.ndarray:
        """``sum_j J_ij s_j + h_i`` for every site (last axis)."""
        return np.asarray(spins, dtype=float) @ self.J + self.h


def gibbs_measure(model: IsingModel) -> TabulatedMeasure:
    space = spin_space(model.n, limit=model.limit)
    log_w = model.log_weights()
    log_p = log_w - model.log_z
    probs = np.exp(log_p)
    probs /= probs.sum()
    return TabulatedMeasure(space, probs, log_p)


def conditional_plus(model: IsingModel, i: int, sigma) -> float:
    """Probability that spin ``i`` is +1 given the others (0-based ``i``)."""
    s = np.asarray(sigma, dtype=float)
    field = float(model.J[i] @ s) + model.h[i]
    return 0.5 * (1.0 + math.tanh(field))


def conditional_plus_all(model: IsingModel, spins) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(model.local_fields(spins)))


def j_norm_1to1(J) -> float:
    J = np.asarray(J, dtype=float)
    if J.size == 0:
        return 0.0
    return float(np.abs(J).sum(axis=1).max())


def _state_chunks(model: IsingModel):
    model._check_limit()
    N = 1 << model.n
    for start in range(0, N, CHUNK):
        bits = np.arange(start, min(N, start + CHUNK), dtype=np.int64)
        yield spins_from_bits(bits, model.n).astype(float)


def beta_min(model: IsingModel, mode: str | None = None) -> float:
    """Smallest conditional probability ``q_i(s_i | sbar_i)`` over sites and states.

    ``mode='exact'`` enumerates all configurations; ``mode='bound'`` returns
    ``0.5 * (1 - tanh(||J||_{1->1} + ||h||_inf))``.  By default the exact value
    is used whenever the model is small enough to enumerate.
    """
    if mode is None:
        mode = "exact" if model.n <= model.limit else "bound"
    if mode == "bound":
        return 0.5 * (1.0 - math.tanh(j_norm_1to1(model.J) + float(np.abs(model.h).max(initial=0.0))))
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    worst = 0.5
    for s in _state_chunks(model):
        p = conditional_plus_all(model, s)
        worst = min(worst, float(np.minimum(p, 1.0 - p).min()))
    return worst


def coupling_matrix(model: IsingModel, mode: str = "exact") -> np.ndarray:
    """Worst-case TV sensitivity of the site-``i`` conditional to flipping site ``k``.

    ``bound`` mode returns ``|J|``; ``exact`` enumerates every configuration.
    """
    n = model.n
    if mode == "bound":
        A = np.abs(model.J).copy()
        np.fill_diagonal(A, 0.0)
        return A
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    A = np.zeros((n, n))
    for s in _state_chunks(model):
        F = model.local_fields(s)
        tF = np.tanh(F)
        for k in range(n):
            # flipping s_k shifts the field at i by -2 J_ik s_k
            shifted = np.tanh(F - 2.0 * s[:, k : k + 1] * model.J[k][None, :])
            A[:, k] = np.maximum(A[:, k], 0.5 * np.abs(tF - shifted).max(axis=0))
    np.fill_diagonal(A, 0.0)
    return A


def opnorm_2to2(A, rtol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Spectral norm by power iteration on ``A^T A`` from the all-ones vector."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.any(A):
        return 0.0
    B = A.T @ A
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    lam = 0.0
    for _ in range(max_iter):
        w = B @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / norm
        if abs(new - lam) <= rtol * abs(new):
            return math.sqrt(float(v @ B @ v))
        lam = new
    raise ConvergenceError("power iteration did not converge", v)


def entropy_ratio_two_point(p: float, t: float) -> float:
    """``Ent_q(f^2) / (2 E_q |df|^2)`` for ``q = (p, 1-p)`` and ``f = (1, t)``.

    For one site, ``E_q |df|^2`` equals ``Var_q(f) = p(1-p)(1-t)^2``.  The
    relative deviations of ``f^2`` from its mean are formed from ``1 - t^2``
    directly, which keeps the ratio accurate right up to ``t = 1``.
    """
    from .functionals import _phi  # local: avoid import cycle

    var = p * (1.0 - p) * (1.0 - t) ** 2
    if var == 0.0:
        return 1.0
    mean = p + (1.0 - p) * t * t
    gap = (1.0 - t) * (1.0 + t)
    u = np.array([(1.0 - p) * gap / mean, -p * gap / mean])
    ent = mean * float(np.dot([p, 1.0 - p], _phi(u)))
    return ent / (2.0 * var)


def two_point_lsi_constant(p: float, t_max: float = 50.0, grid: int = 2001, tol: float = 1e-12) -> float:
    """Best LSI constant of the two-point measure ``(p, 1-p)`` by 1-D search.

    Scans ``f = (1, t)`` on a grid over ``[-t_max, t_max]`` and refines the best
    bracket by golden-section search.  ``t = 1`` is a removable singularity
    whose limit (the Poincare value 1) is included.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    # the constant is symmetric in p <-> 1-p; the smaller atom keeps the optimizer inside the grid
    p = min(p, 1.0 - p)
    ts = np.linspace(-t_max, t_max, grid)
    vals = np.array([entropy_ratio_two_point(p, float(t)) for t in ts])
    k = int(np.argmax(vals))
    a = ts[max(k - 1, 0)]
    b = ts[min(k + 1, grid - 1)]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc = entropy_ratio_two_point(p, c)
    fd = entropy_ratio_two_point(p, d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = entropy_ratio_two_point(p, c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = entropy_ratio_two_point(p, d)
    return float(max(vals[k], fc, fd, 1.0))


@dataclass(frozen=True)
class CertificateReport:
    alpha: float
    alpha_tilde: float
    beta_min: float
    a_norm: float
    c_at: float
    rho_two_point: float
    sigma2_cert: float
    c_tail: float

    def rows(self) -> list[tuple[str, float]]:
        return [(name, getattr(self, name)) for name in self.__dataclass_fields__]


def tail_constant(sigma2: float, d: int = 2) -> float:
    """Constant ``c`` in ``2 exp(-t^(2/d) / (c n ||a||_inf^(2/d)))`` for d <= 2, h = 0.

    Normalizes the chaos so that the higher-order concentration conditions
    hold with LSI constant ``sigma2`` and uses the exponent ``1/(12 sigma2 e)``.
    """
    if d == 1:
        return 24.0 * math.e * sigma2
    if d == 2:
        return 24.0 * math.e * sigma2 * max(1.0, math.sqrt(sigma2))
    raise ValueError("certified tail constants are available for d in {1, 2}")


def lsi_certificate(model: IsingModel, mode: str | None = None) -> CertificateReport:
    """Certified LSI constant for the Gibbs sampler difference operator.

    ``sigma2 = 2 C rho / beta`` with ``C = (1 - ||A||_{2->2})^{-2}`` from the
    approximate tensorization of entropy and ``rho`` the worst two-point
    constant at the smallest conditional probability.
    """
    if mode is None:
        mode = "exact" if model.n <= min(model.limit, 16) else "bound"
    A = coupling_matrix(model, mode)
    a_norm = opnorm_2to2(A)
    if a_norm >= 1.0:
        raise DobrushinViolated(f"||A||_2->2 = {a_norm:.6g} >= 1")
    b = beta_min(model, mode)
    c_at = (1.0 - a_norm) ** -2
    rho = two_point_lsi_constant(b)
    sigma2 = 2.0 * c_at * rho / b
    return CertificateReport(
        alpha=1.0 - j_norm_1to1(model.J),
        alpha_tilde=float(np.abs(model.h).max(initial=0.0)),
        beta_min=b,
        a_norm=a_norm,
        c_at=c_at,
        rho_two_point=rho,
        sigma2_cert=sigma2,
        c_tail=tail_constant(sigma2, 2),
    )
