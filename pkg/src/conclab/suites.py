"""Verification suites run by ``conclab verify``; every check yields report rows."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import chaos, difference, dynamics, functionals, tensorization
from .ising import IsingModel, beta_min, coupling_matrix, gibbs_measure, j_norm_1to1, lsi_certificate, opnorm_2to2
from .spaces import IndexFamily, TabulatedMeasure, reconstruct_expectation, spin_space

REPORT_HEADER = "check,instance,p_or_d,lhs,rhs,slack,pass"


@dataclass(frozen=True)
class Row:
    check: str
    instance: str
    p_or_d: float | int | str
    lhs: float
    rhs: float
    slack: float
    ok: bool


def identity_row(check, instance, p_or_d, lhs, rhs, tol) -> Row:
    err = abs(lhs - rhs)
    return Row(check, instance, p_or_d, lhs, rhs, -err, bool(err <= tol))


def inequality_row(check, instance, p_or_d, lhs, rhs, tol) -> Row:
    """``lhs <= rhs`` up to ``tol``; slack is ``rhs - lhs``."""
    return Row(check, instance, p_or_d, lhs, rhs, rhs - lhs, bool(rhs - lhs >= -tol))


def random_measure(space, rng: np.random.Generator) -> TabulatedMeasure:
    return TabulatedMeasure.from_weights(space, rng.exponential(size=space.size))


def suite_identities(model: IsingModel, rng, instances: int, tol: float):
    mu = gibbs_measure(model)
    n = model.n
    fam = IndexFamily.singletons(n)
    for k in range(instances):
        f = rng.normal(size=mu.space.size)
        I = tuple(sorted(rng.choice(n, size=rng.integers(1, n + 1), replace=False)))
        yield identity_row("reconstruction", f"{k}", len(I), reconstruct_expectation(mu, I, f), mu.expect(f), tol)
        p = random_measure(mu.space, rng)
        res = tensorization.entropy_chain_rule_check(p, mu)
        yield identity_row("entropy_chain_rule", f"{k}", n, res, 0.0, tol)
        yield identity_row("representation", f"{k}", 1, functionals.dirichlet_form(mu, fam, f),
                           functionals.positive_part_representation(mu, fam, f), tol)
        lap = functionals.laplacian_identity_check(mu, fam, f)
        yield identity_row("laplacian_kappa_n", f"{k}", lap.kappa, lap.lhs, lap.kappa * lap.rhs, tol)


def suite_lemma_chain(model: IsingModel, rng, instances: int, tol: float):
    mu = gibbs_measure(model)
    dmax = 3 if model.n <= 6 else 2
    for k in range(instances):
        f = rng.normal(size=mu.space.size)
        for d in range(1, dmax + 1):
            v = difference.lemma_chain_violation(f, mu, d)
            yield inequality_row("lemma_chain", f"{k}", d, v, 0.0, tol)
        low = np.sqrt(difference.ising_d_lower_sq(model, f))
        up = np.sqrt(difference.ising_h_upper_sq(model.n, f))
        yield inequality_row("d_le_h", f"{k}", 1, float((low - up).max()), 0.0, tol)


def suite_moments(model: IsingModel, rng, instances: int, tol: float, sigma2: float):
    mu = gibbs_measure(model)
    fam = IndexFamily.singletons(model.n)
    for k in range(instances):
        f = rng.normal(size=mu.space.size)
        for gamma in ("d", "h"):
            for r in functionals.moment_inequality_check(mu, fam, sigma2, f, gamma=gamma):
                yield inequality_row(f"moment_{gamma}", f"{k}", r.p, r.lhs, r.rhs, tol * max(1.0, abs(r.rhs)))


def suite_tensorization(model: IsingModel, rng, instances: int, tol: float):
    mu = gibbs_measure(model)
    A = coupling_matrix(model, "exact")
    consts = tensorization.tensorization_constant(mu, A)
    for k in range(instances):
        g = rng.exponential(size=mu.space.size) * (rng.random(mu.space.size) < 0.7) + 1e-300
        chk = tensorization.approx_tensorization_check(mu, g, constants=consts)
        yield inequality_row("approx_tensorization", f"{k}", model.n, chk.lhs, chk.rhs, tol)
        p = random_measure(mu.space, rng)
        lem = tensorization.lemma_bound_check(p, mu)
        yield inequality_row("relative_entropy_lemma", f"{k}", model.n, lem.h, lem.bound, tol)
        yield inequality_row("pinsker", f"{k}", model.n, 2.0 * lem.tv**2, lem.h, tol)
        f = rng.normal(size=mu.space.size)
        lhs, rhs = functionals.mlsi_check(mu, f, consts[0], consts[1])
        yield inequality_row("mlsi", f"{k}", model.n, lhs, rhs, tol * max(1.0, rhs))
    try:
        tensorization.approx_tensorization_check(tensorization.permutation_pushforward(3), np.ones(6))
        yield Row("full_support_guard", "perms3", 3, 0.0, 0.0, -1.0, False)
    except tensorization.FullSupportError:
        yield Row("full_support_guard", "perms3", 3, 0.0, 0.0, 0.0, True)


def suite_coupling(model: IsingModel, rng, instances: int, tol: float):
    A = coupling_matrix(model, "exact")
    B = np.abs(model.J)
    yield inequality_row("coupling_entrywise", "model", model.n, float((A - B).max()), 0.0, 1e-12)
    a = opnorm_2to2(A)
    yield inequality_row("coupling_opnorm", "model", model.n, a, j_norm_1to1(model.J), 1e-10)
    yield inequality_row("beta_bound", "model", model.n, beta_min(model, "bound"), beta_min(model, "exact"), 1e-15)


def suite_lsi_bracket(model: IsingModel, rng, instances: int, tol: float, sigma2: float):
    mu = gibbs_measure(model)
    fam = IndexFamily.singletons(model.n)
    pi = functionals.pi_constant_exact(mu, fam)
    seeds = functionals.pi_seeds(mu, fam)
    for gamma in ("d", "h"):
        found = functionals.lsi_ratio_search(mu, fam, gamma, restarts=max(1, instances // 2), steps=400,
                                             seed=int(rng.integers(2**31)), seeds=seeds)
        yield inequality_row(f"lsi_search_le_cert_{gamma}", "model", model.n, found.value, sigma2, tol)
    found = functionals.lsi_ratio_search(mu, fam, "d", restarts=0, steps=200, seeds=seeds)
    yield inequality_row("pi_le_lsi_search", "model", model.n, pi.constant, found.value, 1e-9)


def suite_w2(model: IsingModel, rng, instances: int, tol: float):
    space = spin_space(min(model.n, 4))
    for k in range(instances):
        mu, nu = random_measure(space, rng), random_measure(space, rng)
        s = tensorization.sandwich_check(mu, nu, tol)
        yield inequality_row("w2_lower", f"{k}", space.n, s.lower, s.w2, tol)
        yield inequality_row("w2_upper", f"{k}", space.n, s.w2, s.upper, tol)
        yield inequality_row("w2_upper_sqrt_n", f"{k}", space.n, s.w2, s.upper_valid, tol)


def suite_certificate(model: IsingModel, rng, instances: int, tol: float, sigma2: float):
    """Higher-order certificate for the normalized upper-triangular quadratic."""
    if model.n > 12:
        return
    mu = gibbs_measure(model)
    A = chaos.CoefficientTensor.all_ones(model.n, 2)
    hs, _ = chaos.tensor_norms(A)
    f = chaos.poly_eval(mu.space.states, A) / (2.0 * sigma2 * hs)
    cert = functionals.higher_order_certificate(mu, sigma2, f, 2)
    for k, norm, thr in cert.conditions:
        yield inequality_row("higher_order_condition", "quadratic", k, norm, thr, tol)
    yield inequality_row("exp_moment", "quadratic", 2, cert.moment, 2.0, tol)


def suite_chaos(model: IsingModel, rng, instances: int, tol: float):
    if model.n > 8:
        return
    mu = gibbs_measure(model)
    for d in (2, 3):
        for k in range(max(1, instances // 2)):
            A = chaos.CoefficientTensor.random(model.n, d, rng)
            r = chaos.h_recursion_check(mu, A, c=math.sqrt(2.0) * d)
            yield identity_row("h_recursion", f"{k}", d, r.residual, 0.0, 1e-9)
            mom = chaos.CenteredMoments.of(mu)
            yield identity_row("centered_mean", f"{k}", d, mu.expect(chaos.centered_poly(mom, A)), 0.0, 1e-12)


def suite_chains(model: IsingModel, rng, instances: int, tol: float):
    if model.n <= 10:
        mu = gibbs_measure(model)
        c = dynamics.check_chain(dynamics.glauber_matrix(model), mu.probs)
        yield identity_row("glauber_stationary", "model", model.n, c.stationarity, 0.0, 1e-12)
        yield identity_row("glauber_reversible", "model", model.n, c.detailed_balance, 0.0, 1e-12)
        yield Row("glauber_irreducible", "model", model.n, 0.0, 0.0, 0.0, c.irreducible)
    for kind, n, r in (("transposition", 4, None), ("bl", 5, 2), ("ssep", 5, 2)):
        P = dynamics.transition_matrix(kind, n=n, r=r)
        pi = np.full(P.shape[0], 1.0 / P.shape[0])
        c = dynamics.check_chain(P, pi)
        yield identity_row(f"{kind}_stationary", f"n{n}", n, c.stationarity, 0.0, 1e-12)
        yield identity_row(f"{kind}_reversible", f"n{n}", n, c.detailed_balance, 0.0, 1e-12)
        yield Row(f"{kind}_irreducible", f"n{n}", n, 0.0, 0.0, 0.0, c.irreducible)


def suite_slices(model: IsingModel, rng, instances: int, tol: float):
    for kind in ("bl", "ssep"):
        kappas = []
        for k in range(instances):
            f = rng.normal(size=20)
            cmp = dynamics.dirichlet_equality_check(kind, 6, 3, f)
            kappas.append(cmp.kappa)
            yield identity_row(f"{kind}_kappa_half", f"{k}", 0.5, cmp.lhs, 0.5 * cmp.rhs, tol)
        spread = max(kappas) - min(kappas) if kappas else 0.0
        yield identity_row(f"{kind}_kappa_constant", "all", kappas[0] if kappas else math.nan, spread, 0.0, 1e-12)


def run_verify(model: IsingModel, rng: np.random.Generator, instances: int, suites, tol: dict, mode=None):
    """All requested suites in a fixed order; returns the report rows."""
    need_sigma = {"moments", "lsi_bracket", "certificate"} & set(suites)
    sigma2 = lsi_certificate(model, mode).sigma2_cert if need_sigma else math.nan
    table = {
        "identities": lambda: suite_identities(model, rng, instances, tol["identity"]),
        "lemma_chain": lambda: suite_lemma_chain(model, rng, instances, tol["lemma"]),
        "moments": lambda: suite_moments(model, rng, instances, tol["inequality"], sigma2),
        "tensorization": lambda: suite_tensorization(model, rng, instances, tol["inequality"]),
        "coupling": lambda: suite_coupling(model, rng, instances, tol["inequality"]),
        "lsi_bracket": lambda: suite_lsi_bracket(model, rng, instances, tol["inequality"], sigma2),
        "w2": lambda: suite_w2(model, rng, instances, tol["w2"]),
        "certificate": lambda: suite_certificate(model, rng, instances, tol["inequality"], sigma2),
        "chaos": lambda: suite_chaos(model, rng, instances, tol["identity"]),
        "chains": lambda: suite_chains(model, rng, instances, tol["identity"]),
        "slices": lambda: suite_slices(model, rng, instances, tol["identity"]),
    }
    rows: list[Row] = []
    for name in suites:
        rows.extend(table[name]())
    return rows
