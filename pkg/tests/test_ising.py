import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conclab.ising import (
    DobrushinViolated,
    IsingModel,
    beta_min,
    conditional_plus,
    coupling_matrix,
    entropy_ratio_two_point,
    gibbs_measure,
    j_norm_1to1,
    lsi_certificate,
    opnorm_2to2,
    tail_constant,
    two_point_lsi_constant,
)
from conclab.spaces import LimitExceeded


def brute_gibbs(model):
    n = model.n
    states = list(itertools.product((-1, 1), repeat=n))
    w = np.array([math.exp(0.5 * np.dot(s, model.J @ s) + np.dot(model.h, s)) for s in states])
    probs = dict(zip(states, w / w.sum()))
    return probs


def rho_closed_form(p):
    p = min(p, 1 - p)
    if p == 0.5:
        return 1.0
    return math.log((1 - p) / p) / (2 * (1 - 2 * p))


def test_gibbs_matches_brute_force(rng):
    model = IsingModel.random(5, rng)
    mu = gibbs_measure(model)
    ref = brute_gibbs(model)
    for k, s in enumerate(mu.space):
        assert mu.probs[k] == pytest.approx(ref[s], rel=1e-12)


def test_conditional_matches_ratio(rng):
    model = IsingModel.random(4, rng)
    ref = brute_gibbs(model)
    for s in ref:
        for i in range(4):
            plus = list(s); plus[i] = 1
            minus = list(s); minus[i] = -1
            want = ref[tuple(plus)] / (ref[tuple(plus)] + ref[tuple(minus)])
            assert conditional_plus(model, i, np.array(s)) == pytest.approx(want, rel=1e-12)


def test_model_validation():
    with pytest.raises(ValueError):
        IsingModel(np.array([[0, 1], [0.5, 0]]), np.zeros(2))
    with pytest.raises(ValueError):
        IsingModel(np.eye(2), np.zeros(2))
    with pytest.raises(LimitExceeded):
        gibbs_measure(IsingModel(np.zeros((5, 5)), np.zeros(5), limit=4))


def test_curie_weiss_couplings():
    m = IsingModel.curie_weiss(4, 0.5)
    assert m.J[0, 1] == pytest.approx(0.125)
    assert j_norm_1to1(m.J) == pytest.approx(0.375)


@pytest.mark.parametrize("p", [0.5, 0.3, 0.1, 0.01, 0.9, 1e-4])
def test_two_point_constant_closed_form(p):
    assert two_point_lsi_constant(p) == pytest.approx(rho_closed_form(p), rel=1e-10)


@given(st.floats(min_value=1e-3, max_value=0.999), st.floats(min_value=-30, max_value=30))
def test_two_point_ratio_below_constant(p, t):
    assert entropy_ratio_two_point(p, t) <= rho_closed_form(p) * (1 + 1e-9)


def test_two_point_ratio_near_one_is_poincare():
    # f = (1, t) with t -> 1 reduces to the variance ratio, which is 1
    assert entropy_ratio_two_point(0.3, 1 - 1e-9) == pytest.approx(1.0, abs=1e-6)


def test_beta_min_zero_coupling():
    m = IsingModel(np.zeros((3, 3)), np.array([0.2, -0.5, 0.1]))
    assert beta_min(m, "exact") == pytest.approx(0.5 * (1 - math.tanh(0.5)))
    assert beta_min(m, "bound") == pytest.approx(beta_min(m, "exact"))


@pytest.mark.parametrize("seed", range(10))
def test_coupling_matrix_entrywise_bound(seed):
    rng = np.random.default_rng(seed)
    m = IsingModel.random(5, rng)
    A = coupling_matrix(m, "exact")
    assert np.all(A <= np.abs(m.J) + 1e-12)
    assert opnorm_2to2(A) <= j_norm_1to1(m.J) + 1e-10
    assert beta_min(m, "bound") <= beta_min(m, "exact") + 1e-15


def test_coupling_two_site_oracle():
    # two sites: sensitivity of tanh(J s + h) to flipping s is (tanh(h+J)-tanh(h-J))/2
    J, h = 0.4, 0.3
    m = IsingModel(np.array([[0, J], [J, 0]]), np.array([h, 0.0]))
    A = coupling_matrix(m, "exact")
    assert A[0, 1] == pytest.approx(0.5 * (math.tanh(h + J) - math.tanh(h - J)), rel=1e-13)
    assert A[1, 0] == pytest.approx(math.tanh(J), rel=1e-13)


def test_opnorm_matches_svd(rng):
    A = np.abs(rng.normal(size=(7, 7)))
    assert opnorm_2to2(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-8)
    assert opnorm_2to2(np.zeros((3, 3))) == 0.0


def test_certificate_independent_spins():
    rep = lsi_certificate(IsingModel(np.zeros((3, 3)), np.zeros(3)))
    assert rep.beta_min == 0.5
    assert rep.a_norm == 0.0
    assert rep.rho_two_point == pytest.approx(1.0, abs=1e-14)
    # 2 C rho / beta with C = 1
    assert rep.sigma2_cert == pytest.approx(4.0, rel=1e-14)
    assert rep.c_tail == pytest.approx(tail_constant(4.0, 2), rel=1e-14)


def test_certificate_rejects_strong_coupling():
    with pytest.raises(DobrushinViolated):
        lsi_certificate(IsingModel.curie_weiss(6, 3.0))


def test_certificate_exceeds_poincare():
    from conclab.functionals import pi_constant_exact
    from conclab.spaces import IndexFamily

    m = IsingModel.curie_weiss(6, 0.5)
    rep = lsi_certificate(m)
    pi = pi_constant_exact(gibbs_measure(m), IndexFamily.singletons(6)).constant
    assert pi <= rep.sigma2_cert


def test_tail_constant_orders():
    assert tail_constant(1.0, 1) == pytest.approx(24 * math.e)
    assert tail_constant(4.0, 2) == pytest.approx(24 * math.e * 4 * 2)
    with pytest.raises(ValueError):
        tail_constant(1.0, 3)
