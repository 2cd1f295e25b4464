import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conclab.difference import (
    MemoryBudgetExceeded,
    d_lower,
    d_lower_sq,
    h_product_bound,
    h_tensor,
    h_upper,
    ising_d_lower_sq,
    ising_h_upper_sq,
    lemma_chain_violation,
    product_bound_unordered_norm,
    tensor_norm,
)
from conclab.ising import IsingModel, gibbs_measure
from conclab.spaces import IndexFamily, TabulatedMeasure, perm_space, slice_space, spin_space

finite = st.floats(min_value=-100, max_value=100, allow_nan=False)


def model4(seed=3):
    return IsingModel.random(4, np.random.default_rng(seed))


def test_single_flip_oracle():
    mu = gibbs_measure(model4())
    f = np.arange(16.0) ** 1.5
    H = h_upper(f, mu).values
    for i in range(4):
        flip = np.arange(16) ^ (1 << i)
        np.testing.assert_allclose(H[:, i], np.abs(f - f[flip]) / math.sqrt(2), atol=1e-13)


@given(arrays(float, 16, elements=finite))
def test_d_lower_matches_ising_formula(f):
    m = model4()
    mu = gibbs_measure(m)
    total = sum(d_lower_sq(f, mu, (i,)) for i in range(4))
    np.testing.assert_allclose(total, ising_d_lower_sq(m, f), rtol=1e-10, atol=1e-9)
    np.testing.assert_allclose(h_upper(f, mu).norm() ** 2, ising_h_upper_sq(4, f), rtol=1e-10, atol=1e-9)


@given(arrays(float, 16, elements=finite))
def test_d_below_h(f):
    mu = gibbs_measure(model4())
    assert np.all(d_lower(f, mu).values <= h_upper(f, mu).values + 1e-9)


@given(arrays(float, 16, elements=finite), st.integers(min_value=1, max_value=2))
def test_product_bound_dominates_iterated(f, d):
    mu = gibbs_measure(model4())
    H = h_tensor(f, mu, d=d)
    B = h_product_bound(f, mu, d)
    tol = 1e-9 * (1 + np.abs(f).max())
    assert np.all(H.values <= B.values + tol)
    assert np.all(H.norm() <= B.norm() + tol)


def test_product_bound_fails_at_third_order():
    # jumps of f across site 2 at (s0, s1) = (-,-), (-,+), (+,-), (+,+) are 1, -1, 3, 1:
    # the third flip product vanishes but the iterated absolute differences do not
    space = spin_space(3)
    mu = TabulatedMeasure.uniform(space)
    jumps = {(-1, -1): 1.0, (-1, 1): -1.0, (1, -1): 3.0, (1, 1): 1.0}
    f = np.array([jumps[(s[0], s[1])] if s[2] > 0 else 0.0 for s in space])
    H = h_tensor(f, mu, d=3).values
    B = h_product_bound(f, mu, 3).values
    assert np.all(B[:, 0, 1, 2] == 0.0)
    np.testing.assert_allclose(H[:, 0, 1, 2], 2.0 / 2**1.5)


def test_unordered_bound_misses_factorial():
    # summing over sets instead of ordered tuples loses sqrt(d!)
    mu = gibbs_measure(model4())
    f = np.random.default_rng(0).normal(size=16)
    ordered = h_product_bound(f, mu, 2).norm()
    np.testing.assert_allclose(ordered, math.sqrt(2) * product_bound_unordered_norm(f, mu, 2))


def test_repeated_site_entries_vanish(rng):
    mu = gibbs_measure(model4())
    f = rng.normal(size=16)
    H = h_tensor(f, mu, d=2).values
    for i in range(4):
        assert np.all(H[:, i, i] == 0.0)


def test_product_bound_unordered_quadratic():
    # f = s1 s2: (Id - T_1)(Id - T_2) f = 4 s1 s2, so the unordered norm is 2
    space = spin_space(3)
    mu = TabulatedMeasure.uniform(space)
    f = space.states[:, 0] * space.states[:, 1].astype(float)
    np.testing.assert_allclose(product_bound_unordered_norm(f, mu, 2), 2.0)


def test_constant_function_has_zero_differences():
    mu = gibbs_measure(model4())
    assert np.all(h_tensor(np.full(16, 3.0), mu, d=3).values == 0)


def test_permutation_transposition_oracle():
    # on perms(3) with I = {1, 2}, h_I f is |f(x) - f(swap)| / sqrt(2)
    space = perm_space(3)
    mu = TabulatedMeasure.uniform(space)
    f = np.arange(6.0) ** 2
    fam = IndexFamily(((0, 1),))
    H = h_upper(f, mu, fam).values[:, 0]
    for k, s in enumerate(space):
        other = space.index((s[1], s[0], s[2]))
        assert H[k] == pytest.approx(abs(f[k] - f[other]) / math.sqrt(2))


def test_slice_kernel_differences():
    space = slice_space(4, 2)
    mu = TabulatedMeasure.uniform(space)
    f = np.arange(6.0)
    fam = IndexFamily.pairs(4)
    D = d_lower(f, mu, fam).values
    H = h_upper(f, mu, fam).values
    assert np.all(D <= H + 1e-13)
    # sites with equal occupancy have a one-point kernel
    for k, s in enumerate(space):
        for j, (a, b) in enumerate(fam):
            if s[a] == s[b]:
                assert H[k, j] == 0.0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("d", [1, 2, 3])
def test_lemma_chain(seed, d):
    rng = np.random.default_rng(seed)
    mu = gibbs_measure(IsingModel.random(5, rng))
    assert lemma_chain_violation(rng.normal(size=32), mu, d) <= 1e-12


def test_memory_guard():
    mu = TabulatedMeasure.uniform(spin_space(4))
    with pytest.raises(MemoryBudgetExceeded):
        h_tensor(np.zeros(16), mu, d=3, budget=100)


def test_tensor_norm_aggregation():
    mu = TabulatedMeasure.uniform(spin_space(2))
    f = np.array([0.0, 1.0, 1.0, 2.0])
    T = h_upper(f, mu)
    # every state has two unit jumps: per-state norm is 1
    np.testing.assert_allclose(tensor_norm(T), 1.0)
    assert tensor_norm(T, mu, 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        tensor_norm(T, p=2.0)
