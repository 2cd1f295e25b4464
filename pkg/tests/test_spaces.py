import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conclab.ising import IsingModel, conditional_plus, gibbs_measure
from conclab.spaces import (
    IndexFamily,
    LimitExceeded,
    TabulatedMeasure,
    bits_from_spins,
    disintegrate,
    dump_measure,
    enumerate_space,
    kernel_support,
    load_measure,
    perm_space,
    product_space,
    reconstruct_expectation,
    slice_space,
    spin_space,
    spins_from_bits,
)


@pytest.mark.parametrize("kind,n,r,size", [("spins", 3, None, 8), ("slice", 4, 2, 6), ("perms", 4, None, 24)])
def test_enumeration_sizes(kind, n, r, size):
    space = enumerate_space(kind, n, r)
    assert space.size == size
    seen = {space.state(k) for k in range(space.size)}
    assert len(seen) == size


def test_limits_are_named():
    with pytest.raises(LimitExceeded, match="spins n = 25 exceeds limit 24"):
        enumerate_space("spins", 25)
    with pytest.raises(LimitExceeded, match="perms"):
        enumerate_space("perms", 10)
    assert enumerate_space("spins", 4, limit=4).size == 16


def test_spin_codec_round_trip():
    space = spin_space(5)
    for k in range(space.size):
        s = space.state(k)
        assert space.index(s) == k
        assert space.decode(space.encode(s)) == s
    # bit i set means sigma_i = +1
    assert space.state(0b00101) == (1, -1, 1, -1, -1)


@given(st.integers(min_value=1, max_value=32), st.data())
def test_bit_codec_property(n, data):
    word = data.draw(st.integers(min_value=0, max_value=2**n - 1))
    s = spins_from_bits(word, n)
    assert int(bits_from_spins(s)) == word


def test_slice_and_perm_codecs():
    sl = slice_space(5, 2)
    assert all(sum(s) == 2 for s in sl)
    for k in range(sl.size):
        assert sl.index(sl.state(k)) == k
        assert sl.decode(sl.encode(sl.state(k))) == sl.state(k)
    words = [sl.encode(s) for s in sl]
    assert words == sorted(words)
    ps = perm_space(4)
    assert all(len(set(s)) == 4 for s in ps)
    assert not ps.is_full_product and spin_space(3).is_full_product


def test_product_measure_kernels_match_marginals(rng):
    marg = [rng.dirichlet(np.ones(3)) for _ in range(3)]
    space = product_space([range(3)] * 3)
    probs = np.array([np.prod([marg[i][x[i]] for i in range(3)]) for x in space])
    mu = TabulatedMeasure.from_weights(space, probs)
    _, k = disintegrate(mu, (0, 2))
    want = {(a, b): marg[0][a] * marg[2][b] for a in range(3) for b in range(3)}
    for ctx in k.table:
        row = k.row(ctx)
        assert row.keys() == want.keys()
        for y, p in row.items():
            assert p == pytest.approx(want[y], abs=1e-14)


def test_permutation_kernel_is_half_swap():
    mu = TabulatedMeasure.uniform(perm_space(3))
    _, k = disintegrate(mu, (0, 1))
    assert k.row((3,)) == pytest.approx({(1, 2): 0.5, (2, 1): 0.5})
    assert kernel_support(k, (3,)) == {(1, 2), (2, 1)}
    with pytest.raises(KeyError):
        k.row((4,))


def test_slice_kernel_support():
    mu = TabulatedMeasure.uniform(slice_space(2, 1))
    _, k = disintegrate(mu, (0, 1))
    assert kernel_support(k, ()) == {(1, 0), (0, 1)}


def test_full_support_kernel_support_is_everything(rng):
    space = spin_space(3)
    mu = TabulatedMeasure.from_weights(space, rng.random(8) + 0.1)
    _, k = disintegrate(mu, (1,))
    assert kernel_support(k, (1, -1)) == {(-1,), (1,)}


def test_ising_kernel_matches_tanh():
    model = IsingModel(np.array([[0, 0.5], [0.5, 0]]), np.array([0.1, -0.3]))
    mu = gibbs_measure(model)
    _, k = disintegrate(mu, (0,))
    for s2 in (-1, 1):
        expect = conditional_plus(model, 0, np.array([0.0, s2]))
        assert k.row((s2,))[(1,)] == pytest.approx(expect, abs=1e-14)


def test_zero_mass_contexts_have_no_rows():
    space = spin_space(2)
    mu = TabulatedMeasure.from_weights(space, [0.0, 0.0, 0.5, 0.5])
    _, k = disintegrate(mu, (0,))
    # words 0 and 1 have sigma_2 = -1, which carries no mass
    assert list(k.table) == [(1,)]
    with pytest.raises(KeyError):
        k.row((-1,))


@pytest.mark.parametrize("trial", range(100))
def test_reconstruction_identity(trial):
    rng = np.random.default_rng(trial)
    n = int(rng.integers(1, 7))
    space = spin_space(n)
    w = rng.exponential(size=space.size) * (rng.random(space.size) < 0.8)
    if w.sum() == 0:
        w[0] = 1.0
    mu = TabulatedMeasure.from_weights(space, w)
    I = tuple(sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)))
    f = rng.normal(size=space.size)
    assert reconstruct_expectation(mu, I, f) == pytest.approx(mu.expect(f), abs=1e-12)
    # marginal consistency: kernel rows times the complement marginal rebuild mu
    marg, k = disintegrate(mu, I)
    rebuilt = marg.mass[k.context_of] * k.row_prob
    np.testing.assert_allclose(rebuilt, mu.probs, atol=1e-15)
    for ctx, row in k.table.items():
        assert math.fsum(row.values()) == pytest.approx(1.0, abs=1e-12)


def test_index_family_validation():
    with pytest.raises(ValueError):
        IndexFamily(())
    with pytest.raises(ValueError):
        IndexFamily(((),))
    with pytest.raises(ValueError):
        IndexFamily(((0, 1), (1, 0)))
    assert len(IndexFamily.pairs(4)) == 6
    assert IndexFamily.ring_pairs(4).subsets[-1] == (0, 3)


def test_measure_dump_round_trip(rng):
    for space in (spin_space(3), slice_space(4, 2), perm_space(3)):
        mu = TabulatedMeasure.from_weights(space, rng.random(space.size))
        text = dump_measure(mu)
        back = load_measure(space, text)
        np.testing.assert_array_equal(back.probs, mu.probs)
    line = dump_measure(TabulatedMeasure.uniform(spin_space(2))).splitlines()[1]
    assert line == "1 01 0.25"
    assert dump_measure(TabulatedMeasure.uniform(perm_space(2))).splitlines()[0] == "0 (1,2) 0.5"


def test_measure_validation():
    with pytest.raises(ValueError):
        TabulatedMeasure(spin_space(1), np.array([0.5, 0.6]), np.log([0.5, 0.6]))
    with pytest.raises(ValueError):
        TabulatedMeasure.from_weights(spin_space(1), [-1.0, 2.0])
