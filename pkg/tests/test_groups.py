import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgroup_forge.groups import (
    CapacityError,
    D2k_on,
    DimensionError,
    Permutation,
    S_full,
    SubgroupSpec,
    Ak_on,
    Sk_on,
    Zk_on,
    apply_permutation,
    check_intertwining,
    compose,
    conjugate_subgroup,
    element_array,
    enumerate_group,
    explicit,
    is_group,
    trivial,
)
from subgroup_forge.heads import build_ideal


def perms_of(n):
    return st.permutations(list(range(n))).map(lambda m: Permutation(tuple(m)))


class TestPermutation:
    def test_identity_action(self):
        x = [0.1, 0.2, 0.3]
        np.testing.assert_array_equal(apply_permutation(Permutation.identity(3), x), x)

    def test_cyclic_generator(self):
        a, b, c = 1.5, 2.5, 3.5
        out = apply_permutation(Permutation.cycle_shift(3, [0, 1, 2]), [a, b, c])
        np.testing.assert_array_equal(out, [b, c, a])

    def test_transposition(self):
        out = apply_permutation(Permutation.transposition(3, 0, 1), [5, 7, 9])
        np.testing.assert_array_equal(out, [7, 5, 9])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            apply_permutation(Permutation.identity(3), [1.0, 2.0])

    def test_not_a_bijection(self):
        with pytest.raises(ValueError):
            Permutation((0, 0, 1))

    def test_inverse(self):
        p = Permutation((2, 0, 3, 1))
        assert compose(p, p.inverse()).is_identity()
        assert compose(p.inverse(), p).is_identity()

    def test_matrix_matches_action(self):
        p = Permutation((2, 0, 3, 1))
        x = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(p.matrix() @ x, apply_permutation(p, x))

    def test_action_compatibility_random(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            p = Permutation(tuple(rng.permutation(n)))
            q = Permutation(tuple(rng.permutation(n)))
            x = rng.normal(size=n)
            np.testing.assert_array_equal(apply_permutation(compose(p, q), x),
                                          apply_permutation(p, apply_permutation(q, x)))

    @given(perms_of(6), perms_of(6), perms_of(6))
    def test_composition_associative(self, p, q, r):
        assert compose(compose(p, q), r) == compose(p, compose(q, r))


class TestEnumerate:
    @pytest.mark.parametrize("spec, order", [
        (Zk_on([0, 1, 2, 3], 16), 4),
        (D2k_on([0, 1, 2], 3), 6),
        (Sk_on([0, 1, 2], 3), 6),
        (Ak_on([0, 1, 2, 3], 5), 12),
        (D2k_on(range(5), 10), 10),
        (S_full(4), 24),
        (trivial(5), 1),
    ])
    def test_orders(self, spec, order):
        elems = enumerate_group(spec)
        assert len(elems) == order == spec.order()
        assert len(set(elems)) == order
        assert Permutation.identity(spec.n) in elems

    @pytest.mark.parametrize("spec", [
        Zk_on([3, 1, 4, 0], 6),
        D2k_on([0, 2, 4, 6], 8),
        Sk_on([1, 3, 4], 6),
        Ak_on(range(5), 5),
        S_full(7),
    ])
    def test_group_axioms(self, spec):
        elems = element_array(spec)
        assert is_group(elems)
        # brute-force closure, independent of the Cayley-table kernel
        as_set = {tuple(e) for e in elems.tolist()}
        if len(elems) <= 60:
            for a, b in itertools.product(elems.tolist(), repeat=2):
                assert tuple(b[i] for i in a) in as_set

    def test_non_group_detected(self):
        elems = [Permutation.identity(3).mapping, (1, 2, 0)]
        assert not is_group(np.array(elems))

    def test_cap(self):
        with pytest.raises(CapacityError):
            element_array(S_full(11))
        assert len(element_array(S_full(5), cap=200)) == 120
        with pytest.raises(CapacityError):
            element_array(S_full(6), cap=200)
        assert len(element_array(S_full(6), cap=200, allow_large=True)) == 720

    def test_zk_is_rotation(self):
        elems = enumerate_group(Zk_on([0, 1, 2], 3))
        x = np.array([1.0, 2.0, 3.0])
        images = sorted(tuple(apply_permutation(p, x)) for p in elems)
        assert images == [(1.0, 2.0, 3.0), (2.0, 3.0, 1.0), (3.0, 1.0, 2.0)]


class TestConjugate:
    def test_swap_example(self):
        conj = conjugate_subgroup(Sk_on([0, 1], 3), Permutation.transposition(3, 1, 2))
        assert set(conj.elements) == {tuple(e) for e in element_array(Sk_on([0, 2], 3)).tolist()}

    def test_identity_conjugation(self):
        spec = D2k_on([0, 1, 2, 3], 5)
        conj = conjugate_subgroup(spec, Permutation.identity(5))
        assert set(conj.elements) == {tuple(e) for e in element_array(spec).tolist()}

    @given(perms_of(5))
    def test_order_preserved(self, g):
        conj = conjugate_subgroup(Zk_on([0, 1, 2], 5), g)
        assert conj.order() == 3
        assert is_group(element_array(conj))

    @given(perms_of(6), st.sets(st.integers(0, 5), min_size=1, max_size=4))
    @settings(max_examples=50)
    def test_sk_moves_to_inverse_image(self, g, subset):
        idx = sorted(subset)
        conj = conjugate_subgroup(Sk_on(idx, 6), g)
        moved = sorted(g.inverse().mapping[i] for i in idx)
        assert set(conj.elements) == {tuple(e) for e in element_array(Sk_on(moved, 6)).tolist()}

    def test_homomorphism(self):
        rng = np.random.default_rng(1)
        g = Permutation(tuple(rng.permutation(6)))
        gi = g.inverse()
        elems = enumerate_group(Sk_on([0, 2, 5], 6))
        for h1, h2 in itertools.product(elems, repeat=2):
            lhs = compose(compose(compose(g, h1), gi), compose(compose(g, h2), gi))
            rhs = compose(compose(g, compose(h1, h2)), gi)
            assert lhs == rhs

    def test_degree_mismatch(self):
        with pytest.raises(DimensionError):
            conjugate_subgroup(Sk_on([0, 1], 3), Permutation.identity(4))


class TestIntertwining:
    def test_stacked_identity_intertwines_z4_z16(self):
        ideal = build_ideal(16, 4, "ZD", [0, 1, 2, 3])
        rep = check_intertwining(Zk_on(range(4), 16), Zk_on(range(16), 16), ideal.M, probes=32)
        assert rep.cond1 and rep.cond2
        assert rep.matched_pairs == 4
        assert rep.range_elements == 16

    def test_trivial_h(self):
        rng = np.random.default_rng(3)
        rep = check_intertwining(trivial(5), Zk_on(range(7), 7), rng.normal(size=(7, 5)))
        assert rep.cond1

    def test_random_dense_fails_with_witness(self):
        rng = np.random.default_rng(4)
        rep = check_intertwining(Zk_on(range(4), 16), Zk_on(range(16), 16), rng.uniform(size=(16, 16)))
        assert not rep.cond1
        assert rep.cond1_witness is not None
        assert Permutation(rep.cond1_witness) in enumerate_group(Zk_on(range(4), 16))
        assert not Permutation(rep.cond1_witness).is_identity()

    def test_sk_head_with_pooling_group(self):
        n = 4
        ideal = build_ideal(n, 2, "Sk", [0, 1])
        Mhat = np.vstack([np.eye(n) - ideal.M, ideal.M])
        pool = Sk_on(range(n, 2 * n), 2 * n)
        rep = check_intertwining(Sk_on([0, 1], n), pool, Mhat)
        assert rep.passed
        # swaps within the Mx block that keep its zero rows zero
        assert rep.range_elements == 4

    def test_cond2_failure(self):
        # H trivial but G's shifts keep the constant-free image of M in range
        n = 4
        M = np.eye(n)
        rep = check_intertwining(trivial(n), Zk_on(range(n), n), M)
        assert rep.cond1 and not rep.cond2
        assert rep.cond2_witness is not None

    def test_zero_map_warns(self):
        with pytest.warns(UserWarning):
            rep = check_intertwining(Zk_on(range(3), 3), Zk_on(range(3), 3), np.zeros((3, 3)))
        assert rep.warnings

    def test_dimension_checks(self):
        with pytest.raises(DimensionError):
            check_intertwining(Zk_on(range(3), 3), Zk_on(range(4), 4), np.zeros((3, 3)))


class TestJson:
    @pytest.mark.parametrize("spec", [
        Zk_on([0, 1, 2, 3], 16), D2k_on([2, 0, 1], 4), Sk_on([1, 2], 3), Ak_on([0, 1, 2], 3), S_full(3),
        explicit([(0, 1, 2), (1, 0, 2)], 3),
    ])
    def test_round_trip(self, spec):
        blob = json.dumps(spec.to_json())
        back = SubgroupSpec.from_json(blob)
        assert back == spec

    def test_wire_format(self):
        assert Zk_on([0, 1, 2, 3], 16).to_json() == {"family": "Zk", "cycle": [0, 1, 2, 3], "n": 16}
        assert Permutation((1, 0, 2)).to_json() == [1, 0, 2]

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            SubgroupSpec.from_json({"family": "Q8", "n": 8})


def test_ak_parity():
    for row in element_array(Ak_on(range(4), 4)):
        inversions = sum(1 for i in range(4) for j in range(i + 1, 4) if row[i] > row[j])
        assert inversions % 2 == 0
    assert len(element_array(Ak_on(range(6), 6))) == math.factorial(6) // 2
