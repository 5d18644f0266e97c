import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subgroup_forge import autodiff as ad
from subgroup_forge import nets
from subgroup_forge.groups import DimensionError, Sk_on, Zk_on, check_intertwining, element_array
from subgroup_forge.heads import (
    ComposedModel,
    DivisibilityError,
    MaskHead,
    build_ideal,
    head_forward,
    mask_to_pgm,
    pgm_to_array,
    pgm_values,
    regularization_term,
)


def _rng(seed=0):
    return np.random.default_rng(seed)


class TestForward:
    def test_sk_zero_mask(self):
        x = np.array([0.1, 0.2, 0.3])
        head = MaskHead(None, 3, "Sk", M=np.zeros((3, 3)))
        np.testing.assert_array_equal(head_forward(head, x), [0.1, 0.2, 0.3, 0, 0, 0])

    def test_sk_identity_mask(self):
        x = np.array([0.1, 0.2, 0.3])
        head = MaskHead(None, 3, "Sk", M=np.eye(3))
        np.testing.assert_array_equal(head_forward(head, x), [0, 0, 0, 0.1, 0.2, 0.3])

    def test_sk_ideal_example(self):
        a, b, c = 0.3, 0.6, 0.9
        head = MaskHead.from_ideal(build_ideal(3, 2, "Sk", [0, 1]))
        np.testing.assert_array_equal(head_forward(head, [a, b, c]), [0, 0, c, a, b, 0])

    def test_zd_layout(self):
        x = _rng().uniform(size=4)
        M, L = _rng(1).normal(size=(4, 4)), _rng(2).normal(size=(4, 4))
        out = head_forward(MaskHead(None, 4, "ZD", M=M, L=L), x)
        np.testing.assert_allclose(out, np.r_[M @ x, x - L @ x], rtol=1e-14)

    def test_batch(self):
        X = _rng(3).uniform(size=(5, 4))
        head = MaskHead(_rng(4), 4, "Sk")
        np.testing.assert_array_equal(head_forward(head, X)[2], head_forward(head, X[2]))

    def test_width_check(self):
        with pytest.raises(DimensionError):
            head_forward(MaskHead(_rng(), 3, "Sk"), [1.0, 2.0])

    def test_init_range(self):
        head = MaskHead(_rng(5), 8, "ZD")
        for mat in head.matrices().values():
            assert mat.min() >= 0 and mat.max() <= 2 / 8
        assert len(head.params()) == 2

    def test_frozen_has_no_params(self):
        assert MaskHead.from_ideal(build_ideal(4, 2, "ZD")).params() == []


class TestIdeal:
    def test_zd_stack(self):
        ideal = build_ideal(16, 4, "ZD", [0, 1, 2, 3])
        np.testing.assert_array_equal(ideal.M, np.tile(np.eye(4, 16), (4, 1)))
        np.testing.assert_array_equal(ideal.L, np.diag([1.0] * 4 + [0.0] * 12))

    def test_sk_full(self):
        ideal = build_ideal(10, 10, "Sk")
        np.testing.assert_array_equal(ideal.M, np.eye(10))
        np.testing.assert_array_equal(np.eye(10) - ideal.M, 0)

    def test_divisibility(self):
        with pytest.raises(DivisibilityError):
            build_ideal(10, 3, "ZD")

    def test_bad_indices(self):
        with pytest.raises(DimensionError):
            build_ideal(4, 2, "Sk", [0, 0])

    @pytest.mark.parametrize("n, k", [(16, 4), (10, 5), (16, 8), (12, 3)])
    def test_shift_correspondence(self, n, k):
        # M (h . x) = g . (M x) with g the matching shift of all n rows
        cyc = list(_rng(n + k).permutation(n)[:k])
        ideal = build_ideal(n, k, "ZD", cyc)
        x = _rng(1).uniform(size=n)
        G = element_array(Zk_on(range(n), n))
        for h in element_array(Zk_on(cyc, n)):
            lhs = ideal.M @ x[h]
            assert any(np.array_equal(lhs, (ideal.M @ x)[g]) for g in G)

    def test_intertwining(self):
        ideal = build_ideal(10, 5, "ZD", [2, 4, 6, 8, 0])
        rep = check_intertwining(Zk_on([2, 4, 6, 8, 0], 10), Zk_on(range(10), 10), ideal.M)
        assert rep.cond1 and rep.cond2


class TestComposedInvariance:
    @pytest.mark.parametrize("k", [2, 3, 4, 5])
    def test_sk(self, k):
        n = 6
        idx = list(range(n - k, n))
        model = ComposedModel(MaskHead.from_ideal(build_ideal(n, k, "Sk", idx)), nets.PassThroughPoolNet(_rng(k), n))
        X = _rng(10).uniform(size=(100, n))
        base = model.predict(X)
        for p in element_array(Sk_on(idx, n)):
            assert np.abs(model.predict(X[:, p]) - base).max() <= 1e-9

    @pytest.mark.parametrize("n, k", [(16, 4), (10, 5)])
    def test_zd(self, n, k):
        ideal = build_ideal(n, k, "ZD")
        model = ComposedModel(MaskHead.from_ideal(ideal), nets.CyclicInvariantNet(_rng(), n, pass_dim=n))
        X = _rng(11).uniform(size=(100, n))
        base = model.predict(X)
        for p in element_array(Zk_on(range(k), n)):
            assert np.abs(model.predict(X[:, p]) - base).max() <= 1e-9

    def test_random_mask_breaks_invariance(self):
        n, k = 6, 3
        model = ComposedModel(MaskHead(_rng(1), n, "Sk"), nets.PassThroughPoolNet(_rng(2), n))
        X = _rng(3).uniform(size=(20, n))
        gaps = [np.abs(model.predict(X[:, p]) - model.predict(X)).max() for p in element_array(Sk_on(range(k), n))]
        assert max(gaps) > 1e-6

    def test_pooled_block_row_permutation(self):
        # reordering rows of M only reorders the pooled block
        n, k = 5, 3
        ideal = build_ideal(n, k, "Sk", [1, 2, 4])
        backbone = nets.PassThroughPoolNet(_rng(4), n)
        X = _rng(5).uniform(size=(50, n))
        head = MaskHead.from_ideal(ideal)
        base = backbone.predict(head_forward(head, X))
        for perm in itertools.permutations(range(n)):
            feats = head_forward(head, X)
            moved = np.c_[feats[:, :n], (X @ ideal.M[list(perm)].T)]
            assert np.array_equal(backbone.predict(moved), base)

    def test_mask_gradients(self):
        n = 4
        rng = _rng(6)
        X = rng.uniform(size=(3, n))
        for variant, backbone in (("Sk", nets.PassThroughPoolNet(rng, n, (4,), head=(4,))),
                                  ("ZD", nets.CyclicInvariantNet(rng, n, pass_dim=n, hidden=(4,), channels=3))):
            head = MaskHead(rng, n, variant)
            model = ComposedModel(head, backbone)
            mats = head.params()

            def loss():
                return ad.mean(ad.mul(model(ad.constant(X)), model(ad.constant(X))))

            ad.zero_grad(model.params())
            ad.backward(loss())
            for m in mats:
                flat = m.value.reshape(-1)
                analytic = m.grad.reshape(-1).copy()
                for j in range(flat.size):
                    keep = flat[j]
                    flat[j] = keep + 1e-5
                    up = float(loss().value)
                    flat[j] = keep - 1e-5
                    down = float(loss().value)
                    flat[j] = keep
                    num = (up - down) / 2e-5
                    assert abs(num - analytic[j]) / max(abs(num), abs(analytic[j]), 1e-3) < 1e-4


class TestRegularization:
    def test_zero_penalty(self):
        assert float(regularization_term(MaskHead(_rng(), 4, "ZD")).value) == 0.0

    def test_identity(self):
        head = MaskHead(None, 5, "Sk", l1_penalty=1.0, M=np.eye(5))
        assert float(regularization_term(head).value) == 5.0

    def test_zd_ideal(self):
        ideal = build_ideal(16, 4, "ZD")
        head = MaskHead(None, 16, "ZD", l1_penalty=1.0, M=ideal.M, L=np.zeros((16, 16)))
        assert float(regularization_term(head).value) == 16.0


class TestPgm:
    def test_round_trip(self):
        M = np.array([[0.0, 0.5], [1.0, 0.25]])
        blob = mask_to_pgm(M)
        assert blob.startswith(b"P5\n# range 0.0 1.0\n2 2\n255\n")
        np.testing.assert_array_equal(pgm_to_array(blob), [[0, 128], [255, 64]])

    @given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_values_within_half_level(self, rows, cols, seed):
        M = np.random.default_rng(seed).normal(size=(rows, cols))
        step = (M.max() - M.min()) / 255.0
        assert np.abs(pgm_values(mask_to_pgm(M)) - M).max() <= step / 2 + 1e-12

    def test_values_need_range(self):
        with pytest.raises(ValueError):
            pgm_values(b"P5\n1 1\n255\n\x00")

    def test_constant(self):
        np.testing.assert_array_equal(pgm_to_array(mask_to_pgm(np.ones((3, 4)))), 0)

    def test_ideal_columns(self):
        img = pgm_to_array(mask_to_pgm(build_ideal(16, 4, "ZD").M))
        np.testing.assert_array_equal(np.flatnonzero(img.sum(axis=0)), [0, 1, 2, 3])
