import numpy as np
import pytest

from srp.operators import (
    CircularConvolution,
    Composition,
    ConvexCombination,
    CoordinateMask,
    DegradationEnsemble,
    DenseMatrix,
    DenseCapExceeded,
    DimensionMismatch,
    DiscreteFourier,
    FoldDownsample,
    Identity,
    Scale,
    adjoint_mismatch,
    deinterleave,
    gram_operator_norm,
    interleave,
    masked_fourier,
    random_row_mask,
    row_mask_indices,
    sample_degradation,
    uniform_row_mask,
)


def operator_zoo(rng):
    """One instance of every kind, dims <= 64."""
    return [
        Identity(7),
        Scale(5, -1.7),
        Scale(4, 0.0),
        CoordinateMask(9, [0, 3, 4]),
        CoordinateMask(6, []),
        DenseMatrix(rng.standard_normal((6, 9))),
        DenseMatrix(rng.standard_normal((9, 4))),
        DiscreteFourier((8,)),
        DiscreteFourier((4, 4)),
        CircularConvolution(12, rng.standard_normal(5)),
        CircularConvolution(16, [1.0]),
        FoldDownsample(12, 3),
        FoldDownsample(10, 4),
        Composition([DiscreteFourier((8,)), CoordinateMask(16, range(0, 16, 2))]),
        Composition(
            [CircularConvolution(12, rng.standard_normal(3)), FoldDownsample(12, 2)]
        ),
        ConvexCombination(0.3, CoordinateMask(10, [1, 2, 7])),
        ConvexCombination(0.5, CircularConvolution(8, [0.5, 0.25, 0.25])),
        ConvexCombination(0.0, Scale(6, 2.0)),
        ConvexCombination(1.0, Scale(6, 2.0)),
        masked_fourier((4, 4), np.array([True, False, True, False])),
    ]


class TestApplyExamples:
    def test_mask_zero_fills(self):
        op = CoordinateMask(2, [0])
        np.testing.assert_array_equal(op.apply([3.0, 4.0]), [3.0, 0.0])
        assert op.out_dim == op.in_dim == 2

    def test_convex_combo_halfway_to_annihilation(self):
        op = ConvexCombination(0.5, Scale(2, 0.0))
        np.testing.assert_allclose(op.apply([2.0, 2.0]), [1.0, 1.0])

    def test_convex_combo_endpoints(self):
        rng = np.random.default_rng(20)
        inner = DenseMatrix(rng.standard_normal((4, 4)))
        v = rng.standard_normal(4)
        np.testing.assert_allclose(
            ConvexCombination(0.0, inner).apply(v), v, atol=1e-14
        )
        np.testing.assert_allclose(
            ConvexCombination(1.0, inner).apply(v), inner.apply(v), atol=1e-14
        )

    def test_identity_kernel_convolution(self):
        op = CircularConvolution(3, [1.0])
        np.testing.assert_allclose(op.apply([5.0, 6.0, 7.0]), [5.0, 6.0, 7.0])

    def test_linearity(self):
        rng = np.random.default_rng(0)
        for op in operator_zoo(rng):
            u = rng.standard_normal(op.in_dim)
            v = rng.standard_normal(op.in_dim)
            lhs = op.apply(2.5 * u - 1.25 * v)
            rhs = 2.5 * op.apply(u) - 1.25 * op.apply(v)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch) as err:
            Identity(3).apply([1.0, 2.0])
        assert err.value.expected == 3
        assert err.value.actual == 2


class TestAdjointExamples:
    def test_mask_self_adjoint(self):
        op = CoordinateMask(2, [0])
        np.testing.assert_array_equal(op.adjoint_apply([3.0, 0.0]), [3.0, 0.0])

    def test_downsample_adjoint_zero_inserts(self):
        op = FoldDownsample(4, 2)
        np.testing.assert_array_equal(op.adjoint_apply([1.0, 2.0]), [1.0, 0.0, 2.0, 0.0])
        # oracle: transpose of the dense downsampling matrix
        dense = op.to_dense()
        np.testing.assert_allclose(op.adjoint_apply([1.0, 2.0]), dense.T @ [1.0, 2.0])

    def test_fourier_adjoint_inverts(self):
        op = DiscreteFourier((8,))
        rng = np.random.default_rng(1)
        v = rng.standard_normal(16)
        np.testing.assert_allclose(op.adjoint_apply(op.apply(v)), v, atol=1e-12)

    def test_adjoint_test_all_kinds(self):
        rng = np.random.default_rng(2)
        for op in operator_zoo(rng):
            assert adjoint_mismatch(op, rng, trials=100) < 1e-10, op.kind

    def test_double_adjoint_is_original(self):
        rng = np.random.default_rng(3)
        for op in operator_zoo(rng):
            twice = op.adjoint().adjoint()
            v = rng.standard_normal(op.in_dim)
            a = op.apply(v)
            b = twice.apply(v)
            scale = max(float(np.linalg.norm(a)), 1.0)
            assert float(np.linalg.norm(a - b)) / scale < 1e-12


class TestGram:
    def test_identity(self):
        np.testing.assert_array_equal(Identity(2).gram_apply([1.0, 2.0]), [1.0, 2.0])

    def test_mask_projection_idempotent(self):
        op = CoordinateMask(3, [1])
        np.testing.assert_array_equal(op.gram_apply([4.0, 5.0, 6.0]), [0.0, 5.0, 0.0])

    def test_dense_example(self):
        op = DenseMatrix([[1.0, 1.0], [0.0, 1.0]])
        h = np.array([[1.0, 1.0], [0.0, 1.0]])
        expected = h.T @ h @ np.array([1.0, 1.0])
        np.testing.assert_allclose(op.gram_apply([1.0, 1.0]), expected)
        np.testing.assert_allclose(op.gram_apply([1.0, 1.0]), [2.0, 3.0])

    def test_gram_is_the_composition(self):
        rng = np.random.default_rng(4)
        for op in operator_zoo(rng):
            v = rng.standard_normal(op.in_dim)
            np.testing.assert_array_equal(
                op.gram_apply(v), op.adjoint_apply(op.apply(v))
            )


class TestDense:
    def test_identity(self):
        np.testing.assert_array_equal(Identity(2).to_dense(), np.eye(2))

    def test_scale(self):
        np.testing.assert_array_equal(Scale(1, 3.0).to_dense(), [[3.0]])

    def test_convex_combo_interpolates_entrywise(self):
        inner = CoordinateMask(2, [0])
        op = ConvexCombination(0.25, inner)
        np.testing.assert_allclose(
            op.to_dense(), [[1.0, 0.0], [0.0, 0.75]], atol=1e-14
        )
        rng = np.random.default_rng(5)
        for alpha in (0.0, 0.3, 1.0):
            inner = DenseMatrix(rng.standard_normal((5, 5)))
            op = ConvexCombination(alpha, inner)
            expected = (1 - alpha) * np.eye(5) + alpha * inner.to_dense()
            np.testing.assert_allclose(op.to_dense(), expected, atol=1e-14)

    def test_dense_apply_agreement(self):
        rng = np.random.default_rng(6)
        for op in operator_zoo(rng):
            dense = op.to_dense()
            v = rng.standard_normal(op.in_dim)
            ref = dense @ v
            scale = max(float(np.linalg.norm(ref)), 1.0)
            assert float(np.linalg.norm(op.apply(v) - ref)) / scale < 1e-10

    def test_cap_refusal(self):
        with pytest.raises(DenseCapExceeded):
            Identity(3000).to_dense(cap=2 ** 20)


class TestComposition:
    def test_associativity_at_action_level(self):
        rng = np.random.default_rng(7)
        a = DenseMatrix(rng.standard_normal((5, 4)))
        b = DenseMatrix(rng.standard_normal((6, 5)))
        c = DenseMatrix(rng.standard_normal((3, 6)))
        v = rng.standard_normal(4)
        full = Composition([a, b, c]).apply(v)
        nested = c.apply(b.apply(a.apply(v)))
        np.testing.assert_allclose(full, nested, atol=1e-12)
        pair = Composition([Composition([a, b]), c]).apply(v)
        np.testing.assert_allclose(full, pair, atol=1e-12)

    def test_chain_mismatch_rejected(self):
        with pytest.raises(DimensionMismatch):
            Composition([Identity(3), Identity(4)])


class TestInnovationSystem:
    """(c H Hᵀ + σ² I) solves and log-dets vs the dense oracle."""

    @pytest.mark.parametrize("c,sigma2", [(0.0, 0.5), (0.7, 0.09), (3.0, 1.0)])
    def test_structured_paths_match_dense(self, c, sigma2):
        rng = np.random.default_rng(8)
        for op in operator_zoo(rng):
            hd = op.to_dense()
            s_mat = c * hd @ hd.T + sigma2 * np.eye(op.out_dim)
            r = rng.standard_normal(op.out_dim)
            np.testing.assert_allclose(
                op.innovation_solve(c, sigma2, r),
                np.linalg.solve(s_mat, r),
                atol=1e-9,
                err_msg=op.kind,
            )
            np.testing.assert_allclose(
                op.innovation_logdet(c, sigma2),
                np.linalg.slogdet(s_mat)[1],
                atol=1e-9,
            )
            np.testing.assert_allclose(
                op.innovation_inverse_trace(c, sigma2),
                np.trace(np.linalg.inv(s_mat)),
                atol=1e-9,
            )

    def test_batched_solve(self):
        op = masked_fourier((4, 4), np.array([True, True, False, False]))
        rng = np.random.default_rng(9)
        r = rng.standard_normal((5, 32))
        batch = op.innovation_solve(0.4, 0.2, r)
        for i in range(5):
            np.testing.assert_allclose(
                batch[i], op.innovation_solve(0.4, 0.2, r[i]), atol=1e-12
            )


class TestEnsemble:
    def test_single_member_always_selected(self):
        ens = DegradationEnsemble([Identity(2)], sigma=0.5)
        rng = np.random.default_rng(10)
        assert all(sample_degradation(ens, rng)[0] == 0 for _ in range(50))

    def test_degenerate_weights(self):
        ens = DegradationEnsemble([Identity(2), Scale(2, 2.0)], sigma=1.0,
                                  weights=[1.0, 0.0])
        rng = np.random.default_rng(11)
        assert all(sample_degradation(ens, rng)[0] == 0 for _ in range(50))

    def test_uniform_frequencies(self):
        b, n = 8, 100_000
        ens = DegradationEnsemble([Identity(2)] * b, sigma=1.0)
        rng = np.random.default_rng(12)
        counts = np.zeros(b)
        for _ in range(n):
            idx, member = sample_degradation(ens, rng)
            counts[idx] += 1
            assert member is ens.members[idx]
        p = 1.0 / b
        se = np.sqrt(p * (1 - p) / n)
        np.testing.assert_array_less(np.abs(counts / n - p), 3 * se)

    def test_validation(self):
        with pytest.raises(ValueError):
            DegradationEnsemble([], sigma=1.0)
        with pytest.raises(ValueError):
            DegradationEnsemble([Identity(2)], sigma=0.0)
        with pytest.raises(ValueError):
            DegradationEnsemble([Identity(2), Identity(3)], sigma=1.0)
        with pytest.raises(ValueError):
            DegradationEnsemble([Identity(2)], sigma=1.0, weights=[0.9])


class TestRowMasks:
    def test_uniform_pattern(self):
        rows = uniform_row_mask(16, 4, offset=1, acs_lines=0)
        np.testing.assert_array_equal(np.flatnonzero(rows), [1, 5, 9, 13])

    def test_acs_band_centered(self):
        rows = uniform_row_mask(16, 8, offset=0, acs_lines=4)
        assert rows[6] and rows[7] and rows[8] and rows[9]

    def test_random_mask_deterministic_and_sized(self):
        a = random_row_mask(32, 4, 4, np.random.default_rng(3))
        b = random_row_mask(32, 4, 4, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
        assert a.sum() == 8
        assert a[14] and a[15] and a[16] and a[17]

    def test_center_rows_map_to_dc(self):
        # the center of the shifted grid is the DC row of the transform
        rows = np.zeros(8, dtype=bool)
        rows[4] = True
        idx = row_mask_indices((8, 8), rows)
        np.testing.assert_array_equal(idx, np.arange(16))

    def test_masked_fourier_roundtrip_on_kept_rows(self):
        rows = np.ones(4, dtype=bool)
        op = masked_fourier((4, 4), rows)
        rng = np.random.default_rng(13)
        v = rng.standard_normal(32)
        np.testing.assert_allclose(op.adjoint_apply(op.apply(v)), v, atol=1e-12)


class TestInterleaving:
    def test_roundtrip(self):
        rng = np.random.default_rng(14)
        z = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        np.testing.assert_array_equal(deinterleave(interleave(z)), z)


def test_gram_operator_norm_matches_eigs():
    rng = np.random.default_rng(15)
    m = rng.standard_normal((6, 6))
    op = DenseMatrix(m)
    expected = float(np.max(np.linalg.eigvalsh(m.T @ m)))
    assert abs(gram_operator_norm(op) - expected) < 1e-8 * expected
