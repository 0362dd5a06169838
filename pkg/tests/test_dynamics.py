import numpy as np
import pytest

from ddit.dynamics import (
    TrajectoryWindow,
    as_latent,
    first_difference,
    nth_difference,
    per_patch_std,
    percentile,
)
from ddit.errors import ValidationError


def make_window(values, shape=(1, 1, 1)):
    """Window from scalars, oldest first, with descending timesteps."""
    w = TrajectoryWindow(capacity=len(values))
    for i, v in enumerate(values):
        w.push(1000 - i, np.full(shape, v, np.float32))
    return w


class TestFirstDifference:
    def test_identical_inputs_give_zero(self, rng):
        a = rng.standard_normal((4, 4, 2)).astype(np.float32)
        assert (first_difference(a, a) == 0).all()

    def test_scalar_grids(self):
        a = np.full((1, 1, 1), 3.0, np.float32)
        b = np.full((1, 1, 1), 1.0, np.float32)
        assert first_difference(a, b)[0, 0, 0] == 2.0

    def test_matches_elementwise_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4, 2)).astype(np.float32)
        b = rng.standard_normal((4, 4, 2)).astype(np.float32)
        got = first_difference(a, b)
        for i in range(4):
            for j in range(4):
                for c in range(2):
                    assert got[i, j, c] == np.float32(a[i, j, c] - b[i, j, c])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValidationError, match="mismatch"):
            first_difference(np.zeros((2, 2, 1)), np.zeros((2, 4, 1)))


class TestTrajectoryWindow:
    def test_capacity_evicts_oldest(self):
        w = make_window([1, 2, 3, 4, 5][:4])
        w.push(990, np.full((1, 1, 1), 9.0, np.float32))
        entries = w.entries()
        assert len(entries) == 4
        assert entries[-1][0] == 990

    def test_rejects_nondecreasing_timesteps(self):
        w = make_window([1.0, 2.0])
        with pytest.raises(ValidationError, match="decrease"):
            w.push(999, np.zeros((1, 1, 1), np.float32))

    def test_rejects_shape_change(self):
        w = make_window([1.0])
        with pytest.raises(ValidationError, match="shape"):
            w.push(900, np.zeros((2, 2, 1), np.float32))

    def test_rejects_non_finite(self):
        w = TrajectoryWindow()
        with pytest.raises(ValidationError, match="finite"):
            w.push(1000, np.full((1, 1, 1), np.nan))


class TestNthDifference:
    def test_constant_trajectory_is_zero(self):
        w = make_window([5.0, 5.0, 5.0, 5.0], shape=(2, 2, 1))
        for n in (1, 2, 3):
            assert np.abs(nth_difference(w, n)).max() == 0.0

    def test_third_difference_annihilates_linear(self):
        w = make_window([0.0, 1.0, 2.0, 3.0])
        assert abs(nth_difference(w, 3)[0, 0, 0]) <= 1e-9

    def test_cubic_hand_value(self):
        # values k^3, oldest 64 down to newest 1: 1 - 3*8 + 3*27 - 64 = -6
        w = make_window([64.0, 27.0, 8.0, 1.0])
        assert nth_difference(w, 3)[0, 0, 0] == pytest.approx(-6.0, abs=1e-9)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_recursive_matches_closed_form(self, n, rng):
        w = TrajectoryWindow()
        for i in range(4):
            w.push(100 - i, rng.standard_normal((6, 4, 3)).astype(np.float32))
        closed = nth_difference(w, n, method="closed")
        recursive = nth_difference(w, n, method="recursive")
        scale = np.abs(recursive).max()
        assert np.abs(closed - recursive).max() <= 1e-12 * max(scale, 1.0)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_polynomial_annihilation(self, n):
        # degree n-1 polynomial of the step index vanishes under order n;
        # dyadic coefficients keep the float32 window entries exact
        coeffs = [0.25, -1.5, 2.125][:n]
        w = TrajectoryWindow()
        for i in range(4):
            val = sum(c * float(i) ** k for k, c in enumerate(coeffs, start=0))
            w.push(50 - i, np.full((3, 3, 2), val, np.float32))
        assert np.abs(nth_difference(w, n)).max() <= 1e-9

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_linearity(self, n, rng):
        za = [rng.standard_normal((4, 4, 2)).astype(np.float32) for _ in range(4)]
        zb = [rng.standard_normal((4, 4, 2)).astype(np.float32) for _ in range(4)]
        alpha, beta = 0.7, -1.3
        wa, wb, wc = TrajectoryWindow(), TrajectoryWindow(), TrajectoryWindow()
        for i in range(4):
            wa.push(10 - i, za[i])
            wb.push(10 - i, zb[i])
            wc.push(10 - i, (alpha * za[i] + beta * zb[i]).astype(np.float32))
        combined = nth_difference(wc, n)
        separate = alpha * nth_difference(wa, n) + beta * nth_difference(wb, n)
        # float32 window entries round the combination before differencing
        assert np.abs(combined - separate).max() <= 1e-5

    def test_insufficient_history_names_requirement(self):
        w = make_window([1.0, 2.0])
        with pytest.raises(ValidationError, match="4 latents"):
            nth_difference(w, 3)

    def test_bad_order_rejected(self):
        w = make_window([1.0, 2.0, 3.0, 4.0])
        with pytest.raises(ValidationError, match="order"):
            nth_difference(w, 4)


class TestPerPatchStd:
    def test_constant_field_is_zero(self):
        assert (per_patch_std(np.full((8, 8, 3), 2.5), 4) == 0).all()

    def test_hand_value_0022(self):
        field = np.array([[0.0, 0.0], [2.0, 2.0]]).reshape(2, 2, 1)
        assert per_patch_std(field, 2)[0, 0] == pytest.approx(1.0)

    def test_hand_value_1113(self):
        field = np.array([[1.0, 1.0], [1.0, 3.0]]).reshape(2, 2, 1)
        assert per_patch_std(field, 2)[0, 0] == pytest.approx(np.sqrt(0.75))

    def test_pools_channels(self):
        # one 1x1 patch with C=4 values {0,0,2,2} -> std 1
        field = np.array([0.0, 0.0, 2.0, 2.0]).reshape(1, 1, 4)
        assert per_patch_std(field, 1)[0, 0] == pytest.approx(1.0)

    def test_population_convention_matches_numpy(self, rng):
        field = rng.standard_normal((8, 8, 2))
        got = per_patch_std(field, 4)
        blocks = field.reshape(2, 4, 2, 4, 2).transpose(0, 2, 1, 3, 4).reshape(2, 2, -1)
        assert np.allclose(got, blocks.std(axis=-1), rtol=1e-12, atol=0)

    def test_permutation_invariant_within_patch(self, rng):
        field = rng.standard_normal((4, 4, 1))
        base = per_patch_std(field, 4)[0, 0]
        flat = field.reshape(-1)
        shuffled = rng.permutation(flat).reshape(4, 4, 1)
        assert per_patch_std(shuffled, 4)[0, 0] == pytest.approx(base, rel=1e-12)

    def test_translation_equivariant_across_patches(self, rng):
        field = rng.standard_normal((8, 8, 2))
        shifted = np.roll(field, 4, axis=0)
        assert np.allclose(
            np.roll(per_patch_std(field, 4), 1, axis=0),
            per_patch_std(shifted, 4),
            rtol=1e-12,
        )

    def test_non_divisible_edge_rejected(self):
        with pytest.raises(ValidationError, match="divide"):
            per_patch_std(np.zeros((6, 6, 1)), 4)


class TestPercentile:
    def test_boundary_ranks(self, rng):
        vals = rng.standard_normal(31)
        assert percentile(vals, 0.0) == pytest.approx(vals.min())
        assert percentile(vals, 1.0) == pytest.approx(vals.max())

    def test_hand_value(self):
        vals = np.arange(1, 11) / 10.0  # 0.1 .. 1.0
        # rank 0.4 * 9 = 3.6 -> 0.4 + 0.6 * 0.1
        assert percentile(vals, 0.4) == pytest.approx(0.46)

    def test_single_value(self):
        for rho in (0.0, 0.3, 1.0):
            assert percentile([4.2], rho) == pytest.approx(4.2)

    def test_matches_numpy_quantile_oracle(self, rng):
        vals = rng.standard_normal(57)
        for rho in np.linspace(0, 1, 11):
            assert percentile(vals, rho) == pytest.approx(
                float(np.quantile(vals, rho)), rel=1e-12
            )

    def test_monotone_in_rho_and_bounded(self, rng):
        vals = rng.standard_normal(40)
        rhos = np.linspace(0, 1, 21)
        outs = [percentile(vals, r) for r in rhos]
        assert all(b >= a - 1e-15 for a, b in zip(outs, outs[1:]))
        assert vals.min() <= min(outs) and max(outs) <= vals.max()

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            percentile([], 0.5)

    def test_rho_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="rho"):
            percentile([1.0], 1.5)


class TestAsLatent:
    def test_divisibility_enforced(self):
        with pytest.raises(ValidationError, match="divisible"):
            as_latent(np.zeros((6, 6, 1), np.float32), divisors=(4,))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ValidationError, match=r"\(H, W, C\)"):
            as_latent(np.zeros((4, 4), np.float32))
