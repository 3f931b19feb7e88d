import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dexp.exceptions import ConfigurationError, ShapeError
from dexp.masking import (
    MaskConfig,
    apply_mask,
    enumerate_masks,
    generate_mask_stack,
    generate_single_mask,
)

DIMS = (16, 16)


def small_config(**kw):
    defaults = dict(n_masks=32, p_keep=0.5, feature_res=(4, 4), seed=11)
    defaults.update(kw)
    return MaskConfig(**defaults)


class TestGeneration:
    def test_shape_dtype_and_range(self):
        stack = generate_mask_stack(small_config(), DIMS)
        assert stack.masks.shape == (32, 16, 16)
        assert stack.masks.dtype == np.float32
        assert stack.masks.min() >= 0.0
        assert stack.masks.max() <= 1.0
        assert len(stack) == 32
        assert stack.dims == DIMS

    def test_bit_identical_across_calls(self):
        a = generate_mask_stack(small_config(), DIMS)
        b = generate_mask_stack(small_config(), DIMS)
        assert a.masks.tobytes() == b.masks.tobytes()

    def test_mask_is_pure_function_of_seed_and_index(self):
        # mask i must not depend on how many other masks are drawn
        stack_small = generate_mask_stack(small_config(n_masks=8), DIMS)
        stack_large = generate_mask_stack(small_config(n_masks=32), DIMS)
        np.testing.assert_array_equal(stack_small.masks, stack_large.masks[:8])
        for i in (0, 3, 7):
            single = generate_single_mask(small_config(), DIMS, i)
            np.testing.assert_array_equal(single, stack_large.masks[i])

    def test_seed_changes_masks(self):
        a = generate_mask_stack(small_config(seed=0), DIMS)
        b = generate_mask_stack(small_config(seed=1), DIMS)
        assert not np.array_equal(a.masks, b.masks)

    def test_p_keep_extremes(self):
        ones = generate_mask_stack(small_config(p_keep=1.0), DIMS)
        np.testing.assert_array_equal(ones.masks, np.ones_like(ones.masks))
        zeros = generate_mask_stack(small_config(p_keep=0.0), DIMS)
        np.testing.assert_array_equal(zeros.masks, np.zeros_like(zeros.masks))

    def test_upsampling_produces_fractional_values(self):
        # bilinear interpolation must leave soft edges between cells
        stack = generate_mask_stack(small_config(n_masks=16), DIMS)
        interior = (stack.masks > 0.05) & (stack.masks < 0.95)
        assert interior.any()

    def test_mean_coverage_tracks_p_keep(self):
        for p_keep in (0.3, 0.7):
            stack = generate_mask_stack(
                small_config(n_masks=400, p_keep=p_keep, seed=5), (12, 12)
            )
            assert abs(stack.masks.mean() - p_keep) < 0.05

    def test_invalid_configs(self):
        with pytest.raises(ConfigurationError):
            small_config(n_masks=0)
        with pytest.raises(ConfigurationError):
            small_config(p_keep=1.5)
        with pytest.raises(ConfigurationError):
            small_config(p_keep=-0.1)
        with pytest.raises(ConfigurationError):
            small_config(feature_res=(0, 4))
        with pytest.raises(ConfigurationError):
            small_config(seed=-1)
        with pytest.raises(ConfigurationError):
            small_config(seed=2**64)

    def test_dims_smaller_than_grid_rejected(self):
        with pytest.raises(ConfigurationError):
            generate_mask_stack(small_config(feature_res=(8, 8)), (4, 4))
        with pytest.raises(ConfigurationError):
            generate_mask_stack(small_config(), (0, 16))

    @given(
        seed=st.integers(min_value=0, max_value=2**32),
        index=st.integers(min_value=0, max_value=500),
        height=st.integers(min_value=4, max_value=33),
        width=st.integers(min_value=4, max_value=33),
    )
    def test_any_mask_in_range_and_deterministic(self, seed, index, height, width):
        config = MaskConfig(n_masks=8, p_keep=0.4, feature_res=(3, 4), seed=seed)
        mask = generate_single_mask(config, (height, width), index)
        assert mask.shape == (height, width)
        assert mask.min() >= 0.0 and mask.max() <= 1.0
        again = generate_single_mask(config, (height, width), index)
        assert mask.tobytes() == again.tobytes()


class TestEnumeration:
    def test_counts_and_extremes(self):
        stack = enumerate_masks((2, 2), (8, 8))
        assert len(stack) == 16
        np.testing.assert_array_equal(stack.masks[0], np.zeros((8, 8)))
        np.testing.assert_array_equal(stack.masks[-1], np.ones((8, 8)))

    def test_masks_are_binary_blocks_and_unique(self):
        stack = enumerate_masks((2, 3), (4, 6))
        assert set(np.unique(stack.masks)) <= {0.0, 1.0}
        # each cell is a constant 2x2 block
        blocks = stack.masks.reshape(len(stack), 2, 2, 3, 2)
        assert (blocks == blocks[:, :, :1, :, :1]).all()
        flat = {m.tobytes() for m in stack.masks}
        assert len(flat) == 2 ** 6

    def test_bit_order_matches_row_major_cells(self):
        stack = enumerate_masks((2, 2), (4, 4))
        # mask 1 = bit 0 set = cell (0, 0) kept, everything else off
        expected = np.zeros((4, 4), dtype=np.float32)
        expected[:2, :2] = 1.0
        np.testing.assert_array_equal(stack.masks[1], expected)

    def test_divisibility_required(self):
        with pytest.raises(ShapeError):
            enumerate_masks((3, 3), (10, 9))

    def test_cell_count_guard(self):
        with pytest.raises(ConfigurationError):
            enumerate_masks((5, 5), (25, 25))


class TestApplyMask:
    def test_identity_and_baseline(self, rng):
        image = rng.uniform(0, 255, size=(6, 6, 3))
        np.testing.assert_array_equal(apply_mask(image, np.ones((6, 6))), image)
        filled = apply_mask(image, np.zeros((6, 6)), baseline=40.0)
        np.testing.assert_array_equal(filled, np.full_like(image, 40.0))

    def test_per_channel_baseline(self):
        image = np.zeros((2, 2, 3))
        out = apply_mask(image, np.zeros((2, 2)), baseline=(10.0, 20.0, 30.0))
        np.testing.assert_array_equal(out[0, 0], [10.0, 20.0, 30.0])

    def test_blend_is_convex(self, rng):
        image = rng.uniform(0, 255, size=(4, 4, 1))
        half = apply_mask(image, np.full((4, 4), 0.5), baseline=100.0)
        np.testing.assert_allclose(half, 0.5 * image + 50.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(np.zeros((4, 4, 1)), np.ones((3, 4)))
