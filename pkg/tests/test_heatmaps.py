import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from featurefactor import (
    HeatMapStack,
    bilinear_upsample,
    columns_to_heatmaps,
    render_overlay,
    upsample_stack,
)
from featurefactor.errors import LayoutMismatch, SizeMismatch
from featurefactor.heatmaps import stacks_to_columns
from featurefactor.nmf import Factorization
from featurefactor.tensors import BatchLayout, LayoutEntry


def make_factorization(h):
    h = np.asarray(h, dtype=np.float32)
    k = h.shape[1]
    return Factorization(
        H=h, W=np.ones((k, 2), dtype=np.float32), loss_trace=(0.0,), iterations_run=0
    )


class TestColumnsToHeatmaps:
    def test_single_image_reshape(self):
        f = make_factorization([[0.1], [0.2], [0.3], [0.4]])
        layout = BatchLayout((LayoutEntry("a", 2, 2, 0),))
        (stack,) = columns_to_heatmaps(f, layout)
        np.testing.assert_allclose(stack.maps[0], [[0.1, 0.2], [0.3, 0.4]], rtol=1e-6)

    def test_index_formula(self):
        rng = np.random.default_rng(0)
        h = rng.random((6 + 12, 3)).astype(np.float32)
        layout = BatchLayout(
            (LayoutEntry("a", 2, 3, 0), LayoutEntry("b", 3, 4, 6))
        )
        stacks = columns_to_heatmaps(make_factorization(h), layout)
        for stack, e in zip(stacks, layout):
            for j in range(3):
                for y in range(e.height):
                    for x in range(e.width):
                        assert stack.maps[j, y, x] == h[e.row_offset + y * e.width + x, j]

    def test_layout_mismatch(self):
        f = make_factorization(np.ones((10, 2)))
        layout = BatchLayout((LayoutEntry("a", 2, 4, 0),))
        with pytest.raises(LayoutMismatch):
            columns_to_heatmaps(f, layout)

    def test_reflatten_reproduces_h(self):
        rng = np.random.default_rng(1)
        h = rng.random((4 + 9, 2)).astype(np.float32)
        layout = BatchLayout((LayoutEntry("a", 2, 2, 0), LayoutEntry("b", 3, 3, 4)))
        stacks = columns_to_heatmaps(make_factorization(h), layout)
        np.testing.assert_array_equal(stacks_to_columns(stacks), h)


class TestBilinearUpsample:
    def test_constant_invariance(self):
        m = np.full((3, 5), 2.5, dtype=np.float32)
        out = bilinear_upsample(m, 7, 11)
        np.testing.assert_array_equal(out, np.full((7, 11), 2.5, dtype=np.float32))

    def test_align_corners_closed_form(self):
        m = np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32)
        out = bilinear_upsample(m, 4, 4)
        expected_row = [0.0, 1 / 3, 2 / 3, 1.0]
        for r in range(4):
            np.testing.assert_allclose(out[r], expected_row, atol=1e-6)

    def test_identity_when_same_size(self):
        rng = np.random.default_rng(2)
        m = rng.random((5, 4)).astype(np.float32)
        np.testing.assert_array_equal(bilinear_upsample(m, 5, 4), m)

    def test_degenerate_axes(self):
        m = np.array([[1.0, 3.0]], dtype=np.float32)
        out = bilinear_upsample(m, 3, 3)
        np.testing.assert_allclose(out[:, 0], 1.0)
        np.testing.assert_allclose(out[:, 2], 3.0)
        out1 = bilinear_upsample(np.array([[7.0]], dtype=np.float32), 4, 4)
        np.testing.assert_array_equal(out1, np.full((4, 4), 7.0, dtype=np.float32))

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 9), st.integers(1, 9),
           st.integers(0, 1000))
    @settings(max_examples=60, deadline=None)
    def test_monotone_range(self, h, w, th, tw, seed):
        rng = np.random.default_rng(seed)
        m = rng.random((h, w)).astype(np.float32)
        out = bilinear_upsample(m, th, tw)
        assert out.min() >= m.min() - 1e-6
        assert out.max() <= m.max() + 1e-6

    def test_idempotent_at_same_size(self):
        rng = np.random.default_rng(3)
        m = rng.random((3, 3)).astype(np.float32)
        once = bilinear_upsample(m, 8, 8)
        twice = bilinear_upsample(once, 8, 8)
        np.testing.assert_array_equal(once, twice)


class TestRenderOverlay:
    def _image(self, h=4, w=4):
        rng = np.random.default_rng(0)
        return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)

    def test_zero_stack_leaves_image(self):
        img = self._image()
        stack = HeatMapStack("a", np.zeros((2, 4, 4), dtype=np.float32))
        out = render_overlay(img, stack)
        np.testing.assert_array_equal(out[..., :3], img)
        np.testing.assert_array_equal(out[..., 3], 0)

    def test_one_hot_full_strength(self):
        img = self._image()
        maps = np.zeros((3, 4, 4), dtype=np.float32)
        maps[2, 1, 2] = 1.0
        out = render_overlay(img, HeatMapStack("a", maps))
        from featurefactor.heatmaps import DEFAULT_PALETTE

        np.testing.assert_array_equal(out[1, 2, :3], DEFAULT_PALETTE[2])
        assert out[1, 2, 3] == 255

    def test_tie_break_lowest_index(self):
        img = self._image()
        maps = np.zeros((2, 4, 4), dtype=np.float32)
        maps[0, 0, 0] = maps[1, 0, 0] = 1.0
        out = render_overlay(img, HeatMapStack("a", maps))
        from featurefactor.heatmaps import DEFAULT_PALETTE

        np.testing.assert_array_equal(out[0, 0, :3], DEFAULT_PALETTE[0])

    def test_size_mismatch(self):
        stack = HeatMapStack("a", np.ones((1, 3, 3), dtype=np.float32))
        with pytest.raises(SizeMismatch):
            render_overlay(self._image(4, 4), stack)


def test_upsample_stack_shapes():
    stack = HeatMapStack("a", np.random.default_rng(0).random((3, 2, 2)).astype(np.float32))
    up = upsample_stack(stack, 8, 6)
    assert up.maps.shape == (3, 8, 6)
    assert up.image_id == "a"
