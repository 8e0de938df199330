"""Tests for window partitioning, shifting masks and relative indices."""

from __future__ import annotations

import unittest

import numpy as np
from numpy.testing import assert_array_equal

from Costformer.errors import DomainError, ShapeError
from Costformer.tensor_core import Tensor
from Costformer.transformer import (
    WindowSpec,
    relative_position_index,
    token_count,
    window_partition,
    window_reverse,
)
from Costformer.transformer.windows import (
    MASK_VALUE,
    bias_table_size,
    region_mask,
)


class WindowLayoutTests(unittest.TestCase):
    """Validate how window specs resolve against grids."""

    def test_token_count(self) -> None:
        """Count windows with partial windows rounded up."""
        self.assertEqual(token_count((14, 14, 4), (7, 7, 2)), 8)
        self.assertEqual(token_count((15, 14, 4), (7, 7, 2)), 12)

    def test_shift_is_half_window(self) -> None:
        """Shift by half the extent, rounded down."""
        self.assertEqual(WindowSpec((7, 7, 2), shifted=True).shift, (3, 3, 1))
        self.assertEqual(WindowSpec((7, 7, 2)).shift, (0, 0, 0))

    def test_short_axes_collapse(self) -> None:
        """Clamp windows to short axes and drop their shift."""
        layout = WindowSpec((7, 7, 2), shifted=True).layout((4, 10, 2))

        self.assertEqual(layout.window, (4, 7, 2))
        self.assertEqual(layout.shift, (0, 3, 0))
        self.assertEqual(layout.padded, (4, 14, 2))

    def test_rejects_empty_extents(self) -> None:
        """Refuse zero-sized windows."""
        with self.assertRaises(DomainError):
            WindowSpec((7, 0, 2))


class PartitionTests(unittest.TestCase):
    """Validate partitioning, its inverse and the masks."""

    def setUp(self) -> None:
        """Draw a grid that does not divide into whole windows."""
        self.x = Tensor(np.random.default_rng(2).standard_normal((9, 10, 5, 3)))

    def test_round_trip_is_exact(self) -> None:
        """Restore the grid bit for bit, shifted or not."""
        for shifted in (False, True):
            part = window_partition(self.x, WindowSpec((4, 4, 2), shifted))

            restored = window_reverse(part.windows, part.layout)

            assert_array_equal(restored.data, self.x.data)

    def test_window_shape(self) -> None:
        """Lay windows out as ``[Nw, T, E]``."""
        part = window_partition(self.x, WindowSpec((4, 4, 2)))

        self.assertEqual(part.windows.shape, (3 * 3 * 3, 32, 3))

    def test_first_window_holds_leading_tokens(self) -> None:
        """Flatten each window row-major with the last axis fastest."""
        part = window_partition(self.x, WindowSpec((4, 4, 2)))

        expected = self.x.data[:4, :4, :2].reshape(32, 3)
        assert_array_equal(part.windows.data[0], expected)

    def test_divisible_unshifted_grid_has_no_mask(self) -> None:
        """Skip the mask when every window is one region."""
        x = Tensor(np.zeros((8, 8, 4, 2)))

        self.assertIsNone(window_partition(x, WindowSpec((4, 4, 2))).mask)

    def test_padding_is_masked(self) -> None:
        """Separate padded tokens from real ones."""
        part = window_partition(Tensor(np.zeros((5, 2))), WindowSpec((4,)))

        self.assertIsNotNone(part.mask)
        assert part.mask is not None
        self.assertEqual(part.mask[1, 0, 1], MASK_VALUE)
        self.assertEqual(part.mask[1, 1, 2], 0.0)

    def test_shifted_mask_is_symmetric(self) -> None:
        """Block pairs symmetrically and never a token from itself."""
        part = window_partition(self.x, WindowSpec((4, 4, 2), shifted=True))
        mask = part.mask

        assert mask is not None
        assert_array_equal(mask, mask.transpose(0, 2, 1))
        diagonal = np.diagonal(mask, axis1=1, axis2=2)
        assert_array_equal(diagonal, np.zeros_like(diagonal))
        self.assertTrue((mask < 0).any())

    def test_region_mask_of_one_dimensional_shift(self) -> None:
        """Split the last window of a shifted 1-D grid into two regions."""
        layout = WindowSpec((4,), shifted=True).layout((8,))

        mask = region_mask(layout)

        assert mask is not None
        assert_array_equal(mask[0], np.zeros((4, 4)))
        blocked = mask[1] < 0
        assert_array_equal(blocked[:2, :2], np.zeros((2, 2), dtype=bool))
        assert_array_equal(blocked[:2, 2:], np.ones((2, 2), dtype=bool))

    def test_reverse_checks_shape(self) -> None:
        """Refuse windows that do not match the layout."""
        part = window_partition(self.x, WindowSpec((4, 4, 2)))

        with self.assertRaises(ShapeError):
            window_reverse(part.windows[:-1], part.layout)


class RelativeIndexTests(unittest.TestCase):
    """Validate relative position indices."""

    def test_default_window_covers_table(self) -> None:
        """Use all 13 x 13 x 3 table rows for a (7, 7, 2) window."""
        index = relative_position_index((7, 7, 2))

        self.assertEqual(bias_table_size((7, 7, 2)), 507)
        self.assertEqual(len(np.unique(index)), 507)
        self.assertEqual(index.shape, (98, 98))

    def test_zero_offset_is_shared(self) -> None:
        """Give every token paired with itself the same row."""
        index = relative_position_index((3, 2))

        self.assertEqual(len(set(np.diagonal(index))), 1)

    def test_clamped_window_indexes_subset(self) -> None:
        """Keep smaller windows inside the table they were sized for."""
        index = relative_position_index((3, 3, 2), (7, 7, 2))

        self.assertLess(index.max(), 507)
        self.assertGreaterEqual(index.min(), 0)

    def test_window_beyond_table(self) -> None:
        """Refuse windows larger than the table."""
        with self.assertRaises(ShapeError):
            relative_position_index((8, 7, 2), (7, 7, 2))
