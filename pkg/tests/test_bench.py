"""Tests for the attention benchmark."""

from __future__ import annotations

import json
import pathlib
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_allclose

from Costformer.errors import DomainError
from Costformer.pipeline.bench import (
    BenchRow,
    bench_attention,
    fit_exponent,
    global_attention,
    windowed_attention,
    write_report,
)
from Costformer.tensor_core.nn import component_rng
from Costformer.transformer import AttentionParams


class AttentionKernelTests(unittest.TestCase):
    """Validate the untaped attention kernels."""

    def setUp(self) -> None:
        """Create projections with a live output and no positional bias."""
        rng = component_rng(0, "test.bench")
        self.params = AttentionParams(rng, 8, 2, (8, 8, 2), dtype=np.float32)
        self.params.output.weight.assign(rng.standard_normal((8, 8)))
        self.params.bias_table.assign(np.zeros(self.params.bias_table.shape))
        self.volume = rng.standard_normal((8, 8, 2, 8)).astype(np.float32)

    def test_one_window_matches_global(self) -> None:
        """Give global attention when a single window covers the volume."""
        windowed = windowed_attention(self.volume, self.params, (8, 8, 2))

        expected = global_attention(self.volume, self.params, chunk=24)

        assert_allclose(windowed, expected, atol=1e-5)

    def test_windows_keep_volume_shape(self) -> None:
        """Return one output per token in grid order."""
        out = windowed_attention(self.volume, self.params, (4, 4, 2))

        self.assertEqual(out.shape, self.volume.shape)
        self.assertTrue(np.isfinite(out).all())


class BenchReportTests(unittest.TestCase):
    """Validate the timing report."""

    def setUp(self) -> None:
        """Run a quick benchmark on two small volumes."""
        self.report = bench_attention(sizes=(8, 16), window=(4, 4, 2), repeats=1)

    def test_rows_count_tokens_and_windows(self) -> None:
        """Record one row per size with its token and window counts."""
        rows = self.report.rows

        self.assertEqual([row.size for row in rows], [8, 16])
        self.assertEqual([row.tokens for row in rows], [128, 512])
        self.assertEqual([row.windows for row in rows], [4, 16])
        self.assertTrue(all(row.global_seconds > 0 for row in rows))

    def test_table_has_header(self) -> None:
        """Start the table with the column names."""
        lines = self.report.table().splitlines()

        self.assertEqual(lines[0], ";".join(BenchRow.__dataclass_fields__))
        self.assertEqual(len(lines), 4)
        self.assertTrue(lines[-1].startswith("# exponents"))

    def test_write_report(self) -> None:
        """Store the report as JSON."""
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "bench.json"

            write_report(self.report, path)
            stored = json.loads(path.read_text(encoding="utf-8"))

        self.assertEqual(stored["window"], [4, 4, 2])
        self.assertEqual(len(stored["rows"]), 2)


class BenchInputTests(unittest.TestCase):
    """Validate inputs and the growth fit."""

    def test_fit_exponent_of_square(self) -> None:
        """Recover the power of a power law."""
        sizes = [2.0, 4.0, 8.0, 16.0]

        slope = fit_exponent(sizes, [s**2 for s in sizes])

        self.assertAlmostEqual(slope, 2.0)

    def test_fit_needs_two_sizes(self) -> None:
        """Return NaN for a single size."""
        self.assertTrue(np.isnan(fit_exponent([4.0], [1.0])))

    def test_rejects_empty_sizes(self) -> None:
        """Refuse an empty size list."""
        with self.assertRaises(DomainError):
            bench_attention(sizes=())

    def test_rejects_zero_size(self) -> None:
        """Refuse non-positive sizes."""
        with self.assertRaises(DomainError):
            bench_attention(sizes=(0, 8))
