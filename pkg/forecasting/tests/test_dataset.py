import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from forecasting.services.dataset import (
    SeriesMatrix, SplitSpec, Standardizer, load_csv, load_manifest, make_windows, mask_block_mcar, mask_point_mcar,
    save_csv, split_chrono, standardize_fit_transform, window_batch,
)
from forecasting.services.errors import ConfigurationError, CsvParseError, DataError


def series_of(values, mask=None):
    values = np.asarray(values, dtype=float)
    return SeriesMatrix(values, np.ones_like(values, dtype=bool) if mask is None else mask)


def missing_runs(before, after):
    """(length, reaches_end) of every run that became missing, per sensor row"""
    runs = []
    for row in before & ~after:
        length = 0
        for flag in row:
            if flag:
                length += 1
            elif length:
                runs.append((length, False))
                length = 0
        if length:
            runs.append((length, True))
    return runs


class LoadCsvTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text, name='sensors.csv'):
        path = self.dir / name
        path.write_text(text)
        return path

    def test_two_sensors_three_rows(self):
        series = load_csv(self.write("a,b\n1,2\n3,4\n5,6\n"))
        self.assertEqual(series.values.shape, (2, 3))
        self.assertTrue(series.mask.all())
        assert_allclose(series.values[1], [2, 4, 6])
        self.assertEqual(series.sensors, ('a', 'b'))

    def test_nan_and_empty_cells_are_missing(self):
        series = load_csv(self.write("a,b\n1,NaN\n,4\n"))
        self.assertEqual(series.mask.tolist(), [[True, False], [False, True]])
        self.assertEqual(series.values[1, 0], 0.0)

    def test_trailing_comma(self):
        series = load_csv(self.write("a,b,\n1,2,\n"))
        self.assertEqual(series.values.shape, (2, 1))

    def test_trailing_comma_on_data_rows_only(self):
        series = load_csv(self.write("a,b\n1,2,\n3,4\n"))
        assert_allclose(series.values, [[1, 3], [2, 4]])

    def test_missing_tokens_in_any_case(self):
        series = load_csv(self.write("a,b,c\nNAN,nan,Nan\n1, 2 ,3\n"))
        self.assertEqual(series.mask[:, 0].tolist(), [False, False, False])
        assert_allclose(series.values[:, 1], [1, 2, 3])

    def test_ragged_row_names_line(self):
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(self.write("a,b\n1,2\n3\n"))
        self.assertEqual(ctx.exception.code, 'F004')
        self.assertEqual(ctx.exception.line, 3)

    def test_long_row_names_line(self):
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(self.write("a,b\n1,2\n3,4,5\n"))
        self.assertEqual((ctx.exception.code, ctx.exception.line), ('F004', 3))

    def test_lines_count_blank_lines(self):
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(self.write("a,b\n\n1,2\n\n3,oops\n"))
        self.assertEqual((ctx.exception.code, ctx.exception.line), ('F005', 5))

    def test_non_numeric_cell(self):
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(self.write("a,b\n1,2\n3,x\n"))
        self.assertEqual(ctx.exception.code, 'F005')
        self.assertIn("'x'", str(ctx.exception))

    def test_empty_file(self):
        with self.assertRaises(CsvParseError) as ctx:
            load_csv(self.write(""))
        self.assertEqual(ctx.exception.code, 'F006')

    def test_header_only(self):
        with self.assertRaises(CsvParseError):
            load_csv(self.write("a,b\n"))

    def test_duplicate_sensor_names(self):
        with self.assertRaises(CsvParseError):
            load_csv(self.write("a,a\n1,2\n"))

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_csv(self.dir / 'absent.csv')

    def test_save_then_load_keeps_mask(self):
        mask = np.array([[True, False, True]])
        path = save_csv(series_of([[1.5, 0.0, -2.0]], mask), self.dir / 'out.csv')
        loaded = load_csv(path)
        self.assertEqual(loaded.mask.tolist(), mask.tolist())
        assert_allclose(loaded.values, [[1.5, 0.0, -2.0]])

    def test_manifest_resolves_relative_path(self):
        self.write("a\n1\n2\n", name='data.csv')
        path = self.dir / 'manifest.json'
        path.write_text(json.dumps({'name': 'PeMSD8', 'path': 'data.csv', 'W': 6, 'nu': 3}))
        manifest = load_manifest(path)
        self.assertEqual(manifest.path, str(self.dir / 'data.csv'))
        self.assertEqual(manifest.split, (0.6, 0.2, 0.2))
        self.assertEqual((manifest.window, manifest.horizon), (6, 3))

    def test_manifest_unknown_key(self):
        path = self.dir / 'manifest.json'
        path.write_text(json.dumps({'name': 'x', 'path': 'x.csv', 'stride': 2}))
        with self.assertRaisesMessage(ConfigurationError, 'stride'):
            load_manifest(path)


class SplitTests(SimpleTestCase):
    def test_sixty_twenty_twenty(self):
        self.assertEqual(split_chrono(100, SplitSpec(0.6, 0.2, 0.2)), (range(0, 60), range(60, 80), range(80, 100)))

    def test_floor_rule(self):
        self.assertEqual(split_chrono(10, SplitSpec(0.7, 0.1, 0.2)), (range(0, 7), range(7, 8), range(8, 10)))

    def test_ranges_cover_series(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            fractions = rng.dirichlet([2.0, 1.0, 1.0])
            n_steps = int(rng.integers(10, 5000))
            train, val, test = split_chrono(n_steps, SplitSpec(*fractions[:2], 1.0 - fractions[0] - fractions[1]))
            self.assertEqual((train.start, train.stop, val.stop, test.stop), (0, val.start, test.start, n_steps))

    def test_fractions_must_sum_to_one(self):
        with self.assertRaises(ConfigurationError):
            SplitSpec(0.7, 0.2, 0.2)


class WindowTests(SimpleTestCase):
    def setUp(self):
        self.series = series_of(np.arange(200.0).reshape(2, 100))

    def test_window_counts(self):
        self.assertEqual(len(make_windows(self.series, range(0, 100), 12, 12)), 77)
        self.assertEqual(len(make_windows(self.series, range(0, 24), 12, 12)), 1)

    def test_short_range_warns(self):
        with self.assertLogs('forecasting.services.dataset', level='WARNING'):
            self.assertEqual(make_windows(self.series, range(0, 23), 12, 12), [])

    def test_inputs_precede_targets(self):
        batch = window_batch(self.series, range(10, 60), 5, 3)
        self.assertEqual(batch.anchors[0], 15)
        for sample in batch.samples():
            self.assertLess(sample.inputs[0].max(), sample.target[0].min())
            assert_allclose(sample.inputs[0], np.arange(sample.anchor - 5, sample.anchor))
            assert_allclose(sample.target[0], np.arange(sample.anchor, sample.anchor + 3))
        self.assertLessEqual(batch.anchors[-1] + 3, 60)

    def test_masked_inputs_are_zero_filled(self):
        mask = np.ones((2, 100), dtype=bool)
        mask[0, 3] = False
        batch = window_batch(series_of(np.arange(1.0, 201.0).reshape(2, 100), mask), range(0, 20), 5, 2)
        self.assertEqual(batch.inputs[0, 0, 3], 0.0)
        self.assertFalse(batch.input_mask[0, 0, 3])


class StandardizerTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.series = series_of(rng.normal(5.0, 3.0, size=(3, 120)))
        self.train = range(0, 84)

    def test_training_entries_are_unit_scaled(self):
        scaled, _ = standardize_fit_transform(self.series, self.train)
        block = scaled.values[:, :84]
        assert_allclose(block.mean(axis=1), 0.0, atol=1e-10)
        assert_allclose(block.std(axis=1), 1.0, atol=1e-10)

    def test_inverse_round_trip(self):
        scaler = Standardizer.fit(self.series, self.train)
        assert_allclose(scaler.inverse(scaler.transform(self.series.values)), self.series.values, atol=1e-10)

    def test_constant_sensor_maps_to_zero(self):
        scaler = Standardizer.fit(series_of(np.full((1, 10), 4.0)), range(0, 8))
        self.assertEqual(scaler.std[0], 1e-8)
        assert_allclose(scaler.transform(np.full((1, 3), 4.0)), 0.0)

    def test_statistics_ignore_test_range(self):
        before = Standardizer.fit(self.series, self.train)
        values = self.series.values.copy()
        values[:, 100:] += 1000.0
        after = Standardizer.fit(series_of(values), self.train)
        self.assertEqual(before.mean.tobytes(), after.mean.tobytes())
        self.assertEqual(before.std.tobytes(), after.std.tobytes())

    def test_statistics_use_observed_entries_only(self):
        values = np.array([[1.0, 3.0, 1000.0, 5.0]])
        mask = np.array([[True, True, False, True]])
        scaler = Standardizer.fit(series_of(values, mask), range(0, 4))
        self.assertAlmostEqual(scaler.mean[0], 3.0)

    def test_too_few_observations(self):
        mask = np.array([[True, False, False, False]])
        with self.assertRaisesMessage(DataError, "'s0'"):
            Standardizer.fit(series_of(np.ones((1, 4)), mask), range(0, 4))


class MaskingTests(SimpleTestCase):
    def setUp(self):
        self.series = series_of(np.random.default_rng(0).normal(size=(10, 100)))

    def test_point_ratio_zero(self):
        self.assertIs(mask_point_mcar(self.series, 0.0, seed=0), self.series)

    def test_point_exact_count(self):
        masked = mask_point_mcar(self.series, 0.3, seed=0)
        self.assertEqual(1000 - masked.observed_count, 300)

    def test_point_same_seed_same_mask(self):
        a = mask_point_mcar(self.series, 0.2, seed=5).mask
        b = mask_point_mcar(self.series, 0.2, seed=5).mask
        self.assertEqual(a.tolist(), b.tolist())

    def test_point_masks_are_nested(self):
        low = mask_point_mcar(self.series, 0.1, seed=3).mask
        high = mask_point_mcar(self.series, 0.4, seed=3).mask
        self.assertFalse(np.any(high & ~low))

    def test_point_never_unmasks(self):
        mask = np.ones((10, 100), dtype=bool)
        mask[:, :10] = False
        series = series_of(np.zeros((10, 100)), mask)
        masked = mask_point_mcar(series, 0.5, seed=0)
        self.assertFalse(np.any(masked.mask[:, :10]))
        self.assertEqual(masked.observed_count, 900 - 450)

    def test_ratio_must_be_below_one(self):
        with self.assertRaises(ConfigurationError):
            mask_point_mcar(self.series, 1.0, seed=0)

    def test_block_fraction_and_run_lengths(self):
        series = series_of(np.zeros((5, 200)))
        masked = mask_block_mcar(series, 0.3, (4, 8), seed=0)
        fraction = 1.0 - masked.observed_count / 1000
        self.assertGreaterEqual(fraction, 0.30)
        self.assertLessEqual(fraction, 0.34)
        # overlapping blocks merge, so runs only have a lower bound; clipped ones end the row
        runs = missing_runs(series.mask, masked.mask)
        self.assertTrue(runs)
        self.assertTrue(all(length >= 4 for length, reaches_end in runs if not reaches_end))

    def test_block_high_ratio(self):
        series = series_of(np.zeros((5, 200)))
        masked = mask_block_mcar(series, 0.9, (4, 8), seed=0)
        fraction = 1.0 - masked.observed_count / 1000
        self.assertGreaterEqual(fraction, 0.9)
        self.assertLess(fraction, 0.9 + 8 / 1000)

    def test_block_masks_are_nested(self):
        series = series_of(np.zeros((5, 200)))
        for seed in range(5):
            previous = series.mask
            for ratio in (0.1, 0.3, 0.5, 0.7, 0.9):
                mask = mask_block_mcar(series, ratio, (4, 8), seed=seed).mask
                self.assertFalse(np.any(mask & ~previous), (seed, ratio))
                previous = mask

    def test_block_skips_already_missing(self):
        mask = np.ones((4, 100), dtype=bool)
        mask[:, ::2] = False
        series = series_of(np.zeros((4, 100)), mask)
        masked = mask_block_mcar(series, 0.5, (2, 6), seed=1)
        self.assertFalse(np.any(masked.mask & ~mask))
        self.assertGreaterEqual(200 - masked.observed_count, 100)
        self.assertLess(200 - masked.observed_count, 100 + 6)

    def test_block_ratio_zero(self):
        self.assertIs(mask_block_mcar(self.series, 0.0, (4, 8), seed=0), self.series)

    def test_block_range_validation(self):
        with self.assertRaises(ConfigurationError):
            mask_block_mcar(self.series, 0.2, (8, 4), seed=0)
        with self.assertRaises(ConfigurationError):
            mask_block_mcar(self.series, 0.2, (4, 101), seed=0)
