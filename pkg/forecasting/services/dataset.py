"""
Sensor series ingestion and window construction

Loads N x T sensor matrices from CSV, splits them chronologically, fits a
per-sensor z-score on the training range, cuts sliding windows and simulates
point/block missingness completely at random.
"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, CsvParseError, DataError
from .numerics import SeedBank

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
SPLIT_TOLERANCE = 1e-9
# empty cells and nan in any letter case
MISSING_TOKENS = ('',) + tuple(''.join(letters) for letters in itertools.product('nN', 'aA', 'nN'))
DEFAULT_BLOCK_LENGTHS = (4, 8)


@dataclass(frozen=True)
class DatasetInfo:
    nodes: int
    timesteps: int
    time_range: str
    split: Tuple[float, float, float]
    granularity: str = '5min'


# Traffic benchmarks, 5-minute averages
DATASET_CATALOG: Dict[str, DatasetInfo] = {
    'PeMSD3': DatasetInfo(358, 26208, '09/2018 - 11/2018', (0.6, 0.2, 0.2)),
    'PeMSD4': DatasetInfo(307, 16992, '01/2018 - 02/2018', (0.6, 0.2, 0.2)),
    'PeMSD7': DatasetInfo(883, 28224, '05/2017 - 08/2017', (0.6, 0.2, 0.2)),
    'PeMSD8': DatasetInfo(170, 17856, '07/2016 - 08/2016', (0.6, 0.2, 0.2)),
    'PeMSD7(M)': DatasetInfo(228, 12672, '05/2012 - 06/2012', (0.6, 0.2, 0.2)),
    'METR-LA': DatasetInfo(207, 34272, '03/2012 - 06/2012', (0.7, 0.1, 0.2)),
    'PEMS-BAY': DatasetInfo(325, 52116, '01/2017 - 05/2017', (0.7, 0.1, 0.2)),
}


@dataclass(frozen=True, eq=False)
class SeriesMatrix:
    """
    N sensors x T timesteps; ``mask`` is True where a value was observed

    Masked positions hold 0.0 as a placeholder.
    """

    values: np.ndarray
    mask: np.ndarray
    name: str = 'series'
    granularity: str = '5min'
    sensors: Tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be equal N x T shapes")
        if not np.all(np.isfinite(values[mask])):
            raise DataError("observed values must be finite")
        values = np.where(mask, values, 0.0)
        values.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mask', mask)
        if not self.sensors:
            object.__setattr__(self, 'sensors', tuple(f"s{i}" for i in range(values.shape[0])))
        elif len(self.sensors) != values.shape[0]:
            raise DataError(f"{len(self.sensors)} sensor names for {values.shape[0]} rows")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())

    def with_mask(self, mask: np.ndarray) -> 'SeriesMatrix':
        return SeriesMatrix(self.values, mask, self.name, self.granularity, self.sensors)

    def with_values(self, values: np.ndarray) -> 'SeriesMatrix':
        return SeriesMatrix(values, self.mask, self.name, self.granularity, self.sensors)


def _drop_trailing_empty(fields: List[str]):
    # rows with one field more than the header reach here; a trailing comma is tolerated
    return fields[:-1] if fields[-1] in ('', None) else fields


def load_csv(path, name: str = None, granularity: str = '5min') -> SeriesMatrix:
    """
    Parse a sensor CSV: header row of sensor names, one row per timestep

    Empty cells and ``nan`` mark missing entries. A single trailing comma per
    row is tolerated.

    Raises:
        CsvParseError: F006 empty file, F004 ragged row, F005 non-numeric cell,
            each with the 1-based source line
    """

    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except FileNotFoundError as exc:
        raise DataError(f"dataset file not found: {path}") from exc

    lines = pd.Series(text.splitlines(), dtype=object)
    lines = lines[lines.str.strip() != '']
    if lines.empty:
        raise CsvParseError("file is empty", line=1, code='F006')

    # index + 1 is the source line of every row pandas keeps
    source_lines = lines.index.to_numpy() + 1
    fields = lines.str.count(',').to_numpy() + 1
    trailing = lines.str.rstrip().str.endswith(',').to_numpy()
    width = int(fields[0] - trailing[0])
    ragged = ~((fields == width) | ((fields == width + 1) & trailing))
    if ragged.any():
        row = int(np.argmax(ragged))
        raise CsvParseError(f"expected {width} fields, got {fields[row]}", line=int(source_lines[row]), code='F004')

    try:
        raw = pd.read_csv(path, encoding='utf-8', header=None, dtype=str, keep_default_na=False,
                          na_values=list(MISSING_TOKENS), skipinitialspace=True, skip_blank_lines=True,
                          engine='python', on_bad_lines=_drop_trailing_empty)
    except pd.errors.EmptyDataError as exc:
        raise CsvParseError("file is empty", line=1, code='F006') from exc
    except pd.errors.ParserError as exc:
        raise CsvParseError(f"malformed CSV: {exc}", code='F004') from exc
    raw = raw.iloc[:, :width]

    header = raw.iloc[0]
    if header.isna().any() or (header.str.strip() == '').any():
        raise CsvParseError("header must name every sensor", line=1, code='F006')
    header = header.str.strip().tolist()
    if len(set(header)) != len(header):
        raise CsvParseError("duplicate sensor names in header", line=1, code='F004')

    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = header
    if frame.empty:
        raise CsvParseError("no data rows after the header", line=2, code='F006')
    if frame.shape[0] != len(source_lines) - 1:
        raise DataError(f"{path}: parsed {frame.shape[0]} rows from {len(source_lines) - 1} data lines")

    missing = frame.isna()
    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors='coerce'))
    bad = (numeric.isna() | ~np.isfinite(numeric.fillna(0.0))) & ~missing

    if bad.to_numpy().any():
        row_idx, col_idx = np.argwhere(bad.to_numpy())[0]
        raise CsvParseError(
            f"sensor {header[col_idx]!r} has non-numeric value {frame.iat[row_idx, col_idx].strip()!r}",
            line=int(source_lines[row_idx + 1]), code='F005',
        )

    observed = ~missing.to_numpy()
    values = numeric.fillna(0.0).to_numpy(dtype=np.float64)
    logger.info("loaded %s: %d sensors x %d steps, %.1f%% observed",
                path.name, width, frame.shape[0], 100.0 * observed.mean())
    return SeriesMatrix(values.T, observed.T, name or path.stem, granularity, tuple(header))


def save_csv(series: SeriesMatrix, path) -> Path:
    """Write ``series`` in the load_csv format, masked entries as ``nan``"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.where(series.mask, series.values, np.nan).T, columns=list(series.sensors))
    frame.to_csv(path, index=False, na_rep='nan', float_format='%.6f')
    return path


@dataclass
class DatasetManifest:
    name: str
    path: str
    granularity: str = '5min'
    split: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    window: int = 12
    horizon: int = 12


def load_manifest(path) -> DatasetManifest:
    """
    Read a {name, path, granularity, split, W, nu} manifest

    A relative ``path`` is resolved against the manifest's directory. When
    ``split`` is omitted and ``name`` is a catalogued benchmark, its split is
    used.
    """

    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: manifest is not valid JSON ({exc})") from exc

    allowed = {'name', 'path', 'granularity', 'split', 'W', 'nu'}
    unknown = sorted(set(document) - allowed)
    if unknown:
        raise ConfigurationError(f"{path}: unknown manifest keys {unknown}")
    if 'name' not in document or 'path' not in document:
        raise ConfigurationError(f"{path}: manifest needs 'name' and 'path'")

    name = document['name']
    default_split = DATASET_CATALOG[name].split if name in DATASET_CATALOG else DatasetManifest.split
    data_path = Path(document['path'])
    if not data_path.is_absolute():
        data_path = path.parent / data_path

    return DatasetManifest(
        name=name,
        path=str(data_path),
        granularity=document.get('granularity', '5min'),
        split=tuple(document.get('split', default_split)),
        window=int(document.get('W', 12)),
        horizon=int(document.get('nu', 12)),
    )


# Splitting

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if any(f <= 0 for f in fractions):
            raise ConfigurationError(f"split fractions must be positive, got {fractions}")
        if abs(sum(fractions) - 1.0) > SPLIT_TOLERANCE:
            raise ConfigurationError(f"split fractions must sum to 1, got {sum(fractions)!r}")

    @classmethod
    def from_sequence(cls, fractions: Sequence[float]) -> 'SplitSpec':
        if len(fractions) != 3:
            raise ConfigurationError(f"split needs three fractions, got {list(fractions)}")
        return cls(*(float(f) for f in fractions))


def split_chrono(series: Union[SeriesMatrix, int], spec: SplitSpec) -> Tuple[range, range, range]:
    """
    Contiguous train/val/test ranges over [0, T)

    Boundaries are floor(T * cumulative fraction).
    """

    n_steps = series.n_steps if isinstance(series, SeriesMatrix) else int(series)
    first = math.floor(n_steps * spec.train + SPLIT_TOLERANCE)
    second = math.floor(n_steps * (spec.train + spec.val) + SPLIT_TOLERANCE)
    second = min(max(second, first), n_steps)
    return range(0, first), range(first, second), range(second, n_steps)


# Standardization

@dataclass
class Standardizer:
    """Per-sensor z-score fitted on observed training entries only"""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    std: np.ndarray = field(default_factory=lambda: np.ones(0))

    @classmethod
    def fit(cls, series: SeriesMatrix, train_range: range) -> 'Standardizer':
        values = series.values[:, train_range.start:train_range.stop]
        mask = series.mask[:, train_range.start:train_range.stop]

        means = np.zeros(series.n_sensors)
        stds = np.ones(series.n_sensors)
        for n in range(series.n_sensors):
            observed = values[n][mask[n]]
            if observed.size < 2:
                raise DataError(f"sensor {series.sensors[n]!r} has {observed.size} observed training values, "
                                f"need at least 2")
            means[n] = observed.mean()
            stds[n] = max(float(observed.std()), STD_FLOOR)
        return cls(means, stds)

    def _column(self, stat: np.ndarray, values: np.ndarray) -> np.ndarray:
        if values.ndim < 2 or values.shape[-2] != stat.size:
            raise DataError(f"standardizer fitted for {stat.size} sensors, got array of shape {values.shape}")
        return stat[:, None]

    def transform(self, values: np.ndarray, mask: np.ndarray = None) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        out = (values - self._column(self.mean, values)) / self._column(self.std, values)
        if mask is not None:
            out = np.where(mask, out, 0.0)
        return out

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """(..., N, k) standardized values back to original units"""
        values = np.asarray(values, dtype=np.float64)
        return values * self._column(self.std, values) + self._column(self.mean, values)

    def inverse_variance(self, sigma2: np.ndarray) -> np.ndarray:
        sigma2 = np.asarray(sigma2, dtype=np.float64)
        return sigma2 * self._column(self.std, sigma2) ** 2

    def transform_series(self, series: SeriesMatrix) -> SeriesMatrix:
        return series.with_values(self.transform(series.values, series.mask))

    def to_dict(self) -> dict:
        return {'mean': self.mean.tolist(), 'std': self.std.tolist()}

    @classmethod
    def from_dict(cls, document: dict) -> 'Standardizer':
        return cls(np.asarray(document['mean'], dtype=np.float64), np.asarray(document['std'], dtype=np.float64))


def standardize_fit_transform(series: SeriesMatrix, train_range: range) -> Tuple[SeriesMatrix, Standardizer]:
    standardizer = Standardizer.fit(series, train_range)
    return standardizer.transform_series(series), standardizer


# Windows

@dataclass
class WindowSample:
    inputs: np.ndarray
    input_mask: np.ndarray
    target: np.ndarray
    target_mask: np.ndarray
    anchor: int


@dataclass
class WindowBatch:
    """
    Stacked windows

    inputs / input_mask: (B, N, W)
    targets / target_mask: (B, N, nu)
    anchors: (B,) first target timestep of each window
    """

    inputs: np.ndarray
    input_mask: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    anchors: np.ndarray

    def __len__(self) -> int:
        return int(self.anchors.shape[0])

    def subset(self, indices) -> 'WindowBatch':
        indices = np.asarray(indices, dtype=np.int64)
        return WindowBatch(self.inputs[indices], self.input_mask[indices], self.targets[indices],
                           self.target_mask[indices], self.anchors[indices])

    def samples(self) -> List[WindowSample]:
        return [
            WindowSample(self.inputs[i], self.input_mask[i], self.targets[i], self.target_mask[i],
                         int(self.anchors[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_samples(cls, samples: Sequence[WindowSample]) -> 'WindowBatch':
        if not samples:
            raise DataError("cannot batch an empty list of windows")
        return cls(
            np.stack([s.inputs for s in samples]),
            np.stack([s.input_mask for s in samples]),
            np.stack([s.target for s in samples]),
            np.stack([s.target_mask for s in samples]),
            np.asarray([s.anchor for s in samples], dtype=np.int64),
        )


def window_batch(series: SeriesMatrix, span: range, window: int, horizon: int) -> WindowBatch:
    """
    Every stride-1 window inside ``span`` as one batch

    Anchor t covers inputs [t - W, t) and targets [t, t + nu). Masked inputs
    are zero-filled.
    """

    if window < 1 or horizon < 1:
        raise ConfigurationError(f"window and horizon must be >= 1, got W={window} nu={horizon}")

    n = series.n_sensors
    count = len(span) - window - horizon + 1
    if count <= 0:
        logger.warning("range [%d, %d) is too short for W=%d, nu=%d: no windows",
                       span.start, span.stop, window, horizon)
        empty = np.zeros((0, n, window))
        return WindowBatch(empty, empty.astype(bool), np.zeros((0, n, horizon)),
                           np.zeros((0, n, horizon), dtype=bool), np.zeros(0, dtype=np.int64))

    values = np.where(series.mask, series.values, 0.0)[:, span.start:span.stop]
    mask = series.mask[:, span.start:span.stop]
    length = window + horizon

    # (N, count, W + nu) -> (count, N, W + nu)
    value_windows = np.moveaxis(sliding_window_view(values, length, axis=1), 1, 0)
    mask_windows = np.moveaxis(sliding_window_view(mask, length, axis=1), 1, 0)

    return WindowBatch(
        inputs=np.ascontiguousarray(value_windows[..., :window]),
        input_mask=np.ascontiguousarray(mask_windows[..., :window]),
        targets=np.ascontiguousarray(value_windows[..., window:]),
        target_mask=np.ascontiguousarray(mask_windows[..., window:]),
        anchors=np.arange(span.start + window, span.start + window + count, dtype=np.int64),
    )


def make_windows(series: SeriesMatrix, span: range, window: int, horizon: int) -> List[WindowSample]:
    """len(span) - W - nu + 1 samples; an empty list (with a warning) when the span is too short"""
    return window_batch(series, span, window, horizon).samples()


# Missingness

def _check_ratio(ratio: float):
    if not 0.0 <= ratio < 1.0:
        raise ConfigurationError(f"missing ratio must be in [0, 1), got {ratio}")


def mask_point_mcar(series: SeriesMatrix, ratio: float, seed: int) -> SeriesMatrix:
    """
    Hide exactly round(ratio * observed) observed entries, uniformly at random

    One permutation of the observed entries is drawn per seed and the first k
    are hidden, so a larger ratio hides a superset of a smaller one.
    """

    _check_ratio(ratio)
    observed = np.flatnonzero(series.mask)
    count = int(round(ratio * observed.size))
    if count == 0:
        return series

    order = SeedBank(seed).fresh('mask.point').permutation(observed)
    mask = series.mask.copy().ravel()
    mask[order[:count]] = False
    return series.with_mask(mask.reshape(series.mask.shape))


def mask_block_mcar(series: SeriesMatrix, ratio: float, block_lengths: Tuple[int, int] = DEFAULT_BLOCK_LENGTHS,
                    seed: int = 0) -> SeriesMatrix:
    """
    Hide contiguous blocks until the newly-missing share of observed entries reaches ``ratio``

    Each block picks a sensor, a start and a length in ``block_lengths``
    uniformly; blocks are clipped at the end of the series and may overlap
    earlier ones. The loop stops at the first block that reaches the target, so
    it overshoots by less than one block, and a larger ratio under the same
    seed hides a superset of a smaller one.

    Raises:
        ConfigurationError: Block range outside [1, T]
    """

    _check_ratio(ratio)
    low, high = block_lengths
    n_sensors, n_steps = series.mask.shape
    if not 1 <= low <= high <= n_steps:
        raise ConfigurationError(f"block lengths must satisfy 1 <= min <= max <= T={n_steps}, got {block_lengths}")

    target = ratio * series.observed_count
    if target <= 0:
        return series

    rng = SeedBank(seed).fresh('mask.block')
    hidden = np.zeros_like(series.mask)
    newly_missing = 0

    while newly_missing < target:
        sensor = int(rng.integers(n_sensors))
        start = int(rng.integers(n_steps))
        length = int(rng.integers(low, high + 1))
        stop = min(start + length, n_steps)
        newly_missing += int((series.mask[sensor, start:stop] & ~hidden[sensor, start:stop]).sum())
        hidden[sensor, start:stop] = True

    return series.with_mask(series.mask & ~hidden)


__all__ = [
    'DATASET_CATALOG', 'DatasetInfo', 'DatasetManifest', 'SeriesMatrix', 'SplitSpec', 'Standardizer',
    'WindowBatch', 'WindowSample', 'load_csv', 'load_manifest', 'make_windows', 'mask_block_mcar',
    'mask_point_mcar', 'save_csv', 'split_chrono', 'standardize_fit_transform', 'window_batch',
]
