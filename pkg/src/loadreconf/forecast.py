"""Load time series handling, sliding-window datasets and forecast metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import check_matching_1d


class SeriesError(ValueError):
    pass


@dataclass(frozen=True)
class LoadSeries:
    timestamps: np.ndarray  # datetime64[ns], UTC
    values: np.ndarray  # kW
    resolution: np.timedelta64

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[ns]")
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        if ts.shape != vals.shape or ts.ndim != 1:
            raise SeriesError("timestamps and values must be 1-D and equally long")
        if len(ts) >= 2:
            steps = np.diff(ts)
            if np.any(steps <= np.timedelta64(0, "ns")):
                raise SeriesError("timestamps must be strictly increasing")
            if np.any(steps != self.resolution):
                bad = int(np.flatnonzero(steps != self.resolution)[0])
                raise SeriesError(
                    f"missing or irregular sample after {pd.Timestamp(ts[bad]).isoformat()}"
                )
        if not np.all(np.isfinite(vals)):
            raise SeriesError("load values must be finite")
        if np.any(vals < 0):
            raise SeriesError("load values must be non-negative")

    def __len__(self):
        return len(self.values)

    def steps(self, lead: pd.Timedelta | str) -> int:
        """Number of samples spanned by a lead time such as ``"1h"``."""
        lead = pd.Timedelta(lead).to_timedelta64()
        n, rem = divmod(lead, self.resolution)
        if rem != np.timedelta64(0, "ns") or n < 1:
            raise SeriesError(f"lead time {lead} is not a positive multiple of the resolution")
        return int(n)

    def shifted(self, offset: float) -> "LoadSeries":
        return LoadSeries(self.timestamps, self.values + offset, self.resolution)

    def downsample(self, factor: int) -> "LoadSeries":
        """Average consecutive blocks of ``factor`` samples; a ragged tail is dropped."""
        factor = int(factor)
        if factor < 1:
            raise SeriesError("downsample factor must be >= 1")
        n = len(self) // factor
        if n < 1:
            raise SeriesError(f"series of {len(self)} samples is shorter than one block")
        blocks = self.values[: n * factor].reshape(n, factor)
        return LoadSeries(self.timestamps[: n * factor : factor], blocks.mean(axis=1),
                          self.resolution * factor)


def read_load_csv(path) -> LoadSeries:
    """Read a ``timestamp,kw`` CSV with RFC 3339 timestamps. Gaps are rejected."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"kw": float})
    except (ValueError, pd.errors.ParserError) as exc:
        raise SeriesError(f"{path}: {exc}") from exc
    if list(frame.columns) != ["timestamp", "kw"]:
        raise SeriesError(f"{path}: header must be 'timestamp,kw', got {','.join(frame.columns)}")
    if frame["kw"].isna().any():
        row = int(frame["kw"].isna().to_numpy().nonzero()[0][0]) + 2
        raise SeriesError(f"{path}: line {row}: missing kw value")
    try:
        ts = pd.to_datetime(frame["timestamp"], utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise SeriesError(f"{path}: bad timestamp: {exc}") from exc
    if len(ts) < 2:
        raise SeriesError(f"{path}: need at least two samples")
    ts = ts.dt.tz_convert(None).to_numpy(dtype="datetime64[ns]")
    resolution = ts[1] - ts[0]
    return LoadSeries(ts, frame["kw"].to_numpy(), resolution)


def write_load_csv(series: LoadSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "kw"])
        for t, v in zip(series.timestamps, series.values):
            w.writerow([pd.Timestamp(t).strftime("%Y-%m-%dT%H:%M:%SZ"), f"{v:.6f}"])


def synthetic_load_series(
    days: float = 4,
    resolution_minutes: float = 5,
    base_kw: float = 1000.0,
    amplitude: float = 0.3,
    noise: float = 0.01,
    seed: int = 0,
    start: str = "2024-01-01T00:00:00",
) -> LoadSeries:
    """Daily sinusoidal feeder load with multiplicative Gaussian noise."""
    n = int(round(days * 24 * 60 / resolution_minutes))
    res = np.timedelta64(int(resolution_minutes * 60), "s").astype("timedelta64[ns]")
    ts = np.datetime64(start, "ns") + np.arange(n) * res
    hours = np.arange(n) * resolution_minutes / 60.0
    clean = base_kw * (1.0 + amplitude * np.sin(2 * np.pi * (hours - 9.0) / 24.0))
    rng = np.random.default_rng(seed)
    values = clean * (1.0 + noise * rng.standard_normal(n))
    return LoadSeries(ts, np.round(values, 6), res)


# ---------------------------------------------------------------- windowing

@dataclass(frozen=True)
class WindowSpec:
    lag_count: int = 12
    horizon: int = 12  # samples between the last lag and the target
    stride: int = 1

    def __post_init__(self):
        if self.lag_count < 1:
            raise ValueError("lag_count must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be at least one sample")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    @classmethod
    def for_lead_time(cls, series: LoadSeries, lead="1h", lag_count=12, stride=1) -> "WindowSpec":
        return cls(lag_count=lag_count, horizon=series.steps(lead), stride=stride)


@dataclass
class WindowedDataset:
    X: np.ndarray  # (n, lag_count) lagged loads, oldest first
    y: np.ndarray  # (n,) target loads
    origins: np.ndarray  # index of the newest lag per sample
    feature_times: np.ndarray  # (n, lag_count)
    target_times: np.ndarray  # (n,)
    spec: WindowSpec

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "WindowedDataset":
        return WindowedDataset(self.X[idx], self.y[idx], self.origins[idx],
                               self.feature_times[idx], self.target_times[idx], self.spec)


def build_windows(series, spec: WindowSpec) -> WindowedDataset:
    """Supervised samples: lags ``values[t-lag+1 .. t]`` predict ``values[t+horizon]``.

    ``series`` may be a :class:`LoadSeries` or a plain 1-D array (sample
    indices then stand in for timestamps).
    """
    if isinstance(series, LoadSeries):
        values, times = series.values, series.timestamps
    else:
        values = np.asarray(series, dtype=float)
        times = np.arange(len(values))
    n = len(values)
    first = spec.lag_count - 1
    last = n - 1 - spec.horizon
    if last < first:
        raise SeriesError(
            f"series too short: {n} samples, need at least {spec.lag_count + spec.horizon}"
        )
    origins = np.arange(first, last + 1, spec.stride)
    lag_idx = origins[:, None] + np.arange(-spec.lag_count + 1, 1)[None, :]
    tgt_idx = origins + spec.horizon
    return WindowedDataset(
        X=values[lag_idx],
        y=values[tgt_idx],
        origins=origins,
        feature_times=times[lag_idx],
        target_times=times[tgt_idx],
        spec=spec,
    )


def assert_no_leakage(ds: WindowedDataset) -> None:
    """Raise if any feature timestamp is not strictly before its target timestamp."""
    if len(ds) and not np.all(ds.feature_times < ds.target_times[:, None]):
        raise AssertionError("feature window overlaps its target")


def chronological_split(ds: WindowedDataset, train_to_test: float = 5.0):
    """Split into (train, test) keeping time order, train ``train_to_test`` times larger.

    Samples whose target falls inside the test block's feature range are
    dropped from the training side so the blocks stay disjoint in time.
    """
    n = len(ds)
    n_test = int(round(n / (1.0 + train_to_test)))
    if n_test < 1 or n - n_test < 2:
        raise SeriesError(f"dataset of {n} samples is too small to split")
    cut = n - n_test
    test = ds.subset(slice(cut, n))
    first_test_time = test.feature_times[0, 0]
    keep = np.flatnonzero(ds.target_times[:cut] < first_test_time)
    if len(keep) < 2:
        raise SeriesError("too few training samples after removing overlap")
    return ds.subset(keep), test


class LagFeatures(TransformerMixin, BaseEstimator):
    """Transformer turning a 1-D load series into its lag matrix (no targets)."""

    def __init__(self, lag_count: int = 12, stride: int = 1):
        self.lag_count = lag_count
        self.stride = stride

    def fit(self, X, y=None):
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        values = np.asarray(X, dtype=float).ravel()
        if len(values) < self.lag_count:
            raise SeriesError("series shorter than lag_count")
        origins = np.arange(self.lag_count - 1, len(values), self.stride)
        return values[origins[:, None] + np.arange(-self.lag_count + 1, 1)[None, :]]


@dataclass
class ForecastResult:
    actual: np.ndarray
    predicted: np.ndarray
    target_times: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "actual_kw", "predicted_kw"])
            for t, a, p in zip(self.target_times, self.actual, self.predicted):
                stamp = pd.Timestamp(t).strftime("%Y-%m-%dT%H:%M:%SZ") if np.issubdtype(
                    np.asarray(self.target_times).dtype, np.datetime64) else str(t)
                w.writerow([stamp, f"{a:.6f}", f"{p:.6f}"])


def sliding_forecast(series, model, spec: WindowSpec) -> ForecastResult:
    """Predict every window's target from data up to its origin only."""
    ds = build_windows(series, spec)
    n_in = getattr(model, "n_features_in_", spec.lag_count)
    if n_in != spec.lag_count:
        raise ValueError(
            f"model expects {n_in} lag features, window spec provides {spec.lag_count}"
        )
    assert_no_leakage(ds)
    return ForecastResult(ds.y, np.asarray(model.predict(ds.X), dtype=float), ds.target_times)


# ---------------------------------------------------------------- metrics

def mape(actuals, predictions) -> float:
    """Mean absolute percentage error, in percent."""
    a, p = check_matching_1d(actuals, predictions)
    if np.any(a == 0):
        raise ZeroDivisionError("MAPE undefined with zero actual values")
    return float(100.0 * np.mean(np.abs(a - p) / np.abs(a)))


def nrmse(actuals, predictions) -> float:
    """Root-mean-square error normalised by the mean actual, in percent."""
    a, p = check_matching_1d(actuals, predictions)
    mean = np.mean(a)
    if mean <= 0:
        raise ZeroDivisionError("NRMSE undefined for non-positive mean actual")
    return float(100.0 * np.sqrt(np.mean((a - p) ** 2)) / mean)


def relative_errors(actuals, predictions) -> np.ndarray:
    a, p = check_matching_1d(actuals, predictions)
    if np.any(a == 0):
        raise ZeroDivisionError("relative error undefined with zero actual values")
    return 100.0 * (p - a) / a


@dataclass
class ErrorDistribution:
    counts: np.ndarray
    edges: np.ndarray
    band: float
    coverage: float

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "count"])
            for c, n in zip(self.centers, self.counts):
                w.writerow([f"{c:.6g}", int(n)])


def error_distribution(actuals, predictions, bins=None, band: float = 3.1) -> ErrorDistribution:
    """Histogram of percentage errors plus the fraction inside ``(-band, band)``.

    The default bins are 1 %-wide and centred on zero, wide enough to hold
    every error, so the zero bin collects exact forecasts.
    """
    err = relative_errors(actuals, predictions)
    if err.size == 0:
        raise ValueError("no errors to summarise")
    if bins is None:
        half = max(1, int(np.ceil(np.max(np.abs(err)) + 0.5)))
        bins = np.arange(-half - 0.5, half + 0.5 + 1e-9, 1.0)
    counts, edges = np.histogram(err, bins=bins)
    if counts.sum() != err.size:  # explicit bins may clip outliers; fold them into end bins
        counts[0] += np.sum(err < edges[0])
        counts[-1] += np.sum(err > edges[-1])
    coverage = float(np.mean(np.abs(err) < band))
    return ErrorDistribution(counts, edges, band, coverage)


@dataclass
class ForecastMetrics:
    mape: float
    nrmse: float
    coverage_band: float
    band: float
    error_histogram: list = field(default_factory=list)  # [(bin_center, count), ...]
    n_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def evaluate(actuals, predictions, band: float = 3.1) -> ForecastMetrics:
    dist = error_distribution(actuals, predictions, band=band)
    return ForecastMetrics(
        mape=mape(actuals, predictions),
        nrmse=nrmse(actuals, predictions),
        coverage_band=dist.coverage,
        band=band,
        error_histogram=[(float(c), int(n)) for c, n in zip(dist.centers, dist.counts)],
        n_samples=int(len(np.asarray(actuals))),
    )
