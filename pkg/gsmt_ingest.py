"""
GPS ingestion: parse, clean, resample, impute, normalize, window and split.

Raw fixes arrive as CSV with header ``bus_id,timestamp,lat,lon,speed_kmh``.
Cleaning removes fixes outside a bounding box and fixes implying an
impossible speed from the previous kept fix. Resampling puts every bus on
one shared time grid, averaging raw fixes over a centered window; grid
instants without fixes are marked unobserved and filled by ``impute``.
"""

import io
import logging
import math
from dataclasses import dataclass, field
from itertools import groupby
from typing import BinaryIO, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from gsmt_errors import (
    CannotImputeError,
    ConfigError,
    ContractError,
    EmptyAfterCleanError,
    EmptyInputError,
    FormatError,
    StateError,
    TooFewWindowsError,
)
from gsmt_geo import haversine_m

logger = logging.getLogger("gsmt.ingest")

CSV_COLUMNS = ("bus_id", "timestamp", "lat", "lon", "speed_kmh")
FEATURES = ("lat", "lon", "speed")


@dataclass(frozen=True)
class GpsRecord:
    """One raw GPS fix"""

    bus_id: str
    timestamp: float
    lat: float
    lon: float
    speed: float


@dataclass
class CleanConfig:
    """Outlier rules: bounding box, implied-speed cap, minimum fixes per bus"""

    bbox: Tuple[float, float, float, float] = (2.9, 3.4, 101.4, 101.9)
    max_speed: float = 120.0
    min_fixes_per_bus: int = 10

    def validate(self):
        lat_min, lat_max, lon_min, lon_max = self.bbox
        if not (lat_min < lat_max and lon_min < lon_max):
            raise ConfigError(f"ingest.bbox must be (lat_min, lat_max, lon_min, lon_max) well-ordered, got {self.bbox}")
        if self.max_speed <= 0:
            raise ConfigError(f"ingest.max_speed must be > 0, got {self.max_speed}")


@dataclass
class CleanReport:
    raw: int = 0
    kept: int = 0
    dropped: Dict[str, int] = field(default_factory=lambda: {"bbox": 0, "speed": 0, "sparse_bus": 0})

    def to_dict(self) -> Dict:
        return {"raw": self.raw, "kept": self.kept, "dropped": dict(self.dropped)}


@dataclass
class ResampledSeries:
    """Grid-aligned (lat, lon, speed) frames of one bus; NaN where unobserved until imputed"""

    bus_id: str
    grid_start: float
    grid_step: float
    frames: np.ndarray
    observed_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    def times(self) -> np.ndarray:
        return self.grid_start + self.grid_step * np.arange(len(self))


@dataclass
class NormStats:
    """Per-feature min/max over the training portion (lat, lon, speed)"""

    mins: np.ndarray
    maxs: np.ndarray

    def to_dict(self) -> Dict:
        return {"mins": [float(x) for x in self.mins], "maxs": [float(x) for x in self.maxs]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormStats":
        return cls(np.asarray(data["mins"], dtype=np.float64), np.asarray(data["maxs"], dtype=np.float64))


@dataclass
class WindowSample:
    """One input/target window across all buses.

    input_frames: L_in x N x 3 normalized; target_frames: L_out x N x 2
    normalized; input_raw: L_in x N x 3 in degrees and km/h.
    """

    input_frames: np.ndarray
    target_frames: np.ndarray
    input_raw: np.ndarray
    window_start_time: float
    frame_times: np.ndarray
    offset: int

    @property
    def n_in(self) -> int:
        return int(self.input_frames.shape[0])

    def input_start(self) -> float:
        return float(self.frame_times[0])

    def target_end(self) -> float:
        return float(self.frame_times[-1])


@dataclass
class DatasetSplit:
    train: List[WindowSample]
    validation: List[WindowSample]
    test: List[WindowSample]
    boundaries: Tuple[int, int] = (0, 0)
    dropped: Dict[str, int] = field(default_factory=lambda: {"validation": 0, "test": 0})


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _parse_timestamps(values: pd.Series) -> pd.Series:
    seconds = pd.to_numeric(values, errors="coerce")
    text = seconds.isna()
    if text.any():
        parsed = pd.to_datetime(values[text], utc=True, errors="coerce", format="ISO8601")
        seconds = seconds.astype("float64")
        seconds[text] = (parsed - pd.Timestamp("1970-01-01", tz="UTC")) / pd.Timedelta(seconds=1)
    return seconds


def parse_gps_csv(stream: Union[bytes, BinaryIO]) -> List[GpsRecord]:
    """Parse a GPS CSV into records sorted by (bus_id, timestamp).

    Timestamps are Unix seconds or ISO-8601. Exact duplicates of
    (bus_id, timestamp) collapse to the first occurrence in the file.

    Raises:
        EmptyInputError: no header or no data rows
        FormatError: a required column is missing or a row does not parse
    """
    raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    try:
        df = pd.read_csv(io.BytesIO(raw), dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyInputError("GPS CSV is empty") from None
    except (UnicodeDecodeError, pd.errors.ParserError) as e:
        raise FormatError(f"GPS CSV could not be read: {e}") from None

    df.columns = [c.strip() for c in df.columns]
    for column in CSV_COLUMNS:
        if column not in df.columns:
            raise FormatError(f"GPS CSV is missing column '{column}'")
    if df.empty:
        raise EmptyInputError("GPS CSV has a header but no rows")

    bus = df["bus_id"].str.strip()
    ts = _parse_timestamps(df["timestamp"].str.strip())
    lat = pd.to_numeric(df["lat"], errors="coerce")
    lon = pd.to_numeric(df["lon"], errors="coerce")
    speed = pd.to_numeric(df["speed_kmh"], errors="coerce")

    bad = (bus == "") | ts.isna() | lat.isna() | lon.isna() | speed.isna()
    bad |= ~np.isfinite(ts.fillna(0)) | ~np.isfinite(lat.fillna(0)) | ~np.isfinite(lon.fillna(0))
    bad |= (lat.abs() > 90) | (lon.abs() > 180) | (speed < 0) | ~np.isfinite(speed.fillna(0))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise FormatError(f"line {row + 2}: unparseable GPS row {df.iloc[row].tolist()}")

    parsed = pd.DataFrame({"bus_id": bus, "timestamp": ts, "lat": lat, "lon": lon, "speed": speed})
    parsed = parsed.sort_values(["bus_id", "timestamp"], kind="mergesort")
    before = len(parsed)
    parsed = parsed.drop_duplicates(subset=["bus_id", "timestamp"], keep="first")
    if len(parsed) < before:
        logger.debug(f"Collapsed {before - len(parsed)} duplicate (bus_id, timestamp) rows")

    return [
        GpsRecord(str(b), float(t), float(la), float(lo), float(s))
        for b, t, la, lo, s in parsed.itertuples(index=False, name=None)
    ]


def write_gps_csv(records: Iterable[GpsRecord]) -> bytes:
    """Serialize records in the ingest CSV format"""
    rows = [(r.bus_id, r.timestamp, r.lat, r.lon, r.speed) for r in records]
    df = pd.DataFrame(rows, columns=list(CSV_COLUMNS))
    return df.to_csv(index=False, lineterminator="\n").encode("utf-8")


# ---------------------------------------------------------------------------
# cleaning
# ---------------------------------------------------------------------------


def clean(records: Sequence[GpsRecord], config: CleanConfig) -> Tuple[List[GpsRecord], CleanReport]:
    """Drop out-of-box fixes, implied-speed outliers and sparse buses.

    The implied speed of a fix is measured against the previous *kept* fix of
    the same bus, which makes the rule idempotent.

    Raises:
        EmptyAfterCleanError: nothing survives
    """
    config.validate()
    lat_min, lat_max, lon_min, lon_max = config.bbox
    report = CleanReport(raw=len(records))
    kept: List[GpsRecord] = []

    for bus_id, group in groupby(records, key=lambda r: r.bus_id):
        bus_kept: List[GpsRecord] = []
        for rec in group:
            if not (lat_min <= rec.lat <= lat_max and lon_min <= rec.lon <= lon_max):
                report.dropped["bbox"] += 1
                continue
            if bus_kept:
                prev = bus_kept[-1]
                dist_km = float(haversine_m(prev.lat, prev.lon, rec.lat, rec.lon)) / 1000.0
                dt_h = (rec.timestamp - prev.timestamp) / 3600.0
                implied = dist_km / dt_h if dt_h > 0 else (math.inf if dist_km > 0 else 0.0)
                if implied > config.max_speed:
                    report.dropped["speed"] += 1
                    continue
            bus_kept.append(rec)
        if len(bus_kept) < config.min_fixes_per_bus:
            logger.warning(f"Dropping bus {bus_id}: {len(bus_kept)} fixes left after cleaning")
            report.dropped["sparse_bus"] += len(bus_kept)
            continue
        kept.extend(bus_kept)

    report.kept = len(kept)
    if not kept:
        raise EmptyAfterCleanError(f"all {report.raw} records were dropped by cleaning")
    logger.info(f"Cleaning kept {report.kept}/{report.raw} fixes (dropped {report.dropped})")
    return kept, report


# ---------------------------------------------------------------------------
# resampling and imputation
# ---------------------------------------------------------------------------


def resample(
    records: Sequence[GpsRecord],
    grid_step: float,
    agg_window: float,
    bus_ids: Optional[Sequence[str]] = None,
    grid_start: Optional[float] = None,
    grid_end: Optional[float] = None,
) -> Dict[str, ResampledSeries]:
    """Average fixes onto a shared uniform grid.

    The frame at grid instant t is the mean of all fixes of that bus in
    [t - agg_window/2, t + agg_window/2). The grid runs from the first to the
    last fix over all buses unless ``grid_start``/``grid_end`` are given.
    """
    if grid_step <= 0:
        raise ContractError(f"resample: grid_step must be > 0, got {grid_step}")
    if agg_window < grid_step:
        raise ContractError(f"resample: agg_window ({agg_window}) must be >= grid_step ({grid_step})")
    if not records:
        raise EmptyInputError("resample: no records")

    by_bus: Dict[str, List[GpsRecord]] = {}
    for rec in records:
        by_bus.setdefault(rec.bus_id, []).append(rec)
    wanted = sorted(by_bus) if bus_ids is None else list(bus_ids)

    t_first = min(r.timestamp for r in records) if grid_start is None else grid_start
    t_last = max(r.timestamp for r in records) if grid_end is None else grid_end
    n_steps = int(math.ceil((t_last - t_first) / grid_step)) + 1
    grid = t_first + grid_step * np.arange(n_steps)
    half = agg_window / 2.0

    result: Dict[str, ResampledSeries] = {}
    for bus_id in wanted:
        fixes = by_bus.get(bus_id)
        if not fixes:
            logger.warning(f"Bus {bus_id} has no fixes; excluded from resampling")
            continue
        fixes = sorted(fixes, key=lambda r: r.timestamp)
        times = np.array([r.timestamp for r in fixes])
        values = np.array([(r.lat, r.lon, r.speed) for r in fixes], dtype=np.float64)
        lo = np.searchsorted(times, grid - half, side="left")
        hi = np.searchsorted(times, grid + half, side="left")

        frames = np.full((n_steps, 3), np.nan)
        observed = hi > lo
        for i in np.flatnonzero(observed):
            frames[i] = values[lo[i] : hi[i]].mean(axis=0)
        result[bus_id] = ResampledSeries(bus_id, float(t_first), float(grid_step), frames, observed)
        logger.debug(f"Resampled bus {bus_id}: {int(observed.sum())}/{n_steps} grid steps observed")
    return result


def impute(series: ResampledSeries) -> ResampledSeries:
    """Fill unobserved frames: linear between observed neighbours, held at the ends."""
    observed = np.asarray(series.observed_mask, dtype=bool)
    if not observed.any():
        raise CannotImputeError(f"bus {series.bus_id} has no observed frame to impute from")
    frames = np.array(series.frames, dtype=np.float64)
    missing = ~observed
    if missing.any():
        idx = np.arange(len(frames))
        for f in range(frames.shape[1]):
            frames[missing, f] = np.interp(idx[missing], idx[observed], frames[observed, f])
    return ResampledSeries(series.bus_id, series.grid_start, series.grid_step, frames, observed.copy())


def decimate(series: ResampledSeries, step: int, phase: int = 0) -> ResampledSeries:
    """Keep every ``step``-th frame starting at ``phase``"""
    if step < 1:
        raise ContractError(f"decimate: step must be >= 1, got {step}")
    return ResampledSeries(
        series.bus_id,
        series.grid_start + phase * series.grid_step,
        series.grid_step * step,
        series.frames[phase::step].copy(),
        series.observed_mask[phase::step].copy(),
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def fit_norm(train: Union[np.ndarray, Sequence[ResampledSeries]]) -> NormStats:
    """Per-feature min/max over training frames (last axis = lat, lon, speed)"""
    if isinstance(train, np.ndarray):
        data = train.reshape(-1, train.shape[-1])
    else:
        data = np.concatenate([s.frames for s in train], axis=0)
    data = data[np.all(np.isfinite(data), axis=1)]
    if data.size == 0:
        raise EmptyInputError("fit_norm: no finite training frames")
    return NormStats(data.min(axis=0).astype(np.float64), data.max(axis=0).astype(np.float64))


def normalize(frames: np.ndarray, stats: Optional[NormStats]) -> np.ndarray:
    """Min-max scale the trailing feature axis; constant features map to 0.5.

    Values outside the fitted range pass through unclipped.
    """
    if stats is None:
        raise StateError("normalize called before fit_norm")
    frames = np.asarray(frames, dtype=np.float64)
    k = frames.shape[-1]
    lo, hi = stats.mins[:k], stats.maxs[:k]
    span = hi - lo
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    return np.where(degenerate, 0.5, (frames - lo) / safe)


def denormalize(frames: np.ndarray, stats: Optional[NormStats]) -> np.ndarray:
    """Exact inverse of :func:`normalize` (constant features return their value)"""
    if stats is None:
        raise StateError("denormalize called before fit_norm")
    frames = np.asarray(frames, dtype=np.float64)
    k = frames.shape[-1]
    lo, hi = stats.mins[:k], stats.maxs[:k]
    span = hi - lo
    return np.where(span == 0, lo, frames * span + lo)


def normalize_delta(delta: np.ndarray, stats: NormStats) -> np.ndarray:
    """Scale a difference in physical units into normalized units"""
    k = delta.shape[-1]
    span = stats.maxs[:k] - stats.mins[:k]
    return np.where(span == 0, 0.0, delta / np.where(span == 0, 1.0, span))


# ---------------------------------------------------------------------------
# windows and split
# ---------------------------------------------------------------------------


def stack_series(series_set: Union[Mapping[str, ResampledSeries], Sequence[ResampledSeries]]) -> Tuple[List[str], np.ndarray, float, float]:
    """Stack buses into a T x N x 3 array (NaN-padded), ordered by bus id"""
    items = list(series_set.values()) if isinstance(series_set, Mapping) else list(series_set)
    if not items:
        raise EmptyInputError("no series to window")
    items = sorted(items, key=lambda s: s.bus_id)
    start, step = items[0].grid_start, items[0].grid_step
    for s in items[1:]:
        if s.grid_start != start or s.grid_step != step:
            raise ContractError(f"bus {s.bus_id} is on a different grid than bus {items[0].bus_id}")
    length = max(len(s) for s in items)
    stacked = np.full((length, len(items), 3), np.nan)
    for j, s in enumerate(items):
        stacked[: len(s), j] = s.frames
    return [s.bus_id for s in items], stacked, float(start), float(step)


def window_span(L_in: int, L_out: int, frame_step: int = 1) -> int:
    return (L_in + L_out - 1) * frame_step + 1


def make_windows(
    series_set: Union[Mapping[str, ResampledSeries], Sequence[ResampledSeries]],
    L_in: int,
    L_out: int,
    stride: int = 1,
    frame_step: int = 1,
    stats: Optional[NormStats] = None,
) -> List[WindowSample]:
    """Slide input/target windows over the stacked fleet.

    Offsets advance by ``stride`` grid steps; frames inside a window are
    ``frame_step`` grid steps apart. A window is kept only when every bus has
    a frame at every one of its steps. Without ``stats`` the frames are left
    in physical units.
    """
    if min(L_in, L_out, stride, frame_step) < 1:
        raise ContractError(f"make_windows: L_in, L_out, stride, frame_step must be >= 1, got {L_in}, {L_out}, {stride}, {frame_step}")
    _, raw, start, step = stack_series(series_set)
    scaled = normalize(raw, stats) if stats is not None else raw
    span = window_span(L_in, L_out, frame_step)
    if raw.shape[0] < span:
        logger.warning(f"Series length {raw.shape[0]} is shorter than one window ({span} grid steps); no windows")
        return []

    rel = frame_step * np.arange(L_in + L_out)
    windows: List[WindowSample] = []
    skipped = 0
    for offset in range(0, raw.shape[0] - span + 1, stride):
        idx = offset + rel
        block = raw[idx]
        if not np.all(np.isfinite(block)):
            skipped += 1
            continue
        windows.append(
            WindowSample(
                input_frames=scaled[idx[:L_in]],
                target_frames=scaled[idx[L_in:], :, :2],
                input_raw=block[:L_in].copy(),
                window_start_time=start + offset * step,
                frame_times=start + idx * step,
                offset=int(offset),
            )
        )
    if skipped:
        logger.info(f"Skipped {skipped} windows with missing buses")
    return windows


def split(windows: Sequence[WindowSample], ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> DatasetSplit:
    """Chronological train/validation/test split with a leakage guard.

    Boundaries fall at floor(r_train * n) and floor((r_train + r_val) * n).
    A validation or test window whose input starts at or before the last
    target frame of any earlier kept window is dropped.
    """
    n = len(windows)
    if n < 10:
        raise TooFewWindowsError(f"need at least 10 windows to split, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    ordered = sorted(windows, key=lambda w: w.window_start_time)
    b1 = int(math.floor(ratios[0] * n + 1e-9))
    b2 = int(math.floor((ratios[0] + ratios[1]) * n + 1e-9))

    train = list(ordered[:b1])
    horizon = max((w.target_end() for w in train), default=-math.inf)
    parts: Dict[str, List[WindowSample]] = {}
    dropped: Dict[str, int] = {}
    for name, chunk in (("validation", ordered[b1:b2]), ("test", ordered[b2:])):
        kept = [w for w in chunk if w.input_start() > horizon]
        dropped[name] = len(chunk) - len(kept)
        parts[name] = kept
        horizon = max([horizon] + [w.target_end() for w in kept])

    if dropped["validation"] or dropped["test"]:
        logger.info(f"Leakage guard dropped {dropped['validation']} validation and {dropped['test']} test windows")
    return DatasetSplit(train, parts["validation"], parts["test"], (b1, b2), dropped)


def prepare_dataset(
    series_set: Mapping[str, ResampledSeries],
    L_in: int,
    L_out: int,
    stride: int = 1,
    frame_step: int = 1,
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Tuple[DatasetSplit, NormStats]:
    """Window, split and normalize with stats fitted on the training range only"""
    raw_windows = make_windows(series_set, L_in, L_out, stride, frame_step)
    n = len(raw_windows)
    if n < 10:
        raise TooFewWindowsError(f"need at least 10 windows to split, got {n}")
    b1 = int(math.floor(ratios[0] * n + 1e-9))
    train_windows = raw_windows[:b1]
    span = window_span(L_in, L_out, frame_step)
    _, raw, _, _ = stack_series(series_set)
    train_frames = raw[train_windows[0].offset : train_windows[-1].offset + span]
    stats = fit_norm(train_frames)

    windows = make_windows(series_set, L_in, L_out, stride, frame_step, stats)
    return split(windows, ratios), stats
