"""
Metrics, baselines and the method comparison report.

MAE is measured in normalized coordinate units. Mission accuracy counts a
prediction correct when its haversine error stays within ``margin`` times
the mean distance a bus travels per model step.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from gsmt_errors import ConfigError, ContractError, DimensionError
from gsmt_geo import haversine_m
from gsmt_graphs import GraphConfig
from gsmt_ingest import DatasetSplit, NormStats, ResampledSeries, WindowSample, denormalize
from gsmt_model import ModelConfig, TrainConfig, WindowBatch, params_from_arrays, predict, train

logger = logging.getLogger("gsmt.eval")

ACCURACY_MODES = ("trajectory", "point")

# Published comparison table: (method, horizon minutes) -> (MAE, mission accuracy)
PUBLISHED_REFERENCE: Dict[Tuple[str, int], Tuple[float, float]] = {
    ("HA", 15): (0.6494, 0.3097),
    ("HA", 25): (0.4866, 0.1812),
    ("GAT+LSTM", 15): (0.1427, 0.4612),
    ("GAT+LSTM", 25): (0.2236, 0.3516),
    ("GAT+GRU", 15): (0.0605, 0.7792),
    ("GAT+GRU", 25): (0.1660, 0.6319),
    ("GSMT", 15): (0.0515, 0.8812),
    ("GSMT", 25): (0.1510, 0.6612),
}


@dataclass
class EvalConfig:
    horizons: List[int] = field(default_factory=lambda: [15, 25])
    margin: float = 0.05
    accuracy_mode: str = "trajectory"

    def validate(self):
        if not self.horizons or any(h <= 0 for h in self.horizons):
            raise ConfigError(f"eval.horizons must be positive minutes, got {self.horizons}")
        if self.margin <= 0:
            raise ConfigError(f"eval.margin must be > 0, got {self.margin}")
        if self.accuracy_mode not in ACCURACY_MODES:
            raise ConfigError(f"eval.accuracy_mode must be one of {ACCURACY_MODES}, got {self.accuracy_mode!r}")


@dataclass
class MissionAccuracyConfig:
    margin: float
    mean_travel_distance: float
    mode: str = "trajectory"

    @property
    def threshold(self) -> float:
        return self.margin * self.mean_travel_distance

    def validate(self):
        if self.margin <= 0:
            raise ConfigError(f"mission accuracy margin must be > 0, got {self.margin}")
        if self.mean_travel_distance <= 0:
            raise ConfigError(
                f"mean travel distance is {self.mean_travel_distance} m; mission accuracy is undefined for a stationary fleet"
            )
        if self.mode not in ACCURACY_MODES:
            raise ConfigError(f"mission accuracy mode must be one of {ACCURACY_MODES}, got {self.mode!r}")


@dataclass
class MetricRow:
    method: str
    horizon_minutes: int
    mae: float
    mae_meters: Optional[float]
    mission_accuracy: float
    accuracy_mode: str
    n_windows: int
    config_digest: str
    reference: bool = False

    def to_dict(self) -> Dict:
        data = asdict(self)
        if not self.reference:
            data.pop("reference")
        return data


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _check_shapes(pred: np.ndarray, true: np.ndarray, op: str):
    if pred.shape != true.shape:
        raise DimensionError(f"{op}: prediction shape {pred.shape} != truth shape {true.shape}")


def mae(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean |pred - true| over every step, bus and coordinate"""
    pred, true = np.asarray(pred, dtype=np.float64), np.asarray(true, dtype=np.float64)
    _check_shapes(pred, true, "mae")
    return float(np.mean(np.abs(pred - true)))


def point_errors_m(pred_norm: np.ndarray, true_norm: np.ndarray, stats: NormStats) -> np.ndarray:
    """Haversine error in meters of every predicted point"""
    pred_norm, true_norm = np.asarray(pred_norm), np.asarray(true_norm)
    _check_shapes(pred_norm, true_norm, "point_errors_m")
    p = denormalize(pred_norm, stats)
    t = denormalize(true_norm, stats)
    return haversine_m(p[..., 0], p[..., 1], t[..., 0], t[..., 1])


def mae_meters(pred_norm: np.ndarray, true_norm: np.ndarray, stats: NormStats) -> float:
    return float(np.mean(point_errors_m(pred_norm, true_norm, stats)))


def mean_travel_distance(
    series_set: Mapping[str, ResampledSeries], model_step: int, end: Optional[int] = None
) -> float:
    """Mean haversine displacement over one model step, between observed frames only.

    Pairs (i, i + model_step) are taken at every grid index i below ``end``
    (the whole series when None) where both frames were observed.
    """
    if model_step < 1:
        raise ContractError(f"model_step must be >= 1, got {model_step}")
    distances = []
    for series in series_set.values():
        frames = series.frames[:end]
        observed = series.observed_mask[:end]
        if len(frames) <= model_step:
            continue
        a, b = frames[:-model_step], frames[model_step:]
        both = observed[:-model_step] & observed[model_step:]
        distances.append(haversine_m(a[both, 0], a[both, 1], b[both, 0], b[both, 1]))
    flat = np.concatenate(distances) if distances else np.empty(0)
    if flat.size == 0:
        raise ContractError("mean_travel_distance needs at least 2 observed frames one model step apart")
    return float(np.mean(flat))


def mission_accuracy(pred_norm: np.ndarray, true_norm: np.ndarray, config: MissionAccuracyConfig, stats: NormStats) -> float:
    """Fraction of correct predictions.

    ``trajectory`` mode judges each (window, bus) by its mean per-step error;
    ``point`` mode judges every predicted point on its own.
    """
    config.validate()
    errors = point_errors_m(pred_norm, true_norm, stats)
    if errors.ndim < 2:
        raise DimensionError(f"mission_accuracy expects [B x] L_out x N x 2 frames, got {np.shape(pred_norm)}")
    if config.mode == "trajectory":
        errors = errors.mean(axis=-2)
    return float(np.mean(errors <= config.threshold))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def baseline_ha(train_windows: Sequence[WindowSample], n_windows: int) -> np.ndarray:
    """Per-offset, per-bus mean of the training targets, repeated for ``n_windows``"""
    if not train_windows:
        raise ContractError("historical average needs at least one training window")
    average = np.mean(np.stack([w.target_frames for w in train_windows]), axis=0)
    return np.repeat(average[None], n_windows, axis=0)


def baseline_gat_rnn(
    split: DatasetSplit,
    cell_kind: str,
    model_config: ModelConfig,
    train_config: TrainConfig,
    graph_config: GraphConfig,
    shared: Optional[Dict[str, np.ndarray]] = None,
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Train (or reuse) a GAT + recurrent baseline and predict the test windows.

    ``lstm_plain`` is GSMT without the corrector; with ``shared`` weights it
    skips training. ``gru`` trains a fresh model with GRU cells.
    """
    if cell_kind not in ("lstm_plain", "gru"):
        raise ContractError(f"unknown baseline cell kind {cell_kind!r}")
    config = replace(model_config, cell_kind="lstm" if cell_kind == "lstm_plain" else "gru")
    if cell_kind == "lstm_plain" and shared is not None:
        arrays = shared
    else:
        logger.info(f"Training GAT+{cell_kind.upper().replace('_PLAIN', '')} baseline")
        arrays = train(split, config, train_config, graph_config).best_params
    test = WindowBatch.from_windows(split.test, graph_config)
    return arrays, predict(params_from_arrays(arrays, config), test, config)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def horizon_steps(horizon_minutes: int, model_step_minutes: float, L_out: int) -> int:
    steps = horizon_minutes / model_step_minutes
    if steps != int(steps) or not 1 <= steps <= L_out:
        raise ConfigError(
            f"eval.horizons entry {horizon_minutes} min is not a multiple of the model step "
            f"({model_step_minutes} min) within model.L_out ({L_out} steps)"
        )
    return int(steps)


def evaluate_method(
    method: str,
    pred_norm: np.ndarray,
    true_norm: np.ndarray,
    stats: NormStats,
    accuracy: MissionAccuracyConfig,
    horizons: Sequence[int],
    model_step_minutes: float,
    config_digest: str,
) -> List[MetricRow]:
    """One row per horizon, scoring the leading steps of B x L_out x N x 2 predictions"""
    _check_shapes(np.asarray(pred_norm), np.asarray(true_norm), method)
    rows = []
    for horizon in horizons:
        k = horizon_steps(horizon, model_step_minutes, pred_norm.shape[1])
        p, t = pred_norm[:, :k], true_norm[:, :k]
        rows.append(
            MetricRow(
                method=method,
                horizon_minutes=int(horizon),
                mae=mae(p, t),
                mae_meters=mae_meters(p, t, stats),
                mission_accuracy=mission_accuracy(p, t, accuracy, stats),
                accuracy_mode=accuracy.mode,
                n_windows=int(pred_norm.shape[0]),
                config_digest=config_digest,
            )
        )
    return rows


@dataclass
class MetricsReport:
    rows: List[MetricRow]
    horizons: List[int]

    def methods(self) -> List[str]:
        seen: List[str] = []
        for row in self.rows:
            if row.method not in seen:
                seen.append(row.method)
        return seen

    def to_json(self, generated_at: str) -> str:
        payload = {"metadata": {"generated_at": generated_at}, "rows": [r.to_dict() for r in self.rows]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        """Methods as rows, (MAE, mission accuracy) per horizon as columns"""
        header = ["Method"]
        for h in self.horizons:
            header += [f"{h}min MAE", f"{h}min Acc"]
        table = [header]
        by_key = {(r.method, r.horizon_minutes): r for r in self.rows}
        for method in self.methods():
            line = [method]
            for h in self.horizons:
                row = by_key[(method, h)]
                line += [format_mae(row.mae), format_accuracy(row.mission_accuracy)]
            table.append(line)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        rendered = [
            "  ".join(cell.ljust(widths[i]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(r)) for r in table
        ]
        rendered.insert(1, "-" * len(rendered[0]))
        return "\n".join(rendered) + "\n"


def format_mae(value: float) -> str:
    return f"{value:.4f}"


def format_accuracy(value: float) -> str:
    return f"{100.0 * value:.2f}%"


def reference_rows(horizons: Sequence[int]) -> List[MetricRow]:
    rows = []
    for (method, h), (ref_mae, ref_acc) in PUBLISHED_REFERENCE.items():
        if h in horizons:
            rows.append(MetricRow(f"{method} (published)", h, ref_mae, None, ref_acc, "unknown", 0, "", reference=True))
    return rows


def compare(reports: Sequence[Sequence[MetricRow]], published: bool = False) -> MetricsReport:
    """Merge per-method rows into one report.

    Raises:
        ContractError: the methods were not evaluated on the same horizons
    """
    if not reports:
        raise ContractError("compare needs at least one method report")
    horizons = [r.horizon_minutes for r in reports[0]]
    for report in reports[1:]:
        other = [r.horizon_minutes for r in report]
        if other != horizons:
            raise ContractError(f"horizon mismatch: {report[0].method if report else '?'} has {other}, expected {horizons}")
    rows = [row for report in reports for row in report]
    if published:
        ref = reference_rows(horizons)
        if {r.horizon_minutes for r in ref} != set(horizons):
            logger.warning(f"Published reference exists only for 15 and 25 min horizons; requested {horizons}")
            ref = []
        rows += ref
    return MetricsReport(rows, horizons)
