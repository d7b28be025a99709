"""
Spatiotemporal task corrector.

Historical speeds are clustered into low/medium/high motion modes. At
inference each bus is classified from its recent speed, extrapolated along
its heading at the mode's centroid speed, and its raw prediction is blended
toward that extrapolation with a per-mode weight beta.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from gsmt_errors import ConfigError, ContractError, DataError, DimensionError
from gsmt_geo import degrees_to_meters, meters_to_degrees
from gsmt_ingest import NormStats, denormalize, normalize_delta

logger = logging.getLogger("gsmt.corrector")

MODES = ("low", "medium", "high")
DEFAULT_BETAS = {"low": 0.1, "medium": 0.2, "high": 0.3}


@dataclass
class CorrectorConfig:
    enabled: bool = True
    beta_low: float = 0.1
    beta_medium: float = 0.2
    beta_high: float = 0.3
    recent_steps: int = 3
    max_iter: int = 100

    def betas(self) -> Dict[str, float]:
        return {"low": self.beta_low, "medium": self.beta_medium, "high": self.beta_high}

    def validate(self):
        for mode, beta in self.betas().items():
            if not 0.0 <= beta <= 1.0:
                raise ConfigError(f"corrector.beta_{mode} must be in [0, 1], got {beta}")
        if self.recent_steps < 1:
            raise ConfigError(f"corrector.recent_steps must be >= 1, got {self.recent_steps}")
        if self.max_iter < 1:
            raise ConfigError(f"corrector.max_iter must be >= 1, got {self.max_iter}")


@dataclass
class MotionModeModel:
    centroids: np.ndarray
    betas: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BETAS))

    def centroid(self, mode: str) -> float:
        return float(self.centroids[MODES.index(mode)])

    def to_dict(self) -> Dict:
        return {"centroids": [float(c) for c in self.centroids], "betas": {m: float(self.betas[m]) for m in MODES}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MotionModeModel":
        return cls(np.asarray(data["centroids"], dtype=np.float64), {m: float(data["betas"][m]) for m in MODES})


@dataclass
class KinematicState:
    """Last two model-step positions, recent mean speed and planar heading"""

    prev: Tuple[float, float]
    last: Tuple[float, float]
    speed_kmh: float
    heading: Optional[Tuple[float, float]]

    @property
    def degenerate(self) -> bool:
        return self.heading is None


# ---------------------------------------------------------------------------
# motion modes
# ---------------------------------------------------------------------------


def kmeans_iteration(speeds: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One assign/update round. Ties go to the lower centroid; empty clusters keep theirs."""
    speeds = np.asarray(speeds, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    assignment = np.argmin(np.abs(speeds[:, None] - centroids[None, :]), axis=1)
    updated = centroids.copy()
    for k in range(len(centroids)):
        members = speeds[assignment == k]
        if members.size:
            updated[k] = members.mean()
    return updated, assignment


def _initial_centroids(speeds: np.ndarray) -> np.ndarray:
    init = np.percentile(speeds, [10, 50, 90])
    if np.all(np.diff(init) > 0):
        return init
    distinct = np.unique(speeds)
    return np.array([distinct[0], distinct[len(distinct) // 2], distinct[-1]])


def fit_modes(speeds: Sequence[float], betas: Optional[Mapping[str, float]] = None, max_iter: int = 100) -> MotionModeModel:
    """1-D k-means with k=3 from the 10th/50th/90th percentiles.

    Deterministic: runs until assignments stop changing or ``max_iter``.

    Raises:
        DataError: fewer than 3 distinct speeds
    """
    speeds = np.asarray(speeds, dtype=np.float64).ravel()
    speeds = speeds[np.isfinite(speeds)]
    if np.unique(speeds).size < 3:
        raise DataError(f"motion modes need at least 3 distinct speeds, got {np.unique(speeds).size}")

    centroids = _initial_centroids(speeds)
    assignment = None
    for i in range(max_iter):
        updated, new_assignment = kmeans_iteration(speeds, centroids)
        centroids = updated
        if assignment is not None and np.array_equal(assignment, new_assignment):
            logger.debug(f"k-means converged after {i + 1} iterations")
            break
        assignment = new_assignment
    else:
        logger.warning(f"k-means stopped at max_iter={max_iter} without converging")

    model = MotionModeModel(np.sort(centroids), dict(betas or DEFAULT_BETAS))
    logger.info(f"Motion mode centroids (km/h): {', '.join(f'{c:.2f}' for c in model.centroids)}")
    return model


def classify(speed: float, model: MotionModeModel) -> str:
    """Nearest centroid; an exact tie picks the lower mode"""
    if speed < 0:
        raise ContractError(f"classify: speed must be >= 0, got {speed}")
    return MODES[int(np.argmin(np.abs(speed - model.centroids)))]


# ---------------------------------------------------------------------------
# kinematics and blending
# ---------------------------------------------------------------------------


def kinematic_state(raw_frames: np.ndarray, recent_steps: int = 3) -> KinematicState:
    """State of one bus from its L_in x 3 input frames (degrees, km/h)"""
    raw_frames = np.asarray(raw_frames, dtype=np.float64)
    if raw_frames.ndim != 2 or raw_frames.shape[1] != 3:
        raise DimensionError(f"kinematic_state expects L_in x 3 frames, got {raw_frames.shape}")
    last = (float(raw_frames[-1, 0]), float(raw_frames[-1, 1]))
    prev = (float(raw_frames[-2, 0]), float(raw_frames[-2, 1])) if len(raw_frames) > 1 else last
    speed = float(np.mean(raw_frames[-recent_steps:, 2]))

    dx, dy = degrees_to_meters(last[0] - prev[0], last[1] - prev[1], last[0])
    norm = float(np.hypot(dx, dy))
    heading = (float(dx) / norm, float(dy) / norm) if norm > 0 else None
    return KinematicState(prev, last, speed, heading)


def kinematic_extrapolate(state: KinematicState, speed_kmh: float, steps: int, step_duration: float) -> np.ndarray:
    """``steps`` x 2 positions advancing along the heading; holds when degenerate"""
    if state.degenerate or speed_kmh == 0:
        return np.tile(np.array(state.last), (steps, 1))
    k = np.arange(1, steps + 1)
    distance = speed_kmh / 3.6 * step_duration * k
    dlat, dlon = meters_to_degrees(state.heading[0] * distance, state.heading[1] * distance, state.last[0])
    return np.column_stack([state.last[0] + dlat, state.last[1] + dlon])


def correct(raw: np.ndarray, extrapolated: np.ndarray, beta: float) -> np.ndarray:
    """Blend raw toward extrapolated: raw + beta * (extrapolated - raw)"""
    raw = np.asarray(raw, dtype=np.float64)
    extrapolated = np.asarray(extrapolated, dtype=np.float64)
    if raw.shape != extrapolated.shape:
        raise DimensionError(f"correct: raw {raw.shape} vs extrapolated {extrapolated.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"correct: beta must be in [0, 1], got {beta}")
    return raw + beta * (extrapolated - raw)


def apply_corrector(
    pred_norm: np.ndarray,
    raw_inputs: np.ndarray,
    stats: NormStats,
    model: MotionModeModel,
    step_duration: float,
    recent_steps: int = 3,
) -> np.ndarray:
    """Correct a B x L_out x N x 2 normalized prediction, once per bus per window.

    Blending happens in degrees; the resulting delta is mapped back into
    normalized units, so a zero beta leaves the prediction untouched.
    """
    pred_norm = np.asarray(pred_norm, dtype=np.float64)
    raw_inputs = np.asarray(raw_inputs, dtype=np.float64)
    if pred_norm.ndim != 4 or raw_inputs.ndim != 4 or pred_norm.shape[0] != raw_inputs.shape[0]:
        raise DimensionError(f"apply_corrector: prediction {pred_norm.shape} vs inputs {raw_inputs.shape}")
    out = pred_norm.copy()
    steps = pred_norm.shape[1]
    counts = dict.fromkeys(MODES, 0)
    for b in range(pred_norm.shape[0]):
        for j in range(pred_norm.shape[2]):
            state = kinematic_state(raw_inputs[b, :, j], recent_steps)
            mode = classify(max(state.speed_kmh, 0.0), model)
            counts[mode] += 1
            beta = model.betas[mode]
            if beta == 0:
                continue
            ext = kinematic_extrapolate(state, model.centroid(mode), steps, step_duration)
            raw_deg = denormalize(pred_norm[b, :, j], stats)
            delta = correct(raw_deg, ext, beta) - raw_deg
            out[b, :, j] = pred_norm[b, :, j] + normalize_delta(delta, stats)
    logger.debug(f"Corrector mode counts: {counts}")
    return out
