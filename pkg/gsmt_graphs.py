"""
Per-frame position and speed graphs over the fleet, and their fusion.

Every pair of buses is connected. Edge weights decay exponentially with
haversine distance (position graph) or absolute speed difference (speed
graph); self-loops carry weight 1. A window's graphs are summed into one
fused matrix and row-normalized before the attention encoder sees it.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from gsmt_errors import ConfigError, ContractError, DimensionError, NumericError
from gsmt_geo import haversine_m

logger = logging.getLogger("gsmt.graphs")


@dataclass
class GraphConfig:
    sigma_d: float = 1000.0  # meters
    sigma_v: float = 10.0  # km/h

    def validate(self):
        if self.sigma_d <= 0:
            raise ConfigError(f"graphs.sigma_d must be > 0, got {self.sigma_d}")
        if self.sigma_v <= 0:
            raise ConfigError(f"graphs.sigma_v must be > 0, got {self.sigma_v}")


@dataclass
class AdjacencyMatrix:
    weights: np.ndarray

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class FusedAdjacency:
    weights: np.ndarray
    source_count: int

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class DynamicGraphSeq:
    """Feature frames of one window with their position and speed graphs"""

    frames: np.ndarray
    position: List[AdjacencyMatrix] = field(default_factory=list)
    speed: List[AdjacencyMatrix] = field(default_factory=list)

    def matrices(self) -> List[AdjacencyMatrix]:
        """Position and speed graph of each frame, interleaved in frame order"""
        out: List[AdjacencyMatrix] = []
        for pos, spd in zip(self.position, self.speed):
            out.extend((pos, spd))
        return out


def _mirror_upper(weights: np.ndarray) -> np.ndarray:
    upper = np.triu(weights, k=1)
    return upper + upper.T + np.eye(weights.shape[0])


def build_position_graph(frame: np.ndarray, sigma_d: float) -> AdjacencyMatrix:
    """a_ij = exp(-haversine(i, j) / sigma_d), a_ii = 1. ``frame`` is N x (lat, lon, ...)"""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[1] < 2:
        raise DimensionError(f"position graph needs an N x 2+ frame, got shape {frame.shape}")
    if frame.shape[0] < 2:
        raise ContractError(f"position graph needs at least 2 buses, got {frame.shape[0]}")
    if sigma_d <= 0:
        raise ContractError(f"sigma_d must be > 0, got {sigma_d}")
    if not np.all(np.isfinite(frame[:, :2])):
        raise NumericError("position graph: non-finite coordinates")
    lat, lon = frame[:, 0], frame[:, 1]
    dist = haversine_m(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    return AdjacencyMatrix(_mirror_upper(np.exp(-dist / sigma_d)))


def build_speed_graph(frame: np.ndarray, sigma_v: float) -> AdjacencyMatrix:
    """a_ij = exp(-|v_i - v_j| / sigma_v), a_ii = 1. Speed is the last column of ``frame``"""
    frame = np.asarray(frame, dtype=np.float64)
    speeds = frame[:, -1] if frame.ndim == 2 else frame
    if speeds.ndim != 1:
        raise DimensionError(f"speed graph needs an N x F frame or N speeds, got shape {frame.shape}")
    if speeds.shape[0] < 2:
        raise ContractError(f"speed graph needs at least 2 buses, got {speeds.shape[0]}")
    if sigma_v <= 0:
        raise ContractError(f"sigma_v must be > 0, got {sigma_v}")
    if not np.all(np.isfinite(speeds)):
        raise NumericError("speed graph: non-finite speed")
    if np.any(speeds < 0):
        raise ContractError(f"speed graph: negative speed {float(speeds.min())}")
    diff = np.abs(speeds[:, None] - speeds[None, :])
    return AdjacencyMatrix(_mirror_upper(np.exp(-diff / sigma_v)))


def fuse(matrices: Sequence[Union[AdjacencyMatrix, np.ndarray]]) -> FusedAdjacency:
    """Elementwise sum of the matrices, accumulated left to right"""
    if not matrices:
        raise ContractError("fuse needs at least one matrix")
    arrays = [np.asarray(m.weights if isinstance(m, AdjacencyMatrix) else m, dtype=np.float64) for m in matrices]
    shape = arrays[0].shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise DimensionError(f"fuse: matrices must be square, got {shape}")
    acc = np.zeros(shape)
    for i, arr in enumerate(arrays):
        if arr.shape != shape:
            raise DimensionError(f"fuse: matrix {i} has shape {arr.shape}, expected {shape}")
        acc = acc + arr
    return FusedAdjacency(acc, len(arrays))


def row_normalize(fused: Union[FusedAdjacency, AdjacencyMatrix]) -> AdjacencyMatrix:
    weights = np.asarray(fused.weights, dtype=np.float64)
    sums = weights.sum(axis=1)
    if np.any(sums <= 0):
        raise ContractError(f"row_normalize: row {int(np.argmin(sums))} has non-positive sum")
    return AdjacencyMatrix(weights / sums[:, None])


def build_sequence(raw_frames: np.ndarray, config: GraphConfig) -> Tuple[DynamicGraphSeq, FusedAdjacency, AdjacencyMatrix]:
    """Graphs of every input frame, their fusion and its row-normalized form.

    ``raw_frames`` is L_in x N x 3 in degrees and km/h.
    """
    raw_frames = np.asarray(raw_frames, dtype=np.float64)
    if raw_frames.ndim != 3:
        raise DimensionError(f"build_sequence expects L_in x N x 3 frames, got shape {raw_frames.shape}")
    seq = DynamicGraphSeq(frames=raw_frames)
    for frame in raw_frames:
        seq.position.append(build_position_graph(frame, config.sigma_d))
        seq.speed.append(build_speed_graph(frame, config.sigma_v))
    fused = fuse(seq.matrices())
    return seq, fused, row_normalize(fused)


def window_gamma(raw_frames: np.ndarray, config: GraphConfig) -> np.ndarray:
    """Row-normalized fused matrix of one window"""
    return build_sequence(raw_frames, config)[2].weights


def batch_gamma(raw_batch: np.ndarray, config: GraphConfig) -> np.ndarray:
    """B x N x N normalized fused matrices for a B x L_in x N x 3 batch"""
    return np.stack([window_gamma(frames, config) for frames in raw_batch])


def dump_fused_csv(fused: FusedAdjacency, path: Union[str, Path]):
    """Debug export: header ``n,source_count``, their values, then one line per row"""
    path = Path(path)
    lines = ["n,source_count", f"{fused.n},{fused.source_count}"]
    lines.extend(",".join(repr(float(x)) for x in row) for row in fused.weights)
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Wrote fused adjacency ({fused.n}x{fused.n}) to {path}")
