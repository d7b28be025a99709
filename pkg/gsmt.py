#!/usr/bin/env python3
"""
gsmt - multi-bus trajectory prediction with graph attention and seq2seq
recurrent networks, plus a motion-mode task corrector.

Pipeline: synth -> preprocess -> train -> evaluate, and predict for fresh data.
"""

import argparse
import base64
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from gsmt_config import RunConfig, horizon_list
from gsmt_corrector import MotionModeModel, apply_corrector, fit_modes
from gsmt_errors import CompatibilityError, ContractError, DataError, GsmtError, WindowError
from gsmt_eval import (
    MissionAccuracyConfig,
    baseline_gat_rnn,
    baseline_ha,
    compare,
    evaluate_method,
    mean_travel_distance,
)
from gsmt_graphs import window_gamma
from gsmt_ingest import (
    DatasetSplit,
    NormStats,
    WindowSample,
    clean,
    denormalize,
    impute,
    normalize,
    parse_gps_csv,
    prepare_dataset,
    resample,
    stack_series,
    window_span,
    write_gps_csv,
)
from gsmt_model import ModelConfig, TrainState, WindowBatch, forward, params_from_arrays, predict, train
from gsmt_numerics import AdamState
from gsmt_synth import generate

# Setup logging
logger = logging.getLogger("gsmt")
handler = logging.StreamHandler()
formatter = logging.Formatter("%(levelname)s: %(message)s")
handler.setFormatter(formatter)
logger.addHandler(handler)
logger.setLevel(logging.INFO)

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# versioned containers
# ---------------------------------------------------------------------------


def encode_array(arr: np.ndarray) -> Dict[str, Any]:
    """Little-endian float64, base64"""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj: Dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def payload_digest(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def write_container(path: Path, kind: str, payload: Dict[str, Any]) -> str:
    digest = payload_digest(payload)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, "digest": digest, "payload": payload}
    try:
        Path(path).write_text(canonical_json(doc) + "\n")
    except OSError as e:
        raise GsmtError(f"cannot write {path}: {e}") from None
    return digest


def read_container(path: Path, kind: str, force: bool = False) -> Tuple[Dict[str, Any], str]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise GsmtError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise CompatibilityError(f"{path} is not a gsmt {kind} file: {e}") from None
    if not isinstance(doc, dict) or doc.get("kind") != kind:
        raise CompatibilityError(f"{path} is not a gsmt {kind} file")
    if doc.get("format_version") != FORMAT_VERSION and not force:
        raise CompatibilityError(f"{path} has format version {doc.get('format_version')}, expected {FORMAT_VERSION}")
    payload = doc["payload"]
    digest = payload_digest(payload)
    if digest != doc.get("digest"):
        raise CompatibilityError(f"{path} content digest mismatch (file corrupted or edited)")
    return payload, digest


def _windows_to_payload(windows: List[WindowSample], L_in: int, L_out: int, n: int) -> Dict[str, Any]:
    def stacked(attr: str, tail: Tuple[int, ...]) -> Dict[str, Any]:
        if not windows:
            return encode_array(np.zeros((0,) + tail))
        return encode_array(np.stack([getattr(w, attr) for w in windows]))

    return {
        "input_frames": stacked("input_frames", (L_in, n, 3)),
        "target_frames": stacked("target_frames", (L_out, n, 2)),
        "input_raw": stacked("input_raw", (L_in, n, 3)),
        "frame_times": stacked("frame_times", (L_in + L_out,)),
        "window_start_time": encode_array(np.array([w.window_start_time for w in windows])),
        "offset": [w.offset for w in windows],
    }


def _windows_from_payload(data: Dict[str, Any]) -> List[WindowSample]:
    inputs = decode_array(data["input_frames"])
    targets = decode_array(data["target_frames"])
    raw = decode_array(data["input_raw"])
    times = decode_array(data["frame_times"])
    starts = decode_array(data["window_start_time"])
    return [
        WindowSample(inputs[i], targets[i], raw[i], float(starts[i]), times[i], int(off))
        for i, off in enumerate(data["offset"])
    ]


@dataclass
class DatasetBundle:
    """Split windows, normalization and training-range facts for one config"""

    config_digest: str
    bus_ids: List[str]
    L_in: int
    L_out: int
    stats: NormStats
    split: DatasetSplit
    mean_travel_distance: float
    train_speeds: np.ndarray
    cleaning: Dict[str, Any] = field(default_factory=dict)

    def to_payload(self) -> Dict[str, Any]:
        n = len(self.bus_ids)
        return {
            "config_digest": self.config_digest,
            "bus_ids": list(self.bus_ids),
            "L_in": self.L_in,
            "L_out": self.L_out,
            "norm_stats": self.stats.to_dict(),
            "partitions": {
                name: _windows_to_payload(getattr(self.split, name), self.L_in, self.L_out, n)
                for name in ("train", "validation", "test")
            },
            "boundaries": list(self.split.boundaries),
            "dropped": dict(self.split.dropped),
            "mean_travel_distance": self.mean_travel_distance,
            "train_speeds": encode_array(self.train_speeds),
            "cleaning": self.cleaning,
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "DatasetBundle":
        parts = {name: _windows_from_payload(payload["partitions"][name]) for name in ("train", "validation", "test")}
        split = DatasetSplit(
            parts["train"], parts["validation"], parts["test"], tuple(payload["boundaries"]), dict(payload["dropped"])
        )
        return cls(
            config_digest=payload["config_digest"],
            bus_ids=list(payload["bus_ids"]),
            L_in=int(payload["L_in"]),
            L_out=int(payload["L_out"]),
            stats=NormStats.from_dict(payload["norm_stats"]),
            split=split,
            mean_travel_distance=float(payload["mean_travel_distance"]),
            train_speeds=decode_array(payload["train_speeds"]),
            cleaning=payload["cleaning"],
        )

    def save(self, path: Path) -> str:
        return write_container(path, "dataset", self.to_payload())

    @classmethod
    def load(cls, path: Path, force: bool = False) -> Tuple["DatasetBundle", str]:
        payload, digest = read_container(path, "dataset", force)
        return cls.from_payload(payload), digest


def _arrays_payload(arrays: Dict[str, np.ndarray]) -> Dict[str, Any]:
    return {name: encode_array(arrays[name]) for name in sorted(arrays)}


def _arrays_from_payload(data: Dict[str, Any]) -> Dict[str, np.ndarray]:
    return {name: decode_array(obj) for name, obj in data.items()}


@dataclass
class Checkpoint:
    config_digest: str
    bundle_digest: str
    model_config: ModelConfig
    stats: NormStats
    modes: MotionModeModel
    bus_ids: List[str]
    state: TrainState

    @property
    def params(self) -> Dict[str, np.ndarray]:
        return self.state.best_params

    def to_payload(self) -> Dict[str, Any]:
        adam = self.state.adam
        return {
            "config_digest": self.config_digest,
            "bundle_digest": self.bundle_digest,
            "model_config": asdict(self.model_config),
            "norm_stats": self.stats.to_dict(),
            "motion_modes": self.modes.to_dict(),
            "bus_ids": list(self.bus_ids),
            "params": _arrays_payload(self.state.best_params),
            "history": self.state.history,
            "resume": {
                "params": _arrays_payload(self.state.params),
                "adam": {
                    "lr": adam.lr,
                    "beta1": adam.beta1,
                    "beta2": adam.beta2,
                    "eps": adam.eps,
                    "t": adam.t,
                    "m": _arrays_payload(adam.m),
                    "v": _arrays_payload(adam.v),
                },
                "epochs_done": self.state.epochs_done,
                "best_val": None if not np.isfinite(self.state.best_val) else self.state.best_val,
                "bad_epochs": self.state.bad_epochs,
            },
        }

    @classmethod
    def from_payload(cls, payload: Dict[str, Any]) -> "Checkpoint":
        resume = payload["resume"]
        adam = resume["adam"]
        state = TrainState(
            params=_arrays_from_payload(resume["params"]),
            adam=AdamState(
                lr=adam["lr"],
                beta1=adam["beta1"],
                beta2=adam["beta2"],
                eps=adam["eps"],
                t=int(adam["t"]),
                m=_arrays_from_payload(adam["m"]),
                v=_arrays_from_payload(adam["v"]),
            ),
            best_params=_arrays_from_payload(payload["params"]),
            epochs_done=int(resume["epochs_done"]),
            best_val=float("inf") if resume["best_val"] is None else float(resume["best_val"]),
            bad_epochs=int(resume["bad_epochs"]),
            history=list(payload["history"]),
        )
        return cls(
            config_digest=payload["config_digest"],
            bundle_digest=payload["bundle_digest"],
            model_config=ModelConfig(**payload["model_config"]),
            stats=NormStats.from_dict(payload["norm_stats"]),
            modes=MotionModeModel.from_dict(payload["motion_modes"]),
            bus_ids=list(payload["bus_ids"]),
            state=state,
        )

    def save(self, path: Path) -> str:
        return write_container(path, "checkpoint", self.to_payload())

    @classmethod
    def load(cls, path: Path, force: bool = False) -> "Checkpoint":
        payload, _ = read_container(path, "checkpoint", force)
        return cls.from_payload(payload)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _stage(name: str, fn, *args, **kwargs):
    """Run one preprocessing stage, tagging data errors with the stage name"""
    try:
        return fn(*args, **kwargs)
    except DataError as e:
        raise type(e)(f"[stage={name}] {e}") from None
    except ContractError as e:
        raise DataError(f"[stage={name}] {e}") from None


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None


def _write_text(path: Path, text: str):
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise GsmtError(f"cannot write {path}: {e}") from None


class GsmtCLI:
    """Command dispatcher for the gsmt pipeline"""

    def __init__(self):
        self.config: Optional[RunConfig] = None

    def create_parser(self) -> argparse.ArgumentParser:
        """Create argument parser"""
        parser = argparse.ArgumentParser(description="Multi-bus trajectory prediction (GAT + seq2seq + task corrector)")
        parser.add_argument("--config", type=Path, help="YAML config file")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="Override a config key (repeatable)",
        )
        parser.add_argument("--verbose", action="store_true", help="Verbose output")
        parser.add_argument(
            "--log-level",
            choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
            default="INFO",
            help="Set logging level (default: INFO)",
        )

        subparsers = parser.add_subparsers(dest="command", help="Commands")

        synth_parser = subparsers.add_parser("synth", help="Generate a synthetic fleet GPS CSV")
        synth_parser.add_argument("-o", "--out", type=Path, required=True, help="Output CSV path")
        synth_parser.add_argument("--seed", type=int, help="Override synth.seed")

        pre_parser = subparsers.add_parser("preprocess", help="Clean, resample, window and split a GPS CSV")
        pre_parser.add_argument("csv", type=Path, help="GPS CSV (bus_id,timestamp,lat,lon,speed_kmh)")
        pre_parser.add_argument("-o", "--out", type=Path, required=True, help="Dataset bundle path")
        pre_parser.add_argument("--report", type=Path, help="Cleaning/split report JSON (default: <out>.report.json)")

        train_parser = subparsers.add_parser("train", help="Train GSMT on a dataset bundle")
        train_parser.add_argument("bundle", type=Path, help="Dataset bundle")
        train_parser.add_argument("-o", "--out", type=Path, required=True, help="Checkpoint path")
        train_parser.add_argument("--history", type=Path, help="Per-epoch history JSON (default: <out>.history.json)")
        train_parser.add_argument("--resume", type=Path, help="Continue from this checkpoint")
        train_parser.add_argument("--force", action="store_true", help="Ignore config/bundle digest mismatches")

        eval_parser = subparsers.add_parser("evaluate", help="Score GSMT and baselines on the test windows")
        eval_parser.add_argument("checkpoint", type=Path, help="Checkpoint")
        eval_parser.add_argument("bundle", type=Path, help="Dataset bundle")
        eval_parser.add_argument("-o", "--out", type=Path, required=True, help="Metrics JSON path")
        eval_parser.add_argument("--no-correct", action="store_true", help="Disable the task corrector")
        eval_parser.add_argument("--baselines", action="store_true", help="Also train/evaluate GAT+LSTM and GAT+GRU")
        eval_parser.add_argument("--paper-reference", action="store_true", help="Append the published comparison rows")
        eval_parser.add_argument("--horizons", help="Comma-separated horizons in minutes (default: eval.horizons)")
        eval_parser.add_argument("--oracle", action="store_true", help="Self-check: score the ground truth as GSMT output")
        eval_parser.add_argument("--force", action="store_true", help="Ignore digest mismatches")

        pred_parser = subparsers.add_parser("predict", help="Predict the next frames from recent GPS data")
        pred_parser.add_argument("checkpoint", type=Path, help="Checkpoint")
        pred_parser.add_argument("csv", type=Path, help="Recent GPS CSV covering one input window")
        pred_parser.add_argument("-o", "--out", type=Path, required=True, help="Predictions CSV path")
        pred_parser.add_argument("--geojson", type=Path, help="GeoJSON path (default: <out> with .geojson)")
        pred_parser.add_argument("--no-correct", action="store_true", help="Disable the task corrector")
        pred_parser.add_argument("--force", action="store_true", help="Ignore config digest mismatch")

        config_parser = subparsers.add_parser("config", help="Show the effective configuration")
        config_parser.add_argument("--json", action="store_true", help="JSON output")

        return parser

    def run(self, args: Optional[List[str]] = None):
        """Main entry point"""
        parser = self.create_parser()
        parsed_args = parser.parse_args(args)

        # Set logging level based on command-line argument
        logger.setLevel(getattr(logging, parsed_args.log_level))

        # Also enable debug if --verbose is used
        if parsed_args.verbose:
            logger.setLevel(logging.DEBUG)

        try:
            if parsed_args.command is None:
                parser.print_help()
                return
            self.config = RunConfig.load(parsed_args.config, parsed_args.overrides)
            if parsed_args.command == "synth":
                self.cmd_synth(parsed_args)
            elif parsed_args.command == "preprocess":
                self.cmd_preprocess(parsed_args)
            elif parsed_args.command == "train":
                self.cmd_train(parsed_args)
            elif parsed_args.command == "evaluate":
                self.cmd_evaluate(parsed_args)
            elif parsed_args.command == "predict":
                self.cmd_predict(parsed_args)
            elif parsed_args.command == "config":
                self.cmd_config(parsed_args)
            else:
                parser.print_help()

        except GsmtError as e:
            print(f"Error: {e}", file=sys.stderr)
            sys.exit(e.exit_code)
        except KeyboardInterrupt:
            print("\nAborted by user", file=sys.stderr)
            sys.exit(1)

    def cmd_synth(self, args):
        """Write a simulated fleet as GPS CSV"""
        cfg = self.config.synth
        if args.seed is not None:
            cfg.seed = args.seed
        records = generate(cfg)
        try:
            args.out.write_bytes(write_gps_csv(records))
        except OSError as e:
            raise GsmtError(f"cannot write {args.out}: {e}") from None

        counts: Dict[str, int] = {}
        for rec in records:
            counts[rec.bus_id] = counts.get(rec.bus_id, 0) + 1
        print(f"Wrote {len(records)} fixes for {len(counts)} buses to {args.out}")
        for bus, count in sorted(counts.items()):
            print(f"  {bus}: {count} fixes")

    def cmd_preprocess(self, args):
        """GPS CSV -> dataset bundle + report"""
        cfg = self.config
        ing = cfg.ingest
        data = _read_bytes(args.csv)

        records = _stage("parse", parse_gps_csv, data)
        kept, report = _stage("clean", clean, records, ing.clean_config())
        series = _stage("resample", resample, kept, ing.grid_step, ing.agg_window)
        imputed = {bus: _stage("impute", impute, s) for bus, s in series.items()}
        split, stats = _stage(
            "window",
            prepare_dataset,
            imputed,
            cfg.model.L_in,
            cfg.model.L_out,
            ing.stride,
            ing.model_step,
            tuple(ing.split),
        )

        if not split.train:
            raise DataError("[stage=window] training partition is empty; raise ingest.split[0]")
        train_end = split.train[-1].offset + window_span(cfg.model.L_in, cfg.model.L_out, ing.model_step)
        distance = _stage("travel_distance", mean_travel_distance, series, ing.model_step, train_end)
        speeds = np.concatenate([s.frames[:train_end][s.observed_mask[:train_end], 2] for s in series.values()])

        bus_ids = sorted(imputed)
        bundle = DatasetBundle(
            config_digest=cfg.digest(),
            bus_ids=bus_ids,
            L_in=cfg.model.L_in,
            L_out=cfg.model.L_out,
            stats=stats,
            split=split,
            mean_travel_distance=distance,
            train_speeds=speeds,
            cleaning=report.to_dict(),
        )
        digest = bundle.save(args.out)

        summary = {
            "cleaning": report.to_dict(),
            "split": {
                "train": len(split.train),
                "validation": len(split.validation),
                "test": len(split.test),
                "boundaries": list(split.boundaries),
                "dropped": dict(split.dropped),
            },
            "buses": bus_ids,
            "mean_travel_distance_m": distance,
            "digest": digest,
        }
        report_path = args.report or args.out.with_name(args.out.name + ".report.json")
        _write_text(report_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")

        print(f"Dataset: {len(split.train)} train / {len(split.validation)} validation / {len(split.test)} test windows")
        print(f"Buses: {', '.join(bus_ids)}")
        print(f"Mean travel distance per model step: {distance:.1f} m")
        print(f"Digest: {digest}")

    def _check_digest(self, what: str, found: str, expected: str, force: bool):
        if found == expected:
            return
        message = f"{what} digest {found[:12]} does not match {expected[:12]}"
        if not force:
            raise CompatibilityError(message + " (use --force to override)")
        logger.warning(message + "; continuing because of --force")

    def cmd_train(self, args):
        """Train GSMT and fit the motion modes"""
        cfg = self.config
        bundle, bundle_digest = DatasetBundle.load(args.bundle, args.force)
        self._check_digest("bundle config", bundle.config_digest, cfg.digest(), args.force)

        state = None
        if args.resume:
            previous = Checkpoint.load(args.resume, args.force)
            self._check_digest("resume checkpoint bundle", previous.bundle_digest, bundle_digest, args.force)
            state = previous.state
            logger.info(f"Resuming after epoch {state.epochs_done}")

        state = train(bundle.split, cfg.model, cfg.train, cfg.graphs, state)
        modes = fit_modes(bundle.train_speeds, cfg.corrector.betas(), cfg.corrector.max_iter)

        checkpoint = Checkpoint(
            config_digest=cfg.digest(),
            bundle_digest=bundle_digest,
            model_config=cfg.model,
            stats=bundle.stats,
            modes=modes,
            bus_ids=bundle.bus_ids,
            state=state,
        )
        checkpoint.save(args.out)
        history_path = args.history or args.out.with_name(args.out.name + ".history.json")
        _write_text(history_path, json.dumps(state.history, indent=2) + "\n")

        print(f"Trained {state.epochs_done} epochs; best validation MAE {state.best_val:.6f}")
        print(f"Checkpoint: {args.out}")

    def cmd_evaluate(self, args):
        """Score GSMT, HA and optional baselines on the test windows"""
        cfg = self.config
        checkpoint = Checkpoint.load(args.checkpoint, args.force)
        bundle, bundle_digest = DatasetBundle.load(args.bundle, args.force)
        self._check_digest("checkpoint bundle", checkpoint.bundle_digest, bundle_digest, args.force)
        self._check_digest("checkpoint config", checkpoint.config_digest, bundle.config_digest, args.force)
        self._check_digest("active config", cfg.digest(), checkpoint.config_digest, args.force)

        split = bundle.split
        if not split.test:
            raise DataError("dataset bundle has no test windows")
        horizons = horizon_list(args.horizons) if args.horizons else list(cfg.eval.horizons)
        step_minutes = cfg.ingest.model_step_seconds / 60.0
        accuracy = MissionAccuracyConfig(cfg.eval.margin, bundle.mean_travel_distance, cfg.eval.accuracy_mode)
        model_config = checkpoint.model_config
        test = WindowBatch.from_windows(split.test, cfg.graphs)
        truth = test.targets

        def score(method: str, pred: np.ndarray):
            return evaluate_method(method, pred, truth, bundle.stats, accuracy, horizons, step_minutes, checkpoint.config_digest)

        raw_pred = truth.copy() if args.oracle else predict(params_from_arrays(checkpoint.params, model_config), test, model_config)
        correcting = cfg.corrector.enabled and not args.no_correct and not args.oracle
        gsmt_pred = raw_pred
        if correcting:
            modes = MotionModeModel(checkpoint.modes.centroids, cfg.corrector.betas())
            gsmt_pred = apply_corrector(
                raw_pred, test.raw, bundle.stats, modes, cfg.ingest.model_step_seconds, cfg.corrector.recent_steps
            )

        reports = [score("GSMT" if correcting or args.oracle else "GSMT (uncorrected)", gsmt_pred)]
        reports.append(score("HA", baseline_ha(split.train, len(test))))
        if args.baselines:
            _, lstm_pred = baseline_gat_rnn(split, "lstm_plain", model_config, cfg.train, cfg.graphs, shared=checkpoint.params)
            reports.append(score("GAT+LSTM", lstm_pred))
            _, gru_pred = baseline_gat_rnn(split, "gru", model_config, cfg.train, cfg.graphs)
            reports.append(score("GAT+GRU", gru_pred))

        report = compare(reports, published=args.paper_reference)
        _write_text(args.out, report.to_json(datetime.now(timezone.utc).isoformat()))
        print(report.render_table(), end="")
        print(f"Metrics: {args.out}")

    def cmd_predict(self, args):
        """Forecast the next L_out frames for every bus from recent GPS data"""
        cfg = self.config
        ing = cfg.ingest
        checkpoint = Checkpoint.load(args.checkpoint, args.force)
        self._check_digest("checkpoint config", checkpoint.config_digest, cfg.digest(), args.force)
        model_config = checkpoint.model_config

        records = _stage("parse", parse_gps_csv, _read_bytes(args.csv))
        kept, _ = _stage("clean", clean, records, ing.clean_config())
        needed_s = (model_config.L_in - 1) * ing.model_step_seconds
        for bus in checkpoint.bus_ids:
            times = [r.timestamp for r in kept if r.bus_id == bus]
            if not times or max(times) - min(times) < needed_s:
                covered = 0.0 if not times else max(times) - min(times)
                raise WindowError(
                    f"bus {bus} covers {covered:.0f}s of history; one input window needs {needed_s:.0f}s"
                    f" ({model_config.L_in} frames {ing.model_step_seconds:.0f}s apart)"
                )
        kept = [r for r in kept if r.bus_id in set(checkpoint.bus_ids)]

        series = _stage("resample", resample, kept, ing.grid_step, ing.agg_window, checkpoint.bus_ids)
        imputed = [_stage("impute", impute, s) for s in series.values()]
        _, stacked, _, _ = stack_series(imputed)
        span = (model_config.L_in - 1) * ing.model_step + 1
        if stacked.shape[0] < span:
            raise WindowError(f"history spans {stacked.shape[0]} grid steps; one input window needs {span}")
        idx = stacked.shape[0] - 1 - ing.model_step * np.arange(model_config.L_in - 1, -1, -1)
        raw = stacked[idx]

        params = params_from_arrays(checkpoint.params, model_config)
        pred = forward(normalize(raw, checkpoint.stats), window_gamma(raw, cfg.graphs), params, model_config).numpy()
        if cfg.corrector.enabled and not args.no_correct:
            modes = MotionModeModel(checkpoint.modes.centroids, cfg.corrector.betas())
            pred = apply_corrector(
                pred[None], raw[None], checkpoint.stats, modes, ing.model_step_seconds, cfg.corrector.recent_steps
            )[0]
        coords = denormalize(pred, checkpoint.stats)

        rows = [
            (bus, step + 1, float(coords[step, j, 0]), float(coords[step, j, 1]))
            for j, bus in enumerate(checkpoint.bus_ids)
            for step in range(model_config.L_out)
        ]
        frame = pd.DataFrame(rows, columns=["bus_id", "step", "lat", "lon"])
        try:
            frame.to_csv(args.out, index=False, lineterminator="\n")
        except OSError as e:
            raise GsmtError(f"cannot write {args.out}: {e}") from None

        geojson_path = args.geojson or args.out.with_suffix(".geojson")
        collection = predictions_geojson(checkpoint.bus_ids, raw, coords)
        _write_text(geojson_path, json.dumps(collection, indent=2) + "\n")
        print(f"Wrote {len(rows)} predicted positions to {args.out} and {geojson_path}")

    def cmd_config(self, args):
        """Show the effective configuration"""
        if args.json:
            print(json.dumps({"config": self.config.to_dict(), "digest": self.config.digest()}, indent=2))
        else:
            print(self.config.to_yaml(), end="")
            print(f"# digest: {self.config.digest()}")


def _line_or_point(positions: List[List[float]]) -> Dict[str, Any]:
    if len(positions) >= 2:
        return {"type": "LineString", "coordinates": positions}
    return {"type": "Point", "coordinates": positions[0]}


def predictions_geojson(bus_ids: List[str], history: np.ndarray, predicted: np.ndarray) -> Dict[str, Any]:
    """RFC 7946 FeatureCollection: per bus an observed history and a predicted line ([lon, lat] order)"""
    features = []
    for j, bus in enumerate(bus_ids):
        observed = [[float(history[t, j, 1]), float(history[t, j, 0])] for t in range(history.shape[0])]
        ahead = [[float(predicted[t, j, 1]), float(predicted[t, j, 0])] for t in range(predicted.shape[0])]
        features.append({"type": "Feature", "geometry": _line_or_point(observed), "properties": {"bus_id": bus, "kind": "history"}})
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [observed[-1]] + ahead},
                "properties": {"bus_id": bus, "kind": "predicted"},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def main():
    """Entry point for CLI"""
    cli = GsmtCLI()
    cli.run()


if __name__ == "__main__":
    main()
