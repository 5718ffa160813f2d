"""Command-line entry point.

Subcommands mirror the pipeline stages so each can run and be piped
through files independently::

    posegraph synth --config cfg.json --out data/
    posegraph infer --config cfg.json --manifest data/manifest.json \\
        --mode st-infer --out preds_st.json
    posegraph train --config cfg.json --manifest data/manifest.json --out run/
    posegraph eval  --manifest data/manifest.json --pred baseline=b.json \\
        --pred st-infer=st.json --out report/
    posegraph check

Exit codes: 0 success, 1 usage or configuration error, 2 numeric/oracle
failure. Every command is deterministic given its config and seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as pio
from .engine import InferenceConfig, decode_track, infer_slice
from .errors import ConfigError, FormatError, GenerationError, GraphSpecError, TrainingDiverged
from .graph import PartGraph, SpringParams, build_graph, builtin_graph, builtin_names, init_spring_params
from .learning import TrainConfig, sgd_train
from .metrics import emit_report, pck_curve
from .selfcheck import run_all_checks
from .synth import CorruptionSpec, SyntheticSlice, make_slice

INFER_MODES = ("baseline", "s-infer", "st-infer")
DEFAULT_ALPHAS = (0.05, 0.1, 0.2)


@dataclasses.dataclass(frozen=True)
class SynthConfig:
    slices: int = 50
    seed: int = 0
    max_velocity: float = 3.0
    flow_noise: float = 0.0


@dataclasses.dataclass(frozen=True)
class RunConfig:
    graph: PartGraph
    graph_spec: dict
    frames: int = 5
    grid: tuple[int, int] = (48, 48)
    synth: SynthConfig = SynthConfig()
    corruption: CorruptionSpec = CorruptionSpec()
    inference: InferenceConfig = InferenceConfig()
    train: TrainConfig = TrainConfig()
    params_path: str | None = None


def _from_dict(cls, obj, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object, got {type(obj).__name__}")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(obj) - fields
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = {"graph", "frames", "grid", "synth", "corruption", "inference", "train", "params"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")

    graph_entry = obj.get("graph", "penn13")
    if isinstance(graph_entry, str):
        if graph_entry in builtin_names():
            graph_spec = None
            graph = builtin_graph(graph_entry)
            graph_spec = graph.to_spec()
        else:
            spec_path = Path(path).parent / graph_entry if not Path(graph_entry).is_absolute() else Path(graph_entry)
            if not spec_path.exists():
                raise ConfigError(
                    f"graph {graph_entry!r} is neither a built-in ({builtin_names()}) nor an existing file"
                )
            with open(spec_path, "r", encoding="utf-8") as fh:
                graph_spec = json.load(fh)
            graph = build_graph(graph_spec)
    else:
        graph_spec = graph_entry
        graph = build_graph(graph_entry)

    grid = obj.get("grid", [48, 48])
    if not (isinstance(grid, list) and len(grid) == 2):
        raise ConfigError(f"grid must be [H, W], got {grid!r}")
    inference = _from_dict(InferenceConfig, obj.get("inference", {}), "inference")
    train = _from_dict(TrainConfig, obj.get("train", {}), "train")
    corruption = _from_dict(CorruptionSpec, obj.get("corruption", {}), "corruption")
    synth = _from_dict(SynthConfig, obj.get("synth", {}), "synth")
    frames = int(obj.get("frames", 5))
    if frames < 1:
        raise ConfigError(f"frames must be >= 1, got {frames}")
    return RunConfig(
        graph=graph,
        graph_spec=graph_spec,
        frames=frames,
        grid=(int(grid[0]), int(grid[1])),
        synth=synth,
        corruption=corruption,
        inference=inference,
        train=train,
        params_path=obj.get("params"),
    )


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def cmd_synth(config: RunConfig, out_dir, seed: int | None = None) -> Path:
    """Generate a dataset of slices plus its manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = config.synth.seed if seed is None else seed
    entries = []
    for i in range(config.synth.slices):
        sl = make_slice(
            config.graph,
            config.frames,
            config.grid,
            dataclasses.replace(config.corruption, seed=config.corruption.seed + i),
            seed=base_seed + i,
            max_velocity=config.synth.max_velocity,
            flow_noise=config.synth.flow_noise,
        )
        sid = f"slice_{i:03d}"
        pio.save_heatmap_sequence(sl.unaries, out / f"{sid}.hmsq")
        entry = {"id": sid, "heatmaps": f"{sid}.hmsq", "track": f"{sid}.track.json"}
        if sl.flows is not None:
            pio.save_flow_set(sl.flows, out / f"{sid}.flsq")
            entry["flows"] = f"{sid}.flsq"
        pio.save_track(sl.track, out / f"{sid}.track.json")
        entries.append(entry)
    manifest = {
        "version": 1,
        "graph": config.graph_spec,
        "frames": config.frames,
        "grid": list(config.grid),
        "seed": base_seed,
        "clean": config.corruption.clean,
        "corruption": dataclasses.asdict(config.corruption),
        "slices": entries,
    }
    manifest_path = out / "manifest.json"
    _write_json(manifest, manifest_path)
    return manifest_path


def load_manifest(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("graph", "slices", "frames", "grid"):
        if key not in manifest:
            raise ConfigError(f"{path}: manifest is missing {key!r}")
    return manifest


def _infer_one(entry, base_dir: Path, graph: PartGraph, params: SpringParams, config: InferenceConfig, mode: str):
    unaries = pio.load_heatmap_sequence(base_dir / entry["heatmaps"])
    if mode == "baseline":
        track = decode_track(unaries.maps)
    elif mode == "s-infer":
        _, track = infer_slice(unaries, None, graph.without_temporal(), params, config)
    else:
        flows = None
        if graph.temporal_offsets and unaries.frames > 1:
            if "flows" not in entry:
                raise ConfigError(
                    f"slice {entry['id']}: st-infer needs flow fields for every adjacent frame pair "
                    "but the manifest lists none"
                )
            flow_path = base_dir / entry["flows"]
            if not flow_path.exists():
                raise ConfigError(f"slice {entry['id']}: flow file {flow_path} is missing")
            flows = pio.load_flow_set(flow_path)
        _, track = infer_slice(unaries, flows, graph, params, config)
    return entry["id"], pio.track_to_obj(track)


def _infer_worker(args):
    entry, base_dir, graph_spec, params_obj, config_kw, mode = args
    graph = build_graph(graph_spec)
    params = SpringParams.from_json_obj(params_obj)
    return _infer_one(entry, Path(base_dir), graph, params, InferenceConfig(**config_kw), mode)


def cmd_infer(config: RunConfig, manifest_path, mode: str, out_path, params: SpringParams | None = None,
              threads: int = 1) -> dict:
    """Predict tracks for every slice of a dataset; writes and returns them."""
    if mode not in INFER_MODES:
        raise ConfigError(f"mode must be one of {INFER_MODES}, got {mode!r}")
    manifest = load_manifest(manifest_path)
    graph = build_graph(manifest["graph"])
    base_dir = Path(manifest_path).parent
    if params is None:
        if config.params_path:
            params = SpringParams.load(config.params_path)
        else:
            params = init_spring_params(graph)
    results = {}
    if threads > 1:
        jobs = [
            (entry, str(base_dir), manifest["graph"], params.to_json_obj(),
             dataclasses.asdict(config.inference), mode)
            for entry in manifest["slices"]
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for sid, track_obj in pool.map(_infer_worker, jobs):
                results[sid] = track_obj
    else:
        for entry in manifest["slices"]:
            sid, track_obj = _infer_one(entry, base_dir, graph, params, config.inference, mode)
            results[sid] = track_obj
    predictions = {"model": mode, "slices": results}
    if out_path is not None:
        _write_json(predictions, out_path)
    return predictions


def cmd_train(config: RunConfig, manifest_path, out_dir) -> tuple[Path, Path]:
    """Train spring weights on a dataset; writes params.json and loss.csv."""
    manifest = load_manifest(manifest_path)
    graph = build_graph(manifest["graph"])
    base_dir = Path(manifest_path).parent
    dataset = []
    for entry in manifest["slices"]:
        unaries = pio.load_heatmap_sequence(base_dir / entry["heatmaps"])
        flows = pio.load_flow_set(base_dir / entry["flows"]) if "flows" in entry else None
        track = pio.load_track(base_dir / entry["track"])
        dataset.append(SyntheticSlice(track=track, unaries=unaries, flows=flows, spec=CorruptionSpec()))
    params, trace = sgd_train(dataset, graph, config.train, config.inference)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params_path = out / "params.json"
    params.save(params_path)
    trace_path = out / "loss.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "lr"])
        for step, loss, lr in trace:
            writer.writerow([step, f"{loss:.10g}", f"{lr:.10g}"])
    return params_path, trace_path


def _load_tracks_for_eval(manifest, manifest_path, predictions_by_model):
    base_dir = Path(manifest_path).parent
    gt_frames, pred_frames = [], {name: [] for name in predictions_by_model}
    for entry in manifest["slices"]:
        gt = pio.load_track(base_dir / entry["track"])
        gt_frames.append(gt)
        for name, preds in predictions_by_model.items():
            if entry["id"] not in preds["slices"]:
                raise ConfigError(f"predictions {name!r} are missing slice {entry['id']}")
            pred_frames[name].append(pio.track_from_json(preds["slices"][entry["id"]]))
    def concat(tracks):
        return type(tracks[0])(
            np.concatenate([t.positions for t in tracks], axis=0),
            np.concatenate([t.visibility for t in tracks], axis=0),
        )
    return concat(gt_frames), {name: concat(ts) for name, ts in pred_frames.items()}


def cmd_eval(manifest_path, predictions_by_model: dict, alphas, out_dir) -> list:
    """Score predictions against the dataset ground truth; emit CSV + SVG."""
    manifest = load_manifest(manifest_path)
    part_names = build_graph(manifest["graph"]).part_names
    alphas = sorted(float(a) for a in alphas)
    gt, preds = _load_tracks_for_eval(manifest, manifest_path, predictions_by_model)
    reports = {name: pck_curve(track, gt, alphas, part_names) for name, track in preds.items()}
    return emit_report(reports, out_dir)


def cmd_check(out=sys.stdout) -> int:
    """Run every oracle suite; returns the number of failing suites."""
    results = run_all_checks()
    failures = 0
    for res in results:
        print(res.line(), file=out)
        failures += 0 if res.passed else 1
    print(("all checks passed" if failures == 0 else f"{failures} suite(s) FAILED"), file=out)
    return failures


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posegraph", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("infer", help="predict tracks for a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=INFER_MODES, default="st-infer")
    p.add_argument("--out", required=True)
    p.add_argument("--params", default=None, help="spring parameter checkpoint JSON")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("train", help="train spring weights on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predictions and emit report files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--alphas", default=",".join(str(a) for a in DEFAULT_ALPHAS))
    p.add_argument("--out", required=True)

    sub.add_parser("check", help="run the built-in oracle suites")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            config = load_run_config(args.config)
            manifest = cmd_synth(config, args.out, seed=args.seed)
            print(f"wrote {manifest}")
        elif args.command == "infer":
            config = load_run_config(args.config)
            params = SpringParams.load(args.params) if args.params else None
            cmd_infer(config, args.manifest, args.mode, args.out, params=params, threads=args.threads)
            print(f"wrote {args.out}")
        elif args.command == "train":
            config = load_run_config(args.config)
            params_path, trace_path = cmd_train(config, args.manifest, args.out)
            print(f"wrote {params_path} and {trace_path}")
        elif args.command == "eval":
            predictions = {}
            for spec in args.pred:
                if "=" not in spec:
                    raise ConfigError(f"--pred expects NAME=PATH, got {spec!r}")
                name, path = spec.split("=", 1)
                with open(path, "r", encoding="utf-8") as fh:
                    predictions[name] = json.load(fh)
            alphas = [float(a) for a in args.alphas.split(",") if a]
            written = cmd_eval(args.manifest, predictions, alphas, args.out)
            print("\n".join(str(p) for p in written))
        elif args.command == "check":
            return 2 if cmd_check() else 0
    except (ConfigError, GraphSpecError, FormatError, GenerationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
