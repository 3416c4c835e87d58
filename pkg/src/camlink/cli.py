"""Batch CLI: simulate, train, track, eval, bench.

Every invocation writes exactly one run manifest next to its outputs.
Flags can be defaulted through DYG_-prefixed environment variables
(DYG_SEED, DYG_OUT, DYG_THRESHOLD, DYG_WINDOW, DYG_THREADS, DYG_EPOCHS,
DYG_CONFIG); explicit flags win.  Exit codes: 0 success, 2 usage or
config problem, 3 violated data contract.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .attention import Model, ModelConfig
from .errors import ConfigError, DataError
from .metrics import BoxRecord, EvalInput, EvalReport, evaluate
from .pipeline import bench_association, track_scenario
from .simulator import (WorldConfig, generate, parse_kv_text, read_scenario,
                        read_world_config, write_scenario)
from .training import (Trainer, TrainConfig, build_chunks, train_config_from_kv,
                       write_training_csv)

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
ENV_PREFIX = "DYG_"


def _env(name: str, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper(), fallback)


def _env_int(name: str):
    v = _env(name)
    return int(v) if v is not None else None


def _env_float(name: str):
    v = _env(name)
    return float(v) if v is not None else None


# ---------------------------------------------------------------------------
# manifests


def _config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_path: str, command: str, config_doc, seed,
                    inputs: list[str], outputs: list[str], wall: float,
                    peak_nodes: int | None = None) -> None:
    doc = {
        "command": command,
        "config_hash": _config_hash(config_doc),
        "seed": seed,
        "code_version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_sec": wall,
        "peak_node_count": peak_nodes,
    }
    with open(f"{out_path}.manifest.json", "w") as fh:
        json.dump(doc, fh, indent=2)


def _write_line_svg(path: str, xs: list[float], ys: list[float],
                    title: str, xlabel: str, ylabel: str) -> None:
    """Minimal static line chart, enough to eyeball a trend."""
    w, h, pad = 640, 400, 60
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    xspan = (xmax - xmin) or 1.0
    yspan = (ymax - ymin) or 1.0

    def sx(x):
        return pad + (x - xmin) / xspan * (w - 2 * pad)

    def sy(y):
        return h - pad - (y - ymin) / yspan * (h - 2 * pad)

    points = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="24" text-anchor="middle" font-size="16">{title}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 16}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{h / 2}" font-size="12" transform="rotate(-90 16 {h / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<polyline points="{points}" fill="none" stroke="steelblue" stroke-width="2"/>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="steelblue"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    if args.config:
        config = read_world_config(args.config)
    else:
        config = WorldConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    config.validate()
    scenario = generate(config)
    write_scenario(scenario, args.out)
    _write_manifest(args.out, "simulate", scenario.meta["config"], config.seed,
                    [args.config] if args.config else [], [args.out],
                    time.perf_counter() - start)
    print(f"wrote {len(scenario.observations)} observations over "
          f"{scenario.num_frames} frames to {args.out}")
    return EXIT_OK


def _split_model_keys(kv: dict[str, str]) -> tuple[dict[str, str], dict[str, str]]:
    model_kv = {k[len("model_"):]: v for k, v in kv.items() if k.startswith("model_")}
    train_kv = {k: v for k, v in kv.items() if not k.startswith("model_")}
    return train_kv, model_kv


def _model_config_from_kv(kv: dict[str, str], feature_dim: int, num_cameras: int,
                          window: int, seed: int) -> ModelConfig:
    ints = {"camera_dim", "ffn_hidden", "out_dim"}
    tuples = {"structural_heads", "structural_head_dim", "temporal_heads", "temporal_head_dim"}
    kwargs: dict = {}
    for key, value in kv.items():
        try:
            if key in ints:
                kwargs[key] = int(value)
            elif key in tuples:
                kwargs[key] = tuple(int(x) for x in value.split(",") if x.strip())
            elif key == "leaky_slope":
                kwargs[key] = float(value)
            elif key == "classifier":
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown model config key model_{key}")
        except ValueError as exc:
            raise ConfigError(f"bad value for model_{key}: {value!r}") from exc
    return ModelConfig(feature_dim=feature_dim, num_cameras=num_cameras,
                       window=window, seed=seed, **kwargs)


def cmd_train(args) -> int:
    start = time.perf_counter()
    kv = {}
    if args.config:
        with open(args.config) as fh:
            kv = parse_kv_text(fh.read())
    train_kv, model_kv = _split_model_keys(kv)
    config = train_config_from_kv(train_kv)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.window is not None:
        config = dataclasses.replace(config, window=args.window)
    if args.epochs is not None:
        config = dataclasses.replace(config, epochs=args.epochs)
    config.validate()

    scenarios = [read_scenario(p) for p in args.scenario]
    chunks = []
    for sc in scenarios:
        chunks.extend(build_chunks(sc, config))
    if not chunks:
        raise ConfigError("scenarios produced no training chunks; too few frames?")

    if args.resume:
        with open(args.resume) as fh:
            trainer = Trainer.from_checkpoint(chunks, json.load(fh))
        if args.epochs is not None:
            target = args.epochs
        else:
            target = trainer.config.epochs
    else:
        feature_dim = scenarios[0].feature_dim
        num_cameras = max(sc.num_cameras for sc in scenarios)
        model_config = _model_config_from_kv(
            model_kv, feature_dim, num_cameras, config.window, config.seed)
        trainer = Trainer(chunks, config, Model(model_config))
        target = config.epochs

    epochs_run = trainer.epoch
    while trainer.epoch < target:
        stats = trainer._epoch()
        print(f"epoch {stats.epoch:3d}  loss {stats.loss:10.4f}  val_auc {stats.val_auc:.4f}")
    result = trainer.result()

    result.model.save(args.out)
    with open(f"{args.out}.ckpt.json", "w") as fh:
        json.dump(trainer.checkpoint_dict(), fh)
    write_training_csv(f"{args.out}.train.csv", trainer.history)
    _write_manifest(
        args.out, "train",
        {"train": dataclasses.asdict(config), "model": trainer.model.config.to_dict()},
        config.seed, list(args.scenario), [args.out, f"{args.out}.ckpt.json", f"{args.out}.train.csv"],
        time.perf_counter() - start)
    print(f"trained {trainer.epoch - epochs_run} epochs on {len(chunks)} chunks; "
          f"best val_auc {result.best_val_auc:.4f} at epoch {result.best_epoch}")
    return EXIT_OK


def cmd_track(args) -> int:
    start = time.perf_counter()
    model = Model.load(args.model)
    scenario = read_scenario(args.scenario)
    result = track_scenario(
        scenario, model,
        threshold=args.threshold,
        merge_threshold=args.merge_threshold,
        merge_every=args.merge_every,
        staleness=args.staleness,
        window=args.window,
    )
    with open(args.out, "w") as fh:
        for p in result.predictions:
            fh.write(json.dumps({
                "t": p.t, "cam": p.camera_id, "track": p.local_track_id,
                "bbox": list(p.bbox), "id": p.global_id,
            }) + "\n")
    decisions_path = f"{args.out}.decisions.jsonl"
    with open(decisions_path, "w") as fh:
        for d in result.decisions:
            fh.write(json.dumps(d) + "\n")
    outputs = [args.out, decisions_path]
    if args.dump_graph:
        with open(args.dump_graph, "w") as fh:
            json.dump(result.history.to_json_dict(), fh)
        outputs.append(args.dump_graph)
    _write_manifest(
        args.out, "track",
        {"model": model.config.to_dict(), "threshold": args.threshold,
         "merge_threshold": args.merge_threshold, "merge_every": args.merge_every,
         "staleness": args.staleness, "window": args.window},
        None, [args.model, args.scenario], outputs,
        time.perf_counter() - start, peak_nodes=result.peak_nodes)
    accepted = sum(1 for d in result.decisions if d["accepted"])
    print(f"tracked {scenario.num_frames} frames: {result.peak_nodes} tracklets, "
          f"{accepted} accepted links, {len(result.merges)} fragment merges")
    return EXIT_OK


def _read_predictions(path) -> list[BoxRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append(BoxRecord(
                    t=int(rec["t"]), camera_id=int(rec["cam"]),
                    obj_id=int(rec["id"]), bbox=tuple(float(x) for x in rec["bbox"]),
                ))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction line ({exc})") from exc
    return records


def cmd_eval(args) -> int:
    start = time.perf_counter()
    scenario = read_scenario(args.scenario)
    if not scenario.has_ground_truth:
        raise DataError(f"{args.scenario}: observations lack the gt field; cannot evaluate")
    gt = [
        BoxRecord(t=o.t, camera_id=o.camera_id, obj_id=o.gt_global_id, bbox=o.bbox)
        for o in scenario.observations
    ]
    preds = _read_predictions(args.pred)
    report = evaluate(EvalInput(gt, preds, args.iou_threshold))
    json_path = f"{args.out}.json"
    csv_path = f"{args.out}.csv"
    report.write_json(json_path)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EvalReport.CSV_COLUMNS)
        writer.writerow([repr(x) if isinstance(x, float) else x for x in report.csv_row()])
    _write_manifest(args.out, "eval", {"iou_threshold": args.iou_threshold}, None,
                    [args.pred, args.scenario], [json_path, csv_path],
                    time.perf_counter() - start)
    print(f"MOTA {report.mota:.4f}  MOTP {report.motp:.4f}  IDF1 {report.idf1:.4f}  "
          f"IDP {report.idp:.4f}  IDR {report.idr:.4f}  IDS {report.ids}  MCTA {report.mcta:.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    start = time.perf_counter()
    counts = [int(x) for x in args.counts.split(",") if x.strip()]
    if not counts:
        raise ConfigError("bench needs at least one node count")
    if args.model:
        model = Model.load(args.model)
    else:
        model = Model(ModelConfig(feature_dim=args.feature_dim, num_cameras=4,
                                  seed=args.seed or 0))
    rows = []
    for n in counts:
        point = bench_association(
            model, n, live=args.live, new_per_step=args.new_per_step,
            steps=args.steps, seed=args.seed or 0)
        rows.append(point)
        print(f"nodes {point.nodes:7d}  edges {point.edges:7d}  "
              f"Hz {point.hz:8.2f}  step {point.step_seconds * 1e3:7.2f} ms")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nodes", "edges", "hz"])
        for p in rows:
            writer.writerow([p.nodes, p.edges, repr(p.hz)])
    outputs = [args.out]
    if args.plot:
        _write_line_svg(args.plot, [p.nodes for p in rows], [p.hz for p in rows],
                        "association throughput", "graph nodes", "steps per second")
        outputs.append(args.plot)
    _write_manifest(args.out, "bench",
                    {"counts": counts, "live": args.live, "steps": args.steps,
                     "new_per_step": args.new_per_step,
                     "model": model.config.to_dict()},
                    args.seed, [args.model] if args.model else [], outputs,
                    time.perf_counter() - start, peak_nodes=max(p.nodes for p in rows))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camlink",
        description="multi-camera tracklet association with dynamic-graph attention",
        epilog="flags default from DYG_* environment variables (e.g. DYG_SEED)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", default=_env("config"), help="world config (key = value lines)")
    p.add_argument("--seed", type=int, default=_env_int("seed"))
    p.add_argument("--out", required=_env("out") is None, default=_env("out"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on scenarios with ground truth")
    p.add_argument("--scenario", nargs="+", required=True)
    p.add_argument("--config", default=_env("config"), help="train config (key = value lines)")
    p.add_argument("--seed", type=int, default=_env_int("seed"))
    p.add_argument("--window", type=int, default=_env_int("window"))
    p.add_argument("--epochs", type=int, default=_env_int("epochs"))
    p.add_argument("--resume", help="continue from a checkpoint file")
    p.add_argument("--out", required=_env("out") is None, default=_env("out"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("track", help="assign global ids to a scenario online")
    p.add_argument("--scenario", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=_env_float("threshold") or 0.5)
    p.add_argument("--merge-threshold", type=float, default=0.6)
    p.add_argument("--merge-every", type=int, default=1)
    p.add_argument("--staleness", type=int, default=None)
    p.add_argument("--window", type=int, default=_env_int("window"))
    p.add_argument("--dump-graph", help="also write the final graph state as JSON")
    p.add_argument("--out", required=_env("out") is None, default=_env("out"))
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--out", required=_env("out") is None, default=_env("out"),
                   help="report basename; writes <out>.json and <out>.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure association throughput vs graph size")
    p.add_argument("--counts", required=True, help="comma-separated node counts")
    p.add_argument("--model", default=None)
    p.add_argument("--feature-dim", type=int, default=64,
                   help="feature dim for the default model when --model is omitted")
    p.add_argument("--live", type=int, default=48)
    p.add_argument("--new-per-step", type=int, default=4)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=_env_int("seed"))
    p.add_argument("--plot", help="also write an SVG line chart")
    p.add_argument("--out", required=_env("out") is None, default=_env("out"))
    p.set_defaults(func=cmd_bench)

    for sp in sub.choices.values():
        sp.add_argument("--threads", type=int, default=_env_int("threads"),
                        help="cap BLAS worker threads (applied before numpy loads)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error(f"--threads must be >= 1, got {args.threads}")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
