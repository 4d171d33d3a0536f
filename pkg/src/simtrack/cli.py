"""Command-line entry point: ``simtrack {train|track|eval|ablate|gradcheck|dump-attn|print-config}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .backbone import target_attention_map
from .config import ConfigError, InteractionSchedule, RunConfig, load_run_config
from .formats import read_csv, read_pfm, write_bytes, write_csv, write_pfm, write_text, encode_pgm
from .gradcheck import format_table, run_suite
from .model import SimTrackModel
from .pipeline.data import exemplar_crop, test_videos
from .pipeline.crop import crop_resize
from .pipeline.metrics import mean_auc
from .pipeline.track import static_baseline, track_many
from .pipeline.train import train

log = logging.getLogger("simtrack")

ABLATIONS = {
    "interaction": [("gates_100", 1.0), ("gates_50", 0.5), ("gates_25", 0.25), ("gates_0", 0.0)],
    "decoder": [("decoder_0", 0), ("decoder_1", 1), ("decoder_3", 3)],
}


class UsageError(Exception):
    pass


def _threads():
    """Cap BLAS threads from SIMTRACK_THREADS (results do not depend on it)."""
    value = os.environ.get("SIMTRACK_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"SIMTRACK_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _run_config(args) -> RunConfig:
    run = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed)
    return run


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(args, run: RunConfig) -> SimTrackModel:
    expect = None
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        expect = run.model if "model" in doc else None
    try:
        return checkpoint.load(args.checkpoint, expect)
    except checkpoint.CheckpointError as exc:
        raise UsageError(f"{args.checkpoint}: {exc}") from None


def _loss_rows(curve):
    return [(c.epoch, c.mean_loss, "" if c.eval_auc is None else c.eval_auc) for c in curve]


def cmd_train(args) -> int:
    run = _run_config(args)
    out = _out(args)
    result = train(run)
    checkpoint.save(result.model, out / "model.simt")
    write_csv(out / "loss.csv", ["epoch", "mean_loss", "eval_auc"], _loss_rows(result.curve))
    write_text(out / "config.json", run.to_json() + "\n")
    last = result.curve[-1]
    print(f"trained {run.train.steps} steps; final epoch loss {last.mean_loss:.4f}; "
          f"wrote {out / 'model.simt'}")
    return 0


class FrameSequence:
    """Frames read from ``frame_XXXX.pfm`` files with ground truth from ``gt.csv``."""

    def __init__(self, directory: Path):
        self.paths = sorted(directory.glob("frame_*.pfm"))
        if not self.paths:
            raise UsageError(f"no frame_*.pfm files in {directory}")
        _, rows = read_csv(directory / "gt.csv")
        self.gt = np.array([[float(v) for v in r[1:5]] for r in rows])
        if len(self.gt) != len(self.paths):
            raise UsageError(f"{directory}: {len(self.paths)} frames but {len(self.gt)} gt rows")

    def __len__(self):
        return len(self.paths)

    def frame(self, t: int) -> np.ndarray:
        return read_pfm(self.paths[t])


def export_frames(video, directory: Path) -> None:
    for t in range(len(video)):
        write_pfm(directory / f"frame_{t:04d}.pfm", video.frame(t))
    write_csv(directory / "gt.csv", ["frame_idx", "x1", "y1", "x2", "y2"],
              [(t, *map(float, b)) for t, b in enumerate(video.gt)])


def _sequence(args, run: RunConfig):
    if args.frames:
        return FrameSequence(Path(args.frames))
    videos = test_videos(run.data, args.video + 1)
    return videos[args.video]


def _box_rows(result, gt):
    centers = (result.boxes[:, :2] + result.boxes[:, 2:]) / 2
    gcenters = (gt[:, :2] + gt[:, 2:]) / 2
    err = np.linalg.norm(centers - gcenters, axis=1)
    ious = np.concatenate([[1.0], result.metrics.ious])
    return [(t, float(ious[t]), float(err[t]), *map(float, result.boxes[t])) for t in range(len(gt))]


def cmd_track(args) -> int:
    run = _run_config(args)
    model = _load_model(args, run)
    out = _out(args)
    seq = _sequence(args, run)
    if args.export_frames:
        export_frames(seq, out / "frames")
    result = track_many(model, [seq], run.data)[0]
    write_csv(out / "boxes.csv", ["frame_idx", "iou", "center_error", "x1", "y1", "x2", "y2"],
              _box_rows(result, seq.gt))
    write_text(out / "metrics.json", json.dumps(result.metrics.summary(), indent=2) + "\n")
    print(json.dumps(result.metrics.summary()))
    return 0


def evaluate_model(model: SimTrackModel, run: RunConfig, count: int) -> dict:
    videos = test_videos(run.data, count)
    results = track_many(model, videos, run.data)
    random_model = SimTrackModel(dataclasses.replace(model.cfg, seed=model.cfg.seed + 1))
    return {
        "videos": count,
        "auc": mean_auc([r.metrics for r in results]),
        "precision": float(np.mean([r.metrics.precision for r in results])),
        "static_box_auc": mean_auc(static_baseline(videos)),
        "random_model_auc": mean_auc([r.metrics for r in track_many(random_model, videos, run.data)]),
        "per_video_auc": [r.metrics.auc for r in results],
    }


def cmd_eval(args) -> int:
    run = _run_config(args)
    model = _load_model(args, run)
    out = _out(args)
    summary = evaluate_model(model, run, args.videos or run.data.test_videos)
    write_text(out / "eval.json", json.dumps(summary, indent=2) + "\n")
    print(f"AUC {summary['auc']:.4f}  static-box {summary['static_box_auc']:.4f}  "
          f"random-model {summary['random_model_auc']:.4f}")
    return 0


def ablation_variant(run: RunConfig, mode: str, value, seed: int) -> RunConfig:
    model = dataclasses.replace(run.model, seed=seed)
    if mode == "interaction":
        model = model.with_schedule(InteractionSchedule.ratio(model.layers, value).gates)
    else:
        model = dataclasses.replace(model, decoder_layers=value)
    return dataclasses.replace(run, model=model, seed=seed)


def cmd_ablate(args) -> int:
    if args.mode not in ABLATIONS:
        raise UsageError(f"unknown ablation mode '{args.mode}'; choose from {sorted(ABLATIONS)}")
    run = _run_config(args)
    out = _out(args)
    rows = []
    for k in range(args.seeds):
        seed = run.seed + k
        for name, value in ABLATIONS[args.mode]:
            variant = ablation_variant(run, args.mode, value, seed)
            model = train(variant).model
            auc = mean_auc([r.metrics for r in track_many(model, test_videos(run.data, args.videos
                                                                              or run.data.test_videos),
                                                           run.data)])
            rows.append((name, seed, auc))
            print(f"{name} seed {seed}: AUC {auc:.4f}", flush=True)
    write_csv(out / f"ablate_{args.mode}.csv", ["variant", "seed", "auc"], rows)
    return 0


def cmd_gradcheck(args) -> int:
    run = _run_config(args)
    reports = run_suite(run.model, run.seed)
    print(format_table(reports))
    for r in reports:
        print(r.to_json())
    if args.out:
        write_text(_out(args) / "gradcheck.jsonl", "".join(r.to_json() + "\n" for r in reports))
    return 0 if all(r.passed for r in reports) else 1


def parse_layers(text: str, n_layers: int) -> list[int]:
    """Comma-separated 1-based layer numbers."""
    try:
        layers = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"layer list must be comma-separated integers, got {text!r}") from None
    bad = [v for v in layers if not 1 <= v <= n_layers]
    if bad or not layers:
        raise UsageError(f"invalid layers {bad or text!r}: valid range is 1..{n_layers}")
    return layers


def cmd_dump_attn(args) -> int:
    run = _run_config(args)
    model = _load_model(args, run)
    layers = parse_layers(args.layers, model.cfg.layers)
    seq = _sequence(args, run)
    if not 1 <= args.frame < len(seq):
        raise UsageError(f"frame must be in 1..{len(seq) - 1}")
    out = _out(args)
    cfg = model.cfg
    ex, ebox, _ = exemplar_crop(seq.frame(0), seq.gt[0], run.data, cfg)
    prev = seq.gt[args.frame - 1]
    center = ((prev[0] + prev[2]) / 2, (prev[1] + prev[3]) / 2)
    search, _, _ = crop_resize(seq.frame(args.frame), prev, run.data.search_factor, cfg.search_size,
                               center=center)
    _, records = model.forward(ex, search, ebox, record=True)
    for layer in layers:
        m = target_attention_map(records, layer - 1, cfg.search_grid)[0]
        write_bytes(out / f"attn_layer{layer}.pgm", encode_pgm(m))
        write_csv(out / f"attn_layer{layer}.csv", [f"col{j}" for j in range(m.shape[1])], m.tolist())
    print(f"wrote {len(layers)} attention maps to {out}")
    return 0


def cmd_print_config(args) -> int:
    print(_run_config(args).to_json())
    return 0


COMMANDS = {
    "train": cmd_train, "track": cmd_track, "eval": cmd_eval, "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck, "dump-attn": cmd_dump_attn, "print-config": cmd_print_config,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simtrack", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (defaults: print-config)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", default="runs/latest", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and write checkpoint + loss.csv")
    helps = {"track": "track one video, write boxes.csv + metrics.json",
             "dump-attn": "write per-layer target attention maps (PGM + CSV)"}
    for name in ("track", "dump-attn"):
        s = sub.add_parser(name, parents=[common], help=helps[name])
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--video", type=int, default=0, help="index into the held-out synthetic set")
        s.add_argument("--frames", help="directory of frame_XXXX.pfm files plus gt.csv")
        if name == "track":
            s.add_argument("--export-frames", action="store_true", help="also write the frames as PFM")
        else:
            s.add_argument("--frame", type=int, default=1)
            s.add_argument("--layers", default="1", help="comma-separated 1-based layers")
    s = sub.add_parser("eval", parents=[common], help="AUC / precision on the held-out set")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--videos", type=int, help="number of held-out videos")
    s = sub.add_parser("ablate", parents=[common], help="interaction-density or decoder-count ablation")
    s.add_argument("--mode", required=True, help="interaction or decoder")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--videos", type=int, help="number of held-out videos")
    sub.add_parser("gradcheck", parents=[common], help="run the oracle suite, write gradcheck.jsonl")
    sub.add_parser("print-config", parents=[common], help="print the resolved run config as JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads():
            return COMMANDS[args.command](args)
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        print(f"simtrack: config error: {where}{exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"simtrack: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"simtrack: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"simtrack: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
