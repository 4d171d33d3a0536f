"""Train one tracker and score it on held-out videos against the two reference floors.

    python scripts/train_tracker.py --config configs/tracking.json --out runs/tracker
"""
import argparse
import dataclasses
import json
import time
from pathlib import Path

from simtrack import checkpoint
from simtrack.config import RunConfig, load_run_config
from simtrack.formats import write_csv
from simtrack.model import SimTrackModel
from simtrack.pipeline.data import test_videos
from simtrack.pipeline.metrics import mean_auc
from simtrack.pipeline.track import static_baseline, track_many
from simtrack.pipeline.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--videos", type=int, default=50)
    ap.add_argument("--out", default="runs/tracker")
    args = ap.parse_args()

    run = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run = dataclasses.replace(run, seed=args.seed, model=dataclasses.replace(run.model, seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    result = train(run)
    train_s = time.perf_counter() - t0
    checkpoint.save(result.model, out / "model.simt")
    write_csv(out / "loss.csv", ["epoch", "mean_loss"], [(e.epoch, e.mean_loss) for e in result.curve])

    videos = test_videos(run.data, args.videos)
    auc = mean_auc([r.metrics for r in track_many(result.model, videos, run.data)])
    untrained = SimTrackModel(dataclasses.replace(run.model, seed=run.model.seed + 1))
    floor = mean_auc([r.metrics for r in track_many(untrained, videos, run.data)])
    static = mean_auc(static_baseline(videos))
    summary = {"auc": auc, "random_model_auc": floor, "static_box_auc": static,
               "train_seconds": train_s, "total_seconds": time.perf_counter() - t0}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    for e in result.curve:
        print(f"epoch {e.epoch:3d}  loss {e.mean_loss:.4f}")
    print(f"AUC {auc:.3f}  random-model {floor:.3f}  static-box {static:.3f}  ({train_s:.0f}s training)")


if __name__ == "__main__":
    main()
