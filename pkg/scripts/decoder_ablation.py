"""Decoder-count ablation: extra cross-attention decoder layers on top of the joint backbone.

    python scripts/decoder_ablation.py --config configs/tracking.json --counts 0,1,3
"""
import argparse
import dataclasses
from pathlib import Path

from simtrack.config import RunConfig, load_run_config
from simtrack.formats import write_csv
from simtrack.pipeline.data import test_videos
from simtrack.pipeline.metrics import mean_auc
from simtrack.pipeline.track import track_many
from simtrack.pipeline.train import train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--counts", default="0,1,3")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--videos", type=int, default=50)
    ap.add_argument("--out", default="runs/decoder")
    args = ap.parse_args()

    run = load_run_config(args.config) if args.config else RunConfig()
    videos = test_videos(run.data, args.videos)
    rows = []
    for seed in range(run.seed, run.seed + args.seeds):
        for n in (int(c) for c in args.counts.split(",")):
            model = dataclasses.replace(run.model, decoder_layers=n, seed=seed)
            result = train(dataclasses.replace(run, model=model, seed=seed))
            auc = mean_auc([r.metrics for r in track_many(result.model, videos, run.data)])
            rows.append((n, seed, auc))
            print(f"decoders {n}  seed {seed}  AUC {auc:.3f}", flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "auc.csv", ["decoder_layers", "seed", "auc"], rows)


if __name__ == "__main__":
    main()
