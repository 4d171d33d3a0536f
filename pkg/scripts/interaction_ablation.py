"""Interaction-density ablation: held-out AUC and loss curves for gate ratios over paired seeds.

Every ratio of a seed starts from the same initial weights and sees the same
training batches, so the rows of one seed differ only in which layers let
exemplar and search tokens attend to each other.

    python scripts/interaction_ablation.py --config configs/tracking.json --seeds 3
"""
import argparse
import dataclasses
from pathlib import Path

from simtrack.config import InteractionSchedule, RunConfig, load_run_config
from simtrack.formats import write_csv
from simtrack.pipeline.data import test_videos
from simtrack.pipeline.metrics import mean_auc
from simtrack.pipeline.track import track_many
from simtrack.pipeline.train import train


def variant(run: RunConfig, ratio: float, seed: int) -> RunConfig:
    gates = InteractionSchedule.ratio(run.model.layers, ratio).gates
    model = dataclasses.replace(run.model.with_schedule(gates), seed=seed)
    return dataclasses.replace(run, model=model, seed=seed)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--ratios", default="1,0.5,0.25,0")
    ap.add_argument("--videos", type=int, default=50)
    ap.add_argument("--out", default="runs/interaction")
    args = ap.parse_args()

    run = load_run_config(args.config) if args.config else RunConfig()
    ratios = [float(r) for r in args.ratios.split(",")]
    videos = test_videos(run.data, args.videos)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table, curves = [], []
    for seed in range(run.seed, run.seed + args.seeds):
        for ratio in ratios:
            result = train(variant(run, ratio, seed))
            auc = mean_auc([r.metrics for r in track_many(result.model, videos, run.data)])
            table.append((ratio, seed, auc))
            curves += [(ratio, seed, e.epoch, e.mean_loss) for e in result.curve]
            print(f"gates {ratio:4.0%}  seed {seed}  AUC {auc:.3f}  final loss {result.curve[-1].mean_loss:.4f}",
                  flush=True)
    write_csv(out / "auc.csv", ["ratio", "seed", "auc"], table)
    write_csv(out / "loss_curves.csv", ["ratio", "seed", "epoch", "mean_loss"], curves)
    for ratio in ratios:
        aucs = [a for r, _, a in table if r == ratio]
        print(f"gates {ratio:4.0%}  mean AUC {sum(aucs) / len(aucs):.3f} over {len(aucs)} seeds")


if __name__ == "__main__":
    main()
