"""Search-region attention of the exemplar target tokens, layer by layer, for one tracked frame.

Writes one max-normalised PGM per layer plus a side-by-side strip with the
search crop, which is the picture to compare against the target-attention
figure of the original tracker.

    python scripts/attention_maps.py runs/tracker/model.simt --config configs/tracking.json --video 0 --frame 5
"""
import argparse
from pathlib import Path

import numpy as np

from simtrack import checkpoint
from simtrack import numerics as nm
from simtrack.backbone import target_attention_map
from simtrack.config import RunConfig, load_run_config
from simtrack.formats import encode_pgm, write_bytes
from simtrack.pipeline.crop import crop_resize, resize_bilinear
from simtrack.pipeline.data import exemplar_crop, test_videos


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("--config", help="run config whose data section generated the videos")
    ap.add_argument("--video", type=int, default=0)
    ap.add_argument("--frame", type=int, default=5)
    ap.add_argument("--out", default="runs/attention")
    args = ap.parse_args()

    model = checkpoint.load(args.checkpoint)
    cfg, data = model.cfg, (load_run_config(args.config) if args.config else RunConfig()).data
    video = test_videos(data, args.video + 1)[args.video]
    ex, ex_box, _ = exemplar_crop(video.frame(0), video.gt[0], data, cfg)
    search, _, _ = crop_resize(video.frame(args.frame), video.gt[args.frame], data.search_factor, cfg.search_size)
    with nm.no_grad():
        _, records = model.forward(ex, search, ex_box, record=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gray = search.mean(axis=-1)
    strip = [gray / gray.max()]
    for layer in range(1, cfg.layers + 1):
        amap = target_attention_map(records, layer - 1, cfg.search_grid)[0]
        write_bytes(out / f"layer{layer}.pgm", encode_pgm(amap))
        up = resize_bilinear(amap[..., None], cfg.search_size, cfg.search_size)[..., 0]
        strip.append(up / up.max() if up.max() > 0 else up)
    write_bytes(out / "strip.pgm", encode_pgm(np.concatenate(strip, axis=1)))
    print(f"wrote {cfg.layers} layer maps and strip.pgm to {out}")


if __name__ == "__main__":
    main()
