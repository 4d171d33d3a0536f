"""Minibatch AdamW training on the combined GIoU + L1 box loss."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nm
from ..config import RunConfig
from ..head import box_iou, total_loss
from ..model import SimTrackModel
from .data import Batch, TrainSample, collate, sample_pair, test_videos, train_videos
from .metrics import mean_auc
from .optim import AdamW, clip_grad_norm, lr_at
from .track import track_many

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    eval_auc: float | None = None


@dataclass
class TrainResult:
    model: SimTrackModel
    curve: list[EpochStats] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def loss_on_batch(model: SimTrackModel, batch: Batch, lambda_iou: float, lambda_l1: float):
    pred, _ = model.forward(batch.exemplar, batch.search, batch.exemplar_box)
    return total_loss(pred.boxes, batch.search_box, lambda_iou, lambda_l1), pred


def _diagnostic(model: SimTrackModel) -> str:
    lines = []
    for name, p in model.params.items():
        g = "none" if p.grad is None else f"{np.linalg.norm(p.grad):.3e}"
        lines.append(f"  {name}: |w|={np.linalg.norm(p.data):.3e} |g|={g}")
    return "\n".join(lines)


def train(run: RunConfig, model: SimTrackModel | None = None,
          samples: list[TrainSample] | None = None, videos=None) -> TrainResult:
    """Train on pairs sampled from synthetic videos, or on a fixed ``samples`` list.

    With fixed samples every step uses a batch drawn from that list (the whole
    list when it fits in one batch).
    """
    tc, dc = run.train, run.data
    model = model or SimTrackModel(run.model)
    params = model.parameters()
    opt = AdamW(params, tc.lr, tc.betas, weight_decay=tc.weight_decay)
    rng = np.random.default_rng([run.seed, 2024])
    if samples is None and videos is None:
        videos = train_videos(run.seed, dc)
    eval_set = test_videos(dc, tc.eval_videos) if tc.eval_every else None
    result = TrainResult(model)
    epoch_losses: list[float] = []
    for it in range(tc.steps):
        if samples is not None:
            if len(samples) <= tc.batch_size:
                chosen = samples
            else:
                chosen = [samples[i] for i in rng.choice(len(samples), tc.batch_size, replace=False)]
        else:
            chosen = [sample_pair(videos[int(rng.integers(len(videos)))], rng, dc, run.model)
                      for _ in range(tc.batch_size)]
        batch = collate(chosen)
        loss, _ = loss_on_batch(model, batch, tc.lambda_iou, tc.lambda_l1)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {it}\n{_diagnostic(model)}")
        opt.zero_grad()
        loss.backward()
        if tc.grad_clip:
            clip_grad_norm(params, tc.grad_clip)
        opt.step(lr_at(it, tc.steps, tc.lr, tc.warmup_steps, tc.cosine_decay))
        result.step_losses.append(value)
        epoch_losses.append(value)
        if (it + 1) % tc.steps_per_epoch == 0 or it + 1 == tc.steps:
            epoch = len(result.curve) + 1
            auc = None
            if eval_set is not None and epoch % tc.eval_every == 0:
                auc = mean_auc([r.metrics for r in track_many(model, eval_set, dc)])
            result.curve.append(EpochStats(epoch, float(np.mean(epoch_losses)), auc))
            log.info("epoch %d loss %.4f auc %s", epoch, result.curve[-1].mean_loss, auc)
            epoch_losses = []
    return result


def mean_iou_on(model: SimTrackModel, samples: list[TrainSample], batch_size: int = 64) -> float:
    ious = []
    with nm.no_grad():
        for k in range(0, len(samples), batch_size):
            batch = collate(samples[k:k + batch_size])
            pred, _ = model.forward(batch.exemplar, batch.search, batch.exemplar_box)
            ious.append(box_iou(pred.boxes.data, batch.search_box))
    return float(np.concatenate(ious).mean())
