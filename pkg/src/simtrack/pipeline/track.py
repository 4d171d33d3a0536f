"""Frame-by-frame tracking: exemplar embedded once, search crop around the last prediction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nm
from ..config import DataConfig
from ..model import SimTrackModel
from ..tokenizer import TokenSequence
from .crop import crop_resize
from .data import exemplar_crop
from .metrics import Metrics, evaluate
from .synthetic import SyntheticSequence

MIN_BOX = 2.0  # pixels; keeps the next search crop non-degenerate


@dataclass
class TrackerState:
    model: SimTrackModel
    exemplar: TokenSequence
    foveal: TokenSequence
    box: np.ndarray  # previous prediction, frame pixels, [B, 4]
    exemplar_embeds: int = 0
    frame_ops: list[int] = field(default_factory=list)


@dataclass
class TrackResult:
    boxes: np.ndarray  # [T, 4] frame pixels; frame 0 is the given box
    metrics: Metrics


def clamp_box(box: np.ndarray, width: int, height: int) -> np.ndarray:
    b = np.array(box, dtype=np.float64)
    b[..., [0, 2]] = np.clip(b[..., [0, 2]], 0, width)
    b[..., [1, 3]] = np.clip(b[..., [1, 3]], 0, height)
    for lo, hi, lim in ((0, 2, width), (1, 3, height)):
        c = (b[..., lo] + b[..., hi]) / 2
        half = np.maximum(b[..., hi] - b[..., lo], MIN_BOX) / 2
        c = np.clip(c, half, lim - half)
        b[..., lo], b[..., hi] = c - half, c + half
    return b


def init_tracker(model: SimTrackModel, first_frames: list[np.ndarray], boxes: np.ndarray,
                 data: DataConfig) -> TrackerState:
    crops, ex_boxes = [], []
    for frame, box in zip(first_frames, boxes):
        img, ebox, _ = exemplar_crop(frame, box, data, model.cfg)
        crops.append(img)
        ex_boxes.append(ebox)
    with nm.no_grad():
        e, f = model.embed_exemplar(np.stack(crops), np.stack(ex_boxes))
    return TrackerState(model, e, f, np.asarray(boxes, dtype=np.float64).copy(), exemplar_embeds=1)


def _select(seq: TokenSequence, idx: np.ndarray) -> TokenSequence:
    return TokenSequence(nm.Tensor(seq.tokens.data[idx]), seq.provenance, seq.grid, seq.pixel_origin)


def step(state: TrackerState, frames: list[np.ndarray], active: np.ndarray, data: DataConfig,
         predictor=None) -> np.ndarray:
    """Advance the active videos by one frame; returns their new frame-pixel boxes.

    ``predictor`` optionally replaces the network (``crops, transforms -> normalised boxes``);
    it is used to test the coordinate plumbing in isolation.
    """
    cfg = state.model.cfg
    crops, tfs = [], []
    for frame, box in zip(frames, state.box[active]):
        c = ((box[0] + box[2]) / 2, (box[1] + box[3]) / 2)
        img, _, tf = crop_resize(frame, box, data.search_factor, cfg.search_size, center=c)
        crops.append(img)
        tfs.append(tf)
    if predictor is None:
        before = nm.op_count()
        with nm.no_grad():
            pred, _ = state.model.forward_tokens(_select(state.exemplar, active),
                                                 _select(state.foveal, active), np.stack(crops))
        state.frame_ops.append(nm.op_count() - before)
        norm = pred.boxes.data
    else:
        norm = np.asarray(predictor(crops, tfs), dtype=np.float64).reshape(-1, 4)
    out = []
    for nb, tf, frame in zip(norm, tfs, frames):
        out.append(clamp_box(tf.to_frame(nb), frame.shape[1], frame.shape[0]))
    out = np.array(out)
    state.box[active] = out
    return out


def track_many(model: SimTrackModel, videos: list[SyntheticSequence], data: DataConfig,
               predictor=None) -> list[TrackResult]:
    """Track several videos in lock-step, batching the network over videos."""
    if not videos:
        return []
    state = init_tracker(model, [v.frame(0) for v in videos], np.stack([v.gt[0] for v in videos]), data)
    lengths = np.array([len(v) for v in videos])
    boxes = [np.zeros((n, 4)) for n in lengths]
    for b, v in zip(boxes, videos):
        b[0] = v.gt[0]
    for t in range(1, lengths.max()):
        active = np.flatnonzero(lengths > t)
        out = step(state, [videos[i].frame(t) for i in active], active, data, predictor)
        for k, i in enumerate(active):
            boxes[i][t] = out[k]
    return [TrackResult(b, evaluate(b[1:], v.gt[1:])) for b, v in zip(boxes, videos)]


def track(sequence: SyntheticSequence, model: SimTrackModel, data: DataConfig,
          predictor=None) -> TrackResult:
    return track_many(model, [sequence], data, predictor)[0]


def static_baseline(videos: list[SyntheticSequence]) -> list[Metrics]:
    """Predict the first-frame box for every frame."""
    return [evaluate(np.repeat(v.gt[:1], len(v) - 1, axis=0), v.gt[1:]) for v in videos]
