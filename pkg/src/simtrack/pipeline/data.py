"""Exemplar/search training pairs drawn from synthetic videos."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import DataConfig, ModelConfig
from .crop import crop_resize
from .synthetic import SyntheticSequence, generate_sequence


@dataclass
class TrainSample:
    exemplar: np.ndarray  # [Hz, Wz, 3]
    exemplar_box: np.ndarray  # target in exemplar-crop pixels
    search: np.ndarray  # [Hx, Wx, 3]
    search_box: np.ndarray  # target in normalised search-crop coordinates
    gap: int


@dataclass
class Batch:
    exemplar: np.ndarray
    exemplar_box: np.ndarray
    search: np.ndarray
    search_box: np.ndarray

    def __len__(self):
        return self.exemplar.shape[0]


def collate(samples: list[TrainSample]) -> Batch:
    return Batch(np.stack([s.exemplar for s in samples]), np.stack([s.exemplar_box for s in samples]),
                 np.stack([s.search for s in samples]), np.stack([s.search_box for s in samples]))


def exemplar_crop(frame: np.ndarray, box, data: DataConfig, model: ModelConfig):
    """Exemplar crop plus the target box in its pixel frame."""
    img, nbox, tf = crop_resize(frame, box, data.exemplar_factor, model.exemplar_size)
    return img, np.clip(nbox, 0.0, 1.0) * model.exemplar_size, tf


def sample_pair(video: SyntheticSequence, rng: np.random.Generator, data: DataConfig,
                model: ModelConfig) -> TrainSample:
    n = len(video)
    t_e = int(rng.integers(0, n - 1))
    gap = int(rng.integers(1, min(data.max_gap, n - 1 - t_e) + 1))
    t_s = t_e + gap
    ex, ex_box, _ = exemplar_crop(video.frame(t_e), video.gt[t_e], data, model)
    box = video.gt[t_s]
    side = data.search_factor * np.sqrt((box[2] - box[0]) * (box[3] - box[1]))
    shift = rng.uniform(-data.center_jitter, data.center_jitter, 2) * side
    center = ((box[0] + box[2]) / 2 + shift[0], (box[1] + box[3]) / 2 + shift[1])
    scale = float(np.exp(rng.uniform(-data.scale_jitter, data.scale_jitter)))
    if rng.random() < data.distractor_crops:
        center = _distractor_center(video, t_s, side * scale, center)
    se, se_box, _ = crop_resize(video.frame(t_s), box, data.search_factor, model.search_size,
                                center=center, scale=scale)
    return TrainSample(ex, ex_box, se, np.clip(se_box, 0.0, 1.0), gap)


def _distractor_center(video: SyntheticSequence, t: int, side: float, fallback):
    """Centre of the distractor nearest the target, if a crop there still holds the whole target."""
    others = video.distractor_boxes[t]
    if not len(others):
        return fallback
    box = video.gt[t]
    centres = (others[:, :2] + others[:, 2:]) / 2
    target = (box[:2] + box[2:]) / 2
    c = centres[int(np.argmin(np.sum((centres - target) ** 2, axis=1)))]
    lo, hi = c - side / 2, c + side / 2
    if np.all(box[:2] >= lo) and np.all(box[2:] <= hi):
        return float(c[0]), float(c[1])
    return fallback


def make_videos(base_seed: int, count: int, data: DataConfig) -> list[SyntheticSequence]:
    return [generate_sequence((base_seed, i), data.length, data) for i in range(count)]


def train_videos(seed: int, data: DataConfig) -> list[SyntheticSequence]:
    return make_videos(seed, data.train_videos, data)


def test_videos(data: DataConfig, count: int | None = None) -> list[SyntheticSequence]:
    """Held-out suite; independent of the training seed so paired runs share it."""
    return make_videos(data.test_seed_offset, data.test_videos if count is None else count, data)


def fixed_samples(seed: int, count: int, data: DataConfig, model: ModelConfig) -> list[TrainSample]:
    rng = np.random.default_rng([seed, 31337])
    videos = make_videos(seed, count, data)
    return [sample_pair(v, rng, data, model) for v in videos]
