"""Procedural videos: textured background, one textured target, optional distractors.

Frames are rendered lazily from the stored trajectories so a dataset of a few
hundred videos stays small in memory.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from ..config import DataConfig


@dataclass(frozen=True)
class Appearance:
    shape: str  # "ellipse" or "rect"
    color_a: np.ndarray
    color_b: np.ndarray
    stripe_freq: float
    stripe_angle: float

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "Appearance":
        """A saturated hue striped with a light tint of itself; the hue carries identity."""
        hue = rng.uniform(0.0, 1.0)
        vivid = np.array(colorsys.hsv_to_rgb(hue, rng.uniform(0.7, 1.0), rng.uniform(0.85, 1.0)))
        return cls(
            shape=str(rng.choice(["ellipse", "rect"])),
            color_a=vivid,
            color_b=0.4 * vivid + 0.6,
            stripe_freq=float(rng.uniform(1.5, 3.5)),
            stripe_angle=float(rng.uniform(0, np.pi)),
        )


@dataclass
class SyntheticSequence:
    seed: int
    frame_size: int
    gt: np.ndarray  # [T, 4] xyxy frame pixels
    distractor_boxes: np.ndarray  # [T, K, 4]
    target: Appearance
    distractors: list[Appearance]
    background: np.ndarray = field(repr=False)
    noise: float = 0.02

    def __len__(self):
        return self.gt.shape[0]

    def frame(self, t: int) -> np.ndarray:
        img = self.background.copy()
        for k, app in enumerate(self.distractors):
            _draw(img, self.distractor_boxes[t, k], app)
        _draw(img, self.gt[t], self.target)
        if self.noise:
            rng = np.random.default_rng([self.seed, t, 7])
            img += rng.normal(0.0, self.noise, img.shape)
        return np.clip(img, 0.0, 1.0)

    @property
    def frames(self) -> list[np.ndarray]:
        return [self.frame(t) for t in range(len(self))]


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    from .crop import resize_bilinear

    coarse = rng.uniform(0.0, 1.0, (cells, cells, 3))
    return resize_bilinear(coarse, size, size)


def _draw(img: np.ndarray, box: np.ndarray, app: Appearance) -> None:
    h, w = img.shape[:2]
    x1, y1, x2, y2 = box
    c0, c1 = max(int(np.floor(x1)), 0), min(int(np.ceil(x2)), w)
    r0, r1 = max(int(np.floor(y1)), 0), min(int(np.ceil(y2)), h)
    if c1 <= c0 or r1 <= r0:
        return
    px = np.arange(c0, c1) + 0.5
    py = np.arange(r0, r1) + 0.5
    u = (px[None, :] - x1) / (x2 - x1)
    v = (py[:, None] - y1) / (y2 - y1)
    if app.shape == "ellipse":
        inside = (2 * u - 1) ** 2 + (2 * v - 1) ** 2 <= 1.0
    else:
        inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    phase = (u * np.cos(app.stripe_angle) + v * np.sin(app.stripe_angle)) * app.stripe_freq
    stripe = (np.floor(phase * 2) % 2).astype(bool)
    colors = np.where(stripe[..., None], app.color_a, app.color_b)
    region = img[r0:r1, c0:c1]
    region[inside] = colors[inside]


def _walk(rng: np.random.Generator, length: int, frame: int, sigma: float, scale_sigma: float,
          min_size: float, max_size: float, start=None) -> np.ndarray:
    w, h = rng.uniform(min_size, max_size, 2)
    cx = rng.uniform(w / 2, frame - w / 2)
    cy = rng.uniform(h / 2, frame - h / 2)
    if start is not None:
        cx, cy = start
    boxes = np.empty((length, 4))
    for t in range(length):
        if t:
            cx += rng.normal(0.0, sigma)
            cy += rng.normal(0.0, sigma)
            s = np.exp(rng.normal(0.0, scale_sigma, 2))
            w = float(np.clip(w * s[0], min_size, max_size))
            h = float(np.clip(h * s[1], min_size, max_size))
        cx = float(np.clip(cx, w / 2, frame - w / 2))
        cy = float(np.clip(cy, h / 2, frame - h / 2))
        boxes[t] = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    return boxes


def generate_sequence(seed, length: int, params: DataConfig | None = None) -> SyntheticSequence:
    """Deterministic video from ``seed`` (an int or a sequence of ints)."""
    p = params or DataConfig()
    if length < 2:
        raise ValueError("a sequence needs at least 2 frames")
    rng = np.random.default_rng(seed)
    size = p.frame_size
    min_size = min(p.min_target, size / 2)
    max_size = min(p.max_target, size)
    background = p.background_level + p.background_contrast * (_smooth_noise(rng, size, 5) - 0.5)
    background += rng.normal(0.0, 0.03, background.shape)
    target = Appearance.sample(rng)
    gt = _walk(rng, length, size, p.velocity_sigma, p.scale_sigma, min_size, max_size)
    distractors = [Appearance.sample(rng) for _ in range(p.distractors)]
    walks = []
    for k in range(p.distractors):
        start = None
        if k < p.companions:  # starts beside the target, so their paths cross often
            angle = rng.uniform(0, 2 * np.pi)
            reach = rng.uniform(1.0, 1.6) * max(gt[0, 2] - gt[0, 0], gt[0, 3] - gt[0, 1])
            centre = (gt[0, :2] + gt[0, 2:]) / 2
            start = tuple(centre + reach * np.array([np.cos(angle), np.sin(angle)]))
        walks.append(_walk(rng, length, size, p.velocity_sigma, p.scale_sigma, min_size, max_size, start))
    dboxes = np.stack(walks, axis=1) if walks else np.zeros((length, 0, 4))
    int_seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
    return SyntheticSequence(int_seed, size, gt, dboxes, target, distractors, background)


def video_seeds(base: int, count: int) -> list[tuple[int, int]]:
    return [(base, i) for i in range(count)]
