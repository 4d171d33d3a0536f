"""Square target-centred crops with bilinear resampling and an invertible record."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CropTransform:
    """Crop window ``[x0, x0 + side) x [y0, y0 + side)`` in frame pixels."""

    x0: float
    y0: float
    side: float
    out_size: int

    def to_crop(self, box) -> np.ndarray:
        """Frame-pixel box -> normalised crop coordinates."""
        b = np.asarray(box, dtype=np.float64)
        off = np.array([self.x0, self.y0, self.x0, self.y0])
        return (b - off) / self.side

    def to_frame(self, box) -> np.ndarray:
        """Normalised crop box -> frame pixels."""
        b = np.asarray(box, dtype=np.float64)
        off = np.array([self.x0, self.y0, self.x0, self.y0])
        return b * self.side + off


def _sample(image: np.ndarray, ys: np.ndarray, xs: np.ndarray, pad: np.ndarray) -> np.ndarray:
    """Bilinear lookup at continuous pixel-index coordinates; outside pixels read ``pad``."""
    h, w = image.shape[:2]
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    def tap(yi, xi):
        valid = ((yi >= 0) & (yi < h))[:, None] & ((xi >= 0) & (xi < w))[None, :]
        vals = image[np.clip(yi, 0, h - 1)[:, None], np.clip(xi, 0, w - 1)[None, :]]
        return np.where(valid[..., None], vals, pad)

    top = tap(y0, x0) * (1 - wx) + tap(y0, x0 + 1) * wx
    bot = tap(y0 + 1, x0) * (1 - wx) + tap(y0 + 1, x0 + 1) * wx
    return top * (1 - wy) + bot * wy


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    return _sample(image, ys, xs, np.zeros(image.shape[2]))


def crop_window(box, factor: float, center=None, scale: float = 1.0) -> tuple[float, float, float]:
    """Top-left and side of the square crop of side ``factor * sqrt(w h)``."""
    if factor < 1:
        raise ValueError(f"crop factor must be >= 1, got {factor}")
    x1, y1, x2, y2 = (float(v) for v in box)
    w, h = x2 - x1, y2 - y1
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {box}")
    side = factor * np.sqrt(w * h) * scale
    cx, cy = ((x1 + x2) / 2, (y1 + y2) / 2) if center is None else center
    return cx - side / 2, cy - side / 2, side


def crop_resize(frame: np.ndarray, box, factor: float, out_size: int, center=None,
                scale: float = 1.0) -> tuple[np.ndarray, np.ndarray, CropTransform]:
    """Crop a square of side ``factor * sqrt(w h)`` around the box centre (or ``center``).

    Out-of-frame area is filled with the per-channel mean of the in-frame part
    of the window.  Returns the resized crop, ``box`` in normalised crop
    coordinates, and the transform record.
    """
    x0, y0, side = crop_window(box, factor, center, scale)
    h, w = frame.shape[:2]
    r0, r1 = int(max(np.floor(y0), 0)), int(min(np.ceil(y0 + side), h))
    c0, c1 = int(max(np.floor(x0), 0)), int(min(np.ceil(x0 + side), w))
    inner = frame[r0:r1, c0:c1]
    pad = inner.reshape(-1, frame.shape[2]).mean(axis=0) if inner.size else frame.reshape(-1, frame.shape[2]).mean(axis=0)
    step = side / out_size
    ys = y0 + (np.arange(out_size) + 0.5) * step - 0.5
    xs = x0 + (np.arange(out_size) + 0.5) * step - 0.5
    crop = _sample(frame, ys, xs, pad)
    tf = CropTransform(float(x0), float(y0), float(side), out_size)
    return crop, tf.to_crop(box), tf
