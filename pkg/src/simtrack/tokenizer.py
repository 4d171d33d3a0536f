"""Image serialization and token embedding.

Images are float arrays in HWC layout (optionally with a leading batch axis),
values in [0, 1].  Boxes handed to this module are ``(x1, y1, x2, y2)`` in the
pixel frame of the exemplar crop.

Patch flattening order is row-major over (row, col, channel) inside each patch,
and patches themselves are ordered row-major over the patch grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import ConfigError, ModelConfig
from .nn import Params, init_linear, linear, mlp
from .numerics import Tensor

SEARCH, EXEMPLAR, FOVEAL = "search", "exemplar", "foveal"


@dataclass
class TokenSequence:
    tokens: Tensor  # [B, N, C]
    provenance: str
    grid: np.ndarray  # [N, 2] (row, col) in the sequence's own patch grid
    pixel_origin: np.ndarray  # [N, 2] (y, x) top-left pixel in the source frame

    def __len__(self):
        return self.grid.shape[0]


SEARCH_POS_SCALE = 0.2


def grid_coords(rows: int, cols: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([i.ravel(), j.ravel()], axis=1)


def serialize(image: np.ndarray, patch: int) -> np.ndarray:
    """``[..., H, W, 3] -> [..., N, P*P*3]`` with N = H W / P^2."""
    *lead, h, w, c = image.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = image.reshape(*lead, gh, patch, gw, patch, c)
    x = np.moveaxis(x, -3, -4)  # [..., gh, gw, P, P, c]
    return x.reshape(*lead, gh * gw, patch * patch * c)


def deserialize(patches: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    *lead, n, d = patches.shape
    c = d // (patch * patch)
    gh, gw = height // patch, width // patch
    if n != gh * gw:
        raise ConfigError(f"{n} patches cannot tile a {height}x{width} image at patch {patch}")
    x = patches.reshape(*lead, gh, gw, patch, patch, c)
    x = np.moveaxis(x, -4, -3)
    return x.reshape(*lead, height, width, c)


def check_foveal_alignment(exemplar_size: int, crop: int, patch: int) -> int:
    """Return the foveal offset, or raise if its grid lines do not bisect the main patches."""
    if not 0 < crop < exemplar_size:
        raise ConfigError(f"foveal crop {crop} must lie strictly between 0 and the exemplar size "
                          f"{exemplar_size}")
    if patch % 2 or (exemplar_size - crop) % 2:
        raise ConfigError(f"foveal crop {crop} misaligned: need (exemplar - crop)/2 to be an odd "
                          f"multiple of patch/2 = {patch / 2}")
    offset = (exemplar_size - crop) // 2
    if offset % patch != patch // 2:
        raise ConfigError(f"foveal crop {crop} misaligned: offset {offset} mod {patch} = "
                          f"{offset % patch}, need {patch // 2} (an odd multiple of patch/2)")
    if crop % patch:
        raise ConfigError(f"foveal crop {crop} not divisible by patch size {patch}")
    return offset


def foveal_crop(exemplar: np.ndarray, crop: int, patch: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = exemplar.shape[-3:-1]
    if h != w:
        raise ConfigError("foveal crop expects a square exemplar")
    off = check_foveal_alignment(h, crop, patch)
    return exemplar[..., off:off + crop, off:off + crop, :], (off, off)


def target_ratio(box, cell) -> float:
    """Fraction of ``cell`` (x1, y1, x2, y2) covered by ``box``."""
    iw = min(box[2], cell[2]) - max(box[0], cell[0])
    ih = min(box[3], cell[3]) - max(box[1], cell[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / ((cell[2] - cell[0]) * (cell[3] - cell[1]))


def target_ratios(boxes: np.ndarray, origins: np.ndarray, patch: int) -> np.ndarray:
    """Vectorised ratio for boxes ``[B, 4]`` over square cells with origins ``[N, 2]`` (y, x)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    y0 = origins[None, :, 0].astype(np.float64)
    x0 = origins[None, :, 1].astype(np.float64)
    iw = np.minimum(boxes[:, 2:3], x0 + patch) - np.maximum(boxes[:, 0:1], x0)
    ih = np.minimum(boxes[:, 3:4], y0 + patch) - np.maximum(boxes[:, 1:2], y0)
    return np.clip(iw, 0, None) * np.clip(ih, 0, None) / float(patch * patch)


def sincos_table(grid: int, dim: int) -> np.ndarray:
    """Fixed 2D sine-cosine table ``[grid*grid, dim]``: half the channels encode rows, half columns."""
    if dim % 4:
        raise ValueError(f"sine-cosine table needs dim divisible by 4, got {dim}")
    q = dim // 4
    freqs = 1.0 / 100.0 ** (np.arange(q) / q)
    ij = grid_coords(grid, grid).astype(np.float64)
    parts = []
    for axis in (0, 1):
        angle = ij[:, axis:axis + 1] * freqs[None, :]
        parts += [np.sin(angle), np.cos(angle)]
    return np.concatenate(parts, axis=1)


def init_embedder(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    c = cfg.dim
    init_linear(params, "embed.proj", cfg.patch * cfg.patch * 3, c, rng)
    n_x = cfg.search_grid ** 2
    # learned table started from a spatial pattern, in place of a pretrained one
    table = SEARCH_POS_SCALE * sincos_table(cfg.search_grid, c) if c % 4 == 0 else np.zeros((n_x, c))
    table = table + rng.normal(0.0, 0.02, size=(n_x, c))
    params["embed.search_pos"] = nm.parameter(table, "embed.search_pos")
    init_linear(params, "embed.exemplar_pos.fc1", 3, c, rng)
    init_linear(params, "embed.exemplar_pos.fc2", c, c, rng)


def exemplar_pos_inputs(grid: np.ndarray, grid_size: int, ratios: np.ndarray) -> np.ndarray:
    """Stack normalised (i, j) with per-batch ratios into ``[B, N, 3]``."""
    scale = max(grid_size - 1, 1)
    ij = grid.astype(np.float64) / scale
    b = ratios.shape[0]
    return np.concatenate([np.broadcast_to(ij, (b,) + ij.shape), ratios[..., None]], axis=-1)


def exemplar_pos_embed(params: Params, inputs) -> Tensor:
    """MLP over (i, j, R) rows, each component in [0, 1]."""
    arr = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise ValueError(f"position inputs need a trailing axis of 3, got {arr.shape}")
    if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
        raise ValueError("position inputs (i, j, R) must lie in [0, 1]")
    return mlp(params, "embed.exemplar_pos", nm.as_tensor(inputs))


def _project(params: Params, image: np.ndarray, patch: int) -> Tensor:
    return linear(params, "embed.proj", Tensor(serialize(image, patch)))


def embed_search(params: Params, cfg: ModelConfig, search: np.ndarray) -> TokenSequence:
    g = cfg.search_grid
    grid = grid_coords(g, g)
    tokens = nm.add(_project(params, search, cfg.patch), params["embed.search_pos"])
    return TokenSequence(tokens, SEARCH, grid, grid * cfg.patch)


def embed_exemplar(params: Params, cfg: ModelConfig, exemplar: np.ndarray,
                   boxes: np.ndarray) -> tuple[TokenSequence, TokenSequence | None]:
    """Embed the exemplar crop and, if configured, its foveal window.

    ``boxes`` is ``[B, 4]`` in exemplar-crop pixels; it drives the target-area
    ratio fed to the position MLP.
    """
    p = cfg.patch
    g = cfg.exemplar_grid
    grid = grid_coords(g, g)
    origins = grid * p
    pos = exemplar_pos_embed(params, exemplar_pos_inputs(grid, g, target_ratios(boxes, origins, p)))
    e = TokenSequence(nm.add(_project(params, exemplar, p), pos), EXEMPLAR, grid, origins)
    if not cfg.foveal_size:
        return e, None
    crop, (oy, ox) = foveal_crop(exemplar, cfg.foveal_size, p)
    gf = cfg.foveal_grid
    fgrid = grid_coords(gf, gf)
    forigins = fgrid * p + np.array([oy, ox])
    fpos = exemplar_pos_embed(params, exemplar_pos_inputs(fgrid, gf, target_ratios(boxes, forigins, p)))
    f = TokenSequence(nm.add(_project(params, crop, p), fpos), FOVEAL, fgrid, forigins)
    return e, f


def empty_sequence(batch: int, dim: int, provenance: str = FOVEAL) -> TokenSequence:
    return TokenSequence(Tensor(np.zeros((batch, 0, dim))), provenance,
                         np.zeros((0, 2), dtype=int), np.zeros((0, 2), dtype=int))


def embed_all(params: Params, cfg: ModelConfig, exemplar: np.ndarray, search: np.ndarray,
              boxes: np.ndarray) -> tuple[TokenSequence, TokenSequence, TokenSequence]:
    """Return ``(s0, e0, e0*)``; ``e0*`` is empty when the foveal window is off.

    Accepts single images or batches; a single image gets a batch axis of 1.
    """
    if exemplar.ndim == 3:
        exemplar, search = exemplar[None], search[None]
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = embed_search(params, cfg, search)
    e, f = embed_exemplar(params, cfg, exemplar, boxes)
    if f is None:
        f = empty_sequence(exemplar.shape[0], cfg.dim)
    return s, e, f
