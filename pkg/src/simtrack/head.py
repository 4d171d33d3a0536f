"""Corner head, soft-argmax decoding, and the box regression losses.

Boxes live in the search crop's unit square as ``(x1, y1, x2, y2)``.  Cell
``(i, j)`` of a ``gh x gw`` grid has its center at ``((j + .5)/gw, (i + .5)/gh)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import ModelConfig
from .nn import Params, init_layernorm, init_linear, layer_norm, mlp
from .numerics import Tensor

LAMBDA_IOU = 2.0
LAMBDA_L1 = 5.0


@dataclass
class BoxPrediction:
    boxes: Tensor  # [B, 4]
    prob_tl: Tensor  # [B, gh, gw]
    prob_br: Tensor


def init_head(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    c = cfg.dim
    init_layernorm(params, "head.norm", c)
    # fan-in scaling: at the transformer's 0.02 the corner maps start flat and
    # stay flat for hundreds of steps
    std = 1.0 / np.sqrt(c)
    for corner in ("tl", "br"):
        init_linear(params, f"head.{corner}.fc1", c, c, rng, std=std)
        # a scalar bias before a softmax has no effect, so the score layer has none
        init_linear(params, f"head.{corner}.fc2", c, 1, rng, bias=False, std=std)


def cell_centers(gh: int, gw: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (row-major) x and y centers of every cell."""
    i, j = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    return ((j.ravel() + 0.5) / gw), ((i.ravel() + 0.5) / gh)


def soft_argmax(prob: Tensor, gh: int, gw: int) -> tuple[Tensor, Tensor]:
    """Expected cell center under ``prob`` ``[B, gh*gw]``."""
    cx, cy = cell_centers(gh, gw)
    return nm.sum_(nm.mul(prob, cx), axis=-1), nm.sum_(nm.mul(prob, cy), axis=-1)


def corner_logits(params: Params, s_out: Tensor, corner: str) -> Tensor:
    b, n, _ = s_out.shape
    return nm.reshape(mlp(params, f"head.{corner}", s_out), (b, n))


def predict_box(s_out: Tensor, params: Params, grid: tuple[int, int]) -> BoxPrediction:
    """Two spatial softmaxes over the search tokens, decoded to box corners."""
    gh, gw = grid
    b, n, _ = s_out.shape
    if n != gh * gw:
        raise ValueError(f"{n} search tokens do not form a {gh}x{gw} grid")
    h = layer_norm(params, "head.norm", s_out)
    probs, corners = [], []
    for corner in ("tl", "br"):
        p = nm.softmax_rows(corner_logits(params, h, corner))
        probs.append(nm.reshape(p, (b, gh, gw)))
        corners.extend(soft_argmax(p, gh, gw))
    box = nm.transpose(nm.reshape(nm.concat(corners, axis=0), (4, b)), (1, 0))
    return BoxPrediction(box, probs[0], probs[1])


def _split(box: Tensor):
    b = box.shape[0]
    return [nm.reshape(nm.slice_(box, 1, k, k + 1), (b,)) for k in range(4)]


def validate_boxes(gt: np.ndarray) -> None:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if not np.all(np.isfinite(gt)) or np.any(gt[:, 2] <= gt[:, 0]) or np.any(gt[:, 3] <= gt[:, 1]):
        raise ValueError("ground-truth boxes need x1 < x2 and y1 < y2")


def giou_loss(pred: Tensor, gt, reduce: bool = True) -> Tensor:
    """``1 - GIoU`` per box pair, averaged over the batch when ``reduce``.

    A prediction with non-positive extent is treated as a zero-area box
    anchored at its top-left corner.
    """
    gt_arr = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64).reshape(-1, 4)
    validate_boxes(gt_arr)
    px1, py1, px2, py2 = _split(pred)
    px2 = nm.maximum(px2, px1)
    py2 = nm.maximum(py2, py1)
    gx1, gy1, gx2, gy2 = (gt_arr[:, k] for k in range(4))
    area_p = (px2 - px1) * (py2 - py1)
    area_g = (gx2 - gx1) * (gy2 - gy1)
    iw = nm.maximum(nm.minimum(px2, gx2) - nm.maximum(px1, gx1), 0.0)
    ih = nm.maximum(nm.minimum(py2, gy2) - nm.maximum(py1, gy1), 0.0)
    inter = iw * ih
    union = area_p + area_g - inter
    hull = (nm.maximum(px2, gx2) - nm.minimum(px1, gx1)) * (nm.maximum(py2, gy2) - nm.minimum(py1, gy1))
    giou = inter / union - (hull - union) / hull
    loss = 1.0 - giou
    return nm.mean(loss) if reduce else loss


def l1_loss(pred: Tensor, gt) -> Tensor:
    """Mean absolute difference over all coordinates (and the batch)."""
    gt_arr = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    return nm.mean(nm.abs_(pred - gt_arr.reshape(pred.shape)))


def total_loss(pred: Tensor, gt, lambda_iou: float = LAMBDA_IOU,
               lambda_l1: float = LAMBDA_L1) -> Tensor:
    return lambda_iou * giou_loss(pred, gt) + lambda_l1 * l1_loss(pred, gt)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU for ``[..., 4]`` xyxy arrays (plain numpy, no graph)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = np.clip(a[..., 2] - a[..., 0], 0, None) * np.clip(a[..., 3] - a[..., 1], 0, None)
    area_b = np.clip(b[..., 2] - b[..., 0], 0, None) * np.clip(b[..., 3] - b[..., 1], 0, None)
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def giou(a, b) -> np.ndarray:
    """Generalized IoU for numpy box arrays, via the differentiable path."""
    with nm.no_grad():
        a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
        return 1.0 - giou_loss(Tensor(a), b, reduce=False).data
