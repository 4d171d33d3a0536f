"""Correctness suite: production kernels checked against the brute-force oracles.

Each check returns an :class:`OracleReport`; a failing check still reports its
errors so the whole table is always produced.
"""
from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from .backbone import attention_kernel, joint_forward, self_block
from .config import ModelConfig
from .head import giou, total_loss
from .model import SimTrackModel, init_params
from .numerics import Tensor
from .oracle import (
    OracleReport, block_attention_loops, decomposed_attention_loops, enumerate_auc,
    finite_diff_grad, naive_matmul, naive_softmax, raster_giou, relative_errors, report,
)
from .pipeline.metrics import evaluate
from .tokenizer import check_foveal_alignment, embed_all

GRAD_TOL = 1e-4
# Matrices are rescaled from the 0.02 init to std 0.2 before checking: at the
# init scale most attention gradients sit near 1e-9, below the ~3e-11 roundoff
# of a central difference at h=1e-5, so the comparison would measure noise.
GRAD_WEIGHT_SCALE = 10.0


def check_matmul(rng: np.random.Generator, trials: int = 20) -> OracleReport:
    errs = []
    for _ in range(trials):
        m, k, n = rng.integers(1, 17, size=3)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        got = nm.matmul(Tensor(a), Tensor(b)).data
        scale = np.abs(a) @ np.abs(b) + 1e-300
        errs.append(float(np.max(np.abs(got - np.array(naive_matmul(a, b))) / scale)))
    return report("matmul_vs_loops", errs, errs, trials, 1e-12)


def check_softmax(rng: np.random.Generator, trials: int = 20) -> OracleReport:
    abs_e, rel_e = [], []
    for _ in range(trials):
        row = rng.normal(scale=5.0, size=int(rng.integers(1, 33)))
        got = nm.softmax_rows(Tensor(row)).data
        ref = np.array(naive_softmax(row.tolist()))
        abs_e.append(float(np.max(np.abs(got - ref))))
        rel_e.append(float(np.max(np.abs(got - ref) / ref)))
    return report("softmax_vs_fsum", abs_e, rel_e, trials, 1e-12)


def attention_three_way(rng: np.random.Generator) -> float:
    """Largest pairwise gap between kernel, block-loop and decomposed-loop attention."""
    heads = int(rng.choice([1, 2, 4]))
    d = int(rng.integers(1, 5))
    c = heads * d
    e = rng.normal(size=(int(rng.integers(1, 9)), c))
    s = rng.normal(size=(int(rng.integers(1, 17)), c))
    w_q, w_k, w_v = (rng.normal(size=(c, c)) / math.sqrt(c) for _ in range(3))
    x = Tensor(np.concatenate([e, s])[None])
    with nm.no_grad():
        kern = attention_kernel(x, x, Tensor(w_q), Tensor(w_k), Tensor(w_v), heads)[0].data[0]
    blocks, decomposed = [], []
    for h in range(heads):
        cols = slice(h * d, (h + 1) * d)
        ws = (w_q[:, cols], w_k[:, cols], w_v[:, cols])
        blocks.append(np.concatenate(block_attention_loops(e, s, *ws)))
        decomposed.append(np.concatenate(decomposed_attention_loops(e, s, *ws)))
    blk, dec = np.concatenate(blocks, axis=1), np.concatenate(decomposed, axis=1)
    return float(max(np.max(np.abs(kern - blk)), np.max(np.abs(kern - dec)), np.max(np.abs(blk - dec))))


def check_attention(rng: np.random.Generator, trials: int = 100) -> OracleReport:
    errs = [attention_three_way(rng) for _ in range(trials)]
    return report("attention_three_way", errs, errs, trials, 1e-10, use_rel=False)


def siamese_gap(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2) -> float:
    """All gates off: joint forward vs independent per-segment forwards."""
    cfg = cfg.with_schedule([False] * cfg.layers)
    params = init_params(cfg, seed=int(rng.integers(2**31)))
    ex = rng.random((batch, cfg.exemplar_size, cfg.exemplar_size, 3))
    se = rng.random((batch, cfg.search_size, cfg.search_size, 3))
    q = cfg.exemplar_size / 4
    boxes = np.tile([q, q, 3 * q, 3 * q], (batch, 1))
    with nm.no_grad():
        s, e, f = embed_all(params, cfg, ex, se, boxes)
        s_out, e_out, f_out, _ = joint_forward(s, e, f, cfg, params)
        s_ref, z_ref = s.tokens, nm.concat([e.tokens, f.tokens], axis=1)
        for l in range(cfg.layers):
            s_ref = self_block(s_ref, params, f"blocks.{l}", cfg.heads)
            z_ref = self_block(z_ref, params, f"blocks.{l}", cfg.heads)
    z_out = np.concatenate([e_out.data, f_out.data], axis=1)
    return float(max(np.max(np.abs(s_out.data - s_ref.data)), np.max(np.abs(z_out - z_ref.data))))


def check_siamese(cfg: ModelConfig, rng: np.random.Generator, trials: int = 3) -> OracleReport:
    errs = [siamese_gap(cfg, rng) for _ in range(trials)]
    return report("siamese_equivalence", errs, errs, trials, 1e-10, use_rel=False)


def random_box_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    xy = rng.uniform(0, 0.7, size=(2, 2))
    wh = rng.uniform(0.02, 0.3, size=(2, 2))
    return np.concatenate([xy[0], xy[0] + wh[0]]), np.concatenate([xy[1], xy[1] + wh[1]])


def check_giou(rng: np.random.Generator, trials: int = 1000) -> OracleReport:
    errs = []
    for _ in range(trials):
        a, b = random_box_pair(rng)
        errs.append(abs(float(giou(a, b)[0]) - raster_giou(a, b)))
    return report("giou_vs_raster", errs, errs, trials, 2e-3, use_rel=False)


def check_auc(rng: np.random.Generator, trials: int = 50) -> OracleReport:
    errs = []
    for _ in range(trials):
        n = int(rng.integers(1, 40))
        ious = rng.choice([0.0, 0.05, 0.5, 1.0], size=n) if rng.random() < 0.3 else rng.random(n)
        m = evaluate(*_boxes_with_ious(ious))
        errs.append(abs(m.auc - enumerate_auc(m.ious.tolist())))
        errs.append(float(np.max(np.abs(m.ious - ious))))
    return report("auc_vs_enumeration", errs, errs, trials, 1e-12, use_rel=False)


def _boxes_with_ious(ious: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predicted and ground-truth boxes whose rowwise IoU equals ``ious``."""
    gt = np.tile([0.0, 0.0, 1.0, 1.0], (len(ious), 1))
    pred = gt.copy()
    for k, v in enumerate(ious):
        # a box [0, w] x [0, 1] inside gt has IoU w; IoU 0 means a disjoint box
        pred[k] = [0.0, 0.0, v, 1.0] if v > 0 else [2.0, 2.0, 3.0, 3.0]
    return pred, gt


def check_foveal_geometry() -> OracleReport:
    errs = []
    trials = 0
    for patch in (2, 4, 8, 16):
        for ex in range(patch, 8 * patch + 1, patch):
            for crop in range(patch, ex, patch):
                try:
                    off = check_foveal_alignment(ex, crop, patch)
                except ValueError:
                    continue
                trials += 1
                errs.append(float(off % patch != patch // 2))
    counts = ModelConfig(patch=16, dim=8, heads=2, ffn_dim=8, layers=1, search_size=224,
                         exemplar_size=112, foveal_size=64).token_counts
    errs.append(float(tuple(counts) != (196, 49, 16)))
    return report("foveal_geometry", errs, errs, trials + 1, 0.5, use_rel=False)


def model_gradient(cfg: ModelConfig, rng: np.random.Generator, n_params: int = 200,
                   batch: int = 2, h: float = 1e-5) -> tuple[list[float], list[float], list[str]]:
    """Autodiff vs central differences of the training loss on sampled parameters.

    Every parameter tensor contributes at least one coordinate; the remaining
    budget is spread proportionally to tensor size.
    """
    model = SimTrackModel(cfg, init_params(cfg, seed=int(rng.integers(2**31))))
    for k, p in model.params.items():
        # the head already starts at fan-in scale; only the 0.02-init tensors are lifted
        if p.data.ndim == 2 and not k.startswith("head."):
            p.data *= GRAD_WEIGHT_SCALE
    ex = rng.random((batch, cfg.exemplar_size, cfg.exemplar_size, 3))
    se = rng.random((batch, cfg.search_size, cfg.search_size, 3))
    q = cfg.exemplar_size / 4
    ex_box = np.tile([q, q, 3 * q, 3 * q], (batch, 1)) + rng.uniform(-2, 2, size=(batch, 4))
    gt = np.tile([0.3, 0.3, 0.6, 0.7], (batch, 1)) + rng.uniform(-0.1, 0.1, size=(batch, 4))

    def loss():
        pred, _ = model.forward(ex, se, ex_box)
        return total_loss(pred.boxes, gt)

    for p in model.parameters():
        p.grad = None
    loss().backward()
    names = list(model.params)
    sizes = np.array([model.params[k].data.size for k in names], dtype=float)
    extra = np.floor((n_params - len(names)) * sizes / sizes.sum()).astype(int)
    idx = []
    for k, more in zip(names, extra):
        shape = model.params[k].shape
        for _ in range(1 + max(0, int(more))):
            idx.append((k, tuple(int(rng.integers(n)) for n in shape)))
    while len(idx) < n_params:
        k = names[int(rng.integers(len(names)))]
        idx.append((k, tuple(int(rng.integers(n)) for n in model.params[k].shape)))
    analytic = [float(model.params[k].grad[i]) for k, i in idx]
    with nm.no_grad():
        numeric = finite_diff_grad(lambda: loss().item(), model.params, idx, h)
    return analytic, numeric, [k for k, _ in idx]


def check_model_gradient(cfg: ModelConfig, rng: np.random.Generator, n_params: int = 200) -> OracleReport:
    analytic, numeric, _ = model_gradient(cfg, rng, n_params)
    rel = relative_errors(analytic, numeric)
    abs_e = [abs(a - n) for a, n in zip(analytic, numeric)]
    return report("model_gradient", abs_e, rel, len(rel), GRAD_TOL)


def run_suite(cfg: ModelConfig, seed: int = 0) -> list[OracleReport]:
    rng = np.random.default_rng(seed)
    return [
        check_matmul(rng),
        check_softmax(rng),
        check_attention(rng),
        check_siamese(cfg, rng),
        check_giou(rng),
        check_auc(rng),
        check_foveal_geometry(),
        check_model_gradient(cfg, rng),
    ]


def format_table(reports: list[OracleReport]) -> str:
    lines = [f"{'check':<22} {'max_abs':>10} {'max_rel':>10} {'trials':>6} {'tol':>8}  result"]
    for r in reports:
        lines.append(f"{r.name:<22} {r.max_abs_err:10.3e} {r.max_rel_err:10.3e} {r.trials:6d} "
                     f"{r.tolerance:8.1e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)
