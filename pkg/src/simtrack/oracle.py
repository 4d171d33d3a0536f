"""Brute-force references for tests and ``gradcheck``.

Nothing here calls into the production kernels: attention, matmul and softmax
are plain Python loops over floats, box areas come from scanline counting.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass
class OracleReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    trials: int
    tolerance: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def report(name: str, errors_abs: Sequence[float], errors_rel: Sequence[float], trials: int,
           tolerance: float, use_rel: bool = True) -> OracleReport:
    ea = float(max(errors_abs, default=0.0))
    er = float(max(errors_rel, default=0.0))
    worst = er if use_rel else ea
    return OracleReport(name, ea, er, trials, tolerance, bool(worst < tolerance))


# --- dense algebra -------------------------------------------------------

def naive_matmul(a, b) -> list[list[float]]:
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    m, k, n = len(a), len(b), len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i][t] * b[t][j]
            out[i][j] = acc
    return out


def naive_softmax(row: Sequence[float]) -> list[float]:
    finite = [x for x in row if x != -math.inf]
    m = max(finite)
    ex = [0.0 if x == -math.inf else math.exp(x - m) for x in row]
    total = math.fsum(ex)
    return [v / total for v in ex]


# --- attention -----------------------------------------------------------

def _project(x: list[list[float]], w: list[list[float]]) -> list[list[float]]:
    return naive_matmul(x, w) if x else []


def _logit(q: list[float], k: list[float], d: int) -> float:
    return math.fsum(qi * ki for qi, ki in zip(q, k)) / math.sqrt(d)


def _weighted(p: list[float], vals: list[list[float]]) -> list[float]:
    width = len(vals[0])
    return [math.fsum(p[r] * vals[r][c] for r in range(len(vals))) for c in range(width)]


def block_attention_loops(e, s, w_q, w_k, w_v, masked: bool = False):
    """Softmax over the full ``[[a(e,e), a(e,s)], [a(s,e), a(s,s)]]`` logit matrix.

    With ``masked`` the cross blocks are set to ``-inf``.
    """
    e, s = np.asarray(e).tolist(), np.asarray(s).tolist()
    w_q, w_k, w_v = (np.asarray(w).tolist() for w in (w_q, w_k, w_v))
    d = len(w_q[0])
    x = e + s
    ne = len(e)
    q, k, v = _project(x, w_q), _project(x, w_k), _project(x, w_v)
    out = []
    for i in range(len(x)):
        logits = []
        for j in range(len(x)):
            cross = (i < ne) != (j < ne)
            logits.append(-math.inf if masked and cross else _logit(q[i], k[j], d))
        out.append(_weighted(naive_softmax(logits), v))
    width = len(w_v[0])
    return np.array(out[:ne]).reshape(ne, width), np.array(out[ne:]).reshape(len(s), width)


def decomposed_attention_loops(e, s, w_q, w_k, w_v):
    """Each side's rows: ``softmax([a(x, e), a(x, s)]) [e W_V; s W_V]``."""
    e, s = np.asarray(e).tolist(), np.asarray(s).tolist()
    w_q, w_k, w_v = (np.asarray(w).tolist() for w in (w_q, w_k, w_v))
    d = len(w_q[0])
    ke, ks = _project(e, w_k), _project(s, w_k)
    values = _project(e, w_v) + _project(s, w_v)

    def side(rows):
        qs = _project(rows, w_q)
        res = []
        for q in qs:
            a_e = [_logit(q, kk, d) for kk in ke]
            a_s = [_logit(q, kk, d) for kk in ks]
            res.append(_weighted(naive_softmax(a_e + a_s), values))
        return res

    att_e, att_s = side(e), side(s)
    width = len(w_v[0])
    return np.array(att_e).reshape(len(e), width), np.array(att_s).reshape(len(s), width)


def naive_joint_attention(e, s, w_q, w_k, w_v):
    """``((Att(e), Att(s)) block form, (Att(e), Att(s)) decomposed form)``."""
    return block_attention_loops(e, s, w_q, w_k, w_v), decomposed_attention_loops(e, s, w_q, w_k, w_v)


# --- gradients -----------------------------------------------------------

def finite_diff_grad(fn: Callable[[], float], tensors, indices, h: float = 1e-5) -> list[float]:
    """Central differences of ``fn`` w.r.t. ``tensors[t].data[idx]`` for each ``(t, idx)``.

    ``tensors`` maps keys to objects with a mutable ``.data`` array; values are
    restored after each probe.
    """
    est = []
    for key, idx in indices:
        arr = tensors[key].data
        orig = float(arr[idx])
        arr[idx] = orig + h
        fp = fn()
        arr[idx] = orig - h
        fm = fn()
        arr[idx] = orig
        est.append((fp - fm) / (2 * h))
    return est


def relative_errors(analytic: Sequence[float], numeric: Sequence[float], floor: float = 1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    out = []
    for a, n in zip(analytic, numeric):
        out.append(abs(a - n) / max(abs(a), abs(n), floor))
    return out


# --- boxes and metrics ---------------------------------------------------

def raster_area(a, b, resolution: float = 1e-4) -> tuple[float, float, float]:
    """Intersection, union and hull areas of two boxes by counting pixel centers.

    The unit square is rasterized at ``resolution``; a pixel belongs to a box
    when its center lies in ``[x1, x2) x [y1, y2)``.  Axis-aligned boxes cover
    a full rectangle of pixels, so counts factor into rows times columns.
    """
    n = int(round(1.0 / resolution))
    centers = (np.arange(n) + 0.5) * resolution

    def count(lo, hi):
        return int(np.count_nonzero((centers >= lo) & (centers < hi)))

    def pixels(x1, y1, x2, y2):
        return count(x1, x2) * count(y1, y2)

    na, nb = pixels(*a), pixels(*b)
    nab = pixels(max(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), min(a[3], b[3]))
    hull = pixels(min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))
    cell = resolution * resolution
    return nab * cell, (na + nb - nab) * cell, hull * cell


def raster_giou(a, b, resolution: float = 1e-4) -> float:
    inter, union, hull = raster_area(a, b, resolution)
    return inter / union - (hull - union) / hull


def enumerate_success(ious: Sequence[float], thresholds: Sequence[float]) -> list[float]:
    out = []
    for t in thresholds:
        hits = 0
        for v in ious:
            if (t == 0 and v > 0) or (t > 0 and v >= t):
                hits += 1
        out.append(hits / len(ious))
    return out


def enumerate_auc(ious: Sequence[float], n_thresholds: int = 21) -> float:
    thresholds = [k / (n_thresholds - 1) for k in range(n_thresholds)]
    return math.fsum(enumerate_success(ious, thresholds)) / n_thresholds
