"""Joint exemplar/search transformer backbone with per-layer interaction gates.

Tokens are concatenated in the order exemplar, foveal, search.  Exemplar and
foveal tokens form one group; when a layer's gate is off, attention logits
between the two groups are set to ``-inf`` so each group is processed exactly
as it would be on its own.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import ModelConfig
from .nn import Params, init_layernorm, init_linear, layer_norm, linear, mlp
from .numerics import Tensor


@dataclass(frozen=True)
class Segments:
    """Token counts of the concatenated sequence ``[e; e*; s]``."""

    n_exemplar: int
    n_foveal: int
    n_search: int

    @property
    def total(self) -> int:
        return self.n_exemplar + self.n_foveal + self.n_search

    @property
    def exemplar_group(self) -> slice:
        return slice(0, self.n_exemplar + self.n_foveal)

    @property
    def search(self) -> slice:
        return slice(self.n_exemplar + self.n_foveal, self.total)

    def spans(self) -> dict[str, tuple[int, int]]:
        a, b = self.n_exemplar, self.n_exemplar + self.n_foveal
        return {"exemplar": (0, a), "foveal": (a, b), "search": (b, self.total)}

    def validate(self) -> None:
        if self.n_exemplar <= 0 or self.n_search <= 0:
            raise ValueError(f"exemplar and search segments must be non-empty, got {self}")
        if self.n_foveal < 0:
            raise ValueError("negative foveal count")

    def cross_mask(self) -> np.ndarray:
        """Additive mask that blocks exemplar-group <-> search attention."""
        group = np.zeros(self.total, dtype=int)
        group[self.search] = 1
        return np.where(group[:, None] == group[None, :], 0.0, -np.inf)


@dataclass
class AttentionRecord:
    layer: int
    gate: bool
    probs: np.ndarray  # [B, H, N, N]
    segments: Segments


def init_block(params: Params, prefix: str, cfg: ModelConfig, rng: np.random.Generator,
               cross: bool = False) -> None:
    c = cfg.dim
    init_layernorm(params, f"{prefix}.ln1", c)
    if cross:
        init_layernorm(params, f"{prefix}.ln_kv", c)
    for name in ("w_q", "w_k", "w_v"):
        init_linear(params, f"{prefix}.attn.{name}", c, c, rng, bias=False)
    init_linear(params, f"{prefix}.attn.out", c, c, rng)
    init_layernorm(params, f"{prefix}.ln2", c)
    init_linear(params, f"{prefix}.ffn.fc1", c, cfg.ffn_dim, rng)
    init_linear(params, f"{prefix}.ffn.fc2", cfg.ffn_dim, c, rng)


def init_backbone(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    for l in range(cfg.layers):
        init_block(params, f"blocks.{l}", cfg, rng)
    for k in range(cfg.decoder_layers):
        init_block(params, f"decoder.{k}", cfg, rng, cross=True)


def _split_heads(x: Tensor, heads: int, keys: bool = False) -> Tensor:
    b, n, c = x.shape
    x = nm.reshape(x, (b, n, heads, c // heads))
    # keys come out pre-transposed as [B, H, d, N]
    return nm.transpose(x, (0, 2, 3, 1) if keys else (0, 2, 1, 3))


def attention_kernel(x_q: Tensor, x_kv: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                     heads: int, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over ``[B, N, C]`` inputs.

    Returns the head-concatenated output ``[B, Nq, C]`` (before the output
    projection) and the attention probabilities ``[B, H, Nq, Nk]``.
    """
    b, nq, _ = x_q.shape
    d = w_q.shape[1] // heads
    q = _split_heads(nm.matmul(x_q, w_q), heads)
    k = _split_heads(nm.matmul(x_kv, w_k), heads, keys=True)
    v = _split_heads(nm.matmul(x_kv, w_v), heads)
    logits = nm.mul(nm.matmul(q, k), 1.0 / math.sqrt(d))
    probs = nm.softmax_rows(logits, mask)
    out = nm.transpose(nm.matmul(probs, v), (0, 2, 1, 3))
    return nm.reshape(out, (b, nq, w_v.shape[1])), probs


def _attn(params: Params, prefix: str, x_q: Tensor, x_kv: Tensor, heads: int,
          mask: np.ndarray | None) -> tuple[Tensor, Tensor]:
    out, probs = attention_kernel(x_q, x_kv, params[f"{prefix}.attn.w_q.weight"],
                                  params[f"{prefix}.attn.w_k.weight"],
                                  params[f"{prefix}.attn.w_v.weight"], heads, mask)
    return linear(params, f"{prefix}.attn.out", out), probs


def attention_block(tokens: Tensor, segments: Segments, gate: bool, params: Params,
                    prefix: str, heads: int) -> tuple[Tensor, Tensor]:
    """Pre-norm block: ``x* = x + Att(LN(x))``, ``out = x* + FFN(LN(x*))``."""
    segments.validate()
    if tokens.shape[1] != segments.total:
        raise ValueError(f"token count {tokens.shape[1]} does not match segments {segments}")
    mask = None if gate else segments.cross_mask()
    h = layer_norm(params, f"{prefix}.ln1", tokens)
    att, probs = _attn(params, prefix, h, h, heads, mask)
    x = nm.add(tokens, att)
    x = nm.add(x, mlp(params, f"{prefix}.ffn", layer_norm(params, f"{prefix}.ln2", x)))
    return x, probs


def self_block(tokens: Tensor, params: Params, prefix: str, heads: int) -> Tensor:
    """One block applied to a single, unmasked sequence."""
    h = layer_norm(params, f"{prefix}.ln1", tokens)
    att, _ = _attn(params, prefix, h, h, heads, None)
    x = nm.add(tokens, att)
    return nm.add(x, mlp(params, f"{prefix}.ffn", layer_norm(params, f"{prefix}.ln2", x)))


def _tokens(seq) -> Tensor:
    return seq if isinstance(seq, Tensor) else seq.tokens


def joint_forward(s0, e0, f0, cfg: ModelConfig, params: Params, record: bool = False):
    """Run the gated blocks over ``[e0; e0*; s0]``.

    Returns ``(sL, eL, fL, records)``; ``records`` is empty unless ``record``.
    """
    s, e = _tokens(s0), _tokens(e0)
    b = s.shape[0]
    f = _tokens(f0) if f0 is not None else Tensor(np.zeros((b, 0, cfg.dim)))
    seg = Segments(e.shape[1], f.shape[1], s.shape[1])
    parts = [e, f, s] if seg.n_foveal else [e, s]
    x = nm.concat(parts, axis=1)
    records: list[AttentionRecord] = []
    for l, gate in enumerate(cfg.interaction):
        x, probs = attention_block(x, seg, gate, params, f"blocks.{l}", cfg.heads)
        if record:
            records.append(AttentionRecord(l, gate, probs.data, seg))
    a, m = seg.n_exemplar, seg.n_exemplar + seg.n_foveal
    e_out = nm.slice_(x, 1, 0, a)
    f_out = nm.slice_(x, 1, a, m) if seg.n_foveal else f
    s_out = nm.slice_(x, 1, m, seg.total)
    return s_out, e_out, f_out, records


def decoder_forward(s: Tensor, memory: Tensor, params: Params, n_layers: int, heads: int) -> Tensor:
    """Cross-attention decoder: search queries, exemplar(+foveal) keys and values."""
    for k in range(n_layers):
        p = f"decoder.{k}"
        att, _ = _attn(params, p, layer_norm(params, f"{p}.ln1", s),
                       layer_norm(params, f"{p}.ln_kv", memory), heads, None)
        s = nm.add(s, att)
        s = nm.add(s, mlp(params, f"{p}.ffn", layer_norm(params, f"{p}.ln2", s)))
    return s


def target_attention_map(records: list[AttentionRecord], layer: int, grid: int) -> np.ndarray:
    """Attention mass from exemplar-group queries onto each search token.

    Averaged over heads and queries; returns ``[B, grid, grid]``.
    """
    if not records:
        raise ValueError("no attention records; run the forward pass with record=True")
    if not 0 <= layer < len(records):
        raise IndexError(f"layer {layer} out of range 0..{len(records) - 1}")
    rec = records[layer]
    seg = rec.segments
    block = rec.probs[:, :, seg.exemplar_group, seg.search]
    m = block.mean(axis=(1, 2))
    return m.reshape(m.shape[0], grid, grid)


def joint_attention(e: np.ndarray, s: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                    w_v: np.ndarray) -> np.ndarray:
    """Single-head attention over the concatenated ``[e; s]`` via the production kernel."""
    x = Tensor(np.concatenate([e, s], axis=0)[None])
    with nm.no_grad():
        out, _ = attention_kernel(x, x, Tensor(w_q), Tensor(w_k), Tensor(w_v), heads=1)
    return out.data[0]


def decomposed_attention(e: np.ndarray, s: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                         w_v: np.ndarray) -> np.ndarray:
    """Row-blocked form: each side softmaxes over ``[a(., e), a(., s)]`` separately."""
    d = w_q.shape[1]

    def a(x, y):
        return (x @ w_q) @ (y @ w_k).T / math.sqrt(d)

    values = np.concatenate([e @ w_v, s @ w_v], axis=0)
    rows = []
    for side in (e, s):
        if side.shape[0] == 0:
            rows.append(np.zeros((0, w_v.shape[1])))
            continue
        logits = np.concatenate([a(side, e), a(side, s)], axis=1)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        rows.append((p / p.sum(axis=1, keepdims=True)) @ values)
    return np.concatenate(rows, axis=0)


def decompose_attention_check(e: np.ndarray, s: np.ndarray, w_q: np.ndarray, w_k: np.ndarray,
                              w_v: np.ndarray) -> float:
    """Max abs deviation between the joint and the row-decomposed attention."""
    joint = joint_attention(e, s, w_q, w_k, w_v)
    split = decomposed_attention(e, s, w_q, w_k, w_v)
    return float(np.max(np.abs(joint - split))) if joint.size else 0.0
