"""The assembled tracker network: embedder, backbone, optional decoder, corner head."""
from __future__ import annotations

import numpy as np

from . import numerics as nm
from .backbone import AttentionRecord, decoder_forward, init_backbone, joint_forward
from .config import ModelConfig
from .head import BoxPrediction, init_head, predict_box
from .nn import Params
from .tokenizer import TokenSequence, embed_exemplar, embed_search, empty_sequence, init_embedder


def init_params(cfg: ModelConfig, seed: int | None = None) -> Params:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params: Params = {}
    init_embedder(params, cfg, rng)
    init_backbone(params, cfg, rng)
    init_head(params, cfg, rng)
    return params


class SimTrackModel:
    def __init__(self, cfg: ModelConfig, params: Params | None = None):
        self.cfg = cfg
        self.params = init_params(cfg) if params is None else params

    def parameters(self) -> list[nm.Tensor]:
        return list(self.params.values())

    def embed_exemplar(self, exemplar: np.ndarray, boxes: np.ndarray) -> tuple[TokenSequence, TokenSequence]:
        if exemplar.ndim == 3:
            exemplar = exemplar[None]
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        e, f = embed_exemplar(self.params, self.cfg, exemplar, boxes)
        return e, (f if f is not None else empty_sequence(exemplar.shape[0], self.cfg.dim))

    def forward_tokens(self, e: TokenSequence, f: TokenSequence, search: np.ndarray,
                       record: bool = False) -> tuple[BoxPrediction, list[AttentionRecord]]:
        """Forward pass given already-embedded exemplar tokens."""
        if search.ndim == 3:
            search = search[None]
        s = embed_search(self.params, self.cfg, search)
        s_out, e_out, f_out, records = joint_forward(s, e, f, self.cfg, self.params, record)
        if self.cfg.decoder_layers:
            memory = nm.concat([e_out, f_out], axis=1) if f_out.shape[1] else e_out
            s_out = decoder_forward(s_out, memory, self.params, self.cfg.decoder_layers, self.cfg.heads)
        g = self.cfg.search_grid
        return predict_box(s_out, self.params, (g, g)), records

    def forward(self, exemplar: np.ndarray, search: np.ndarray, exemplar_boxes: np.ndarray,
                record: bool = False) -> tuple[BoxPrediction, list[AttentionRecord]]:
        """``exemplar_boxes`` are target boxes in exemplar-crop pixels."""
        e, f = self.embed_exemplar(exemplar, exemplar_boxes)
        return self.forward_tokens(e, f, search, record)
