"""Parameter dictionaries and the small layer helpers built on them."""
from __future__ import annotations

import numpy as np

from . import numerics as nm
from .numerics import Tensor

Params = dict  # name -> trainable Tensor

INIT_STD = 0.02


def init_linear(params: Params, prefix: str, n_in: int, n_out: int,
                rng: np.random.Generator, bias: bool = True, zero: bool = False,
                std: float = INIT_STD) -> None:
    w = np.zeros((n_in, n_out)) if zero else rng.normal(0.0, std, size=(n_in, n_out))
    params[f"{prefix}.weight"] = nm.parameter(w, f"{prefix}.weight")
    if bias:
        params[f"{prefix}.bias"] = nm.parameter(np.zeros(n_out), f"{prefix}.bias")


def init_layernorm(params: Params, prefix: str, dim: int) -> None:
    params[f"{prefix}.gamma"] = nm.parameter(np.ones(dim), f"{prefix}.gamma")
    params[f"{prefix}.beta"] = nm.parameter(np.zeros(dim), f"{prefix}.beta")


def linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    y = nm.matmul(x, params[f"{prefix}.weight"])
    b = params.get(f"{prefix}.bias")
    return y if b is None else nm.add(y, b)


def layer_norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return nm.layernorm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def mlp(params: Params, prefix: str, x: Tensor) -> Tensor:
    """linear -> GELU -> linear, parameters under ``prefix.fc1`` / ``prefix.fc2``."""
    return linear(params, f"{prefix}.fc2", nm.gelu(linear(params, f"{prefix}.fc1", x)))


def subset(params: Params, prefix: str) -> Params:
    return {k: v for k, v in params.items() if k.startswith(prefix + ".")}
