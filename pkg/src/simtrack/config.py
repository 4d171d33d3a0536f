"""Configuration dataclasses and the JSON run-config loader."""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source text when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class InteractionSchedule:
    """Per-layer gates; ``gates[l]`` enables cross-sequence attention in layer ``l + 1``."""

    gates: tuple[bool, ...]

    @classmethod
    def full(cls, n_layers: int) -> "InteractionSchedule":
        return cls((True,) * n_layers)

    @classmethod
    def none(cls, n_layers: int) -> "InteractionSchedule":
        return cls((False,) * n_layers)

    @classmethod
    def ratio(cls, n_layers: int, ratio: float) -> "InteractionSchedule":
        """Keep interaction in every ``1/ratio``-th block, counting from the last.

        ``ratio(12, 0.5)`` enables blocks 2, 4, ..., 12.
        """
        if ratio <= 0:
            return cls.none(n_layers)
        step = max(1, round(1.0 / ratio))
        return cls(tuple((l + 1) % step == 0 for l in range(n_layers)))

    def __len__(self):
        return len(self.gates)


@dataclass(frozen=True)
class ModelConfig:
    patch: int = 8
    dim: int = 64
    layers: int = 4
    heads: int = 4
    ffn_dim: int = 256
    search_size: int = 64
    exemplar_size: int = 32
    foveal_size: int = 0  # 0 disables the foveal window
    interaction: tuple[bool, ...] | None = None  # None means all layers interact
    decoder_layers: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.interaction is None:
            object.__setattr__(self, "interaction", (True,) * self.layers)
        else:
            object.__setattr__(self, "interaction", tuple(bool(g) for g in self.interaction))
        self.validate()

    @property
    def schedule(self) -> InteractionSchedule:
        return InteractionSchedule(self.interaction)

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def search_grid(self) -> int:
        return self.search_size // self.patch

    @property
    def exemplar_grid(self) -> int:
        return self.exemplar_size // self.patch

    @property
    def foveal_grid(self) -> int:
        return self.foveal_size // self.patch

    @property
    def token_counts(self) -> tuple[int, int, int]:
        return self.search_grid ** 2, self.exemplar_grid ** 2, self.foveal_grid ** 2

    def validate(self) -> None:
        for name in ("patch", "dim", "heads", "ffn_dim", "search_size", "exemplar_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.layers < 0 or self.decoder_layers < 0:
            raise ConfigError("layers and decoder_layers must be >= 0")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if len(self.interaction) != self.layers:
            raise ConfigError(f"interaction schedule has {len(self.interaction)} gates "
                              f"for {self.layers} layers")
        for name in ("search_size", "exemplar_size"):
            if getattr(self, name) % self.patch:
                raise ConfigError(f"{name} {getattr(self, name)} not divisible by patch {self.patch}")
        if self.foveal_size:
            from .tokenizer import check_foveal_alignment

            check_foveal_alignment(self.exemplar_size, self.foveal_size, self.patch)

    def with_schedule(self, gates) -> "ModelConfig":
        return dataclasses.replace(self, interaction=tuple(gates))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    steps_per_epoch: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    warmup_steps: int = 0
    cosine_decay: bool = False
    lambda_iou: float = 2.0
    lambda_l1: float = 5.0
    eval_every: int = 0  # epochs between held-out AUC evaluations; 0 disables
    eval_videos: int = 5
    grad_clip: float = 0.0


@dataclass(frozen=True)
class DataConfig:
    frame_size: int = 128
    length: int = 40
    velocity_sigma: float = 2.0
    scale_sigma: float = 0.02
    distractors: int = 2
    companions: int = 0  # distractors that start beside the target
    background_level: float = 0.3  # mean of the smooth background
    background_contrast: float = 0.4  # its peak-to-peak range
    min_target: float = 14.0
    max_target: float = 30.0
    exemplar_factor: float = 2.0  # crop side / sqrt(w h)
    search_factor: float = 4.0
    max_gap: int = 30
    center_jitter: float = 0.1  # fraction of search crop side
    scale_jitter: float = 0.1  # log-uniform crop side jitter during training
    distractor_crops: float = 0.0  # share of training crops centred on the nearest distractor
    train_videos: int = 200
    test_videos: int = 50
    test_seed_offset: int = 1_000_000


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        # tuples become lists so the dict equals its own JSON round trip
        return dataclasses.asdict(self, dict_factory=lambda kv: {k: list(v) if isinstance(v, tuple) else v
                                                                  for k, v in kv})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def _line_of(text: str | None, key: str) -> int | None:
    if text is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _build(cls, values: dict, text: str | None, section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section '{section}' must be an object", _line_of(text, section))
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{key}' in section '{section}'", _line_of(text, key))
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(str(exc), _line_of(text, section)) from None
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}", _line_of(text, section)) from None


def run_config_from_dict(d: dict, text: str | None = None) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be an object", 1)
    for key in d:
        if key not in _SECTIONS and key != "seed":
            raise ConfigError(f"unknown top-level key '{key}'", _line_of(text, key))
    parts = {name: _build(cls, d.get(name, {}), text, name) for name, cls in _SECTIONS.items()}
    seed = d.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer", _line_of(text, "seed"))
    return RunConfig(seed=seed, **parts)


def parse_run_config(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
    return run_config_from_dict(d, text)


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_run_config(fh.read())


def model_config_from_dict(d: dict) -> ModelConfig:
    return _build(ModelConfig, d, None, "model")
