"""Config-driven assembly of the 4-encoder / 3-decoder hybrid network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .blocks import (
    STEM_FACTOR,
    WindowSpec,
    downsample,
    gvm_block_forward,
    head_forward,
    init_downsample,
    init_gvm_block,
    init_head,
    init_lvsa_block,
    init_patch_expand,
    init_stem,
    init_upsample,
    lvsa_block_forward,
    patch_expand,
    stem_forward,
    upsample,
)
from .blocks.init import prefixed, subset
from .engine import ShapeError, Tensor, add

NUM_STAGES = 4
LVSA = "LVSA"
GVM = "GVM"
DEFAULT_WINDOW = (4, 4, 4)
DEFAULT_HEADS = 4


class ConfigError(ValueError):
    """A model config violates a structural invariant."""


@dataclass(frozen=True)
class StageSpec:
    block_kind: str = GVM
    depth: int = 2
    channels: Optional[int] = None
    window: Optional[WindowSpec] = None
    heads: Optional[int] = None

    def __post_init__(self):
        kind = self.block_kind.upper()
        object.__setattr__(self, "block_kind", kind)
        if kind not in BLOCKS:
            raise ConfigError(f"unknown block kind {self.block_kind!r}; known: {sorted(BLOCKS)}")
        if self.depth < 0:
            raise ConfigError(f"stage depth must be non-negative, got {self.depth}")
        if kind == GVM and self.window is not None:
            raise ConfigError("GVM stages take no window spec")
        if isinstance(self.window, (tuple, list)):
            object.__setattr__(self, "window", WindowSpec.half_shift(self.window))


def _default_stages():
    return (StageSpec(LVSA), StageSpec(GVM), StageSpec(GVM), StageSpec(GVM))


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    num_classes: int = 3
    base_channels: int = 48
    stages: tuple = field(default_factory=_default_stages)
    training_volume_dims: tuple = (64, 64, 32)
    deep_supervision: bool = True
    seed: int = 0
    rel_bias: bool = True

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageSpec) else StageSpec(s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        object.__setattr__(self, "training_volume_dims", tuple(int(n) for n in self.training_volume_dims))
        if len(stages) != NUM_STAGES:
            raise ConfigError(f"exactly {NUM_STAGES} stages are required, got {len(stages)}")

    @classmethod
    def from_kinds(cls, kinds, **kw) -> "ModelConfig":
        """Shorthand: ``ModelConfig.from_kinds(["LVSA", "GVM", "GVM", "GVM"], base_channels=8)``."""
        return cls(stages=tuple(StageSpec(k) for k in kinds), **kw)

    @property
    def block_kinds(self) -> tuple:
        return tuple(s.block_kind for s in self.stages)

    def stage_channels(self, i: int) -> int:
        s = self.stages[i]
        return s.channels if s.channels is not None else self.base_channels * 2**i

    def to_dict(self) -> dict:
        d = asdict(self)
        d["training_volume_dims"] = list(self.training_volume_dims)
        d["stages"] = [
            {
                "block_kind": s.block_kind,
                "depth": s.depth,
                "channels": s.channels,
                "window": None if s.window is None else list(s.window.window_dims),
                "heads": s.heads,
            }
            for s in self.stages
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        stages = []
        for s in d.pop("stages", [{"block_kind": k} for k in (LVSA, GVM, GVM, GVM)]):
            s = dict(s)
            if s.get("window") is not None:
                s["window"] = WindowSpec.half_shift(s["window"])
            stages.append(StageSpec(**s))
        return cls(stages=tuple(stages), **d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class StageShape(NamedTuple):
    stage: int
    channels: int
    dims: tuple


def stage_shapes(config: ModelConfig, input_dims=None) -> list:
    """Per-stage ``(channels, (H, W, D))`` for a given input size; pure shape algebra."""
    dims = tuple(input_dims) if input_dims is not None else config.training_volume_dims
    if len(dims) != 3:
        raise ShapeError(f"expected 3 spatial extents, got {dims}")
    for axis, n, f in zip("HWD", dims, STEM_FACTOR):
        if n <= 0 or n % f:
            raise ShapeError(f"stage 1: input axis {axis} extent {n} is not divisible by {f}")
    cur = tuple(n // f for n, f in zip(dims, STEM_FACTOR))
    out = []
    for i in range(NUM_STAGES):
        if i:
            for axis, n in zip("HWD", cur):
                if n % 2:
                    raise ShapeError(f"stage {i + 1}: axis {axis} extent {n} cannot be halved")
            cur = tuple(n // 2 for n in cur)
        out.append(StageShape(i + 1, config.stage_channels(i), cur))
    return out


class StageContext(NamedTuple):
    channels: int
    dims: tuple
    window: Optional[WindowSpec]
    heads: int


def _lvsa_init(rng, ctx: StageContext, config: ModelConfig) -> dict:
    return init_lvsa_block(rng, ctx.channels, ctx.heads, ctx.window, rel_bias=config.rel_bias)


def _lvsa_forward(x, p, ctx: StageContext):
    return lvsa_block_forward(x, p, ctx.window, ctx.heads)


def _gvm_init(rng, ctx: StageContext, config: ModelConfig) -> dict:
    return init_gvm_block(rng, ctx.channels, int(np.prod(ctx.dims)))


def _gvm_forward(x, p, ctx: StageContext):
    return gvm_block_forward(x, p)


# kind -> (init(rng, ctx, config) -> params, forward(x, params, ctx) -> Tensor)
BLOCKS: dict = {LVSA: (_lvsa_init, _lvsa_forward), GVM: (_gvm_init, _gvm_forward)}


def register_block(kind: str, init: Callable, forward: Callable) -> None:
    """Make another block kind available to :class:`StageSpec`.

    ``forward`` must preserve the ``[B, C, H, W, D]`` shape.
    """
    BLOCKS[kind.upper()] = (init, forward)


def stage_contexts(config: ModelConfig) -> list:
    shapes = stage_shapes(config)
    ctxs = []
    for i, (spec, shape) in enumerate(zip(config.stages, shapes)):
        window = None
        heads = spec.heads if spec.heads is not None else DEFAULT_HEADS * 2**i
        if spec.block_kind == LVSA:
            window = (spec.window or WindowSpec.half_shift(DEFAULT_WINDOW)).fitted(shape.dims)
            for axis, n, w in zip("HWD", shape.dims, window.window_dims):
                if n % w:
                    raise ShapeError(f"stage {i + 1}: axis {axis} extent {n} is not divisible by window extent {w}")
            if shape.channels % heads:
                raise ShapeError(f"stage {i + 1}: {shape.channels} channels not divisible by {heads} heads")
        ctxs.append(StageContext(shape.channels, shape.dims, window, heads))
    return ctxs


@dataclass
class Model:
    config: ModelConfig
    params: dict
    contexts: list

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def __call__(self, x: Tensor) -> dict:
        return forward(self, x)


def build_model(config: ModelConfig) -> Model:
    """Initialise every parameter deterministically from ``config.seed``."""
    ctxs = stage_contexts(config)
    rng = np.random.default_rng(config.seed)
    K = config.num_classes
    params = {}
    params.update(prefixed("stem", init_stem(rng, config.input_channels, ctxs[0].channels)))
    for i, ctx in enumerate(ctxs):
        init = BLOCKS[config.stages[i].block_kind][0]
        for j in range(config.stages[i].depth):
            params.update(prefixed(f"enc{i + 1}.block{j}", init(rng, ctx, config)))
        if i < NUM_STAGES - 1:
            params.update(prefixed(f"down{i + 1}", init_downsample(rng, ctx.channels, ctxs[i + 1].channels)))
    for i in reversed(range(NUM_STAGES - 1)):
        ctx = ctxs[i]
        params.update(prefixed(f"up{i + 1}", init_upsample(rng, ctxs[i + 1].channels, ctx.channels)))
        init = BLOCKS[config.stages[i].block_kind][0]
        for j in range(config.stages[i].depth):
            params.update(prefixed(f"dec{i + 1}.block{j}", init(rng, ctx, config)))
    params.update(prefixed("expand", init_patch_expand(rng, ctxs[0].channels, K)))
    params.update(prefixed("aux1", init_head(rng, ctxs[0].channels, K)))
    params.update(prefixed("aux2", init_head(rng, ctxs[1].channels, K)))
    for name, p in params.items():
        p.name = name
    return Model(config, params, ctxs)


def _run_stage(model: Model, x: Tensor, prefix: str, i: int) -> Tensor:
    fwd = BLOCKS[model.config.stages[i].block_kind][1]
    for j in range(model.config.stages[i].depth):
        x = fwd(x, subset(model.params, f"{prefix}.block{j}"), model.contexts[i])
    return x


def forward(model: Model, x: Tensor) -> dict:
    """Full forward pass.

    Returns ``{"logits": [B, K, H, W, D], "aux": [[B, K, H/4, W/4, D/2], [B, K, H/8, W/8, D/4]]}``.
    """
    cfg = model.config
    if x.ndim != 5 or x.shape[1] != cfg.input_channels or tuple(x.shape[2:]) != cfg.training_volume_dims:
        raise ShapeError(
            f"input {x.shape} does not match [B, {cfg.input_channels}, *{cfg.training_volume_dims}]"
        )
    p = model.params
    h = stem_forward(x, subset(p, "stem"))
    skips = []
    for i in range(NUM_STAGES):
        h = _run_stage(model, h, f"enc{i + 1}", i)
        if i < NUM_STAGES - 1:
            skips.append(h)
            h = downsample(h, subset(p, f"down{i + 1}"))
    decoded = {}
    for i in reversed(range(NUM_STAGES - 1)):
        h = upsample(h, subset(p, f"up{i + 1}"))
        if h.shape != skips[i].shape:
            raise ShapeError(f"skip connection at stage {i + 1}: upsampled {h.shape} vs encoder {skips[i].shape}")
        h = _run_stage(model, add(h, skips[i]), f"dec{i + 1}", i)
        decoded[i] = h
    logits = patch_expand(h, subset(p, "expand"))
    aux = [head_forward(decoded[0], subset(p, "aux1")), head_forward(decoded[1], subset(p, "aux2"))]
    return {"logits": logits, "aux": aux}


def count_params(model: Model) -> int:
    return int(sum(p.size for p in model.params.values()))
