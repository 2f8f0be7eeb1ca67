"""Architectural building blocks."""

from .gvm import gvm_block_forward, gvm_layer_forward, init_gvm_block, init_gvm_layer
from .layers import (
    STEM_FACTOR,
    downsample,
    head_forward,
    init_downsample,
    init_head,
    init_patch_expand,
    init_stem,
    init_upsample,
    patch_expand,
    stem_forward,
    upsample,
)
from .lvsa import (
    attention_layer_forward,
    init_attention_layer,
    init_lvsa_block,
    lvsa_block_forward,
    relative_position_index,
    window_attention,
)
from .windows import MASK_VALUE, WindowSpec, build_shift_mask, region_labels, window_partition, window_reverse

__all__ = [
    "MASK_VALUE",
    "STEM_FACTOR",
    "WindowSpec",
    "attention_layer_forward",
    "build_shift_mask",
    "downsample",
    "gvm_block_forward",
    "gvm_layer_forward",
    "head_forward",
    "init_attention_layer",
    "init_downsample",
    "init_gvm_block",
    "init_gvm_layer",
    "init_head",
    "init_lvsa_block",
    "init_patch_expand",
    "init_stem",
    "init_upsample",
    "lvsa_block_forward",
    "patch_expand",
    "region_labels",
    "relative_position_index",
    "stem_forward",
    "upsample",
    "window_attention",
    "window_partition",
    "window_reverse",
]
