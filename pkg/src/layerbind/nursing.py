"""Layer-wise semantic nursing.

Per-layer local attention for each region, the matching regional-text
refresh, and the transparency scheduler that stacks the local results onto
the global attention output from the farthest layer to the nearest.
"""

from dataclasses import dataclass

import numpy as np

from .attention import AttentionPolicy, contextual_attention
from .errors import OrderError, ShapeError
from .validation import check_scalar


@dataclass(frozen=True)
class NursingConfig:
    beta: float = 0.7
    enabled: bool = True
    regional_prompting_only: bool = False

    def __post_init__(self):
        check_scalar(self.beta, "beta", low=0.0, high=1.0)


def nurse_local(region_image, regional_text, outside_image, region_indices, n_tokens, heads=1):
    """Local enhancement for one region, scattered into a full-size field.

    ``region_image`` holds the image rows inside the region and
    ``outside_image`` the remaining image rows, so every global image token
    appears once among the keys together with the regional text. Rows
    outside the region are zero in the returned (n_tokens, width) array.
    """
    pol = AttentionPolicy(region_image.tag, (regional_text.tag, outside_image.tag))
    local = contextual_attention(region_image, [regional_text, outside_image], pol, heads=heads)
    full = np.zeros((n_tokens, local.shape[1]))
    full[region_indices] = local
    return full


def nurse_text(regional_text, region_image, scene_text, heads=1):
    pol = AttentionPolicy(regional_text.tag, (region_image.tag, scene_text.tag))
    return contextual_attention(regional_text, [region_image, scene_text], pol, heads=heads)


def composite_layers(global_out, locals_, masks, beta, orders=None):
    """Iteratively blend layer outputs over the global output.

    ``comp_0 = global``; ``comp_i = (1 - beta*M_i) * comp_{i-1} + beta*M_i * local_i``.
    ``masks`` are binary per-token vectors; ``orders`` (if given) must be
    ascending.
    """
    if orders is not None and list(orders) != sorted(orders):
        raise OrderError(f"layers not in ascending order: {list(orders)}")
    if len(locals_) != len(masks):
        raise ShapeError("one mask per local output required")
    comp = np.asarray(global_out, dtype=np.float64)
    if len(locals_) == 0 or beta == 0:
        return comp.copy()
    for local, m in zip(locals_, masks):
        local = np.asarray(local, dtype=np.float64)
        if local.shape != comp.shape:
            raise ShapeError(f"local shape {local.shape} != global {comp.shape}")
        a = beta * np.asarray(m, dtype=np.float64).reshape(-1, *([1] * (comp.ndim - 1)))
        if a.shape[0] != comp.shape[0]:
            raise ShapeError("mask length does not match token count")
        comp = (1.0 - a) * comp + a * local
    return comp


def regional_prompting(global_out, locals_, masks):
    """Baseline without layer compositing: each region's rows are replaced by
    its local output, later layers overwriting earlier ones."""
    out = np.array(global_out, dtype=np.float64, copy=True)
    for local, m in zip(locals_, masks):
        sel = np.asarray(m, dtype=bool).reshape(-1)
        out[sel] = np.asarray(local)[sel]
    return out
