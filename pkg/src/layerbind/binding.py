"""Layer-wise instance initialization.

Branch construction, the contextual branch/text/background updates used in
the early denoising steps, and the occlusion-ordered blending of branches
back into the global latent, including the foreground alpha matte
(MAD-normalised saliency, screened Poisson smoothing, Otsu, hole filling).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .attention import AttentionPolicy, Projection, contextual_attention
from .errors import (
    ConvergenceWarning,
    DegenerateContextError,
    EmptyRegionError,
    EmptyRingError,
    OrderError,
    ShapeError,
)
from .validation import check_scalar, check_tokens

MAD_TO_SIGMA = 1.4826
BLEND_MODES = ("direct", "soft", "matted")
RING_WIDTH = 2
OTSU_BINS = 64


@dataclass(frozen=True)
class AlphaParams:
    gamma: float = 0.9
    eps: float = 1e-6
    lam: float = 4.0
    tol: float = 1e-4
    max_iters: int = 200

    def __post_init__(self):
        check_scalar(self.gamma, "gamma", low=0.0, include_low=False)
        check_scalar(self.eps, "eps", low=0.0, include_low=False)
        check_scalar(self.lam, "lam", low=0.0, include_low=False)
        check_scalar(self.tol, "tol", low=0.0, include_low=False)
        check_scalar(self.max_iters, "max_iters", low=1, kind=int)


@dataclass
class InstanceBranch:
    """Copied sub-latent for one layer; ``positions`` are its grid coords."""

    order: int
    region: object
    tokens: np.ndarray
    positions: np.ndarray

    def copy(self):
        return InstanceBranch(self.order, self.region, self.tokens.copy(), self.positions.copy())


@dataclass(frozen=True)
class AlphaMask:
    values: np.ndarray
    mode: str
    bbox: tuple = None

    def __post_init__(self):
        if self.mode not in BLEND_MODES:
            raise ValueError(f"unknown alpha mode {self.mode!r}")
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("alpha values must lie in [0, 1]")


def grid_positions(grid_h, grid_w):
    """(row, col) coordinates of every token in row-major order."""
    r, c = np.divmod(np.arange(grid_h * grid_w), grid_w)
    return np.stack([r, c], axis=1)


def construct_branches(tokens, regions, positions):
    """Copy the global latent rows of each region into its own branch."""
    branches = []
    for region in regions:
        if len(region.indices) == 0:
            raise EmptyRegionError(f"layer {region.order}: empty region")
        idx = region.indices
        branches.append(InstanceBranch(region.order, region, tokens[idx].copy(), positions[idx].copy()))
    return branches


def branch_update(branch, background, regional_text, vital, heads=1, trace=None, strict=False):
    """Attention update for branch tokens.

    Outside vital blocks the branch sees itself, the background (global image
    tokens outside its region) and its regional text. In vital blocks the
    background link is cut and only the regional text remains. With an empty
    background the non-vital call falls back to the vital path unless
    ``strict`` asks for :class:`DegenerateContextError`.
    """
    if not vital and len(background) == 0:
        if strict:
            raise DegenerateContextError(f"{branch.tag}: region covers the whole image")
        vital = True
        if trace is not None:
            trace.hit("degenerate_fallback")
    if vital:
        if trace is not None:
            trace.hit("hard_binding")
        pol = AttentionPolicy(branch.tag, (regional_text.tag,))
        return contextual_attention(branch, [regional_text], pol, heads=heads)
    pol = AttentionPolicy(branch.tag, (background.tag, regional_text.tag))
    return contextual_attention(branch, [background, regional_text], pol, heads=heads)


def regional_text_update(regional_text, branch, background, heads=1):
    pol = AttentionPolicy(regional_text.tag, (branch.tag, background.tag))
    return contextual_attention(regional_text, [branch, background], pol, heads=heads)


def reverse_adapt_background(background, background_text, branch, vital, heads=1, trace=None):
    """Background rows attend to themselves, the background text and the branch.

    Only acts in vital blocks; returns ``None`` otherwise, meaning the caller
    keeps the ordinary joint-attention result for those rows.
    """
    if not vital:
        return None
    if trace is not None:
        trace.hit("reverse_adaptation")
    pol = AttentionPolicy(background.tag, (background_text.tag, branch.tag))
    return contextual_attention(background, [background_text, branch], pol, heads=heads)


def mad_sigma(values):
    """Gaussian-consistent robust scale: 1.4826 * median(|x - median(x)|)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyRingError("no background samples for MAD")
    return MAD_TO_SIGMA * np.median(np.abs(x - np.median(x)))


def ring_indices(region, width=RING_WIDTH):
    """Grid tokens within ``width`` patches of the region's bounding box,
    excluding the region itself."""
    gh, gw = region.grid_shape
    r0, r1, c0, c1 = region.bbox()
    ring = np.zeros((gh, gw), dtype=bool)
    ring[max(r0 - width, 0) : min(r1 + width, gh), max(c0 - width, 0) : min(c1 + width, gw)] = True
    ring &= ~region.mask
    return np.flatnonzero(ring.ravel())


def _neighbour_sum(a):
    # replicate (Neumann) borders
    p = np.pad(a, 1, mode="edge")
    return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]


def screened_poisson(data, lam=4.0, tol=1e-4, max_iters=200, init=None, residuals=None):
    """Jacobi iteration for ``(4 + lam) a - sum_nbrs(a) = lam * data``.

    Starts from ``init`` (default: ``data``) and stops once the max-abs
    update falls below ``tol``. If ``residuals`` is a list, the max-abs update
    of every iteration is appended to it.
    """
    z = np.asarray(data, dtype=np.float64)
    a = z.copy() if init is None else np.asarray(init, dtype=np.float64).copy()
    denom = 4.0 + lam
    for _ in range(max_iters):
        nxt = (_neighbour_sum(a) + lam * z) / denom
        r = np.max(np.abs(nxt - a)) if a.size else 0.0
        a = nxt
        if residuals is not None:
            residuals.append(r)
        if r < tol:
            return a
    warnings.warn(f"screened Poisson did not reach tol={tol} in {max_iters} iterations", ConvergenceWarning)
    return a


def saliency(branch, region_tokens, sigma_bg, shape, gamma=0.9, eps=1e-6):
    """Smoothed, gamma-corrected per-token norm of the scaled difference."""
    diff = (np.asarray(branch) - np.asarray(region_tokens)) / (sigma_bg + eps)
    z = np.linalg.norm(diff, axis=1) ** gamma
    return ndimage.uniform_filter(z.reshape(shape), size=3, mode="nearest")


def estimate_alpha(branch, region_tokens, ring_tokens, shape, params=None, mode="soft"):
    """Foreground alpha matte on the region's bounding-box grid.

    ``branch`` and ``region_tokens`` are (h*w, d) in row-major box order.
    In ``soft`` mode the smoothed alpha is returned as is; ``matted`` adds
    Otsu binarisation and hole filling; ``direct`` is full opacity.
    """
    params = params or AlphaParams()
    h, w = shape
    branch = check_tokens(branch, "branch")
    region_tokens = check_tokens(region_tokens, "region_tokens")
    if branch.shape != region_tokens.shape or len(branch) != h * w:
        raise ShapeError(f"branch {branch.shape} / region {region_tokens.shape} vs box {shape}")
    if mode == "direct":
        return AlphaMask(np.ones(shape), "direct")
    ring = np.asarray(ring_tokens)
    if ring.size == 0:
        raise EmptyRingError("background ring around region is empty")
    sigma = mad_sigma(ring)
    z = saliency(branch, region_tokens, sigma, shape, params.gamma, params.eps)
    zmax = z.max()
    z = z / zmax if zmax > 0 else np.zeros_like(z)
    alpha = np.clip(screened_poisson(z, params.lam, params.tol, params.max_iters), 0.0, 1.0)
    if mode == "matted":
        alpha = morph_fill(otsu_threshold(alpha)).astype(np.float64)
    return AlphaMask(alpha, mode)


def otsu_threshold(values, bins=OTSU_BINS, return_threshold=False):
    """Binarise by the threshold maximising between-class variance.

    Candidates are the interior edges of a ``bins``-bin histogram spanning
    [min, max]; class means use the exact per-bin sums. Ties keep the lowest
    threshold. Constant input maps to all ones.
    """
    a = np.asarray(values, dtype=np.float64)
    lo, hi = a.min(), a.max()
    if lo == hi:
        out = np.ones(a.shape, dtype=bool)
        return (out, lo) if return_threshold else out
    edges = np.linspace(lo, hi, bins + 1)
    inner = edges[1:-1]
    flat = a.ravel()
    bin_of = np.searchsorted(inner, flat, side="right")
    counts = np.bincount(bin_of, minlength=bins).astype(np.float64)
    sums = np.bincount(bin_of, weights=flat, minlength=bins)
    # class 0 = bins [0, j), class 1 = bins [j, bins)
    w0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    w1 = counts.sum() - w0
    s1 = sums.sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    j = int(np.argmax(between))
    thr = inner[j]
    out = a >= thr
    return (out, thr) if return_threshold else out


def morph_fill(binary):
    """Fill 0-components (4-connected) that do not touch the border."""
    return ndimage.binary_fill_holes(np.asarray(binary, dtype=bool))


def blend_branches(tokens, branches, modes="matted", params=None, trace=None):
    """Fuse branches into the latent in ascending occlusion order.

    A layer whose region shares no token with an already blended lower layer
    is pasted directly. Overlapping layers are alpha-composited with a matte
    chosen by their mode. Returns ``(new_tokens, alphas)`` where ``alphas``
    maps layer order to the :class:`AlphaMask` used.
    """
    orders = [b.order for b in branches]
    if orders != sorted(orders):
        raise OrderError(f"branches not in ascending order: {orders}")
    if isinstance(modes, str):
        modes = [modes] * len(branches)
    if len(modes) != len(branches):
        raise ShapeError("one blend mode per branch required")
    out = np.array(tokens, dtype=np.float64, copy=True)
    occupied = np.zeros(len(out), dtype=bool)
    alphas = {}
    for branch, mode in zip(branches, modes):
        if mode not in BLEND_MODES:
            raise ValueError(f"unknown blend mode {mode!r}")
        region = branch.region
        idx = region.indices
        r0, r1, c0, c1 = bbox = region.bbox()
        shape = (r1 - r0, c1 - c0)
        if len(idx) != shape[0] * shape[1]:
            raise ShapeError(f"layer {branch.order}: region is not a full rectangle")
        if not occupied[idx].any():
            out[idx] = branch.tokens
            alphas[branch.order] = AlphaMask(np.ones(shape), "direct", bbox)
            if trace is not None:
                trace.hit("blend_direct")
        else:
            ring = out[ring_indices(region)]
            mask = estimate_alpha(branch.tokens, out[idx], ring, shape, params, mode)
            a = mask.values.reshape(-1, 1)
            out[idx] = a * branch.tokens + (1.0 - a) * out[idx]
            alphas[branch.order] = AlphaMask(mask.values, mask.mode, bbox)
            if trace is not None:
                trace.hit(f"blend_{mode}")
        occupied[idx] = True
    return out, alphas
