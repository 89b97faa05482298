"""Overhead of instance branches as a function of region count.

Each benchmark region covers a quarter of the image tokens. Two costs are
reported per count: the number of query-key score pairs evaluated during the
initialization phase (exact, mirroring the attention calls of the model) and
the measured wall time relative to a run without regions.
"""

import time
from dataclasses import dataclass

import numpy as np

from .layout import LayerSpec, SceneSpec, scene_regions

# top-left corners of 512x512 boxes on the 1024 canvas
BENCH_CORNERS = ((0, 0), (512, 0), (0, 512), (512, 512), (256, 256), (256, 0))


def bench_scene(n_regions):
    layers = tuple(
        LayerSpec(f"object number {i + 1}", (x, y, x + 512, y + 512), i + 1)
        for i, (x, y) in enumerate(BENCH_CORNERS[:n_regions])
    )
    return SceneSpec("a scene with several objects", "an empty room", layers)


def _words(prompt, limit):
    return min(len(prompt.split()), limit)


def block_pair_count(n_img, n_text, regions, n_regional, vital):
    """Score pairs evaluated by one initialization-phase block."""
    if not regions:
        return (n_text + n_img) ** 2
    pairs = 0
    if vital:
        hits = np.zeros(n_img, dtype=int)
        for region in regions:
            bg = n_img - len(region.indices)
            if bg:
                pairs += bg * (bg + n_text + len(region.indices))
                pairs += n_text * (n_text + bg)
                hits[~region.mask.ravel()] += 1
        core = int((hits == 0).sum())
        if core == n_img:
            pairs += n_text * n_text
        pairs += core * (core + n_text + (n_img - core))
    else:
        pairs += (n_text + n_img) ** 2
    for region, n_reg in zip(regions, n_regional):
        b = len(region.indices)
        bg = n_img - b
        pairs += b * (b + n_reg + (0 if vital else bg))
        pairs += n_reg * (n_reg + b + bg)
    return pairs


def phase1_pair_count(spec, scene, vital_blocks):
    """Score pairs of one initialization-phase forward pass."""
    regions = scene_regions(scene, spec.grid_h, spec.grid_w)
    n_text = _words(scene.background_prompt, spec.max_text_tokens)
    n_regional = [_words(l.region_prompt, spec.max_text_tokens) for l in scene.sorted_layers()]
    return sum(
        block_pair_count(spec.n_image_tokens, n_text, regions, n_regional, b in vital_blocks)
        for b in range(spec.num_blocks)
    )


def affine_r2(x, y):
    """Coefficient of determination of the least-squares line through (x, y)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = ((y - y.mean()) ** 2).sum()
    return 1.0 if ss_tot == 0 else 1.0 - (resid @ resid) / ss_tot


@dataclass(frozen=True)
class BenchRow:
    regions: int
    branch_tokens: int
    pair_count: int
    seconds: float
    overhead: float


def run_bench(make_estimator, region_counts=range(1, 7), repeats=3):
    """Time full sampling runs; ``make_estimator()`` returns an unfitted
    :class:`~layerbind.estimator.LayerBindGenerator`. A zero-region
    baseline is always measured first."""
    counts = [0, *[c for c in region_counts if c != 0]]
    rows = []
    base = None
    for n in counts:
        scene = bench_scene(n)
        est = make_estimator().fit(scene)
        spec = est.model_.spec
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            est.generate()
            best = min(best, time.perf_counter() - t0)
        if base is None:
            base = best
        regions = scene_regions(scene, spec.grid_h, spec.grid_w)
        rows.append(
            BenchRow(
                n,
                int(sum(len(r.indices) for r in regions)),
                phase1_pair_count(spec, scene, set(est.vital_blocks_)),
                best,
                0.0 if n == 0 else best / base - 1.0,
            )
        )
    return rows


def format_table(rows):
    lines = ["regions  branch_tokens  phase1_pairs  seconds  overhead"]
    for r in rows:
        lines.append(f"{r.regions:7d}  {r.branch_tokens:13d}  {r.pair_count:12d}  {r.seconds:7.3f}  {100 * r.overhead:7.1f}%")
    return "\n".join(lines)

