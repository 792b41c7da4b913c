"""Sparse coefficient splatting: L-channel maps at K-channel blend cost.

Every Gaussian stores only K nonzero simplex coefficients per semantic
level, so the per-pixel accumulator

    W[j] += w_{i,j} * alpha_i * prod_{m<i} (1 - alpha_m)

only has to touch each Gaussian's K stored indices instead of all L
channels. Because blending is linear in the channel values,

    rendered(W) @ codebook  ==  rendered(per-Gaussian w @ codebook)

so the expensive D-dimensional feature map is recovered from the cheap
coefficient map by one matrix product per level (the decode stage). All
semantic levels are splatted in a single fused pass: with K stored entries
per level, a Gaussian touches exactly num_levels * K channels.

The sparse path reuses the rasterizer's blend weights and accumulates the
very same float64 products as a dense render of the densified coefficients,
Gaussian by Gaussian in the same canonical order, which is what the
sparse/dense equivalence tests pin down.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Scene
from .errors import ValidationError
from .projection import DEFAULT_TILE_SIZE, Camera, bin_projected, project_scene
from .query import QueryEmbedding, RelevancyMap, localize, mean_filter, relevancy_map, select_level
from .rasterizer import (
    DEFAULT_MAX_RENDER_ELEMENTS,
    TAG_COEFFICIENT,
    Framebuffer,
    RenderStats,
    check_render_budget,
    tile_blend_weights,
)


@dataclass
class CoefficientMap:
    """Rendered sparse-coefficient accumulator for one or more levels.

    Channel block b of `data` holds the L coefficient channels of
    `levels[b]`; per pixel and per level the channel sum is the blended
    opacity mass (at most 1).
    """

    data: np.ndarray  # (H, W, len(levels) * L) float64
    L: int
    K: int
    levels: tuple[int, ...]  # semantic level of each channel block

    def __post_init__(self):
        self.levels = tuple(self.levels)
        if self.data.ndim != 3 or self.data.shape[2] != len(self.levels) * self.L:
            raise ValidationError(
                f"coefficient map shape {self.data.shape} does not match "
                f"{len(self.levels)} level(s) of {self.L} channels"
            )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level_view(self, level: int) -> np.ndarray:
        """(H, W, L) view of one semantic level's channel block."""
        b = self.levels.index(level)
        return self.data[:, :, b * self.L : (b + 1) * self.L]

    def as_framebuffer(self) -> Framebuffer:
        return Framebuffer(data=self.data, tag=TAG_COEFFICIENT)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("coefficient map must be finite")
        if np.any(self.data < 0) or np.any(self.data > 1):
            raise ValidationError("coefficient channels must lie in [0, 1]")
        for level in self.levels:
            sums = self.level_view(level).sum(axis=2)
            if np.any(sums > 1.0 + 1e-5):
                raise ValidationError("per-level channel sum exceeds 1")


@dataclass
class FeatureMapSet:
    """Per-level H x W x D feature buffers."""

    maps: tuple[np.ndarray, ...]
    levels: tuple[int, ...]
    provenance: str  # "decoded-from-coefficients" | "dense-rendered"

    def level_map(self, level: int) -> np.ndarray:
        return self.maps[self.levels.index(level)]


def _splat_levels(
    scene: Scene,
    cam: Camera,
    levels,
    *,
    tile_size: int = DEFAULT_TILE_SIZE,
    early_exit: bool = True,
    max_elements: int = DEFAULT_MAX_RENDER_ELEMENTS,
    workers: int = 1,
    with_stats: bool = False,
):
    levels = tuple(int(lv) for lv in levels)
    cfg = scene.config
    for lv in levels:
        if not 0 <= lv < cfg.num_levels:
            raise ValidationError(f"level {lv} out of range for {cfg.num_levels} levels")
    if np.any(scene.coeff_indices >= cfg.L):
        raise ValidationError("coefficient index >= L")
    c = len(levels) * cfg.L
    check_render_budget(cam.width, cam.height, c, max_elements)

    # per-Gaussian scatter plan: the K stored columns of every requested
    # level, offset into that level's channel block
    cat_idx = np.concatenate(
        [scene.coeff_indices[lv].astype(np.int64) + b * cfg.L for b, lv in enumerate(levels)],
        axis=1,
    )  # (G, len(levels) * K)
    cat_vals = np.concatenate(
        [scene.coeff_values[lv].astype(np.float64) for lv in levels], axis=1
    )

    out = np.zeros((cam.height, cam.width, c))
    final_t = np.ones((cam.height, cam.width))
    binning = bin_projected(project_scene(scene, cam), cam, tile_size)

    def run_tile(t):
        ty, tx = divmod(t, binning.tiles_x)
        rows, e, tile_t, (x0, x1, y0, y1) = tile_blend_weights(
            binning, tx, ty, early_exit=early_exit
        )
        buf = np.zeros(((y1 - y0) * (x1 - x0), c))
        live = np.flatnonzero(e.max(axis=1) > 0.0) if rows.size else rows
        for i in live:
            row = rows[i]
            buf[:, cat_idx[row]] += e[i][:, None] * cat_vals[row][None, :]
        out[y0:y1, x0:x1] = buf.reshape(y1 - y0, x1 - x0, c)
        final_t[y0:y1, x0:x1] = tile_t.reshape(y1 - y0, x1 - x0)
        return rows.size

    tiles = range(binning.tiles_x * binning.tiles_y)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = sum(pool.map(run_tile, tiles))
    else:
        pairs = 0
        for t in tiles:
            pairs += run_tile(t)

    cmap = CoefficientMap(data=out, L=cfg.L, K=cfg.K, levels=levels)
    if not with_stats:
        return cmap
    stats = RenderStats(
        final_transmittance=final_t,
        pairs_blended=pairs,
        channels_per_gaussian=int(cat_idx.shape[1]),
        workers=workers,
    )
    return cmap, stats


def splat_sparse(scene: Scene, cam: Camera, level: int, **kwargs):
    """Render one level's L-dim coefficient map, touching K channels per Gaussian."""
    return _splat_levels(scene, cam, [level], **kwargs)


def splat_multilevel(scene: Scene, cam: Camera, **kwargs):
    """Render every configured level's coefficients in one fused pass."""
    return _splat_levels(scene, cam, range(scene.config.num_levels), **kwargs)


def decode(cmap: CoefficientMap, codebooks) -> FeatureMapSet:
    """Coefficient map -> feature maps by one matrix product per level."""
    codebooks = list(codebooks)
    maps = []
    for b, level in enumerate(cmap.levels):
        cb = codebooks[level]
        if cb.L != cmap.L:
            raise ValidationError(
                f"codebook L={cb.L} does not match coefficient map L={cmap.L}"
            )
        w = cmap.level_view(level)
        h, wd, _ = w.shape
        atoms = cb.atoms.astype(np.float64)
        maps.append((w.reshape(-1, cmap.L) @ atoms).reshape(h, wd, cb.D))
    return FeatureMapSet(
        maps=tuple(maps), levels=cmap.levels, provenance="decoded-from-coefficients"
    )


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock milliseconds of the three query stages."""

    render_ms: float
    decode_ms: float
    post_ms: float

    @property
    def total_ms(self) -> float:
        return self.render_ms + self.decode_ms + self.post_ms

    def as_dict(self) -> dict:
        return {"render_ms": self.render_ms, "decode_ms": self.decode_ms, "post_ms": self.post_ms}


TIMING_CSV_HEADER = "scene_id,H,W,L,K,levels,render_ms,decode_ms,post_ms"


def timing_csv_row(scene_id: str, h: int, w: int, l: int, k: int, levels: int,
                   timings: StageTimings) -> str:
    return (
        f"{scene_id},{h},{w},{l},{k},{levels},"
        f"{timings.render_ms:.6f},{timings.decode_ms:.6f},{timings.post_ms:.6f}"
    )


@dataclass
class QueryResult:
    """Everything the post-processing stage produced for one query."""

    query: str
    level_maps: tuple[RelevancyMap, ...]  # filtered, one per level
    level: int
    chosen: RelevancyMap
    point: tuple[int, int]
    timings: StageTimings | None
    coefficient_map: CoefficientMap
    feature_maps: FeatureMapSet


def query_pipeline(
    scene: Scene,
    cam: Camera,
    query: QueryEmbedding,
    canonicals,
    *,
    window: int = 11,
    level: int | None = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    workers: int = 1,
    instrument: bool = True,
) -> QueryResult:
    """Full query: fused multilevel splat -> decode -> post-process.

    With `level` given, selection is skipped and that level is scored; the
    default picks the level with the strongest filtered response. Timing
    instrumentation never changes stage outputs.
    """
    clock = time.perf_counter if instrument else (lambda: 0.0)

    t0 = clock()
    cmap = splat_multilevel(scene, cam, tile_size=tile_size, workers=workers)
    t1 = clock()
    features = decode(cmap, scene.codebooks)
    t2 = clock()
    maps = []
    for b, lv in enumerate(cmap.levels):
        raw = relevancy_map(features.maps[b], query, canonicals, level=lv)
        maps.append(mean_filter(raw, window))
    if level is None:
        chosen_level, chosen = select_level(maps)
    else:
        if level not in cmap.levels:
            raise ValidationError(f"level {level} was not rendered")
        chosen_level, chosen = level, maps[cmap.levels.index(level)]
    point = localize(chosen)
    t3 = clock()

    timings = None
    if instrument:
        timings = StageTimings(
            render_ms=(t1 - t0) * 1e3,
            decode_ms=(t2 - t1) * 1e3,
            post_ms=(t3 - t2) * 1e3,
        )
    return QueryResult(
        query=query.name,
        level_maps=tuple(maps),
        level=chosen_level,
        chosen=chosen,
        point=point,
        timings=timings,
        coefficient_map=cmap,
        feature_maps=features,
    )
