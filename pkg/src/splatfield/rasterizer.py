"""Front-to-back alpha compositing of colors and dense channel vectors.

Per pixel, depth-ordered contributors blend as

    out = sum_i v_i * alpha_i * prod_{j<i} (1 - alpha_j)

with alpha_i the opacity-weighted screen-space Gaussian value. The blend is
linear in the channel vectors v_i, which is what lets a coefficient map be
rendered first and decoded afterwards (see sparse_splat).

Two implementations share one contract:

  * render_dense  - tile-parallel fast path. Per tile it evaluates every
    contributor's alpha over the tile's pixels in one vectorized pass,
    forms the blend weights e_i = alpha_i * T_i with a cumulative product,
    and accumulates channel vectors Gaussian by Gaussian in depth order.
  * oracle_render - reference implementation: no tiles, global per-pixel
    sort, scalar accumulation in float64. Intentionally slow.

Both truncate contributions outside the 3-sigma ellipse (q > 9) and stop
once transmittance falls below 1e-4 (early exit; the dropped mass, and
hence the output change, is bounded by the threshold itself). All
accumulation is float64; buffers are float64 in memory and float32 on disk.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Scene
from .errors import ValidationError, ResourceLimitError
from .projection import (
    ALPHA_CLAMP,
    CUTOFF_MAHAL_SQ,
    DEFAULT_TILE_SIZE,
    Camera,
    TileBinning,
    bin_projected,
    project_scene,
)

EARLY_EXIT_T = 1e-4
DEFAULT_MAX_RENDER_ELEMENTS = 1 << 27  # ~1 GiB of float64 channels

TAG_COLOR = "color"
TAG_FEATURE = "dense-feature"
TAG_COEFFICIENT = "coefficient"
_TAGS = (TAG_COLOR, TAG_FEATURE, TAG_COEFFICIENT)


@dataclass
class Framebuffer:
    """H x W x C scalar grid with a channel-semantics tag."""

    data: np.ndarray
    tag: str

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValidationError(f"framebuffer data must be H x W x C, got {self.data.shape}")
        if self.tag not in _TAGS:
            raise ValidationError(f"unknown framebuffer tag {self.tag!r}")

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    def validate(self) -> None:
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("framebuffer entries must be finite")
        if self.tag == TAG_COEFFICIENT:
            if np.any(self.data < 0) or np.any(self.data > 1):
                raise ValidationError("coefficient channels must lie in [0, 1]")


@dataclass
class BlendState:
    """Running transmittance and channel accumulator for one pixel."""

    accumulated: np.ndarray
    transmittance: float = 1.0

    def blend(self, alpha: float, values: np.ndarray) -> None:
        self.accumulated += values * (alpha * self.transmittance)
        self.transmittance *= 1.0 - alpha


@dataclass
class RenderStats:
    """Instrumentation attached to a render when requested."""

    final_transmittance: np.ndarray  # (H, W)
    pairs_blended: int  # Gaussian-tile entries processed
    channels_per_gaussian: int  # channel slots each blended Gaussian touches
    workers: int


def blend_pixel_dense(
    contributors, pixel, *, early_exit: bool = True, width: int | None = None
) -> np.ndarray:
    """Sequential reference blend of depth-ordered (gaussian, values) pairs."""
    contributors = list(contributors)
    if not contributors:
        return np.zeros(width or 0)
    if width is None:
        width = np.asarray(contributors[0][1]).size
    state = BlendState(accumulated=np.zeros(width, dtype=np.float64))
    p = np.asarray(pixel, dtype=np.float64)
    for gauss, values in contributors:
        if early_exit and state.transmittance < EARLY_EXIT_T:
            break
        d = p - np.asarray(gauss.mean2d, dtype=np.float64)
        q = float(d @ np.asarray(gauss.inv_cov2d, dtype=np.float64) @ d)
        if q > CUTOFF_MAHAL_SQ:
            continue
        alpha = min(float(gauss.opacity) * float(np.exp(-0.5 * q)), ALPHA_CLAMP)
        state.blend(alpha, np.asarray(values, dtype=np.float64))
    return state.accumulated


def tile_blend_weights(
    binning: TileBinning, tx: int, ty: int, *, early_exit: bool = True
):
    """Blend weights e_i = alpha_i * T_i for one tile.

    Returns (rows, e, final_T, (x0, x1, y0, y1)) where rows are scene array
    rows of the tile's contributors in blend order, e is (n, P) over the
    tile's pixels in row-major order, and final_T is the per-pixel
    transmittance after the last counted contribution.
    """
    x0, x1, y0, y1 = binning.tile_pixel_bounds(tx, ty)
    npx = (x1 - x0) * (y1 - y0)
    lst = binning.tile_lists[binning.tile_index(tx, ty)]
    if lst.size == 0:
        return (
            np.zeros(0, dtype=np.int64),
            np.zeros((0, npx)),
            np.ones(npx),
            (x0, x1, y0, y1),
        )
    proj = binning.projected
    ys, xs = np.mgrid[y0:y1, x0:x1]
    px = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)  # (P, 2)

    means = proj.means2d[lst]
    inv = proj.inv_covs[lst]
    dx = px[None, :, 0] - means[:, 0, None]
    dy = px[None, :, 1] - means[:, 1, None]
    q = (
        inv[:, 0, 0, None] * dx * dx
        + 2.0 * inv[:, 0, 1, None] * dx * dy
        + inv[:, 1, 1, None] * dy * dy
    )
    alpha = proj.opacities[lst, None] * np.exp(-0.5 * q)
    np.minimum(alpha, ALPHA_CLAMP, out=alpha)
    alpha[q > CUTOFF_MAHAL_SQ] = 0.0

    n = lst.size
    trans = np.empty((n + 1, npx))
    trans[0] = 1.0
    np.cumprod(1.0 - alpha, axis=0, out=trans[1:])
    if early_exit:
        counted = trans[:-1] >= EARLY_EXIT_T  # prefix per pixel: T is non-increasing
        e = np.where(counted, alpha * trans[:-1], 0.0)
        final_t = trans[counted.sum(axis=0), np.arange(npx)]
    else:
        e = alpha * trans[:-1]
        final_t = trans[-1]
    return proj.rows[lst], e, final_t, (x0, x1, y0, y1)


def _resolve_channels(scene: Scene, channels) -> tuple[np.ndarray, str]:
    if isinstance(channels, str):
        if channels != "color":
            raise ValidationError(f"unknown channel source {channels!r}")
        return scene.colors.astype(np.float64), TAG_COLOR
    values = np.asarray(channels, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != scene.num_gaussians:
        raise ValidationError(
            f"channel array must be (num_gaussians, C), got {values.shape}"
        )
    return values, TAG_FEATURE


def check_render_budget(width: int, height: int, channels: int, max_elements: int) -> None:
    total = width * height * channels
    if total > max_elements:
        raise ResourceLimitError(
            f"render of {height}x{width}x{channels} = {total} elements exceeds "
            f"the budget of {max_elements}"
        )


def render_dense(
    scene: Scene,
    cam: Camera,
    channels="color",
    *,
    tag: str | None = None,
    tile_size: int = DEFAULT_TILE_SIZE,
    early_exit: bool = True,
    background=None,
    max_elements: int = DEFAULT_MAX_RENDER_ELEMENTS,
    workers: int = 1,
    with_stats: bool = False,
):
    """Tile-parallel dense render of per-Gaussian channel vectors.

    `channels` is either "color" or a (num_gaussians, C) array of values to
    blend. Tiles are independent work units writing disjoint framebuffer
    regions, so output is identical for any worker count.
    """
    values, inferred_tag = _resolve_channels(scene, channels)
    tag = tag or inferred_tag
    c = values.shape[1]
    check_render_budget(cam.width, cam.height, c, max_elements)

    out = np.zeros((cam.height, cam.width, c))
    final_t = np.ones((cam.height, cam.width))
    binning = bin_projected(project_scene(scene, cam), cam, tile_size)
    pairs = 0

    bg = None
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape != (c,):
            raise ValidationError(f"background must have {c} channels")

    def run_tile(t):
        ty, tx = divmod(t, binning.tiles_x)
        rows, e, tile_t, (x0, x1, y0, y1) = tile_blend_weights(
            binning, tx, ty, early_exit=early_exit
        )
        buf = np.zeros(((y1 - y0) * (x1 - x0), c))
        live = np.flatnonzero(e.max(axis=1) > 0.0) if rows.size else rows
        for i in live:
            buf += e[i][:, None] * values[rows[i]][None, :]
        out[y0:y1, x0:x1] = buf.reshape(y1 - y0, x1 - x0, c)
        final_t[y0:y1, x0:x1] = tile_t.reshape(y1 - y0, x1 - x0)
        return rows.size

    tiles = range(binning.tiles_x * binning.tiles_y)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pairs = sum(pool.map(run_tile, tiles))
    else:
        for t in tiles:
            pairs += run_tile(t)

    if bg is not None:
        out += final_t[:, :, None] * bg[None, None, :]
    fb = Framebuffer(data=out, tag=tag)
    if not with_stats:
        return fb
    return fb, RenderStats(
        final_transmittance=final_t,
        pairs_blended=pairs,
        channels_per_gaussian=c,
        workers=workers,
    )


def oracle_render(
    scene: Scene,
    cam: Camera,
    channels="color",
    *,
    tag: str | None = None,
    early_exit: bool = True,
    background=None,
) -> Framebuffer:
    """Reference renderer: global per-pixel sort, scalar float64 accumulation."""
    values, inferred_tag = _resolve_channels(scene, channels)
    tag = tag or inferred_tag
    c = values.shape[1]
    proj = project_scene(scene, cam)
    order = np.lexsort((proj.source_ids, proj.depths))

    means = proj.means2d[order]
    inv = proj.inv_covs[order]
    ops = proj.opacities[order]
    rows = proj.rows[order]
    a, b, cc = inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]

    out = np.zeros((cam.height, cam.width, c))
    bg = None
    if background is not None:
        bg = np.asarray(background, dtype=np.float64)
        if bg.shape != (c,):
            raise ValidationError(f"background must have {c} channels")

    for py in range(cam.height):
        for px in range(cam.width):
            dx = px - means[:, 0]
            dy = py - means[:, 1]
            q = a * dx * dx + 2.0 * b * dx * dy + cc * dy * dy
            acc = np.zeros(c)
            t = 1.0
            for i in np.flatnonzero(q <= CUTOFF_MAHAL_SQ):
                if early_exit and t < EARLY_EXIT_T:
                    break
                alpha = min(ops[i] * float(np.exp(-0.5 * q[i])), ALPHA_CLAMP)
                acc += values[rows[i]] * (alpha * t)
                t *= 1.0 - alpha
            if bg is not None:
                acc += t * bg
            out[py, px] = acc
    return Framebuffer(data=out, tag=tag)
