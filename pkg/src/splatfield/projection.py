"""Screen-space projection and tile binning.

A 3D Gaussian projects to a 2D screen-space Gaussian by the locally affine
approximation of the pinhole map (elliptical weighted average splatting):

    mean2d = (fx * x / z + cx,  fy * y / z + cy)          x, y, z camera-space
    cov2d  = J @ W @ cov3d @ W.T @ J.T + lowpass * I

with J the 2x3 Jacobian of the pinhole projection at the camera-space mean
and W the world-to-camera rotation. The low-pass floor (0.3 px^2 on the
diagonal) guarantees an invertible cov2d and suppresses sub-pixel aliasing.

Contribution footprints are truncated at the 3-sigma ellipse
    {d : d @ inv_cov2d @ d <= 9}
both here (tile binning, screen culling) and in the rasterizer's per-pixel
predicate, so the tiled renderer and the naive oracle see exactly the same
contributor sets. Tile overlap is decided by the exact minimum of the
Mahalanobis quadratic over the tile rectangle (tiny closed-form QP), not by
a bounding-box approximation, which makes the binning invariant testable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Scene, Gaussian, batch_covariances
from .errors import ValidationError

DEFAULT_TILE_SIZE = 16
LOWPASS_FLOOR = 0.3  # px^2 added to cov2d diagonal before inversion
CUTOFF_MAHAL_SQ = 9.0  # 3-sigma ellipse
ALPHA_CLAMP = 0.99


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world-to-camera rigid transform plus intrinsics.

    Camera space: x right, y down, z forward; a point is visible when its
    camera-space z exceeds the near plane.
    """

    rotation: np.ndarray  # (3, 3) world-to-camera rotation
    translation: np.ndarray  # (3,) world-to-camera translation
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValidationError("camera transform must be a 3x3 rotation and 3-vector")
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image size must be >= 1 pixel")
        if self.near <= 0:
            raise ValidationError("near plane must be > 0")

    @classmethod
    def look_at(
        cls,
        position,
        target,
        up=(0.0, 1.0, 0.0),
        fov_y_deg: float = 50.0,
        width: int = 64,
        height: int = 64,
        near: float = 0.01,
    ) -> "Camera":
        """Camera at `position` looking at `target`, intrinsics from vertical FOV."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        n = np.linalg.norm(forward)
        if n == 0:
            raise ValidationError("camera position and target coincide")
        z = forward / n
        right = np.cross(np.asarray(up, dtype=np.float64), z)
        rn = np.linalg.norm(right)
        if rn < 1e-12:
            raise ValidationError("up vector is parallel to the view direction")
        x = right / rn
        y = np.cross(z, x)  # points "down" in image space
        rot = np.stack([x, y, z])
        fy = (height / 2.0) / np.tan(np.radians(fov_y_deg) / 2.0)
        return cls(
            rotation=rot,
            translation=-rot @ position,
            fx=fy,
            fy=fy,
            cx=width / 2.0,
            cy=height / 2.0,
            width=width,
            height=height,
            near=near,
        )


@dataclass(frozen=True)
class CameraPose:
    """Viewer-friendly camera description: position + look-at + vertical FOV."""

    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_y_deg: float = 50.0
    width: int = 64
    height: int = 64
    near: float = 0.01

    def to_camera(self) -> "Camera":
        return Camera.look_at(
            self.position, self.look_at, self.up,
            fov_y_deg=self.fov_y_deg, width=self.width, height=self.height, near=self.near,
        )

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov_y_deg": self.fov_y_deg,
            "width": self.width,
            "height": self.height,
            "near": self.near,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        try:
            return cls(
                position=tuple(float(v) for v in d["position"]),
                look_at=tuple(float(v) for v in d["look_at"]),
                up=tuple(float(v) for v in d.get("up", (0.0, 1.0, 0.0))),
                fov_y_deg=float(d.get("fov_y_deg", 50.0)),
                width=int(d.get("width", 64)),
                height=int(d.get("height", 64)),
                near=float(d.get("near", 0.01)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad camera pose: {exc}") from exc


@dataclass(frozen=True)
class ProjectedGaussian:
    """Screen-space record consumed by the rasterizer."""

    mean2d: np.ndarray  # (2,) pixels
    inv_cov2d: np.ndarray  # (2, 2) symmetric positive definite, px^-2
    depth: float  # camera-space z
    opacity: float
    source_id: int


@dataclass
class ProjectedScene:
    """Vectorized projection output: row i describes one surviving Gaussian.

    `rows` maps each surviving record back to its scene array row, so channel
    values (colors, coefficients, features) can be gathered without copies.
    """

    means2d: np.ndarray  # (N, 2)
    inv_covs: np.ndarray  # (N, 2, 2)
    depths: np.ndarray  # (N,)
    opacities: np.ndarray  # (N,)
    source_ids: np.ndarray  # (N,) int64
    rows: np.ndarray  # (N,) int64 indices into the originating scene arrays

    @property
    def count(self) -> int:
        return int(self.means2d.shape[0])

    def record(self, i: int) -> ProjectedGaussian:
        return ProjectedGaussian(
            mean2d=self.means2d[i],
            inv_cov2d=self.inv_covs[i],
            depth=float(self.depths[i]),
            opacity=float(self.opacities[i]),
            source_id=int(self.source_ids[i]),
        )


def min_mahalanobis_sq_to_rect(
    means2d: np.ndarray,
    inv_covs: np.ndarray,
    rect_lo: np.ndarray,
    rect_hi: np.ndarray,
) -> np.ndarray:
    """Exact min of (x - mean) @ A @ (x - mean) over axis-aligned rectangles.

    Vectorized over N (means, A) pairs against N rectangles [lo, hi]. The
    minimizer is either the mean itself (inside the rectangle) or lies on one
    of the four edges, where the 1-D restriction is a clamped quadratic.
    """
    mx, my = means2d[:, 0], means2d[:, 1]
    a = inv_covs[:, 0, 0]
    b = inv_covs[:, 0, 1]
    c = inv_covs[:, 1, 1]
    lx, ly = rect_lo[:, 0], rect_lo[:, 1]
    hx, hy = rect_hi[:, 0], rect_hi[:, 1]

    def quad(dx, dy):
        return a * dx * dx + 2.0 * b * dx * dy + c * dy * dy

    best = np.full(mx.shape, np.inf)
    # vertical edges: x fixed, minimize over y (unconstrained y* = my - b/c * dx)
    for ex in (lx, hx):
        dx = ex - mx
        ys = np.clip(my - (b / c) * dx, ly, hy)
        best = np.minimum(best, quad(dx, ys - my))
    # horizontal edges: y fixed, minimize over x
    for ey in (ly, hy):
        dy = ey - my
        xs = np.clip(mx - (b / a) * dy, lx, hx)
        best = np.minimum(best, quad(xs - mx, dy))
    inside = (mx >= lx) & (mx <= hx) & (my >= ly) & (my <= hy)
    best[inside] = 0.0
    return best


def _empty_projection() -> ProjectedScene:
    return ProjectedScene(
        means2d=np.zeros((0, 2)),
        inv_covs=np.zeros((0, 2, 2)),
        depths=np.zeros(0),
        opacities=np.zeros(0),
        source_ids=np.zeros(0, dtype=np.int64),
        rows=np.zeros(0, dtype=np.int64),
    )


def project_arrays(
    positions: np.ndarray,
    rotations: np.ndarray,
    scales: np.ndarray,
    opacities: np.ndarray,
    ids: np.ndarray,
    cam: Camera,
) -> ProjectedScene:
    """Project Gaussian arrays; drop points behind the near plane or off-screen."""
    g = positions.shape[0]
    if g == 0:
        return _empty_projection()
    pos = positions.astype(np.float64)
    cam_pts = pos @ cam.rotation.T + cam.translation
    depths = cam_pts[:, 2]
    rows = np.flatnonzero(depths > cam.near)
    if rows.size == 0:
        return _empty_projection()
    cam_pts = cam_pts[rows]
    depths = depths[rows]
    x, y, z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
    means2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)

    cov3d = batch_covariances(rotations[rows], scales[rows])
    # J @ W rows, evaluated per Gaussian at the camera-space mean
    jw = np.empty((rows.size, 2, 3))
    jw[:, 0, :] = (cam.fx / z)[:, None] * cam.rotation[0][None, :] - (
        cam.fx * x / (z * z)
    )[:, None] * cam.rotation[2][None, :]
    jw[:, 1, :] = (cam.fy / z)[:, None] * cam.rotation[1][None, :] - (
        cam.fy * y / (z * z)
    )[:, None] * cam.rotation[2][None, :]
    cov2d = jw @ cov3d @ jw.transpose(0, 2, 1)
    cov2d[:, 0, 0] += LOWPASS_FLOOR
    cov2d[:, 1, 1] += LOWPASS_FLOOR

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    ok = np.isfinite(det) & (det > 0) & np.all(np.isfinite(means2d), axis=1)
    inv_covs = np.zeros_like(cov2d)
    safe_det = np.where(ok, det, 1.0)
    inv_covs[:, 0, 0] = cov2d[:, 1, 1] / safe_det
    inv_covs[:, 1, 1] = cov2d[:, 0, 0] / safe_det
    off = -cov2d[:, 0, 1] / safe_det
    inv_covs[:, 0, 1] = off
    inv_covs[:, 1, 0] = off

    # screen cull: keep only Gaussians whose 3-sigma ellipse reaches the
    # rectangle spanned by the pixel centers
    lo = np.zeros((rows.size, 2))
    hi = np.empty((rows.size, 2))
    hi[:, 0] = cam.width - 1
    hi[:, 1] = cam.height - 1
    qmin = np.full(rows.size, np.inf)
    if np.any(ok):
        qmin[ok] = min_mahalanobis_sq_to_rect(
            means2d[ok], inv_covs[ok], lo[ok], hi[ok]
        )
    keep = ok & (qmin <= CUTOFF_MAHAL_SQ)

    sel = np.flatnonzero(keep)
    rows = rows[sel]
    return ProjectedScene(
        means2d=means2d[sel],
        inv_covs=inv_covs[sel],
        depths=depths[sel],
        opacities=opacities.astype(np.float64)[rows],
        source_ids=ids[rows],
        rows=rows,
    )


def project_scene(scene: Scene, cam: Camera) -> ProjectedScene:
    """Project every Gaussian in the scene (vectorized), culling as documented."""
    return project_arrays(
        scene.positions, scene.rotations, scene.scales, scene.opacities, scene.ids, cam
    )


def project_gaussian(g: Gaussian, cam: Camera) -> ProjectedGaussian | None:
    """Project a single Gaussian; None when culled (behind near or off-screen)."""
    if not (np.all(np.isfinite(g.position)) and np.isfinite(g.opacity)):
        raise ValidationError("non-finite gaussian input")
    proj = project_arrays(
        g.position[None, :],
        g.rotation[None, :],
        g.scale[None, :],
        np.array([g.opacity], dtype=np.float32),
        np.array([g.id], dtype=np.int64),
        cam,
    )
    if proj.count == 0:
        return None
    return proj.record(0)


def eval_alpha(p: ProjectedGaussian, pixel) -> float:
    """Opacity-weighted screen-space Gaussian value, clamped to [0, 0.99]."""
    d = np.asarray(pixel, dtype=np.float64) - np.asarray(p.mean2d, dtype=np.float64)
    q = float(d @ np.asarray(p.inv_cov2d, dtype=np.float64) @ d)
    return min(float(p.opacity) * float(np.exp(-0.5 * q)), ALPHA_CLAMP)


@dataclass
class TileBinning:
    """Per-tile lists of projected Gaussians, depth-sorted then id-sorted.

    A Gaussian appears in a tile exactly when its 3-sigma screen ellipse
    overlaps the rectangle spanned by the tile's pixel centers.
    """

    tile_size: int
    tiles_x: int
    tiles_y: int
    width: int
    height: int
    projected: ProjectedScene
    tile_lists: list[np.ndarray]  # per tile, indices into `projected`, sorted

    def tile_index(self, tx: int, ty: int) -> int:
        return ty * self.tiles_x + tx

    def tile_records(self, tx: int, ty: int) -> list[ProjectedGaussian]:
        return [self.projected.record(int(i)) for i in self.tile_lists[self.tile_index(tx, ty)]]

    def tile_pixel_bounds(self, tx: int, ty: int) -> tuple[int, int, int, int]:
        """(x0, x1, y0, y1) half-open pixel ranges of a tile."""
        x0 = tx * self.tile_size
        y0 = ty * self.tile_size
        return x0, min(x0 + self.tile_size, self.width), y0, min(y0 + self.tile_size, self.height)

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization for purity checks."""
        parts = [np.int64(len(self.tile_lists)).tobytes()]
        for lst in self.tile_lists:
            parts.append(np.int64(lst.size).tobytes())
            parts.append(self.projected.source_ids[lst].tobytes())
        return b"".join(parts)


def bin_projected(
    proj: ProjectedScene, cam: Camera, tile_size: int = DEFAULT_TILE_SIZE
) -> TileBinning:
    """Bin projected Gaussians into depth-sorted tiles (array fast path)."""
    if tile_size < 1:
        raise ValidationError("tile size must be >= 1")
    tiles_x = (cam.width + tile_size - 1) // tile_size
    tiles_y = (cam.height + tile_size - 1) // tile_size
    n_tiles = tiles_x * tiles_y
    n = proj.count
    if n == 0:
        return TileBinning(
            tile_size, tiles_x, tiles_y, cam.width, cam.height, proj,
            [np.zeros(0, dtype=np.int64) for _ in range(n_tiles)],
        )

    # canonical order first so per-tile lists come out sorted by construction
    order = np.lexsort((proj.source_ids, proj.depths))
    proj = ProjectedScene(
        means2d=proj.means2d[order],
        inv_covs=proj.inv_covs[order],
        depths=proj.depths[order],
        opacities=proj.opacities[order],
        source_ids=proj.source_ids[order],
        rows=proj.rows[order],
    )

    # candidate tiles from the ellipse's axis-aligned extent (+-3 sigma)
    cov_xx = proj.inv_covs[:, 1, 1] / (
        proj.inv_covs[:, 0, 0] * proj.inv_covs[:, 1, 1] - proj.inv_covs[:, 0, 1] ** 2
    )
    cov_yy = proj.inv_covs[:, 0, 0] / (
        proj.inv_covs[:, 0, 0] * proj.inv_covs[:, 1, 1] - proj.inv_covs[:, 0, 1] ** 2
    )
    rx = 3.0 * np.sqrt(np.maximum(cov_xx, 0.0))
    ry = 3.0 * np.sqrt(np.maximum(cov_yy, 0.0))
    tx0 = np.clip(((proj.means2d[:, 0] - rx) // tile_size).astype(np.int64), 0, tiles_x - 1)
    tx1 = np.clip(((proj.means2d[:, 0] + rx) // tile_size).astype(np.int64), 0, tiles_x - 1)
    ty0 = np.clip(((proj.means2d[:, 1] - ry) // tile_size).astype(np.int64), 0, tiles_y - 1)
    ty1 = np.clip(((proj.means2d[:, 1] + ry) // tile_size).astype(np.int64), 0, tiles_y - 1)

    counts = (tx1 - tx0 + 1) * (ty1 - ty0 + 1)
    gauss_of_pair = np.repeat(np.arange(n), counts)
    # enumerate each Gaussian's candidate tile rectangle in row-major order
    offsets = np.concatenate([[0], np.cumsum(counts)])
    local = np.arange(counts.sum()) - offsets[gauss_of_pair]
    w_tiles = (tx1 - tx0 + 1)[gauss_of_pair]
    cand_tx = tx0[gauss_of_pair] + local % w_tiles
    cand_ty = ty0[gauss_of_pair] + local // w_tiles

    # exact ellipse/rectangle test on every candidate pair
    lo = np.empty((gauss_of_pair.size, 2))
    hi = np.empty_like(lo)
    lo[:, 0] = cand_tx * tile_size
    lo[:, 1] = cand_ty * tile_size
    hi[:, 0] = np.minimum(lo[:, 0] + tile_size, cam.width) - 1
    hi[:, 1] = np.minimum(lo[:, 1] + tile_size, cam.height) - 1
    qmin = min_mahalanobis_sq_to_rect(
        proj.means2d[gauss_of_pair], proj.inv_covs[gauss_of_pair], lo, hi
    )
    hit = qmin <= CUTOFF_MAHAL_SQ
    tile_of_pair = (cand_ty * tiles_x + cand_tx)[hit]
    gauss_of_pair = gauss_of_pair[hit]

    tile_lists: list[np.ndarray] = []
    sort = np.argsort(tile_of_pair, kind="stable")  # stable keeps depth order per tile
    tile_sorted = tile_of_pair[sort]
    gauss_sorted = gauss_of_pair[sort]
    bounds = np.searchsorted(tile_sorted, np.arange(n_tiles + 1))
    for t in range(n_tiles):
        tile_lists.append(gauss_sorted[bounds[t] : bounds[t + 1]])
    return TileBinning(tile_size, tiles_x, tiles_y, cam.width, cam.height, proj, tile_lists)


def bin_tiles(
    projected: list[ProjectedGaussian], cam: Camera, tile_size: int = DEFAULT_TILE_SIZE
) -> TileBinning:
    """Bin a list of projected Gaussians into depth-sorted tiles."""
    n = len(projected)
    proj = ProjectedScene(
        means2d=np.array([p.mean2d for p in projected], dtype=np.float64).reshape(n, 2),
        inv_covs=np.array([p.inv_cov2d for p in projected], dtype=np.float64).reshape(n, 2, 2),
        depths=np.array([p.depth for p in projected], dtype=np.float64),
        opacities=np.array([p.opacity for p in projected], dtype=np.float64),
        source_ids=np.array([p.source_id for p in projected], dtype=np.int64),
        rows=np.arange(n, dtype=np.int64),
    )
    return bin_projected(proj, cam, tile_size)
