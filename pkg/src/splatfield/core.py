"""Domain types and the codebook/coefficient math shared by every other module.

A scene point is an anisotropic 3D Gaussian. Its covariance is never stored
directly; it is derived from a unit quaternion and a per-axis scale as

    cov = R @ S @ S.T @ R.T

which keeps it symmetric positive definite by construction. Semantics are
attached per point as a top-K sparse simplex vector over a global codebook of
L basis vectors per semantic level: the point's feature is the convex
combination of its K referenced atoms.

All value types here are immutable after construction and safe to share
across parallel workers. Array-heavy scenes use the struct-of-arrays `Scene`
container; `Gaussian` is the per-point value object view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError

QUAT_NORM_TOL = 1e-6
SIMPLEX_SUM_TOL = 1e-6


def _as_f32(a, shape, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float32)
    if arr.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: non-finite entries")
    return arr


@dataclass(frozen=True)
class SceneConfig:
    """Dimensions shared by every Gaussian in a scene."""

    num_levels: int = 3
    L: int = 64
    K: int = 4
    D: int = 512

    def __post_init__(self):
        if self.K < 1 or self.K > self.L:
            raise ValidationError(f"require 1 <= K <= L, got K={self.K}, L={self.L}")
        if self.num_levels < 1:
            raise ValidationError("num_levels must be >= 1")
        if self.D < 1:
            raise ValidationError("D must be >= 1")


@dataclass(frozen=True)
class SparseCoefficients:
    """Top-K representation of an L-dimensional simplex vector.

    Exactly K entries are stored (values may be zero after extreme softmax
    saturation); indices are strictly increasing so equality and
    serialization are canonical.
    """

    indices: np.ndarray  # (K,) uint16, strictly increasing, < L
    values: np.ndarray  # (K,) float32, >= 0, summing to 1

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.uint16)
        val = np.asarray(self.values, dtype=np.float32)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)
        if idx.ndim != 1 or val.shape != idx.shape:
            raise ValidationError("indices and values must be 1-D arrays of equal length")
        if idx.size == 0:
            raise ValidationError("at least one stored entry is required")
        if idx.size > 1 and not np.all(idx[1:] > idx[:-1]):
            raise ValidationError("indices must be strictly increasing")
        if np.any(val < 0):
            raise ValidationError("values must be non-negative")
        s = float(val.sum(dtype=np.float64))
        if abs(s - 1.0) > SIMPLEX_SUM_TOL:
            raise ValidationError(f"values must sum to 1 +- {SIMPLEX_SUM_TOL}, got {s}")

    @property
    def k(self) -> int:
        return int(self.indices.size)

    def validate_against(self, L: int) -> None:
        if int(self.indices.max()) >= L:
            raise ValidationError(
                f"coefficient index {int(self.indices.max())} >= codebook size {L}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseCoefficients):
            return NotImplemented
        return bool(
            np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Codebook:
    """L global basis vectors of dimension D for a single semantic level."""

    atoms: np.ndarray  # (L, D) float32
    level: int = 0

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float32)
        object.__setattr__(self, "atoms", atoms)
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise ValidationError(f"atoms must be a non-empty 2-D matrix, got {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("codebook atoms must be finite")
        if self.level < 0:
            raise ValidationError("level must be >= 0")

    @property
    def L(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def D(self) -> int:
        return int(self.atoms.shape[1])


@dataclass(frozen=True)
class Gaussian:
    """One scene point: geometry, appearance, and per-level sparse semantics."""

    position: np.ndarray  # (3,) world units
    rotation: np.ndarray  # (4,) unit quaternion, scalar first (w, x, y, z)
    scale: np.ndarray  # (3,) per-axis standard deviation, > 0
    opacity: float  # in [0, 1]
    color: np.ndarray  # (3,) in [0, 1], degree-0 color only
    coeffs: tuple[SparseCoefficients, ...]  # one per semantic level
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", _as_f32(self.position, (3,), "position"))
        object.__setattr__(self, "rotation", _as_f32(self.rotation, (4,), "rotation"))
        object.__setattr__(self, "scale", _as_f32(self.scale, (3,), "scale"))
        object.__setattr__(self, "color", _as_f32(self.color, (3,), "color"))
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        n = float(np.linalg.norm(np.asarray(self.rotation, dtype=np.float64)))
        if abs(n - 1.0) > QUAT_NORM_TOL:
            raise ValidationError(f"quaternion norm must be 1 +- {QUAT_NORM_TOL}, got {n}")
        if np.any(self.scale <= 0):
            raise ValidationError("scale components must be > 0")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValidationError(f"opacity must be in [0, 1], got {self.opacity}")


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a scalar-first unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def build_covariance(rotation, scale) -> np.ndarray:
    """World-space covariance R @ S @ S.T @ R.T of one Gaussian.

    Returns a symmetric positive definite 3x3 (symmetrized exactly so the
    equality cov == cov.T holds bitwise).
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scale = np.asarray(scale, dtype=np.float64)
    if rotation.shape != (4,) or scale.shape != (3,):
        raise ValidationError("rotation must be a quaternion, scale a 3-vector")
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scale))):
        raise ValidationError("non-finite rotation or scale")
    n = float(np.linalg.norm(rotation))
    if abs(n - 1.0) > QUAT_NORM_TOL:
        raise ValidationError(f"quaternion norm must be 1 +- {QUAT_NORM_TOL}, got {n}")
    if np.any(scale <= 0):
        raise ValidationError("scale components must be > 0")
    m = quaternion_to_matrix(rotation) * scale[None, :]  # R @ S
    cov = m @ m.T
    return (cov + cov.T) * 0.5


def batch_covariances(rotations: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """(G, 3, 3) covariances for (G, 4) quaternions and (G, 3) scales."""
    q = np.asarray(rotations, dtype=np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y * y + z * z)
    rot[:, 0, 1] = 2 * (x * y - w * z)
    rot[:, 0, 2] = 2 * (x * z + w * y)
    rot[:, 1, 0] = 2 * (x * y + w * z)
    rot[:, 1, 1] = 1 - 2 * (x * x + z * z)
    rot[:, 1, 2] = 2 * (y * z - w * x)
    rot[:, 2, 0] = 2 * (x * z - w * y)
    rot[:, 2, 1] = 2 * (y * z + w * x)
    rot[:, 2, 2] = 1 - 2 * (x * x + y * y)
    m = rot * np.asarray(scales, dtype=np.float64)[:, None, :]
    cov = m @ m.transpose(0, 2, 1)
    return (cov + cov.transpose(0, 2, 1)) * 0.5


def reconstruct_feature(coeffs: SparseCoefficients, codebook: Codebook) -> np.ndarray:
    """Feature vector sum(w_l * atom_l) over the K stored entries (float64)."""
    coeffs.validate_against(codebook.L)
    atoms = codebook.atoms[coeffs.indices.astype(np.int64)].astype(np.float64)
    return coeffs.values.astype(np.float64) @ atoms


def densify(coeffs: SparseCoefficients, L: int) -> np.ndarray:
    """Expand to a dense L-vector with the K stored values at their indices."""
    coeffs.validate_against(L)
    dense = np.zeros(L, dtype=np.float64)
    dense[coeffs.indices.astype(np.int64)] = coeffs.values.astype(np.float64)
    return dense


def top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken by lower index, sorted ascending."""
    values = np.asarray(values)
    if not 1 <= k <= values.size:
        raise ValidationError(f"require 1 <= k <= {values.size}, got {k}")
    # stable sort on -values keeps lower indices first among equal entries
    order = np.argsort(-values, kind="stable")[:k]
    return np.sort(order)


def compact(dense, k: int | None = None) -> SparseCoefficients:
    """Inverse of densify: keep the top-k entries (ties to lower index).

    With k omitted, keeps exactly the nonzero entries.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 1:
        raise ValidationError("dense coefficient vector must be 1-D")
    if k is None:
        idx = np.flatnonzero(dense)
        if idx.size == 0:
            raise ValidationError("cannot compact an all-zero vector without k")
    else:
        idx = top_k_indices(dense, k)
    return SparseCoefficients(
        indices=idx.astype(np.uint16), values=dense[idx].astype(np.float32)
    )


@dataclass
class Scene:
    """Struct-of-arrays container for a full Gaussian scene plus its codebooks.

    Row i of every array belongs to the Gaussian with ids[i]; ids are unique
    but need not be contiguous in memory order (renders canonicalize by
    depth then id, so array order never affects output).
    """

    positions: np.ndarray  # (G, 3) float32
    rotations: np.ndarray  # (G, 4) float32
    scales: np.ndarray  # (G, 3) float32
    opacities: np.ndarray  # (G,) float32
    colors: np.ndarray  # (G, 3) float32
    coeff_indices: np.ndarray  # (num_levels, G, K) uint16
    coeff_values: np.ndarray  # (num_levels, G, K) float32
    codebooks: tuple[Codebook, ...]
    config: SceneConfig
    ids: np.ndarray = field(default=None)  # (G,) int64, unique

    def __post_init__(self):
        if self.ids is None:
            self.ids = np.arange(self.num_gaussians, dtype=np.int64)
        self.codebooks = tuple(self.codebooks)

    @property
    def num_gaussians(self) -> int:
        return int(self.positions.shape[0])

    def validate(self) -> None:
        g = self.num_gaussians
        cfg = self.config
        shapes = {
            "positions": (self.positions, (g, 3)),
            "rotations": (self.rotations, (g, 4)),
            "scales": (self.scales, (g, 3)),
            "opacities": (self.opacities, (g,)),
            "colors": (self.colors, (g, 3)),
            "coeff_indices": (self.coeff_indices, (cfg.num_levels, g, cfg.K)),
            "coeff_values": (self.coeff_values, (cfg.num_levels, g, cfg.K)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")
        for name in ("positions", "rotations", "scales", "opacities", "colors", "coeff_values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name}: non-finite entries")
        if len(self.codebooks) != cfg.num_levels:
            raise ValidationError("one codebook per semantic level is required")
        for cb in self.codebooks:
            if cb.L != cfg.L or cb.D != cfg.D:
                raise ValidationError(
                    f"codebook {cb.atoms.shape} does not match config L={cfg.L}, D={cfg.D}"
                )
        if g == 0:
            return
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
            raise ValidationError("all quaternions must be unit norm")
        if np.any(self.scales <= 0):
            raise ValidationError("all scales must be > 0")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValidationError("opacities must be in [0, 1]")
        if np.any(self.coeff_indices >= cfg.L):
            raise ValidationError("coefficient index >= L")
        if cfg.K > 1 and not np.all(
            self.coeff_indices[:, :, 1:] > self.coeff_indices[:, :, :-1]
        ):
            raise ValidationError("coefficient indices must be strictly increasing")
        if np.any(self.coeff_values < 0):
            raise ValidationError("coefficient values must be >= 0")
        sums = self.coeff_values.sum(axis=2, dtype=np.float64)
        if np.any(np.abs(sums - 1.0) > SIMPLEX_SUM_TOL):
            raise ValidationError("coefficient values must sum to 1 per level")
        if np.unique(self.ids).size != g:
            raise ValidationError("gaussian ids must be unique")

    def gaussian(self, i: int) -> Gaussian:
        """Value-object view of array row i."""
        coeffs = tuple(
            SparseCoefficients(self.coeff_indices[lv, i], self.coeff_values[lv, i])
            for lv in range(self.config.num_levels)
        )
        return Gaussian(
            position=self.positions[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color=self.colors[i],
            coeffs=coeffs,
            id=int(self.ids[i]),
        )

    @classmethod
    def from_gaussians(
        cls,
        gaussians: Sequence[Gaussian],
        codebooks: Sequence[Codebook],
        config: SceneConfig,
    ) -> "Scene":
        g = len(gaussians)
        scene = cls(
            positions=np.array([p.position for p in gaussians], dtype=np.float32).reshape(g, 3),
            rotations=np.array([p.rotation for p in gaussians], dtype=np.float32).reshape(g, 4),
            scales=np.array([p.scale for p in gaussians], dtype=np.float32).reshape(g, 3),
            opacities=np.array([p.opacity for p in gaussians], dtype=np.float32).reshape(g),
            colors=np.array([p.color for p in gaussians], dtype=np.float32).reshape(g, 3),
            coeff_indices=np.array(
                [[p.coeffs[lv].indices for p in gaussians] for lv in range(config.num_levels)],
                dtype=np.uint16,
            ).reshape(config.num_levels, g, config.K),
            coeff_values=np.array(
                [[p.coeffs[lv].values for p in gaussians] for lv in range(config.num_levels)],
                dtype=np.float32,
            ).reshape(config.num_levels, g, config.K),
            codebooks=tuple(codebooks),
            config=config,
            ids=np.array([p.id for p in gaussians], dtype=np.int64).reshape(g),
        )
        scene.validate()
        return scene

    def permuted(self, order: np.ndarray) -> "Scene":
        """Scene with rows reordered (ids travel with their rows)."""
        return Scene(
            positions=self.positions[order],
            rotations=self.rotations[order],
            scales=self.scales[order],
            opacities=self.opacities[order],
            colors=self.colors[order],
            coeff_indices=self.coeff_indices[:, order],
            coeff_values=self.coeff_values[:, order],
            codebooks=self.codebooks,
            config=self.config,
            ids=self.ids[order],
        )

    def reconstructed_features(self, level: int) -> np.ndarray:
        """(G, D) float64 per-Gaussian features w @ atoms for one level."""
        atoms = self.codebooks[level].atoms.astype(np.float64)
        idx = self.coeff_indices[level].astype(np.int64)  # (G, K)
        vals = self.coeff_values[level].astype(np.float64)  # (G, K)
        return np.einsum("gk,gkd->gd", vals, atoms[idx])

    def densified_coefficients(self, level: int) -> np.ndarray:
        """(G, L) float64 dense coefficient rows for one level."""
        g, k = self.coeff_values[level].shape
        dense = np.zeros((g, self.config.L), dtype=np.float64)
        rows = np.repeat(np.arange(g), k)
        dense[rows, self.coeff_indices[level].astype(np.int64).ravel()] = self.coeff_values[
            level
        ].astype(np.float64).ravel()
        return dense
