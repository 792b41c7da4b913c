import numpy as np
import pytest

from splatfield.core import Codebook, Scene, SceneConfig
from splatfield.projection import Camera


def random_scene(
    rng,
    num_gaussians=50,
    num_levels=1,
    L=16,
    K=4,
    D=8,
    image_extent=1.0,
    opacity_range=(0.2, 0.95),
) -> Scene:
    """A generic random scene in front of the default test camera."""
    cfg = SceneConfig(num_levels=num_levels, L=L, K=K, D=D)
    g = num_gaussians
    quats = rng.standard_normal((g, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    idx = np.zeros((num_levels, g, K), dtype=np.uint16)
    val = np.zeros((num_levels, g, K), dtype=np.float32)
    for lv in range(num_levels):
        for i in range(g):
            cols = np.sort(rng.choice(L, size=K, replace=False)).astype(np.uint16)
            raw = rng.random(K).astype(np.float64) + 1e-3
            idx[lv, i] = cols
            val[lv, i] = (raw / raw.sum()).astype(np.float32)

    codebooks = tuple(
        Codebook(rng.standard_normal((L, D)).astype(np.float32), level=lv)
        for lv in range(num_levels)
    )
    scene = Scene(
        positions=(rng.uniform(-image_extent, image_extent, (g, 3))
                   * np.array([1.0, 1.0, 0.4])).astype(np.float32),
        rotations=quats.astype(np.float32),
        scales=rng.uniform(0.03, 0.15, (g, 3)).astype(np.float32),
        opacities=rng.uniform(*opacity_range, g).astype(np.float32),
        colors=rng.uniform(0, 1, (g, 3)).astype(np.float32),
        coeff_indices=idx,
        coeff_values=val,
        codebooks=codebooks,
        config=cfg,
    )
    scene.validate()
    return scene


def make_camera(width=32, height=32, fov=45.0) -> Camera:
    return Camera.look_at(
        position=(0.0, 0.0, -3.0),
        target=(0.0, 0.0, 0.0),
        fov_y_deg=fov,
        width=width,
        height=height,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
