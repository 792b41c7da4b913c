"""Learning the sparse coefficient field and the global codebooks.

Per Gaussian and level we keep an unconstrained L-vector of logits. The
stored coefficients are softmax(logits) restricted to its top-K entries and
renormalized to sum to one. Geometry (position, rotation, scale, opacity)
stays frozen throughout, which makes the rendered coefficient map *linear*
in the per-Gaussian coefficients: the blend weights e_i = alpha_i * T_i are
constants of the optimization. The backward pass is therefore

    dL/dW        residual of the decoded map, through one matmul
    dL/dw_i      = sum_v e_i(v) * dL/dW(v, .)      (transpose of the splat)
    dL/dlogits   through renormalized top-K softmax, with the top-K
                 selection treated as fixed within a step
    dL/datoms    = W^T @ dL/dF                      (decode is linear)

Top-K membership may still change *between* steps as logits move. The loss
is mean squared error of decoded per-pixel features against target maps,
optionally plus a (1 - cosine) term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Scene, SparseCoefficients
from .errors import TrainingError, ValidationError
from .projection import Camera, TileBinning, bin_projected, project_scene
from .rasterizer import tile_blend_weights

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 100


@dataclass
class TrainingBatch:
    """One camera's supervision: per-level target feature maps."""

    camera: Camera
    targets: np.ndarray  # (num_levels, H, W, D)
    mask: np.ndarray | None = None  # (H, W) bool, True where supervised

    def validate(self, num_levels: int, d: int) -> None:
        t = np.asarray(self.targets)
        if t.ndim != 4 or t.shape[0] != num_levels or t.shape[3] != d:
            raise ValidationError(
                f"targets must be ({num_levels}, H, W, {d}), got {t.shape}"
            )
        if (t.shape[1], t.shape[2]) != (self.camera.height, self.camera.width):
            raise ValidationError("target maps must match the camera's image size")
        if self.mask is not None and self.mask.shape != t.shape[1:3]:
            raise ValidationError("mask must be H x W")


@dataclass
class TrainConfig:
    lr_logits: float = 5e-3
    lr_codebook: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    cosine_weight: float = 0.0  # weight of the optional (1 - cos) term
    tile_size: int = 16


@dataclass
class TrainableField:
    """The optimized parameters: per-Gaussian logits and per-level codebooks."""

    logits: np.ndarray  # (num_levels, G, L) float64
    codebooks: np.ndarray  # (num_levels, L, D) float64

    def copy(self) -> "TrainableField":
        return TrainableField(self.logits.copy(), self.codebooks.copy())


@dataclass
class OptimState:
    """Adam-style first/second moment accumulators."""

    lr_logits: float
    lr_codebook: float
    beta1: float
    beta2: float
    eps: float
    iteration: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, field_: TrainableField, grads: "Gradients") -> None:
        self.iteration += 1
        t = self.iteration
        for name, param, grad, lr in (
            ("logits", field_.logits, grads.logits, self.lr_logits),
            ("codebooks", field_.codebooks, grads.codebooks, self.lr_codebook),
        ):
            if name not in self.m:
                self.m[name] = np.zeros_like(param)
                self.v[name] = np.zeros_like(param)
            m = self.m[name]
            v = self.v[name]
            m += (1 - self.beta1) * (grad - m)
            v += (1 - self.beta2) * (grad * grad - v)
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class Gradients:
    logits: np.ndarray
    codebooks: np.ndarray

    def norm(self) -> float:
        return float(np.sqrt((self.logits**2).sum() + (self.codebooks**2).sum()))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def topk_rows(p: np.ndarray, k: int) -> np.ndarray:
    """Per-row top-k index sets (ties to lower index), each sorted ascending."""
    order = np.argsort(-p, axis=-1, kind="stable")[..., :k]
    return np.sort(order, axis=-1)


def normalize_batch(logits: np.ndarray, k: int):
    """softmax -> top-k -> renormalize for a (G, L) batch of logit rows.

    Returns (indices (G, k) int64 ascending, values (G, k) float64, p (G, L)).
    """
    p = softmax(np.asarray(logits, dtype=np.float64))
    idx = topk_rows(p, k)
    kept = np.take_along_axis(p, idx, axis=-1)
    vals = kept / kept.sum(axis=-1, keepdims=True)
    return idx, vals, p

def normalize_coefficients(logits, k: int) -> SparseCoefficients:
    """Softmax the logits, keep the top-k entries, renormalize to a simplex."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ValidationError("logits must be a 1-D vector")
    if not np.all(np.isfinite(logits)):
        raise ValidationError("logits must be finite")
    idx, vals, _ = normalize_batch(logits[None, :], k)
    return SparseCoefficients(
        indices=idx[0].astype(np.uint16), values=vals[0].astype(np.float32)
    )


@dataclass
class _TileCapture:
    rows: np.ndarray  # (n,) scene rows in blend order
    e: np.ndarray  # (n, P) blend weights
    pixels: np.ndarray  # (P,) linear pixel indices into the H*W image


@dataclass
class ForwardCache:
    field: TrainableField
    scene: Scene
    batch: TrainingBatch
    config: TrainConfig
    n_valid: int
    idx: np.ndarray  # (num_levels, G, K) survivor indices
    vals: np.ndarray  # (num_levels, G, K) renormalized survivor values
    p: np.ndarray  # (num_levels, G, L) softmax probabilities
    coeff_maps: np.ndarray  # (num_levels, H, W, L)
    residuals: np.ndarray  # (num_levels, H, W, D) masked (F - target)
    feature_maps: np.ndarray  # (num_levels, H, W, D)
    captures: list  # per tile: _TileCapture (shared across levels)


def _binning_for(scene: Scene, cam: Camera, tile_size: int) -> TileBinning:
    return bin_projected(project_scene(scene, cam), cam, tile_size)


def _splat_captured(binning: TileBinning, idx, vals, L: int, height: int, width: int):
    """Coefficient map plus the per-tile blend weights needed by backward."""
    out = np.zeros((height, width, L))
    captures = []
    pix_index = np.arange(height * width).reshape(height, width)
    for t in range(binning.tiles_x * binning.tiles_y):
        ty, tx = divmod(t, binning.tiles_x)
        rows, e, _, (x0, x1, y0, y1) = tile_blend_weights(binning, tx, ty)
        buf = np.zeros(((y1 - y0) * (x1 - x0), L))
        for i in range(rows.size):
            row = rows[i]
            buf[:, idx[row]] += e[i][:, None] * vals[row][None, :]
        out[y0:y1, x0:x1] = buf.reshape(y1 - y0, x1 - x0, L)
        captures.append(
            _TileCapture(rows=rows, e=e, pixels=pix_index[y0:y1, x0:x1].ravel())
        )
    return out, captures


def forward_loss(
    field_: TrainableField,
    scene: Scene,
    batch: TrainingBatch,
    config: TrainConfig | None = None,
    *,
    binning: TileBinning | None = None,
    iteration: int | None = None,
) -> tuple[float, ForwardCache]:
    """Loss of the decoded per-pixel features against the batch targets."""
    config = config or TrainConfig()
    cfg = scene.config
    batch.validate(cfg.num_levels, cfg.D)
    cam = batch.camera
    if binning is None:
        binning = _binning_for(scene, cam, config.tile_size)

    if batch.mask is not None:
        n_valid = int(batch.mask.sum())
        if n_valid == 0:
            raise ValidationError("validity mask excludes every pixel")
        mask3 = batch.mask[:, :, None]
    else:
        n_valid = cam.height * cam.width
        mask3 = None

    levels = cfg.num_levels
    idx = np.empty((levels, scene.num_gaussians, cfg.K), dtype=np.int64)
    vals = np.empty((levels, scene.num_gaussians, cfg.K))
    p = np.empty((levels, scene.num_gaussians, cfg.L))
    coeff_maps = np.empty((levels, cam.height, cam.width, cfg.L))
    feats = np.empty((levels, cam.height, cam.width, cfg.D))
    residuals = np.empty_like(feats)
    captures = None
    targets = np.asarray(batch.targets, dtype=np.float64)

    loss = 0.0
    for lv in range(levels):
        idx[lv], vals[lv], p[lv] = normalize_batch(field_.logits[lv], cfg.K)
        w_map, caps = _splat_captured(
            binning, idx[lv], vals[lv], cfg.L, cam.height, cam.width
        )
        if captures is None:
            captures = caps  # blend weights are level-independent
        coeff_maps[lv] = w_map
        feats[lv] = (
            w_map.reshape(-1, cfg.L) @ field_.codebooks[lv]
        ).reshape(cam.height, cam.width, cfg.D)
        r = feats[lv] - targets[lv]
        if mask3 is not None:
            r = r * mask3
        residuals[lv] = r
        loss += float((r * r).sum())
        if config.cosine_weight:
            loss += config.cosine_weight * float(
                _cosine_loss_sum(feats[lv], targets[lv], mask3)
            )
    loss /= levels * n_valid

    if not np.isfinite(loss):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise TrainingError(f"non-finite loss{where}")
    return loss, ForwardCache(
        field=field_,
        scene=scene,
        batch=batch,
        config=config,
        n_valid=n_valid,
        idx=idx,
        vals=vals,
        p=p,
        coeff_maps=coeff_maps,
        residuals=residuals,
        feature_maps=feats,
        captures=captures,
    )


_COS_EPS = 1e-12


def _cosine_loss_sum(f, t, mask3):
    fn = np.linalg.norm(f, axis=-1)
    tn = np.linalg.norm(t, axis=-1)
    cos = (f * t).sum(axis=-1) / np.maximum(fn * tn, _COS_EPS)
    out = 1.0 - cos
    if mask3 is not None:
        out = out * mask3[:, :, 0]
    return out.sum()


def _cosine_grad(f, t, mask3):
    fn = np.linalg.norm(f, axis=-1, keepdims=True)
    tn = np.linalg.norm(t, axis=-1, keepdims=True)
    denom = np.maximum(fn * tn, _COS_EPS)
    cos = (f * t).sum(axis=-1, keepdims=True) / denom
    grad = -(t / denom - cos * f / np.maximum(fn * fn, _COS_EPS))
    if mask3 is not None:
        grad = grad * mask3
    return grad


def backward(cache: ForwardCache) -> Gradients:
    """Analytic gradients for the logits and codebook atoms."""
    cfg = cache.scene.config
    g = cache.scene.num_gaussians
    scale = 1.0 / (cfg.num_levels * cache.n_valid)
    mask3 = None if cache.batch.mask is None else cache.batch.mask[:, :, None]

    grad_logits = np.zeros_like(cache.field.logits)
    grad_codebooks = np.zeros_like(cache.field.codebooks)

    for lv in range(cfg.num_levels):
        d_f = 2.0 * scale * cache.residuals[lv]
        if cache.config.cosine_weight:
            d_f = d_f + (cache.config.cosine_weight * scale) * _cosine_grad(
                cache.feature_maps[lv], np.asarray(cache.batch.targets[lv], dtype=np.float64),
                mask3,
            )
        flat_df = d_f.reshape(-1, cfg.D)
        w_flat = cache.coeff_maps[lv].reshape(-1, cfg.L)
        grad_codebooks[lv] = w_flat.T @ flat_df

        d_w = flat_df @ cache.field.codebooks[lv].T  # (H*W, L)
        g_dense = np.zeros((g, cfg.L))
        for cap in cache.captures:
            if cap.rows.size:
                g_dense[cap.rows] += cap.e @ d_w[cap.pixels]

        idx = cache.idx[lv]
        ghat = np.take_along_axis(g_dense, idx, axis=1)  # dL/d(survivor values)
        y = np.take_along_axis(cache.p[lv], idx, axis=1)
        s = y.sum(axis=1, keepdims=True)
        w = cache.vals[lv]
        d_y = (ghat - (ghat * w).sum(axis=1, keepdims=True)) / s
        u = np.zeros((g, cfg.L))
        np.put_along_axis(u, idx, d_y, axis=1)
        dot = (u * cache.p[lv]).sum(axis=1, keepdims=True)
        grad_logits[lv] = cache.p[lv] * (u - dot)

    grads = Gradients(logits=grad_logits, codebooks=grad_codebooks)
    if not (np.all(np.isfinite(grad_logits)) and np.all(np.isfinite(grad_codebooks))):
        raise TrainingError("non-finite gradient")
    return grads


def _kmeans_atoms(pixels: np.ndarray, L: int, rng, iters: int = 12) -> np.ndarray:
    """Plain Lloyd k-means seeding of codebook atoms from target pixels."""
    n = pixels.shape[0]
    if n == 0:
        return rng.standard_normal((L, pixels.shape[1]))
    centroids = pixels[rng.choice(n, size=min(L, n), replace=False)]
    if centroids.shape[0] < L:
        extra = rng.standard_normal((L - centroids.shape[0], pixels.shape[1]))
        centroids = np.concatenate([centroids, extra])
    for _ in range(iters):
        d2 = ((pixels[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for c in range(L):
            members = pixels[assign == c]
            if members.shape[0]:
                centroids[c] = members.mean(axis=0)
            else:
                centroids[c] = pixels[rng.integers(n)]
    return centroids


def init_field(
    scene: Scene,
    batches,
    *,
    seed: int = 0,
    codebook_init: str = "kmeans",
    kmeans_sample: int = 4096,
) -> TrainableField:
    """Fresh trainable parameters: noisy logits, seeded codebooks."""
    cfg = scene.config
    rng = np.random.default_rng(seed)
    logits = rng.normal(0.0, 0.01, (cfg.num_levels, scene.num_gaussians, cfg.L))
    codebooks = np.empty((cfg.num_levels, cfg.L, cfg.D))
    for lv in range(cfg.num_levels):
        if codebook_init == "kmeans" and batches:
            pixels = np.concatenate(
                [np.asarray(b.targets[lv], dtype=np.float64).reshape(-1, cfg.D) for b in batches]
            )
            if pixels.shape[0] > kmeans_sample:
                pixels = pixels[rng.choice(pixels.shape[0], kmeans_sample, replace=False)]
            codebooks[lv] = _kmeans_atoms(pixels, cfg.L, rng)
        else:
            atoms = rng.standard_normal((cfg.L, cfg.D))
            codebooks[lv] = atoms / np.linalg.norm(atoms, axis=1, keepdims=True)
    return TrainableField(logits=logits, codebooks=codebooks)


def materialize(scene: Scene, field_: TrainableField) -> Scene:
    """Scene with trained coefficients and codebooks; geometry arrays shared."""
    from .core import Codebook

    cfg = scene.config
    coeff_idx = np.empty((cfg.num_levels, scene.num_gaussians, cfg.K), dtype=np.uint16)
    coeff_val = np.empty((cfg.num_levels, scene.num_gaussians, cfg.K), dtype=np.float32)
    for lv in range(cfg.num_levels):
        idx, vals, _ = normalize_batch(field_.logits[lv], cfg.K)
        coeff_idx[lv] = idx.astype(np.uint16)
        coeff_val[lv] = vals.astype(np.float32)
    codebooks = tuple(
        Codebook(field_.codebooks[lv].astype(np.float32), level=lv)
        for lv in range(cfg.num_levels)
    )
    out = Scene(
        positions=scene.positions,
        rotations=scene.rotations,
        scales=scene.scales,
        opacities=scene.opacities,
        colors=scene.colors,
        coeff_indices=coeff_idx,
        coeff_values=coeff_val,
        codebooks=codebooks,
        config=cfg,
        ids=scene.ids,
    )
    out.validate()
    return out


@dataclass
class TrainResult:
    scene: Scene
    field: TrainableField
    loss_curve: list  # (iter, loss, grad_norm) rows
    initial_loss: float
    final_loss: float
    holdout_initial: float | None = None
    holdout_final: float | None = None


def train_field(
    scene: Scene,
    batches,
    iters: int,
    config: TrainConfig | None = None,
    *,
    seed: int = 0,
    holdout: TrainingBatch | None = None,
    codebook_init: str = "kmeans",
) -> TrainResult:
    """Optimize coefficients and codebooks against target feature maps.

    Batches are visited round-robin, one per iteration. Geometry is never
    touched; `iters=0` returns the input scene unchanged.
    """
    config = config or TrainConfig()
    batches = list(batches)
    if not batches:
        raise ValidationError("at least one training batch is required")
    for b in batches:
        b.validate(scene.config.num_levels, scene.config.D)

    if iters == 0:
        return TrainResult(
            scene=scene,
            field=init_field(scene, batches, seed=seed, codebook_init=codebook_init),
            loss_curve=[],
            initial_loss=float("nan"),
            final_loss=float("nan"),
        )

    field_ = init_field(scene, batches, seed=seed, codebook_init=codebook_init)
    optim = OptimState(
        lr_logits=config.lr_logits,
        lr_codebook=config.lr_codebook,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    binnings = [_binning_for(scene, b.camera, config.tile_size) for b in batches]

    holdout_initial = None
    if holdout is not None:
        holdout_initial, _ = forward_loss(field_, scene, holdout, config)

    curve = []
    initial_loss = None
    bad_streak = 0
    for it in range(iters):
        b = it % len(batches)
        loss, cache = forward_loss(
            field_, scene, batches[b], config, binning=binnings[b], iteration=it
        )
        grads = backward(cache)
        optim.step(field_, grads)
        curve.append((it, loss, grads.norm()))
        if initial_loss is None:
            initial_loss = loss
        if loss > DIVERGENCE_FACTOR * initial_loss:
            bad_streak += 1
            if bad_streak >= DIVERGENCE_PATIENCE:
                raise TrainingError(
                    f"diverged: loss {loss:.4g} > {DIVERGENCE_FACTOR} x initial "
                    f"{initial_loss:.4g} for {bad_streak} consecutive iterations "
                    f"(iteration {it})"
                )
        else:
            bad_streak = 0

    holdout_final = None
    if holdout is not None:
        holdout_final, _ = forward_loss(field_, scene, holdout, config)

    return TrainResult(
        scene=materialize(scene, field_),
        field=field_,
        loss_curve=curve,
        initial_loss=initial_loss,
        final_loss=curve[-1][1],
        holdout_initial=holdout_initial,
        holdout_final=holdout_final,
    )


def write_loss_curve(path, curve) -> None:
    with open(path, "w") as f:
        f.write("iter,loss,grad_norm\n")
        for it, loss, gn in curve:
            f.write(f"{it},{loss:.10g},{gn:.10g}\n")
