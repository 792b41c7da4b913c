"""File formats, the query-set file, and the synthetic scene generator.

Binary formats are little-endian, self-describing (magic + version), and
round-trip byte-exactly; scenes and buffers are float32 on disk. The scene
record layout keeps the per-Gaussian top-K arrays inline:

    header:  "LSV2" | version u32 | num_gaussians u32 | num_levels u32 |
             L u32 | K u32 | D u32
    records: position f32x3 | quaternion f32x4 | scale f32x3 | opacity f32 |
             color f32x3 | per level: K u16 indices, K f32 values
    tail:    per level: L x D f32 codebook, row-major

The synthetic generator is the ground-truth source for every oracle and
acceptance test: each Gaussian gets exactly one semantic class, its
coefficients are one-hot on that class's codebook atom, and class masks are
rendered indicator channels thresholded at 0.5. Everything is a pure
function of the spec (seed included).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Codebook, Scene, SceneConfig
from .errors import FormatError, TruncatedFileError, ValidationError
from .projection import Camera, CameraPose
from .query import QueryEmbedding

SCENE_MAGIC = b"LSV2"
SCENE_VERSION = 1
FRAME_MAGIC = b"FBUF"
FRAME_VERSION = 1
_TAG_CODES = {"color": 0, "dense-feature": 1, "coefficient": 2}
_TAG_NAMES = {v: k for k, v in _TAG_CODES.items()}


def _record_dtype(num_levels: int, k: int) -> np.dtype:
    fields = [
        ("position", "<f4", (3,)),
        ("rotation", "<f4", (4,)),
        ("scale", "<f4", (3,)),
        ("opacity", "<f4"),
        ("color", "<f4", (3,)),
    ]
    for lv in range(num_levels):
        fields.append((f"idx{lv}", "<u2", (k,)))
        fields.append((f"val{lv}", "<f4", (k,)))
    return np.dtype(fields)


def save_scene(path, scene: Scene) -> None:
    scene.validate()
    cfg = scene.config
    g = scene.num_gaussians
    rec = np.zeros(g, dtype=_record_dtype(cfg.num_levels, cfg.K))
    rec["position"] = scene.positions
    rec["rotation"] = scene.rotations
    rec["scale"] = scene.scales
    rec["opacity"] = scene.opacities
    rec["color"] = scene.colors
    for lv in range(cfg.num_levels):
        rec[f"idx{lv}"] = scene.coeff_indices[lv]
        rec[f"val{lv}"] = scene.coeff_values[lv]
    with open(path, "wb") as f:
        f.write(SCENE_MAGIC)
        f.write(struct.pack("<IIIIII", SCENE_VERSION, g, cfg.num_levels, cfg.L, cfg.K, cfg.D))
        f.write(rec.tobytes())
        for cb in scene.codebooks:
            f.write(cb.atoms.astype("<f4").tobytes())


def load_scene(path) -> Scene:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != SCENE_MAGIC:
            raise FormatError(f"bad magic {magic!r}; expected {SCENE_MAGIC!r}")
        header = f.read(24)
        if len(header) != 24:
            raise TruncatedFileError("file truncated in header", 4 + len(header))
        version, g, num_levels, L, K, D = struct.unpack("<IIIIII", header)
        if version != SCENE_VERSION:
            raise FormatError(f"unsupported scene version {version}")
        dtype = _record_dtype(num_levels, K)
        body = f.read(g * dtype.itemsize)
        if len(body) != g * dtype.itemsize:
            raise TruncatedFileError(
                f"file truncated mid-record ({len(body) % dtype.itemsize} trailing bytes)",
                28 + len(body),
            )
        rec = np.frombuffer(body, dtype=dtype)
        codebooks = []
        for lv in range(num_levels):
            block = f.read(L * D * 4)
            if len(block) != L * D * 4:
                raise TruncatedFileError(
                    f"file truncated in codebook block {lv}",
                    28 + len(body) + lv * L * D * 4 + len(block),
                )
            codebooks.append(
                Codebook(np.frombuffer(block, dtype="<f4").reshape(L, D).copy(), level=lv)
            )
    cfg = SceneConfig(num_levels=num_levels, L=L, K=K, D=D)
    scene = Scene(
        positions=rec["position"].copy(),
        rotations=rec["rotation"].copy(),
        scales=rec["scale"].copy(),
        opacities=rec["opacity"].copy(),
        colors=rec["color"].copy(),
        coeff_indices=np.stack([rec[f"idx{lv}"] for lv in range(num_levels)])
        if g
        else np.zeros((num_levels, 0, K), dtype=np.uint16),
        coeff_values=np.stack([rec[f"val{lv}"] for lv in range(num_levels)])
        if g
        else np.zeros((num_levels, 0, K), dtype=np.float32),
        codebooks=tuple(codebooks),
        config=cfg,
    )
    scene.validate()
    return scene


def dump_framebuffer(path, fb) -> None:
    """Write a framebuffer as float32; header stores dims, channels, tag."""
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(
            struct.pack(
                "<IIIIB", FRAME_VERSION, fb.height, fb.width, fb.channels,
                _TAG_CODES[fb.tag],
            )
        )
        f.write(np.ascontiguousarray(fb.data, dtype="<f4").tobytes())


def load_framebuffer(path, *, expect_tag: str | None = None, expect_shape=None):
    from .rasterizer import Framebuffer

    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FRAME_MAGIC:
            raise FormatError(f"bad magic {magic!r}; expected {FRAME_MAGIC!r}")
        header = f.read(17)
        if len(header) != 17:
            raise TruncatedFileError("file truncated in header", 4 + len(header))
        version, h, w, c, tag_code = struct.unpack("<IIIIB", header)
        if version != FRAME_VERSION:
            raise FormatError(f"unsupported framebuffer version {version}")
        if tag_code not in _TAG_NAMES:
            raise FormatError(f"unknown framebuffer tag code {tag_code}")
        tag = _TAG_NAMES[tag_code]
        if expect_tag is not None and tag != expect_tag:
            raise FormatError(f"framebuffer tag is {tag!r}, expected {expect_tag!r}")
        if expect_shape is not None and (h, w, c) != tuple(expect_shape):
            raise FormatError(
                f"framebuffer dims {(h, w, c)} do not match expected {tuple(expect_shape)}"
            )
        body = f.read(h * w * c * 4)
        if len(body) != h * w * c * 4:
            raise TruncatedFileError("file truncated in pixel data", 21 + len(body))
    data = np.frombuffer(body, dtype="<f4").reshape(h, w, c).copy()
    return Framebuffer(data=data, tag=tag)


@dataclass
class QuerySet:
    """Named query embeddings plus the shared canonical set."""

    dim: int
    canonicals: np.ndarray  # (n, D) float32
    queries: list[QueryEmbedding]
    gt_mask_paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.canonicals = np.asarray(self.canonicals, dtype=np.float32)
        if self.canonicals.ndim != 2 or self.canonicals.shape[1] != self.dim:
            raise ValidationError("canonicals must be (n, D)")
        for q in self.queries:
            if q.vector.shape[0] != self.dim:
                raise ValidationError(f"query {q.name!r} has dimension {q.vector.shape[0]} != {self.dim}")

    def names(self) -> list[str]:
        return [q.name for q in self.queries]

    def get(self, name: str) -> QueryEmbedding:
        for q in self.queries:
            if q.name == name:
                return q
        raise ValidationError(
            f"unknown query {name!r}; available: {', '.join(self.names())}"
        )


def _float_list(arr) -> list:
    return [float(v) for v in np.asarray(arr, dtype=np.float32)]


def save_query_set(path, qs: QuerySet) -> None:
    doc = {
        "D": qs.dim,
        "canonicals": [_float_list(c) for c in qs.canonicals],
        "queries": [
            {
                "name": q.name,
                "vector": _float_list(q.vector),
                **(
                    {"gt_mask_path": qs.gt_mask_paths[q.name]}
                    if q.name in qs.gt_mask_paths
                    else {}
                ),
            }
            for q in qs.queries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_query_set(path) -> QuerySet:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"query set is not valid JSON: {exc}") from exc
    try:
        dim = int(doc["D"])
        canonicals = np.array(doc["canonicals"], dtype=np.float32).reshape(-1, dim)
        queries = []
        masks = {}
        for q in doc["queries"]:
            queries.append(
                QueryEmbedding(name=q["name"], vector=np.array(q["vector"], dtype=np.float32))
            )
            if "gt_mask_path" in q:
                masks[q["name"]] = q["gt_mask_path"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed query set: {exc}") from exc
    return QuerySet(dim=dim, canonicals=canonicals, queries=queries, gt_mask_paths=masks)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SyntheticSpec:
    """Deterministic recipe for a labeled scene with known semantics."""

    seed: int = 0
    num_gaussians: int = 200
    num_classes: int = 8
    layout: str = "grid"  # or "clustered"
    image_size: int = 64
    num_levels: int = 3
    L: int = 64
    K: int = 4
    D: int = 16
    atom_scale: float = 1.0
    num_cameras: int = 4
    num_canonicals: int = 4

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("at least 2 classes are required")
        if self.num_gaussians < self.num_classes:
            raise ValidationError("need at least one Gaussian per class")
        if self.num_classes > self.L:
            raise ValidationError(f"num_classes {self.num_classes} > L {self.L}")
        if self.layout not in ("grid", "clustered"):
            raise ValidationError(f"unknown layout {self.layout!r}")
        if self.D < self.num_classes + self.num_canonicals:
            raise ValidationError(
                "D must be >= num_classes + num_canonicals so class atoms and "
                "canonicals can be mutually orthogonal"
            )


@dataclass
class SyntheticBundle:
    """A scene plus everything needed to check answers against it."""

    scene: Scene
    spec: SyntheticSpec
    camera_poses: list[CameraPose]
    cameras: list[Camera]
    class_of_gaussian: np.ndarray  # (G,) int
    class_masks: list[np.ndarray]  # per camera: (A, H, W) bool
    query_set: QuerySet
    holdout_index: int  # camera reserved for held-out evaluation


def class_atoms(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Class atoms and canonical vectors, all mutually orthogonal.

    Orthogonality makes a query's pixel logit proportional to that class's
    blended indicator mass and keeps canonical logits at zero. With a small
    atom scale the pairwise softmax is near-linear in mass, so the min-max
    midpoint used by segmentation lands at half mass — the same rule that
    produced the ground-truth masks.
    """
    rng = np.random.default_rng(spec.seed + 1)
    m = rng.standard_normal((spec.D, spec.num_classes + spec.num_canonicals))
    q, _ = np.linalg.qr(m)
    atoms = (q[:, : spec.num_classes].T * spec.atom_scale).astype(np.float32)
    canonicals = q[:, spec.num_classes :].T.astype(np.float32)
    return atoms, canonicals


def _cluster_centers(spec: SyntheticSpec, rng) -> np.ndarray:
    a = spec.num_classes
    if spec.layout == "grid":
        cols = int(np.ceil(np.sqrt(a)))
        rows = int(np.ceil(a / cols))
        xs = (np.arange(cols) - (cols - 1) / 2.0) * (2.0 / cols)
        ys = (np.arange(rows) - (rows - 1) / 2.0) * (2.0 / rows)
        centers = np.array([(xs[i % cols], ys[i // cols], 0.0) for i in range(a)])
    else:
        centers = np.zeros((a, 3))
        for i in range(a):
            # rejection-sample for separation; falls back after 64 tries
            for _ in range(64):
                c = rng.uniform(-0.9, 0.9, 3) * np.array([1.0, 1.0, 0.3])
                if i == 0 or np.min(np.linalg.norm(centers[:i] - c, axis=1)) > 0.45:
                    break
            centers[i] = c
    return centers


def generate_synthetic(spec: SyntheticSpec) -> SyntheticBundle:
    """Build a scene whose semantics are known exactly, plus its ground truth."""
    from .rasterizer import render_dense

    # geometry draws come from their own stream so scenes with the same
    # seed/layout are identical across L, K, and D (benchmarks sweep those
    # on fixed geometry)
    rng = np.random.default_rng(spec.seed)
    a, g = spec.num_classes, spec.num_gaussians
    atoms_gt, canonicals = class_atoms(spec)

    # codebook: class atoms in rows 0..A-1, unused unit-ish rows after
    cb_rng = np.random.default_rng(spec.seed + 3)
    codebooks = []
    for lv in range(spec.num_levels):
        extra = cb_rng.standard_normal((spec.L - a, spec.D)).astype(np.float32)
        codebooks.append(Codebook(np.concatenate([atoms_gt, extra]), level=lv))

    classes = np.concatenate(
        [np.arange(a), rng.integers(0, a, g - a)]
    ).astype(np.int64)  # every class occurs at least once
    centers = _cluster_centers(spec, rng)
    spread = 0.7 / np.sqrt(a)
    positions = centers[classes] + rng.normal(0.0, spread * 0.35, (g, 3)) * np.array(
        [1.0, 1.0, 0.25]
    )

    quats = rng.standard_normal((g, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = rng.uniform(0.5, 1.4, (g, 3)) * spread * 0.45
    opacities = rng.uniform(0.65, 0.95, g)
    colors = rng.uniform(0.1, 1.0, (a, 3))[classes]  # one base color per class

    # one-hot coefficients on the class atom; remaining K-1 slots are zero
    # weight on the next indices so exactly K entries are stored
    idx = np.zeros((g, spec.K), dtype=np.uint16)
    val = np.zeros((g, spec.K), dtype=np.float32)
    for i in range(g):
        others = [j for j in range(spec.K + 1) if j != classes[i]][: spec.K - 1]
        cols = np.sort(np.array([classes[i]] + others, dtype=np.uint16))
        idx[i] = cols
        val[i, np.searchsorted(cols, classes[i])] = 1.0

    cfg = SceneConfig(num_levels=spec.num_levels, L=spec.L, K=spec.K, D=spec.D)
    scene = Scene(
        positions=positions.astype(np.float32),
        rotations=quats.astype(np.float32),
        scales=scales.astype(np.float32),
        opacities=opacities.astype(np.float32),
        colors=colors.astype(np.float32),
        coeff_indices=np.repeat(idx[None], spec.num_levels, axis=0),
        coeff_values=np.repeat(val[None], spec.num_levels, axis=0),
        codebooks=tuple(codebooks),
        config=cfg,
    )
    scene.validate()

    size = spec.image_size
    poses = []
    for j in range(spec.num_cameras):
        angle = 2.0 * np.pi * j / spec.num_cameras + 0.35
        dist = 3.4
        poses.append(
            CameraPose(
                position=(
                    float(np.sin(angle) * 0.55),
                    float(np.cos(angle) * 0.55),
                    -dist,
                ),
                look_at=(0.0, 0.0, 0.0),
                fov_y_deg=42.0,
                width=size,
                height=size,
            )
        )
    cameras = [p.to_camera() for p in poses]

    indicators = np.zeros((g, a))
    indicators[np.arange(g), classes] = 1.0
    class_masks = []
    for cam in cameras:
        fb = render_dense(scene, cam, indicators, tag="dense-feature")
        class_masks.append(np.transpose(fb.data > 0.5, (2, 0, 1)))

    queries = [
        QueryEmbedding(name=f"class{c}", vector=atoms_gt[c]) for c in range(a)
    ]
    query_set = QuerySet(dim=spec.D, canonicals=canonicals, queries=queries)

    return SyntheticBundle(
        scene=scene,
        spec=spec,
        camera_poses=poses,
        cameras=cameras,
        class_of_gaussian=classes,
        class_masks=class_masks,
        query_set=query_set,
        holdout_index=len(cameras) - 1,
    )


def render_targets(scene: Scene, cam: Camera) -> np.ndarray:
    """(num_levels, H, W, D) decoded feature maps used as training supervision."""
    from .sparse_splat import decode, splat_multilevel

    cmap = splat_multilevel(scene, cam)
    fms = decode(cmap, scene.codebooks)
    return np.stack(fms.maps)


def write_bundle(out_dir, bundle: SyntheticBundle, *, with_targets: bool = True) -> dict:
    """Write scene, queries, cameras, masks, and training targets to a directory."""
    from PIL import Image

    from .rasterizer import Framebuffer, TAG_FEATURE

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"scene": str(out / "scene.lsv2"), "queries": str(out / "queries.json"),
             "cameras": str(out / "cameras.json")}
    save_scene(paths["scene"], bundle.scene)

    (out / "masks").mkdir(exist_ok=True)
    mask_paths = {}
    for j, masks in enumerate(bundle.class_masks):
        for c in range(masks.shape[0]):
            p = out / "masks" / f"cam{j}_class{c}.png"
            Image.fromarray((masks[c] * 255).astype(np.uint8), mode="L").save(p)
            if j == 0:
                mask_paths[f"class{c}"] = str(Path("masks") / f"cam{j}_class{c}.png")
    bundle.query_set.gt_mask_paths.update(mask_paths)
    save_query_set(paths["queries"], bundle.query_set)

    cameras_doc = {
        "holdout_index": bundle.holdout_index,
        "cameras": [p.to_dict() for p in bundle.camera_poses],
    }
    (out / "cameras.json").write_text(json.dumps(cameras_doc, indent=1) + "\n")

    if with_targets:
        (out / "targets").mkdir(exist_ok=True)
        for j, cam in enumerate(bundle.cameras):
            targets = render_targets(bundle.scene, cam)
            for lv in range(targets.shape[0]):
                fb = Framebuffer(data=targets[lv].astype(np.float32), tag=TAG_FEATURE)
                dump_framebuffer(out / "targets" / f"cam{j}_level{lv}.fbuf", fb)
        paths["targets"] = str(out / "targets")
    return paths


def load_camera_poses(path) -> tuple[list[CameraPose], int]:
    try:
        doc = json.loads(Path(path).read_text())
        poses = [CameraPose.from_dict(d) for d in doc["cameras"]]
        holdout = int(doc.get("holdout_index", len(poses) - 1))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed cameras file: {exc}") from exc
    return poses, holdout
