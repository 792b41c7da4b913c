"""Acceptance suite: one test per criterion, tolerances pinned, timings enforced.

Run with `pytest tests/test_acceptance.py -v -s` to see one [PASS]/[FAIL]
line per criterion.
"""

import time

import numpy as np
import pytest

from splatfield.bench import BenchPlan, run_benchmark, verify_speedup
from splatfield.errors import FormatError, TruncatedFileError
from splatfield.io import (
    SyntheticSpec,
    dump_framebuffer,
    generate_synthetic,
    load_framebuffer,
    load_query_set,
    load_scene,
    render_targets,
    save_query_set,
    save_scene,
)
from splatfield.query import iou, segment
from splatfield.rasterizer import Framebuffer, oracle_render, render_dense
from splatfield.sparse_splat import decode, query_pipeline, splat_multilevel, splat_sparse
from splatfield.train import (
    TrainConfig,
    TrainableField,
    TrainingBatch,
    normalize_coefficients,
    train_field,
)

from conftest import make_camera, random_scene
from gradcheck import finite_difference_check


def report(name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" — {detail}"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def equivalence_scenes():
    """20 seeded scenes, <= 1000 Gaussians, L=64, K=4, D=16, one level."""
    scenes = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = int(rng.integers(200, 1001))
        scenes.append(random_scene(rng, num_gaussians=g, num_levels=1, L=64, K=4, D=16))
    return scenes


@pytest.fixture(scope="module")
def bench_records():
    plan = BenchPlan(
        seed=0, gaussians=1000, classes=8, image_size=64, feature_dim=16,
        l_sweep=(16, 64, 256), k_sweep=(4,), sweep_levels=1,
        repetitions=11, warmup=3, include_speedup_cells=True,
    )
    t0 = time.perf_counter()
    records = run_benchmark(plan)
    return records, time.perf_counter() - t0


def test_sparse_dense_equivalence(equivalence_scenes):
    t0 = time.perf_counter()
    cam = make_camera(width=64, height=64)
    worst = 0.0
    for scene in equivalence_scenes:
        cmap = splat_sparse(scene, cam, 0)
        dense = render_dense(
            scene, cam, scene.densified_coefficients(0), tag="coefficient"
        )
        worst = max(worst, float(np.abs(cmap.data - dense.data).max()))
    elapsed = time.perf_counter() - t0
    report(
        "sparse/dense equivalence (20 scenes, inf-norm <= 1e-6, < 30 s)",
        worst <= 1e-6 and elapsed < 30.0,
        f"worst diff {worst:.3g}, {elapsed:.1f} s",
    )


def test_render_decode_identity(equivalence_scenes):
    cam = make_camera(width=64, height=64)
    worst = 0.0
    for scene in equivalence_scenes:
        decoded = decode(splat_sparse(scene, cam, 0), scene.codebooks)
        direct = render_dense(scene, cam, scene.reconstructed_features(0))
        worst = max(worst, float(np.abs(decoded.maps[0] - direct.data).max()))
    report(
        "render-then-decode identity (D=16, inf-norm <= 1e-5)",
        worst <= 1e-5,
        f"worst diff {worst:.3g}",
    )


def test_cost_decoupling(bench_records):
    records, elapsed = bench_records
    sparse = {r.L: r.render_ms for r in records if r.method == "sparse" and r.levels == 1}
    dense = {r.L: r.render_ms for r in records if r.method == "dense" and r.levels == 1}
    sparse_ratio = max(sparse.values()) / min(sparse.values())
    dense_ratio = dense[256] / dense[16]
    ok = sparse_ratio <= 1.3 and dense_ratio >= 4.0 and elapsed < 300.0
    report(
        "cost decoupling (sparse varies <= 30% over L in {16,64,256}; dense L=256 >= 4x L=16; < 5 min)",
        ok,
        f"sparse max/min {sparse_ratio:.3f}, dense 256/16 {dense_ratio:.2f}, {elapsed:.1f} s",
    )


def test_stage_ordering(bench_records):
    records, _ = bench_records
    headline = [r for r in records if r.method == "sparse" and r.L == 64 and r.levels == 3]
    assert headline, "headline config cell missing from benchmark"
    r = headline[0]
    ok = r.decode_ms < r.render_ms and r.post_ms < r.render_ms
    report(
        "stage ordering at L=64, K=4, 3 levels (decode < render, post < render)",
        ok,
        f"render {r.render_ms:.2f} ms, decode {r.decode_ms:.2f} ms, post {r.post_ms:.2f} ms",
    )
    speedup = verify_speedup(records)
    report(
        "sparse query path faster than dense comparator at the headline config",
        speedup.comparable and speedup.passed,
        speedup.message,
    )


def test_effective_blend_width(rng):
    scene = random_scene(rng, num_gaussians=50, num_levels=3, L=64, K=4, D=16)
    _, stats = splat_multilevel(scene, make_camera(), with_stats=True)
    report(
        "effective blend width at 3 levels, K=4 equals 12",
        stats.channels_per_gaussian == 12,
        f"instrumented channel count {stats.channels_per_gaussian}",
    )


def test_gradient_correctness():
    t0 = time.perf_counter()
    checked = failed = flips = 0
    for seed in range(50):
        rng = np.random.default_rng(seed + 500)
        g = int(rng.integers(1, 5))
        size = int(rng.integers(1, 3))  # 1 to 4 pixels
        scene = random_scene(rng, num_gaussians=g, num_levels=1, L=8, K=2, D=8)
        cam = make_camera(width=size, height=size)
        field = TrainableField(
            logits=rng.normal(0, 1.0, (1, g, 8)),
            codebooks=rng.standard_normal((1, 8, 8)),
        )
        batch = TrainingBatch(camera=cam, targets=rng.standard_normal((1, size, size, 8)) * 0.3)
        c, f, fl = finite_difference_check(field, scene, batch, TrainConfig())
        checked += c
        failed += f
        flips += fl
    elapsed = time.perf_counter() - t0
    frac = failed / checked if checked else 1.0
    report(
        "gradient correctness (50 tiny instances, >= 99% of non-flip coords within 1e-3)",
        frac <= 0.01 and elapsed < 120.0,
        f"{checked} coords checked, {failed} failed ({100 * (1 - frac):.2f}% ok), "
        f"{flips} membership flips excluded, {elapsed:.1f} s",
    )


def test_synthetic_recovery():
    t0 = time.perf_counter()
    spec = SyntheticSpec(
        seed=0, num_gaussians=96, num_classes=8, image_size=48,
        num_levels=1, L=16, K=4, D=16, num_cameras=4,
    )
    bundle = generate_synthetic(spec)
    batches = [
        TrainingBatch(camera=cam, targets=render_targets(bundle.scene, cam))
        for cam in bundle.cameras
    ]
    holdout = batches[bundle.holdout_index]
    train_batches = [b for j, b in enumerate(batches) if j != bundle.holdout_index]

    iters = 1200  # <= 2000 budget
    result = train_field(
        bundle.scene, train_batches, iters, TrainConfig(), seed=0, holdout=holdout
    )
    ratio = result.holdout_final / result.holdout_initial

    cam = bundle.cameras[bundle.holdout_index]
    gt = bundle.class_masks[bundle.holdout_index]
    ious = []
    for c in range(8):
        r = query_pipeline(
            result.scene, cam, bundle.query_set.queries[c],
            bundle.query_set.canonicals, window=3,
        )
        ious.append(iou(segment(r.chosen).mask, gt[c]))
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.05 and min(ious) >= 0.9 and elapsed < 600.0
    report(
        "synthetic recovery (8 classes, <= 2000 iters: holdout error <= 5% of initial, IoU >= 0.9)",
        ok,
        f"holdout ratio {ratio:.4f} after {iters} iters, "
        f"min IoU {min(ious):.3f}, {elapsed:.1f} s",
    )


def test_oracle_rasterizer_equality():
    worst = 0.0
    perm_ok = True
    for seed in range(20):
        rng = np.random.default_rng(seed + 40)
        scene = random_scene(rng, num_gaussians=50, num_levels=1, L=64, K=4, D=16)
        cam = make_camera(width=32, height=32)
        channels = scene.densified_coefficients(0)  # 64 channels
        fast = render_dense(scene, cam, channels)
        slow = oracle_render(scene, cam, channels)
        worst = max(worst, float(np.abs(fast.data - slow.data).max()))
        permuted = scene.permuted(rng.permutation(scene.num_gaussians))
        again = render_dense(permuted, cam, permuted.densified_coefficients(0))
        perm_ok = perm_ok and fast.data.tobytes() == again.data.tobytes()
    report(
        "oracle rasterizer equality (inf-norm <= 1e-6; permutation byte-exact)",
        worst <= 1e-6 and perm_ok,
        f"worst diff {worst:.3g}, permutation invariance {'held' if perm_ok else 'BROKE'}",
    )


def test_coefficient_simplex_invariants():
    rng = np.random.default_rng(99)
    calls = 100_000
    bad_sum = bad_count = bad_set = 0
    for _ in range(calls):
        l = int(rng.integers(2, 65))
        k = int(rng.integers(1, min(l, 8) + 1))
        logits = rng.standard_normal(l) * rng.uniform(0.5, 4.0)
        coeffs = normalize_coefficients(logits, k)
        if abs(float(coeffs.values.sum(dtype=np.float64)) - 1.0) > 1e-7:
            bad_sum += 1
        if coeffs.k != k:
            bad_count += 1
        # sort oracle for the kept set
        z = np.exp(logits - logits.max())
        p = z / z.sum()
        expected = set(sorted(range(l), key=lambda j: (-p[j], j))[:k])
        if set(coeffs.indices.tolist()) != expected:
            bad_set += 1
    ok = bad_sum == 0 and bad_count == 0 and bad_set == 0
    report(
        "coefficient simplex invariants (1e5 calls: sum 1 +- 1e-7, K entries, sort-oracle set)",
        ok,
        f"{calls} calls, {bad_sum} bad sums, {bad_count} bad counts, {bad_set} set mismatches",
    )


def test_format_round_trips(tmp_path, rng):
    scene = random_scene(rng, num_gaussians=200, num_levels=3, L=32, K=4, D=16)
    scene_path = tmp_path / "scene.lsv2"
    save_scene(scene_path, scene)
    loaded = load_scene(scene_path)
    save_scene(tmp_path / "again.lsv2", loaded)
    scene_ok = scene_path.read_bytes() == (tmp_path / "again.lsv2").read_bytes()

    fb = Framebuffer(data=rng.standard_normal((16, 16, 8)).astype(np.float32), tag="dense-feature")
    fb_path = tmp_path / "buf.fbuf"
    dump_framebuffer(fb_path, fb)
    fb_ok = load_framebuffer(fb_path).data.tobytes() == fb.data.tobytes()

    bundle = generate_synthetic(SyntheticSpec(
        seed=1, num_gaussians=20, num_classes=2, image_size=16,
        num_levels=1, L=8, K=2, D=8, num_cameras=2,
    ))
    qs_path = tmp_path / "queries.json"
    save_query_set(qs_path, bundle.query_set)
    save_query_set(tmp_path / "queries2.json", load_query_set(qs_path))
    qs_ok = qs_path.read_bytes() == (tmp_path / "queries2.json").read_bytes()

    errors_ok = True
    try:
        (tmp_path / "bad.lsv2").write_bytes(b"XXXX" + b"\x00" * 32)
        load_scene(tmp_path / "bad.lsv2")
        errors_ok = False
    except FormatError:
        pass
    try:
        raw = scene_path.read_bytes()
        (tmp_path / "cut.lsv2").write_bytes(raw[: len(raw) // 2])
        load_scene(tmp_path / "cut.lsv2")
        errors_ok = False
    except TruncatedFileError as exc:
        errors_ok = errors_ok and exc.offset > 0
    try:
        raw = fb_path.read_bytes()
        (tmp_path / "cut.fbuf").write_bytes(raw[:-5])
        load_framebuffer(tmp_path / "cut.fbuf")
        errors_ok = False
    except TruncatedFileError:
        pass

    report(
        "format round-trips byte-exact; corrupted files raise typed errors",
        scene_ok and fb_ok and qs_ok and errors_ok,
        f"scene {scene_ok}, framebuffer {fb_ok}, query set {qs_ok}, errors {errors_ok}",
    )
