"""Benchmark harness: dimension-sweep curves and stage-wise breakdowns.

Two methods render the same coefficient maps on identical geometry:

  dense  - the densified (num_levels * L)-channel coefficient field rendered
           through the dense blend path; per-Gaussian blend work grows with L
  sparse - the fused sparse splat; per-Gaussian blend work is num_levels * K
           regardless of L

Both are followed by the same decode and post-processing stages, so their
stage timings are directly comparable. Timing uses a monotonic clock with
warm-up runs and median-of-N reporting (IQR as dispersion); absolute
milliseconds are machine-bound, the claims are orderings and ratios.

Cells that exceed the render memory budget are recorded as OOM and the run
continues.
"""

from __future__ import annotations

import platform
import time
from dataclasses import dataclass

import numpy as np

from .errors import ResourceLimitError, ValidationError
from .io import SyntheticSpec, generate_synthetic
from .query import localize, mean_filter, relevancy_map, select_level
from .rasterizer import DEFAULT_MAX_RENDER_ELEMENTS, render_dense
from .sparse_splat import CoefficientMap, decode, splat_multilevel


@dataclass
class BenchPlan:
    seed: int = 0
    gaussians: int = 600
    classes: int = 8
    layout: str = "clustered"
    image_size: int = 64
    feature_dim: int = 16
    l_sweep: tuple = (16, 64, 256)
    k_sweep: tuple = (4,)
    sweep_levels: int = 1
    methods: tuple = ("dense", "sparse")
    repetitions: int = 31
    warmup: int = 10
    include_speedup_cells: bool = True  # adds both methods at the headline config: L=64, K=4, 3 levels
    max_render_elements: int = DEFAULT_MAX_RENDER_ELEMENTS
    query_window: int = 5

    def __post_init__(self):
        if self.repetitions < 5 or self.repetitions % 2 == 0:
            raise ValidationError("repetitions must be odd and >= 5")
        if not self.l_sweep or not self.k_sweep:
            raise ValidationError("sweeps must be non-empty")
        for m in self.methods:
            if m not in ("dense", "sparse"):
                raise ValidationError(f"unknown method {m!r}")

    def cells(self) -> list[tuple[str, int, int, int]]:
        out = [
            (m, l, k, self.sweep_levels)
            for l in self.l_sweep
            for k in self.k_sweep
            for m in self.methods
        ]
        if self.include_speedup_cells:
            for m in self.methods:
                cell = (m, 64, 4, 3)
                if cell not in out:
                    out.append(cell)
        return out


@dataclass
class BenchRecord:
    method: str
    L: int
    K: int
    levels: int
    height: int
    width: int
    render_ms: float
    decode_ms: float
    post_ms: float
    iqr_ms: float
    oom: bool = False

    def total_ms(self) -> float:
        return self.render_ms + self.decode_ms + self.post_ms


def _scene_for_cell(plan: BenchPlan, l: int, k: int, levels: int):
    spec = SyntheticSpec(
        seed=plan.seed,
        num_gaussians=plan.gaussians,
        num_classes=plan.classes,
        layout=plan.layout,
        image_size=plan.image_size,
        num_levels=levels,
        L=l,
        K=min(k, l),
        D=plan.feature_dim,
    )
    return generate_synthetic(spec)


def _dense_coefficient_channels(scene) -> np.ndarray:
    """(G, num_levels * L) densified coefficient rows, the dense comparator."""
    return np.concatenate(
        [scene.densified_coefficients(lv) for lv in range(scene.config.num_levels)],
        axis=1,
    )


def _run_cell_once(method: str, scene, cam, query, canonicals, plan: BenchPlan):
    """One full query pass; returns (render_s, decode_s, post_s, chosen_map)."""
    cfg = scene.config
    t0 = time.perf_counter()
    if method == "sparse":
        cmap = splat_multilevel(scene, cam, max_elements=plan.max_render_elements)
    else:
        channels = _dense_coefficient_channels(scene)
        fb = render_dense(
            scene, cam, channels, tag="coefficient",
            max_elements=plan.max_render_elements,
        )
        cmap = CoefficientMap(
            data=fb.data, L=cfg.L, K=cfg.K, levels=tuple(range(cfg.num_levels))
        )
    t1 = time.perf_counter()
    features = decode(cmap, scene.codebooks)
    t2 = time.perf_counter()
    maps = [
        mean_filter(relevancy_map(features.maps[b], query, canonicals, level=lv),
                    plan.query_window)
        for b, lv in enumerate(cmap.levels)
    ]
    _, chosen = select_level(maps)
    localize(chosen)
    t3 = time.perf_counter()
    return t1 - t0, t2 - t1, t3 - t2, chosen


def run_cell(plan: BenchPlan, method: str, l: int, k: int, levels: int) -> BenchRecord:
    bundle = _scene_for_cell(plan, l, k, levels)
    scene = bundle.scene
    cam = bundle.cameras[0]
    query = bundle.query_set.queries[0]
    canonicals = bundle.query_set.canonicals
    try:
        for _ in range(plan.warmup):
            _run_cell_once(method, scene, cam, query, canonicals, plan)
        renders, decodes, posts = [], [], []
        for _ in range(plan.repetitions):
            r, d, p, _ = _run_cell_once(method, scene, cam, query, canonicals, plan)
            renders.append(r * 1e3)
            decodes.append(d * 1e3)
            posts.append(p * 1e3)
    except ResourceLimitError:
        return BenchRecord(
            method=method, L=l, K=k, levels=levels,
            height=plan.image_size, width=plan.image_size,
            render_ms=float("nan"), decode_ms=float("nan"), post_ms=float("nan"),
            iqr_ms=float("nan"), oom=True,
        )
    q25, q75 = np.percentile(renders, [25, 75])
    return BenchRecord(
        method=method, L=l, K=k, levels=levels,
        height=plan.image_size, width=plan.image_size,
        render_ms=float(np.median(renders)),
        decode_ms=float(np.median(decodes)),
        post_ms=float(np.median(posts)),
        iqr_ms=float(q75 - q25),
    )


def run_benchmark(plan: BenchPlan, *, progress=None) -> list[BenchRecord]:
    """Time every (method, L, K) cell of the plan, serially."""
    records = []
    for method, l, k, levels in plan.cells():
        if progress:
            progress(f"cell method={method} L={l} K={k} levels={levels}")
        records.append(run_cell(plan, method, l, k, levels))
    return records


CSV_SCHEMA = "method,L,K,levels,H,W,render_ms,decode_ms,post_ms,iqr_ms"


def machine_header(workers: int = 1) -> list[str]:
    return [
        f"# machine: {platform.platform()}",
        f"# python: {platform.python_version()}  numpy: {np.__version__}",
        f"# workers: {workers}",
    ]


def records_to_csv(records, workers: int = 1) -> str:
    lines = machine_header(workers) + [CSV_SCHEMA]
    for r in records:
        if r.oom:
            cells = [r.method, r.L, r.K, r.levels, r.height, r.width, "OOM", "OOM", "OOM", "OOM"]
        else:
            cells = [
                r.method, r.L, r.K, r.levels, r.height, r.width,
                f"{r.render_ms:.4f}", f"{r.decode_ms:.4f}", f"{r.post_ms:.4f}",
                f"{r.iqr_ms:.4f}",
            ]
        lines.append(",".join(str(c) for c in cells))
    return "\n".join(lines) + "\n"


@dataclass
class SpeedupReport:
    comparable: bool
    passed: bool = False
    ratio: float | None = None
    sparse_total_ms: float | None = None
    dense_total_ms: float | None = None
    message: str = ""


def verify_speedup(records, *, L: int = 64, K: int = 4, levels: int = 3) -> SpeedupReport:
    """Compare the sparse query path against the dense comparator at one config."""
    def find(method):
        hits = [
            r for r in records
            if r.method == method and r.L == L and r.K == K and r.levels == levels
            and not r.oom
        ]
        return hits[0] if hits else None

    sparse = find("sparse")
    dense = find("dense")
    if sparse is None and dense is None:
        raise ValidationError(
            f"no records at L={L}, K={K}, levels={levels}; run the speedup comparison cells"
        )
    if sparse is None or dense is None:
        return SpeedupReport(
            comparable=False,
            message="incomparable: only one method present at the requested config",
        )
    ratio = dense.total_ms() / sparse.total_ms()
    passed = sparse.total_ms() < dense.total_ms()
    return SpeedupReport(
        comparable=True,
        passed=passed,
        ratio=ratio,
        sparse_total_ms=sparse.total_ms(),
        dense_total_ms=dense.total_ms(),
        message=(
            f"sparse {sparse.total_ms():.2f} ms vs dense {dense.total_ms():.2f} ms "
            f"({ratio:.1f}x)" if passed else
            f"sparse path is NOT faster: {sparse.total_ms():.2f} ms vs "
            f"{dense.total_ms():.2f} ms"
        ),
    )


# ---------------------------------------------------------------------------
# SVG chart (hand-emitted; no plotting dependency)

_SVG_W, _SVG_H = 640, 420
_MARGIN = 60
_COLORS = {"dense": "#d62728", "sparse": "#1f77b4"}


def render_chart_svg(records) -> str:
    """Median render time vs L, one polyline per method, log-scaled y."""
    usable = [r for r in records if not r.oom]
    if not usable:
        return "<svg xmlns='http://www.w3.org/2000/svg'><text>no data</text></svg>"
    ls = sorted({r.L for r in usable})
    times = [r.render_ms for r in usable]
    y_lo, y_hi = min(times) * 0.8, max(times) * 1.25
    x_lo, x_hi = min(ls) * 0.9, max(ls) * 1.1

    def sx(l):
        t = (np.log(l) - np.log(x_lo)) / (np.log(x_hi) - np.log(x_lo))
        return _MARGIN + t * (_SVG_W - 2 * _MARGIN)

    def sy(ms):
        t = (np.log(ms) - np.log(y_lo)) / (np.log(y_hi) - np.log(y_lo))
        return _SVG_H - _MARGIN - t * (_SVG_H - 2 * _MARGIN)

    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{_SVG_W}' height='{_SVG_H}' "
        f"font-family='sans-serif' font-size='12'>",
        f"<rect width='{_SVG_W}' height='{_SVG_H}' fill='white'/>",
        f"<line x1='{_MARGIN}' y1='{_SVG_H - _MARGIN}' x2='{_SVG_W - _MARGIN}' "
        f"y2='{_SVG_H - _MARGIN}' stroke='black'/>",
        f"<line x1='{_MARGIN}' y1='{_MARGIN}' x2='{_MARGIN}' y2='{_SVG_H - _MARGIN}' "
        f"stroke='black'/>",
        f"<text x='{_SVG_W / 2}' y='{_SVG_H - 16}' text-anchor='middle'>"
        f"coefficient channels L (log)</text>",
        f"<text x='16' y='{_SVG_H / 2}' transform='rotate(-90 16 {_SVG_H / 2})' "
        f"text-anchor='middle'>median render time, ms (log)</text>",
    ]
    for l in ls:
        parts.append(
            f"<text x='{sx(l):.1f}' y='{_SVG_H - _MARGIN + 16}' "
            f"text-anchor='middle'>{l}</text>"
        )
    for method in sorted({r.method for r in usable}):
        pts = sorted(
            [(r.L, r.render_ms) for r in usable if r.method == method], key=lambda p: p[0]
        )
        color = _COLORS.get(method, "#2ca02c")
        path = " ".join(f"{sx(l):.1f},{sy(ms):.1f}" for l, ms in pts)
        parts.append(
            f"<polyline points='{path}' fill='none' stroke='{color}' stroke-width='2'/>"
        )
        for l, ms in pts:
            parts.append(
                f"<circle cx='{sx(l):.1f}' cy='{sy(ms):.1f}' r='3' fill='{color}'/>"
            )
        y_label = sy(pts[-1][1])
        parts.append(
            f"<text x='{_SVG_W - _MARGIN + 6}' y='{y_label:.1f}' fill='{color}'>"
            f"{method}</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts)
