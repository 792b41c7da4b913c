"""Relevancy scoring and post-processing of rendered feature maps.

A query is scored per pixel against a set of canonical embeddings:

    score = min over canonicals c of  exp(f.q) / (exp(f.q) + exp(f.c))

i.e. the worst pairwise two-way softmax between the query logit and each
canonical logit. Scores are smoothed with a box mean filter, the semantic
level with the strongest filtered response is selected, and localization /
segmentation read the result off that map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class QueryEmbedding:
    """A named query vector in the scene's feature space."""

    name: str
    vector: np.ndarray  # (D,)
    canonical_set_id: str = "default"  # which canonical set scores this query

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        object.__setattr__(self, "vector", v)
        if v.ndim != 1:
            raise ValidationError("query vector must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValidationError("query vector must be finite")


@dataclass
class RelevancyMap:
    """H x W scalar score grid plus provenance."""

    data: np.ndarray  # (H, W) float64
    query: str
    level: int
    filtered: bool = False
    window: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValidationError("relevancy map must be 2-D")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow for large negative logit differences
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relevancy_map(
    features: np.ndarray, q: QueryEmbedding, canonicals, *, level: int = 0
) -> RelevancyMap:
    """Per-pixel min-over-canonicals pairwise softmax score of one query."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise ValidationError("features must be H x W x D")
    d = features.shape[2]
    canon = np.asarray(canonicals, dtype=np.float64)
    if canon.ndim != 2 or canon.shape[0] < 1:
        raise ValidationError("at least one canonical D-vector is required")
    if canon.shape[1] != d or q.vector.shape[0] != d:
        raise ValidationError(
            f"dimension mismatch: features D={d}, query D={q.vector.shape[0]}, "
            f"canonicals D={canon.shape[1]}"
        )
    q_logit = features @ q.vector  # (H, W)
    c_logit = features @ canon.T  # (H, W, n_canon)
    score = _sigmoid(q_logit[:, :, None] - c_logit).min(axis=2)
    return RelevancyMap(data=score, query=q.name, level=level)


def mean_filter(m: RelevancyMap, window: int) -> RelevancyMap:
    """Box filter with edge-clamped borders; window 1 is the identity."""
    if window < 1 or window % 2 == 0:
        raise ValidationError(f"filter window must be odd and >= 1, got {window}")
    if window == 1:
        return RelevancyMap(m.data.copy(), m.query, m.level, filtered=True, window=1)
    r = window // 2
    padded = np.pad(m.data, r, mode="edge")
    # integral image: window sum via four corner lookups
    integral = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=integral[1:, 1:])
    h, w = m.data.shape
    sums = (
        integral[window : window + h, window : window + w]
        - integral[:h, window : window + w]
        - integral[window : window + h, :w]
        + integral[:h, :w]
    )
    return RelevancyMap(
        data=sums / float(window * window), query=m.query, level=m.level,
        filtered=True, window=window,
    )


def select_level(maps) -> tuple[int, RelevancyMap]:
    """Level whose map has the highest maximum score; ties to the lowest level."""
    maps = list(maps)
    if not maps:
        raise ValidationError("at least one level map is required")
    maxima = np.array([float(m.data.max()) for m in maps])
    level = int(np.argmax(maxima))  # argmax returns the first (lowest) on ties
    return level, maps[level]


def localize(m: RelevancyMap) -> tuple[int, int]:
    """(row, col) of the maximum score; ties to smallest row, then column."""
    if m.data.size == 0:
        raise ValidationError("cannot localize an empty map")
    row, col = np.unravel_index(int(np.argmax(m.data)), m.data.shape)
    return int(row), int(col)


@dataclass
class SegmentationResult:
    mask: np.ndarray  # (H, W) bool
    threshold: float
    degenerate: bool  # constant map: normalization undefined, mask empty


def segment(m: RelevancyMap, threshold: float = 0.5) -> SegmentationResult:
    """Binary mask of min-max normalized scores above the threshold."""
    lo = float(m.data.min())
    hi = float(m.data.max())
    if hi <= lo:
        return SegmentationResult(
            mask=np.zeros(m.data.shape, dtype=bool), threshold=threshold, degenerate=True
        )
    normalized = (m.data - lo) / (hi - lo)
    return SegmentationResult(mask=normalized > threshold, threshold=threshold, degenerate=False)


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run-length encoding; counts start with the leading-zero run."""
    mask = np.asarray(mask, dtype=bool)
    flat = mask.ravel()
    if flat.size == 0:
        return {"size": list(mask.shape), "counts": []}
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": list(mask.shape), "counts": counts}


def rle_decode(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for count in rle["counts"]:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    if pos != h * w:
        raise ValidationError(f"RLE covers {pos} pixels, mask has {h * w}")
    return flat.reshape(h, w)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; empty vs empty is 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
