"""Per-criterion detection sources and the rule layer above them.

Three interchangeable source kinds stand in for trained models:

* ``oracle_annotation`` -- scores straight from a ground-truth annotation file
  (probability 1.0 on any window intersecting an annotated object);
* ``external_scores`` -- cached probabilities produced elsewhere, keyed by
  (slide, rect); silent gaps are a hard error;
* ``synthetic_heuristic`` -- documented pixel statistics that let the full
  pipeline run from pixels alone. These are non-clinical stand-ins.

On top of the sources sit the published rules: strict probability cutoffs,
non-maximum suppression, nuclei counting, the Ki-67 proliferation index, the
small-cell top-10 recommendation, and the tumor/brain/background split.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

from .config import ThresholdTable
from .core import CriterionKind, Detection, Rect
from .errors import (
    ContractError,
    MissingInputError,
    MissingScoreError,
    SchemaViolationError,
)
from .tiler import PatchRef


class DetectorKind(str, Enum):
    ORACLE_ANNOTATION = "oracle_annotation"
    EXTERNAL_SCORES = "external_scores"
    SYNTHETIC_HEURISTIC = "synthetic_heuristic"


@dataclass(frozen=True)
class DetectorBinding:
    criterion: CriterionKind
    kind: DetectorKind
    source_path: str


@dataclass(frozen=True)
class RawScore:
    patch: PatchRef
    prob: float
    saliency_ref: str | None = None
    #: In-memory saliency raster (oracle bindings); persisted by the pipeline.
    saliency_raster: np.ndarray | None = None


@dataclass(frozen=True)
class NucleiResult:
    patch: PatchRef
    count: int
    centroids: tuple[tuple[int, int], ...]
    #: Per-centroid polarity for Ki-67 patches ("positive"/"negative").
    polarity: tuple[str, ...] = ()

    def __post_init__(self):
        if self.count != len(self.centroids):
            raise SchemaViolationError("nuclei count must equal len(centroids)")

    @property
    def positive_count(self) -> int:
        return sum(1 for p in self.polarity if p == "positive")

    @property
    def negative_count(self) -> int:
        return sum(1 for p in self.polarity if p == "negative")


# ---------------------------------------------------------------------------
# Annotation files (oracle input)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotationObject:
    criterion: CriterionKind
    bbox: Rect | None
    point: tuple[int, int] | None
    label: str

    def centroid(self) -> tuple[int, int]:
        if self.point is not None:
            return self.point
        assert self.bbox is not None
        return self.bbox.center()

    def intersects(self, rect: Rect) -> bool:
        if self.bbox is not None:
            return rect.intersects(self.bbox)
        return rect.contains_point(*self.point)


def _parse_annotation_entry(obj: dict) -> tuple[str, list[AnnotationObject]]:
    slide_id = obj.get("slide_id")
    if not isinstance(slide_id, str):
        raise SchemaViolationError("annotation entry missing slide_id")
    parsed = []
    for raw in obj.get("objects", []):
        try:
            criterion = CriterionKind(raw["criterion"])
        except (KeyError, ValueError) as exc:
            raise SchemaViolationError(f"annotation object has bad criterion: {raw!r}") from exc
        bbox = Rect.from_json(raw["bbox"]) if "bbox" in raw else None
        point = None
        if "point" in raw:
            point = (int(raw["point"]["x"]), int(raw["point"]["y"]))
        if bbox is None and point is None:
            raise SchemaViolationError(f"annotation object needs bbox or point: {raw!r}")
        parsed.append(
            AnnotationObject(criterion=criterion, bbox=bbox, point=point, label=str(raw.get("label", "")))
        )
    return slide_id, parsed


@lru_cache(maxsize=32)
def load_annotations(path: str) -> dict[str, tuple[AnnotationObject, ...]]:
    """Load an oracle annotation file: one slide entry or a list of them."""
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"annotation file not found: {p}")
    data = json.loads(p.read_text())
    entries = data if isinstance(data, list) else [data]
    out: dict[str, list[AnnotationObject]] = {}
    for entry in entries:
        slide_id, objects = _parse_annotation_entry(entry)
        out.setdefault(slide_id, []).extend(objects)
    return {k: tuple(v) for k, v in out.items()}


@lru_cache(maxsize=128)
def criterion_objects(
    path: str, slide_id: str, criterion: CriterionKind
) -> tuple[AnnotationObject, ...]:
    """Annotated objects of one criterion on one slide (cached; keeps window
    scoring proportional to the criterion's own object count)."""
    return tuple(
        o for o in load_annotations(path).get(slide_id, ()) if o.criterion == criterion
    )


@lru_cache(maxsize=128)
def criterion_points(
    path: str, slide_id: str, criterion: CriterionKind
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Centroids (N x 2 array) and labels of one criterion's objects, for
    vectorized point-in-rect queries over large point sets."""
    objs = criterion_objects(path, slide_id, criterion)
    if not objs:
        return np.empty((0, 2), dtype=np.int64), ()
    pts = np.array([o.centroid() for o in objs], dtype=np.int64)
    return pts, tuple(o.label for o in objs)


@lru_cache(maxsize=32)
def _load_external_scores(path: str) -> dict[tuple, tuple[float, str | None]]:
    p = Path(path)
    if not p.is_file():
        raise MissingInputError(f"score file not found: {p}")
    table = {}
    for line in p.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        rect = Rect.from_json(obj["rect"])
        key = (obj["slide_id"], obj["criterion"], rect.x, rect.y, rect.w, rect.h)
        table[key] = (float(obj["prob"]), obj.get("saliency_path"))
    return table


# ---------------------------------------------------------------------------
# Saliency (consumed, never computed from a model)
# ---------------------------------------------------------------------------


def gaussian_saliency(rect: Rect, centroid: tuple[int, int], out_px: int = 0) -> np.ndarray:
    """Single-channel Gaussian bump over a detection tile, centered on the
    annotated object, sigma = side/6. Values scaled to uint8."""
    side = rect.w
    size = out_px or side
    scale = size / side
    cx = (centroid[0] - rect.x) * scale
    cy = (centroid[1] - rect.y) * scale
    sigma = size / 6.0
    ys, xs = np.mgrid[0:size, 0:size]
    g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma * sigma))
    return np.round(g * 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def score_patches(
    binding: DetectorBinding,
    patches: Iterable[PatchRef],
    pixels: Iterable[np.ndarray] | None = None,
) -> Iterator[RawScore]:
    """One score per patch, in input order.

    `pixels` must accompany `patches` for synthetic_heuristic bindings; the
    other kinds work from geometry or cached values alone.
    """
    if binding.kind == DetectorKind.ORACLE_ANNOTATION:
        for patch in patches:
            objs = [
                o
                for o in criterion_objects(
                    binding.source_path, patch.slide_id, binding.criterion
                )
                if o.intersects(patch.rect)
            ]
            if objs:
                yield RawScore(
                    patch=patch,
                    prob=1.0,
                    saliency_raster=gaussian_saliency(patch.rect, objs[0].centroid(), out_px=96),
                )
            else:
                yield RawScore(patch=patch, prob=0.0)
    elif binding.kind == DetectorKind.EXTERNAL_SCORES:
        table = _load_external_scores(binding.source_path)
        for patch in patches:
            r = patch.rect
            key = (patch.slide_id, binding.criterion.value, r.x, r.y, r.w, r.h)
            if key not in table:
                raise MissingScoreError(
                    f"no cached score for {binding.criterion.value} at "
                    f"{patch.slide_id}:{r.x},{r.y},{r.w},{r.h}"
                )
            prob, saliency = table[key]
            yield RawScore(patch=patch, prob=prob, saliency_ref=saliency)
    elif binding.kind == DetectorKind.SYNTHETIC_HEURISTIC:
        if pixels is None:
            raise ContractError("synthetic_heuristic scoring requires pixel data")
        for patch, raster in zip(patches, pixels):
            yield RawScore(patch=patch, prob=_heuristic_score(binding.criterion, raster))
    else:  # pragma: no cover
        raise ContractError(f"unknown detector kind {binding.kind}")


def _heuristic_score(criterion: CriterionKind, raster: np.ndarray) -> float:
    lum = raster.astype(np.float64).mean(axis=2)
    if criterion == CriterionKind.MITOTIC_COUNT:
        # dark-blob compactness: saturating in the dark fraction, weighted by
        # how much of it sits in the single largest blob
        dark = lum < 110
        frac = dark.mean()
        if frac == 0:
            return 0.0
        labels, n = ndimage.label(dark)
        largest = np.bincount(labels.ravel())[1:].max() if n else 0
        compact = largest / dark.sum()
        return float(min(1.0, (1.0 - math.exp(-frac * 400.0)) * compact))
    if criterion == CriterionKind.NECROSIS:
        mx = raster.max(axis=2).astype(np.float64)
        mn = raster.min(axis=2).astype(np.float64)
        sat = np.where(mx > 0, (mx - mn) / np.maximum(mx, 1), 0.0)
        return float(((sat < 0.08) & (lum < 245)).mean())
    if criterion == CriterionKind.SHEETING:
        # texture loss: smooth sheets have low luminance spread
        return float(math.exp(-lum.std() / 4.0))
    if criterion == CriterionKind.PROMINENT_NUCLEOLI:
        frac = (lum < 60).mean()
        return float(min(1.0, frac / 0.003))
    raise ContractError(f"no synthetic heuristic for {criterion.value}")


def apply_threshold(score: RawScore, table: ThresholdTable) -> bool:
    """Strict greater-than positivity test for the score's criterion."""
    cutoff = table.probability_threshold(score.patch.criterion_family)
    return score.prob > cutoff


def confidence_level(prob: float, criterion: CriterionKind, table: ThresholdTable, high: float = 0.90) -> str:
    """Confidence band for a detection: High at or above `high`, else Medium.

    Only defined for probabilities strictly above the criterion's detection
    threshold (anything else is not a detection).
    """
    cutoff = table.probability_threshold(criterion)
    if prob <= cutoff:
        raise ContractError(
            f"prob {prob} does not exceed the {criterion.value} threshold {cutoff}"
        )
    return "High" if prob >= high else "Medium"


# ---------------------------------------------------------------------------
# Non-maximum suppression
# ---------------------------------------------------------------------------


def nms(detections: list[Detection], iou_threshold: float = 0.25) -> list[Detection]:
    """Greedy descending-probability suppression.

    Ties are broken by (y, x, detection_id), which makes the result a function
    of the input set, independent of ordering. A candidate is dropped when its
    IoU with any kept box strictly exceeds the threshold; the output is sorted
    by probability descending.
    """
    from .core import iou as rect_iou

    if detections:
        slide_ids = {d.slide_id for d in detections}
        criteria = {d.criterion for d in detections}
        if len(slide_ids) > 1 or len(criteria) > 1:
            raise ContractError("nms expects detections from one slide and one criterion")
    ordered = sorted(
        detections, key=lambda d: (-d.prob, d.bbox.y, d.bbox.x, d.detection_id)
    )
    kept: list[Detection] = []
    for cand in ordered:
        if all(rect_iou(cand.bbox, k.bbox) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# Nuclei counting
# ---------------------------------------------------------------------------


def count_nuclei(
    binding: DetectorBinding, patch: PatchRef, raster: np.ndarray | None = None
) -> NucleiResult:
    """Count nuclei in one patch from the bound source.

    Oracle bindings read annotation points; the synthetic counter segments
    dark blobs (planted nuclei are separated by construction, so component
    counting is exact on generated slides).
    """
    if binding.kind == DetectorKind.ORACLE_ANNOTATION:
        all_pts, all_labels = criterion_points(
            binding.source_path, patch.slide_id, binding.criterion
        )
        r = patch.rect
        if len(all_pts):
            inside = (
                (all_pts[:, 0] >= r.x)
                & (all_pts[:, 0] < r.x2)
                & (all_pts[:, 1] >= r.y)
                & (all_pts[:, 1] < r.y2)
            )
            idx = np.flatnonzero(inside)
        else:
            idx = []
        pts = [(int(all_pts[i, 0]), int(all_pts[i, 1])) for i in idx]
        labels = [all_labels[i] for i in idx]
        polarity = tuple(l for l in labels if l in ("positive", "negative"))
        if polarity and len(polarity) != len(pts):
            polarity = tuple(
                l if l in ("positive", "negative") else "negative" for l in labels
            )
        return NucleiResult(
            patch=patch, count=len(pts), centroids=tuple(pts), polarity=polarity
        )
    if binding.kind == DetectorKind.SYNTHETIC_HEURISTIC:
        if raster is None:
            raise ContractError("synthetic nuclei counting requires pixel data")
        return _count_blobs(patch, raster, classify_polarity=binding.criterion == CriterionKind.KI67_INDEX)
    raise ContractError(f"nuclei counting is not defined for {binding.kind.value} bindings")


def _count_blobs(patch: PatchRef, raster: np.ndarray, classify_polarity: bool) -> NucleiResult:
    lum = raster.astype(np.float64).mean(axis=2)
    mask = lum < 170
    labels, n = ndimage.label(mask)
    if n == 0:
        return NucleiResult(patch=patch, count=0, centroids=())
    sizes = np.bincount(labels.ravel())
    keep = [i for i in range(1, n + 1) if sizes[i] >= 12]
    centers = ndimage.center_of_mass(mask, labels, keep) if keep else []
    centroids = []
    polarity = []
    for idx, (cy, cx) in zip(keep, centers):
        px = patch.rect.x + int(round(cx))
        py = patch.rect.y + int(round(cy))
        centroids.append((px, py))
        if classify_polarity:
            sel = labels == idx
            mean_rgb = raster[sel].mean(axis=0)
            polarity.append("positive" if mean_rgb[0] > mean_rgb[2] else "negative")
    return NucleiResult(
        patch=patch,
        count=len(centroids),
        centroids=tuple(centroids),
        polarity=tuple(polarity),
    )


# ---------------------------------------------------------------------------
# Rule layer
# ---------------------------------------------------------------------------


def ki67_index(positive_count: int, negative_count: int) -> Fraction | None:
    """Proliferation index as an exact rational percent; None when no nuclei
    were counted (never a division by zero)."""
    if positive_count < 0 or negative_count < 0:
        raise ContractError("nucleus counts must be non-negative")
    total = positive_count + negative_count
    if total == 0:
        return None
    return Fraction(positive_count * 100, total)


def format_percent(value: Fraction | float | None) -> str | None:
    """Render a percent value to one decimal place."""
    if value is None:
        return None
    return f"{float(value):.1f}"


def classify_region_type(nuclei_count: int, table: ThresholdTable | None = None) -> str:
    """Tumor / brain / background split by per-patch nuclei count."""
    t = table or ThresholdTable()
    if nuclei_count < 0:
        raise ContractError("nuclei count must be non-negative")
    if nuclei_count > t.tumor_min_nuclei:
        return "tumor"
    lo, hi = t.brain_range
    if lo <= nuclei_count <= hi:
        return "brain"
    return "background"
