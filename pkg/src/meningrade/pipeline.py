"""Offline case processing: tiling, detection, aggregation, grading, artifacts.

The heavy loop fans base-patch work across processes; results are merged back
in planned task order, so outputs are byte-identical for any worker count.
Everything derived (region samples, evidence, snapshot, grade) is recomputed
by `derive_assessment`, which the review session reuses after every action.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image

from .aggregator import (
    CountGrid,
    EvidenceInputs,
    EvidenceItem,
    RegionSample,
    SampleKind,
    brain_boundary_patches,
    build_count_grid,
    highest_focal_region,
    highest_ki67_region,
    highest_region,
    hypercellularity_hotspots,
    members_in,
    recommend_small_cell,
    render_heatmap,
    sample_evidence,
)
from .config import (
    BASE_HE_SPEC,
    KI67_SPEC,
    MITOSIS_SPEC,
    NUCLEOLI_SPEC,
    SHEETING_SPEC,
    EngineConfig,
    config_from_json,
)
from .core import (
    CaseManifest,
    CriterionKind,
    Detection,
    DetectionStatus,
    FIVE_FEATURES,
    Rect,
    detection_id_for,
    manifest_from_json,
)
from .detectors import (
    DetectorBinding,
    DetectorKind,
    classify_region_type,
    confidence_level,
    count_nuclei,
    gaussian_saliency,
    ki67_index,
    nms,
    score_patches,
)
from .errors import MissingInputError, SchemaViolationError
from .grader import (
    CriteriaSnapshot,
    CriterionState,
    FiredRule,
    Grade,
    GradeResult,
    ReviewSummary,
    Subtype,
    Suggestion,
    compute_grade,
)
from .tiler import (
    Case,
    PatchRef,
    enclosing_base_patch,
    is_background,
    iter_windows,
    open_case,
    read_region,
    resize_patch,
)

MODEL_CRITERIA = (
    CriterionKind.MITOTIC_COUNT,
    CriterionKind.NECROSIS,
    CriterionKind.SHEETING,
    CriterionKind.PROMINENT_NUCLEOLI,
    CriterionKind.HYPERCELLULARITY,
    CriterionKind.KI67_INDEX,
)


def load_bindings(path: str | Path) -> dict[CriterionKind, DetectorBinding]:
    """Load the bindings file; source paths resolve relative to it. All six
    model-backed criteria must be bound exactly once."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"bindings file not found: {path}")
    raw = json.loads(path.read_text())
    out: dict[CriterionKind, DetectorBinding] = {}
    for entry in raw.get("bindings", []):
        criterion = CriterionKind(entry["criterion"])
        if criterion in out:
            raise SchemaViolationError(f"duplicate binding for {criterion.value}")
        src = Path(entry["source_path"])
        if not src.is_absolute():
            src = path.parent / src
        out[criterion] = DetectorBinding(
            criterion=criterion,
            kind=DetectorKind(entry["kind"]),
            source_path=str(src),
        )
    missing = [c.value for c in MODEL_CRITERIA if c not in out]
    if missing:
        raise SchemaViolationError(f"missing bindings for: {', '.join(missing)}")
    return out


# ---------------------------------------------------------------------------
# Worker tasks (module level so they pickle for the process pool)
# ---------------------------------------------------------------------------


def _score_one(binding, patch, raster=None):
    pixels = [raster] if raster is not None else None
    return next(iter(score_patches(binding, [patch], pixels)))


def _saliency_info(score) -> tuple | None:
    if score.saliency_raster is not None:
        # oracle bump: regenerate at write time from geometry
        return None
    if score.saliency_ref is not None:
        return ("ref", score.saliency_ref)
    return None


def _scale_rect(r: Rect, factor: int) -> tuple[int, int, int, int]:
    return (r.x * factor, r.y * factor, r.w * factor, r.h * factor)


def _run_base_patch(task: dict) -> dict:
    """Process one 512-px H&E base patch: background test, mitosis and
    nucleoli sub-tiling, necrosis scoring, nuclei counting.

    Sub-tiles inherit the parent patch's background verdict. `rect_level` is
    the window in the read level's pixels; emitted rects are level-0.
    """
    slide = task["slide"]
    factor = task["factor"]
    rect_l = Rect(*task["rect_level"])
    bindings = task["bindings"]
    thresholds = task["thresholds"]
    raster = read_region(slide, rect_l, level=task["level"])
    if is_background(raster, task["background_mean"]):
        return {"rect": task["rect"], "background": True}
    out = {"rect": task["rect"], "background": False}
    slide_id = slide.meta.slide_id

    def subtile_scores(binding, spec, cutoff):
        positives = []
        for sub_l in iter_windows(rect_l, spec.window_px, spec.stride_px):
            sub0 = Rect(*_scale_rect(sub_l, factor))
            ref = PatchRef(slide_id, sub0, binding.criterion)
            crop = None
            if binding.kind == DetectorKind.SYNTHETIC_HEURISTIC:
                crop = raster[
                    sub_l.y - rect_l.y : sub_l.y2 - rect_l.y,
                    sub_l.x - rect_l.x : sub_l.x2 - rect_l.x,
                ]
            score = _score_one(binding, ref, crop)
            if score.prob > cutoff:
                positives.append(
                    (
                        (sub0.x, sub0.y, sub0.w, sub0.h),
                        score.prob,
                        _oracle_centroid(binding, ref),
                        _saliency_info(score),
                    )
                )
        return positives

    out["mitosis"] = subtile_scores(
        bindings[CriterionKind.MITOTIC_COUNT], MITOSIS_SPEC, thresholds.mitosis
    )
    out["nucleoli"] = subtile_scores(
        bindings[CriterionKind.PROMINENT_NUCLEOLI], NUCLEOLI_SPEC, thresholds.prominent_nucleoli
    )

    necrosis = bindings[CriterionKind.NECROSIS]
    rect0 = Rect(*task["rect"])
    ref = PatchRef(slide_id, rect0, CriterionKind.NECROSIS)
    score = _score_one(
        necrosis,
        ref,
        raster if necrosis.kind == DetectorKind.SYNTHETIC_HEURISTIC else None,
    )
    out["necrosis"] = (
        (task["rect"], score.prob, _oracle_centroid(necrosis, ref), _saliency_info(score))
        if score.prob > thresholds.necrosis
        else None
    )

    hyper = bindings[CriterionKind.HYPERCELLULARITY]
    ref = PatchRef(slide_id, rect0, CriterionKind.HYPERCELLULARITY)
    result = count_nuclei(
        hyper, ref, raster if hyper.kind == DetectorKind.SYNTHETIC_HEURISTIC else None
    )
    out["nuclei_count"] = result.count
    return out


def _oracle_centroid(binding, patch_ref) -> tuple[int, int] | None:
    if binding.kind != DetectorKind.ORACLE_ANNOTATION:
        return None
    from .detectors import criterion_objects

    for obj in criterion_objects(binding.source_path, patch_ref.slide_id, binding.criterion):
        if obj.intersects(patch_ref.rect):
            return obj.centroid()
    return None


def _run_sheeting_patch(task: dict) -> dict:
    slide = task["slide"]
    rect_l = Rect(*task["rect_level"])
    binding = task["binding"]
    raster = read_region(slide, rect_l, level=task["level"])
    if is_background(raster, task["background_mean"]):
        return {"rect": task["rect"], "background": True}
    ref = PatchRef(slide.meta.slide_id, Rect(*task["rect"]), CriterionKind.SHEETING)
    crop = None
    if binding.kind == DetectorKind.SYNTHETIC_HEURISTIC:
        crop = resize_patch(raster, SHEETING_SPEC.resize_to)
    score = _score_one(binding, ref, crop)
    positive = score.prob > task["thresholds"].sheeting
    return {
        "rect": task["rect"],
        "background": False,
        "positive": (task["rect"], score.prob, _oracle_centroid(binding, ref), _saliency_info(score))
        if positive
        else None,
    }


def _run_ki67_patch(task: dict) -> dict:
    slide = task["slide"]
    rect_l = Rect(*task["rect_level"])
    binding = task["binding"]
    raster = read_region(slide, rect_l, level=task["level"])
    if is_background(raster, task["background_mean"]):
        return {"rect": task["rect"], "background": True}
    ref = PatchRef(slide.meta.slide_id, Rect(*task["rect"]), CriterionKind.KI67_INDEX)
    result = count_nuclei(
        binding, ref, raster if binding.kind == DetectorKind.SYNTHETIC_HEURISTIC else None
    )
    return {
        "rect": task["rect"],
        "background": False,
        "positive": result.positive_count,
        "negative": result.negative_count,
    }


# ---------------------------------------------------------------------------
# Nuclei data shared between the pipeline and the review session
# ---------------------------------------------------------------------------


@dataclass
class NucleiData:
    #: Per H&E slide: (patch, nuclei count) in patch-stream order.
    he: dict[str, list[tuple[PatchRef, int]]] = field(default_factory=dict)
    #: Per Ki-67 slide: (patch, positive, negative) in patch-stream order.
    ki67: dict[str, list[tuple[PatchRef, int, int]]] = field(default_factory=dict)


@dataclass
class Assessment:
    """Everything derived from detections + nuclei data for one case."""

    snapshot: CriteriaSnapshot
    grade: GradeResult
    mitosis_samples: dict[str, tuple[RegionSample, RegionSample]]
    ki67_samples: dict[str, tuple[RegionSample, RegionSample]]
    mitosis_slide: str | None
    evidence: dict[CriterionKind, list[EvidenceItem]]

    def regions_json(self) -> dict:
        samples = []
        for slide_id, (region, focal) in sorted(self.mitosis_samples.items()):
            for s in (region, focal):
                samples.append({"criterion": CriterionKind.MITOTIC_COUNT.value, **s.to_json()})
        for slide_id, (region, focal) in sorted(self.ki67_samples.items()):
            for s in (region, focal):
                samples.append({"criterion": CriterionKind.KI67_INDEX.value, **s.to_json()})
        return {
            "mitotic_count_10hpf": self.snapshot.mitotic_count_10hpf,
            "mitosis_slide": self.mitosis_slide,
            "samples": samples,
        }

    def evidence_json(self) -> dict:
        return {
            kind.value: [item.to_json() for item in items]
            for kind, items in self.evidence.items()
        }


def _review_summary(dets: list[Detection]) -> ReviewSummary:
    tally = {s: 0 for s in DetectionStatus}
    for d in dets:
        tally[d.status] += 1
    return ReviewSummary(
        unreviewed=tally[DetectionStatus.UNREVIEWED],
        approved=tally[DetectionStatus.APPROVED],
        declined=tally[DetectionStatus.DECLINED],
        uncertain=tally[DetectionStatus.UNCERTAIN],
    )


def _patch_review_summary(ids: list[str], patch_review: dict[str, str]) -> ReviewSummary:
    tally = {"unreviewed": 0, "approved": 0, "declined": 0, "uncertain": 0}
    for eid in ids:
        tally[patch_review.get(eid, "unreviewed")] += 1
    return ReviewSummary(**tally)


def derive_assessment(
    manifest: CaseManifest,
    config: EngineConfig,
    detections: dict[str, Detection],
    nuclei: NucleiData,
    overrides: dict | None = None,
    patch_review: dict[str, str] | None = None,
) -> Assessment:
    """Recompute region samples, evidence, snapshot, and grade from the
    current detection statuses. Deterministic: identical inputs give
    identical outputs, including evidence order."""
    overrides = overrides or {}
    patch_review = patch_review or {}
    include_uncertain = config.count_uncertain_mitoses

    by_slide_crit: dict[tuple[str, CriterionKind], list[Detection]] = {}
    for d in sorted(detections.values(), key=lambda d: d.detection_id):
        by_slide_crit.setdefault((d.slide_id, d.criterion), []).append(d)

    def dets_for(criterion: CriterionKind) -> list[Detection]:
        out = []
        for slide in manifest.slides:
            out.extend(by_slide_crit.get((slide.slide_id, criterion), []))
        return out

    # -- mitosis sampling per H&E slide --------------------------------------
    mitosis_samples: dict[str, tuple[RegionSample, RegionSample]] = {}
    best: tuple[int, str] | None = None
    for slide in manifest.he_slides():
        slide_dets = by_slide_crit.get((slide.slide_id, CriterionKind.MITOTIC_COUNT), [])
        cell_px = config.cell_px(slide.mpp)
        grid = build_count_grid(
            slide_dets,
            cell_px,
            slide_id=slide.slide_id,
            bounds=slide.bounds,
            include_uncertain=include_uncertain,
        )
        region = highest_region(grid, config.cells_per_hpf, config.region_hpfs)
        focal = highest_focal_region(grid, config.cells_per_hpf)
        region = _with_members(region, slide_dets, include_uncertain)
        focal = _with_members(focal, slide_dets, include_uncertain)
        mitosis_samples[slide.slide_id] = (region, focal)
        value = int(region.value or 0)
        if best is None or value > best[0]:
            best = (value, slide.slide_id)
    mitotic_count = best[0] if best else 0
    mitosis_slide = best[1] if best else None

    # -- Ki-67 sampling per paired slide -------------------------------------
    ki67_samples: dict[str, tuple[RegionSample, RegionSample]] = {}
    ki67_patch_indexes: dict[str, list[tuple[PatchRef, Fraction]]] = {}
    for slide in manifest.ki67_slides():
        data = nuclei.ki67.get(slide.slide_id, [])
        cell_px = config.cell_px(slide.mpp)
        pos_grid = build_count_grid(
            [(p.rect.center(), pos) for p, pos, _neg in data],
            cell_px,
            slide_id=slide.slide_id,
            bounds=slide.bounds,
        )
        tot_grid = build_count_grid(
            [(p.rect.center(), pos + neg) for p, pos, neg in data],
            cell_px,
            slide_id=slide.slide_id,
            bounds=slide.bounds,
        )
        h = config.cells_per_hpf
        region = highest_ki67_region(
            pos_grid,
            tot_grid,
            (config.region_hpfs[0] * h, config.region_hpfs[1] * h),
            config.ki67_min_total,
            kind=SampleKind.REGION_10HPF,
        )
        focal = highest_ki67_region(
            pos_grid, tot_grid, h, config.ki67_min_total, kind=SampleKind.FOCAL_1HPF
        )
        ki67_samples[slide.slide_id] = (region, focal)
        ki67_patch_indexes[slide.slide_id] = [
            (p, ki67_index(pos, neg))
            for p, pos, neg in data
            if pos + neg > 0
        ]

    ki67_applicable = bool(ki67_samples)
    ki67_percent: float | None = None
    for slide_id in sorted(ki67_samples):
        region, focal = ki67_samples[slide_id]
        sample = region if region.applicable else focal
        if sample.applicable and sample.value is not None:
            value = round(float(sample.value), 1)
            if ki67_percent is None or value > ki67_percent:
                ki67_percent = value

    # -- rule-based recommenders ----------------------------------------------
    he_counts: list[tuple[PatchRef, int]] = []
    patch_types: dict[str, dict[tuple[int, int], str]] = {}
    for slide in manifest.he_slides():
        counts = nuclei.he.get(slide.slide_id, [])
        he_counts.extend(counts)
        patch_types[slide.slide_id] = {
            (p.rect.x, p.rect.y): classify_region_type(c, config.thresholds)
            for p, c in counts
        }
    recommended = recommend_small_cell(
        he_counts,
        top_k=config.thresholds.small_cell_top_k,
        min_nuclei=config.thresholds.small_cell_min_nuclei,
    )
    hotspots = hypercellularity_hotspots(he_counts, config.hotspot_k)
    boundary: list[tuple[tuple[int, int], int]] = []
    for slide in manifest.he_slides():
        counts = {
            (p.rect.x, p.rect.y): c for p, c in nuclei.he.get(slide.slide_id, [])
        }
        boundary.extend(
            brain_boundary_patches(patch_types[slide.slide_id], counts, BASE_HE_SPEC.window_px)
        )

    # -- evidence -------------------------------------------------------------
    bounds = {s.slide_id: s.bounds for s in manifest.slides}
    hpf_px = {s.slide_id: config.hpf_px(s.mpp) for s in manifest.slides}
    parent_patch: dict[str, Rect] = {}
    confidence: dict[str, str] = {}
    for d in detections.values():
        slide = manifest.slide(d.slide_id)
        node = next((n for n in slide.nodes if n.intersects(d.bbox)), slide.bounds)
        parent_patch[d.detection_id] = enclosing_base_patch(node, d.bbox)
        if d.criterion in (
            CriterionKind.MITOTIC_COUNT,
            CriterionKind.NECROSIS,
            CriterionKind.SHEETING,
            CriterionKind.PROMINENT_NUCLEOLI,
        ):
            try:
                confidence[d.detection_id] = confidence_level(
                    d.prob, d.criterion, config.thresholds, config.confidence_high
                )
            except Exception:
                confidence[d.detection_id] = "Medium"

    evidence: dict[CriterionKind, list[EvidenceItem]] = {}
    all_ki67_patches = []
    for slide_id in sorted(ki67_patch_indexes):
        all_ki67_patches.extend(ki67_patch_indexes[slide_id])
    for criterion in (
        CriterionKind.MITOTIC_COUNT,
        CriterionKind.KI67_INDEX,
        CriterionKind.HYPERCELLULARITY,
        CriterionKind.PROMINENT_NUCLEOLI,
        CriterionKind.SHEETING,
        CriterionKind.NECROSIS,
        CriterionKind.SMALL_CELL,
        CriterionKind.BRAIN_INVASION,
    ):
        mit_region, mit_focal = (None, None)
        ki_region, ki_focal = (None, None)
        if criterion == CriterionKind.MITOTIC_COUNT and mitosis_slide:
            mit_region, mit_focal = mitosis_samples[mitosis_slide]
        if criterion == CriterionKind.KI67_INDEX and ki67_samples:
            first = sorted(ki67_samples)[0]
            ki_region, ki_focal = ki67_samples[first]
        inputs = EvidenceInputs(
            detections=dets_for(criterion),
            region=mit_region if criterion == CriterionKind.MITOTIC_COUNT else ki_region,
            focal=mit_focal if criterion == CriterionKind.MITOTIC_COUNT else ki_focal,
            nuclei_counts=he_counts,
            recommended=recommended,
            hotspots=hotspots,
            boundary=boundary,
            ki67_patches=all_ki67_patches,
            parent_patch=parent_patch,
            slide_bounds=bounds,
            hpf_px=hpf_px,
            confidence=confidence,
        )
        evidence[criterion] = sample_evidence(criterion, inputs, config.evidence_n)

    # -- snapshot -------------------------------------------------------------
    def effective(dets: list[Detection]) -> list[Detection]:
        keep = [DetectionStatus.UNREVIEWED, DetectionStatus.APPROVED]
        return [d for d in dets if d.status in keep]

    def feature_state(kind: CriterionKind) -> CriterionState:
        if kind in (
            CriterionKind.NECROSIS,
            CriterionKind.SHEETING,
            CriterionKind.PROMINENT_NUCLEOLI,
        ):
            dets = dets_for(kind)
            suggestion = (
                Suggestion.PRESENT if effective(dets) else Suggestion.ABSENT
            )
            review = _review_summary(dets)
        elif kind == CriterionKind.HYPERCELLULARITY:
            suggestion = Suggestion.UNCONFIRMED
            review = _patch_review_summary(
                [e.evidence_id for e in evidence[kind]], patch_review
            )
        elif kind == CriterionKind.SMALL_CELL:
            suggestion = Suggestion.UNCONFIRMED if recommended else Suggestion.ABSENT
            review = _patch_review_summary(
                [e.evidence_id for e in evidence[kind]], patch_review
            )
        else:  # brain invasion
            suggestion = Suggestion.UNCONFIRMED if boundary else Suggestion.ABSENT
            review = _patch_review_summary(
                [e.evidence_id for e in evidence[kind]], patch_review
            )
        return CriterionState(
            kind=kind,
            ai_suggestion=suggestion,
            override=overrides.get(kind),
            review=review,
        )

    snapshot = CriteriaSnapshot(
        mitotic_count_10hpf=mitotic_count,
        feature_states=tuple(feature_state(k) for k in FIVE_FEATURES),
        brain_invasion=feature_state(CriterionKind.BRAIN_INVASION),
        ki67_percent=ki67_percent,
        ki67_applicable=ki67_applicable,
        ki67_override=overrides.get(CriterionKind.KI67_INDEX),
        subtype=overrides.get(CriterionKind.SUBTYPE, Subtype.OTHER),
        subtype_set=CriterionKind.SUBTYPE in overrides,
        mitosis_review=_review_summary(dets_for(CriterionKind.MITOTIC_COUNT)),
    )
    grade = compute_grade(snapshot)
    return Assessment(
        snapshot=snapshot,
        grade=grade,
        mitosis_samples=mitosis_samples,
        ki67_samples=ki67_samples,
        mitosis_slide=mitosis_slide,
        evidence=evidence,
    )


def _with_members(sample: RegionSample, dets: list[Detection], include_uncertain: bool) -> RegionSample:
    return replace(sample, member_detections=members_in(dets, sample.rect, include_uncertain))


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------


def build_heatmap_grids(
    manifest: CaseManifest,
    config: EngineConfig,
    detections: dict[str, Detection],
    nuclei: NucleiData,
) -> dict[tuple[str, CriterionKind], CountGrid]:
    grids: dict[tuple[str, CriterionKind], CountGrid] = {}
    by_slide_crit: dict[tuple[str, CriterionKind], list[Detection]] = {}
    for d in sorted(detections.values(), key=lambda d: d.detection_id):
        by_slide_crit.setdefault((d.slide_id, d.criterion), []).append(d)

    for slide in manifest.he_slides():
        cell_px = config.cell_px(slide.mpp)
        for criterion in (
            CriterionKind.MITOTIC_COUNT,
            CriterionKind.NECROSIS,
            CriterionKind.SHEETING,
            CriterionKind.PROMINENT_NUCLEOLI,
        ):
            grids[(slide.slide_id, criterion)] = build_count_grid(
                by_slide_crit.get((slide.slide_id, criterion), []),
                cell_px,
                slide_id=slide.slide_id,
                bounds=slide.bounds,
            )
        counts = nuclei.he.get(slide.slide_id, [])
        grids[(slide.slide_id, CriterionKind.HYPERCELLULARITY)] = build_count_grid(
            [(p.rect.center(), c) for p, c in counts],
            cell_px,
            slide_id=slide.slide_id,
            bounds=slide.bounds,
        )
        level = {"background": 0, "brain": 1, "tumor": 2}
        grids[(slide.slide_id, CriterionKind.BRAIN_INVASION)] = build_count_grid(
            [
                (p.rect.center(), level[classify_region_type(c, config.thresholds)])
                for p, c in counts
            ],
            cell_px,
            slide_id=slide.slide_id,
            bounds=slide.bounds,
        )
    for slide in manifest.ki67_slides():
        cell_px = config.cell_px(slide.mpp)
        data = nuclei.ki67.get(slide.slide_id, [])
        items = []
        for p, pos, neg in data:
            if pos + neg > 0:
                items.append((p.rect.center(), round(pos / (pos + neg) * 100, 1)))
        grids[(slide.slide_id, CriterionKind.KI67_INDEX)] = build_count_grid(
            items, cell_px, slide_id=slide.slide_id, bounds=slide.bounds
        )
    return grids


# ---------------------------------------------------------------------------
# Processing entry point
# ---------------------------------------------------------------------------


def process_case(
    manifest_path: str | Path,
    bindings_path: str | Path,
    out_dir: str | Path,
    workers: int = 1,
    config: EngineConfig | None = None,
) -> "ProcessedCase":
    """Run tiler -> detectors -> aggregator -> grader; write deterministic,
    idempotent artifacts under `out_dir`."""
    config = config or EngineConfig()
    out_dir = Path(out_dir)
    case = open_case(manifest_path)
    bindings = load_bindings(bindings_path)
    manifest = case.manifest

    base_tasks, sheeting_tasks, ki67_tasks = _plan_tasks(case, bindings, config)
    base_results = _run_tasks(_run_base_patch, base_tasks, workers)
    sheeting_results = _run_tasks(_run_sheeting_patch, sheeting_tasks, workers)
    ki67_results = _run_tasks(_run_ki67_patch, ki67_tasks, workers)

    detections: dict[str, Detection] = {}
    saliency_jobs: list[tuple[str, Rect, tuple[int, int]]] = []
    nuclei = NucleiData()

    def add_detections(slide_id: str, criterion: CriterionKind, raw: list) -> None:
        built = []
        for rect_t, prob, centroid, sal in raw:
            bbox = Rect(*rect_t)
            det_id = detection_id_for(slide_id, criterion, bbox)
            saliency_ref = None
            if centroid is not None:
                saliency_ref = f"saliency/{det_id.replace(':', '_')}.png"
                saliency_jobs.append((saliency_ref, bbox, centroid))
            elif sal is not None and sal[0] == "ref":
                saliency_ref = sal[1]
            built.append(
                Detection(
                    detection_id=det_id,
                    slide_id=slide_id,
                    criterion=criterion,
                    bbox=bbox,
                    prob=prob,
                    saliency_ref=saliency_ref,
                )
            )
        for d in nms(built, config.nms_iou):
            detections[d.detection_id] = d

    for slide_id, tasks, results in _group_by_slide(base_tasks, base_results):
        mitosis_raw, necrosis_raw, nucleoli_raw, counts = [], [], [], []
        for task, res in zip(tasks, results):
            if res["background"]:
                continue
            mitosis_raw.extend(res["mitosis"])
            if res["necrosis"]:
                necrosis_raw.append(res["necrosis"])
            nucleoli_raw.extend(res["nucleoli"])
            counts.append(
                (
                    PatchRef(slide_id, Rect(*res["rect"]), CriterionKind.HYPERCELLULARITY),
                    res["nuclei_count"],
                )
            )
        add_detections(slide_id, CriterionKind.MITOTIC_COUNT, mitosis_raw)
        add_detections(slide_id, CriterionKind.NECROSIS, necrosis_raw)
        add_detections(slide_id, CriterionKind.PROMINENT_NUCLEOLI, nucleoli_raw)
        nuclei.he[slide_id] = counts

    for slide_id, tasks, results in _group_by_slide(sheeting_tasks, sheeting_results):
        raw = [r["positive"] for r in results if not r["background"] and r["positive"]]
        add_detections(slide_id, CriterionKind.SHEETING, raw)

    for slide_id, tasks, results in _group_by_slide(ki67_tasks, ki67_results):
        data = []
        for task, res in zip(tasks, results):
            if res["background"]:
                continue
            data.append(
                (
                    PatchRef(slide_id, Rect(*res["rect"]), CriterionKind.KI67_INDEX),
                    res["positive"],
                    res["negative"],
                )
            )
        nuclei.ki67[slide_id] = data

    assessment = derive_assessment(manifest, config, detections, nuclei)
    grids = build_heatmap_grids(manifest, config, detections, nuclei)
    _write_artifacts(
        out_dir, manifest_path, case, config, detections, nuclei, assessment, grids, saliency_jobs
    )
    return load_processed_case(out_dir)


def _plan_tasks(case: Case, bindings, config: EngineConfig):
    thresholds = config.thresholds
    base_tasks, sheeting_tasks, ki67_tasks = [], [], []
    for meta in case.manifest.he_slides():
        slide = case.pyramid(meta.slide_id)
        level = slide.level_for_mpp(BASE_HE_SPEC.scale_mpp)
        factor = 1 << level
        for node in meta.nodes:
            level_node = _node_at_level(node, factor)
            if level_node is None:
                continue
            for win in iter_windows(level_node, BASE_HE_SPEC.window_px, BASE_HE_SPEC.stride_px):
                base_tasks.append(
                    {
                        "slide": slide,
                        "slide_id": meta.slide_id,
                        "rect": _scale_rect(win, factor),
                        "rect_level": (win.x, win.y, win.w, win.h),
                        "level": level,
                        "factor": factor,
                        "bindings": bindings,
                        "thresholds": thresholds,
                        "background_mean": config.background_mean,
                    }
                )
        sheet_level = _maybe_level(slide, SHEETING_SPEC.scale_mpp)
        if sheet_level is not None:
            factor = 1 << sheet_level
            for node in meta.nodes:
                level_node = _node_at_level(node, factor)
                if level_node is None:
                    continue
                for win in iter_windows(level_node, SHEETING_SPEC.window_px, SHEETING_SPEC.stride_px):
                    sheeting_tasks.append(
                        {
                            "slide": slide,
                            "slide_id": meta.slide_id,
                            "rect": _scale_rect(win, factor),
                            "rect_level": (win.x, win.y, win.w, win.h),
                            "level": sheet_level,
                            "binding": bindings[CriterionKind.SHEETING],
                            "thresholds": thresholds,
                            "background_mean": config.background_mean,
                        }
                    )
    for meta in case.manifest.ki67_slides():
        slide = case.pyramid(meta.slide_id)
        level = slide.level_for_mpp(KI67_SPEC.scale_mpp)
        factor = 1 << level
        for node in meta.nodes:
            level_node = _node_at_level(node, factor)
            if level_node is None:
                continue
            for win in iter_windows(level_node, KI67_SPEC.window_px, KI67_SPEC.stride_px):
                ki67_tasks.append(
                    {
                        "slide": slide,
                        "slide_id": meta.slide_id,
                        "rect": _scale_rect(win, factor),
                        "rect_level": (win.x, win.y, win.w, win.h),
                        "level": level,
                        "binding": bindings[CriterionKind.KI67_INDEX],
                        "background_mean": config.background_mean,
                    }
                )
    return base_tasks, sheeting_tasks, ki67_tasks


def _node_at_level(node: Rect, factor: int) -> Rect | None:
    lx0 = -(-node.x // factor)
    ly0 = -(-node.y // factor)
    lx1 = node.x2 // factor
    ly1 = node.y2 // factor
    if lx1 - lx0 < 1 or ly1 - ly0 < 1:
        return None
    return Rect(lx0, ly0, lx1 - lx0, ly1 - ly0)


def _maybe_level(slide, mpp: float) -> int | None:
    try:
        return slide.level_for_mpp(mpp)
    except Exception:
        return None


def _run_tasks(fn, tasks: list[dict], workers: int) -> list[dict]:
    if not tasks:
        return []
    if workers <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _group_by_slide(tasks: list[dict], results: list[dict]):
    order: list[str] = []
    grouped: dict[str, tuple[list, list]] = {}
    for task, res in zip(tasks, results):
        sid = task["slide_id"]
        if sid not in grouped:
            grouped[sid] = ([], [])
            order.append(sid)
        grouped[sid][0].append(task)
        grouped[sid][1].append(res)
    for sid in order:
        yield sid, grouped[sid][0], grouped[sid][1]


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


def _write_artifacts(
    out_dir: Path,
    manifest_path: str | Path,
    case: Case,
    config: EngineConfig,
    detections: dict[str, Detection],
    nuclei: NucleiData,
    assessment: Assessment,
    grids,
    saliency_jobs,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = case.manifest

    resolved = manifest.to_json()
    for s in resolved["slides"]:
        s["pyramid_path"] = str(case.pyramid(s["slide_id"]).tile_store.resolve())
    (out_dir / "case.json").write_text(_dump(resolved))
    (out_dir / "config.json").write_text(_dump(config.to_json()))

    ordered = sorted(
        detections.values(),
        key=lambda d: (d.slide_id, d.criterion.value, -d.prob, d.bbox.y, d.bbox.x, d.detection_id),
    )
    with open(out_dir / "detections.jsonl", "w") as f:
        for d in ordered:
            f.write(json.dumps(d.to_json(), sort_keys=True) + "\n")

    with open(out_dir / "nuclei.jsonl", "w") as f:
        for slide_id in sorted(nuclei.he):
            for patch, count in nuclei.he[slide_id]:
                f.write(
                    json.dumps(
                        {
                            "slide_id": slide_id,
                            "rect": patch.rect.to_json(),
                            "count": count,
                            "region_type": classify_region_type(count, config.thresholds),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        for slide_id in sorted(nuclei.ki67):
            for patch, pos, neg in nuclei.ki67[slide_id]:
                f.write(
                    json.dumps(
                        {
                            "slide_id": slide_id,
                            "rect": patch.rect.to_json(),
                            "positive": pos,
                            "negative": neg,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    (out_dir / "regions.json").write_text(_dump(assessment.regions_json()))
    (out_dir / "evidence.json").write_text(_dump(assessment.evidence_json()))
    (out_dir / "grading.json").write_text(_dump(assessment.grade.to_json()))

    sal_dir = out_dir / "saliency"
    if saliency_jobs:
        sal_dir.mkdir(exist_ok=True)
    written = set()
    for ref, bbox, centroid in saliency_jobs:
        if ref in written:
            continue
        written.add(ref)
        raster = gaussian_saliency(bbox, centroid, out_px=96)
        Image.fromarray(raster, mode="L").save(out_dir / ref, format="PNG")

    hm_dir = out_dir / "heatmaps"
    hm_dir.mkdir(exist_ok=True)
    for (slide_id, criterion), grid in sorted(
        grids.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        raster, meta = render_heatmap(grid, criterion)
        stem = f"{slide_id}.{criterion.value}"
        Image.fromarray(raster, mode="L").save(hm_dir / f"{stem}.png", format="PNG")
        (hm_dir / f"{stem}.json").write_text(_dump(meta))


@dataclass
class ProcessedCase:
    case_dir: Path
    manifest: CaseManifest
    config: EngineConfig
    detections: dict[str, Detection]
    nuclei: NucleiData
    grade: GradeResult | None = None

    @property
    def case_id(self) -> str:
        return self.manifest.case_id


def load_processed_case(case_dir: str | Path) -> ProcessedCase:
    case_dir = Path(case_dir)
    case_file = case_dir / "case.json"
    if not case_file.is_file():
        raise MissingInputError(f"no processed case at {case_dir} (case.json missing)")
    manifest = manifest_from_json(json.loads(case_file.read_text()))
    config = config_from_json(json.loads((case_dir / "config.json").read_text()))
    detections: dict[str, Detection] = {}
    for line in (case_dir / "detections.jsonl").read_text().splitlines():
        if line.strip():
            d = Detection.from_json(json.loads(line))
            detections[d.detection_id] = d
    nuclei = NucleiData()
    for line in (case_dir / "nuclei.jsonl").read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        rect = Rect.from_json(obj["rect"])
        slide_id = obj["slide_id"]
        if "count" in obj:
            nuclei.he.setdefault(slide_id, []).append(
                (PatchRef(slide_id, rect, CriterionKind.HYPERCELLULARITY), obj["count"])
            )
        else:
            nuclei.ki67.setdefault(slide_id, []).append(
                (PatchRef(slide_id, rect, CriterionKind.KI67_INDEX), obj["positive"], obj["negative"])
            )
    grade = None
    grading_file = case_dir / "grading.json"
    if grading_file.is_file():
        obj = json.loads(grading_file.read_text())
        grade = GradeResult(
            grade=Grade(obj["grade"]),
            main_contributing=CriterionKind(obj["main_contributing"]) if obj["main_contributing"] else None,
            fired_rules=tuple(
                FiredRule(r["id"], r["text"]) for r in obj.get("fired_rules", [])
            ),
            criteria=tuple(obj.get("criteria", [])),
        )
    return ProcessedCase(
        case_dir=case_dir,
        manifest=manifest,
        config=config,
        detections=detections,
        nuclei=nuclei,
        grade=grade,
    )
