"""Spatial aggregation: count grids, integral-image window queries, highest
region / highest focal region sampling, heatmaps, recommenders, and evidence
lists.

Counts are binned into a per-slide grid whose cell side divides the HPF side
exactly (1 HPF = cells_per_hpf^2 cells), so HPF-shaped window queries reduce
to exact integer arithmetic over a summed-area table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .core import CriterionKind, Detection, DetectionStatus, Rect
from .detectors import NucleiResult, ki67_index
from .errors import ContractError, OutOfBoundsError
from .tiler import PatchRef


class SampleKind(str, Enum):
    FOCAL_1HPF = "focal_1hpf"
    REGION_10HPF = "region_10hpf"


@dataclass(frozen=True)
class CountGrid:
    slide_id: str
    cell_px: int
    origin: Rect
    cells: np.ndarray  # (rows, cols), non-negative

    @property
    def rows(self) -> int:
        return self.cells.shape[0]

    @property
    def cols(self) -> int:
        return self.cells.shape[1]

    def cell_window_to_px(self, cy: int, cx: int, hcells: int, wcells: int) -> Rect:
        x = self.origin.x + cx * self.cell_px
        y = self.origin.y + cy * self.cell_px
        w = min(wcells * self.cell_px, self.origin.x2 - x)
        h = min(hcells * self.cell_px, self.origin.y2 - y)
        return Rect(x, y, w, h)


def grid_shape(bounds: Rect, cell_px: int) -> tuple[int, int]:
    return (-(-bounds.h // cell_px), -(-bounds.w // cell_px))


def build_count_grid(
    items: Iterable,
    cell_px: int,
    *,
    slide_id: str,
    bounds: Rect,
    include_uncertain: bool = False,
) -> CountGrid:
    """Bin detections (by bbox center, weight 1), nuclei results (by patch
    center, weight = count), or explicit ((x, y), weight) pairs.

    Detections with declined status are never binned; uncertain ones only when
    `include_uncertain` is set. Totals are conserved.
    """
    rows, cols = grid_shape(bounds, cell_px)
    cells = np.zeros((rows, cols), dtype=np.int64)
    float_cells = None
    for item in items:
        if isinstance(item, Detection):
            if item.status == DetectionStatus.DECLINED:
                continue
            if item.status == DetectionStatus.UNCERTAIN and not include_uncertain:
                continue
            (px, py), w = item.bbox.center(), 1
        elif isinstance(item, NucleiResult):
            (px, py), w = item.patch.rect.center(), item.count
        else:
            (px, py), w = item
        cy = (py - bounds.y) // cell_px
        cx = (px - bounds.x) // cell_px
        if not (0 <= cy < rows and 0 <= cx < cols):
            raise OutOfBoundsError(f"item center ({px},{py}) outside grid bounds {bounds}")
        if isinstance(w, float) and not float(w).is_integer():
            if float_cells is None:
                float_cells = cells.astype(np.float64)
            float_cells[cy, cx] += w
            continue
        if float_cells is not None:
            float_cells[cy, cx] += w
        else:
            cells[cy, cx] += int(w)
    return CountGrid(
        slide_id=slide_id,
        cell_px=cell_px,
        origin=bounds,
        cells=float_cells if float_cells is not None else cells,
    )


@dataclass(frozen=True)
class IntegralGrid:
    """Zero-padded summed-area table over a CountGrid; window sums are four
    lookups and exact in integer arithmetic."""

    table: np.ndarray
    rows: int
    cols: int

    @classmethod
    def build(cls, grid: CountGrid | np.ndarray) -> "IntegralGrid":
        cells = grid.cells if isinstance(grid, CountGrid) else grid
        rows, cols = cells.shape
        table = np.zeros((rows + 1, cols + 1), dtype=cells.dtype)
        np.cumsum(np.cumsum(cells, axis=0), axis=1, out=table[1:, 1:])
        return cls(table=table, rows=rows, cols=cols)

    def window_sum(self, cy: int, cx: int, hcells: int, wcells: int):
        if cy < 0 or cx < 0 or hcells < 1 or wcells < 1:
            raise OutOfBoundsError("window must be non-degenerate and non-negative")
        if cy + hcells > self.rows or cx + wcells > self.cols:
            raise OutOfBoundsError(
                f"window ({cy},{cx})+{hcells}x{wcells} exceeds grid {self.rows}x{self.cols}"
            )
        t = self.table
        total = (
            t[cy + hcells, cx + wcells]
            - t[cy, cx + wcells]
            - t[cy + hcells, cx]
            + t[cy, cx]
        )
        return total.item()

    def all_window_sums(self, hcells: int, wcells: int) -> np.ndarray:
        """Sums of every placement of an hcells x wcells window, 1-cell stride."""
        t = self.table
        return (
            t[hcells:, wcells:]
            - t[:-hcells or None, wcells:][: self.rows - hcells + 1]
            - t[hcells:, : self.cols - wcells + 1]
            + t[: self.rows - hcells + 1, : self.cols - wcells + 1]
        )


def window_sum(g: IntegralGrid, window: tuple[int, int, int, int]):
    """Sum of a (cy, cx, hcells, wcells) window via the integral grid."""
    return g.window_sum(*window)


@dataclass(frozen=True)
class RegionSample:
    slide_id: str
    kind: SampleKind
    rect: Rect
    value: int | float | Fraction | None
    member_detections: tuple[str, ...] = ()
    degenerate: bool = False
    applicable: bool = True
    #: Cell-space window (cy, cx, hcells, wcells) the sample came from.
    window_cells: tuple[int, int, int, int] | None = None

    def to_json(self) -> dict:
        if self.value is None:
            value = None
        elif isinstance(self.value, Fraction):
            value = round(float(self.value), 1)
        else:
            value = self.value
        return {
            "slide_id": self.slide_id,
            "kind": self.kind.value,
            "rect": self.rect.to_json(),
            "value": value,
            "member_detections": list(self.member_detections),
            "degenerate": self.degenerate,
            "applicable": self.applicable,
        }


def _argmax_window(grid: CountGrid, hcells: int, wcells: int) -> tuple[int, int, int, int, float, bool]:
    """Best (cy, cx, h, w, value, degenerate) for one window shape, ties
    resolved row-major. Windows larger than the grid are clipped and flagged."""
    degenerate = False
    h, w = hcells, wcells
    if grid.rows == 0 or grid.cols == 0:
        return 0, 0, 0, 0, 0, True
    if h > grid.rows:
        h, degenerate = grid.rows, True
    if w > grid.cols:
        w, degenerate = grid.cols, True
    sums = IntegralGrid.build(grid).all_window_sums(h, w)
    flat = int(np.argmax(sums))  # C-order argmax == row-major first maximum
    cy, cx = divmod(flat, sums.shape[1])
    return cy, cx, h, w, sums[cy, cx].item(), degenerate


def highest_focal_region(grid: CountGrid, hpf_cells: int) -> RegionSample:
    """The single HPF-sized window with the highest count (row-major tie-break)."""
    cy, cx, h, w, value, degenerate = _argmax_window(grid, hpf_cells, hpf_cells)
    if h == 0 or w == 0:
        return RegionSample(
            slide_id=grid.slide_id,
            kind=SampleKind.FOCAL_1HPF,
            rect=Rect(grid.origin.x, grid.origin.y, 1, 1),
            value=0,
            degenerate=True,
        )
    return RegionSample(
        slide_id=grid.slide_id,
        kind=SampleKind.FOCAL_1HPF,
        rect=grid.cell_window_to_px(cy, cx, h, w),
        value=value,
        degenerate=degenerate,
        window_cells=(cy, cx, h, w),
    )


def highest_region(
    grid: CountGrid, hpf_cells: int, region_hpfs: tuple[int, int] = (2, 5)
) -> RegionSample:
    """The region-window (e.g. 2x5 HPFs) with the highest count.

    Both orientations are searched; on ties the (region_hpfs[0] x region_hpfs[1])
    orientation wins, then row-major position.
    """
    a, b = region_hpfs
    shapes = [(a * hpf_cells, b * hpf_cells)]
    if a != b:
        shapes.append((b * hpf_cells, a * hpf_cells))
    best = None
    for h, w in shapes:
        cy, cx, ch, cw, value, degenerate = _argmax_window(grid, h, w)
        if ch == 0 or cw == 0:
            return RegionSample(
                slide_id=grid.slide_id,
                kind=SampleKind.REGION_10HPF,
                rect=Rect(grid.origin.x, grid.origin.y, 1, 1),
                value=0,
                degenerate=True,
            )
        cand = (value, cy, cx, ch, cw, degenerate)
        if best is None or cand[0] > best[0]:
            best = cand
    value, cy, cx, ch, cw, degenerate = best
    return RegionSample(
        slide_id=grid.slide_id,
        kind=SampleKind.REGION_10HPF,
        rect=grid.cell_window_to_px(cy, cx, ch, cw),
        value=value,
        degenerate=degenerate,
        window_cells=(cy, cx, ch, cw),
    )


def highest_ki67_region(
    pos_grid: CountGrid,
    total_grid: CountGrid,
    window_cells: int | tuple[int, int],
    min_total: int,
    kind: SampleKind = SampleKind.REGION_10HPF,
) -> RegionSample:
    """Window maximizing the Ki-67 index among windows with at least
    `min_total` counted nuclei. Ratio comparison is exact (cross-multiplied).
    """
    if pos_grid.cells.shape != total_grid.cells.shape:
        raise ContractError("positive and total grids must be congruent")
    if isinstance(window_cells, int):
        shapes = [(window_cells, window_cells)]
    else:
        h, w = window_cells
        shapes = [(h, w)] + ([(w, h)] if h != w else [])
    pos_int = IntegralGrid.build(pos_grid)
    tot_int = IntegralGrid.build(total_grid)
    best = None  # (pos, total, cy, cx, h, w, degenerate)
    for h, w in shapes:
        eh, ew, degenerate = h, w, False
        if eh > pos_grid.rows:
            eh, degenerate = pos_grid.rows, True
        if ew > pos_grid.cols:
            ew, degenerate = pos_grid.cols, True
        if eh == 0 or ew == 0:
            continue
        pos_sums = pos_int.all_window_sums(eh, ew)
        tot_sums = tot_int.all_window_sums(eh, ew)
        for cy in range(pos_sums.shape[0]):
            for cx in range(pos_sums.shape[1]):
                total = int(tot_sums[cy, cx])
                if total < min_total:
                    continue
                pos = int(pos_sums[cy, cx])
                if best is None or pos * best[1] > best[0] * total:
                    best = (pos, total, cy, cx, eh, ew, degenerate)
    if best is None:
        return RegionSample(
            slide_id=pos_grid.slide_id,
            kind=kind,
            rect=Rect(pos_grid.origin.x, pos_grid.origin.y, 1, 1),
            value=None,
            applicable=False,
        )
    pos, total, cy, cx, eh, ew, degenerate = best
    return RegionSample(
        slide_id=pos_grid.slide_id,
        kind=kind,
        rect=pos_grid.cell_window_to_px(cy, cx, eh, ew),
        value=ki67_index(pos, total - pos),
        degenerate=degenerate,
        window_cells=(cy, cx, eh, ew),
    )


def render_heatmap(grid: CountGrid, criterion: CriterionKind) -> tuple[np.ndarray, dict]:
    """Single-channel raster linearly mapping [0, max_value] -> [0, 255]."""
    max_value = grid.cells.max().item() if grid.cells.size else 0
    if max_value <= 0:
        raster = np.zeros(grid.cells.shape, dtype=np.uint8)
        max_value = 0
    else:
        raster = np.round(grid.cells.astype(np.float64) / max_value * 255).astype(np.uint8)
    meta = {
        "cell_px": grid.cell_px,
        "origin": {"x": grid.origin.x, "y": grid.origin.y},
        "max_value": max_value,
        "criterion": criterion.value,
    }
    return raster, meta


def members_in(
    detections: Iterable[Detection], rect: Rect, include_uncertain: bool = False
) -> tuple[str, ...]:
    """Ids of effective detections whose bbox center lies inside `rect`,
    ordered by probability descending then (y, x, id)."""
    chosen = []
    for d in detections:
        if d.status == DetectionStatus.DECLINED:
            continue
        if d.status == DetectionStatus.UNCERTAIN and not include_uncertain:
            continue
        if rect.contains_point(*d.bbox.center()):
            chosen.append(d)
    chosen.sort(key=lambda d: (-d.prob, d.bbox.y, d.bbox.x, d.detection_id))
    return tuple(d.detection_id for d in chosen)


# ---------------------------------------------------------------------------
# Recommenders
# ---------------------------------------------------------------------------


def _row_major(patch: PatchRef) -> tuple[int, int]:
    return (patch.rect.y, patch.rect.x)


def recommend_small_cell(
    nuclei_counts: Sequence[tuple[PatchRef, int]],
    top_k: int = 10,
    min_nuclei: int = 125,
) -> list[PatchRef]:
    """Top-k patches by nuclei count, keeping only those strictly above the
    minimum. Tie-break is row-major."""
    ranked = sorted(nuclei_counts, key=lambda pc: (-pc[1], *_row_major(pc[0])))
    return [p for p, c in ranked[:top_k] if c > min_nuclei]


def hypercellularity_hotspots(
    nuclei_counts: Sequence[tuple[PatchRef, int]], k: int
) -> list[tuple[PatchRef, int]]:
    """Top-k patches by nuclei count (row-major tie-break)."""
    ranked = sorted(nuclei_counts, key=lambda pc: (-pc[1], *_row_major(pc[0])))
    return ranked[:k]


def brain_boundary_patches(
    patch_types: dict[tuple[int, int], str],
    nuclei_counts: dict[tuple[int, int], int],
    patch_px: int,
) -> list[tuple[tuple[int, int], int]]:
    """Tumor patches 8-adjacent to brain patches, by descending nuclei count.

    `patch_types` maps patch origin (x, y) to tumor/brain/background; adjacency
    is tested on the patch grid (offsets of one patch side).
    """
    out = []
    for (x, y), t in patch_types.items():
        if t != "tumor":
            continue
        touches_brain = any(
            patch_types.get((x + dx * patch_px, y + dy * patch_px)) == "brain"
            for dy in (-1, 0, 1)
            for dx in (-1, 0, 1)
            if (dx, dy) != (0, 0)
        )
        if touches_brain:
            out.append(((x, y), nuclei_counts.get((x, y), 0)))
    out.sort(key=lambda it: (-it[1], it[0][1], it[0][0]))
    return out


# ---------------------------------------------------------------------------
# Evidence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvidenceItem:
    """One mid-level sample shown to the pathologist, registered to the WSI by
    three nested boxes: HPF context, containing patch, and the precise finding."""

    evidence_id: str
    criterion: CriterionKind
    slide_id: str
    detection_id: str | None
    prob: float | None
    confidence: str | None
    value: int | float | None
    rect_context: Rect
    rect_patch: Rect
    rect_zoom: Rect
    saliency_ref: str | None = None

    def to_json(self) -> dict:
        return {
            "evidence_id": self.evidence_id,
            "criterion": self.criterion.value,
            "slide_id": self.slide_id,
            "detection_id": self.detection_id,
            "prob": self.prob,
            "confidence": self.confidence,
            "value": self.value,
            "rects": {
                "context": self.rect_context.to_json(),
                "patch": self.rect_patch.to_json(),
                "zoom": self.rect_zoom.to_json(),
            },
            "saliency_ref": self.saliency_ref,
        }


def hpf_context_rect(center: tuple[int, int], hpf_px: int, bounds: Rect) -> Rect:
    """HPF-sized rect centered on a point, shifted (and if needed clipped) to
    stay inside the slide bounds."""
    side_w = min(hpf_px, bounds.w)
    side_h = min(hpf_px, bounds.h)
    x = min(max(center[0] - side_w // 2, bounds.x), bounds.x2 - side_w)
    y = min(max(center[1] - side_h // 2, bounds.y), bounds.y2 - side_h)
    return Rect(x, y, side_w, side_h)


def _clip_to(inner: Rect, outer: Rect) -> Rect:
    x = max(inner.x, outer.x)
    y = max(inner.y, outer.y)
    x2 = min(inner.x2, outer.x2)
    y2 = min(inner.y2, outer.y2)
    if x2 <= x or y2 <= y:
        return outer
    return Rect(x, y, x2 - x, y2 - y)


@dataclass
class EvidenceInputs:
    """Everything the per-criterion sampling rules may consult."""

    detections: list[Detection] = field(default_factory=list)
    region: RegionSample | None = None
    focal: RegionSample | None = None
    nuclei_counts: list[tuple[PatchRef, int]] = field(default_factory=list)
    recommended: list[PatchRef] = field(default_factory=list)
    hotspots: list[tuple[PatchRef, int]] = field(default_factory=list)
    boundary: list[tuple[tuple[int, int], int]] = field(default_factory=list)
    ki67_patches: list[tuple[PatchRef, Fraction]] = field(default_factory=list)
    parent_patch: dict[str, Rect] = field(default_factory=dict)
    slide_bounds: dict[str, Rect] = field(default_factory=dict)
    hpf_px: dict[str, int] = field(default_factory=dict)
    confidence: dict[str, str] = field(default_factory=dict)
    patch_px: int = 512


def _detection_item(d: Detection, inputs: EvidenceInputs) -> EvidenceItem:
    bounds = inputs.slide_bounds[d.slide_id]
    patch = inputs.parent_patch.get(d.detection_id, d.bbox)
    zoom = _clip_to(d.bbox, patch)
    context = hpf_context_rect(zoom.center(), inputs.hpf_px[d.slide_id], bounds)
    if not context.contains(patch):
        patch = _clip_to(patch, context)
    return EvidenceItem(
        evidence_id=d.detection_id,
        criterion=d.criterion,
        slide_id=d.slide_id,
        detection_id=d.detection_id,
        prob=d.prob,
        confidence=inputs.confidence.get(d.detection_id),
        value=None,
        rect_context=context,
        rect_patch=patch,
        rect_zoom=zoom,
        saliency_ref=d.saliency_ref,
    )


def _patch_item(
    criterion: CriterionKind, patch: PatchRef, value, inputs: EvidenceInputs
) -> EvidenceItem:
    r = patch.rect
    bounds = inputs.slide_bounds[patch.slide_id]
    context = hpf_context_rect(r.center(), inputs.hpf_px[patch.slide_id], bounds)
    body = r if context.contains(r) else _clip_to(r, context)
    if isinstance(value, Fraction):
        value = round(float(value), 1)
    return EvidenceItem(
        evidence_id=f"patch:{patch.slide_id}:{criterion.value}:{r.x}:{r.y}:{r.w}:{r.h}",
        criterion=criterion,
        slide_id=patch.slide_id,
        detection_id=None,
        prob=None,
        confidence=None,
        value=value,
        rect_context=context,
        rect_patch=body,
        rect_zoom=body,
    )


def sample_evidence(
    criterion: CriterionKind, inputs: EvidenceInputs, n: int
) -> list[EvidenceItem]:
    """Ordered evidence list for one criterion.

    Mitosis and Ki-67 list the members of the highest region plus the highest
    focal region; presence criteria list the top-n detections by probability;
    small cell and hypercellularity forward their recommenders' output; brain
    invasion lists tumor/brain boundary patches by nuclei count.
    """
    effective = [d for d in inputs.detections if d.status != DetectionStatus.DECLINED]
    by_id = {d.detection_id: d for d in effective}
    if criterion == CriterionKind.MITOTIC_COUNT:
        member_ids: list[str] = []
        for sample in (inputs.region, inputs.focal):
            if sample is None:
                continue
            for did in sample.member_detections:
                if did not in member_ids:
                    member_ids.append(did)
        members = [by_id[i] for i in member_ids if i in by_id]
        members.sort(key=lambda d: (-d.prob, d.bbox.y, d.bbox.x, d.detection_id))
        return [_detection_item(d, inputs) for d in members]
    if criterion == CriterionKind.KI67_INDEX:
        chosen: list[tuple[PatchRef, Fraction]] = []
        for sample in (inputs.region, inputs.focal):
            if sample is None or not sample.applicable:
                continue
            for patch, idx in inputs.ki67_patches:
                if sample.rect.contains_point(*patch.rect.center()) and all(
                    p.rect != patch.rect for p, _ in chosen
                ):
                    chosen.append((patch, idx))
        chosen.sort(key=lambda pi: (-pi[1], pi[0].rect.y, pi[0].rect.x))
        return [
            _patch_item(criterion, p, idx, inputs) for p, idx in chosen[: n]
        ]
    if criterion in (
        CriterionKind.NECROSIS,
        CriterionKind.SHEETING,
        CriterionKind.PROMINENT_NUCLEOLI,
    ):
        ranked = sorted(
            effective, key=lambda d: (-d.prob, d.bbox.y, d.bbox.x, d.detection_id)
        )
        return [_detection_item(d, inputs) for d in ranked[:n]]
    if criterion == CriterionKind.SMALL_CELL:
        counts = {p.key(): c for p, c in inputs.nuclei_counts}
        return [
            _patch_item(criterion, p, counts.get(p.key(), 0), inputs)
            for p in inputs.recommended
        ]
    if criterion == CriterionKind.HYPERCELLULARITY:
        return [_patch_item(criterion, p, c, inputs) for p, c in inputs.hotspots]
    if criterion == CriterionKind.BRAIN_INVASION:
        patches = {p.key(): p for p, _ in inputs.nuclei_counts}
        items = []
        for (x, y), count in inputs.boundary[:n]:
            key = next(
                (k for k in patches if k[1] == x and k[2] == y), None
            )
            if key is None:
                continue
            items.append(_patch_item(criterion, patches[key], count, inputs))
        return items
    return []
