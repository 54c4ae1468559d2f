"""Deterministic synthetic case generator.

Produces an open-format slide pyramid (pink tissue texture on white
background), a matching manifest, an oracle annotation file with every planted
object, and a bindings file wiring the oracle detectors. Objects are rendered
as simple blobs: they are not biologically faithful, but they exercise every
pipeline path, including the pixel-statistic detectors.

Mitoses are planted inside "safe zones" of their 512-px patch chosen so each
object intersects exactly one 240-px detector tile; suppression then yields
exactly one detection per planted object, which makes end-to-end counts exact.
When clustering is requested, all mitoses land inside a single HPF-sized
window so the highest focal region (and the containing 2x5-HPF region) count
equals the planted total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CriterionKind, Rect, Stain
from .errors import SchemaViolationError
from .tiler import TILE_PX, build_lower_levels, pyramid_levels_for, tile_grid, write_tile

PATCH = 512

TISSUE_BASE = (226, 200, 214)
SHEET_COLOR = (232, 206, 219)
NECROSIS_COLOR = (168, 165, 166)
NUCLEUS_COLOR = (120, 90, 150)
MITOSIS_COLOR = (45, 30, 70)
NUCLEOLUS_COLOR = (35, 30, 35)
KI67_POS_COLOR = (150, 80, 60)
KI67_NEG_COLOR = (80, 90, 150)

#: Patch-local origins where a 32x24 object overlaps exactly one 240/120 tile.
SAFE_ZONES = ((40, 40), (40, 400), (400, 40), (400, 400))
MITOSIS_W, MITOSIS_H = 32, 24
#: Center of the single detector tile each safe-zone object resolves to,
#: relative to the patch origin (zone 40 -> tile 0, zone 400 -> tile 240).
_ZONE_TILE_CENTER = {40: 120, 400: 360}
#: The pipeline's default count-grid geometry at 0.25 um/px.
CELL_PX = 400
HPF_CELLS = 5


def _axis_cluster_slots(node_origin: int, tissue_side: int, window_start: int, window_px: int) -> list[int]:
    """Object origins along one axis whose resulting detection-tile center
    falls inside [window_start, window_start + window_px)."""
    slots = []
    for p in range(tissue_side // PATCH):
        patch_origin = node_origin + p * PATCH
        for zone in (40, 400):
            center = patch_origin + _ZONE_TILE_CENTER[zone]
            if window_start <= center < window_start + window_px:
                slots.append(patch_origin + zone)
    return slots


def _best_axis_slots(node_origin: int, tissue_side: int) -> list[int]:
    window_px = CELL_PX * HPF_CELLS
    best: list[int] = []
    lo = (node_origin // CELL_PX) * CELL_PX
    hi = node_origin + tissue_side - 1
    for start in range(lo, max(lo, hi - window_px) + CELL_PX, CELL_PX):
        slots = _axis_cluster_slots(node_origin, tissue_side, start, window_px)
        if len(slots) > len(best):
            best = slots
    return best


def _clustered_mitosis_slots(node: "Rect", tissue_side: int, k: int) -> list[tuple[int, int]]:
    """Object origins for k mitoses whose detections all land inside one
    cell-aligned HPF window, so focal and region counts equal k exactly."""
    xs = _best_axis_slots(node.x, tissue_side)
    ys = _best_axis_slots(node.y, tissue_side)
    if len(xs) * len(ys) < k:
        raise SchemaViolationError(
            f"cannot cluster {k} mitoses in one HPF window ({len(xs) * len(ys)} slots)"
        )
    return [(ox, oy) for oy in ys for ox in xs][:k]


@dataclass(frozen=True)
class SynthParams:
    case_id: str = "synthetic-case"
    seed: int = 0
    node_px: int = 4096
    margin_px: int = 512
    #: Side of the square tissue-covered area inside the node (defaults to the
    #: whole node); rounded down to whole patches. The rest stays background.
    tissue_px: int | None = None
    with_ki67: bool = True
    mitoses: int = 0
    cluster_mitoses: bool = True
    necrosis_regions: int = 0
    sheeting_regions: int = 0
    nucleoli: int = 0
    small_cell_patches: int = 0
    small_cell_nuclei: int = 130
    baseline_nuclei: int = 70
    brain_strip: bool = False
    brain_nuclei: int = 30
    ki67_hot_positive: int = 120
    ki67_hot_negative: int = 80
    ki67_ambient_negative: int = 20


@dataclass
class _Ellipse:
    cx: int
    cy: int
    rx: int
    ry: int
    color: tuple[int, int, int]


@dataclass
class _SlidePlan:
    slide_id: str
    stain: Stain
    width: int
    height: int
    mpp: float
    node: Rect
    tissue: Rect
    fills: list[tuple[Rect, tuple[int, int, int], bool]] = field(default_factory=list)
    ellipses: list[_Ellipse] = field(default_factory=list)
    annotations: list[dict] = field(default_factory=list)


def _mix(*parts: int) -> int:
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h = (h ^ (p & 0xFFFFFFFFFFFFFFFF)) * 0xBF58476D1CE4E5B9 % (1 << 64)
    return h


def _patch_rng(seed: int, slide_idx: int, px: int, py: int) -> np.random.Generator:
    return np.random.default_rng(_mix(seed, slide_idx, px, py))


def _jittered_points(
    rect: Rect, count: int, rng: np.random.Generator, radius: int = 6
) -> list[tuple[int, int]]:
    """Well-separated points inside a patch: jittered occupied cells of a grid
    sized so blobs of `radius` never touch (keeps component counting exact)."""
    grid = 12
    while grid * grid < count:
        grid += 1
    pitch = rect.w // grid
    jitter = max(1, (pitch - 2 * radius - 4) // 4)
    if pitch - 2 * jitter - 2 * radius < 2:
        raise SchemaViolationError(
            f"cannot plant {count} separated nuclei of radius {radius} in a {rect.w}px patch"
        )
    chosen = rng.permutation(grid * grid)[:count]
    pts = []
    for cell in sorted(int(c) for c in chosen):
        gy, gx = divmod(cell, grid)
        jx = int(rng.integers(-jitter, jitter + 1))
        jy = int(rng.integers(-jitter, jitter + 1))
        cx = rect.x + gx * pitch + pitch // 2 + jx
        cy = rect.y + gy * pitch + pitch // 2 + jy
        pts.append((cx, cy))
    return pts


def _plan_he(params: SynthParams) -> _SlidePlan:
    side = params.node_px + 2 * params.margin_px
    node = Rect(params.margin_px, params.margin_px, params.node_px, params.node_px)
    tissue_side = params.tissue_px if params.tissue_px is not None else params.node_px
    tissue_side = max(PATCH, (min(tissue_side, params.node_px) // PATCH) * PATCH)
    tissue = Rect(node.x, node.y, tissue_side, tissue_side)
    plan = _SlidePlan(
        slide_id=f"{params.case_id}-he",
        stain=Stain.HE,
        width=side,
        height=side,
        mpp=0.25,
        node=node,
        tissue=tissue,
    )
    plan.fills.append((tissue, TISSUE_BASE, True))

    rows = cols = tissue_side // PATCH
    rng = np.random.default_rng(params.seed)

    def patch_rect(pr: int, pc: int) -> Rect:
        return Rect(node.x + pc * PATCH, node.y + pr * PATCH, PATCH, PATCH)

    # -- mitoses ------------------------------------------------------------
    if params.cluster_mitoses and params.mitoses:
        chosen = _clustered_mitosis_slots(node, tissue_side, params.mitoses)
    elif params.mitoses:
        slots = [
            (node.x + c * PATCH + zx, node.y + r * PATCH + zy)
            for r in range(rows)
            for c in range(cols)
            for zx, zy in SAFE_ZONES
        ]
        if params.mitoses > len(slots):
            raise SchemaViolationError(
                f"cannot place {params.mitoses} mitoses ({len(slots)} slots available)"
            )
        idx = rng.permutation(len(slots))[: params.mitoses]
        chosen = [slots[int(i)] for i in sorted(int(v) for v in idx)]
    else:
        chosen = []
    for ox, oy in chosen:
        bbox = Rect(ox, oy, MITOSIS_W, MITOSIS_H)
        plan.ellipses.append(
            _Ellipse(*bbox.center(), MITOSIS_W // 2, MITOSIS_H // 2, MITOSIS_COLOR)
        )
        plan.annotations.append(
            {"criterion": CriterionKind.MITOTIC_COUNT.value, "bbox": bbox.to_json(), "label": "mitosis"}
        )

    # -- necrosis: whole base patches along the bottom row -------------------
    if params.necrosis_regions > cols:
        raise SchemaViolationError("too many necrosis regions for the tissue width")
    for i in range(params.necrosis_regions):
        rect = patch_rect(rows - 1, cols - 1 - i)
        plan.fills.append((rect, NECROSIS_COLOR, True))
        plan.annotations.append(
            {"criterion": CriterionKind.NECROSIS.value, "bbox": rect.to_json(), "label": "necrosis"}
        )

    # -- sheeting: smooth 1024-px blocks (one coarse-scale window each) ------
    if params.sheeting_regions:
        r0 = rows - 4 - (rows - 4) % 2
        if r0 < 0 or params.sheeting_regions * 2 > cols:
            raise SchemaViolationError("tissue area too small for the requested sheeting regions")
        for i in range(params.sheeting_regions):
            rect = Rect(node.x + i * 2 * PATCH, node.y + r0 * PATCH, 2 * PATCH, 2 * PATCH)
            plan.fills.append((rect, SHEET_COLOR, False))
            plan.annotations.append(
                {"criterion": CriterionKind.SHEETING.value, "bbox": rect.to_json(), "label": "sheeting"}
            )

    # -- prominent nucleoli: one dot per 96-px sub-tile interior -------------
    if params.nucleoli:
        row = rows - 5
        if row < 0 or params.nucleoli > cols - 1:
            raise SchemaViolationError("tissue area too small for the requested nucleoli")
        for i in range(params.nucleoli):
            base = patch_rect(row, 1 + i)
            bbox = Rect(base.x + 2 * 96 + 30, base.y + 2 * 96 + 30, 10, 10)
            plan.ellipses.append(_Ellipse(*bbox.center(), 5, 5, NUCLEOLUS_COLOR))
            plan.annotations.append(
                {
                    "criterion": CriterionKind.PROMINENT_NUCLEOLI.value,
                    "bbox": bbox.to_json(),
                    "label": "nucleolus",
                }
            )

    # -- nuclei everywhere: ambient density, small-cell patches, brain strip -
    small_cell_row = rows - 6
    if params.small_cell_patches and (small_cell_row < 0 or params.small_cell_patches > cols - 1):
        raise SchemaViolationError("tissue area too small for the requested small-cell patches")
    for r in range(rows):
        for c in range(cols):
            count = params.baseline_nuclei
            if params.small_cell_patches and r == small_cell_row and 1 <= c <= params.small_cell_patches:
                count = params.small_cell_nuclei
            elif params.brain_strip and c == 0:
                count = params.brain_nuclei
            if count <= 0:
                continue
            rect = patch_rect(r, c)
            pts = _jittered_points(rect, count, _patch_rng(params.seed, 0, c, r))
            for cx, cy in pts:
                plan.ellipses.append(_Ellipse(cx, cy, 5, 4, NUCLEUS_COLOR))
                plan.annotations.append(
                    {
                        "criterion": CriterionKind.HYPERCELLULARITY.value,
                        "point": {"x": cx, "y": cy},
                        "label": "nucleus",
                    }
                )
    return plan


def _plan_ki67(params: SynthParams, he: _SlidePlan) -> _SlidePlan:
    width, height = he.width // 2, he.height // 2
    node = Rect(he.node.x // 2, he.node.y // 2, he.node.w // 2, he.node.h // 2)
    tissue = Rect(he.tissue.x // 2, he.tissue.y // 2, he.tissue.w // 2, he.tissue.h // 2)
    tissue = Rect(tissue.x, tissue.y, max(PATCH, tissue.w // PATCH * PATCH), max(PATCH, tissue.h // PATCH * PATCH))
    plan = _SlidePlan(
        slide_id=f"{params.case_id}-ki67",
        stain=Stain.KI67,
        width=width,
        height=height,
        mpp=0.5,
        node=node,
        tissue=tissue,
    )
    plan.fills.append((tissue, TISSUE_BASE, True))
    rows = tissue.h // PATCH
    cols = tissue.w // PATCH
    hot = (min(2, rows - 1), min(2, cols - 1))
    for r in range(rows):
        for c in range(cols):
            rect = Rect(tissue.x + c * PATCH, tissue.y + r * PATCH, PATCH, PATCH)
            rng = _patch_rng(params.seed, 1, c, r)
            if (r, c) == hot:
                counts = [("positive", params.ki67_hot_positive), ("negative", params.ki67_hot_negative)]
            else:
                counts = [("negative", params.ki67_ambient_negative)]
            total = sum(n for _, n in counts)
            pts = _jittered_points(rect, total, rng)
            i = 0
            for label, n in counts:
                color = KI67_POS_COLOR if label == "positive" else KI67_NEG_COLOR
                for _ in range(n):
                    cx, cy = pts[i]
                    i += 1
                    plan.ellipses.append(_Ellipse(cx, cy, 4, 4, color))
                    plan.annotations.append(
                        {
                            "criterion": CriterionKind.KI67_INDEX.value,
                            "point": {"x": cx, "y": cy},
                            "label": label,
                        }
                    )
    return plan


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _paint_fill(canvas: np.ndarray, tile: Rect, rect: Rect, color) -> None:
    x0, y0 = max(rect.x, tile.x), max(rect.y, tile.y)
    x1, y1 = min(rect.x2, tile.x2), min(rect.y2, tile.y2)
    if x1 <= x0 or y1 <= y0:
        return
    canvas[y0 - tile.y : y1 - tile.y, x0 - tile.x : x1 - tile.x] = color


def _paint_fill_noise(canvas: np.ndarray, tile: Rect, rect: Rect, color, rng) -> None:
    x0, y0 = max(rect.x, tile.x), max(rect.y, tile.y)
    x1, y1 = min(rect.x2, tile.x2), min(rect.y2, tile.y2)
    if x1 <= x0 or y1 <= y0:
        return
    h, w = y1 - y0, x1 - x0
    # luminance-correlated noise keeps per-pixel saturation stable
    noise = rng.integers(-12, 13, size=(h, w), dtype=np.int16)
    block = np.clip(np.array(color, dtype=np.int16)[None, None, :] + noise[..., None], 0, 255)
    canvas[y0 - tile.y : y1 - tile.y, x0 - tile.x : x1 - tile.x] = block.astype(np.uint8)


def _paint_ellipse(canvas: np.ndarray, tile: Rect, e: _Ellipse) -> None:
    x0, y0 = max(e.cx - e.rx, tile.x), max(e.cy - e.ry, tile.y)
    x1, y1 = min(e.cx + e.rx + 1, tile.x2), min(e.cy + e.ry + 1, tile.y2)
    if x1 <= x0 or y1 <= y0:
        return
    ys = np.arange(y0, y1)[:, None] - e.cy
    xs = np.arange(x0, x1)[None, :] - e.cx
    mask = (xs / max(e.rx, 1)) ** 2 + (ys / max(e.ry, 1)) ** 2 <= 1.0
    region = canvas[y0 - tile.y : y1 - tile.y, x0 - tile.x : x1 - tile.x]
    region[mask] = e.color


def _render_slide(plan: _SlidePlan, root: Path, seed: int, slide_idx: int) -> None:
    ntx, nty = tile_grid(plan.width, plan.height)
    # bucket ellipses by the level-0 tiles they touch
    buckets: dict[tuple[int, int], list[_Ellipse]] = {}
    for e in plan.ellipses:
        tx0, tx1 = (e.cx - e.rx) // TILE_PX, (e.cx + e.rx) // TILE_PX
        ty0, ty1 = (e.cy - e.ry) // TILE_PX, (e.cy + e.ry) // TILE_PX
        for ty in range(max(ty0, 0), min(ty1, nty - 1) + 1):
            for tx in range(max(tx0, 0), min(tx1, ntx - 1) + 1):
                buckets.setdefault((tx, ty), []).append(e)
    for ty in range(nty):
        for tx in range(ntx):
            w = min(TILE_PX, plan.width - tx * TILE_PX)
            h = min(TILE_PX, plan.height - ty * TILE_PX)
            tile = Rect(tx * TILE_PX, ty * TILE_PX, w, h)
            canvas = np.full((h, w, 3), 255, dtype=np.uint8)
            if tile.intersects(plan.tissue):
                rng = _patch_rng(seed, slide_idx, tx, ty)
                for rect, color, noisy in plan.fills:
                    if not tile.intersects(rect):
                        continue
                    if noisy:
                        _paint_fill_noise(canvas, tile, rect, color, rng)
                    else:
                        _paint_fill(canvas, tile, rect, color)
                for e in buckets.get((tx, ty), ()):
                    _paint_ellipse(canvas, tile, e)
            write_tile(root, 0, tx, ty, canvas)
    build_lower_levels(root, plan.width, plan.height)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def generate_case(out_dir: str | Path, params: SynthParams) -> Path:
    """Generate pyramids, manifest, annotations, and oracle bindings under
    `out_dir`; returns the manifest path. Deterministic for a fixed seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plans = [_plan_he(params)]
    if params.with_ki67:
        plans.append(_plan_ki67(params, plans[0]))

    for idx, plan in enumerate(plans):
        _render_slide(plan, out_dir / "slides" / plan.slide_id, params.seed, idx)

    annotations = [
        {"slide_id": plan.slide_id, "objects": plan.annotations} for plan in plans
    ]
    (out_dir / "annotations.json").write_text(json.dumps(annotations, indent=1, sort_keys=True))

    slides = []
    for plan in plans:
        slides.append(
            {
                "slide_id": plan.slide_id,
                "stain": plan.stain.value,
                "width_px": plan.width,
                "height_px": plan.height,
                "mpp": plan.mpp,
                "levels": pyramid_levels_for(plan.width, plan.height),
                "pyramid_path": f"slides/{plan.slide_id}",
                "nodes": [plan.node.to_json()],
            }
        )
    manifest = {
        "case_id": params.case_id,
        "slides": slides,
        "pairings": [
            {
                "he": plans[0].slide_id,
                "ki67": plans[1].slide_id if params.with_ki67 else None,
            }
        ],
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))

    bindings = {
        "bindings": [
            {
                "criterion": kind.value,
                "kind": "oracle_annotation",
                "source_path": "annotations.json",
            }
            for kind in (
                CriterionKind.MITOTIC_COUNT,
                CriterionKind.NECROSIS,
                CriterionKind.SHEETING,
                CriterionKind.PROMINENT_NUCLEOLI,
                CriterionKind.HYPERCELLULARITY,
                CriterionKind.KI67_INDEX,
            )
        ]
    }
    (out_dir / "bindings.json").write_text(json.dumps(bindings, indent=1, sort_keys=True))
    return manifest_path
