"""Slide pyramid access and patch stream enumeration.

Pyramid storage is an open directory layout: ``level_{L}/{tx}_{ty}.png`` with
512-px tiles (right/bottom edges may be smaller) and levels halving until the
long side is <= 1024 px. Region reads assemble pixel-exact crops from stored
tiles; patch iteration is a pure, deterministic enumerator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .config import WindowSpec
from .core import (
    CaseManifest,
    CriterionKind,
    Rect,
    SlideMeta,
    load_manifest,
)
from .errors import (
    InvalidMetadataError,
    MissingInputError,
    OutOfBoundsError,
    TileStoreMismatchError,
    UnsupportedOperationError,
)

TILE_PX = 512
MAX_THUMB_PX = 1024


def pyramid_levels_for(width_px: int, height_px: int) -> int:
    """Number of levels needed to halve the long side down to <= MAX_THUMB_PX."""
    levels = 1
    long_side = max(width_px, height_px)
    while long_side > MAX_THUMB_PX:
        long_side = -(-long_side // 2)
        levels += 1
    return levels


def tile_grid(width: int, height: int) -> tuple[int, int]:
    return (-(-width // TILE_PX), -(-height // TILE_PX))


def tile_path(root: Path, level: int, tx: int, ty: int) -> Path:
    return root / f"level_{level}" / f"{tx}_{ty}.png"


@dataclass(frozen=True)
class PyramidSlide:
    meta: SlideMeta
    tile_store: Path

    def level_dims(self, level: int) -> tuple[int, int]:
        return self.meta.level_dims(level)

    def tile_bytes(self, level: int, tx: int, ty: int) -> bytes:
        """Raw stored bytes of one tile; raises when the address is invalid."""
        if not 0 <= level < self.meta.levels:
            raise OutOfBoundsError(f"level {level} out of range")
        ntx, nty = tile_grid(*self.level_dims(level))
        if not (0 <= tx < ntx and 0 <= ty < nty):
            raise OutOfBoundsError(f"tile ({tx},{ty}) out of range at level {level}")
        path = tile_path(self.tile_store, level, tx, ty)
        if not path.is_file():
            raise TileStoreMismatchError(f"missing tile {path}")
        return path.read_bytes()

    def level_for_mpp(self, target_mpp: float) -> int:
        """Pyramid level whose resolution matches `target_mpp` (each level doubles mpp)."""
        ratio = target_mpp / self.meta.mpp
        level = round(math.log2(ratio)) if ratio > 0 else -1
        if level < 0 or level >= self.meta.levels or not math.isclose(
            self.meta.mpp * (1 << level), target_mpp, rel_tol=1e-6
        ):
            raise InvalidMetadataError(
                f"slide {self.meta.slide_id}: no pyramid level at {target_mpp} um/px "
                f"(base {self.meta.mpp} um/px, {self.meta.levels} levels)"
            )
        return level


@dataclass(frozen=True)
class PatchRef:
    """A window over one slide, addressed in level-0 pixels, tagged with the
    detector family that consumes it."""

    slide_id: str
    rect: Rect
    criterion_family: CriterionKind

    def key(self) -> tuple:
        return (self.slide_id, self.rect.x, self.rect.y, self.rect.w, self.rect.h)


@dataclass(frozen=True)
class Case:
    manifest: CaseManifest
    pyramids: dict[str, PyramidSlide]

    def pyramid(self, slide_id: str) -> PyramidSlide:
        return self.pyramids[slide_id]


def open_case(manifest_path: str | Path) -> Case:
    """Open a case manifest and all referenced slide pyramids, verifying the
    stored tile layout against the declared metadata."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    pyramids = {}
    for meta in manifest.slides:
        root = Path(meta.pyramid_path)
        if not root.is_absolute():
            root = manifest_path.parent / root
        if not root.is_dir():
            raise MissingInputError(f"pyramid directory not found: {root}")
        expected_levels = pyramid_levels_for(meta.width_px, meta.height_px)
        if meta.levels != expected_levels:
            raise TileStoreMismatchError(
                f"slide {meta.slide_id}: manifest declares {meta.levels} levels, "
                f"layout requires {expected_levels}"
            )
        for level in range(meta.levels):
            lw, lh = meta.level_dims(level)
            ntx, nty = tile_grid(lw, lh)
            corner = tile_path(root, level, 0, 0)
            last = tile_path(root, level, ntx - 1, nty - 1)
            if not corner.is_file() or not last.is_file():
                raise TileStoreMismatchError(
                    f"slide {meta.slide_id}: level {level} tiles missing under {root}"
                )
        pyramids[meta.slide_id] = PyramidSlide(meta=meta, tile_store=root)
    return Case(manifest=manifest, pyramids=pyramids)


def read_region(slide: PyramidSlide, rect: Rect, level: int = 0) -> np.ndarray:
    """Read an RGB uint8 crop; `rect` is in the pixel frame of `level`.

    The crop is assembled pixel-exactly from stored tiles.
    """
    if not 0 <= level < slide.meta.levels:
        raise OutOfBoundsError(f"level {level} out of range")
    lw, lh = slide.level_dims(level)
    if rect.x + rect.w > lw or rect.y + rect.h > lh:
        raise OutOfBoundsError(
            f"rect {rect} exceeds level {level} bounds {lw}x{lh}"
        )
    out = np.empty((rect.h, rect.w, 3), dtype=np.uint8)
    ty0, ty1 = rect.y // TILE_PX, (rect.y + rect.h - 1) // TILE_PX
    tx0, tx1 = rect.x // TILE_PX, (rect.x + rect.w - 1) // TILE_PX
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            path = tile_path(slide.tile_store, level, tx, ty)
            if not path.is_file():
                raise TileStoreMismatchError(f"missing tile {path}")
            tile = np.asarray(Image.open(path).convert("RGB"))
            # overlap of this tile with the requested rect, in level coords
            ox0 = max(rect.x, tx * TILE_PX)
            oy0 = max(rect.y, ty * TILE_PX)
            ox1 = min(rect.x + rect.w, tx * TILE_PX + tile.shape[1])
            oy1 = min(rect.y + rect.h, ty * TILE_PX + tile.shape[0])
            if ox1 <= ox0 or oy1 <= oy0:
                continue
            out[oy0 - rect.y : oy1 - rect.y, ox0 - rect.x : ox1 - rect.x] = tile[
                oy0 - ty * TILE_PX : oy1 - ty * TILE_PX,
                ox0 - tx * TILE_PX : ox1 - tx * TILE_PX,
            ]
    return out


def is_background(patch: np.ndarray, threshold: float = 240.0) -> bool:
    """True iff the mean over all pixels and channels is strictly above the cutoff."""
    if patch.size == 0:
        raise InvalidMetadataError("empty raster")
    return float(patch.mean()) > threshold


def iter_windows(node: Rect, window_px: int, stride_px: int) -> Iterator[Rect]:
    """Row-major window origins at multiples of the stride within a node.

    Windows that do not fit fully inside the node are skipped; a node smaller
    than the window yields nothing.
    """
    for oy in range(0, node.h - window_px + 1, stride_px):
        for ox in range(0, node.w - window_px + 1, stride_px):
            yield Rect(node.x + ox, node.y + oy, window_px, window_px)


def iter_patches(
    slide: PyramidSlide,
    spec: WindowSpec,
    nodes: list[Rect] | tuple[Rect, ...],
    criterion_family: CriterionKind,
    skip_background: bool = True,
    background_mean: float = 240.0,
) -> Iterator[PatchRef]:
    """Enumerate the patch stream for one window spec over the declared nodes.

    Rects are emitted in level-0 pixels regardless of the window's resolution
    family; pixel data for the background test is read at the matching level.
    """
    level = slide.level_for_mpp(spec.scale_mpp)
    factor = 1 << level
    for node in nodes:
        # node footprint in level-L pixels (shrink to what fits entirely inside)
        lx0 = -(-node.x // factor)
        ly0 = -(-node.y // factor)
        lx1 = node.x2 // factor
        ly1 = node.y2 // factor
        if lx1 - lx0 < spec.window_px or ly1 - ly0 < spec.window_px:
            continue
        level_node = Rect(lx0, ly0, lx1 - lx0, ly1 - ly0)
        for win in iter_windows(level_node, spec.window_px, spec.stride_px):
            if skip_background:
                patch = read_region(slide, win, level)
                if is_background(patch, background_mean):
                    continue
            yield PatchRef(
                slide_id=slide.meta.slide_id,
                rect=Rect(win.x * factor, win.y * factor, win.w * factor, win.h * factor),
                criterion_family=criterion_family,
            )


def resize_patch(patch: np.ndarray, target_px: int) -> np.ndarray:
    """Bilinear downsample of a square patch; upscaling is rejected."""
    h, w = patch.shape[:2]
    if h != w:
        raise InvalidMetadataError(f"resize_patch expects a square input, got {w}x{h}")
    if target_px > h:
        raise UnsupportedOperationError(
            f"upscaling {h} -> {target_px} is not supported; the pipeline only downsizes"
        )
    if target_px == h:
        return patch.copy()
    img = Image.fromarray(patch)
    return np.asarray(img.resize((target_px, target_px), Image.BILINEAR))


def enclosing_base_patch(node: Rect, rect: Rect, base_px: int = 512) -> Rect:
    """The base-grid window of a node that contains `rect`'s center, clamped to
    the node. Used to recover the parent patch of a sub-tile detection."""
    cx, cy = rect.center()
    ox = (min(max(cx, node.x), node.x2 - 1) - node.x) // base_px * base_px
    oy = (min(max(cy, node.y), node.y2 - 1) - node.y) // base_px * base_px
    w = min(base_px, node.w - ox)
    h = min(base_px, node.h - oy)
    return Rect(node.x + ox, node.y + oy, w, h)


def write_tile(root: Path, level: int, tx: int, ty: int, pixels: np.ndarray) -> None:
    path = tile_path(root, level, tx, ty)
    path.parent.mkdir(parents=True, exist_ok=True)
    # low compression: tissue noise is incompressible anyway, and encode time
    # dominates synthetic-slide generation
    Image.fromarray(pixels).save(path, format="PNG", compress_level=1)


def build_lower_levels(root: Path, width_px: int, height_px: int) -> None:
    """Generate levels 1..N of a pyramid from already-written level-0 tiles by
    2x2 box reduction (PIL `reduce`, which averages partial edge boxes)."""
    levels = pyramid_levels_for(width_px, height_px)
    prev_w, prev_h = width_px, height_px
    for level in range(1, levels):
        cur_w, cur_h = -(-prev_w // 2), -(-prev_h // 2)
        ntx, nty = tile_grid(cur_w, cur_h)
        for ty in range(nty):
            for tx in range(ntx):
                # source region on the previous level covering this tile
                x0, y0 = tx * TILE_PX * 2, ty * TILE_PX * 2
                w = min(TILE_PX * 2, prev_w - x0)
                h = min(TILE_PX * 2, prev_h - y0)
                src = _read_raw_level(root, level - 1, Rect(x0, y0, w, h))
                reduced = np.asarray(Image.fromarray(src).reduce(2))
                write_tile(root, level, tx, ty, reduced)
        prev_w, prev_h = cur_w, cur_h


def _read_raw_level(root: Path, level: int, rect: Rect) -> np.ndarray:
    """Tile assembly used while building a pyramid (no metadata checks)."""
    out = np.empty((rect.h, rect.w, 3), dtype=np.uint8)
    ty0, ty1 = rect.y // TILE_PX, (rect.y + rect.h - 1) // TILE_PX
    tx0, tx1 = rect.x // TILE_PX, (rect.x + rect.w - 1) // TILE_PX
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            tile = np.asarray(Image.open(tile_path(root, level, tx, ty)).convert("RGB"))
            ox0 = max(rect.x, tx * TILE_PX)
            oy0 = max(rect.y, ty * TILE_PX)
            ox1 = min(rect.x2, tx * TILE_PX + tile.shape[1])
            oy1 = min(rect.y2, ty * TILE_PX + tile.shape[0])
            out[oy0 - rect.y : oy1 - rect.y, ox0 - rect.x : ox1 - rect.x] = tile[
                oy0 - ty * TILE_PX : oy1 - ty * TILE_PX,
                ox0 - tx * TILE_PX : ox1 - tx * TILE_PX,
            ]
    return out
