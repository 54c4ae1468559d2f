// Viewer math: projection between level-0 slide coordinates and screen
// pixels, evidence-centered viewport computation, and tile selection. All
// pure functions, so overlays provably stay anchored to tissue coordinates.

import type { EvidenceRects, Rect, SlideMeta } from './types.js';

export const TILE_PX = 512;

export interface Viewport {
  /** Level-0 slide point at the viewport center. */
  centerX: number;
  centerY: number;
  /** Screen pixels per level-0 slide pixel. */
  scale: number;
  width: number;
  height: number;
}

export interface TileAddress {
  level: number;
  tx: number;
  ty: number;
  /** Screen-space placement of the tile. */
  screen: Rect;
}

export function rectCenter(rect: Rect): { x: number; y: number } {
  return { x: rect.x + rect.w / 2, y: rect.y + rect.h / 2 };
}

export function containsRect(outer: Rect, inner: Rect): boolean {
  return (
    outer.x <= inner.x &&
    outer.y <= inner.y &&
    inner.x + inner.w <= outer.x + outer.w &&
    inner.y + inner.h <= outer.y + outer.h
  );
}

/** Viewport centered on the finding, zoomed so the HPF context box fills
 * roughly `fill` (80% by default) of the viewport's short side. */
export function viewForEvidence(
  rects: EvidenceRects,
  width: number,
  height: number,
  fill = 0.8,
): Viewport {
  const center = rectCenter(rects.zoom);
  const longSide = Math.max(rects.context.w, rects.context.h);
  const scale = (Math.min(width, height) * fill) / longSide;
  return { centerX: center.x, centerY: center.y, scale, width, height };
}

export function project(rect: Rect, vp: Viewport): Rect {
  return {
    x: vp.width / 2 + (rect.x - vp.centerX) * vp.scale,
    y: vp.height / 2 + (rect.y - vp.centerY) * vp.scale,
    w: rect.w * vp.scale,
    h: rect.h * vp.scale,
  };
}

export function unproject(screenX: number, screenY: number, vp: Viewport): { x: number; y: number } {
  return {
    x: vp.centerX + (screenX - vp.width / 2) / vp.scale,
    y: vp.centerY + (screenY - vp.height / 2) / vp.scale,
  };
}

export function scaleBounds(slide: SlideMeta, vp: Viewport): { min: number; max: number } {
  // zoom range follows the pyramid: from the whole slide fitting the view up
  // to 4x native resolution
  const fit = Math.min(vp.width / slide.width_px, vp.height / slide.height_px);
  return { min: Math.min(fit, 1), max: 4 };
}

export function clampViewport(vp: Viewport, slide: SlideMeta): Viewport {
  const { min, max } = scaleBounds(slide, vp);
  const scale = Math.min(Math.max(vp.scale, min), max);
  const centerX = Math.min(Math.max(vp.centerX, 0), slide.width_px);
  const centerY = Math.min(Math.max(vp.centerY, 0), slide.height_px);
  return { ...vp, scale, centerX, centerY };
}

/** Pyramid level whose resolution best serves the current scale (each level
 * halves; render from the level with at least screen resolution). */
export function levelForScale(scale: number, levels: number): number {
  let level = 0;
  while (level + 1 < levels && scale * (1 << (level + 1)) <= 1) {
    level += 1;
  }
  return level;
}

export function levelDims(slide: SlideMeta, level: number): { w: number; h: number } {
  const f = 1 << level;
  return { w: Math.ceil(slide.width_px / f), h: Math.ceil(slide.height_px / f) };
}

/** Tiles covering the viewport at the chosen level, with screen placements. */
export function visibleTiles(vp: Viewport, slide: SlideMeta): TileAddress[] {
  const level = levelForScale(vp.scale, slide.levels);
  const factor = 1 << level;
  const dims = levelDims(slide, level);
  const topLeft = unproject(0, 0, vp);
  const bottomRight = unproject(vp.width, vp.height, vp);
  const tx0 = Math.max(0, Math.floor(topLeft.x / factor / TILE_PX));
  const ty0 = Math.max(0, Math.floor(topLeft.y / factor / TILE_PX));
  const tx1 = Math.min(Math.ceil(dims.w / TILE_PX) - 1, Math.floor(bottomRight.x / factor / TILE_PX));
  const ty1 = Math.min(Math.ceil(dims.h / TILE_PX) - 1, Math.floor(bottomRight.y / factor / TILE_PX));
  const tiles: TileAddress[] = [];
  for (let ty = ty0; ty <= ty1; ty += 1) {
    for (let tx = tx0; tx <= tx1; tx += 1) {
      const w0 = Math.min(TILE_PX, dims.w - tx * TILE_PX) * factor;
      const h0 = Math.min(TILE_PX, dims.h - ty * TILE_PX) * factor;
      const slideRect: Rect = { x: tx * TILE_PX * factor, y: ty * TILE_PX * factor, w: w0, h: h0 };
      tiles.push({ level, tx, ty, screen: project(slideRect, vp) });
    }
  }
  return tiles;
}
