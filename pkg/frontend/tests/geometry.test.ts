import { describe, expect, it } from 'vitest';

import {
  clampViewport,
  containsRect,
  levelForScale,
  project,
  rectCenter,
  unproject,
  viewForEvidence,
  visibleTiles,
} from '../src/geometry.js';
import type { EvidenceRects, SlideMeta } from '../src/types.js';

const RECTS: EvidenceRects = {
  context: { x: 1000, y: 1000, w: 2000, h: 2000 },
  patch: { x: 1744, y: 1744, w: 512, h: 512 },
  zoom: { x: 1880, y: 1880, w: 240, h: 240 },
};

const SLIDE: SlideMeta = {
  slide_id: 's',
  stain: 'HE',
  width_px: 9216,
  height_px: 9216,
  mpp: 0.25,
  levels: 4,
  pyramid_path: 'slides/s',
  nodes: [],
};

describe('viewForEvidence', () => {
  it('centers the view on the detection box center', () => {
    const vp = viewForEvidence(RECTS, 800, 600);
    const center = rectCenter(RECTS.zoom);
    expect(vp.centerX).toBe(center.x);
    expect(vp.centerY).toBe(center.y);
    const projected = project(RECTS.zoom, vp);
    expect(projected.x + projected.w / 2).toBeCloseTo(400, 6);
    expect(projected.y + projected.h / 2).toBeCloseTo(300, 6);
  });

  it('zooms so the HPF context box fills ~80% of the short side', () => {
    const vp = viewForEvidence(RECTS, 800, 600);
    const projected = project(RECTS.context, vp);
    expect(Math.max(projected.w, projected.h)).toBeCloseTo(600 * 0.8, 6);
  });

  it('keeps the nesting red inside blue inside yellow after projection', () => {
    const vp = viewForEvidence(RECTS, 800, 600);
    const context = project(RECTS.context, vp);
    const patch = project(RECTS.patch, vp);
    const zoom = project(RECTS.zoom, vp);
    expect(containsRect(context, patch)).toBe(true);
    expect(containsRect(patch, zoom)).toBe(true);
  });
});

describe('projection', () => {
  it('boxes stay anchored to tissue coordinates across zoom changes', () => {
    const vp1 = viewForEvidence(RECTS, 800, 600);
    const vp2 = { ...vp1, scale: vp1.scale / 2 }; // zoomed out 2x
    const p1 = project(RECTS.zoom, vp1);
    const p2 = project(RECTS.zoom, vp2);
    // same tissue point unprojects identically from both screen positions
    const t1 = unproject(p1.x, p1.y, vp1);
    const t2 = unproject(p2.x, p2.y, vp2);
    expect(t1.x).toBeCloseTo(t2.x, 6);
    expect(t1.y).toBeCloseTo(t2.y, 6);
    expect(p2.w).toBeCloseTo(p1.w / 2, 6);
  });

  it('project and unproject are inverse', () => {
    const vp = viewForEvidence(RECTS, 800, 600);
    const pt = unproject(123, 456, vp);
    const back = project({ x: pt.x, y: pt.y, w: 1, h: 1 }, vp);
    expect(back.x).toBeCloseTo(123, 6);
    expect(back.y).toBeCloseTo(456, 6);
  });
});

describe('pyramid selection', () => {
  it('clamps zoom to the pyramid range', () => {
    const tiny = clampViewport(
      { centerX: 100, centerY: 100, scale: 1e-6, width: 800, height: 600 },
      SLIDE,
    );
    expect(tiny.scale).toBeGreaterThanOrEqual(Math.min(800 / SLIDE.width_px, 600 / SLIDE.height_px));
    const huge = clampViewport(
      { centerX: 100, centerY: 100, scale: 100, width: 800, height: 600 },
      SLIDE,
    );
    expect(huge.scale).toBeLessThanOrEqual(4);
  });

  it('chooses deeper levels as the view zooms out', () => {
    expect(levelForScale(1, 4)).toBe(0);
    expect(levelForScale(0.5, 4)).toBe(1);
    expect(levelForScale(0.25, 4)).toBe(2);
    expect(levelForScale(0.01, 4)).toBe(3); // clamped to the deepest level
  });

  it('visible tiles cover the viewport and carry screen placements', () => {
    const vp = { centerX: 4608, centerY: 4608, scale: 0.0651, width: 800, height: 600 };
    const tiles = visibleTiles(vp, SLIDE);
    expect(tiles.length).toBeGreaterThan(0);
    for (const tile of tiles) {
      expect(tile.level).toBe(levelForScale(vp.scale, SLIDE.levels));
      expect(tile.screen.w).toBeGreaterThan(0);
    }
  });
});
