import { beforeEach, describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { SlideViewer } from '../src/viewer.js';
import { fixtureService } from './fixtures.js';

function makeViewer() {
  const fixture = fixtureService();
  const container = document.createElement('div');
  document.body.append(container);
  const viewer = new SlideViewer(new ApiClient('', fixture.fetchFn), container, 800, 600);
  viewer.setSlide(fixture.slide, 'fixture');
  return { viewer, container, fixture };
}

describe('slide viewer', () => {
  beforeEach(() => document.body.replaceChildren());

  it('heatmap toggle is an involution', async () => {
    const { viewer, container } = makeViewer();
    const img = container.querySelector<HTMLImageElement>('.heatmap-overlay')!;
    expect(img.hidden).toBe(true);
    expect(await viewer.toggleHeatmap('MitoticCount')).toBe(true);
    expect(img.hidden).toBe(false);
    expect(viewer.activeHeatmap).toBe('MitoticCount');
    expect(await viewer.toggleHeatmap('MitoticCount')).toBe(false);
    expect(img.hidden).toBe(true);
    expect(viewer.activeHeatmap).toBeNull();
  });

  it('zooming out keeps overlay boxes anchored to tissue', () => {
    const { viewer } = makeViewer();
    viewer.setRegionBoxes([{ x: 2000, y: 2000, w: 2000, h: 2000 }]);
    const before = viewer.projectedBoxes()[0].screen;
    const tissueBefore = {
      x: viewer.viewport.centerX + (before.x - 400) / viewer.viewport.scale,
      y: viewer.viewport.centerY + (before.y - 300) / viewer.viewport.scale,
    };
    viewer.zoomBy(1 / 2);
    const after = viewer.projectedBoxes()[0].screen;
    const tissueAfter = {
      x: viewer.viewport.centerX + (after.x - 400) / viewer.viewport.scale,
      y: viewer.viewport.centerY + (after.y - 300) / viewer.viewport.scale,
    };
    expect(tissueAfter.x).toBeCloseTo(tissueBefore.x, 4);
    expect(tissueAfter.y).toBeCloseTo(tissueBefore.y, 4);
  });

  it('pan moves the viewport center in slide coordinates', () => {
    const { viewer } = makeViewer();
    const cx = viewer.viewport.centerX;
    viewer.panBy(100, 0);
    expect(viewer.viewport.centerX).toBeCloseTo(cx - 100 / viewer.viewport.scale, 4);
  });
});
