// Deep-zoom slide viewer: canvas tile rendering plus DOM overlay boxes (HPF
// yellow, patch blue, detection red) and a heatmap layer. Overlay elements
// are re-projected on every viewport change, so they stay anchored to tissue
// coordinates at any zoom.

import type { ApiClient } from './api.js';
import type { EvidenceItem, HeatmapMeta, Rect, SlideMeta } from './types.js';
import {
  Viewport,
  clampViewport,
  project,
  unproject,
  viewForEvidence,
  visibleTiles,
} from './geometry.js';

export type OverlayRole = 'hpf_yellow' | 'patch_blue' | 'detection_red' | 'region_sample';

export interface OverlayBox {
  rect: Rect;
  role: OverlayRole;
}

export class SlideViewer {
  readonly element: HTMLElement;
  private readonly canvas: HTMLCanvasElement;
  private readonly overlayLayer: HTMLElement;
  private readonly heatmapImg: HTMLImageElement;
  private slide: SlideMeta | null = null;
  private caseId = '';
  viewport: Viewport;
  private boxes: OverlayBox[] = [];
  private heatmap: { kind: string; meta: HeatmapMeta } | null = null;
  private tileCache = new Map<string, HTMLImageElement>();
  private dragging: { x: number; y: number } | null = null;

  constructor(
    private readonly api: ApiClient,
    container: HTMLElement,
    width = 800,
    height = 600,
  ) {
    this.element = container;
    this.element.classList.add('slide-viewer');
    this.canvas = document.createElement('canvas');
    this.canvas.width = width;
    this.canvas.height = height;
    this.overlayLayer = document.createElement('div');
    this.overlayLayer.className = 'overlay-layer';
    this.heatmapImg = document.createElement('img');
    this.heatmapImg.className = 'heatmap-overlay';
    this.heatmapImg.hidden = true;
    this.element.append(this.canvas, this.heatmapImg, this.overlayLayer);
    this.viewport = { centerX: 0, centerY: 0, scale: 0.05, width, height };
    this.bindPointer();
  }

  get activeHeatmap(): string | null {
    return this.heatmap?.kind ?? null;
  }

  setSlide(slide: SlideMeta, caseId: string): void {
    if (this.slide?.slide_id !== slide.slide_id) {
      this.tileCache.clear();
      this.heatmap = null;
      this.heatmapImg.hidden = true;
    }
    this.slide = slide;
    this.caseId = caseId;
    this.viewport = clampViewport(
      {
        ...this.viewport,
        centerX: slide.width_px / 2,
        centerY: slide.height_px / 2,
        scale: Math.min(this.viewport.width / slide.width_px, this.viewport.height / slide.height_px),
      },
      slide,
    );
    this.render();
  }

  /** Register an evidence item: center on the finding with the HPF box
   * filling ~80% of the view, and draw the nested yellow/blue/red boxes. */
  openEvidence(item: EvidenceItem, slide: SlideMeta): void {
    if (this.slide?.slide_id !== slide.slide_id) {
      this.setSlide(slide, this.caseId);
    }
    this.viewport = clampViewport(
      viewForEvidence(item.rects, this.viewport.width, this.viewport.height),
      slide,
    );
    this.boxes = [
      { rect: item.rects.context, role: 'hpf_yellow' },
      { rect: item.rects.patch, role: 'patch_blue' },
      { rect: item.rects.zoom, role: 'detection_red' },
    ];
    this.render();
  }

  setRegionBoxes(rects: Rect[]): void {
    this.boxes = this.boxes
      .filter((b) => b.role !== 'region_sample')
      .concat(rects.map((rect) => ({ rect, role: 'region_sample' as OverlayRole })));
    this.render();
  }

  async toggleHeatmap(kind: string): Promise<boolean> {
    if (this.heatmap?.kind === kind) {
      this.heatmap = null;
      this.heatmapImg.hidden = true;
      this.render();
      return false;
    }
    const meta = await this.api.heatmapMeta(this.caseId, kind);
    this.heatmap = { kind, meta };
    this.heatmapImg.src = this.api.heatmapUrl(this.caseId, kind);
    this.heatmapImg.hidden = false;
    this.render();
    return true;
  }

  zoomBy(factor: number, anchorX?: number, anchorY?: number): void {
    if (!this.slide) return;
    const ax = anchorX ?? this.viewport.width / 2;
    const ay = anchorY ?? this.viewport.height / 2;
    const before = unproject(ax, ay, this.viewport);
    const next = clampViewport({ ...this.viewport, scale: this.viewport.scale * factor }, this.slide);
    // keep the anchor point fixed on screen
    const after = unproject(ax, ay, next);
    this.viewport = clampViewport(
      {
        ...next,
        centerX: next.centerX + (before.x - after.x),
        centerY: next.centerY + (before.y - after.y),
      },
      this.slide,
    );
    this.render();
  }

  panBy(dxScreen: number, dyScreen: number): void {
    if (!this.slide) return;
    this.viewport = clampViewport(
      {
        ...this.viewport,
        centerX: this.viewport.centerX - dxScreen / this.viewport.scale,
        centerY: this.viewport.centerY - dyScreen / this.viewport.scale,
      },
      this.slide,
    );
    this.render();
  }

  projectedBoxes(): { role: OverlayRole; screen: Rect }[] {
    return this.boxes.map((b) => ({ role: b.role, screen: project(b.rect, this.viewport) }));
  }

  render(): void {
    this.renderTiles();
    this.renderOverlays();
    this.renderHeatmap();
  }

  private renderTiles(): void {
    if (!this.slide) return;
    const ctx = this.canvas.getContext('2d');
    if (!ctx) return; // test environments have no canvas backend
    ctx.fillStyle = '#f3f3f5';
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    for (const tile of visibleTiles(this.viewport, this.slide)) {
      const key = `${tile.level}/${tile.tx}/${tile.ty}`;
      let img = this.tileCache.get(key);
      if (!img) {
        img = new Image();
        img.src = this.api.tileUrl(this.slide.slide_id, tile.level, tile.tx, tile.ty);
        img.onload = () => this.render();
        this.tileCache.set(key, img);
      }
      if (img.complete && img.naturalWidth > 0) {
        ctx.drawImage(img, tile.screen.x, tile.screen.y, tile.screen.w, tile.screen.h);
      }
    }
  }

  private renderOverlays(): void {
    this.overlayLayer.replaceChildren();
    for (const { role, screen } of this.projectedBoxes()) {
      const div = document.createElement('div');
      div.className = `overlay-box ${role}`;
      div.style.left = `${screen.x}px`;
      div.style.top = `${screen.y}px`;
      div.style.width = `${screen.w}px`;
      div.style.height = `${screen.h}px`;
      this.overlayLayer.append(div);
    }
  }

  private renderHeatmap(): void {
    if (!this.heatmap || !this.slide) return;
    const meta = this.heatmap.meta;
    const gridRect: Rect = {
      x: meta.origin.x,
      y: meta.origin.y,
      w: this.slide.width_px - meta.origin.x,
      h: this.slide.height_px - meta.origin.y,
    };
    const screen = project(gridRect, this.viewport);
    this.heatmapImg.style.left = `${screen.x}px`;
    this.heatmapImg.style.top = `${screen.y}px`;
    this.heatmapImg.style.width = `${screen.w}px`;
    this.heatmapImg.style.height = `${screen.h}px`;
  }

  private bindPointer(): void {
    this.element.addEventListener('pointerdown', (e) => {
      this.dragging = { x: e.clientX, y: e.clientY };
    });
    this.element.addEventListener('pointermove', (e) => {
      if (!this.dragging) return;
      this.panBy(e.clientX - this.dragging.x, e.clientY - this.dragging.y);
      this.dragging = { x: e.clientX, y: e.clientY };
    });
    this.element.addEventListener('pointerup', () => {
      this.dragging = null;
    });
    this.element.addEventListener('wheel', (e) => {
      e.preventDefault();
      const rect = this.element.getBoundingClientRect();
      this.zoomBy(e.deltaY < 0 ? 1.2 : 1 / 1.2, e.clientX - rect.left, e.clientY - rect.top);
    });
  }
}
