// Application shell wiring the criteria panel, evidence list, and slide
// viewer to the review service. The UI holds no grading logic: every state
// transition comes back from the service response and is applied in place,
// with no page reload.

import { ApiClient, ApiError } from './api.js';
import { EvidenceList } from './evidence.js';
import { CriteriaPanel } from './panel.js';
import { SlideViewer } from './viewer.js';
import type { EvidenceItem, ReviewVerb, SessionState, SlideMeta } from './types.js';

export class ReviewApp {
  readonly panel: CriteriaPanel;
  readonly evidenceList: EvidenceList;
  readonly viewer: SlideViewer;
  private readonly errorBanner: HTMLElement;
  private readonly heatmapButton: HTMLButtonElement;

  caseId = '';
  sessionId = '';
  state: SessionState | null = null;
  selectedCriterion = 'MitoticCount';
  private slideCache = new Map<string, SlideMeta>();

  constructor(
    readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {
    root.classList.add('review-app');
    const panelEl = document.createElement('aside');
    const centerEl = document.createElement('main');
    const evidenceEl = document.createElement('section');
    this.errorBanner = document.createElement('div');
    this.errorBanner.className = 'error-banner';
    this.errorBanner.hidden = true;

    const toolbar = document.createElement('div');
    toolbar.className = 'viewer-toolbar';
    this.heatmapButton = document.createElement('button');
    this.heatmapButton.className = 'heatmap-toggle';
    this.heatmapButton.textContent = 'Heatmap';
    this.heatmapButton.addEventListener('click', () => void this.toggleHeatmap());
    toolbar.append(this.heatmapButton);

    const viewerEl = document.createElement('div');
    centerEl.append(this.errorBanner, toolbar, viewerEl);
    root.append(panelEl, centerEl, evidenceEl);

    this.panel = new CriteriaPanel(panelEl, {
      onSelect: (kind) => void this.selectCriterion(kind),
      onOverride: (kind, value) => void this.submitOverride(kind, value),
    });
    this.evidenceList = new EvidenceList(evidenceEl, api, {
      onOpen: (item) => void this.openEvidence(item),
      onReview: (item, verb) => void this.submitReview(item.evidence_id, verb),
    });
    this.viewer = new SlideViewer(api, viewerEl);
    this.bindKeyboard();
  }

  async start(caseId?: string): Promise<void> {
    if (!caseId) {
      const cases = await this.api.listCases();
      if (!cases.length) {
        this.showError('No processed cases available.');
        return;
      }
      caseId = cases[0].case_id;
    }
    this.caseId = caseId;
    const session = await this.api.createSession(caseId);
    this.sessionId = session.session_id;
    this.applyState(session.state);
    await this.selectCriterion(this.selectedCriterion);
    const slideId = this.state?.regions.mitosis_slide ?? null;
    if (slideId) {
      this.viewer.setSlide(await this.slideMeta(slideId), this.caseId);
    }
  }

  applyState(state: SessionState): void {
    this.state = state;
    this.panel.update(state.grade);
    this.refreshEvidence();
  }

  private reviewStatuses(): Record<string, string> {
    if (!this.state) return {};
    return { ...this.state.detection_statuses, ...this.state.patch_review };
  }

  private refreshEvidence(): void {
    if (!this.state) return;
    const items = this.state.evidence[this.selectedCriterion] ?? [];
    this.evidenceList.update(this.caseId, items, this.reviewStatuses());
  }

  async selectCriterion(kind: string): Promise<void> {
    this.selectedCriterion = kind;
    this.refreshEvidence();
  }

  async openEvidence(item: EvidenceItem): Promise<void> {
    const slide = await this.slideMeta(item.slide_id);
    this.viewer.openEvidence(item, slide);
  }

  async submitReview(evidenceId: string, verb: ReviewVerb): Promise<void> {
    await this.callService(() => this.api.submitEvidenceAction(this.sessionId, evidenceId, verb));
  }

  async submitOverride(kind: string, value: string | number | null): Promise<void> {
    await this.callService(() => this.api.submitOverride(this.sessionId, kind, value));
  }

  async toggleHeatmap(): Promise<void> {
    try {
      const shown = await this.viewer.toggleHeatmap(this.selectedCriterion);
      this.heatmapButton.classList.toggle('active', shown);
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.heatmapButton.disabled = true;
        return;
      }
      throw err;
    }
  }

  private async callService(call: () => Promise<{ state: SessionState }>): Promise<void> {
    try {
      this.hideError();
      const response = await call();
      this.applyState(response.state);
    } catch (err) {
      if (err instanceof ApiError) {
        this.showError(err.detail);
        if (err.status === 404) {
          // stale evidence: someone resolved it elsewhere; refresh the session
          const session = await this.api.session(this.sessionId);
          this.applyState(session.state);
        }
        return;
      }
      this.showError('Service unreachable. Retry when the connection is back.');
    }
  }

  private async slideMeta(slideId: string): Promise<SlideMeta> {
    let meta = this.slideCache.get(slideId);
    if (!meta) {
      meta = await this.api.slideMeta(slideId);
      this.slideCache.set(slideId, meta);
    }
    return meta;
  }

  private bindKeyboard(): void {
    document.addEventListener('keydown', (e) => {
      const target = e.target as HTMLElement | null;
      if (target && (target.tagName === 'INPUT' || target.tagName === 'TEXTAREA')) return;
      const selected = this.evidenceList.selected;
      if (!selected) return;
      const verb: ReviewVerb | null =
        e.key === 'a' || e.key === 'A'
          ? 'approve'
          : e.key === 'd' || e.key === 'D'
            ? 'decline'
            : e.key === 'u' || e.key === 'U'
              ? 'uncertain'
              : null;
      if (verb) {
        e.preventDefault();
        void this.submitReview(selected.evidence_id, verb);
      }
    });
  }

  showError(message: string): void {
    this.errorBanner.textContent = message;
    this.errorBanner.hidden = false;
  }

  hideError(): void {
    this.errorBanner.hidden = true;
  }
}
