// Evidence list: one card per sampled item with the patch/saliency thumbnail
// pair, probability, confidence chip, and approve/decline/uncertain buttons.

import type { ApiClient } from './api.js';
import type { EvidenceItem, ReviewVerb } from './types.js';

export interface EvidenceCallbacks {
  onOpen(item: EvidenceItem): void;
  onReview(item: EvidenceItem, verb: ReviewVerb): void;
}

export class EvidenceList {
  private items: EvidenceItem[] = [];
  private caseId = '';
  private statuses: Record<string, string> = {};
  selectedIndex = -1;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly callbacks: EvidenceCallbacks,
  ) {
    this.root.classList.add('evidence-list');
  }

  get selected(): EvidenceItem | null {
    return this.items[this.selectedIndex] ?? null;
  }

  update(caseId: string, items: EvidenceItem[], statuses: Record<string, string>): void {
    this.caseId = caseId;
    this.items = items;
    this.statuses = statuses;
    if (this.selectedIndex >= items.length) this.selectedIndex = items.length ? 0 : -1;
    this.render();
  }

  private render(): void {
    this.root.replaceChildren();
    if (!this.items.length) {
      const empty = document.createElement('p');
      empty.className = 'evidence-empty';
      empty.textContent = 'No positive findings for this criterion.';
      this.root.append(empty);
      return;
    }
    this.items.forEach((item, index) => {
      const card = document.createElement('div');
      card.className = 'evidence-card';
      card.dataset.evidenceId = item.evidence_id;
      const status = this.statuses[item.evidence_id] ?? 'unreviewed';
      card.dataset.status = status;
      if (index === this.selectedIndex) card.classList.add('selected');

      const thumbs = document.createElement('div');
      thumbs.className = 'thumb-pair';
      const patchImg = document.createElement('img');
      patchImg.className = 'thumb patch-thumb';
      patchImg.src = this.api.regionUrl(item.slide_id, item.rects.zoom);
      patchImg.alt = 'finding';
      thumbs.append(patchImg);
      if (item.saliency_ref) {
        const sal = document.createElement('img');
        sal.className = 'thumb saliency-thumb';
        sal.src = this.api.saliencyUrl(this.caseId, item.saliency_ref);
        sal.alt = 'saliency';
        thumbs.append(sal);
      }
      card.append(thumbs);

      const meta = document.createElement('div');
      meta.className = 'evidence-meta';
      if (item.prob !== null) {
        const prob = document.createElement('span');
        prob.className = 'prob';
        prob.textContent = `p=${item.prob.toFixed(2)}`;
        meta.append(prob);
      }
      if (item.confidence) {
        const chip = document.createElement('span');
        chip.className = `confidence-chip confidence-${item.confidence.toLowerCase()}`;
        chip.textContent = item.confidence;
        meta.append(chip);
      }
      if (item.value !== null && item.value !== undefined) {
        const value = document.createElement('span');
        value.className = 'value';
        value.textContent = `count ${item.value}`;
        meta.append(value);
      }
      const statusChip = document.createElement('span');
      statusChip.className = `status-chip status-${status}`;
      statusChip.textContent = status;
      meta.append(statusChip);
      card.append(meta);

      const actions = document.createElement('div');
      actions.className = 'evidence-actions';
      (['approve', 'decline', 'uncertain'] as ReviewVerb[]).forEach((verb) => {
        const btn = document.createElement('button');
        btn.className = `review-btn review-${verb}`;
        btn.textContent = verb === 'uncertain' ? 'declare-uncertain' : verb;
        btn.addEventListener('click', (e) => {
          e.stopPropagation();
          this.callbacks.onReview(item, verb);
        });
        actions.append(btn);
      });
      card.append(actions);

      card.addEventListener('click', () => {
        this.selectedIndex = index;
        this.callbacks.onOpen(item);
        this.render();
      });
      this.root.append(card);
    });
  }
}
