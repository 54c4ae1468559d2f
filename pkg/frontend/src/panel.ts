// Criteria panel: suggested grade headline, per-criterion rows with status
// color bars, an arrow on the main contributing criterion, and a right-click
// override menu (found / not found / uncertain / clear).

import type { Grading } from './types.js';

const CRITERION_LABELS: Record<string, string> = {
  MitoticCount: 'Mitotic count',
  Ki67Index: 'Ki-67 index',
  Hypercellularity: 'Hypercellularity',
  ProminentNucleoli: 'Prominent nucleoli',
  Sheeting: 'Sheeting',
  Necrosis: 'Necrosis',
  SmallCell: 'Small cell',
  BrainInvasion: 'Brain invasion',
  Subtype: 'Subtype',
};

export interface PanelCallbacks {
  onSelect(kind: string): void;
  onOverride(kind: string, value: string | null): void;
}

export class CriteriaPanel {
  private selected: string | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly callbacks: PanelCallbacks,
  ) {
    this.root.classList.add('criteria-panel');
  }

  update(grading: Grading): void {
    this.root.replaceChildren();

    const headline = document.createElement('h2');
    headline.className = 'grade-headline';
    headline.textContent = `Suggested: WHO Grade ${grading.grade}`;
    this.root.append(headline);

    const rules = document.createElement('ul');
    rules.className = 'fired-rules';
    for (const rule of grading.fired_rules) {
      const li = document.createElement('li');
      li.textContent = rule.text;
      rules.append(li);
    }
    this.root.append(rules);

    const list = document.createElement('div');
    list.className = 'criteria-list';
    for (const row of grading.criteria) {
      const el = document.createElement('div');
      el.className = 'criterion-row';
      el.dataset.kind = row.kind;
      if (row.kind === this.selected) el.classList.add('selected');

      const arrow = document.createElement('span');
      arrow.className = 'main-arrow';
      arrow.textContent = row.kind === grading.main_contributing ? '→' : '';
      el.append(arrow);

      const bar = document.createElement('span');
      bar.className = `color-bar bar-${row.color}`;
      el.append(bar);

      const label = document.createElement('span');
      label.className = 'criterion-label';
      label.textContent = CRITERION_LABELS[row.kind] ?? row.kind;
      el.append(label);

      const value = document.createElement('span');
      value.className = 'criterion-value';
      value.textContent = row.value !== undefined && row.value !== null ? String(row.value) : row.status;
      el.append(value);

      el.addEventListener('click', () => {
        this.selected = row.kind;
        this.callbacks.onSelect(row.kind);
        this.update(grading);
      });
      el.addEventListener('contextmenu', (e) => {
        e.preventDefault();
        this.showOverrideMenu(el, row.kind);
      });
      list.append(el);
    }
    this.root.append(list);
  }

  private showOverrideMenu(anchor: HTMLElement, kind: string): void {
    this.root.querySelector('.override-menu')?.remove();
    const menu = document.createElement('div');
    menu.className = 'override-menu';
    const options: Array<[string, string | null]> = [
      ['found', 'found'],
      ['not found', 'not_found'],
      ['uncertain', 'uncertain'],
      ['clear override', null],
    ];
    for (const [label, value] of options) {
      const btn = document.createElement('button');
      btn.textContent = label;
      btn.dataset.override = value ?? 'clear';
      btn.addEventListener('click', () => {
        menu.remove();
        this.callbacks.onOverride(kind, value);
      });
      menu.append(btn);
    }
    anchor.append(menu);
  }
}
