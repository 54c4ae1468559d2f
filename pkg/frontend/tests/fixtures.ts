// In-memory fixture service for the UI tests: serves the same JSON shapes as
// the review service and applies decline/approve/override actions to a tiny
// grading model (4 mitoses; declining one drops the count to 3 and the grade
// to I, mirroring the backend rule engine).

import type { FetchLike } from '../src/api.js';
import type {
  BarColor,
  CriterionRow,
  EvidenceItem,
  Grading,
  SessionState,
  SlideMeta,
} from '../src/types.js';

export type Suggestion = 'present' | 'absent' | 'unconfirmed' | 'not_applicable';
export type OverrideValue = 'found' | 'not_found' | 'uncertain' | null;

/** The status-color table the backend implements (confirmed present -> red,
 * confirmed absent -> green, unconfirmed/uncertain -> orange, N/A -> gray). */
export function expectedColor(ai: Suggestion, override: OverrideValue): BarColor {
  if (override === 'found') return 'red';
  if (override === 'not_found') return 'green';
  if (override === 'uncertain') return 'orange';
  if (ai === 'not_applicable') return 'gray';
  return 'orange';
}

export function comboRows(): Array<{ row: CriterionRow; ai: Suggestion; override: OverrideValue }> {
  const ais: Suggestion[] = ['present', 'absent', 'unconfirmed'];
  const overrides: OverrideValue[] = [null, 'found', 'not_found', 'uncertain'];
  const kinds = [
    'MitoticCount',
    'Ki67Index',
    'Hypercellularity',
    'ProminentNucleoli',
    'Sheeting',
    'Necrosis',
    'SmallCell',
    'BrainInvasion',
    'Subtype',
    'ComboA',
    'ComboB',
    'ComboC',
  ];
  const combos: Array<{ row: CriterionRow; ai: Suggestion; override: OverrideValue }> = [];
  let i = 0;
  for (const ai of ais) {
    for (const override of overrides) {
      combos.push({
        row: {
          kind: kinds[i % kinds.length],
          status: override ?? ai,
          color: expectedColor(ai, override),
        },
        ai,
        override,
      });
      i += 1;
    }
  }
  return combos;
}

const SLIDE: SlideMeta = {
  slide_id: 'fix-he',
  stain: 'HE',
  width_px: 9216,
  height_px: 9216,
  mpp: 0.25,
  levels: 4,
  pyramid_path: 'slides/fix-he',
  nodes: [{ x: 512, y: 512, w: 8192, h: 8192 }],
};

function evidenceItems(): EvidenceItem[] {
  const items: EvidenceItem[] = [];
  for (let i = 0; i < 4; i += 1) {
    const px = 2048 + i * 512;
    items.push({
      evidence_id: `det:fix-he:MitoticCount:${px}:2048:240:240`,
      criterion: 'MitoticCount',
      slide_id: 'fix-he',
      detection_id: `det:fix-he:MitoticCount:${px}:2048:240:240`,
      prob: 1.0,
      confidence: 'High',
      value: null,
      rects: {
        context: { x: px - 880, y: 1168, w: 2000, h: 2000 },
        patch: { x: px - 136, y: 1912, w: 512, h: 512 },
        zoom: { x: px, y: 2048, w: 240, h: 240 },
      },
      saliency_ref: `saliency/det_${i}.png`,
    });
  }
  return items;
}

interface FixtureModel {
  declined: Set<string>;
  overrides: Map<string, string>;
  seq: number;
}

function gradingFor(model: FixtureModel): Grading {
  const count = 4 - model.declined.size;
  const necrosisOverride = model.overrides.get('Necrosis') ?? null;
  const features = necrosisOverride === 'found' ? 3 : 2;
  const grade = count >= 4 || features >= 3 ? 'II' : 'I';
  const rows: CriterionRow[] = [
    { kind: 'MitoticCount', status: count >= 4 ? 'present' : 'absent', color: 'orange', value: count },
    { kind: 'Ki67Index', status: 'uncertain', color: 'orange', value: 18.2 },
    { kind: 'Hypercellularity', status: 'uncertain', color: 'orange' },
    { kind: 'ProminentNucleoli', status: 'present', color: 'orange' },
    { kind: 'Sheeting', status: 'present', color: 'orange' },
    {
      kind: 'Necrosis',
      status: necrosisOverride === 'found' ? 'present' : 'absent',
      color: necrosisOverride === 'found' ? 'red' : 'orange',
    },
    { kind: 'SmallCell', status: 'absent', color: 'orange' },
    { kind: 'BrainInvasion', status: 'absent', color: 'orange' },
    { kind: 'Subtype', status: 'unconfirmed', color: 'orange', value: 'other' },
  ];
  return {
    grade: grade as Grading['grade'],
    main_contributing: grade === 'I' ? null : count >= 4 ? 'MitoticCount' : 'Hypercellularity',
    fired_rules: grade === 'I' ? [] : [{ id: 'grade-ii-mitoses', text: '4 to 19 mitoses per 10 consecutive HPFs' }],
    criteria: rows,
  };
}

function stateFor(model: FixtureModel): SessionState {
  const statuses: Record<string, string> = {};
  for (const item of evidenceItems()) {
    statuses[item.evidence_id] = model.declined.has(item.evidence_id) ? 'declined' : 'unreviewed';
  }
  const overrides: Record<string, string> = {};
  model.overrides.forEach((v, k) => {
    overrides[k] = v;
  });
  return {
    case_id: 'fixture',
    seq: model.seq,
    grade: gradingFor(model),
    regions: {
      mitotic_count_10hpf: 4 - model.declined.size,
      mitosis_slide: 'fix-he',
      samples: [],
    },
    evidence: {
      MitoticCount: evidenceItems().filter((e) => !model.declined.has(e.evidence_id)),
    },
    detection_statuses: statuses,
    patch_review: {},
    overrides,
  };
}

export interface Fixture {
  fetchFn: FetchLike;
  calls: string[];
  model: FixtureModel;
  slide: SlideMeta;
}

export function fixtureService(): Fixture {
  const model: FixtureModel = { declined: new Set(), overrides: new Map(), seq: 0 };
  const calls: string[] = [];

  const json = (body: unknown, status = 200) =>
    new Response(JSON.stringify(body), {
      status,
      headers: { 'content-type': 'application/json' },
    });

  const fetchFn: FetchLike = async (input, init) => {
    const url = new URL(input, 'http://fixture');
    const path = url.pathname;
    calls.push(`${init?.method ?? 'GET'} ${path}`);

    if (path === '/cases') {
      return json([{ case_id: 'fixture', grade: 'II', main_contributing: 'MitoticCount' }]);
    }
    if (path === '/cases/fixture/grading') return json(gradingFor(model));
    if (path === '/cases/fixture/regions') return json(stateFor(model).regions);
    if (path.startsWith('/cases/fixture/criteria/') && path.endsWith('/evidence')) {
      const kind = path.split('/')[4];
      return json(stateFor(model).evidence[kind] ?? []);
    }
    if (path.endsWith('/heatmap/meta')) {
      return json({ cell_px: 400, origin: { x: 0, y: 0 }, max_value: 4, criterion: 'MitoticCount' });
    }
    if (path === '/slides/fix-he/meta') return json(SLIDE);
    if (path === '/sessions' && init?.method === 'POST') {
      return json({ session_id: 'fix-session', case_id: 'fixture', actions: model.seq, state: stateFor(model) });
    }
    if (path === '/sessions/fix-session') {
      return json({ session_id: 'fix-session', case_id: 'fixture', actions: model.seq, state: stateFor(model) });
    }
    if (path === '/sessions/fix-session/actions' && init?.method === 'POST') {
      const body = JSON.parse(String(init.body));
      if (body.kind === 'evidence_action') {
        const id = body.payload.evidence_id as string;
        const known = evidenceItems().some((e) => e.evidence_id === id);
        if (!known) return json({ error: 'not-found', detail: `unknown evidence id ${id}` }, 404);
        if (body.payload.action === 'decline') model.declined.add(id);
        if (body.payload.action === 'approve') model.declined.delete(id);
      } else if (body.kind === 'override') {
        model.overrides.set(body.payload.criterion, body.payload.value);
      } else if (body.kind === 'clear_override') {
        model.overrides.delete(body.payload.criterion);
      } else {
        return json({ error: 'invalid-action', detail: 'bad kind' }, 422);
      }
      model.seq += 1;
      return json({ action: { seq: model.seq, kind: body.kind }, grade: gradingFor(model), state: stateFor(model) });
    }
    return json({ error: 'not-found', detail: `no route ${path}` }, 404);
  };

  return { fetchFn, calls, model, slide: SLIDE };
}
