// API payload types, mirroring the review service JSON.

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export type BarColor = 'red' | 'green' | 'orange' | 'gray';

export interface CriterionRow {
  kind: string;
  status: string;
  color: BarColor;
  value?: number | string | null;
}

export interface FiredRule {
  id: string;
  text: string;
}

export interface Grading {
  grade: 'I' | 'II' | 'III';
  main_contributing: string | null;
  fired_rules: FiredRule[];
  criteria: CriterionRow[];
}

export interface EvidenceRects {
  context: Rect;
  patch: Rect;
  zoom: Rect;
}

export interface EvidenceItem {
  evidence_id: string;
  criterion: string;
  slide_id: string;
  detection_id: string | null;
  prob: number | null;
  confidence: string | null;
  value: number | null;
  rects: EvidenceRects;
  saliency_ref: string | null;
}

export interface RegionSamplePayload {
  criterion: string;
  slide_id: string;
  kind: string;
  rect: Rect;
  value: number | null;
  member_detections: string[];
  degenerate: boolean;
  applicable: boolean;
}

export interface RegionsPayload {
  mitotic_count_10hpf: number;
  mitosis_slide: string | null;
  samples: RegionSamplePayload[];
}

export interface SlideMeta {
  slide_id: string;
  stain: 'HE' | 'KI67';
  width_px: number;
  height_px: number;
  mpp: number;
  levels: number;
  pyramid_path: string;
  nodes: Rect[];
}

export interface SessionState {
  case_id: string;
  seq: number;
  grade: Grading;
  regions: RegionsPayload;
  evidence: Record<string, EvidenceItem[]>;
  detection_statuses: Record<string, string>;
  patch_review: Record<string, string>;
  overrides: Record<string, string | number>;
}

export interface SessionSummary {
  session_id: string;
  case_id: string;
  actions: number;
  state: SessionState;
}

export interface ActionResponse {
  action: { seq: number; kind: string };
  grade: Grading;
  state: SessionState;
}

export interface HeatmapMeta {
  cell_px: number;
  origin: { x: number; y: number };
  max_value: number;
  criterion: string;
}

export interface CaseListing {
  case_id: string;
  grade: string;
  main_contributing: string | null;
}

export type ReviewVerb = 'approve' | 'decline' | 'uncertain';
