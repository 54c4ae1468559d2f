// Thin typed client over the review service HTTP API. The fetch function is
// injectable so tests can run against a fixture service.

import type {
  ActionResponse,
  CaseListing,
  EvidenceItem,
  Grading,
  HeatmapMeta,
  Rect,
  RegionsPayload,
  ReviewVerb,
  SessionSummary,
  SlideMeta,
} from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        detail = body.detail ?? detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listCases(): Promise<CaseListing[]> {
    return this.request('/cases');
  }

  grading(caseId: string): Promise<Grading> {
    return this.request(`/cases/${caseId}/grading`);
  }

  regions(caseId: string): Promise<RegionsPayload> {
    return this.request(`/cases/${caseId}/regions`);
  }

  evidence(caseId: string, kind: string): Promise<EvidenceItem[]> {
    return this.request(`/cases/${caseId}/criteria/${kind}/evidence`);
  }

  heatmapMeta(caseId: string, kind: string): Promise<HeatmapMeta> {
    return this.request(`/cases/${caseId}/criteria/${kind}/heatmap/meta`);
  }

  slideMeta(slideId: string): Promise<SlideMeta> {
    return this.request(`/slides/${slideId}/meta`);
  }

  createSession(caseId: string): Promise<SessionSummary> {
    return this.request('/sessions', {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ case_id: caseId }),
    });
  }

  session(sessionId: string): Promise<SessionSummary> {
    return this.request(`/sessions/${sessionId}`);
  }

  submitEvidenceAction(sessionId: string, evidenceId: string, action: ReviewVerb): Promise<ActionResponse> {
    return this.submitAction(sessionId, 'evidence_action', { evidence_id: evidenceId, action });
  }

  submitOverride(sessionId: string, criterion: string, value: string | number | null): Promise<ActionResponse> {
    if (value === null) {
      return this.submitAction(sessionId, 'clear_override', { criterion });
    }
    return this.submitAction(sessionId, 'override', { criterion, value });
  }

  submitManualAdd(sessionId: string, criterion: string, slideId: string, bbox: Rect): Promise<ActionResponse> {
    return this.submitAction(sessionId, 'manual_add', { criterion, slide_id: slideId, bbox });
  }

  submitAction(sessionId: string, kind: string, payload: unknown): Promise<ActionResponse> {
    return this.request(`/sessions/${sessionId}/actions`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ kind, payload }),
    });
  }

  tileUrl(slideId: string, level: number, tx: number, ty: number): string {
    return `${this.baseUrl}/slides/${slideId}/tiles/${level}/${tx}/${ty}`;
  }

  regionUrl(slideId: string, rect: Rect, level = 0): string {
    const q = `x=${rect.x}&y=${rect.y}&w=${rect.w}&h=${rect.h}&level=${level}`;
    return `${this.baseUrl}/slides/${slideId}/region?${q}`;
  }

  heatmapUrl(caseId: string, kind: string): string {
    return `${this.baseUrl}/cases/${caseId}/criteria/${kind}/heatmap`;
  }

  saliencyUrl(caseId: string, saliencyRef: string): string {
    const name = saliencyRef.split('/').pop() ?? saliencyRef;
    return `${this.baseUrl}/cases/${caseId}/saliency/${name}`;
  }
}
