/** Typed client for the case-inspection JSON API.
 *
 * Every method maps to one documented endpoint and returns the parsed
 * body typed as the service's published schema. The fetch function is
 * injectable so tests can substitute recorded responses, and saliency
 * queries accept an AbortSignal so superseded requests can be
 * cancelled before their stale overlays render.
 */

export type Direction = "token_to_image" | "patch_to_tokens";
export type Method = "raw" | "rollout";
export type Verdict = "correct" | "incorrect" | "abstain";

export interface HealthView {
  status: "ok";
  checkpoint: string | null;
  stage: string | null;
}

export interface SchemaIndex {
  version: string;
  schemas: Record<string, unknown>;
}

export interface CaseCreated {
  case_id: string;
  created: boolean;
}

export interface SessionView {
  case_id: string;
  question: string;
  payload_kind: "features" | "pixels";
  image_ref: string;
  created_at: string;
  answer: string | null;
  attention_dump_id: string | null;
}

export interface SessionList {
  cases: SessionView[];
}

export interface SamplingSpec {
  mode: "greedy" | "temperature";
  temperature: number;
  seed: number;
  max_new_tokens: number;
}

export interface TokenSpan {
  position: number;
  token_id: number;
  text: string;
  start: number;
  end: number;
}

export interface InferResponse {
  case_id: string;
  answer: string;
  token_spans: TokenSpan[];
  attention_dump_id: string;
  sampling: SamplingSpec;
}

export interface GridShape {
  rows: number;
  cols: number;
}

export interface SaliencyResponse {
  case_id: string;
  direction: Direction;
  method: Method;
  index: number;
  scores: number[];
  argmax: number;
  flags: string[];
  provenance: Record<string, unknown>;
  grid: GridShape;
}

export interface VerdictLogged {
  case_id: string;
  verdict: Verdict;
  organ: string;
  note: string;
  timestamp: string;
  entry_index: number;
}

export interface OrganRowView {
  organ: string;
  label: string;
  correct: number;
  total: number;
  cell: string;
}

export interface OrganReportView {
  rows: OrganRowView[];
  total: number;
  abstained: number;
  footnote: string;
  markdown: string;
}

export interface SaliencyQuery {
  direction: Direction;
  index: number;
  method: Method;
  layer?: number | null;
  head?: number | null;
}

export interface CaseCreate {
  question: string;
  features?: number[][];
  pixels?: number[][];
}

/** Non-2xx response, carrying the server's detail message when present. */
export class ApiError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parse<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText || `status ${response.status}`;
    try {
      const body = (await response.json()) as { detail?: unknown };
      if (typeof body.detail === "string") detail = body.detail;
      else if (body.detail !== undefined) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = fetch.bind(globalThis)) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private get<T>(path: string, signal?: AbortSignal): Promise<T> {
    return this.fetchFn(this.base + path, { signal }).then((r) => parse<T>(r));
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => parse<T>(r));
  }

  health(): Promise<HealthView> {
    return this.get("/health");
  }

  schema(): Promise<SchemaIndex> {
    return this.get("/schema");
  }

  listCases(): Promise<SessionList> {
    return this.get("/cases");
  }

  getCase(caseId: string): Promise<SessionView> {
    return this.get(`/cases/${encodeURIComponent(caseId)}`);
  }

  createCase(body: CaseCreate): Promise<CaseCreated> {
    return this.post("/cases", body);
  }

  infer(caseId: string, sampling?: Partial<SamplingSpec>): Promise<InferResponse> {
    const body = sampling ? { sampling } : {};
    return this.post(`/cases/${encodeURIComponent(caseId)}/infer`, body);
  }

  saliency(caseId: string, query: SaliencyQuery, signal?: AbortSignal): Promise<SaliencyResponse> {
    const params = new URLSearchParams({
      direction: query.direction,
      index: String(query.index),
      method: query.method,
    });
    if (query.layer !== undefined && query.layer !== null) params.set("layer", String(query.layer));
    if (query.head !== undefined && query.head !== null) params.set("head", String(query.head));
    return this.get(`/cases/${encodeURIComponent(caseId)}/saliency?${params.toString()}`, signal);
  }

  logVerdict(caseId: string, verdict: Verdict, organ: string, note = ""): Promise<VerdictLogged> {
    return this.post(`/cases/${encodeURIComponent(caseId)}/verdict`, { verdict, organ, note });
  }

  organReport(): Promise<OrganReportView> {
    return this.get("/reports/organs");
  }
}
