/** View state for the inspection loop, kept in one reducer so the two
 * interaction invariants are enforceable in a single place:
 *
 *  - the selection is a single slot, so a token and a patch can never
 *    be selected at the same time;
 *  - `lastQuery` always records the most recent saliency query issued,
 *    and a received map is dropped unless it answers exactly that
 *    query, so a stale response can never overwrite a newer one.
 */

import type {
  Direction,
  InferResponse,
  Method,
  OrganReportView,
  SaliencyQuery,
  SaliencyResponse,
  SessionView,
  TokenSpan,
  Verdict,
} from "./api.js";

export type Selection =
  | { kind: "token"; index: number }
  | { kind: "patch"; index: number }
  | null;

export interface QueuedVerdict {
  caseId: string;
  verdict: Verdict;
  organ: string;
  note: string;
}

export interface ViewState {
  caseId: string | null;
  question: string;
  answer: string | null;
  tokenSpans: TokenSpan[];
  selection: Selection;
  method: Method;
  layer: number | null;
  head: number | null;
  opacity: number;
  lastQuery: SaliencyQuery | null;
  map: SaliencyResponse | null;
  banner: string | null;
  report: OrganReportView | null;
  verdictLog: QueuedVerdict[];
  verdictQueue: QueuedVerdict[];
}

export const initialState: ViewState = {
  caseId: null,
  question: "",
  answer: null,
  tokenSpans: [],
  selection: null,
  method: "rollout",
  layer: null,
  head: null,
  opacity: 0.6,
  lastQuery: null,
  map: null,
  banner: null,
  report: null,
  verdictLog: [],
  verdictQueue: [],
};

export type Action =
  | { type: "case_opened"; view: SessionView }
  | { type: "inference_done"; result: InferResponse }
  | { type: "token_selected"; index: number }
  | { type: "patch_selected"; index: number }
  | { type: "selection_cleared" }
  | { type: "method_set"; method: Method }
  | { type: "layer_set"; layer: number | null }
  | { type: "head_set"; head: number | null }
  | { type: "opacity_set"; opacity: number }
  | { type: "saliency_requested"; query: SaliencyQuery }
  | { type: "saliency_received"; query: SaliencyQuery; map: SaliencyResponse }
  | { type: "saliency_failed"; message: string }
  | { type: "banner_raised"; message: string }
  | { type: "banner_cleared" }
  | { type: "report_loaded"; report: OrganReportView }
  | { type: "verdict_logged"; entry: QueuedVerdict }
  | { type: "verdict_queued"; entry: QueuedVerdict }
  | { type: "verdict_flushed"; count: number };

function sameQuery(a: SaliencyQuery, b: SaliencyQuery): boolean {
  return (
    a.direction === b.direction &&
    a.index === b.index &&
    a.method === b.method &&
    (a.layer ?? null) === (b.layer ?? null) &&
    (a.head ?? null) === (b.head ?? null)
  );
}

/** The saliency query the current state calls for, or null when there
 * is no selection to map. */
export function queryFor(state: ViewState): SaliencyQuery | null {
  if (!state.selection) return null;
  const direction: Direction =
    state.selection.kind === "token" ? "token_to_image" : "patch_to_tokens";
  return {
    direction,
    index: state.selection.index,
    method: state.method,
    layer: state.layer,
    head: state.head,
  };
}

export function reduce(state: ViewState, action: Action): ViewState {
  switch (action.type) {
    case "case_opened":
      return {
        ...initialState,
        method: state.method,
        opacity: state.opacity,
        report: state.report,
        verdictLog: state.verdictLog,
        verdictQueue: state.verdictQueue,
        caseId: action.view.case_id,
        question: action.view.question,
        answer: action.view.answer,
      };
    case "inference_done":
      if (action.result.case_id !== state.caseId) return state;
      return {
        ...state,
        answer: action.result.answer,
        tokenSpans: action.result.token_spans,
        selection: null,
        lastQuery: null,
        map: null,
        banner: null,
      };
    case "token_selected":
      if (action.index < 0 || action.index >= state.tokenSpans.length) return state;
      return { ...state, selection: { kind: "token", index: action.index } };
    case "patch_selected":
      if (action.index < 0) return state;
      return { ...state, selection: { kind: "patch", index: action.index } };
    case "selection_cleared":
      return { ...state, selection: null, map: null, lastQuery: null };
    case "method_set":
      // everything but the method survives the toggle, selection included
      return { ...state, method: action.method };
    case "layer_set":
      return { ...state, layer: action.layer };
    case "head_set":
      return { ...state, head: action.head };
    case "opacity_set":
      return { ...state, opacity: Math.min(1, Math.max(0, action.opacity)) };
    case "saliency_requested":
      return { ...state, lastQuery: action.query };
    case "saliency_received":
      if (!state.lastQuery || !sameQuery(state.lastQuery, action.query)) return state;
      return { ...state, map: action.map, banner: null };
    case "saliency_failed":
    case "banner_raised":
      return { ...state, banner: action.message };
    case "banner_cleared":
      return { ...state, banner: null };
    case "report_loaded":
      return { ...state, report: action.report };
    case "verdict_logged":
      return { ...state, verdictLog: [...state.verdictLog, action.entry] };
    case "verdict_queued":
      return { ...state, verdictQueue: [...state.verdictQueue, action.entry] };
    case "verdict_flushed":
      return { ...state, verdictQueue: state.verdictQueue.slice(action.count) };
  }
}
