/** Event wiring between the API client and the view state.
 *
 * The controller owns a single in-flight saliency request at a time.
 * Any selection or toggle change aborts the previous request before
 * issuing the next one, and a response is applied only when it still
 * matches the last query recorded in the state, so a slow stale reply
 * can never overwrite a newer overlay.
 */

import { ApiClient, ApiError } from "./api.js";
import type { SaliencyQuery } from "./api.js";
import { initialState, queryFor, reduce } from "./state.js";
import type { Action, ViewState } from "./state.js";

export class InspectorController {
  state: ViewState = initialState;
  private inflight: AbortController | null = null;

  constructor(
    private api: ApiClient,
    private onChange: (state: ViewState) => void = () => {},
  ) {}

  dispatch(action: Action): void {
    this.state = reduce(this.state, action);
    this.onChange(this.state);
  }

  async openCase(caseId: string): Promise<void> {
    const view = await this.api.getCase(caseId);
    this.dispatch({ type: "case_opened", view });
    const inference = await this.api.infer(caseId);
    this.dispatch({ type: "inference_done", result: inference });
  }

  async selectToken(index: number): Promise<void> {
    this.dispatch({ type: "token_selected", index });
    await this.issueSaliency();
  }

  async selectPatch(index: number): Promise<void> {
    this.dispatch({ type: "patch_selected", index });
    await this.issueSaliency();
  }

  async setMethod(method: "raw" | "rollout"): Promise<void> {
    this.dispatch({ type: "method_set", method });
    await this.issueSaliency();
  }

  async setLayer(layer: number | null): Promise<void> {
    this.dispatch({ type: "layer_set", layer });
    await this.issueSaliency();
  }

  async setHead(head: number | null): Promise<void> {
    this.dispatch({ type: "head_set", head });
    await this.issueSaliency();
  }

  setOpacity(opacity: number): void {
    this.dispatch({ type: "opacity_set", opacity });
  }

  clearBanner(): void {
    this.dispatch({ type: "banner_cleared" });
  }

  /** Fire the saliency query for the current selection, cancelling any
   * request still in flight. No-op when nothing is selected. */
  private async issueSaliency(): Promise<void> {
    const caseId = this.state.caseId;
    const query: SaliencyQuery | null = queryFor(this.state);
    if (caseId === null || query === null) return;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.dispatch({ type: "saliency_requested", query });
    try {
      const map = await this.api.saliency(caseId, query, controller.signal);
      this.dispatch({ type: "saliency_received", query, map });
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return;
      if (err instanceof ApiError) {
        this.dispatch({ type: "saliency_failed", message: `${err.status}: ${err.detail}` });
        return;
      }
      throw err;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  /** Log a verdict: the local log row appears immediately, then the
   * report refreshes from the server. A network failure queues the
   * verdict for retry instead of dropping it. */
  async submitVerdict(
    verdict: "correct" | "incorrect" | "abstain",
    organ: string,
    note = "",
  ): Promise<void> {
    const caseId = this.state.caseId;
    if (caseId === null) return;
    this.dispatch({ type: "verdict_logged", entry: { caseId, verdict, organ, note } });
    try {
      await this.api.logVerdict(caseId, verdict, organ, note);
    } catch (err) {
      if (err instanceof ApiError) {
        this.dispatch({ type: "banner_raised", message: `${err.status}: ${err.detail}` });
        return;
      }
      this.dispatch({ type: "verdict_queued", entry: { caseId, verdict, organ, note } });
      return;
    }
    await this.refreshReport();
  }

  /** Retry queued verdicts in order; stop at the first failure so the
   * queue keeps its ordering for the next attempt. */
  async flushQueue(): Promise<void> {
    const pending = [...this.state.verdictQueue];
    let sent = 0;
    for (const entry of pending) {
      try {
        await this.api.logVerdict(entry.caseId, entry.verdict, entry.organ, entry.note);
        sent += 1;
      } catch {
        break;
      }
    }
    if (sent > 0) {
      this.dispatch({ type: "verdict_flushed", count: sent });
      await this.refreshReport();
    }
  }

  async refreshReport(): Promise<void> {
    const report = await this.api.organReport();
    this.dispatch({ type: "report_loaded", report });
  }
}
