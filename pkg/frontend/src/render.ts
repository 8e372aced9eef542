/** DOM builders for each panel. All functions are pure with respect to
 * the passed state: they return a fresh element and never touch
 * globals, so tests can render any state snapshot directly.
 *
 * Every displayed saliency number comes from one server response held
 * in the state; nothing is computed locally beyond display
 * normalization, and each overlay carries a provenance tooltip naming
 * the method, layer, head, and checkpoint hash that produced it.
 */

import type { OrganReportView, SaliencyResponse, SessionView } from "./api.js";
import { cssColor, normalizeScores } from "./colormap.js";
import type { ViewState } from "./state.js";

export const LOW_SIGNAL_FLAG = "degenerate_uniform";

export interface Handlers {
  onOpenCase?: (caseId: string) => void;
  onTokenClick?: (index: number) => void;
  onPatchClick?: (index: number) => void;
  onMethodToggle?: (method: "raw" | "rollout") => void;
  onLayerChange?: (layer: number | null) => void;
  onHeadChange?: (head: number | null) => void;
  onOpacityChange?: (opacity: number) => void;
  onVerdictSubmit?: (verdict: "correct" | "incorrect" | "abstain", organ: string, note: string) => void;
  onBannerDismiss?: () => void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function provenanceTitle(map: SaliencyResponse): string {
  const p = map.provenance;
  const parts = [
    `method=${String(p["method"] ?? map.method)}`,
    `layer=${String(p["layer"] ?? "mean_all")}`,
    `head=${String(p["head"] ?? "mean_all")}`,
    `checkpoint=${String(p["checkpoint"] ?? "unloaded")}`,
  ];
  return parts.join(" ");
}

export function renderCaseList(
  cases: SessionView[],
  activeId: string | null,
  handlers: Handlers,
): HTMLElement {
  const list = el("ul", "case-list");
  for (const c of cases) {
    const item = el("li", c.case_id === activeId ? "case active" : "case");
    const button = el("button", "case-open", c.case_id);
    button.setAttribute("data-case-id", c.case_id);
    button.addEventListener("click", () => handlers.onOpenCase?.(c.case_id));
    item.appendChild(button);
    item.appendChild(el("span", "case-question", c.question));
    list.appendChild(item);
  }
  return list;
}

export function renderAnswer(state: ViewState, handlers: Handlers): HTMLElement {
  const panel = el("div", "answer-panel");
  panel.appendChild(el("p", "question", state.question));
  if (state.answer === null) {
    panel.appendChild(el("p", "answer pending", "no inference yet"));
    return panel;
  }
  const row = el("div", "answer");
  for (const span of state.tokenSpans) {
    const selected =
      state.selection?.kind === "token" && state.selection.index === span.position;
    const chip = el("button", selected ? "token selected" : "token");
    chip.textContent = span.text === "" ? "·" : span.text;
    chip.setAttribute("data-token-index", String(span.position));
    chip.addEventListener("click", () => handlers.onTokenClick?.(span.position));
    row.appendChild(chip);
  }
  panel.appendChild(row);
  return panel;
}

export function renderMethodToggle(state: ViewState, handlers: Handlers): HTMLElement {
  const wrap = el("div", "method-toggle");
  for (const method of ["raw", "rollout"] as const) {
    const button = el("button", state.method === method ? "method active" : "method", method);
    button.setAttribute("data-method", method);
    button.addEventListener("click", () => handlers.onMethodToggle?.(method));
    wrap.appendChild(button);
  }

  // blank layer/head means the server's fused default (all layers/heads)
  const indexInput = (
    cls: string,
    value: number | null,
    placeholder: string,
    onChange: ((v: number | null) => void) | undefined,
  ) => {
    const input = el("input", cls);
    input.type = "number";
    input.min = "0";
    input.placeholder = placeholder;
    input.value = value === null ? "" : String(value);
    input.addEventListener("change", () => {
      onChange?.(input.value === "" ? null : Number(input.value));
    });
    return input;
  };
  wrap.appendChild(indexInput("layer-select", state.layer, "all layers", handlers.onLayerChange));
  wrap.appendChild(indexInput("head-select", state.head, "all heads", handlers.onHeadChange));

  const opacity = el("input", "opacity-slider");
  opacity.type = "range";
  opacity.min = "0";
  opacity.max = "1";
  opacity.step = "0.05";
  opacity.value = String(state.opacity);
  opacity.addEventListener("input", () => handlers.onOpacityChange?.(Number(opacity.value)));
  wrap.appendChild(opacity);
  return wrap;
}

export function renderHeatmap(state: ViewState, handlers: Handlers): HTMLElement {
  const wrap = el("div", "saliency-panel");
  const map = state.map;
  if (!map || map.direction !== "token_to_image") {
    wrap.appendChild(el("p", "placeholder", "select a response token"));
    return wrap;
  }
  if (map.flags.includes(LOW_SIGNAL_FLAG)) {
    const badge = el("span", "low-signal-badge", "low signal");
    badge.title = "the attention slice is flat; an overlay would be misleading";
    wrap.appendChild(badge);
    return wrap;
  }
  const grid = el("div", "heatmap");
  grid.title = provenanceTitle(map);
  grid.style.display = "grid";
  grid.style.gridTemplateColumns = `repeat(${map.grid.cols}, 1fr)`;
  const normalized = normalizeScores(map.scores);
  normalized.forEach((value, i) => {
    const cell = el("div", i === map.argmax ? "cell argmax" : "cell");
    cell.setAttribute("data-patch-index", String(i));
    cell.setAttribute("data-score", map.scores[i].toFixed(6));
    cell.style.background = cssColor(value, state.opacity);
    cell.addEventListener("click", () => handlers.onPatchClick?.(i));
    grid.appendChild(cell);
  });
  wrap.appendChild(grid);
  return wrap;
}

export function renderTokenBars(state: ViewState, handlers: Handlers): HTMLElement {
  const wrap = el("div", "saliency-panel");
  const map = state.map;
  if (!map || map.direction !== "patch_to_tokens") {
    wrap.appendChild(el("p", "placeholder", "select an image patch"));
    return wrap;
  }
  if (map.flags.includes(LOW_SIGNAL_FLAG)) {
    wrap.appendChild(el("span", "low-signal-badge", "low signal"));
    return wrap;
  }
  const bars = el("div", "token-bars");
  bars.title = provenanceTitle(map);
  const total = map.scores.reduce((a, b) => a + b, 0);
  map.scores.forEach((score, i) => {
    const bar = el("button", "bar");
    bar.setAttribute("data-token-index", String(i));
    bar.setAttribute("data-score", score.toFixed(6));
    bar.style.height = `${Math.round(score * 100)}%`;
    bar.title = state.tokenSpans[i]?.text ?? `token ${i}`;
    bar.addEventListener("click", () => handlers.onTokenClick?.(i));
    bars.appendChild(bar);
  });
  wrap.appendChild(bars);
  wrap.appendChild(el("p", "bars-total", `sum = ${total.toFixed(2)}`));
  return wrap;
}

export function renderBanner(state: ViewState, handlers: Handlers): HTMLElement {
  const wrap = el("div", "banner-slot");
  if (state.banner) {
    const banner = el("div", "banner", state.banner);
    const dismiss = el("button", "dismiss", "dismiss");
    dismiss.addEventListener("click", () => handlers.onBannerDismiss?.());
    banner.appendChild(dismiss);
    wrap.appendChild(banner);
  }
  return wrap;
}

const VERDICTS = ["correct", "incorrect", "abstain"] as const;

export function renderVerdictPanel(
  state: ViewState,
  organs: string[],
  handlers: Handlers,
): HTMLElement {
  const panel = el("div", "verdict-panel");
  const verdictSelect = el("select", "verdict-select");
  for (const v of VERDICTS) {
    const option = el("option", undefined, v);
    option.value = v;
    verdictSelect.appendChild(option);
  }
  const organSelect = el("select", "organ-select");
  for (const organ of organs) {
    const option = el("option", undefined, organ);
    option.value = organ;
    organSelect.appendChild(option);
  }
  const note = el("input", "note-input");
  note.type = "text";
  note.placeholder = "note";
  const submit = el("button", "verdict-submit", "log verdict");
  submit.disabled = state.caseId === null;
  submit.addEventListener("click", () =>
    handlers.onVerdictSubmit?.(
      verdictSelect.value as (typeof VERDICTS)[number],
      organSelect.value,
      note.value,
    ),
  );
  panel.append(verdictSelect, organSelect, note, submit);

  const log = el("ul", "verdict-log");
  for (const entry of state.verdictLog) {
    log.appendChild(el("li", "verdict-row", `${entry.caseId}: ${entry.verdict} (${entry.organ})`));
  }
  panel.appendChild(log);

  if (state.verdictQueue.length > 0) {
    const retry = el("span", "retry-indicator",
      `${state.verdictQueue.length} verdict(s) queued, retrying`);
    panel.appendChild(retry);
  }
  return panel;
}

export function renderOrganReport(report: OrganReportView | null): HTMLElement {
  const panel = el("div", "organ-report");
  if (!report) {
    panel.appendChild(el("p", "placeholder", "no verdicts logged"));
    return panel;
  }
  const table = el("table", "organ-table");
  const head = el("tr");
  head.appendChild(el("th", undefined, "Organ-level Pathologies"));
  head.appendChild(el("th", undefined, "Accuracy"));
  table.appendChild(head);
  for (const row of report.rows) {
    const tr = el("tr");
    tr.setAttribute("data-organ", row.organ);
    tr.appendChild(el("td", undefined, row.label));
    tr.appendChild(el("td", "tally", row.cell));
    table.appendChild(tr);
  }
  panel.appendChild(table);
  if (report.abstained > 0) {
    panel.appendChild(el("p", "footnote", report.footnote));
  }
  return panel;
}
