/** Browser entry point: mounts the inspector panels into index.html
 * and re-renders them on every state change. */

import { ApiClient } from "./api.js";
import { InspectorController } from "./controller.js";
import {
  renderAnswer,
  renderBanner,
  renderCaseList,
  renderHeatmap,
  renderMethodToggle,
  renderOrganReport,
  renderTokenBars,
  renderVerdictPanel,
} from "./render.js";
import type { Handlers } from "./render.js";
import type { SessionView } from "./api.js";

const ORGANS = ["chest", "gastrointestinal", "brain_neuro", "musculoskeletal"];

function mount(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing mount point #${id}`);
  return node;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const slots = {
    cases: mount("cases"),
    answer: mount("answer"),
    controls: mount("controls"),
    heatmap: mount("heatmap"),
    bars: mount("bars"),
    banner: mount("banner"),
    verdicts: mount("verdicts"),
    report: mount("report"),
  };

  let caseCache: SessionView[] = [];

  const controller = new InspectorController(api, (state) => {
    const handlers: Handlers = {
      onOpenCase: (caseId) => void controller.openCase(caseId),
      onTokenClick: (index) => void controller.selectToken(index),
      onPatchClick: (index) => void controller.selectPatch(index),
      onMethodToggle: (method) => void controller.setMethod(method),
      onLayerChange: (layer) => void controller.setLayer(layer),
      onHeadChange: (head) => void controller.setHead(head),
      onOpacityChange: (opacity) => controller.setOpacity(opacity),
      onVerdictSubmit: (verdict, organ, note) =>
        void controller.submitVerdict(verdict, organ, note),
      onBannerDismiss: () => controller.clearBanner(),
    };
    slots.cases.replaceChildren(renderCaseList(caseCache, state.caseId, handlers));
    slots.answer.replaceChildren(renderAnswer(state, handlers));
    slots.controls.replaceChildren(renderMethodToggle(state, handlers));
    slots.heatmap.replaceChildren(renderHeatmap(state, handlers));
    slots.bars.replaceChildren(renderTokenBars(state, handlers));
    slots.banner.replaceChildren(renderBanner(state, handlers));
    slots.verdicts.replaceChildren(renderVerdictPanel(state, ORGANS, handlers));
    slots.report.replaceChildren(renderOrganReport(state.report));
  });

  const listing = await api.listCases();
  caseCache = listing.cases;
  await controller.refreshReport().catch(() => {});
  controller.dispatch({ type: "banner_cleared" });

  window.addEventListener("online", () => void controller.flushQueue());
}

void boot();
