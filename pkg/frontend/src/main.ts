import { ApiClient } from "./api";
import { renderBadges } from "./badges";
import { AnnotatorState } from "./state";
import { Viewer } from "./viewer";

const apiBase = (window as any).PROMPTSEG_API ?? "";
const api = new ApiClient(apiBase);
const state = new AnnotatorState(api);

const canvas = document.getElementById("viewport") as HTMLCanvasElement;
const viewer = new Viewer(canvas);
const badges = document.getElementById("badges") as HTMLElement;
const status = document.getElementById("status") as HTMLElement;
const fileInput = document.getElementById("cloud-file") as HTMLInputElement;
const pathInput = document.getElementById("cloud-path") as HTMLInputElement;

function toast(msg: string): void {
  status.textContent = msg;
  status.classList.add("visible");
  setTimeout(() => status.classList.remove("visible"), 4000);
}

state.onChange((s) => {
  if (s.error) toast(s.error);
  viewer.setOverlay(s.overlay);
  viewer.clearPins();
  for (const pin of s.pins) viewer.addPin(pin.position, pin.label);
  renderBadges(badges, s.candidates, s.selected, (i) => void state.selectCandidate(i));
  (document.getElementById("pin-count") as HTMLElement).textContent = `${s.pins.length} prompts · ${s.committed.length} labels`;
});

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  await state.loadCloudBytes(await file.arrayBuffer());
  if (state.cloud) viewer.setCloud(state.cloud);
});

(document.getElementById("load-path") as HTMLButtonElement).addEventListener("click", async () => {
  if (!pathInput.value) return;
  await state.loadCloudPath(pathInput.value);
  if (state.cloud) viewer.setCloud(state.cloud);
});

canvas.addEventListener("click", (ev) => {
  if (state.busy || !state.cloud) return;
  const idx = viewer.pick(ev.clientX, ev.clientY);
  if (idx === null) return; // empty space: no request
  const label = ev.shiftKey || ev.ctrlKey ? 0 : 1; // modifier-click = negative
  void state.clickPoint(viewer.pointAt(idx), label as 0 | 1);
});

(document.getElementById("undo") as HTMLButtonElement).addEventListener("click", () => void state.undo());

(document.getElementById("commit") as HTMLButtonElement).addEventListener("click", () => {
  const name = (document.getElementById("label-name") as HTMLInputElement).value || `label_${state.committed.length}`;
  void state.commit(name);
});

(document.getElementById("export") as HTMLButtonElement).addEventListener("click", async () => {
  const doc = await state.exportLabels();
  const blob = new Blob([doc], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "labels.json";
  a.click();
  URL.revokeObjectURL(a.href);
});
