/** Candidate badges: one button per multimask candidate, sorted by predicted
 * IoU descending, highlighting the selected branch. */

import { Candidate } from "./state";

export function renderBadges(
  container: HTMLElement,
  candidates: Candidate[],
  selected: number,
  onPick: (index: number) => void
): void {
  container.textContent = "";
  for (const cand of candidates) {
    const el = container.ownerDocument.createElement("button");
    el.className = "badge" + (cand.index === selected ? " selected" : "");
    el.dataset.maskIndex = String(cand.index);
    el.textContent = `mask ${cand.index + 1} · IoU ${cand.iou.toFixed(2)}`;
    el.addEventListener("click", () => onPick(cand.index));
    container.appendChild(el);
  }
}
