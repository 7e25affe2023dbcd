/** Annotator state machine, renderer-agnostic.
 *
 * Mirrors the server: an ordered pin list, the latest prediction (three
 * candidates on the first click, one mask afterwards), the selected branch,
 * and committed labels. All mutations go through async actions that keep at
 * most one request in flight; listeners are notified after every change.
 */

import { ApiClient, DecodedPrediction } from "./api";
import { Cloud, parsePcb } from "./pcb";

export interface Pin {
  index: number; // local index into the pin list
  position: [number, number, number];
  label: 0 | 1;
}

export interface Candidate {
  maskBytes: Uint8Array;
  iou: number;
  index: number;
}

export type Listener = (s: AnnotatorState) => void;

export class AnnotatorState {
  cloud: Cloud | null = null;
  sessionId: string | null = null;
  pins: Pin[] = [];
  prediction: DecodedPrediction | null = null;
  selected = 0;
  committed: string[] = [];
  busy = false;
  error: string | null = null;

  private listeners: Listener[] = [];
  private queue: Promise<void> = Promise.resolve();

  constructor(private api: ApiClient) {}

  onChange(fn: Listener): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this);
  }

  /** Overlay for the viewer: the selected candidate on a multimask step,
   * otherwise the single refined mask. Null before the first prediction. */
  get overlay(): Uint8Array | null {
    if (!this.prediction || this.prediction.masks.length === 0) return null;
    const i = this.prediction.multimask ? this.selected : 0;
    return this.prediction.masks[i];
  }

  get candidates(): Candidate[] {
    if (!this.prediction || !this.prediction.multimask) return [];
    return this.prediction.masks
      .map((m, i) => ({ maskBytes: m, iou: this.prediction!.ious[i], index: i }))
      .sort((a, b) => b.iou - a.iou);
  }

  /** Serialize actions: the UI queues input instead of dropping it. */
  private run(action: () => Promise<void>): Promise<void> {
    const next = this.queue.then(async () => {
      this.busy = true;
      this.error = null;
      this.emit();
      try {
        await action();
      } catch (err) {
        this.error = err instanceof Error ? err.message : String(err);
      } finally {
        this.busy = false;
        this.emit();
      }
    });
    this.queue = next;
    return next;
  }

  loadCloudBytes(buf: ArrayBuffer): Promise<void> {
    return this.run(async () => {
      const cloud = parsePcb(buf);
      const info = await this.api.createSessionFromBytes(new Uint8Array(buf));
      this.cloud = cloud;
      this.sessionId = info.id;
      this.pins = [];
      this.prediction = null;
      this.selected = 0;
      this.committed = [];
    });
  }

  loadCloudPath(path: string): Promise<void> {
    return this.run(async () => {
      const info = await this.api.createSessionFromPath(path);
      const bytes = await this.api.cloudBytes(info.id);
      this.cloud = parsePcb(bytes);
      this.sessionId = info.id;
      this.pins = [];
      this.prediction = null;
      this.selected = 0;
      this.committed = [];
    });
  }

  clickPoint(position: [number, number, number], label: 0 | 1): Promise<void> {
    return this.run(async () => {
      if (!this.sessionId) throw new Error("no session");
      const pred = await this.api.prompt(this.sessionId, position[0], position[1], position[2], label);
      this.pins.push({ index: this.pins.length, position, label });
      this.prediction = pred;
      this.selected = pred.multimask ? argmax(pred.ious) : 0;
    });
  }

  selectCandidate(index: number): Promise<void> {
    return this.run(async () => {
      if (!this.sessionId || !this.prediction) throw new Error("nothing to select");
      if (index < 0 || index >= this.prediction.masks.length) throw new Error("bad candidate index");
      await this.api.select(this.sessionId, index);
      this.selected = index;
    });
  }

  undo(): Promise<void> {
    return this.run(async () => {
      if (!this.sessionId) throw new Error("no session");
      const pred = await this.api.undo(this.sessionId);
      this.pins.pop();
      this.prediction = pred.masks.length ? pred : null;
      this.selected = pred.multimask ? argmax(pred.ious) : 0;
    });
  }

  commit(name: string): Promise<void> {
    return this.run(async () => {
      if (!this.sessionId) throw new Error("no session");
      await this.api.commit(this.sessionId, name);
      this.committed.push(name);
    });
  }

  /** The export payload is the server's label document, byte for byte. */
  async exportLabels(): Promise<string> {
    if (!this.sessionId) throw new Error("no session");
    return this.api.labelsRaw(this.sessionId);
  }
}

function argmax(vals: number[]): number {
  let best = 0;
  for (let i = 1; i < vals.length; i++) if (vals[i] > vals[best]) best = i;
  return best;
}
