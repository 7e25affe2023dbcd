/** REST client for the annotation service. */

export interface PredictionPayload {
  masks: string[]; // base64 u8 probabilities, one per output mask
  ious: number[];
  multimask: boolean;
}

export interface SessionInfo {
  id: string;
  n_points: number;
  bounds: { min: number[]; max: number[] };
}

function b64ToBytes(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(b64, "base64"));
}

function bytesToB64(bytes: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
    return btoa(bin);
  }
  return Buffer.from(bytes).toString("base64");
}

export interface DecodedPrediction {
  masks: Uint8Array[];
  ious: number[];
  multimask: boolean;
}

export function decodePrediction(p: PredictionPayload): DecodedPrediction {
  return { masks: p.masks.map(b64ToBytes), ious: p.ious, multimask: p.multimask };
}

export class ApiClient {
  constructor(private base: string, private fetchFn: typeof fetch = fetch) {}

  private async req(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const doc = await resp.json();
        if (doc.detail) detail = `${resp.status}: ${doc.detail}`;
      } catch {
        /* keep status */
      }
      throw new Error(`request ${path} failed (${detail})`);
    }
    return resp;
  }

  private postJson(path: string, body: unknown): Promise<Response> {
    return this.req(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async createSessionFromBytes(pcb: Uint8Array): Promise<SessionInfo> {
    const resp = await this.postJson("/sessions", { cloud: bytesToB64(pcb) });
    return resp.json();
  }

  async createSessionFromPath(path: string): Promise<SessionInfo> {
    const resp = await this.postJson("/sessions", { cloud: path });
    return resp.json();
  }

  async prompt(sid: string, x: number, y: number, z: number, label: 0 | 1): Promise<DecodedPrediction> {
    const resp = await this.postJson(`/sessions/${sid}/prompts`, { x, y, z, label });
    return decodePrediction(await resp.json());
  }

  async select(sid: string, maskIndex: number): Promise<void> {
    await this.postJson(`/sessions/${sid}/select`, { mask_index: maskIndex });
  }

  async undo(sid: string): Promise<DecodedPrediction> {
    const resp = await this.req(`/sessions/${sid}/undo`, { method: "POST" });
    return decodePrediction(await resp.json());
  }

  async commit(sid: string, name: string): Promise<void> {
    await this.postJson(`/sessions/${sid}/commit`, { name });
  }

  async labelsRaw(sid: string): Promise<string> {
    const resp = await this.req(`/sessions/${sid}/labels`);
    return resp.text();
  }

  async cloudBytes(sid: string): Promise<ArrayBuffer> {
    const resp = await this.req(`/sessions/${sid}/cloud`);
    return resp.arrayBuffer();
  }
}
