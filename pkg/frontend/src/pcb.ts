/** PCB1 point-cloud binary format: magic "PCB1", u32 N (LE), u8 flags
 * (bit0 = has colors), N*3 f32 coordinates, optionally N*3 u8 colors. */

export interface Cloud {
  n: number;
  positions: Float32Array; // N*3
  colors: Uint8Array | null; // N*3, 0..255
}

export function parsePcb(buf: ArrayBuffer): Cloud {
  const view = new DataView(buf);
  if (buf.byteLength < 9) throw new Error("PCB1 buffer too short");
  const magic = String.fromCharCode(view.getUint8(0), view.getUint8(1), view.getUint8(2), view.getUint8(3));
  if (magic !== "PCB1") throw new Error(`bad magic ${magic}`);
  const n = view.getUint32(4, true);
  const flags = view.getUint8(8);
  let off = 9;
  const coordBytes = n * 12;
  if (buf.byteLength < off + coordBytes) throw new Error("truncated coordinates");
  const positions = new Float32Array(n * 3);
  for (let i = 0; i < n * 3; i++) positions[i] = view.getFloat32(off + i * 4, true);
  off += coordBytes;
  let colors: Uint8Array | null = null;
  if (flags & 1) {
    if (buf.byteLength < off + n * 3) throw new Error("truncated colors");
    colors = new Uint8Array(buf.slice(off, off + n * 3));
    off += n * 3;
  }
  if (off !== buf.byteLength) throw new Error("trailing bytes");
  return { n, positions, colors };
}

export function bounds(cloud: Cloud): { min: number[]; max: number[] } {
  const min = [Infinity, Infinity, Infinity];
  const max = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < cloud.n; i++) {
    for (let a = 0; a < 3; a++) {
      const v = cloud.positions[i * 3 + a];
      if (v < min[a]) min[a] = v;
      if (v > max[a]) max[a] = v;
    }
  }
  return { min, max };
}
