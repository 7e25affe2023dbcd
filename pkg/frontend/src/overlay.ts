/** Mask overlay colors: probability drives intensity toward the highlight
 * color; points past the 0.5 threshold (byte 128, the server's logit-0
 * convention) get the full outline tint. */

const HIGHLIGHT: [number, number, number] = [1.0, 0.45, 0.1];
const NEGATIVE_DIM = 0.35;

export function overlayColors(
  maskBytes: Uint8Array | null,
  baseColors: Uint8Array | null,
  n: number
): Float32Array {
  const out = new Float32Array(n * 3);
  for (let i = 0; i < n; i++) {
    let r = 0.75, g = 0.75, b = 0.75;
    if (baseColors) {
      r = baseColors[i * 3] / 255;
      g = baseColors[i * 3 + 1] / 255;
      b = baseColors[i * 3 + 2] / 255;
    }
    if (maskBytes) {
      const p = maskBytes[i] / 255;
      if (maskBytes[i] >= 128) {
        const t = 0.5 + 0.5 * p;
        r = r * (1 - t) + HIGHLIGHT[0] * t;
        g = g * (1 - t) + HIGHLIGHT[1] * t;
        b = b * (1 - t) + HIGHLIGHT[2] * t;
      } else {
        r *= NEGATIVE_DIM + (1 - NEGATIVE_DIM) * p;
        g *= NEGATIVE_DIM + (1 - NEGATIVE_DIM) * p;
        b *= NEGATIVE_DIM + (1 - NEGATIVE_DIM) * p;
      }
    }
    out[i * 3] = r;
    out[i * 3 + 1] = g;
    out[i * 3 + 2] = b;
  }
  return out;
}
