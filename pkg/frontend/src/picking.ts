/** Screen-space nearest-point picking: given projected pixel positions of
 * every cloud point, return the nearest index within a fixed radius or null
 * (a click on empty space sends no request). Depth breaks ties. */

export interface ProjectedPoint {
  x: number;
  y: number;
  depth: number; // camera-space depth, smaller = nearer
  visible: boolean;
}

export function pickNearest(
  projected: ProjectedPoint[],
  screenX: number,
  screenY: number,
  radiusPx: number
): number | null {
  let best: number | null = null;
  let bestKey: [number, number] | null = null;
  const r2 = radiusPx * radiusPx;
  for (let i = 0; i < projected.length; i++) {
    const p = projected[i];
    if (!p.visible) continue;
    const dx = p.x - screenX;
    const dy = p.y - screenY;
    const d2 = dx * dx + dy * dy;
    if (d2 > r2) continue;
    const key: [number, number] = [d2, p.depth];
    if (
      bestKey === null ||
      key[0] < bestKey[0] ||
      (key[0] === bestKey[0] && key[1] < bestKey[1])
    ) {
      best = i;
      bestKey = key;
    }
  }
  return best;
}
