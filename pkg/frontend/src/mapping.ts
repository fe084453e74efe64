/**
 * Table-plane <-> canvas coordinate mapping for the top-down view.
 * The workspace is a square window of the table centered on the origin;
 * height above the table is encoded by marker size, not a third axis.
 */

export interface Viewport {
  widthPx: number;
  heightPx: number;
  /** half extent of the visible table window, meters */
  halfExtentM: number;
}

export const DEFAULT_HALF_EXTENT = 0.65;

export function scalePxPerM(vp: Viewport): number {
  return Math.min(vp.widthPx, vp.heightPx) / (2 * vp.halfExtentM);
}

/** Table (x, y) in meters to canvas pixels; y up on the table, down on canvas. */
export function tableToCanvas(vp: Viewport, x: number, y: number): [number, number] {
  const s = scalePxPerM(vp);
  return [vp.widthPx / 2 + x * s, vp.heightPx / 2 - y * s];
}

export function canvasToTable(vp: Viewport, px: number, py: number): [number, number] {
  const s = scalePxPerM(vp);
  return [(px - vp.widthPx / 2) / s, (vp.heightPx / 2 - py) / s];
}

/** Clamp a pointer position to the visible workspace window. */
export function clampToWorkspace(vp: Viewport, x: number, y: number): [number, number] {
  const h = vp.halfExtentM;
  return [Math.min(h, Math.max(-h, x)), Math.min(h, Math.max(-h, y))];
}

/** Marker radius in pixels: grows with height above the table. */
export function markerRadiusPx(vp: Viewport, z: number, baseM = 0.02): number {
  const s = scalePxPerM(vp);
  return Math.max(3, (baseM + 0.05 * Math.max(0, z)) * s);
}
