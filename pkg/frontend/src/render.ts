/** Canvas rendering of the top-down workspace view. */

import { markerRadiusPx, tableToCanvas, Viewport } from "./mapping.js";
import { Snapshot } from "./protocol.js";
import { OverlayToggles, PROFILE_SIGMA } from "./state.js";

const COLORS = ["#2e7dd1", "#d1492e", "#3fa34d", "#9146c9"];
const FORCE_SCALE = 0.004; // meters of arrow per newton

function circle(ctx: CanvasRenderingContext2D, px: number, py: number,
                r: number, stroke: string, fill?: string): void {
  ctx.beginPath();
  ctx.arc(px, py, r, 0, 2 * Math.PI);
  if (fill) {
    ctx.fillStyle = fill;
    ctx.fill();
  }
  ctx.strokeStyle = stroke;
  ctx.stroke();
}

export function drawScene(ctx: CanvasRenderingContext2D, vp: Viewport,
                          snap: Snapshot, overlays: OverlayToggles,
                          activeProfile: string | null): void {
  ctx.clearRect(0, 0, vp.widthPx, vp.heightPx);
  const sPx = (m: number) =>
    m * (Math.min(vp.widthPx, vp.heightPx) / (2 * vp.halfExtentM));

  // placement grid
  const pitch = snap.grid.pitch;
  const n = snap.grid.n;
  ctx.strokeStyle = "#ccc";
  for (let i = 0; i <= n; i++) {
    const c = (i - n / 2) * pitch;
    const [x0, y0] = tableToCanvas(vp, c, -n * pitch / 2);
    const [x1, y1] = tableToCanvas(vp, c, n * pitch / 2);
    const [x2, y2] = tableToCanvas(vp, -n * pitch / 2, c);
    const [x3, y3] = tableToCanvas(vp, n * pitch / 2, c);
    ctx.beginPath(); ctx.moveTo(x0, y0); ctx.lineTo(x1, y1); ctx.stroke();
    ctx.beginPath(); ctx.moveTo(x2, y2); ctx.lineTo(x3, y3); ctx.stroke();
  }

  for (const b of snap.blocks) {
    const [px, py] = tableToCanvas(vp, b.x[0], b.x[1]);
    const half = sPx(0.015);
    ctx.fillStyle = b.state === "placed" ? "#8a6d3b" : "#c9a227";
    if (b.state !== "held") ctx.fillRect(px - half, py - half, 2 * half, 2 * half);
  }

  for (const a of snap.agents) {
    const color = COLORS[a.i % COLORS.length];
    const [bx, by] = tableToCanvas(vp, a.base[0], a.base[1]);
    const [ex, ey] = tableToCanvas(vp, a.x[0], a.x[1]);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath(); ctx.moveTo(bx, by); ctx.lineTo(ex, ey); ctx.stroke();
    ctx.lineWidth = 1;
    circle(ctx, ex, ey, markerRadiusPx(vp, a.x[2]), color, color);
    if (a.grasped !== null) circle(ctx, ex, ey, markerRadiusPx(vp, a.x[2]) + 3, "#c9a227");

    if (overlays.forceVectors) {
      for (const f of Object.values(a.forces)) {
        const [fx, fy] = tableToCanvas(vp, a.x[0] + f[0] * FORCE_SCALE,
                                       a.x[1] + f[1] * FORCE_SCALE);
        ctx.strokeStyle = "#555";
        ctx.beginPath(); ctx.moveTo(ex, ey); ctx.lineTo(fx, fy); ctx.stroke();
      }
    }
    if (overlays.sigmaRings && activeProfile !== null) {
      const sigma = PROFILE_SIGMA[activeProfile];
      if (sigma !== undefined) circle(ctx, ex, ey, sPx(sigma), "#3fa34d55");
    }
    if (overlays.spCircle) circle(ctx, ex, ey, sPx(snap.s_p), "#d1492e44");
  }

  for (const pts of Object.values(snap.hands)) {
    if (!pts) continue;
    for (const p of pts) {
      const [hx, hy] = tableToCanvas(vp, p[0], p[1]);
      circle(ctx, hx, hy, markerRadiusPx(vp, p[2], 0.015), "#222", "#e8c39e");
    }
  }
}
