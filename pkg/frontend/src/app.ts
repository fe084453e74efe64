/**
 * Cockpit wiring: socket session with retry, pointer-to-hand steering at a
 * fixed 10 Hz, control panel, and a render loop that consumes snapshots.
 */

import { HandEmitter } from "./cadence.js";
import { canvasToTable, clampToWorkspace, DEFAULT_HALF_EXTENT, Viewport } from "./mapping.js";
import {
  Control,
  parseServerMessage,
  schemaCompatible,
  SCHEMA_VERSION,
} from "./protocol.js";
import { drawScene } from "./render.js";
import { deriveReadouts, OverlayToggles, SnapshotQueue } from "./state.js";

const RETRY_BASE_MS = 500;
const RETRY_MAX_MS = 8000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class Cockpit {
  private ws: WebSocket | null = null;
  private retryMs = RETRY_BASE_MS;
  private readonly queue = new SnapshotQueue();
  private readonly emitter = new HandEmitter();
  private readonly overlays: OverlayToggles = {
    forceVectors: true,
    spCircle: true,
    sigmaRings: true,
  };
  private activeProfile: string | null = null;
  private readonly canvas = el<HTMLCanvasElement>("workspace");
  private readonly banner = el<HTMLDivElement>("banner");
  private readonly readout = el<HTMLDivElement>("readouts");

  constructor(private readonly url: string) {
    this.bindPointer();
    this.bindControls();
    window.setInterval(() => this.flushHand(), 20);
    const loop = () => {
      this.render();
      window.requestAnimationFrame(loop);
    };
    window.requestAnimationFrame(loop);
    this.connect();
  }

  private viewport(): Viewport {
    return {
      widthPx: this.canvas.width,
      heightPx: this.canvas.height,
      halfExtentM: DEFAULT_HALF_EXTENT,
    };
  }

  private connect(): void {
    this.setBanner(`connecting to ${this.url} ...`);
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onmessage = (ev) => this.onFrame(String(ev.data));
    ws.onclose = () => {
      this.ws = null;
      this.setBanner(`disconnected; retrying in ${this.retryMs} ms`);
      window.setTimeout(() => this.connect(), this.retryMs);
      this.retryMs = Math.min(this.retryMs * 2, RETRY_MAX_MS);
    };
    ws.onerror = () => ws.close();
  }

  private onFrame(raw: string): void {
    let msg;
    try {
      msg = parseServerMessage(raw);
    } catch (e) {
      this.setBanner(`bad frame: ${(e as Error).message}`);
      return;
    }
    switch (msg.kind) {
      case "hello":
        if (!schemaCompatible(msg)) {
          this.setBanner(`schema mismatch: server ${msg.schema}, `
            + `cockpit ${SCHEMA_VERSION} - not rendering`);
          this.ws?.close();
          return;
        }
        this.retryMs = RETRY_BASE_MS;
        this.setBanner(`connected (seed ${msg.seed}, config ${msg.config_hash})`);
        break;
      case "snapshot":
        this.queue.push(msg);
        break;
      case "error":
        this.setBanner(`server: ${msg.message}`);
        break;
      case "ack":
        break;
    }
  }

  private bindPointer(): void {
    const toTable = (ev: PointerEvent): [number, number] => {
      const rect = this.canvas.getBoundingClientRect();
      const [x, y] = canvasToTable(this.viewport(),
                                   ev.clientX - rect.left, ev.clientY - rect.top);
      return clampToWorkspace(this.viewport(), x, y);
    };
    this.canvas.addEventListener("pointerdown", (ev) => {
      const [x, y] = toTable(ev);
      this.emitter.pointerDown(x, y, performance.now());
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      const [x, y] = toTable(ev);
      this.emitter.pointerMove(x, y);
    });
    const up = () => this.emitter.pointerUp();
    this.canvas.addEventListener("pointerup", up);
    this.canvas.addEventListener("pointercancel", up);
  }

  private bindControls(): void {
    const send = (msg: Control) => this.send(JSON.stringify(msg));
    el<HTMLButtonElement>("btn-start").onclick = () =>
      send({ kind: "control", action: "start" });
    el<HTMLButtonElement>("btn-pause").onclick = () =>
      send({ kind: "control", action: "pause" });
    el<HTMLButtonElement>("btn-reset").onclick = () =>
      send({ kind: "control", action: "reset" });
    const profileSel = el<HTMLSelectElement>("profile");
    const damperBox = el<HTMLInputElement>("damper");
    el<HTMLButtonElement>("btn-profile").onclick = () => {
      this.activeProfile = profileSel.value;
      send({ kind: "control", action: "profile", profile: profileSel.value,
             damper: damperBox.checked });
    };
    for (const key of ["forceVectors", "spCircle", "sigmaRings"] as const) {
      el<HTMLInputElement>(`toggle-${key}`).onchange = (ev) => {
        this.overlays[key] = (ev.target as HTMLInputElement).checked;
      };
    }
  }

  private flushHand(): void {
    for (const msg of this.emitter.poll(performance.now())) {
      this.send(JSON.stringify(msg));
    }
  }

  private send(data: string): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) this.ws.send(data);
  }

  private setBanner(text: string): void {
    this.banner.textContent = text;
  }

  private render(): void {
    const snap = this.queue.current();
    if (!snap) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    drawScene(ctx, this.viewport(), snap, this.overlays, this.activeProfile);
    const r = deriveReadouts(snap);
    this.readout.textContent =
      `t=${r.t.toFixed(2)} s  ${r.paused ? "paused" : "running"}  ` +
      `rho=[${r.rho.map((v) => v.toFixed(1)).join(", ")}]  ` +
      `priority=${r.holder ?? "-"}  ` +
      `d_rr=${r.dMinRR?.toFixed(3) ?? "-"}  d_rh=${r.dMinRH?.toFixed(3) ?? "-"}` +
      (r.spViolated ? "  [S_p VIOLATED]" : "");
  }
}

new Cockpit(`ws://${window.location.hostname || "127.0.0.1"}:8787`);
