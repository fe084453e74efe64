/**
 * Fixed 10 Hz hand-input cadence, independent of pointer event rate.
 * While engaged, the latest pointer position is resent every tick (an idle
 * pointer still streams). Disengaging emits a single absence message.
 */

import { HandInput, handMessage } from "./protocol.js";

export const HAND_RATE_HZ = 10;
export const HAND_INTERVAL_MS = 1000 / HAND_RATE_HZ;

export class HandEmitter {
  private engaged = false;
  private x = 0;
  private y = 0;
  private z: number;
  private nextDueMs: number | null = null;
  private absencePending = false;

  constructor(handHeightM = 0.15) {
    this.z = handHeightM;
  }

  pointerDown(x: number, y: number, nowMs: number): void {
    this.engaged = true;
    this.x = x;
    this.y = y;
    if (this.nextDueMs === null) this.nextDueMs = nowMs;
  }

  pointerMove(x: number, y: number): void {
    if (!this.engaged) return;
    this.x = x;
    this.y = y;
  }

  pointerUp(): void {
    if (!this.engaged) return;
    this.engaged = false;
    this.nextDueMs = null;
    this.absencePending = true;
  }

  /** Messages due at wall time nowMs; call from a timer faster than 10 Hz. */
  poll(nowMs: number): HandInput[] {
    const out: HandInput[] = [];
    if (this.absencePending) {
      out.push(handMessage(false));
      this.absencePending = false;
    }
    if (!this.engaged || this.nextDueMs === null) return out;
    while (nowMs >= this.nextDueMs) {
      out.push(handMessage(true, this.x, this.y, this.z));
      this.nextDueMs += HAND_INTERVAL_MS;
    }
    return out;
  }
}
