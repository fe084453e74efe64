/**
 * View state derived purely from received snapshots. The cockpit never
 * simulates; it renders the latest non-regressing snapshot and a few
 * readouts computed from it.
 */

import { Snapshot } from "./protocol.js";

export interface OverlayToggles {
  forceVectors: boolean;
  spCircle: boolean;
  sigmaRings: boolean;
}

/** sigma of the hand-avoidance spring per shipped profile, meters. */
export const PROFILE_SIGMA: Record<string, number> = {
  profile1: 0.09,
  profile2: 0.09,
  profile3: 0.18,
  profile4: 0.18,
};

export class SnapshotQueue {
  private latest: Snapshot | null = null;
  dropped = 0;

  /** Accept a snapshot only if it does not regress in simulation time. */
  push(snap: Snapshot): boolean {
    if (this.latest !== null && snap.t < this.latest.t) {
      this.dropped += 1;
      return false;
    }
    this.latest = snap;
    return true;
  }

  current(): Snapshot | null {
    return this.latest;
  }
}

export interface Readouts {
  t: number;
  status: string;
  paused: boolean;
  rho: number[];
  holder: number | null;
  dMinRR: number | null;
  dMinRH: number | null;
  spViolated: boolean;
}

export function deriveReadouts(snap: Snapshot): Readouts {
  return {
    t: snap.t,
    status: snap.status,
    paused: snap.paused,
    rho: snap.agents.map((a) => a.rho),
    holder: snap.priority.holder,
    dMinRR: snap.d_min_rr,
    dMinRH: snap.d_min_rh,
    spViolated: snap.d_min_rh !== null && snap.d_min_rh < snap.s_p,
  };
}
