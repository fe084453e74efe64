/**
 * Wire protocol shared with the serve mode: JSON messages of three kinds
 * (snapshot, hand_input, control) plus the hello handshake and error frames.
 * The schema version is negotiated in the handshake; a mismatch must surface
 * visibly rather than degrade silently.
 */

export const SCHEMA_VERSION = 1;

export type Vec3 = [number, number, number];

export interface AgentSnapshot {
  i: number;
  x: Vec3;
  v: Vec3;
  base: Vec3;
  grasped: number | null;
  rho: number;
  phase: string;
  forces: Record<string, Vec3>;
}

export interface BlockSnapshot {
  id: number;
  x: Vec3;
  state: "at_home" | "held" | "placed";
}

export interface Snapshot {
  kind: "snapshot";
  schema: number;
  t: number;
  paused: boolean;
  status: string;
  agents: AgentSnapshot[];
  hands: Record<string, Vec3[] | null>;
  blocks: BlockSnapshot[];
  priority: { holder: number | null; counters: Record<string, number> };
  d_min_rr: number | null;
  d_min_rh: number | null;
  s_p: number;
  grid: { pitch: number; n: number };
}

export interface Hello {
  kind: "hello";
  schema: number;
  seed: number;
  config_hash: string;
  profiles: string[];
}

export interface ErrorFrame {
  kind: "error";
  message: string;
}

export interface Ack {
  kind: "ack";
  action: string;
}

export type ServerMessage = Snapshot | Hello | ErrorFrame | Ack;

export interface HandInput {
  kind: "hand_input";
  engaged: boolean;
  x?: number;
  y?: number;
  z?: number;
}

export type ControlAction = "start" | "pause" | "reset" | "profile";

export interface Control {
  kind: "control";
  action: ControlAction;
  profile?: string;
  damper?: boolean;
}

export type ClientMessage = HandInput | Control | { kind: "hello"; schema: number };

/** Parse and narrow one server frame; throws on anything malformed. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new Error("frame is not valid JSON");
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new Error("frame is not an object");
  }
  const msg = data as Record<string, unknown>;
  switch (msg.kind) {
    case "snapshot": {
      if (typeof msg.t !== "number" || !Array.isArray(msg.agents)) {
        throw new Error("snapshot missing t or agents");
      }
      return msg as unknown as Snapshot;
    }
    case "hello": {
      if (typeof msg.schema !== "number") {
        throw new Error("hello missing schema");
      }
      return msg as unknown as Hello;
    }
    case "error": {
      if (typeof msg.message !== "string") {
        throw new Error("error frame missing message");
      }
      return msg as unknown as ErrorFrame;
    }
    case "ack":
      return msg as unknown as Ack;
    default:
      throw new Error(`unknown frame kind ${String(msg.kind)}`);
  }
}

export function handMessage(engaged: boolean, x?: number, y?: number,
                            z?: number): HandInput {
  return engaged ? { kind: "hand_input", engaged, x, y, z }
                 : { kind: "hand_input", engaged: false };
}

export function schemaCompatible(hello: Hello): boolean {
  return hello.schema === SCHEMA_VERSION;
}
