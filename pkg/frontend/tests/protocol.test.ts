import { describe, expect, it } from "vitest";

import {
  handMessage,
  parseServerMessage,
  schemaCompatible,
  SCHEMA_VERSION,
  Snapshot,
} from "../src/protocol.js";

const SNAPSHOT = {
  kind: "snapshot", schema: 1, t: 1.25, paused: false, status: "running",
  agents: [{ i: 0, x: [0, 0, 0.15], v: [0, 0, 0], base: [0, -0.55, 0.25],
             grasped: null, rho: 0.5, phase: "hold", forces: {} }],
  hands: { "0": null }, blocks: [],
  priority: { holder: null, counters: {} },
  d_min_rr: null, d_min_rh: 0.4, s_p: 0.3505, grid: { pitch: 0.06, n: 4 },
};

describe("parseServerMessage", () => {
  it("accepts a snapshot", () => {
    const msg = parseServerMessage(JSON.stringify(SNAPSHOT));
    expect(msg.kind).toBe("snapshot");
    expect((msg as Snapshot).agents[0].rho).toBeCloseTo(0.5);
  });

  it("accepts hello and error frames", () => {
    const hello = parseServerMessage(JSON.stringify(
      { kind: "hello", schema: 1, seed: 0, config_hash: "ab", profiles: [] }));
    expect(hello.kind).toBe("hello");
    const err = parseServerMessage(JSON.stringify(
      { kind: "error", message: "nope" }));
    expect(err.kind).toBe("error");
  });

  it("rejects garbage", () => {
    expect(() => parseServerMessage("not json")).toThrow(/JSON/);
    expect(() => parseServerMessage("[1,2]")).toThrow(/object/);
    expect(() => parseServerMessage('{"kind":"mystery"}')).toThrow(/unknown/);
    expect(() => parseServerMessage('{"kind":"snapshot"}')).toThrow(/missing/);
  });
});

describe("handshake", () => {
  it("flags schema mismatch", () => {
    const ok = { kind: "hello" as const, schema: SCHEMA_VERSION, seed: 0,
                 config_hash: "x", profiles: [] };
    expect(schemaCompatible(ok)).toBe(true);
    expect(schemaCompatible({ ...ok, schema: 99 })).toBe(false);
  });
});

describe("handMessage", () => {
  it("omits coordinates when disengaged", () => {
    expect(handMessage(false)).toEqual({ kind: "hand_input", engaged: false });
    expect(handMessage(true, 0.1, 0.2, 0.15)).toEqual(
      { kind: "hand_input", engaged: true, x: 0.1, y: 0.2, z: 0.15 });
  });
});
