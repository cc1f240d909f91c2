import { describe, expect, it } from "vitest";

import { FrameReader, encodeFrame } from "../src/framing";

describe("framing", () => {
  it("round-trips frames", () => {
    const reader = new FrameReader();
    const frames = reader.push(
      Buffer.concat([encodeFrame(Buffer.from("hello")), encodeFrame(Buffer.from("")), encodeFrame(Buffer.from("world"))]),
    );
    expect(frames.map((f) => f.toString())).toEqual(["hello", "", "world"]);
    expect(reader.pending).toBe(0);
  });

  it("handles chunk boundaries anywhere", () => {
    const wire = Buffer.concat([encodeFrame(Buffer.from("abcdef")), encodeFrame(Buffer.from("xy"))]);
    for (let cut = 1; cut < wire.length; cut++) {
      const reader = new FrameReader();
      const got = [...reader.push(wire.subarray(0, cut)), ...reader.push(wire.subarray(cut))];
      expect(got.map((f) => f.toString())).toEqual(["abcdef", "xy"]);
    }
  });

  it("uses a little-endian length prefix", () => {
    const frame = encodeFrame(Buffer.from("abc"));
    expect(frame.readUInt32LE(0)).toBe(3);
    expect(frame.subarray(4).toString()).toBe("abc");
  });
});
