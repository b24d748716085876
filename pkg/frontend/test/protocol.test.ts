import { describe, expect, it } from "vitest";

import {
  BadMagicError,
  CrcMismatchError,
  LengthMismatchError,
  UnsupportedVersionError,
  codeToUv,
  crc16,
  decodeFrame,
  encodeFrame,
} from "../src/protocol.js";

// the worked example from protocol.md: 1 ch, 1 sample of code 0, seq 0, ts 0
const MINIMAL_HEX = "455801000000000000000101000000ce21";

function fromHex(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

describe("crc16", () => {
  it("matches the CCITT-FALSE check value", () => {
    expect(crc16(new TextEncoder().encode("123456789"))).toBe(0x29b1);
  });

  it("starts at 0xFFFF", () => {
    expect(crc16(new Uint8Array(0))).toBe(0xffff);
  });
});

describe("decodeFrame", () => {
  it("decodes the documented minimal frame", () => {
    const frame = decodeFrame(fromHex(MINIMAL_HEX));
    expect(frame.seq).toBe(0);
    expect(frame.timestampUs).toBe(0);
    expect(frame.channelMask).toBe(1);
    expect(frame.sampleCount).toBe(1);
    expect(frame.nChannels).toBe(1);
    expect(frame.drlEnabled).toBe(false);
    expect(Array.from(frame.samples)).toEqual([0]);
  });

  it("round-trips frames with negative samples", () => {
    const raw = encodeFrame({
      seq: 65535,
      timestampUs: 4294967295,
      channelMask: 0b0000011,
      samples: [-1, -(2 ** 23), 2 ** 23 - 1, 12345],
      flags: 0x01,
    });
    const frame = decodeFrame(raw);
    expect(frame.seq).toBe(65535);
    expect(frame.timestampUs).toBe(4294967295);
    expect(frame.nChannels).toBe(2);
    expect(frame.sampleCount).toBe(2);
    expect(frame.drlEnabled).toBe(true);
    expect(Array.from(frame.samples)).toEqual([-1, -(2 ** 23), 2 ** 23 - 1, 12345]);
  });

  it("rejects a flipped payload bit with a CRC error", () => {
    const raw = fromHex(MINIMAL_HEX);
    raw[13] ^= 0x04;
    expect(() => decodeFrame(raw)).toThrow(CrcMismatchError);
  });

  it("rejects truncation with a length error", () => {
    const raw = fromHex(MINIMAL_HEX);
    expect(() => decodeFrame(raw.subarray(0, 15))).toThrow(LengthMismatchError);
    expect(() => decodeFrame(raw.subarray(0, 1))).toThrow(LengthMismatchError);
  });

  it("rejects bad magic and bad version distinctly", () => {
    const magic = fromHex(MINIMAL_HEX);
    magic[0] = 0xaa;
    expect(() => decodeFrame(magic)).toThrow(BadMagicError);
    const version = fromHex(MINIMAL_HEX);
    version[2] = 9;
    expect(() => decodeFrame(version)).toThrow(UnsupportedVersionError);
  });

  it("rejects every single-bit corruption of the minimal frame", () => {
    const raw = fromHex(MINIMAL_HEX);
    for (let bit = 0; bit < raw.length * 8; bit++) {
      const corrupted = Uint8Array.from(raw);
      corrupted[bit >> 3] ^= 1 << (bit & 7);
      expect(() => decodeFrame(corrupted)).toThrow();
    }
  });
});

describe("codeToUv", () => {
  it("scales by the input-referred lsb", () => {
    const afe = { vref: 3.3, bits: 24, gain: 50 };
    expect(codeToUv(1, afe)).toBeCloseTo(3.934e-3, 6);
    expect(codeToUv(0, afe)).toBe(0);
  });
});
