// Binary stream frame codec, mirroring protocol.md byte for byte.

export const MAGIC0 = 0x45;
export const MAGIC1 = 0x58;
export const VERSION = 1;
export const FLAG_DRL = 0x01;
export const FLAG_BLE = 0x02;
export const HEADER_LEN = 12;
export const CRC_LEN = 2;

export class FrameDecodeError extends Error {}
export class BadMagicError extends FrameDecodeError {}
export class UnsupportedVersionError extends FrameDecodeError {}
export class LengthMismatchError extends FrameDecodeError {}
export class CrcMismatchError extends FrameDecodeError {}

export interface Frame {
  version: number;
  flags: number;
  drlEnabled: boolean;
  seq: number;
  timestampUs: number;
  channelMask: number;
  sampleCount: number;
  nChannels: number;
  /** tick-major: samples[tick * nChannels + channel] */
  samples: Int32Array;
}

const CRC_TABLE: Uint16Array = (() => {
  const table = new Uint16Array(256);
  for (let byte = 0; byte < 256; byte++) {
    let crc = byte << 8;
    for (let i = 0; i < 8; i++) {
      crc = crc & 0x8000 ? ((crc << 1) ^ 0x1021) & 0xffff : (crc << 1) & 0xffff;
    }
    table[byte] = crc;
  }
  return table;
})();

/** CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection. */
export function crc16(data: Uint8Array, crc = 0xffff): number {
  for (const b of data) {
    crc = ((crc << 8) & 0xffff) ^ CRC_TABLE[((crc >> 8) ^ b) & 0xff];
  }
  return crc;
}

export function popcount(x: number): number {
  let n = 0;
  while (x) {
    n += x & 1;
    x >>>= 1;
  }
  return n;
}

export function decodeFrame(data: Uint8Array | ArrayBuffer): Frame {
  const buf = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (buf.length < 2) {
    throw new LengthMismatchError(`${buf.length} bytes is too short for a frame`);
  }
  if (buf[0] !== MAGIC0 || buf[1] !== MAGIC1) {
    throw new BadMagicError(`bad magic ${buf[0].toString(16)} ${buf[1].toString(16)}`);
  }
  if (buf[2] !== VERSION) {
    throw new UnsupportedVersionError(`unsupported version ${buf[2]}`);
  }
  if (buf.length < HEADER_LEN + CRC_LEN) {
    throw new LengthMismatchError(`truncated header: ${buf.length} bytes`);
  }
  const mask = buf[10];
  const sampleCount = buf[11];
  const nChannels = popcount(mask & 0x7f);
  if (mask === 0 || mask > 0x7f || sampleCount === 0) {
    throw new LengthMismatchError(`header inconsistent (mask=${mask}, count=${sampleCount})`);
  }
  const expected = HEADER_LEN + 3 * sampleCount * nChannels + CRC_LEN;
  if (buf.length !== expected) {
    throw new LengthMismatchError(`expected ${expected} bytes, got ${buf.length}`);
  }
  const stored = (buf[buf.length - 2] << 8) | buf[buf.length - 1];
  const computed = crc16(buf.subarray(0, buf.length - 2));
  if (stored !== computed) {
    throw new CrcMismatchError(`crc 0x${stored.toString(16)} != 0x${computed.toString(16)}`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const samples = new Int32Array(sampleCount * nChannels);
  let off = HEADER_LEN;
  for (let i = 0; i < samples.length; i++) {
    const raw = buf[off] | (buf[off + 1] << 8) | (buf[off + 2] << 16);
    samples[i] = (raw << 8) >> 8; // sign-extend 24 -> 32 bit
    off += 3;
  }
  return {
    version: buf[2],
    flags: buf[3],
    drlEnabled: (buf[3] & FLAG_DRL) !== 0,
    seq: view.getUint16(4, true),
    timestampUs: view.getUint32(6, true),
    channelMask: mask,
    sampleCount,
    nChannels,
    samples,
  };
}

/** Serialize a frame (used by tests; the console itself only receives). */
export function encodeFrame(frame: {
  seq: number;
  timestampUs: number;
  channelMask: number;
  samples: Int32Array | number[];
  flags?: number;
}): Uint8Array {
  const samples = Int32Array.from(frame.samples);
  const nChannels = popcount(frame.channelMask & 0x7f);
  if (frame.channelMask <= 0 || frame.channelMask > 0x7f) {
    throw new Error(`channel mask ${frame.channelMask} must use bits 0..6`);
  }
  if (samples.length % nChannels !== 0) {
    throw new Error("sample array does not divide into channels");
  }
  const sampleCount = samples.length / nChannels;
  if (sampleCount < 1 || sampleCount > 255) {
    throw new Error(`sample_count ${sampleCount} outside 1..255`);
  }
  const out = new Uint8Array(HEADER_LEN + 3 * samples.length + CRC_LEN);
  const view = new DataView(out.buffer);
  out[0] = MAGIC0;
  out[1] = MAGIC1;
  out[2] = VERSION;
  out[3] = frame.flags ?? 0;
  view.setUint16(4, frame.seq & 0xffff, true);
  view.setUint32(6, frame.timestampUs >>> 0, true);
  out[10] = frame.channelMask;
  out[11] = sampleCount;
  let off = HEADER_LEN;
  for (const s of samples) {
    out[off++] = s & 0xff;
    out[off++] = (s >> 8) & 0xff;
    out[off++] = (s >> 16) & 0xff;
  }
  const crc = crc16(out.subarray(0, out.length - 2));
  out[out.length - 2] = (crc >> 8) & 0xff;
  out[out.length - 1] = crc & 0xff;
  return out;
}

/** Input-referred microvolts for a code, given the AFE summary. */
export function codeToUv(code: number, afe: { vref: number; bits: number; gain: number }): number {
  return (code * afe.vref * 1e6) / Math.pow(2, afe.bits) / afe.gain;
}
