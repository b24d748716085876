// Console state: mirrors the service via status messages, buffers the
// waveform for display, and keeps the acknowledged annotation log.

import { Frame, codeToUv } from "./protocol.js";

export type ServiceState = "stopped" | "running";
export type Connection = "disconnected" | "connecting" | "connected";

export interface AfeSummary {
  vref: number;
  bits: number;
  gain: number;
  sps: number;
}

export interface StatusMessage {
  ok: boolean;
  kind?: string;
  state?: ServiceState;
  session_id?: string | null;
  sps?: number | null;
  frames_emitted?: number;
  samples_emitted?: number;
  drl_enabled?: boolean | null;
  quality_uv_rms?: number | null;
  subscribers?: { id: number; drops: number; queued: number }[];
  scenario?: { afe?: AfeSummary } | null;
}

export interface AnnotationEntry {
  tUs: number;
  label: string;
}

export type QualityLevel = "good" | "ok" | "poor" | "unknown";

// UI guidance thresholds for the powerline-residual figure, in microvolts
export const QUALITY_GOOD_UV = 5.0;
export const QUALITY_POOR_UV = 20.0;

export function classifyQuality(uvRms: number | null | undefined): QualityLevel {
  if (uvRms === null || uvRms === undefined || !isFinite(uvRms)) return "unknown";
  if (uvRms < QUALITY_GOOD_UV) return "good";
  if (uvRms > QUALITY_POOR_UV) return "poor";
  return "ok";
}

export const MAX_DISPLAY_POINTS = 2000;

/**
 * Rolling per-channel sample buffer for the waveform view. Frames may be
 * dropped upstream (bounded-queue policy) but are never reordered: a
 * frame older than the newest displayed sample is discarded.
 */
export class WaveformBuffer {
  private t: number[] = [];
  private v: number[][] = [];
  private lastTs = -Infinity;
  public nChannels = 0;

  constructor(
    public windowS: number = 5.0,
    private afe: AfeSummary = { vref: 3.3, bits: 24, gain: 50, sps: 500 },
  ) {}

  setAfe(afe: AfeSummary): void {
    this.afe = afe;
  }

  /** Returns false if the frame was rejected (out of order). */
  push(frame: Frame): boolean {
    if (frame.timestampUs <= this.lastTs) return false;
    if (this.nChannels !== frame.nChannels) {
      this.nChannels = frame.nChannels;
      this.t = [];
      this.v = Array.from({ length: frame.nChannels }, () => []);
    }
    const periodUs = 1e6 / this.afe.sps;
    for (let tick = 0; tick < frame.sampleCount; tick++) {
      const ts = frame.timestampUs + tick * periodUs;
      this.t.push(ts);
      for (let ch = 0; ch < frame.nChannels; ch++) {
        this.v[ch].push(codeToUv(frame.samples[tick * frame.nChannels + ch], this.afe));
      }
    }
    this.lastTs = this.t[this.t.length - 1];
    const cutoff = this.lastTs - this.windowS * 1e6;
    let drop = 0;
    while (drop < this.t.length && this.t[drop] < cutoff) drop++;
    if (drop > 0) {
      this.t.splice(0, drop);
      for (const col of this.v) col.splice(0, drop);
    }
    return true;
  }

  /** Display series, decimated to at most MAX_DISPLAY_POINTS per channel. */
  series(channel: number): { t: number[]; v: number[] } {
    const src = this.v[channel] ?? [];
    const stride = Math.max(1, Math.ceil(src.length / MAX_DISPLAY_POINTS));
    const t: number[] = [];
    const v: number[] = [];
    for (let i = 0; i < src.length; i += stride) {
      t.push(this.t[i]);
      v.push(src[i]);
    }
    return { t, v };
  }

  get length(): number {
    return this.t.length;
  }

  get newestUs(): number {
    return this.lastTs;
  }
}

export class ConsoleState {
  connection: Connection = "disconnected";
  serviceState: ServiceState = "stopped";
  sessionId: string | null = null;
  sps: number | null = null;
  drlEnabled: boolean | null = null;
  quality: number | null = null;
  framesEmitted = 0;
  annotationLog: AnnotationEntry[] = [];
  waveform = new WaveformBuffer();
  lastError: string | null = null;

  /** The UI never claims "running" on its own; it mirrors the service. */
  applyStatus(msg: StatusMessage): void {
    if (msg.state) this.serviceState = msg.state;
    if (msg.session_id !== undefined) this.sessionId = msg.session_id;
    if (msg.sps !== undefined && msg.sps !== null) this.sps = msg.sps;
    if (msg.drl_enabled !== undefined && msg.drl_enabled !== null) {
      this.drlEnabled = msg.drl_enabled;
    }
    if (msg.quality_uv_rms !== undefined) this.quality = msg.quality_uv_rms ?? null;
    if (msg.frames_emitted !== undefined) this.framesEmitted = msg.frames_emitted;
    const afe = msg.scenario?.afe;
    if (afe) this.waveform.setAfe(afe);
  }

  /** Acknowledged annotate replies land in the mirrored log. */
  applyAnnotateAck(reply: { ok: boolean; t_us?: number; label?: string }): void {
    if (reply.ok && reply.t_us !== undefined && reply.label) {
      this.annotationLog.push({ tUs: reply.t_us, label: reply.label });
    }
  }

  get qualityLevel(): QualityLevel {
    return classifyQuality(this.quality);
  }

  get canAnnotate(): boolean {
    return this.connection === "connected" && this.serviceState === "running";
  }
}
