// Scripted operator session against a real service process: connect,
// configure, start, toggle the DRL ground, annotate, stop; then check
// the recorded session against the click script and the quality drop
// against the attenuation the DRL model promises.

import { spawn, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ConsoleClient, WebSocketLike } from "../src/client.js";
import { ConsoleState } from "../src/state.js";

const PORT = 18843 + Math.floor(Math.random() * 1000);
const URL = `ws://127.0.0.1:${PORT}/ws`;

// strong mains pickup so the quality figure has something to show;
// DRL starts disabled and the script switches it on
const SCENARIO = {
  scenario: "eeg",
  seed: 5,
  afe: {
    vref: 3.3, bits: 24, gain: 50.0, cmrr_db: 120.0,
    drl_enabled: false, drl_loop_gain: 99.0, powerline_hz: 50.0, sps: 500.0,
  },
  noise: {
    powerline_amp_uv: 100000.0, white_uv_rms: 0.0, drift_uv: 0.0,
    cm_to_diff_fraction: 0.02, powerline_detune_hz: 0.3,
  },
  protocol: { epochs: [{ label: "eyes-open", start_s: 0, duration_s: 600 }], seed: 5 },
  params: { a_open_uv: 0.0, a_closed_uv: 0.0, background_uv_rms: 0.0 },
};

let server: ChildProcess;
let outRoot: string;

function wsFactory(url: string): WebSocketLike {
  return new WebSocket(url) as unknown as WebSocketLike;
}

async function waitForServer(url: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const ok = await new Promise<boolean>((resolve) => {
      const ws = new WebSocket(url);
      ws.once("open", () => {
        ws.close();
        resolve(true);
      });
      ws.once("error", () => resolve(false));
    });
    if (ok) return;
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("service did not come up");
}

function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}

async function settledQuality(state: ConsoleState, minUs: number): Promise<number> {
  // wait for a status push whose 2 s quality window lies entirely past minUs
  for (let i = 0; i < 40; i++) {
    await sleep(250);
    if (
      state.quality !== null &&
      state.framesEmitted * 25 >= (minUs / 1e6) * 500 + 2.5 * 500
    ) {
      return state.quality;
    }
  }
  throw new Error("quality figure never settled");
}

beforeAll(async () => {
  outRoot = mkdtempSync(join(tmpdir(), "earexg-console-"));
  server = spawn(
    "python3",
    ["-m", "earexg", "serve", "--host", "127.0.0.1", "--port", String(PORT),
     "--out-root", outRoot],
    { stdio: "ignore" },
  );
  await waitForServer(URL);
}, 30000);

afterAll(() => {
  server?.kill();
});

describe("console round-trip against a live service", () => {
  it(
    "runs the click script and leaves a matching session",
    async () => {
      const state = new ConsoleState();
      const client = new ConsoleClient(
        {
          onStatus: (s) => state.applyStatus(s),
          onFrame: (f) => state.waveform.push(f),
        },
        wsFactory,
      );
      await client.connect(URL);
      state.connection = "connected";

      expect((await client.configure(SCENARIO, "realtime")).ok).toBe(true);
      const started = await client.start();
      expect(started.ok).toBe(true);
      const sessionId = started.session_id as string;

      // DRL off: let the quality window fill
      const qOff = await settledQuality(state, 0);
      expect(state.serviceState).toBe("running");

      // operator clicks: annotate eyes-closed, then enable the DRL ground
      const ack = await client.annotate("eyes-closed");
      expect(ack.ok).toBe(true);
      state.applyAnnotateAck(ack as { ok: boolean; t_us?: number; label?: string });

      const toggled = await client.setDrl(true);
      expect(toggled.ok).toBe(true);
      const toggleUs = (ack.t_us as number) ?? 0;

      const qOn = await settledQuality(state, toggleUs + 1_000_000);
      const dropDb = 20 * Math.log10(qOff / qOn);
      expect(dropDb).toBeGreaterThanOrEqual(20);

      const stopped = await client.stop();
      expect(stopped.ok).toBe(true);
      // the UI mirrors service status messages; it flips on the next push
      for (let i = 0; i < 20 && state.serviceState !== "stopped"; i++) {
        await sleep(250);
      }
      expect(state.serviceState).toBe("stopped");

      // the UI log mirrors exactly the acknowledged clicks
      expect(state.annotationLog.map((a) => a.label)).toEqual(["eyes-closed"]);

      // the session on disk matches the click script
      const sessionDir = join(outRoot, sessionId);
      expect(readdirSync(sessionDir).sort()).toEqual(
        ["annotations.jsonl", "meta.json", "raw.bin"],
      );
      const annotations = readFileSync(join(sessionDir, "annotations.jsonl"), "utf-8")
        .trim()
        .split("\n")
        .map((line) => JSON.parse(line));
      const operator = annotations.filter((a) => a.source === "operator");
      expect(operator.map((a) => a.label)).toEqual(["eyes-closed"]);
      expect(operator[0].t_us).toBe(state.annotationLog[0].tUs);
      const service = annotations.filter((a) => a.source === "service").map((a) => a.label);
      expect(service).toEqual(["session-start", "session-stop"]);

      // live frames flowed into the waveform view with monotone time
      expect(state.waveform.length).toBeGreaterThan(0);

      client.close();
    },
    110_000,
  );
});
