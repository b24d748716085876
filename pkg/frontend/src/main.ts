// DOM wiring for the operator console.

import { ConsoleClient } from "./client.js";
import { ConsoleState } from "./state.js";
import { drawWaveform, renderAnnotationLog, renderQuality, renderStatusLine } from "./render.js";

const ANNOTATION_LABELS = [
  "eyes-open",
  "eyes-closed",
  "clench-start",
  "clench-end",
  "pursuit-left",
  "pursuit-right",
];

const DEFAULT_SCENARIO = {
  scenario: "eeg",
  seed: 1,
  protocol: {
    epochs: [{ label: "eyes-open", start_s: 0, duration_s: 600 }],
    seed: 1,
  },
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup(): void {
  const state = new ConsoleState();
  const canvas = el<HTMLCanvasElement>("waveform");
  const statusLine = el<HTMLElement>("status-line");
  const quality = el<HTMLElement>("quality");
  const annotationList = el<HTMLElement>("annotations");
  const errorBox = el<HTMLElement>("error");
  const urlInput = el<HTMLInputElement>("url");
  const scenarioBox = el<HTMLTextAreaElement>("scenario");
  const drlToggle = el<HTMLInputElement>("drl");
  const buttons = {
    connect: el<HTMLButtonElement>("connect"),
    configure: el<HTMLButtonElement>("configure"),
    start: el<HTMLButtonElement>("start"),
    stop: el<HTMLButtonElement>("stop"),
  };
  const annotateButtons = ANNOTATION_LABELS.map((label) => {
    const b = document.createElement("button");
    b.textContent = label;
    b.onclick = async () => {
      const reply = await client.annotate(label);
      state.applyAnnotateAck(reply as { ok: boolean; t_us?: number; label?: string });
      if (!reply.ok) showError(reply.detail ?? reply.error ?? "annotate failed");
      refresh();
    };
    el<HTMLElement>("annotate-buttons").appendChild(b);
    return b;
  });

  scenarioBox.value = JSON.stringify(DEFAULT_SCENARIO, null, 2);

  function showError(message: string | null): void {
    state.lastError = message;
    errorBox.textContent = message ?? "";
    errorBox.style.display = message ? "block" : "none";
  }

  function refresh(): void {
    renderStatusLine(statusLine, state);
    renderQuality(quality, state);
    renderAnnotationLog(annotationList, state);
    const connected = state.connection === "connected";
    buttons.configure.disabled = !connected || state.serviceState !== "stopped";
    buttons.start.disabled = !connected || state.serviceState !== "stopped";
    buttons.stop.disabled = !connected || state.serviceState !== "running";
    drlToggle.disabled = !connected;
    for (const b of annotateButtons) b.disabled = !state.canAnnotate;
    if (state.drlEnabled !== null) drlToggle.checked = state.drlEnabled;
  }

  const client = new ConsoleClient({
    onStatus: (status) => {
      state.applyStatus(status);
      refresh();
    },
    onFrame: (frame) => {
      state.waveform.push(frame);
    },
    onClose: () => {
      state.connection = "disconnected";
      showError("connection lost; reconnect to continue");
      refresh();
    },
  });

  buttons.connect.onclick = async () => {
    showError(null);
    state.connection = "connecting";
    refresh();
    try {
      await client.connect(urlInput.value);
      state.connection = "connected";
      client.requestStatus();
    } catch (err) {
      state.connection = "disconnected";
      showError((err as Error).message);
    }
    refresh();
  };

  buttons.configure.onclick = async () => {
    let scenario: unknown;
    try {
      scenario = JSON.parse(scenarioBox.value);
    } catch (err) {
      showError(`scenario is not valid JSON: ${(err as Error).message}`);
      return;
    }
    const reply = await client.configure(scenario, "realtime");
    showError(reply.ok ? null : `${reply.error}: ${reply.detail ?? ""}`);
    refresh();
  };

  buttons.start.onclick = async () => {
    const reply = await client.start();
    showError(reply.ok ? null : `${reply.error}: ${reply.detail ?? ""}`);
    refresh();
  };

  buttons.stop.onclick = async () => {
    const reply = await client.stop();
    showError(reply.ok ? null : `${reply.error}: ${reply.detail ?? ""}`);
    refresh();
  };

  drlToggle.onchange = async () => {
    const reply = await client.setDrl(drlToggle.checked);
    if (!reply.ok) showError(`${reply.error}: ${reply.detail ?? ""}`);
    refresh();
  };

  const defaultPort = 8843;
  urlInput.value = `ws://127.0.0.1:${defaultPort}/ws`;

  // render loop decoupled from message receipt
  setInterval(() => drawWaveform(canvas, state.waveform), 100);
  refresh();
}

setup();
