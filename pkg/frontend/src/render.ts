// Canvas waveform drawing and the quality badge.

import { ConsoleState, WaveformBuffer } from "./state.js";

const CHANNEL_COLORS = ["#0b6e99", "#b35c00", "#5b8c2a", "#8a3ffc"];

export function drawWaveform(canvas: HTMLCanvasElement, buffer: WaveformBuffer): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#fafafa";
  ctx.fillRect(0, 0, width, height);
  if (buffer.length < 2) return;

  const t1 = buffer.newestUs;
  const t0 = t1 - buffer.windowS * 1e6;
  let vMin = Infinity;
  let vMax = -Infinity;
  const series = [];
  for (let ch = 0; ch < buffer.nChannels; ch++) {
    const s = buffer.series(ch);
    series.push(s);
    for (const v of s.v) {
      if (v < vMin) vMin = v;
      if (v > vMax) vMax = v;
    }
  }
  const pad = Math.max(1e-3, 0.1 * (vMax - vMin));
  vMin -= pad;
  vMax += pad;

  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  const yZero = height - ((0 - vMin) / (vMax - vMin)) * height;
  ctx.moveTo(0, yZero);
  ctx.lineTo(width, yZero);
  ctx.stroke();

  series.forEach((s, ch) => {
    ctx.strokeStyle = CHANNEL_COLORS[ch % CHANNEL_COLORS.length];
    ctx.lineWidth = 1;
    ctx.beginPath();
    for (let i = 0; i < s.t.length; i++) {
      const x = ((s.t[i] - t0) / (t1 - t0)) * width;
      const y = height - ((s.v[i] - vMin) / (vMax - vMin)) * height;
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  });

  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText(`${vMax.toFixed(1)} uV`, 4, 12);
  ctx.fillText(`${vMin.toFixed(1)} uV`, 4, height - 4);
}

export function renderQuality(el: HTMLElement, state: ConsoleState): void {
  const level = state.qualityLevel;
  const value = state.quality;
  el.dataset.level = level;
  el.textContent =
    value === null ? "quality: --" : `quality: ${value.toFixed(2)} uV 45-55 Hz (${level})`;
}

export function renderStatusLine(el: HTMLElement, state: ConsoleState): void {
  const bits = [
    state.connection,
    state.serviceState,
    state.sessionId ? `session ${state.sessionId}` : null,
    state.sps ? `${state.sps} SPS` : null,
    state.drlEnabled === null ? null : `DRL ${state.drlEnabled ? "on" : "off"}`,
    `${state.framesEmitted} frames`,
  ];
  el.textContent = bits.filter(Boolean).join(" | ");
}

export function renderAnnotationLog(el: HTMLElement, state: ConsoleState): void {
  el.innerHTML = "";
  for (const entry of state.annotationLog.slice(-50)) {
    const li = document.createElement("li");
    li.textContent = `${(entry.tUs / 1e6).toFixed(3)} s  ${entry.label}`;
    el.appendChild(li);
  }
}
