"""Report figures for the analyze commands, mirroring the three-panel
structure of the validation study: spectra for the alpha contrast, the
RMS envelope for the clench contrast, and the deflection trace for
pursuit. Figures are a convenience; the JSON numbers are the artifact."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import dsp
from .analysis import ALPHA_BAND, EEG_CONDITIONS, EMG_BAND, WELCH_OVERLAP, WELCH_WINDOW_S

CONDITION_COLORS = {"eyes-open": "tab:blue", "eyes-closed": "tab:orange",
                    "rest": "tab:blue", "clench": "tab:red"}


def _epoch_series(session, label_set):
    from .analysis import epoch_by_annotation

    uv = session.to_uv(session.read_range()[:, 0])
    return uv, epoch_by_annotation(session, label_set)


def render_alpha(session, result, out_path):
    """Per-condition Welch spectra with the alpha band shaded."""
    uv, epochs = _epoch_series(session, EEG_CONDITIONS)
    sps = session.sps
    fig, ax = plt.subplots(figsize=(8, 4.5))
    seen = set()
    for ep in epochs:
        seg = uv[ep.start_tick:ep.end_tick]
        if len(seg) < int(WELCH_WINDOW_S * sps):
            continue
        psd = dsp.welch_psd(seg, sps, WELCH_WINDOW_S, WELCH_OVERLAP)
        label = ep.label if ep.label not in seen else None
        seen.add(ep.label)
        ax.semilogy(psd.freqs, psd.power, color=CONDITION_COLORS[ep.label], label=label, lw=1.0)
    ax.axvspan(*ALPHA_BAND, color="gray", alpha=0.2, label="alpha band")
    ax.set_xlim(0, 40)
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("PSD [$\\mu V^2$/Hz]")
    ax.set_title(f"alpha contrast: closed/open = {result.ratio:.2f} "
                 f"({'PASS' if result.passed else 'FAIL'})")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return Path(out_path)


def render_emg(session, result, out_path):
    """Band-limited RMS envelope with condition epochs shaded."""
    uv, epochs = _epoch_series(session, ("rest", "clench"))
    sps = session.sps
    bp = dsp.design_bandpass(EMG_BAND[0], min(EMG_BAND[1], 0.49 * sps), sps)
    banded = dsp.filter_series(bp, uv)
    env = dsp.rms_envelope(banded, 0.25, sps)
    t = (np.arange(len(env)) + 0.125 * sps) / sps
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(t, env, color="black", lw=0.8)
    for ep in epochs:
        ax.axvspan(ep.start_tick / sps, ep.end_tick / sps,
                   color=CONDITION_COLORS[ep.label], alpha=0.15)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("RMS envelope [$\\mu V$]")
    ax.set_title(f"clench contrast: clench/rest = {result.ratio:.2f} "
                 f"({'PASS' if result.passed else 'FAIL'})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return Path(out_path)


def render_eog(session, result, out_path):
    """Raw trace with detected deflection onsets marked by direction."""
    uv = session.to_uv(session.read_range()[:, 0])
    sps = session.sps
    t = np.arange(len(uv)) / sps
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.plot(t, uv - np.median(uv), color="black", lw=0.6)
    for ev in result.events:
        color = "tab:green" if ev.direction == "positive" else "tab:purple"
        ax.axvline(ev.onset_s, color=color, alpha=0.5, lw=0.8)
    ax.axhline(result.threshold_uv, color="gray", ls="--", lw=0.7)
    ax.axhline(-result.threshold_uv, color="gray", ls="--", lw=0.7)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("deflection [$\\mu V$]")
    ax.set_title(f"pursuit: {result.n_detected} events, accuracy "
                 f"{result.direction_accuracy:.2f} ({'PASS' if result.passed else 'FAIL'})")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return Path(out_path)
