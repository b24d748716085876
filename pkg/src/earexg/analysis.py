"""Reproduces the three validation experiments from a recorded session:
alpha blocking (eyes open vs closed), jaw-clench envelope contrast, and
smooth-pursuit deflection detection, each with a pass/fail gate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

ALPHA_BAND = (8.0, 12.0)
ALPHA_PASS_RATIO = 1.5
CLENCH_PASS_RATIO = 3.0
PURSUIT_PASS_ACCURACY = 0.9
MATCH_WINDOW_S = 0.25

WELCH_WINDOW_S = 2.0
WELCH_OVERLAP = 0.5
# filter warm-up excluded from epoch metrics
WARMUP_S = 2.0
EMG_BAND = (20.0, 150.0)
EMG_WARMUP_S = 0.5
ENVELOPE_WINDOW_S = 0.25
EOG_THRESHOLD_FRACTION = 0.3
EOG_MIN_DURATION_S = 0.15

EEG_CONDITIONS = ("eyes-open", "eyes-closed")
EMG_CONDITIONS = ("rest", "clench")
PURSUIT_LABELS = {"pursuit-left": 1, "pursuit-right": -1}
SERVICE_LABELS = {"session-start", "session-stop"}


class MissingConditionError(ValueError):
    """The session does not contain the epochs/events the analysis needs."""


@dataclass(frozen=True)
class EpochMetrics:
    """Per-condition metrics; at least one field besides the label is set."""

    label: str
    start_s: float = 0.0
    end_s: float = 0.0
    alpha_power_uv2: float | None = None
    total_power_uv2: float | None = None
    rms_uv: float | None = None
    events: tuple | None = None

    def __post_init__(self):
        if (self.alpha_power_uv2 is None and self.total_power_uv2 is None
                and self.rms_uv is None and self.events is None):
            raise ValueError("EpochMetrics needs at least one metric")
        for v in (self.alpha_power_uv2, self.total_power_uv2):
            if v is not None and v < 0:
                raise ValueError("powers must be non-negative")

    def to_dict(self) -> dict:
        d = {"label": self.label, "start_s": self.start_s, "end_s": self.end_s}
        for k in ("alpha_power_uv2", "total_power_uv2", "rms_uv"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.events is not None:
            d["events"] = [
                {"onset_s": e.onset_s, "direction": e.direction, "amplitude_uv": e.amplitude_uv}
                for e in self.events
            ]
        return d


@dataclass(frozen=True)
class EpochSlice:
    label: str
    start_tick: int
    end_tick: int


def epoch_by_annotation(session, label_set) -> list[EpochSlice]:
    """Cut the session into labeled epochs: each annotation opens an epoch
    that the next annotation (any label) or end-of-session closes.

    Annotations with labels outside label_set are listed in the log but do
    not fail the call; zero-length epochs are rejected with a warning.
    """
    label_set = set(label_set)
    anns = sorted(session.annotations(), key=lambda a: a.t_us)
    total = session.n_ticks
    sps = session.sps
    unknown = set()
    epochs = []
    for i, ann in enumerate(anns):
        t_end_us = anns[i + 1].t_us if i + 1 < len(anns) else total / sps * 1e6
        if ann.label not in label_set:
            if ann.label not in SERVICE_LABELS:
                unknown.add(ann.label)
            continue
        start = min(int(round(ann.t_us * sps / 1e6)), total)
        end = min(int(round(t_end_us * sps / 1e6)), total)
        if end <= start:
            log.warning("zero-length epoch %r at %d us rejected", ann.label, ann.t_us)
            continue
        epochs.append(EpochSlice(ann.label, start, end))
    if unknown:
        log.warning("annotations with labels outside the requested set: %s", sorted(unknown))
    return epochs


def _channel_uv(session) -> np.ndarray:
    codes = session.read_range()
    return session.to_uv(codes[:, 0])


def _weighted_mean(pairs) -> float:
    values, weights = zip(*pairs)
    return float(np.average(values, weights=weights))


@dataclass(frozen=True)
class AlphaContrast:
    open_uv2: float
    closed_uv2: float
    ratio: float
    passed: bool
    epochs: tuple[EpochMetrics, ...] = ()

    def to_dict(self) -> dict:
        return {
            "analysis": "alpha",
            "open_alpha_uv2": self.open_uv2,
            "closed_alpha_uv2": self.closed_uv2,
            "ratio": self.ratio,
            "pass_threshold": ALPHA_PASS_RATIO,
            "passed": self.passed,
            "epochs": [e.to_dict() for e in self.epochs],
        }


def alpha_contrast(session) -> AlphaContrast:
    """Closed/open alpha band power ratio; PASS above 1.5."""
    epochs = epoch_by_annotation(session, EEG_CONDITIONS)
    uv = _channel_uv(session)
    sps = session.sps
    warmup = int(WARMUP_S * sps)
    window = int(WELCH_WINDOW_S * sps)
    per_label = {lbl: [] for lbl in EEG_CONDITIONS}
    metrics = []
    for ep in epochs:
        start = max(ep.start_tick, warmup)
        seg = uv[start:ep.end_tick]
        if len(seg) < window:
            log.warning("epoch %r too short for a %gs window, skipped", ep.label, WELCH_WINDOW_S)
            continue
        psd = dsp.welch_psd(seg, sps, WELCH_WINDOW_S, WELCH_OVERLAP)
        alpha = dsp.band_power(psd, *ALPHA_BAND)
        per_label[ep.label].append((alpha, len(seg)))
        metrics.append(
            EpochMetrics(ep.label, ep.start_tick / sps, ep.end_tick / sps,
                         alpha_power_uv2=alpha, total_power_uv2=psd.total_power)
        )
    for lbl in EEG_CONDITIONS:
        if not per_label[lbl]:
            raise MissingConditionError(f"no usable {lbl!r} epochs in session")
    open_p = _weighted_mean(per_label["eyes-open"])
    closed_p = _weighted_mean(per_label["eyes-closed"])
    ratio = closed_p / open_p if open_p > 0 else float("inf")
    return AlphaContrast(open_p, closed_p, ratio, ratio > ALPHA_PASS_RATIO, tuple(metrics))


@dataclass(frozen=True)
class ClenchContrast:
    rest_rms_uv: float
    clench_rms_uv: float
    ratio: float
    passed: bool
    epochs: tuple[EpochMetrics, ...] = ()

    def to_dict(self) -> dict:
        return {
            "analysis": "emg",
            "rest_rms_uv": self.rest_rms_uv,
            "clench_rms_uv": self.clench_rms_uv,
            "ratio": self.ratio,
            "pass_threshold": CLENCH_PASS_RATIO,
            "passed": self.passed,
            "epochs": [e.to_dict() for e in self.epochs],
        }


def clench_contrast(session) -> ClenchContrast:
    """Clench/rest mean RMS-envelope ratio in the EMG band; PASS above 3."""
    epochs = epoch_by_annotation(session, EMG_CONDITIONS)
    uv = _channel_uv(session)
    sps = session.sps
    hi = min(EMG_BAND[1], 0.49 * sps)
    bp = dsp.design_bandpass(EMG_BAND[0], hi, sps)
    skip = int(EMG_WARMUP_S * sps)
    win = int(ENVELOPE_WINDOW_S * sps)
    per_label = {lbl: [] for lbl in EMG_CONDITIONS}
    metrics = []
    for ep in epochs:
        seg = uv[ep.start_tick:ep.end_tick]
        if len(seg) < skip + win + 1:
            log.warning("epoch %r too short for envelope analysis, skipped", ep.label)
            continue
        banded = dsp.filter_series(bp, seg)[skip:]
        env = dsp.rms_envelope(banded, ENVELOPE_WINDOW_S, sps)
        level = float(np.mean(env))
        per_label[ep.label].append((level, len(seg)))
        metrics.append(
            EpochMetrics(ep.label, ep.start_tick / sps, ep.end_tick / sps, rms_uv=level)
        )
    for lbl in EMG_CONDITIONS:
        if not per_label[lbl]:
            raise MissingConditionError(f"no usable {lbl!r} epochs in session")
    rest = _weighted_mean(per_label["rest"])
    clench = _weighted_mean(per_label["clench"])
    ratio = clench / rest if rest > 0 else float("inf")
    return ClenchContrast(rest, clench, ratio, ratio > CLENCH_PASS_RATIO, tuple(metrics))


@dataclass(frozen=True)
class PursuitReport:
    n_detected: int
    n_truth: int
    direction_accuracy: float
    mean_amplitude_left_uv: float
    mean_amplitude_right_uv: float
    opposite_signs: bool
    passed: bool
    threshold_uv: float
    events: tuple = ()

    def to_dict(self) -> dict:
        return {
            "analysis": "eog",
            "n_detected": self.n_detected,
            "n_truth": self.n_truth,
            "direction_accuracy": self.direction_accuracy,
            "mean_amplitude_left_uv": self.mean_amplitude_left_uv,
            "mean_amplitude_right_uv": self.mean_amplitude_right_uv,
            "opposite_signs": self.opposite_signs,
            "pass_threshold": PURSUIT_PASS_ACCURACY,
            "passed": self.passed,
            "threshold_uv": self.threshold_uv,
            "events": [
                {"onset_s": e.onset_s, "direction": e.direction, "amplitude_uv": e.amplitude_uv}
                for e in self.events
            ],
        }


def _truth_from_annotations(session) -> list[tuple[float, int]]:
    truth = []
    for ann in session.annotations():
        if ann.label in PURSUIT_LABELS:
            truth.append((ann.t_us / 1e6, PURSUIT_LABELS[ann.label]))
    return truth


def pursuit_report(session, truth=None, threshold_uv: float | None = None) -> PursuitReport:
    """Match detected deflections to ground truth within +-0.25 s.

    truth is a list of (onset_s, sign) pairs or DeflectionEvents; when
    omitted it comes from the session's pursuit-left/right annotations
    (leftward gaze is the positive direction). Accuracy is the fraction of
    truth events matched by a detection of the correct sign.
    """
    if truth is None:
        truth = _truth_from_annotations(session)
    truth = [(ev.onset_s, ev.sign) if isinstance(ev, dsp.DeflectionEvent) else tuple(ev)
             for ev in truth]
    uv = _channel_uv(session)
    sps = session.sps
    d = uv - np.median(uv)
    if threshold_uv is None:
        threshold_uv = EOG_THRESHOLD_FRACTION * float(np.percentile(np.abs(d), 99))
    events = []
    if threshold_uv > 0:
        events = dsp.detect_deflections(uv, sps, threshold_uv, EOG_MIN_DURATION_S)
    if not truth or not events:
        raise MissingConditionError("no pursuit events in session and/or ground truth")

    used = set()
    correct = 0
    side_amps = {1: [], -1: []}
    for onset_s, sign in sorted(truth):
        best = None
        for j, ev in enumerate(events):
            if j in used or abs(ev.onset_s - onset_s) > MATCH_WINDOW_S:
                continue
            if best is None or abs(ev.onset_s - onset_s) < abs(events[best].onset_s - onset_s):
                best = j
        if best is None:
            continue
        used.add(best)
        ev = events[best]
        side_amps[sign].append(ev.amplitude_uv)
        if ev.sign == sign:
            correct += 1
    accuracy = correct / len(truth)
    mean_left = float(np.mean(side_amps[1])) if side_amps[1] else float("nan")
    mean_right = float(np.mean(side_amps[-1])) if side_amps[-1] else float("nan")
    opposite = (np.isfinite(mean_left) and np.isfinite(mean_right)
                and mean_left * mean_right < 0)
    return PursuitReport(
        n_detected=len(events),
        n_truth=len(truth),
        direction_accuracy=accuracy,
        mean_amplitude_left_uv=mean_left,
        mean_amplitude_right_uv=mean_right,
        opposite_signs=bool(opposite),
        passed=accuracy >= PURSUIT_PASS_ACCURACY and bool(opposite),
        threshold_uv=float(threshold_uv),
        events=tuple(events),
    )
