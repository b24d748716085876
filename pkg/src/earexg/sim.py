"""Synthetic physiology generators and the full acquisition chain.

Generates alpha-EEG, jaw-clench EMG, and smooth-pursuit EOG signals for
the three validation protocols, contaminates them with a configurable
noise model, and runs everything through the analog-front-end model to
produce timestamped 24-bit code streams. All output is deterministic for
a fixed seed, whether rendered in one batch or chunk by chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from . import dsp
from .afe import (
    AfeConfig,
    Montage,
    ROLE_DIRECT,
    adc_quantize,
    drl_apply,
    inamp_transfer,
    powerline_filter,
)
from .dsp import DeflectionEvent, StreamingFilter

ALPHA_HZ = 10.0
DRIFT_HZ = 0.1
EEG_LABELS = frozenset({"eyes-open", "eyes-closed"})
EMG_LABELS = frozenset({"rest", "clench"})
SCENARIO_KINDS = ("eeg", "emg", "eog")


class ProtocolLabelError(ValueError):
    """An epoch label is not valid for the requested generator."""


@dataclass(frozen=True)
class Epoch:
    label: str
    start_s: float
    duration_s: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ValueError(f"epoch {self.label!r} duration must be positive")
        if self.start_s < 0:
            raise ValueError("epoch start must be non-negative")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


@dataclass(frozen=True)
class StimulusProtocol:
    """Ordered, non-overlapping labeled epochs plus an RNG seed."""

    epochs: tuple[Epoch, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        for prev, cur in zip(self.epochs, self.epochs[1:]):
            if cur.start_s < prev.end_s:
                raise ValueError(
                    f"epochs must be sorted and non-overlapping: "
                    f"{prev.label!r} ends at {prev.end_s}, {cur.label!r} starts at {cur.start_s}"
                )

    @property
    def duration_s(self) -> float:
        return self.epochs[-1].end_s if self.epochs else 0.0

    @property
    def labels(self) -> frozenset:
        return frozenset(e.label for e in self.epochs)

    def to_dict(self) -> dict:
        return {
            "epochs": [
                {"label": e.label, "start_s": e.start_s, "duration_s": e.duration_s}
                for e in self.epochs
            ],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StimulusProtocol":
        return cls(
            epochs=tuple(Epoch(e["label"], e["start_s"], e["duration_s"]) for e in d["epochs"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class NoiseModel:
    """Contamination applied around the physiological signal.

    powerline_amp_uv is a common-mode mains sine; cm_to_diff_fraction is
    the electrode-impedance imbalance converting common-mode into
    differential signal. Real mains wanders off nominal, so the source
    runs at powerline_hz + powerline_detune_hz, which leaves a realistic
    residual after the ADC's notch.
    """

    powerline_amp_uv: float = 20_000.0
    white_uv_rms: float = 1.0
    drift_uv: float = 5.0
    cm_to_diff_fraction: float = 0.01
    powerline_detune_hz: float = 0.3

    def __post_init__(self):
        if min(self.powerline_amp_uv, self.white_uv_rms, self.drift_uv) < 0:
            raise ValueError("noise amplitudes must be non-negative")
        if not 0 <= self.cm_to_diff_fraction <= 1:
            raise ValueError("cm_to_diff_fraction must be in [0, 1]")

    @classmethod
    def silent(cls) -> "NoiseModel":
        return cls(powerline_amp_uv=0.0, white_uv_rms=0.0, drift_uv=0.0,
                   cm_to_diff_fraction=0.0)

    def to_dict(self) -> dict:
        return {
            "powerline_amp_uv": self.powerline_amp_uv,
            "white_uv_rms": self.white_uv_rms,
            "drift_uv": self.drift_uv,
            "cm_to_diff_fraction": self.cm_to_diff_fraction,
            "powerline_detune_hz": self.powerline_detune_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(**d)


@dataclass(frozen=True)
class PursuitGeometry:
    """Smooth-pursuit task geometry: screen, viewing distance, and sweep."""

    screen_diag_inch: float = 23.0
    resolution_px: tuple[int, int] = (1920, 1080)
    distance_mm: float = 400.0
    sweep_deg: float = 52.8
    sweep_duration_s: float = 0.5
    reps_per_side: int = 15

    def __post_init__(self):
        if min(self.screen_diag_inch, self.distance_mm, self.sweep_deg,
               self.sweep_duration_s) <= 0:
            raise ValueError("geometry dimensions must be positive")
        if min(self.resolution_px) <= 0:
            raise ValueError("resolution must be positive")
        if self.sweep_deg >= 180:
            raise ValueError("sweep angle must be under 180 degrees")
        if self.reps_per_side < 0:
            raise ValueError("reps_per_side must be non-negative")

    @property
    def px_pitch_mm(self) -> float:
        return self.screen_diag_inch * 25.4 / math.hypot(*self.resolution_px)

    def to_dict(self) -> dict:
        return {
            "screen_diag_inch": self.screen_diag_inch,
            "resolution_px": list(self.resolution_px),
            "distance_mm": self.distance_mm,
            "sweep_deg": self.sweep_deg,
            "sweep_duration_s": self.sweep_duration_s,
            "reps_per_side": self.reps_per_side,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PursuitGeometry":
        d = dict(d)
        if "resolution_px" in d:
            d["resolution_px"] = tuple(d["resolution_px"])
        return cls(**d)


def px_to_deg(px_offset: float, geometry: PursuitGeometry) -> float:
    """Visual angle subtended by a pixel offset at the viewing distance.

    Even in the offset: the sign of a gaze excursion is carried separately.
    """
    half_mm = abs(px_offset) * geometry.px_pitch_mm / 2
    return math.degrees(2 * math.atan(half_mm / geometry.distance_mm))


# ---------------------------------------------------------------------------
# streaming building blocks


class _PinkNoise:
    """1/f-ish noise by IIR-filtering white noise (Kellet's economy filter);
    stateful so chunked rendering equals batch rendering."""

    _SECTIONS = (
        ([0.0555179], [1.0, -0.99886]),
        ([0.0750759], [1.0, -0.99332]),
        ([0.1538520], [1.0, -0.96900]),
        ([0.3104856], [1.0, -0.86650]),
        ([0.5329522], [1.0, -0.55000]),
        ([-0.0168980], [1.0, 0.7616]),
        ([0.5362, 0.115926], [1.0]),
    )

    def __init__(self):
        self._zi = [np.zeros(max(len(a), len(b)) - 1) for b, a in self._SECTIONS]

    def process(self, white: np.ndarray) -> np.ndarray:
        if white.size == 0:
            return white.copy()
        out = np.zeros_like(white)
        for k, (b, a) in enumerate(self._SECTIONS):
            if len(a) == 1 and len(b) == 1:
                out += b[0] * white
                continue
            y, self._zi[k] = signal.lfilter(b, a, white, zi=self._zi[k])
            out += y
        return out

    @classmethod
    def unit_gain(cls) -> float:
        """RMS gain for unit-variance white input (cached)."""
        if not hasattr(cls, "_gain"):
            imp = np.zeros(100_000)
            imp[0] = 1.0
            h = cls().process(imp)
            cls._gain = float(np.sqrt(np.sum(h * h)))
        return cls._gain


def _epoch_value_at(t: np.ndarray, protocol: StimulusProtocol, values: dict,
                    default: float) -> np.ndarray:
    """Per-sample lookup of an epoch-dependent value (amplitude, RMS, ...)."""
    out = np.full(t.shape, default, dtype=float)
    for e in protocol.epochs:
        mask = (t >= e.start_s) & (t < e.end_s)
        out[mask] = values[e.label]
    return out


def _check_labels(protocol: StimulusProtocol, allowed: frozenset, kind: str):
    unknown = protocol.labels - allowed
    if unknown:
        raise ProtocolLabelError(f"labels {sorted(unknown)} are not valid for {kind}; "
                                 f"expected a subset of {sorted(allowed)}")


class _AlphaEegSource:
    """10 Hz rhythm whose amplitude follows the eyes-open/closed schedule,
    over a 1/f background."""

    def __init__(self, protocol, sps, rng, a_open_uv=2.0, a_closed_uv=10.0,
                 background_uv_rms=2.0):
        _check_labels(protocol, EEG_LABELS, "eeg")
        self.protocol = protocol
        self.sps = sps
        self._rng = rng
        self._amps = {"eyes-open": a_open_uv, "eyes-closed": a_closed_uv}
        self._bg_scale = background_uv_rms / _PinkNoise.unit_gain()
        self._pink = _PinkNoise()
        self._cursor = 0

    def render(self, n: int) -> np.ndarray:
        idx = np.arange(self._cursor, self._cursor + n)
        self._cursor += n
        t = idx / self.sps
        amp = _epoch_value_at(t, self.protocol, self._amps, default=0.0)
        rhythm = amp * np.sin(2 * np.pi * ALPHA_HZ * t)
        background = self._pink.process(self._rng.standard_normal(n)) * self._bg_scale
        return rhythm + background


class _ClenchEmgSource:
    """Band-limited noise whose RMS steps between rest and clench levels."""

    def __init__(self, protocol, sps, rng, rest_uv_rms=2.0, clench_uv_rms=50.0,
                 band=(20.0, 150.0)):
        _check_labels(protocol, EMG_LABELS, "emg")
        lo, hi = band
        hi = min(hi, 0.49 * sps)  # cap at Nyquist for low-rate transports
        if lo >= hi:
            raise ValueError(f"sample rate {sps} too low for the {band} Hz EMG band")
        self.protocol = protocol
        self.sps = sps
        self._rng = rng
        self._levels = {"rest": rest_uv_rms, "clench": clench_uv_rms}
        self._rest = rest_uv_rms
        cascade = dsp.design_bandpass(lo, hi, sps)
        self._gain = dsp.impulse_noise_gain(cascade)
        self._filter = StreamingFilter(cascade)
        self._cursor = 0

    def render(self, n: int) -> np.ndarray:
        idx = np.arange(self._cursor, self._cursor + n)
        self._cursor += n
        t = idx / self.sps
        unit = self._filter.process(self._rng.standard_normal(n)) / self._gain
        rms = _epoch_value_at(t, self.protocol, self._levels, default=self._rest)
        return unit * rms


class _PursuitEogSource:
    """Alternating left/right pursuit ramps with return to center.

    Each rep: hold at center, ramp to the deflection over the sweep
    duration, hold the plateau, ramp back. Leftward gaze is positive on
    the left-minus-right montage (sign convention).
    """

    def __init__(self, geometry, sps, uv_per_deg=4.0, hold_s=1.0, plateau_s=0.5):
        self.geometry = geometry
        self.sps = sps
        self.amplitude_uv = uv_per_deg * geometry.sweep_deg
        self.hold_s = hold_s
        self.plateau_s = plateau_s
        self.cycle_s = hold_s + 2 * geometry.sweep_duration_s + plateau_s
        self.n_cycles = 2 * geometry.reps_per_side
        self.duration_s = self.n_cycles * self.cycle_s + hold_s
        self._cursor = 0

    @property
    def events(self) -> list[DeflectionEvent]:
        out = []
        for k in range(self.n_cycles):
            sign = 1 if k % 2 == 0 else -1  # left first, then alternate
            out.append(
                DeflectionEvent(
                    onset_s=k * self.cycle_s + self.hold_s,
                    direction="positive" if sign > 0 else "negative",
                    amplitude_uv=sign * self.amplitude_uv,
                )
            )
        return out

    def render(self, n: int) -> np.ndarray:
        idx = np.arange(self._cursor, self._cursor + n)
        self._cursor += n
        t = idx / self.sps
        out = np.zeros(n)
        active = t < self.n_cycles * self.cycle_s
        if not np.any(active):
            return out
        ta = t[active]
        cyc = np.floor(ta / self.cycle_s)
        tau = ta - cyc * self.cycle_s
        sign = np.where(cyc % 2 == 0, 1.0, -1.0)
        sweep = self.geometry.sweep_duration_s
        up_end = self.hold_s + sweep
        plateau_end = up_end + self.plateau_s
        down_end = plateau_end + sweep
        shape = np.zeros_like(tau)
        rising = (tau >= self.hold_s) & (tau < up_end)
        shape[rising] = (tau[rising] - self.hold_s) / sweep
        shape[(tau >= up_end) & (tau < plateau_end)] = 1.0
        falling = (tau >= plateau_end) & (tau < down_end)
        shape[falling] = 1.0 - (tau[falling] - plateau_end) / sweep
        out[active] = sign * self.amplitude_uv * shape
        return out


# ---------------------------------------------------------------------------
# batch generator operations


def gen_eeg_alpha(protocol: StimulusProtocol, sps: float, a_open_uv: float = 2.0,
                  a_closed_uv: float = 10.0, background_uv_rms: float = 2.0) -> np.ndarray:
    """Differential EEG in microvolts for an eyes-open/eyes-closed protocol."""
    rng = np.random.default_rng(protocol.seed)
    src = _AlphaEegSource(protocol, sps, rng, a_open_uv, a_closed_uv, background_uv_rms)
    return src.render(int(round(protocol.duration_s * sps)))


def gen_emg_clench(protocol: StimulusProtocol, sps: float, rest_uv_rms: float = 2.0,
                   clench_uv_rms: float = 50.0) -> np.ndarray:
    """Differential EMG in microvolts for a rest/clench protocol."""
    rng = np.random.default_rng(protocol.seed)
    src = _ClenchEmgSource(protocol, sps, rng, rest_uv_rms, clench_uv_rms)
    return src.render(int(round(protocol.duration_s * sps)))


def gen_eog_pursuit(geometry: PursuitGeometry, sps: float, uv_per_deg: float = 4.0,
                    hold_s: float = 1.0, plateau_s: float = 0.5):
    """Differential EOG in microvolts plus the ground-truth deflection events."""
    src = _PursuitEogSource(geometry, sps, uv_per_deg, hold_s, plateau_s)
    series = src.render(int(round(src.duration_s * sps)))
    return series, src.events


# ---------------------------------------------------------------------------
# full-chain acquisition


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a simulated session."""

    kind: str
    afe: AfeConfig = field(default_factory=AfeConfig)
    montage: Montage = field(default_factory=Montage.single_ended_study)
    noise: NoiseModel = field(default_factory=NoiseModel)
    protocol: StimulusProtocol | None = None
    geometry: PursuitGeometry | None = None
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind in ("eeg", "emg") and self.protocol is None:
            raise ValueError(f"{self.kind} scenario needs a stimulus protocol")
        if self.kind == "eog" and self.geometry is None:
            raise ValueError("eog scenario needs a pursuit geometry")
        if not self.montage.measurable:
            raise ValueError("montage has no measurable channels")

    def to_dict(self) -> dict:
        d = {
            "scenario": self.kind,
            "seed": self.seed,
            "afe": self.afe.to_dict(),
            "montage": self.montage.to_dict(),
            "noise": self.noise.to_dict(),
            "params": dict(self.params),
        }
        if self.protocol is not None:
            d["protocol"] = self.protocol.to_dict()
        if self.geometry is not None:
            d["geometry"] = self.geometry.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            kind=d["scenario"],
            afe=AfeConfig.from_dict(d["afe"]) if "afe" in d else AfeConfig(),
            montage=Montage.from_dict(d["montage"]) if "montage" in d
            else Montage.single_ended_study(),
            noise=NoiseModel.from_dict(d["noise"]) if "noise" in d else NoiseModel(),
            protocol=StimulusProtocol.from_dict(d["protocol"]) if "protocol" in d else None,
            geometry=PursuitGeometry.from_dict(d["geometry"]) if "geometry" in d else None,
            seed=int(d.get("seed", 0)),
            params=dict(d.get("params", {})),
        )


class AcquisitionSimulator:
    """Runs physiology + noise through the analog chain, chunk by chunk.

    Chunk boundaries never change the output; the DRL switch may be
    toggled live between chunks.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.afe = cfg.afe
        self.sps = cfg.afe.sps
        self._drl_enabled = cfg.afe.drl_enabled
        phys_ss, noise_ss, drift_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        rng = np.random.default_rng(phys_ss)
        p = cfg.params
        if cfg.kind == "eeg":
            self._source = _AlphaEegSource(
                cfg.protocol, self.sps, rng,
                a_open_uv=p.get("a_open_uv", 2.0),
                a_closed_uv=p.get("a_closed_uv", 10.0),
                background_uv_rms=p.get("background_uv_rms", 2.0),
            )
            duration = cfg.protocol.duration_s
            self.truth_events = []
        elif cfg.kind == "emg":
            self._source = _ClenchEmgSource(
                cfg.protocol, self.sps, rng,
                rest_uv_rms=p.get("rest_uv_rms", 2.0),
                clench_uv_rms=p.get("clench_uv_rms", 50.0),
            )
            duration = cfg.protocol.duration_s
            self.truth_events = []
        else:
            self._source = _PursuitEogSource(
                cfg.geometry, self.sps,
                uv_per_deg=p.get("uv_per_deg", 4.0),
                hold_s=p.get("hold_s", 1.0),
                plateau_s=p.get("plateau_s", 0.5),
            )
            duration = self._source.duration_s
            self.truth_events = self._source.events
        self.duration_s = duration
        self.total_samples = int(round(duration * self.sps))
        self._polarity = float(p.get("polarity", 1.0))
        self._noise_rng = np.random.default_rng(noise_ss)
        self._drift_phase = np.random.default_rng(drift_ss).uniform(0.0, 2 * np.pi)
        cascade = powerline_filter(cfg.afe)
        self._adc_filter = StreamingFilter(cascade, settle_dc=True) if cascade else None
        self._inamp_ains = [c.ain for c in cfg.montage.measurable if c.role != ROLE_DIRECT]
        self._all_ains = [c.ain for c in cfg.montage.measurable]
        self._cursor = 0

    @property
    def drl_enabled(self) -> bool:
        return self._drl_enabled

    def set_drl(self, enabled: bool):
        """Live DRL switch; takes effect at the next chunk."""
        self._drl_enabled = bool(enabled)

    @property
    def remaining(self) -> int:
        return self.total_samples - self._cursor

    def next_chunk(self, n: int):
        """Render up to n sample ticks; returns (timestamps_us, codes).

        codes has shape (ticks, n_channels); empty arrays once exhausted.
        """
        n = min(n, self.remaining)
        n_ch = len(self._all_ains)
        if n <= 0:
            return np.empty(0), np.empty((0, n_ch), dtype=np.int32)
        idx = np.arange(self._cursor, self._cursor + n)
        self._cursor += n
        t = idx / self.sps
        cfg_now = replace(self.afe, drl_enabled=self._drl_enabled)
        noise = self.cfg.noise

        phys_uv = self._source.render(n) * self._polarity
        f_mains = self.afe.powerline_hz + noise.powerline_detune_hz
        cm_v = noise.powerline_amp_uv * 1e-6 * np.sin(2 * np.pi * f_mains * t)
        cm_v = drl_apply(cm_v, cfg_now)
        white_uv = self._noise_rng.standard_normal(n) * noise.white_uv_rms
        drift_uv = noise.drift_uv * np.sin(2 * np.pi * DRIFT_HZ * t + self._drift_phase)
        diff_v = (phys_uv + white_uv + drift_uv) * 1e-6 + noise.cm_to_diff_fraction * cm_v

        v_out = inamp_transfer(diff_v, cm_v, cfg_now)
        if self._adc_filter is not None:
            v_out = self._adc_filter.process(v_out)
        inamp_codes = adc_quantize(v_out, cfg_now)

        codes = np.zeros((n, n_ch), dtype=np.int32)
        for col, ain in enumerate(self._all_ains):
            if ain in self._inamp_ains:
                codes[:, col] = inamp_codes
        return idx * (1e6 / self.sps), codes

    def run(self):
        """Render the whole scenario in one call."""
        return self.next_chunk(self.remaining)

    def annotations(self) -> list[tuple[int, str]]:
        """Protocol-script annotations: epoch labels for EEG/EMG, per-sweep
        pursuit-left/pursuit-right markers for EOG."""
        out = []
        if self.cfg.protocol is not None:
            for e in self.cfg.protocol.epochs:
                out.append((int(round(e.start_s * 1e6)), e.label))
        for ev in self.truth_events:
            label = "pursuit-left" if ev.sign > 0 else "pursuit-right"
            out.append((int(round(ev.onset_s * 1e6)), label))
        out.sort(key=lambda a: a[0])
        return out


def simulate_acquisition(cfg: ScenarioConfig):
    """Full-batch convenience wrapper: (timestamps_us, codes) for a scenario."""
    return AcquisitionSimulator(cfg).run()
