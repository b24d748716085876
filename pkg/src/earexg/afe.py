"""Deterministic model of the analog signal chain: instrumentation
amplifier, driven-right-leg active ground, mid-supply virtual ground, and
24-bit bipolar quantization with built-in powerline rejection.

All operations are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dsp

# Single-resistor gain law: G = 1 + GAIN_NUMERATOR_OHMS / Rg.
GAIN_NUMERATOR_OHMS = 100_000.0

# Max common-mode voltage the in-amp model is valid for.
VCM_LIMIT_V = 5.0

# The built-in decimation filter is modeled as a 50 Hz + 60 Hz notch
# cascade; reported rejection is capped at the part's headline figure and
# guaranteed to be at least the floor at both mains frequencies.
FILTER_REJECTION_CAP_DB = 130.0
FILTER_REJECTION_FLOOR_DB = 80.0
FILTER_NOTCH_Q = 30.0


class MontageError(ValueError):
    """Channel/role assignment violates the board's wiring rules."""


@dataclass(frozen=True)
class AfeConfig:
    """Analog front end parameterization.

    vref is the single supply rail; signals are measured bipolar against
    the virtual ground at vref/2. gain is the in-amp differential gain,
    cmrr_db the common-mode rejection. The DRL active ground attenuates
    body common-mode noise by 1/(1 + drl_loop_gain) when enabled.
    """

    vref: float = 3.3
    bits: int = 24
    gain: float = 50.0
    cmrr_db: float = 120.0
    drl_enabled: bool = True
    drl_loop_gain: float = 99.0
    powerline_hz: float = 50.0
    sps: float = 500.0

    def __post_init__(self):
        if self.vref <= 0:
            raise ValueError(f"vref must be positive, got {self.vref}")
        if not 1 <= self.bits <= 32:
            raise ValueError(f"bits must be in [1, 32], got {self.bits}")
        if self.gain < 1:
            raise ValueError(f"gain must be >= 1, got {self.gain}")
        if self.sps <= 0:
            raise ValueError(f"sps must be positive, got {self.sps}")
        if self.powerline_hz not in (50, 60):
            raise ValueError(f"powerline_hz must be 50 or 60, got {self.powerline_hz}")
        if self.drl_loop_gain < 0:
            raise ValueError("drl_loop_gain must be non-negative")

    @property
    def virtual_ground(self) -> float:
        """Mid-supply reference; always vref/2."""
        return self.vref / 2

    @property
    def adc_step_volts(self) -> float:
        """Quantization step at the ADC input (before referring to gain)."""
        return self.vref / 2**self.bits

    def to_dict(self) -> dict:
        return {
            "vref": self.vref,
            "bits": self.bits,
            "gain": self.gain,
            "cmrr_db": self.cmrr_db,
            "drl_enabled": self.drl_enabled,
            "drl_loop_gain": self.drl_loop_gain,
            "powerline_hz": self.powerline_hz,
            "sps": self.sps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AfeConfig":
        return cls(**d)


ADC_INPUTS = tuple(f"AIN{i}" for i in range(8))
ROLE_VIRTUAL_GROUND = "virtual-ground"
ROLE_INAMP_1 = "inamp-electrode-1"
ROLE_INAMP_2 = "inamp-electrode-2"
ROLE_DIRECT = "direct"
ROLE_UNUSED = "unused"
ROLES = (ROLE_VIRTUAL_GROUND, ROLE_INAMP_1, ROLE_INAMP_2, ROLE_DIRECT, ROLE_UNUSED)
GROUNDS = ("none", "drl", "virtual-ground")
MEASURABLE_ROLES = (ROLE_INAMP_1, ROLE_INAMP_2, ROLE_DIRECT)


@dataclass(frozen=True)
class ChannelAssignment:
    adc_input: str
    role: str

    def __post_init__(self):
        if self.adc_input not in ADC_INPUTS:
            raise MontageError(f"unknown ADC input {self.adc_input!r}")
        if self.role not in ROLES:
            raise MontageError(f"unknown role {self.role!r}")

    @property
    def ain(self) -> int:
        return int(self.adc_input[3])


@dataclass(frozen=True)
class Montage:
    """Electrode-to-ADC assignment.

    Wiring rules: AIN0 is hard-wired to the virtual ground; the two in-amp
    outputs land on AIN1 (electrode 1) and AIN2 (electrode 2) only;
    AIN3..AIN7 are bare ADC inputs (direct or unused).
    """

    channels: tuple[ChannelAssignment, ...]
    reference: str = "right-ear"
    ground: str = "none"

    def __post_init__(self):
        if self.ground not in GROUNDS:
            raise MontageError(f"unknown ground {self.ground!r}")
        seen = set()
        for ch in self.channels:
            if ch.adc_input in seen:
                raise MontageError(f"duplicate assignment for {ch.adc_input}")
            seen.add(ch.adc_input)
        ain0 = [c for c in self.channels if c.ain == 0]
        if not ain0 or ain0[0].role != ROLE_VIRTUAL_GROUND:
            raise MontageError("AIN0 must be present with role virtual-ground")
        for ch in self.channels:
            if ch.role == ROLE_VIRTUAL_GROUND and ch.ain != 0:
                raise MontageError(f"virtual-ground role only on AIN0, not {ch.adc_input}")
            if ch.role == ROLE_INAMP_1 and ch.ain != 1:
                raise MontageError("inamp-electrode-1 is wired to AIN1")
            if ch.role == ROLE_INAMP_2 and ch.ain != 2:
                raise MontageError("inamp-electrode-2 is wired to AIN2")
            if ch.ain >= 3 and ch.role not in (ROLE_DIRECT, ROLE_UNUSED):
                raise MontageError(f"AIN3-AIN7 may only be direct or unused, got {ch.role}")
        if len(self.measurable) > 7:
            raise MontageError("at most 7 measurable channels")

    @property
    def measurable(self) -> tuple[ChannelAssignment, ...]:
        """Channels that produce samples, in AIN order."""
        chans = [c for c in self.channels if c.role in MEASURABLE_ROLES]
        return tuple(sorted(chans, key=lambda c: c.ain))

    @property
    def channel_mask(self) -> int:
        """Wire-protocol channel mask: bit i set means AIN(i+1) present."""
        mask = 0
        for ch in self.measurable:
            mask |= 1 << (ch.ain - 1)
        return mask

    def to_dict(self) -> dict:
        return {
            "channels": [{"adc_input": c.adc_input, "role": c.role} for c in self.channels],
            "reference": self.reference,
            "ground": self.ground,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Montage":
        chans = tuple(ChannelAssignment(c["adc_input"], c["role"]) for c in d["channels"])
        return cls(channels=chans, reference=d.get("reference", "right-ear"),
                   ground=d.get("ground", "none"))

    @classmethod
    def single_ended_study(cls) -> "Montage":
        """The validation-study montage: one in-amp electrode in the left
        ear against a right-ear reference, no ground electrode."""
        return cls(
            channels=(
                ChannelAssignment("AIN0", ROLE_VIRTUAL_GROUND),
                ChannelAssignment("AIN1", ROLE_INAMP_1),
            ),
            reference="right-ear",
            ground="none",
        )


def gain_from_resistor(rg_ohms: float) -> float:
    """In-amp gain set by the single external resistor: 1 + 100k/Rg."""
    if rg_ohms <= 0:
        raise ValueError(f"gain resistor must be positive, got {rg_ohms}")
    return 1.0 + GAIN_NUMERATOR_OHMS / rg_ohms


def lsb_volts(vref, bits: int | None = None, gain: float | None = None) -> float:
    """Minimal input-referred detectable voltage difference: vref/2^bits/gain.

    Accepts either an AfeConfig or the three scalars."""
    if isinstance(vref, AfeConfig):
        cfg = vref
        vref, bits, gain = cfg.vref, cfg.bits, cfg.gain
    return vref / 2**bits / gain


def min_bits(vref: float, gain: float, target: float) -> int:
    """Smallest resolution n such that vref/2^n/gain <= target."""
    if target <= 0:
        raise ValueError(f"target voltage must be positive, got {target}")
    n = 0
    while vref / 2**n / gain > target:
        n += 1
    return n


def inamp_transfer(v_diff, v_cm, cfg: AfeConfig):
    """Rail-to-rail in-amp output for differential and common-mode inputs.

    out = virtual_ground + gain*v_diff + gain*v_cm/10^(cmrr/20), clipped to
    [0, vref]. Valid for |v_cm| < 5 V.
    """
    v_diff = np.asarray(v_diff, dtype=float)
    v_cm = np.asarray(v_cm, dtype=float)
    if np.any(np.abs(v_cm) >= VCM_LIMIT_V):
        raise ValueError(f"common-mode voltage outside validity range (+-{VCM_LIMIT_V} V)")
    cm_gain = cfg.gain / 10 ** (cfg.cmrr_db / 20)
    out = np.clip(cfg.virtual_ground + cfg.gain * v_diff + cm_gain * v_cm, 0.0, cfg.vref)
    return float(out) if out.ndim == 0 else out


def drl_apply(cm_series, cfg: AfeConfig) -> np.ndarray:
    """Closed-loop common-mode attenuation of the driven-right-leg ground.

    When enabled, the sensed common-mode is fed back inverted, leaving a
    residual of 1/(1 + loop_gain); when disabled the series passes through
    and the ground pin just carries the virtual ground.
    """
    x = np.asarray(cm_series, dtype=float)
    if not cfg.drl_enabled:
        return x.copy()
    return x / (1.0 + cfg.drl_loop_gain)


def adc_quantize(v, cfg: AfeConfig):
    """Bipolar quantization against the AIN0 virtual ground.

    code = round((v - vref/2) / (vref/2^bits)), saturating at the signed
    code range instead of erroring.
    """
    lo = -(2 ** (cfg.bits - 1))
    hi = 2 ** (cfg.bits - 1) - 1
    code = np.rint((np.asarray(v, dtype=float) - cfg.virtual_ground) / cfg.adc_step_volts)
    code = np.clip(code, lo, hi)
    if code.ndim == 0:
        return int(code)
    return code.astype(np.int32)


def adc_dequantize(code, cfg: AfeConfig):
    """Inverse affine map of adc_quantize (exact for in-range codes)."""
    v = cfg.virtual_ground + np.asarray(code, dtype=float) * cfg.adc_step_volts
    return float(v) if v.ndim == 0 else v


def code_to_uv(code, cfg: AfeConfig):
    """Convert ADC codes to input-referred microvolts."""
    return np.asarray(code, dtype=float) * (lsb_volts(cfg) * 1e6)


def powerline_filter(cfg: AfeConfig) -> dsp.BiquadCascade | None:
    """The modeled built-in digital filter: notches at 50 and 60 Hz.

    Only notches below Nyquist are included; returns None if neither fits.
    """
    sections = []
    for f0 in (50.0, 60.0):
        if f0 < cfg.sps / 2:
            sections.append(dsp.design_notch(f0, FILTER_NOTCH_Q, cfg.sps))
    return dsp.BiquadCascade(tuple(sections)) if sections else None


def powerline_rejection_db(f: float, cfg: AfeConfig) -> float:
    """Modeled attenuation of the ADC's built-in filter at frequency f.

    At least 80 dB at exactly 50 and 60 Hz, capped at 130 dB, and under
    1 dB anywhere at or below 40 Hz.
    """
    if not 0 < f < cfg.sps / 2:
        raise ValueError(f"frequency {f} Hz outside (0, {cfg.sps / 2}) Hz")
    cascade = powerline_filter(cfg)
    if cascade is None:
        return 0.0
    mag = float(dsp.magnitude_response(cascade, [f], cfg.sps)[0])
    att = -20.0 * math.log10(max(mag, 1e-30))
    return min(att, FILTER_REJECTION_CAP_DB)
