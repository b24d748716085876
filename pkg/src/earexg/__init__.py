"""Ear-biopotential acquisition toolkit.

Models the analog front end of an ear-worn ExG device (instrumentation
amplifier, driven-right-leg active ground, 24-bit sigma-delta ADC),
generates synthetic EEG/EMG/EOG recordings, frames them with the binary
stream protocol, records sessions to disk, and analyzes the three
standard protocols (alpha blocking, jaw clench, smooth pursuit).
"""

__version__ = "0.1.0"

from .afe import AfeConfig, Montage, gain_from_resistor, lsb_volts, min_bits

__all__ = [
    "AfeConfig",
    "Montage",
    "gain_from_resistor",
    "lsb_volts",
    "min_bits",
]
