"""Durable session recording: raw int32 sample store, JSON metadata, and
JSONL annotations, with integrity checking and CSV export.

Layout of a session directory:

    meta.json         metadata + stream bookkeeping (gaps, counts)
    raw.bin           channel-interleaved little-endian int32 codes
    annotations.jsonl one {"t_us", "label", "source"} object per line
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .afe import AfeConfig, Montage, lsb_volts
from .protocol import Frame, TRANSPORT_SPS_LIMIT, TransportLimitError

TRANSPORTS = ("serial", "ble", "simulated")
ANNOTATION_SOURCES = ("operator", "protocol-script", "service")

# simulated sessions are bounded by the serial-class ceiling
SPS_LIMITS = dict(TRANSPORT_SPS_LIMIT, simulated=TRANSPORT_SPS_LIMIT["serial"])


class SessionError(ValueError):
    pass


class SessionExistsError(SessionError):
    pass


@dataclass(frozen=True)
class Annotation:
    t_us: int
    label: str
    source: str = "operator"

    def __post_init__(self):
        if self.t_us < 0:
            raise ValueError("annotation time must be non-negative")
        if not self.label:
            raise ValueError("annotation label must be non-empty")
        if self.source not in ANNOTATION_SOURCES:
            raise ValueError(f"unknown annotation source {self.source!r}")


@dataclass(frozen=True)
class SessionMeta:
    session_id: str
    afe: AfeConfig
    montage: Montage
    transport: str
    created_at: str = ""
    scenario: dict | None = None

    def __post_init__(self):
        if not self.session_id:
            raise SessionError("session_id must be non-empty")
        if self.transport not in TRANSPORTS:
            raise SessionError(f"unknown transport {self.transport!r}")
        limit = SPS_LIMITS[self.transport]
        if self.afe.sps > limit:
            raise TransportLimitError(
                f"{self.afe.sps:g} SPS exceeds the {self.transport} limit of {limit:g} SPS"
            )
        if not self.created_at:
            object.__setattr__(
                self, "created_at", datetime.now(timezone.utc).isoformat(timespec="seconds")
            )

    @property
    def sps(self) -> float:
        return self.afe.sps

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at": self.created_at,
            "transport": self.transport,
            "sps": self.afe.sps,
            "afe": self.afe.to_dict(),
            "montage": self.montage.to_dict(),
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionMeta":
        return cls(
            session_id=d["session_id"],
            afe=AfeConfig.from_dict(d["afe"]),
            montage=Montage.from_dict(d["montage"]),
            transport=d["transport"],
            created_at=d.get("created_at", ""),
            scenario=d.get("scenario"),
        )


def _fresh_stream_state() -> dict:
    return {
        "last_seq": None,
        "last_sample_count": 0,
        "first_timestamp_us": None,
        "span_us": 0,
        "ticks_written": 0,
        "gaps": [],
    }


class Session:
    """One recording on disk. Single writer; appends are frame-atomic."""

    def __init__(self, path: Path, meta: SessionMeta, stream: dict):
        self.path = Path(path)
        self.meta = meta
        self._stream = stream

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def create(cls, path, meta: SessionMeta) -> "Session":
        path = Path(path)
        if path.exists():
            raise SessionExistsError(f"session path {path} already exists")
        path.mkdir(parents=True)
        session = cls(path, meta, _fresh_stream_state())
        session._write_meta()
        (path / "raw.bin").touch()
        (path / "annotations.jsonl").touch()
        return session

    @classmethod
    def open(cls, path) -> "Session":
        path = Path(path)
        meta_file = path / "meta.json"
        if not meta_file.exists():
            raise SessionError(f"no session at {path}")
        doc = json.loads(meta_file.read_text())
        return cls(path, SessionMeta.from_dict(doc), doc.get("stream", _fresh_stream_state()))

    def _write_meta(self):
        doc = self.meta.to_dict()
        doc["stream"] = self._stream
        tmp = self.path / "meta.json.tmp"
        tmp.write_text(json.dumps(doc, indent=2))
        os.replace(tmp, self.path / "meta.json")

    # -- sample store -------------------------------------------------------

    @property
    def n_channels(self) -> int:
        return len(self.meta.montage.measurable)

    @property
    def sps(self) -> float:
        return self.meta.sps

    @property
    def n_ticks(self) -> int:
        return (self.path / "raw.bin").stat().st_size // (4 * self.n_channels)

    @property
    def gaps(self) -> list:
        return list(self._stream["gaps"])

    def append_frames(self, frames) -> int:
        """Append decoded frames; returns the number of sample ticks written.

        Sequence gaps are recorded in the metadata, never zero-filled.
        """
        frames = list(frames)
        if not frames:
            return 0
        st = self._stream
        chunks = []
        ticks = 0
        for frame in frames:
            if not isinstance(frame, Frame):
                raise SessionError("append_frames expects decoded Frame objects")
            if frame.n_channels != self.n_channels:
                raise SessionError(
                    f"frame carries {frame.n_channels} channels, session has {self.n_channels}"
                )
            if st["last_seq"] is not None:
                expected = (st["last_seq"] + 1) & 0xFFFF
                if frame.seq != expected:
                    lost = (frame.seq - expected) & 0xFFFF
                    st["gaps"].append(
                        {
                            "expected_seq": expected,
                            "received_seq": frame.seq,
                            "lost_frames": lost,
                            "lost_samples": lost * st["last_sample_count"],
                        }
                    )
            if st["first_timestamp_us"] is None:
                st["first_timestamp_us"] = int(frame.timestamp_us)
                st["span_us"] = 0
                st["_last_ts"] = int(frame.timestamp_us)
            else:
                delta = (int(frame.timestamp_us) - st["_last_ts"]) & 0xFFFFFFFF
                st["span_us"] += delta
                st["_last_ts"] = int(frame.timestamp_us)
            st["last_seq"] = frame.seq
            st["last_sample_count"] = frame.sample_count
            chunks.append(np.ascontiguousarray(frame.samples, dtype="<i4").tobytes())
            ticks += frame.sample_count
        with open(self.path / "raw.bin", "ab") as f:
            f.write(b"".join(chunks))
        st["ticks_written"] += ticks
        self._write_meta()
        return ticks

    def read_range(self, start_tick: int = 0, end_tick: int | None = None) -> np.ndarray:
        """Codes in [start_tick, end_tick), shape (ticks, n_channels)."""
        total = self.n_ticks
        if end_tick is None:
            end_tick = total
        if not 0 <= start_tick <= end_tick <= total:
            raise SessionError(
                f"range [{start_tick}, {end_tick}) outside session of {total} ticks"
            )
        n = end_tick - start_tick
        with open(self.path / "raw.bin", "rb") as f:
            f.seek(start_tick * 4 * self.n_channels)
            data = np.fromfile(f, dtype="<i4", count=n * self.n_channels)
        return data.reshape(n, self.n_channels).astype(np.int32)

    def to_uv(self, codes) -> np.ndarray:
        """Convert stored codes to input-referred microvolts."""
        return np.asarray(codes, dtype=float) * (lsb_volts(self.meta.afe) * 1e6)

    def tick_times_us(self, start_tick: int, end_tick: int) -> np.ndarray:
        first = self._stream["first_timestamp_us"] or 0
        return first + np.arange(start_tick, end_tick) * (1e6 / self.sps)

    # -- annotations --------------------------------------------------------

    def annotate(self, t_us: int, label: str, source: str = "operator") -> Annotation:
        ann = Annotation(int(t_us), label, source)
        with open(self.path / "annotations.jsonl", "a") as f:
            f.write(json.dumps({"t_us": ann.t_us, "label": ann.label, "source": ann.source}))
            f.write("\n")
        return ann

    def annotations(self) -> list[Annotation]:
        out = []
        for line in (self.path / "annotations.jsonl").read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                out.append(Annotation(d["t_us"], d["label"], d.get("source", "operator")))
        return out

    # -- integrity & export -------------------------------------------------

    def integrity_check(self) -> list[str]:
        """Returns a list of violations; empty means the store is coherent."""
        violations = []
        size = (self.path / "raw.bin").stat().st_size
        stride = 4 * self.n_channels
        if size % stride != 0:
            violations.append(
                f"alignment: raw.bin size {size} is not a multiple of {stride} bytes"
            )
        st = self._stream
        ticks = size // stride
        if st["first_timestamp_us"] is not None:
            lost = sum(g["lost_samples"] for g in st["gaps"])
            expected = st["span_us"] / 1e6 * self.sps + st["last_sample_count"]
            if abs(ticks + lost - expected) > 2:
                violations.append(
                    f"continuity: {ticks} stored + {lost} lost ticks vs "
                    f"{expected:.0f} expected from the timestamp span"
                )
        times = [a.t_us for a in self.annotations()]
        if any(b < a for a, b in zip(times, times[1:])):
            violations.append("annotation-order: annotations are not sorted by time")
        return violations

    def export_csv(self, out, start_tick: int = 0, end_tick: int | None = None):
        """Write `t_us,ch1_uV,...` rows; values are input-referred microvolts.

        The scaling is the exact inverse of the quantizer for in-range codes:
        round(uV / (lsb * 1e6)) recovers the stored code.
        """
        codes = self.read_range(start_tick, end_tick)
        end = start_tick + codes.shape[0]
        times = self.tick_times_us(start_tick, end)
        uv = self.to_uv(codes)
        close = False
        if isinstance(out, (str, Path)):
            out = open(out, "w", newline="")
            close = True
        try:
            header = ",".join(["t_us"] + [f"ch{i + 1}_uV" for i in range(self.n_channels)])
            out.write(header + "\n")
            for i in range(codes.shape[0]):
                row = [f"{times[i]:.3f}"] + [f"{v:.10g}" for v in uv[i]]
                out.write(",".join(row) + "\n")
        finally:
            if close:
                out.close()
