"""Plumbing between the simulator, the wire protocol, and the session
store: batch simulation into a recorded session, and session replay."""

from __future__ import annotations

import time
from pathlib import Path

from .protocol import (
    FLAG_BLE,
    FLAG_DRL,
    Frame,
    decode_frame,
    encode_frame,
    plan_packetization,
)
from .session import Session, SessionMeta
from .sim import AcquisitionSimulator, ScenarioConfig

# generation block size, in frames, for batch simulation
BLOCK_FRAMES = 64


def transport_class(transport: str) -> str:
    """Map a session transport to the wire-protocol class used to frame it."""
    return "ble" if transport == "ble" else "serial"


def frame_stream(sim: AcquisitionSimulator, channel_mask: int, sample_count: int,
                 transport: str = "simulated", block_frames: int = BLOCK_FRAMES):
    """Yield encoded frames for the whole scenario."""
    seq = 0
    base_flags = FLAG_BLE if transport == "ble" else 0
    while True:
        ts, codes = sim.next_chunk(sample_count * block_frames)
        if codes.shape[0] == 0:
            return
        flags = base_flags | (FLAG_DRL if sim.drl_enabled else 0)
        for off in range(0, codes.shape[0], sample_count):
            rows = codes[off:off + sample_count]
            frame = Frame(
                seq=seq,
                timestamp_us=int(round(ts[off])),
                channel_mask=channel_mask,
                samples=rows,
                flags=flags,
            )
            yield encode_frame(frame)
            seq = (seq + 1) & 0xFFFF


def simulate_to_session(cfg: ScenarioConfig, path, session_id: str | None = None,
                        transport: str = "simulated") -> Session:
    """Run a scenario through the full simulate -> frame -> decode -> record
    chain and leave a complete session directory at path."""
    path = Path(path)
    sim = AcquisitionSimulator(cfg)
    n_ch = len(cfg.montage.measurable)
    sample_count = plan_packetization(cfg.afe.sps, n_ch, transport_class(transport))
    meta = SessionMeta(
        session_id=session_id or path.name,
        afe=cfg.afe,
        montage=cfg.montage,
        transport=transport,
        scenario=cfg.to_dict(),
    )
    session = Session.create(path, meta)
    batch = []
    for raw in frame_stream(sim, cfg.montage.channel_mask, sample_count, transport):
        batch.append(decode_frame(raw))
        if len(batch) >= BLOCK_FRAMES:
            session.append_frames(batch)
            batch = []
    session.append_frames(batch)
    for t_us, label in sim.annotations():
        session.annotate(t_us, label, source="protocol-script")
    return session


def replay_frames(session: Session, fast: bool = True):
    """Re-frame a stored session and yield encoded frames, paced in real
    time unless fast is set."""
    sps = session.sps
    n_ch = session.n_channels
    sample_count = plan_packetization(sps, n_ch, transport_class(session.meta.transport))
    mask = session.meta.montage.channel_mask
    base_flags = FLAG_BLE if session.meta.transport == "ble" else 0
    drl_flag = FLAG_DRL if session.meta.afe.drl_enabled else 0
    total = session.n_ticks
    seq = 0
    start_wall = time.perf_counter()
    for tick in range(0, total, sample_count):
        rows = session.read_range(tick, min(tick + sample_count, total))
        frame = Frame(
            seq=seq,
            timestamp_us=int(round(tick * 1e6 / sps)),
            channel_mask=mask,
            samples=rows,
            flags=base_flags | drl_flag,
        )
        if not fast:
            deadline = start_wall + tick / sps
            delay = deadline - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        yield encode_frame(frame)
        seq = (seq + 1) & 0xFFFF


def rerecord(session: Session, path, session_id: str | None = None,
             fast: bool = True) -> Session:
    """Replay a session through encode/decode into a new session directory;
    the loopback is transport-lossless, so the copies' samples are equal."""
    path = Path(path)
    meta = SessionMeta(
        session_id=session_id or path.name,
        afe=session.meta.afe,
        montage=session.meta.montage,
        transport=session.meta.transport,
        scenario=session.meta.scenario,
    )
    copy = Session.create(path, meta)
    batch = []
    for raw in replay_frames(session, fast=fast):
        batch.append(decode_frame(raw))
        if len(batch) >= BLOCK_FRAMES:
            copy.append_frames(batch)
            batch = []
    copy.append_frames(batch)
    for ann in session.annotations():
        copy.annotate(ann.t_us, ann.label, ann.source)
    return copy
