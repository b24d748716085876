"""Live session control and fan-out.

One simulator source per run; the recorder path is synchronous with the
source (lossless by construction, backpressure through the write), while
UI subscribers get bounded drop-oldest queues. Control messages are JSON
dicts and are fully serialized; at most one state transition is in flight.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dsp
from .afe import lsb_volts
from .pipeline import transport_class
from .protocol import FLAG_BLE, FLAG_DRL, Frame, decode_frame, encode_frame, plan_packetization
from .session import SPS_LIMITS, Session, SessionMeta
from .sim import AcquisitionSimulator, ScenarioConfig

QUALITY_BAND = (45.0, 55.0)
QUALITY_SPAN_S = 2.0
CONTROL_KINDS = ("configure", "start", "stop", "annotate", "status", "set_drl")


@dataclass(frozen=True)
class SubscriberPolicy:
    queue_depth: int = 64
    overflow: str = "drop-oldest"

    def __post_init__(self):
        if self.queue_depth < 1:
            raise ValueError("queue_depth must be at least 1")
        if self.overflow != "drop-oldest":
            raise ValueError(f"unsupported overflow policy {self.overflow!r}")


class Subscriber:
    """Bounded frame queue; overflow drops the oldest queued frame."""

    def __init__(self, sub_id: int, policy: SubscriberPolicy):
        self.id = sub_id
        self.policy = policy
        self.drops = 0
        self.offered = 0
        self._q = queue.Queue(maxsize=policy.queue_depth)

    def offer(self, item: bytes) -> str:
        self.offered += 1
        while True:
            try:
                self._q.put_nowait(item)
                return "queued"
            except queue.Full:
                try:
                    self._q.get_nowait()
                    self.drops += 1
                except queue.Empty:
                    continue
                # retry the put after evicting the oldest
                try:
                    self._q.put_nowait(item)
                    return "dropped-oldest"
                except queue.Full:
                    continue

    def get(self, timeout: float | None = None):
        try:
            return self._q.get(timeout=timeout) if timeout else self._q.get_nowait()
        except queue.Empty:
            return None

    @property
    def queued(self) -> int:
        return self._q.qsize()


class StreamService:
    """stopped -> running -> stopped state machine around a simulator source."""

    def __init__(self, out_root, default_pacing: str = "realtime"):
        self.out_root = Path(out_root)
        self._ctl = threading.Lock()
        self._subs_lock = threading.Lock()
        self.state = "stopped"
        self._cfg: ScenarioConfig | None = None
        self._pacing = default_pacing
        self._transport = "simulated"
        self._session_id: str | None = None
        self._session: Session | None = None
        self._sim: AcquisitionSimulator | None = None
        self._thread: threading.Thread | None = None
        self._stop_evt = threading.Event()
        self._source_done = False
        self._staged_drl: bool | None = None
        self._subs: dict[int, Subscriber] = {}
        self._next_sub_id = 1
        self.frames_emitted = 0
        self.samples_emitted = 0
        self._last_annotation_us = -1
        self._ring: list[np.ndarray] = []
        self._ring_len = 0

    # -- subscriptions -------------------------------------------------------

    def subscribe(self, policy: SubscriberPolicy | None = None) -> Subscriber:
        with self._subs_lock:
            sub = Subscriber(self._next_sub_id, policy or SubscriberPolicy())
            self._next_sub_id += 1
            self._subs[sub.id] = sub
            return sub

    def unsubscribe(self, sub: Subscriber):
        with self._subs_lock:
            self._subs.pop(sub.id, None)

    def broadcast(self, raw: bytes) -> dict[int, str]:
        """Offer one encoded frame to every subscriber (drop-oldest policy);
        called by the source loop while running."""
        with self._subs_lock:
            subs = list(self._subs.values())
        return {sub.id: sub.offer(raw) for sub in subs}

    # -- control -------------------------------------------------------------

    def handle_control(self, msg: dict) -> dict:
        """Process one control message and return the reply dict."""
        with self._ctl:
            self._reap()
            kind = msg.get("kind")
            payload = msg.get("payload") or {}
            if kind not in CONTROL_KINDS:
                return self._err("unknown-kind", f"unknown control kind {kind!r}")
            try:
                return getattr(self, f"_ctl_{kind}")(payload)
            except (ValueError, KeyError) as exc:
                return self._err("validation", str(exc))

    def _err(self, code: str, detail: str) -> dict:
        return {"ok": False, "error": code, "detail": detail, "state": self.state}

    def _reap(self):
        """Fold a finished source thread back into the stopped state."""
        if self.state == "running" and self._source_done:
            self._thread.join()
            self._finalize()

    def _finalize(self):
        self._annotate_service("session-stop")
        self.state = "stopped"
        self._thread = None
        self._sim = None

    def _annotate_service(self, label: str):
        t_us = max(int(round(self.samples_emitted / self._cfg.afe.sps * 1e6)),
                   self._last_annotation_us + 1)
        self._last_annotation_us = t_us
        self._session.annotate(t_us, label, source="service")

    def _ctl_configure(self, payload: dict) -> dict:
        if self.state != "stopped":
            return self._err("illegal-transition", "configure is only valid while stopped")
        cfg = ScenarioConfig.from_dict(payload["scenario"])
        transport = payload.get("transport", "simulated")
        if transport not in SPS_LIMITS:
            return self._err("validation", f"unknown transport {transport!r}")
        if cfg.afe.sps > SPS_LIMITS[transport]:
            return self._err(
                "validation",
                f"{cfg.afe.sps:g} SPS exceeds the {transport} limit of "
                f"{SPS_LIMITS[transport]:g} SPS",
            )
        pacing = payload.get("pacing", self._pacing)
        if pacing not in ("realtime", "fast"):
            return self._err("validation", f"unknown pacing {pacing!r}")
        # extension point for hardware sources (serial port address); only
        # the simulator source exists today
        source = payload.get("source", "simulator")
        if source != "simulator":
            return self._err("validation",
                             f"source {source!r} not supported yet; only 'simulator'")
        self._cfg = cfg
        self._transport = transport
        self._pacing = pacing
        self._session_id = payload.get("session_id")
        self._staged_drl = None
        return {"ok": True, "state": self.state, "sps": cfg.afe.sps,
                "channels": len(cfg.montage.measurable)}

    def _ctl_start(self, payload: dict) -> dict:
        if self.state != "stopped":
            return self._err("illegal-transition", f"cannot start while {self.state}")
        if self._cfg is None:
            return self._err("not-configured", "configure the service before starting")
        session_id = self._session_id or f"session-{time.strftime('%Y%m%dT%H%M%S')}"
        cfg = self._cfg
        if self._staged_drl is not None:
            cfg = replace(cfg, afe=replace(cfg.afe, drl_enabled=self._staged_drl))
        meta = SessionMeta(
            session_id=session_id,
            afe=cfg.afe,
            montage=cfg.montage,
            transport=self._transport,
            scenario=cfg.to_dict(),
        )
        self._session = Session.create(self.out_root / session_id, meta)
        self._sim = AcquisitionSimulator(cfg)
        self.frames_emitted = 0
        self.samples_emitted = 0
        self._last_annotation_us = -1
        self._ring = []
        self._ring_len = 0
        self._stop_evt.clear()
        self._source_done = False
        self.state = "running"
        self._annotate_service("session-start")
        self._thread = threading.Thread(target=self._run_source, daemon=True)
        self._thread.start()
        return {"ok": True, "state": self.state, "session_id": session_id,
                "path": str(self._session.path)}

    def _ctl_stop(self, payload: dict) -> dict:
        if self.state != "running":
            return self._err("illegal-transition", f"cannot stop while {self.state}")
        self._stop_evt.set()
        self._thread.join()
        self._finalize()
        return {"ok": True, "state": self.state, "frames_emitted": self.frames_emitted,
                "session_id": self._session.meta.session_id}

    def _ctl_annotate(self, payload: dict) -> dict:
        if self.state != "running":
            return self._err("illegal-transition", "annotate is only valid while running")
        label = payload.get("label", "")
        if not label:
            return self._err("validation", "annotation label must be non-empty")
        t_us = max(int(round(self.samples_emitted / self._cfg.afe.sps * 1e6)),
                   self._last_annotation_us + 1)
        self._last_annotation_us = t_us
        ann = self._session.annotate(t_us, label, source="operator")
        return {"ok": True, "state": self.state, "t_us": ann.t_us, "label": ann.label}

    def _ctl_set_drl(self, payload: dict) -> dict:
        enabled = bool(payload["enabled"])
        if self.state == "running":
            self._sim.set_drl(enabled)
        else:
            self._staged_drl = enabled
        return {"ok": True, "state": self.state, "drl_enabled": enabled,
                "staged": self.state != "running"}

    def _ctl_status(self, payload: dict) -> dict:
        with self._subs_lock:
            subs = [{"id": s.id, "drops": s.drops, "queued": s.queued} for s in self._subs.values()]
        if self.state == "running":
            drl = self._sim.drl_enabled
        elif self._staged_drl is not None:
            drl = self._staged_drl
        else:
            drl = self._cfg.afe.drl_enabled if self._cfg else None
        return {
            "ok": True,
            "kind": "status",
            "state": self.state,
            "session_id": self._session.meta.session_id if self._session else None,
            "sps": self._cfg.afe.sps if self._cfg else None,
            "frames_emitted": self.frames_emitted,
            "samples_emitted": self.samples_emitted,
            "drl_enabled": drl,
            "subscribers": subs,
            "quality_uv_rms": self._quality_uv_rms(),
            "scenario": self._cfg.to_dict() if self._cfg else None,
        }

    # -- source loop -----------------------------------------------------------

    def _run_source(self):
        cfg = self._sim.cfg
        sps = cfg.afe.sps
        mask = cfg.montage.channel_mask
        n_ch = len(cfg.montage.measurable)
        sample_count = plan_packetization(sps, n_ch, transport_class(self._transport))
        base_flags = FLAG_BLE if self._transport == "ble" else 0
        seq = 0
        start_wall = time.perf_counter()
        try:
            while not self._stop_evt.is_set():
                ts, codes = self._sim.next_chunk(sample_count)
                if codes.shape[0] == 0:
                    break
                flags = base_flags | (FLAG_DRL if self._sim.drl_enabled else 0)
                frame = Frame(seq=seq, timestamp_us=int(round(ts[0])), channel_mask=mask,
                              samples=codes, flags=flags)
                raw = encode_frame(frame)
                # recorder first: lossless, blocks the source (backpressure)
                self._session.append_frames([decode_frame(raw)])
                self._push_ring(codes[:, 0])
                self.broadcast(raw)
                seq = (seq + 1) & 0xFFFF
                self.frames_emitted += 1
                self.samples_emitted += codes.shape[0]
                if self._pacing == "realtime":
                    deadline = start_wall + self.samples_emitted / sps
                    while not self._stop_evt.is_set():
                        delay = deadline - time.perf_counter()
                        if delay <= 0:
                            break
                        time.sleep(min(delay, 0.05))
        finally:
            self._source_done = True

    # -- signal quality ----------------------------------------------------------

    def _push_ring(self, codes_col: np.ndarray):
        uv = codes_col.astype(float) * (lsb_volts(self._cfg.afe) * 1e6)
        keep = int(QUALITY_SPAN_S * self._cfg.afe.sps)
        with self._subs_lock:
            self._ring.append(uv)
            self._ring_len += len(uv)
            while self._ring_len - len(self._ring[0]) >= keep:
                self._ring_len -= len(self._ring[0])
                self._ring.pop(0)

    def _quality_uv_rms(self) -> float | None:
        """Powerline-residual RMS (45-55 Hz) over the last 2 s of signal."""
        if self._cfg is None:
            return None
        sps = self._cfg.afe.sps
        with self._subs_lock:
            if self._ring_len < int(QUALITY_SPAN_S * sps):
                return None
            buf = np.concatenate(self._ring)[-int(QUALITY_SPAN_S * sps):]
        psd = dsp.welch_psd(buf, sps, window_s=1.0, overlap=0.5)
        return float(np.sqrt(dsp.band_power(psd, *QUALITY_BAND)))
