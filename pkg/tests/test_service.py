import json
import math
import time

import numpy as np
import pytest

from conftest import eeg_scenario

from earexg.protocol import decode_frame
from earexg.service import StreamService, Subscriber, SubscriberPolicy
from earexg.session import Session


def drl_probe_scenario(drl_enabled, duration_s=5.0, seed=5):
    from earexg.afe import AfeConfig
    from earexg.sim import NoiseModel

    cfg = eeg_scenario(
        open_s=duration_s, closed_s=duration_s, seed=seed,
        noise=NoiseModel(powerline_amp_uv=100_000.0, white_uv_rms=0.0, drift_uv=0.0,
                         cm_to_diff_fraction=0.02),
        afe=AfeConfig(drl_enabled=drl_enabled, drl_loop_gain=99.0),
        params={"a_open_uv": 0.0, "a_closed_uv": 0.0, "background_uv_rms": 0.0},
    )
    return cfg.to_dict()


def configure(svc, scenario=None, pacing="fast", **extra):
    payload = {"scenario": scenario or eeg_scenario(5, 5, seed=1).to_dict(),
               "pacing": pacing, **extra}
    return svc.handle_control({"kind": "configure", "payload": payload})


def run_to_completion(svc, timeout_s=60.0):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        status = svc.handle_control({"kind": "status"})
        if status["state"] == "stopped":
            return status
        time.sleep(0.05)
    raise TimeoutError("source did not finish")


class TestControlStateMachine:
    def test_start_from_stopped(self, tmp_path):
        svc = StreamService(tmp_path)
        assert configure(svc)["ok"]
        reply = svc.handle_control({"kind": "start"})
        assert reply["ok"] and reply["state"] == "running"
        assert svc.handle_control({"kind": "stop"})["ok"]

    def test_start_while_running_is_illegal(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc)
        svc.handle_control({"kind": "start"})
        reply = svc.handle_control({"kind": "start"})
        assert not reply["ok"] and reply["error"] == "illegal-transition"
        assert reply["state"] == "running"
        svc.handle_control({"kind": "stop"})

    def test_configure_while_running_is_illegal(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc)
        svc.handle_control({"kind": "start"})
        assert not configure(svc)["ok"]
        svc.handle_control({"kind": "stop"})

    def test_stop_while_stopped_is_illegal(self, tmp_path):
        svc = StreamService(tmp_path)
        reply = svc.handle_control({"kind": "stop"})
        assert not reply["ok"] and reply["error"] == "illegal-transition"

    def test_start_unconfigured_rejected(self, tmp_path):
        reply = StreamService(tmp_path).handle_control({"kind": "start"})
        assert not reply["ok"] and reply["error"] == "not-configured"

    def test_unknown_kind_rejected(self, tmp_path):
        reply = StreamService(tmp_path).handle_control({"kind": "selfdestruct"})
        assert not reply["ok"]

    def test_ble_rate_ceiling_rejected_at_configure(self, tmp_path):
        from earexg.afe import AfeConfig

        svc = StreamService(tmp_path)
        scenario = eeg_scenario(5, 5, afe=AfeConfig(sps=19200.0)).to_dict()
        reply = configure(svc, scenario=scenario, transport="ble")
        assert not reply["ok"] and reply["error"] == "validation"

    def test_annotate_only_while_running(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc)
        reply = svc.handle_control({"kind": "annotate", "payload": {"label": "x"}})
        assert not reply["ok"] and reply["error"] == "illegal-transition"

    def test_hardware_source_is_a_stubbed_extension_point(self, tmp_path):
        svc = StreamService(tmp_path)
        reply = configure(svc, source="/dev/ttyACM0")
        assert not reply["ok"] and reply["error"] == "validation"
        assert configure(svc, source="simulator")["ok"]


class TestSubscribers:
    def test_fast_subscriber_sees_everything(self):
        sub = Subscriber(1, SubscriberPolicy(queue_depth=1000))
        for i in range(100):
            sub.offer(bytes([i]))
        got = [sub.get() for _ in range(100)]
        assert got == [bytes([i]) for i in range(100)]
        assert sub.drops == 0

    def test_stalled_subscriber_keeps_newest_drops_oldest(self, tmp_path):
        svc = StreamService(tmp_path)
        sub = svc.subscribe(SubscriberPolicy(queue_depth=8))
        for i in range(100):
            svc.broadcast(i.to_bytes(2, "big"))
        assert sub.drops == 92
        kept = [int.from_bytes(sub.get(), "big") for _ in range(8)]
        assert kept == list(range(92, 100))

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            SubscriberPolicy(queue_depth=0)
        with pytest.raises(ValueError):
            SubscriberPolicy(overflow="drop-newest")

    def test_unsubscribe_stops_delivery(self, tmp_path):
        svc = StreamService(tmp_path)
        sub = svc.subscribe()
        svc.unsubscribe(sub)
        svc.broadcast(b"x")
        assert sub.get() is None


class TestRecorderPath:
    def test_lossless_under_stalled_subscriber(self, tmp_path):
        svc = StreamService(tmp_path)
        svc.subscribe(SubscriberPolicy(queue_depth=2))  # never drained
        configure(svc, pacing="fast")
        started = svc.handle_control({"kind": "start"})
        run_to_completion(svc)
        s = Session.open(tmp_path / started["session_id"])
        assert s.n_ticks == svc.samples_emitted == 10 * 500
        assert s.gaps == []
        assert s.integrity_check() == []

    def test_running_interval_bracketed_by_service_records(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc, pacing="fast")
        started = svc.handle_control({"kind": "start"})
        run_to_completion(svc)
        anns = Session.open(tmp_path / started["session_id"]).annotations()
        service_labels = [a.label for a in anns if a.source == "service"]
        assert service_labels == ["session-start", "session-stop"]

    def test_annotation_timestamps_monotone_and_inside_run(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc, scenario=eeg_scenario(60, 60, seed=2).to_dict(), pacing="realtime")
        started = svc.handle_control({"kind": "start"})
        time.sleep(0.3)
        r1 = svc.handle_control({"kind": "annotate", "payload": {"label": "eyes-closed"}})
        r2 = svc.handle_control({"kind": "annotate", "payload": {"label": "eyes-closed"}})
        svc.handle_control({"kind": "stop"})
        assert r1["ok"] and r2["ok"]
        assert r1["t_us"] < r2["t_us"]
        anns = Session.open(tmp_path / started["session_id"]).annotations()
        times = [a.t_us for a in anns]
        assert times == sorted(times)
        stop_t = [a.t_us for a in anns if a.label == "session-stop"][0]
        assert 0 <= r1["t_us"] <= stop_t

    def test_no_frames_while_stopped(self, tmp_path):
        svc = StreamService(tmp_path)
        sub = svc.subscribe()
        configure(svc, pacing="fast")
        started = svc.handle_control({"kind": "start"})
        run_to_completion(svc)
        emitted = svc.frames_emitted
        time.sleep(0.3)
        assert svc.frames_emitted == emitted
        drained = 0
        while sub.get() is not None:
            drained += 1
        assert drained <= emitted


class TestDrlAndQuality:
    def test_quality_drops_at_least_20_db_with_drl(self, tmp_path):
        def final_quality(drl):
            svc = StreamService(tmp_path / f"drl-{drl}")
            configure(svc, scenario=drl_probe_scenario(drl), pacing="fast")
            svc.handle_control({"kind": "start"})
            run_to_completion(svc)
            return svc._quality_uv_rms()

        q_off = final_quality(False)
        q_on = final_quality(True)
        assert 20 * math.log10(q_off / q_on) >= 20.0

    def test_set_drl_staged_while_stopped(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc, scenario=drl_probe_scenario(False), pacing="fast")
        reply = svc.handle_control({"kind": "set_drl", "payload": {"enabled": True}})
        assert reply["ok"] and reply["staged"]
        started = svc.handle_control({"kind": "start"})
        run_to_completion(svc)
        # staged value applied: the recorded stream is the attenuated one
        s = Session.open(tmp_path / started["session_id"])
        assert s.meta.afe.drl_enabled is True

    def test_set_drl_live_changes_frame_flags(self, tmp_path):
        svc = StreamService(tmp_path)
        sub = svc.subscribe(SubscriberPolicy(queue_depth=4096))
        configure(svc, scenario=eeg_scenario(60, 60, seed=3).to_dict(), pacing="realtime")
        svc.handle_control({"kind": "start"})
        time.sleep(0.4)
        svc.handle_control({"kind": "set_drl", "payload": {"enabled": False}})
        time.sleep(0.4)
        svc.handle_control({"kind": "stop"})
        flags = []
        while True:
            raw = sub.get()
            if raw is None:
                break
            flags.append(decode_frame(raw).drl_enabled)
        assert True in flags and False in flags
        assert flags == sorted(flags, reverse=True)  # single transition


class TestStatus:
    def test_status_shape(self, tmp_path):
        svc = StreamService(tmp_path)
        configure(svc, pacing="fast")
        status = svc.handle_control({"kind": "status"})
        for key in ("state", "sps", "frames_emitted", "drl_enabled",
                    "subscribers", "quality_uv_rms", "scenario"):
            assert key in status
        assert status["state"] == "stopped"
        # client-side recorders rebuild session metadata from this document
        assert status["scenario"]["afe"]["sps"] == 500.0

    def test_status_counts_subscriber_drops(self, tmp_path):
        svc = StreamService(tmp_path)
        sub = svc.subscribe(SubscriberPolicy(queue_depth=1))
        svc.broadcast(b"a")
        svc.broadcast(b"b")
        status = svc.handle_control({"kind": "status"})
        entry = [s for s in status["subscribers"] if s["id"] == sub.id][0]
        assert entry["drops"] == 1


class TestWebSocketEndpoint:
    def test_full_round_trip(self, tmp_path):
        from starlette.testclient import TestClient

        from earexg.server import create_app

        svc = StreamService(tmp_path)
        client = TestClient(create_app(svc))
        with client.websocket_connect("/ws") as ws:

            def next_reply():
                while True:
                    msg = ws.receive()
                    if msg.get("text"):
                        doc = json.loads(msg["text"])
                        if doc.get("kind") != "status":
                            return doc

            ws.send_text(json.dumps({
                "kind": "configure",
                "payload": {"scenario": eeg_scenario(5, 5, seed=4).to_dict(), "pacing": "fast"},
            }))
            assert next_reply()["ok"]
            ws.send_text(json.dumps({"kind": "start"}))
            assert next_reply()["ok"]
            binary = 0
            while binary < 3:
                msg = ws.receive()
                if msg.get("bytes"):
                    frame = decode_frame(msg["bytes"])
                    assert frame.sample_count >= 1
                    binary += 1
            ws.send_text(json.dumps({"kind": "annotate", "payload": {"label": "eyes-closed"}}))
        run_to_completion(svc)

    def test_bad_json_gets_error_reply(self, tmp_path):
        from starlette.testclient import TestClient

        from earexg.server import create_app

        client = TestClient(create_app(StreamService(tmp_path)))
        with client.websocket_connect("/ws") as ws:
            ws.send_text("{not json")
            while True:
                msg = ws.receive()
                if msg.get("text"):
                    doc = json.loads(msg["text"])
                    if doc.get("kind") != "status":
                        assert not doc["ok"] and doc["error"] == "bad-json"
                        break
