"""Command-line entry points: simulate, serve, record, replay, analyze,
export, protocol-info."""

from __future__ import annotations

import asyncio
import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .analysis import MissingConditionError, alpha_contrast, clench_contrast, pursuit_report
from .pipeline import rerecord, replay_frames, simulate_to_session
from .protocol import Frame, StreamTracker, decode_frame, encode_frame
from .server import DEFAULT_HOST, default_port, run_server
from .service import StreamService
from .session import Session, SessionMeta
from .sim import ScenarioConfig


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_scenario(path: str) -> ScenarioConfig:
    p = Path(path)
    if not p.exists():
        _fail(f"scenario file {path} not found")
    try:
        return ScenarioConfig.from_dict(json.loads(p.read_text()))
    except (ValueError, KeyError) as exc:
        _fail(f"invalid scenario {path}: {exc}")


def _open_session(path: str) -> Session:
    try:
        return Session.open(path)
    except ValueError as exc:
        _fail(str(exc))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON file with defaults (host, port, out_root).")
@click.pass_context
def main(ctx, config_path):
    """Ear-biopotential simulator, stream service, and analysis tools."""
    ctx.obj = {}
    if config_path:
        p = Path(config_path)
        if not p.exists():
            _fail(f"config file {config_path} not found")
        ctx.obj = json.loads(p.read_text())


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(),
              help="Scenario definition JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Session directory to create.")
@click.option("--session-id", default=None, help="Session id (default: directory name).")
@click.option("--transport", default="simulated",
              type=click.Choice(["simulated", "serial", "ble"]))
def simulate(scenario_path, out_dir, session_id, transport):
    """Run a scenario through the full chain into a recorded session."""
    cfg = _load_scenario(scenario_path)
    try:
        session = simulate_to_session(cfg, out_dir, session_id, transport)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(f"session {session.meta.session_id}: {session.n_ticks} ticks x "
               f"{session.n_channels} ch at {session.sps:g} SPS -> {session.path}")


@main.command()
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.option("--out-root", default=None, type=click.Path(),
              help="Directory that new sessions are created under.")
@click.pass_context
def serve(ctx, host, port, out_root):
    """Serve the stream service over a WebSocket (control + frames)."""
    cfg = ctx.obj or {}
    host = host or cfg.get("host", DEFAULT_HOST)
    port = port or cfg.get("port") or default_port()
    out_root = Path(out_root or cfg.get("out_root", "sessions"))
    out_root.mkdir(parents=True, exist_ok=True)
    service = StreamService(out_root)
    click.echo(f"serving ws://{host}:{port}/ws (sessions under {out_root})")
    run_server(service, host, port)


async def _record_client(url: str, out_dir: str, duration_s: float):
    import websockets

    scenario = None
    frames = []
    async with websockets.connect(url, max_size=None) as ws:
        await ws.send(json.dumps({"kind": "status"}))
        deadline = time.monotonic() + duration_s
        while time.monotonic() < deadline:
            try:
                msg = await asyncio.wait_for(ws.recv(), timeout=max(0.1, deadline - time.monotonic()))
            except asyncio.TimeoutError:
                continue
            if isinstance(msg, bytes):
                frames.append(msg)
            else:
                doc = json.loads(msg)
                if doc.get("kind") == "status" and doc.get("scenario"):
                    scenario = doc["scenario"]
    if scenario is None:
        _fail("service never reported a configured scenario; nothing to record")
    if not frames:
        _fail("no frames received; is the service running?")
    cfg = ScenarioConfig.from_dict(scenario)
    meta = SessionMeta(session_id=Path(out_dir).name, afe=cfg.afe, montage=cfg.montage,
                       transport="simulated", scenario=scenario)
    session = Session.create(out_dir, meta)
    tracker = StreamTracker()
    decoded = [f for f in (tracker.feed(raw) for raw in frames) if f is not None]
    session.append_frames(decoded)
    return session, tracker.stats


@main.command()
@click.option("--url", default=None, help="Service WebSocket URL.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--duration", default=10.0, type=float, help="Seconds to record.")
@click.pass_context
def record(ctx, url, out_dir, duration):
    """Record frames from a running service into a session (client side)."""
    cfg = ctx.obj or {}
    url = url or f"ws://{cfg.get('host', DEFAULT_HOST)}:{cfg.get('port') or default_port()}/ws"
    try:
        session, stats = asyncio.run(_record_client(url, out_dir, duration))
    except OSError as exc:
        _fail(f"cannot reach service at {url}: {exc}")
    click.echo(f"recorded {stats.frames_ok} frames ({session.n_ticks} ticks), "
               f"{len(stats.gaps)} gaps, ~{stats.samples_lost_estimate} samples lost "
               f"-> {session.path}")


@main.command()
@click.option("--session", "session_path", required=True, type=click.Path())
@click.option("--fast", is_flag=True, help="Replay without realtime pacing.")
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Re-record the replayed stream into a new session here.")
def replay(session_path, fast, out_dir):
    """Re-stream a session through the wire protocol, optionally re-recording."""
    session = _open_session(session_path)
    if out_dir:
        copy = rerecord(session, out_dir, fast=fast)
        click.echo(f"re-recorded {copy.n_ticks} ticks -> {copy.path}")
        return
    tracker = StreamTracker()
    for raw in replay_frames(session, fast=fast):
        tracker.feed(raw)
    s = tracker.stats
    click.echo(f"replayed {s.frames_ok} frames, {s.crc_failures} bad, {len(s.gaps)} gaps")


def _write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")


@main.command()
@click.argument("kind", type=click.Choice(["alpha", "emg", "eog"]))
@click.option("--session", "session_path", required=True, type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Report directory (default: <session>/report-<kind>).")
@click.option("--svg", is_flag=True, help="Also render the report figure.")
def analyze(kind, session_path, out_dir, svg):
    """Run one of the three protocol analyses; exits 0 on PASS, 1 on FAIL."""
    session = _open_session(session_path)
    out = Path(out_dir) if out_dir else session.path / f"report-{kind}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        if kind == "alpha":
            result = alpha_contrast(session)
            _write_csv(out / "metrics.csv",
                       ["label", "start_s", "end_s", "alpha_power_uv2", "total_power_uv2"],
                       [(e.label, e.start_s, e.end_s, e.alpha_power_uv2, e.total_power_uv2)
                        for e in result.epochs])
        elif kind == "emg":
            result = clench_contrast(session)
            _write_csv(out / "metrics.csv", ["label", "start_s", "end_s", "rms_uv"],
                       [(e.label, e.start_s, e.end_s, e.rms_uv) for e in result.epochs])
        else:
            result = pursuit_report(session)
            _write_csv(out / "events.csv", ["onset_s", "direction", "amplitude_uv"],
                       [(e.onset_s, e.direction, e.amplitude_uv) for e in result.events])
    except MissingConditionError as exc:
        _fail(str(exc))
    (out / "report.json").write_text(json.dumps(result.to_dict(), indent=2))
    if svg:
        from . import plots

        render = {"alpha": plots.render_alpha, "emg": plots.render_emg,
                  "eog": plots.render_eog}[kind]
        render(session, result, out / f"{kind}.svg")
    status = "PASS" if result.passed else "FAIL"
    click.echo(f"{kind}: {status} ({json.dumps({k: v for k, v in result.to_dict().items() if k not in ('epochs', 'events')})})")
    sys.exit(0 if result.passed else 1)


@main.command()
@click.option("--session", "session_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--start-s", default=0.0, type=float)
@click.option("--end-s", default=None, type=float)
def export(session_path, out_path, start_s, end_s):
    """Export a sample range as CSV (t_us plus input-referred microvolts)."""
    session = _open_session(session_path)
    start = int(round(start_s * session.sps))
    end = int(round(end_s * session.sps)) if end_s is not None else None
    try:
        session.export_csv(out_path, start, end)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_path}")


@main.command(name="protocol-info")
def protocol_info():
    """Print the frame layout and a worked example frame in hex."""
    click.echo("wire frame layout (see protocol.md):")
    click.echo("  offset size field")
    click.echo("  0      2    magic 0x45 0x58 ('EX')")
    click.echo("  2      1    version (1)")
    click.echo("  3      1    flags: bit0 drl_enabled, bit1 ble transport, rest 0")
    click.echo("  4      2    seq, uint16 LE, wraps at 65536")
    click.echo("  6      4    timestamp_us of first sample, uint32 LE, wraps at 2^32")
    click.echo("  10     1    channel_mask (bit i -> AIN(i+1) present)")
    click.echo("  11     1    sample_count per channel")
    click.echo("  12     3*N*C payload: 24-bit signed LE samples, channel-major per tick")
    click.echo("  end    2    CRC-16/CCITT-FALSE over preceding bytes, big-endian")
    frame = Frame(seq=0, timestamp_us=0, channel_mask=0x01, samples=np.array([[0]]), flags=0)
    raw = encode_frame(frame)
    decoded = decode_frame(raw)
    click.echo(f"\nminimal example: 1 channel, 1 sample of code 0, seq 0, ts 0 "
               f"({len(raw)} bytes):")
    click.echo("  " + raw.hex(" "))
    click.echo(f"  -> seq={decoded.seq} ts={decoded.timestamp_us}us "
               f"mask={decoded.channel_mask:#04x} count={decoded.sample_count}")


if __name__ == "__main__":
    main()
