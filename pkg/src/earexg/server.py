"""WebSocket front door for the stream service.

A single endpoint carries JSON text messages (control requests and
replies, periodic status pushes) and binary messages (wire-protocol
frames). Default bind is 127.0.0.1:8843; the EAREXG_PORT environment
variable overrides the port.
"""

from __future__ import annotations

import asyncio
import json
import os
import time

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .service import StreamService

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8843
PORT_ENV_VAR = "EAREXG_PORT"
STATUS_PUSH_PERIOD_S = 1.0


def default_port() -> int:
    return int(os.environ.get(PORT_ENV_VAR, DEFAULT_PORT))


def create_app(service: StreamService) -> FastAPI:
    app = FastAPI(title="earexg stream service")
    app.state.service = service

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        sub = service.subscribe()

        async def pump():
            last_status = 0.0
            while True:
                raw = await asyncio.to_thread(sub.get, 0.2)
                if raw is not None:
                    await ws.send_bytes(raw)
                now = time.monotonic()
                if now - last_status >= STATUS_PUSH_PERIOD_S:
                    last_status = now
                    status = service.handle_control({"kind": "status"})
                    await ws.send_text(json.dumps(status))

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError as exc:
                    reply = {"ok": False, "error": "bad-json", "detail": str(exc)}
                else:
                    reply = service.handle_control(msg)
                await ws.send_text(json.dumps(reply))
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            service.unsubscribe(sub)

    return app


def run_server(service: StreamService, host: str = DEFAULT_HOST, port: int | None = None):
    """Blocking uvicorn server around the service endpoint."""
    import uvicorn

    uvicorn.run(create_app(service), host=host, port=port or default_port(),
                log_level="warning")
