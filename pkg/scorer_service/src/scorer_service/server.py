"""Threaded TCP server for the scorer protocol (see docs/scorer-protocol.md
in the pipeline repository for the wire format)."""

from __future__ import annotations

import json
import logging
import socketserver
import threading

from . import PROTOCOL
from .encoders import load_encoder

logger = logging.getLogger(__name__)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: ScorerServer = self.server
        self._send(
            {
                "type": "handshake",
                "protocol": PROTOCOL,
                "dim": server.encoder.dim,
                "mode": "embedding",
                "name": server.encoder.name,
            }
        )
        for raw in self.rfile:
            line = raw.decode("utf-8").strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except json.JSONDecodeError as exc:
                self._send({"id": None, "error": f"malformed request: {exc.msg}"})
                continue
            request_id = request.get("id")
            if "text" not in request:
                self._send({"id": request_id, "error": "missing field: text"})
                continue
            try:
                with server.encoder_lock:
                    embedding, truncated = server.encoder.encode(str(request["text"]))
                self._send(
                    {
                        "id": request_id,
                        "embedding": [float(v) for v in embedding],
                        "truncated": truncated,
                    }
                )
            except Exception as exc:
                logger.exception("encoding failed")
                self._send({"id": request_id, "error": str(exc)})

    def _send(self, payload: dict) -> None:
        self.wfile.write((json.dumps(payload) + "\n").encode("utf-8"))
        self.wfile.flush()


class ScorerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, encoder):
        super().__init__(address, _Handler)
        self.encoder = encoder
        # per-request encoding is serialized; ordering stays per-connection
        self.encoder_lock = threading.Lock()


def serve(model_name: str, host: str = "127.0.0.1", port: int = 8763) -> ScorerServer:
    """Load the encoder (refusing to start on failure) and return a bound server.

    Call serve_forever() on the result, or run it on a daemon thread.
    """
    encoder = load_encoder(model_name)
    server = ScorerServer((host, port), encoder)
    logger.info("scorer %s (dim %d) listening on %s:%d", encoder.name, encoder.dim,
                *server.server_address)
    return server
