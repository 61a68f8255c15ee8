# SPDX-License-Identifier: Apache-2.0
"""Newline-delimited JSON text encoder server, over stdio or TCP."""

from __future__ import annotations

import json
import socketserver
import sys
import threading
from typing import IO

import numpy as np

from .backbones import Backbone


class Handler:
    """Answers one request line at a time. Thread-safe."""

    def __init__(self, backbone: Backbone):
        self.backbone = backbone
        self._lock = threading.Lock()

    def reply(self, line: str) -> str:
        try:
            req = json.loads(line)
        except json.JSONDecodeError as e:
            return _error(f"malformed request: {e.msg}")
        if not isinstance(req, dict):
            return _error("malformed request: not a JSON object")
        op = req.get("op")
        if op == "info":
            return json.dumps(self.backbone.info().to_json())
        if op == "encode_text":
            rid, text = req.get("id"), req.get("text")
            if not isinstance(rid, int) or isinstance(rid, bool) or rid < 0:
                return _error("encode_text needs a non-negative integer id")
            if not isinstance(text, str):
                return _error("encode_text needs a text string")
            try:
                with self._lock:
                    vec = np.asarray(self.backbone.encode_text(text), dtype=np.float64)
            except ValueError as e:
                return _error(str(e))
            n = np.linalg.norm(vec)
            if not np.isfinite(n) or n < 1e-12:
                return _error("text encodes to a zero vector")
            # single precision values, written as the doubles they widen to
            values = [float(v) for v in (vec / n).astype(np.float32)]
            return json.dumps({"id": rid, "dim": len(values), "vec": values})
        return _error(f"unknown op {json.dumps(op)}")


def _error(message: str) -> str:
    return json.dumps({"error": message})


def serve_stream(handler: Handler, reader: IO[str], writer: IO[str]) -> None:
    for line in reader:
        line = line.strip()
        if not line:
            continue
        writer.write(handler.reply(line) + "\n")
        writer.flush()


def serve_stdio(backbone: Backbone) -> None:
    serve_stream(Handler(backbone), sys.stdin, sys.stdout)


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        handler: Handler = self.server.handler  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            self.wfile.write((handler.reply(line) + "\n").encode("utf-8"))
            self.wfile.flush()


class TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], backbone: Backbone):
        super().__init__(address, _TcpHandler)
        self.handler = Handler(backbone)
