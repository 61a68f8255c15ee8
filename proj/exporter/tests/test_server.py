# SPDX-License-Identifier: Apache-2.0
import json
import os
import socket
import subprocess
import sys
import threading
from pathlib import Path

import pytest

from cpl_exporter.backbones import RandomBackbone
from cpl_exporter.server import Handler, TcpServer

ROOT = Path(__file__).resolve().parents[1]


def ask(handler, obj):
    return json.loads(handler.reply(obj if isinstance(obj, str) else json.dumps(obj)))


def test_info_and_encode_dims_agree():
    h = Handler(RandomBackbone(seed=1))
    info = ask(h, {"op": "info"})
    assert info == {"d_t": 32, "d_v": 32, "Q": 4, "channel_dims": [8, 16, 16, 32]}
    r = ask(h, {"id": 7, "op": "encode_text", "text": "a photo of a cat"})
    assert r["id"] == 7 and r["dim"] == info["d_t"] == len(r["vec"])


def test_same_text_twice_gives_identical_vectors():
    h = Handler(RandomBackbone(seed=1))
    a = h.reply(json.dumps({"id": 1, "op": "encode_text", "text": "red"}))
    b = h.reply(json.dumps({"id": 1, "op": "encode_text", "text": "red"}))
    assert a == b


def test_values_are_single_precision():
    import numpy as np

    r = ask(Handler(RandomBackbone(seed=1)), {"id": 2, "op": "encode_text", "text": "x"})
    v = np.array(r["vec"])
    assert np.array_equal(v, v.astype(np.float32).astype(np.float64))
    assert abs(np.linalg.norm(v) - 1) < 1e-6


@pytest.mark.parametrize("line", ["{", "[1,2]", '{"op":"encode_text","text":"x"}', '{"id":1,"op":"encode_text"}',
                                  '{"op":"fly"}', '{"id":-1,"op":"encode_text","text":"x"}',
                                  '{"id":1,"op":"encode_text","text":"!!"}'])
def test_bad_requests_get_error_replies(line):
    r = ask(Handler(RandomBackbone()), line)
    assert set(r) == {"error"}


def test_stdio_server_keeps_going_after_errors():
    env = dict(os.environ, PYTHONPATH=str(ROOT))
    lines = ['{"op":"nope"}', "not json", '{"id":3,"op":"encode_text","text":"cat"}', '{"op":"info"}']
    out = subprocess.run([sys.executable, "-m", "cpl_exporter", "--seed", "1", "serve"], input="\n".join(lines) + "\n",
                         capture_output=True, text=True, env=env, timeout=60, check=True).stdout.splitlines()
    assert len(out) == 4
    assert "error" in json.loads(out[0]) and "error" in json.loads(out[1])
    assert json.loads(out[2])["id"] == 3
    assert json.loads(out[3])["Q"] == 4


def test_tcp_connections_answer_by_id():
    server = TcpServer(("127.0.0.1", 0), RandomBackbone(seed=1))
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        expected = {}
        ref = Handler(RandomBackbone(seed=1))
        conns = [socket.create_connection(server.server_address, timeout=10) for _ in range(2)]
        files = [c.makefile("rw", encoding="utf-8", newline="\n") for c in conns]
        for i in range(6):
            text = f"word {i}"
            req = json.dumps({"id": 100 + i, "op": "encode_text", "text": text})
            expected[100 + i] = ref.reply(req)
            files[i % 2].write(req + "\n")
        for f in files:
            f.flush()
        for i in range(6):
            line = files[i % 2].readline().strip()
            assert line == expected[json.loads(line)["id"]]
        for c in conns:
            c.close()
    finally:
        server.shutdown()
        server.server_close()
