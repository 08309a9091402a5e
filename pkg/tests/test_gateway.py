"""HTTP mechanics of the gateway: forwarding, streaming, upgrades, errors."""

from __future__ import annotations

import base64
import hashlib
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
import requests

from conftest import wait_until

TEN_MB = 10 * 1024 * 1024


class Backend:
    """Configurable test backend: big bodies, echo, slow responses, upgrade."""

    def __init__(self) -> None:
        backend = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):
                pass

            def _body(self, status, data, ctype="text/plain", chunked=False):
                self.send_response(status)
                self.send_header("Content-Type", ctype)
                if chunked:
                    self.send_header("Transfer-Encoding", "chunked")
                    self.end_headers()
                    for i in range(0, len(data), 8192):
                        part = data[i:i + 8192]
                        self.wfile.write(f"{len(part):x}\r\n".encode() + part + b"\r\n")
                    self.wfile.write(b"0\r\n\r\n")
                else:
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)

            def do_GET(self):
                if self.path.endswith("/big"):
                    self._body(200, backend.big_payload)
                elif self.path.endswith("/big-chunked"):
                    self._body(200, backend.big_payload, chunked=True)
                elif self.path.endswith("/slow"):
                    time.sleep(backend.slow_seconds)
                    self._body(200, b"finally")
                elif self.path.endswith("/headers"):
                    doc = "\n".join(f"{k}: {v}" for k, v in self.headers.items())
                    self._body(200, doc.encode())
                elif self.headers.get("Upgrade") == "echo":
                    self.send_response(101, "Switching Protocols")
                    self.send_header("Upgrade", "echo")
                    self.send_header("Connection", "Upgrade")
                    self.end_headers()
                    conn = self.connection
                    while True:
                        data = conn.recv(4096)
                        if not data or data == b"QUIT":
                            break
                        conn.sendall(data.upper())
                    self.close_connection = True
                else:
                    self._body(200, b"backend ok")

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = self.rfile.read(length)
                digest = hashlib.sha256(payload).hexdigest().encode()
                self._body(200, digest)

        self.big_payload = bytes(range(256)) * (TEN_MB // 256)
        self.slow_seconds = 5.0
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        threading.Thread(target=self.httpd.serve_forever, daemon=True).start()

    @property
    def target(self) -> str:
        return f"127.0.0.1:{self.httpd.server_address[1]}"

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def backend():
    b = Backend()
    yield b
    b.stop()


@pytest.fixture
def wired(gate, backend):
    """Gateway with a manual route to the test backend."""
    gate.hub.routes.add_route("/user/testbe", backend.target)
    return gate, backend


class TestForwarding:
    def test_relays_verbatim(self, wired):
        gate, _ = wired
        resp = gate.http.get(gate.url + "/user/testbe/x", timeout=10)
        assert resp.status_code == 200 and resp.text == "backend ok"

    def test_streams_big_body_with_bounded_buffers(self, wired):
        gate, backend = wired
        gate.gateway.max_chunk_seen = 0
        resp = gate.http.get(gate.url + "/user/testbe/big", timeout=30)
        assert resp.status_code == 200
        assert len(resp.content) == TEN_MB
        assert hashlib.sha256(resp.content).hexdigest() == hashlib.sha256(backend.big_payload).hexdigest()
        # the relay loop never held more than one fixed-size chunk
        assert 0 < gate.gateway.max_chunk_seen <= 64 * 1024

    def test_streams_chunked_upstream(self, wired):
        gate, backend = wired
        resp = gate.http.get(gate.url + "/user/testbe/big-chunked", timeout=30)
        assert resp.status_code == 200
        assert len(resp.content) == TEN_MB

    def test_request_body_forwarded(self, wired):
        gate, _ = wired
        payload = b"x" * 1_000_000
        resp = gate.http.post(gate.url + "/user/testbe/hash", data=payload, timeout=30)
        assert resp.text == hashlib.sha256(payload).hexdigest()

    def test_x_forwarded_for_appended(self, wired):
        gate, _ = wired
        resp = gate.http.get(gate.url + "/user/testbe/headers", timeout=10)
        assert "X-Forwarded-For: 127.0.0.1" in resp.text

    def test_hop_by_hop_headers_stripped(self, wired):
        gate, _ = wired
        resp = gate.http.get(gate.url + "/user/testbe/headers",
                             headers={"Proxy-Authorization": "Basic abc", "TE": "trailers"},
                             timeout=10)
        assert "Proxy-Authorization" not in resp.text
        assert "TE:" not in resp.text

    def test_backend_down_is_502(self, gate):
        gate.hub.routes.add_route("/user/deadbe", "127.0.0.1:1")
        resp = gate.http.get(gate.url + "/user/deadbe/x", timeout=10)
        assert resp.status_code == 502

    def test_upstream_timeout_is_504(self, gate_factory, backend):
        gate = gate_factory({"timeouts": {"startup": 15, "poll_interval": 0.05,
                                          "command": 10, "proxy_read": 0.3}})
        backend.slow_seconds = 5
        gate.hub.routes.add_route("/user/slowbe", backend.target)
        resp = gate.http.get(gate.url + "/user/slowbe/slow", timeout=10)
        assert resp.status_code == 504


class TestUpgradePassthrough:
    def test_bidirectional_echo_through_proxy(self, wired):
        gate, _ = wired
        host, port = gate.url.replace("http://", "").split(":")
        sock = socket.create_connection((host, int(port)), timeout=10)
        try:
            request = (
                "GET /user/testbe/live HTTP/1.1\r\n"
                f"Host: {host}\r\n"
                "Connection: Upgrade\r\n"
                "Upgrade: echo\r\n"
                "\r\n"
            )
            sock.sendall(request.encode())
            head = b""
            while b"\r\n\r\n" not in head:
                head += sock.recv(1024)
            assert b"101" in head.split(b"\r\n")[0]
            sock.sendall(b"hello proxy")
            echoed = sock.recv(1024)
            assert echoed == b"HELLO PROXY"
            sock.sendall(b"QUIT")
        finally:
            sock.close()


class TestHubFallthrough:
    def test_unknown_path_404(self, gate):
        assert gate.get("/definitely/not/here").status_code == 404

    def test_index_serves_service_doc(self, gate):
        resp = gate.http.get(gate.url + "/", timeout=5)
        assert resp.status_code == 200
        assert resp.json()["service"] == "sessiongate"

    def test_static_dir_serving(self, gate_factory, tmp_path):
        static = tmp_path / "static"
        static.mkdir()
        (static / "index.html").write_text("<html><body>ui</body></html>")
        (static / "app.js").write_text("console.log('ok')")
        gate = gate_factory({"static_dir": str(static)})
        assert "ui" in gate.http.get(gate.url + "/hub/", timeout=5).text
        js = gate.http.get(gate.url + "/hub/static/app.js", timeout=5)
        assert js.status_code == 200 and "console" in js.text
        traversal = gate.http.get(gate.url + "/hub/static/../hub-config.json", timeout=5)
        assert traversal.status_code in (400, 404)
