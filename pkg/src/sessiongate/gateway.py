"""The single public HTTP front: dynamic proxy plus hub endpoints.

Every request is first checked against the route table; a match is streamed
to the backend, anything else is handled by the hub (API, dashboard data,
static UI assets). Responses are relayed in fixed-size chunks so proxy
memory stays bounded by the buffer size, not the body size, and upgrade
requests are passed through by splicing the raw sockets.
"""

from __future__ import annotations

import http.client
import json
import logging
import mimetypes
import os
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import urlsplit

from .auth import AuthRequired, UntrustedPeer, authenticate_request
from .hub import ApiError, Hub
from .model import InvalidUsername, LifecyclePhase
from .proxy import RouteEntry

log = logging.getLogger(__name__)

CHUNK_SIZE = 64 * 1024

HOP_BY_HOP = {
    "connection", "keep-alive", "proxy-authenticate", "proxy-authorization",
    "te", "trailers", "transfer-encoding", "upgrade",
}


class GatewayServer:
    """Threaded HTTP server bound to the public address."""

    def __init__(self, hub: Hub, host: Optional[str] = None, port: Optional[int] = None) -> None:
        self.hub = hub
        host = host if host is not None else hub.config.listen_host
        port = port if port is not None else hub.config.listen_port
        handler = _make_handler(hub, self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None
        # stats for the bounded-memory check
        self.max_chunk_seen = 0

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def url(self) -> str:
        host = self.httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        name="gateway", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def serve_forever(self) -> None:
        self.httpd.serve_forever()


def _make_handler(hub: Hub, gateway: GatewayServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "sessiongate"

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("%s %s", self.address_string(), fmt % args)

        # one entry point for every method
        def _handle(self) -> None:
            path = self.path.split("?", 1)[0]
            entry = hub.routes.lookup_entry(path)
            if entry is not None:
                _ProxyRelay(self, gateway).forward(entry)
            else:
                _HubDispatch(self, hub).dispatch()

        do_GET = do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = do_OPTIONS = _handle

    return Handler


def _read_body(handler: BaseHTTPRequestHandler) -> bytes:
    length = handler.headers.get("Content-Length")
    if length is None:
        return b""
    return handler.rfile.read(int(length))


def _send_json(handler: BaseHTTPRequestHandler, status: int, doc: dict,
               extra_headers: Optional[dict[str, str]] = None) -> None:
    body = json.dumps(doc).encode()
    handler.send_response(status)
    handler.send_header("Content-Type", "application/json")
    handler.send_header("Content-Length", str(len(body)))
    for key, value in (extra_headers or {}).items():
        handler.send_header(key, value)
    handler.end_headers()
    if handler.command != "HEAD":
        handler.wfile.write(body)


class _HubDispatch:
    """Adapter from the raw handler to the hub's domain methods."""

    def __init__(self, handler: BaseHTTPRequestHandler, hub: Hub) -> None:
        self.h = handler
        self.hub = hub
        self.path = handler.path.split("?", 1)[0]
        self.peer = handler.client_address[0]
        # drain the body now so error paths never leave bytes on a
        # keep-alive connection
        self.body = _read_body(handler)

    def dispatch(self) -> None:
        try:
            self._route()
        except ApiError as exc:
            self._best_effort_json(exc.status, {"error": exc.code, "detail": exc.detail, **exc.payload})
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception:
            log.exception("hub handler crashed on %s %s", self.h.command, self.path)
            self._best_effort_json(500, {"error": "internal_error"})

    def _best_effort_json(self, status: int, doc: dict) -> None:
        try:
            _send_json(self.h, status, doc)
        except (BrokenPipeError, ConnectionResetError, OSError):
            self.h.close_connection = True

    # -- auth helpers

    def _auth(self):
        cfg = self.hub.config
        try:
            return authenticate_request(
                self.h.headers,
                self.peer,
                trusted_proxies=cfg.trusted_proxy_addresses,
                header_name=cfg.auth_header_name,
                sso_url=cfg.sso_url,
                tokens=self.hub.tokens,
            )
        except UntrustedPeer as exc:
            raise ApiError(403, "untrusted_peer", str(exc)) from exc
        except InvalidUsername as exc:
            raise ApiError(400, "invalid_username", str(exc)) from exc
        except AuthRequired as exc:
            self.h.send_response(302)
            self.h.send_header("Location", exc.sso_url)
            self.h.send_header("Content-Length", "0")
            self.h.end_headers()
            raise _Handled() from exc

    def _json_body(self) -> dict:
        raw = self.body
        if not raw:
            return {}
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ApiError(400, "bad_json", str(exc)) from exc
        if not isinstance(doc, dict):
            raise ApiError(400, "bad_json", "body must be a JSON object")
        return doc

    # -- routing

    def _route(self) -> None:
        method, path = self.h.command, self.path
        try:
            if path == "/hub/api/callback" and method == "POST":
                body = self._json_body()
                doc = self.hub.server_callback(str(body.get("token", "")), str(body.get("address", "")))
                _send_json(self.h, 200, doc)
            elif path == "/hub/api/introspect" and method == "POST":
                body = self._json_body()
                _send_json(self.h, 200, self.hub.introspect(str(body.get("token", ""))))
            elif path == "/hub/api/profiles" and method == "GET":
                self._auth()
                _send_json(self.h, 200, self.hub.options_form())
            elif path == "/hub/api/spawn" and method == "POST":
                auth = self._auth()
                body = self._json_body()
                selection = None
                if body.get("profile_id"):
                    from .spawners.wrap import OptionsSelection

                    selection = OptionsSelection(str(body["profile_id"]))
                doc = self.hub.request_spawn(auth, selection)
                _send_json(self.h, 202, doc)
            elif path == "/hub/api/stop" and method == "POST":
                auth = self._auth()
                _send_json(self.h, 200, self.hub.request_stop(auth))
            elif path == "/hub/api/status" and method == "GET":
                auth = self._auth()
                _send_json(self.h, 200, self.hub.get_session_status(auth))
            elif path == "/hub/api/admin/reload-profiles" and method == "POST":
                auth = self._auth()
                user = self.hub.ensure_user(auth.username)
                if not user.admin:
                    raise ApiError(403, "not_admin", "admin privileges required")
                catalog = self.hub.reload_catalog()
                _send_json(self.h, 200, {"profiles": len(catalog.profiles)})
            elif path == "/hub/home" and method == "GET":
                auth = self._auth()
                user = self.hub.ensure_user(auth.username)
                _send_json(self.h, 200, {
                    "username": auth.username,
                    "admin": user.admin,
                    "session": self.hub.get_session_status(auth),
                    "form": self.hub.options_form(),
                })
            elif path.startswith("/hub/static/") and method in ("GET", "HEAD"):
                self._static(path[len("/hub/static/"):])
            elif path in ("/hub", "/hub/", "/") and method in ("GET", "HEAD"):
                self._index()
            elif path.startswith("/user/"):
                self._orphaned_user_path(path)
            else:
                _send_json(self.h, 404, {"error": "not_found", "path": path})
        except _Handled:
            pass

    def _orphaned_user_path(self, path: str) -> None:
        # A /user/... request with no live route: if the session exists at
        # all, this is a just-removed or not-yet-added backend.
        username = path.split("/", 3)[2] if len(path.split("/")) > 2 else ""
        record = self.hub.session_record(username) if username else None
        if record is not None and record.phase is not LifecyclePhase.STOPPED:
            _send_json(self.h, 503, {
                "error": "backend_unavailable",
                "detail": f"server for {username} is {record.phase.value}; retry shortly",
            }, extra_headers={"Retry-After": "2"})
        else:
            _send_json(self.h, 404, {"error": "not_found", "path": path})

    def _static(self, rel: str) -> None:
        static_dir = self.hub.config.static_dir
        if not static_dir:
            _send_json(self.h, 404, {"error": "no_static_dir"})
            return
        full = os.path.realpath(os.path.join(static_dir, rel))
        root = os.path.realpath(static_dir)
        if not full.startswith(root + os.sep) and full != root:
            _send_json(self.h, 404, {"error": "not_found"})
            return
        if not os.path.isfile(full):
            _send_json(self.h, 404, {"error": "not_found"})
            return
        ctype = mimetypes.guess_type(full)[0] or "application/octet-stream"
        with open(full, "rb") as fh:
            data = fh.read()
        self.h.send_response(200)
        self.h.send_header("Content-Type", ctype)
        self.h.send_header("Content-Length", str(len(data)))
        self.h.end_headers()
        if self.h.command != "HEAD":
            self.h.wfile.write(data)

    def _index(self) -> None:
        static_dir = self.hub.config.static_dir
        index = os.path.join(static_dir, "index.html") if static_dir else None
        if index and os.path.isfile(index):
            self._static("index.html")
            return
        _send_json(self.h, 200, {"service": "sessiongate", "api": "/hub/api"})


class _Handled(Exception):
    """The response has already been written (e.g. a redirect)."""


class _ProxyRelay:
    """Stream one request to a backend and its response back."""

    def __init__(self, handler: BaseHTTPRequestHandler, gateway: GatewayServer) -> None:
        self.h = handler
        self.gateway = gateway
        self.hub = gateway.hub

    def forward(self, entry: RouteEntry) -> None:
        host, _, port = entry.target.rpartition(":")
        try:
            port_num = int(port)
        except ValueError:
            self._error(502, f"malformed route target {entry.target!r}")
            return

        if self._is_upgrade():
            self._splice(host, port_num)
            return

        timeout = self.hub.config.timeouts.proxy_read
        conn = http.client.HTTPConnection(host, port_num, timeout=timeout)
        try:
            self._relay(conn, entry)
        except (ConnectionRefusedError, ConnectionResetError, http.client.HTTPException, OSError) as exc:
            if isinstance(exc, socket.timeout):
                self._error(504, "backend timed out")
            elif self.hub.routes.lookup_entry(self.h.path.split("?", 1)[0]) is None:
                # the route vanished while we were talking to it
                self._error(503, "backend just removed; retry shortly", retry=True)
            else:
                self._error(502, f"backend unreachable: {exc}")
        finally:
            conn.close()

    def _relay(self, conn: http.client.HTTPConnection, entry: RouteEntry) -> None:
        h = self.h
        conn.putrequest(h.command, h.path, skip_host=True, skip_accept_encoding=True)
        seen_xff = False
        for key, value in h.headers.items():
            lowered = key.lower()
            if lowered in HOP_BY_HOP:
                continue
            if lowered == "x-forwarded-for":
                seen_xff = True
                value = f"{value}, {h.client_address[0]}"
            conn.putheader(key, value)
        if not seen_xff:
            conn.putheader("X-Forwarded-For", h.client_address[0])
        conn.putheader("Connection", "close")
        conn.endheaders()

        length = int(h.headers.get("Content-Length") or 0)
        remaining = length
        while remaining > 0:
            chunk = h.rfile.read(min(CHUNK_SIZE, remaining))
            if not chunk:
                break
            remaining -= len(chunk)
            conn.send(chunk)

        resp = conn.getresponse()
        h.send_response_only(resp.status, resp.reason)
        has_length = False
        for key, value in resp.getheaders():
            if key.lower() in HOP_BY_HOP:
                continue
            if key.lower() == "content-length":
                has_length = True
            h.send_header(key, value)
        h.send_header("Connection", "close")
        h.close_connection = True
        h.end_headers()

        if h.command == "HEAD":
            return
        while True:
            chunk = resp.read(CHUNK_SIZE)
            if not chunk:
                break
            if len(chunk) > self.gateway.max_chunk_seen:
                self.gateway.max_chunk_seen = len(chunk)
            h.wfile.write(chunk)
        if not has_length:
            # close-delimited body; we already forced Connection: close
            pass

    # -- upgrade passthrough

    def _is_upgrade(self) -> bool:
        connection = (self.h.headers.get("Connection") or "").lower()
        return "upgrade" in connection and self.h.headers.get("Upgrade") is not None

    def _splice(self, host: str, port: int) -> None:
        try:
            upstream = socket.create_connection((host, port), timeout=10)
        except OSError as exc:
            self._error(502, f"backend unreachable: {exc}")
            return
        h = self.h
        request_lines = [f"{h.command} {h.path} HTTP/1.1"]
        for key, value in h.headers.items():
            if key.lower() == "x-forwarded-for":
                value = f"{value}, {h.client_address[0]}"
            request_lines.append(f"{key}: {value}")
        if "x-forwarded-for" not in {k.lower() for k in h.headers.keys()}:
            request_lines.append(f"X-Forwarded-For: {h.client_address[0]}")
        request_lines.append("")
        request_lines.append("")
        upstream.sendall("\r\n".join(request_lines).encode("latin-1"))

        client = h.connection
        upstream.settimeout(None)
        done = threading.Event()

        def teardown() -> None:
            done.set()
            for s in (upstream, client):
                try:
                    s.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass

        def pump_up() -> None:
            # read via rfile so bytes the handler already buffered are not lost
            try:
                while True:
                    data = h.rfile.read1(CHUNK_SIZE)
                    if not data:
                        break
                    upstream.sendall(data)
            except (OSError, ValueError):
                pass
            finally:
                teardown()

        def pump_down() -> None:
            try:
                while True:
                    data = upstream.recv(CHUNK_SIZE)
                    if not data:
                        break
                    client.sendall(data)
            except OSError:
                pass
            finally:
                teardown()

        t1 = threading.Thread(target=pump_down, daemon=True)
        t2 = threading.Thread(target=pump_up, daemon=True)
        t1.start()
        t2.start()
        done.wait()
        t1.join(timeout=2)
        t2.join(timeout=2)
        upstream.close()
        h.close_connection = True

    def _error(self, status: int, detail: str, retry: bool = False) -> None:
        # the request body may be partially unread; never reuse this connection
        self.h.close_connection = True
        try:
            _send_json(self.h, status, {"error": "proxy_error", "detail": detail},
                       extra_headers={"Retry-After": "2", "Connection": "close"}
                       if retry else {"Connection": "close"})
        except (BrokenPipeError, OSError):
            pass
