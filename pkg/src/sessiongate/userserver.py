"""Generic per-user backend server.

Stands in for a real interactive workload: binds a port (the kernel picks
one when PORT=0), registers itself with the gateway by POSTing its token and
address to the callback endpoint, then serves under its path prefix. Every
request must present the session bearer token, a cookie obtained from it, or
a one-shot ``?token=`` query parameter; anything else is 401.

Environment: GATEWAY_URL, SESSION_TOKEN, PATH_PREFIX, PORT (0 = auto),
optional SERVER_PORT_FILE (written with the bound port) and HOSTNAME (the
address reported in the callback; defaults to 127.0.0.1).
"""

from __future__ import annotations

import hmac
import json
import os
import secrets
import signal
import sys
import time
import urllib.error
import urllib.request
from http import cookies
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

LANDING_PAGE = """<!doctype html>
<html><head><title>Session backend</title></head>
<body>
<h1>Interactive session backend</h1>
<p>Serving under <code>{prefix}</code> on <code>{address}</code>.</p>
</body></html>
"""

CALLBACK_RETRIES = 20
CALLBACK_RETRY_DELAY = 0.25


class _State:
    token = ""
    prefix = "/"
    address = ""
    cookie_values: set = set()


def _register_with_gateway(gateway_url: str, token: str, address: str) -> None:
    """POST the callback; exit nonzero if the gateway rejects it."""
    url = gateway_url.rstrip("/") + "/hub/api/callback"
    body = json.dumps({"token": token, "address": address}).encode()
    request = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
    last_error: Exception | None = None
    for _ in range(CALLBACK_RETRIES):
        try:
            with urllib.request.urlopen(request, timeout=5) as resp:
                if 200 <= resp.status < 300:
                    return
            last_error = RuntimeError(f"unexpected callback status {resp.status}")
            break
        except urllib.error.HTTPError as exc:
            # A definite rejection (401/409): do not keep the server alive.
            print(f"callback rejected: {exc.code}", file=sys.stderr)
            sys.exit(3)
        except (urllib.error.URLError, OSError) as exc:
            last_error = exc
            time.sleep(CALLBACK_RETRY_DELAY)
    print(f"callback failed: {last_error}", file=sys.stderr)
    sys.exit(3)


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "session-backend"

    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, body: bytes, content_type: str = "text/plain",
              extra: dict | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def _authorized(self) -> bool:
        authz = self.headers.get("Authorization") or ""
        if authz.startswith("Bearer ") and hmac.compare_digest(
            authz[len("Bearer "):].strip(), _State.token
        ):
            return True
        raw_cookie = self.headers.get("Cookie")
        if raw_cookie:
            jar = cookies.SimpleCookie()
            try:
                jar.load(raw_cookie)
            except cookies.CookieError:
                return False
            morsel = jar.get("sgsession")
            if morsel and morsel.value in _State.cookie_values:
                return True
        return False

    def _handle(self) -> None:
        split = urlsplit(self.path)
        path = split.path
        query = parse_qs(split.query)

        token_param = (query.get("token") or [""])[0]
        if token_param and hmac.compare_digest(token_param, _State.token):
            value = secrets.token_hex(16)
            _State.cookie_values.add(value)
            self._send(302, b"", extra={
                "Location": path or "/",
                "Set-Cookie": f"sgsession={value}; Path={_State.prefix}; HttpOnly",
            })
            return

        if not self._authorized():
            self._send(401, b"authentication required\n")
            return

        prefix = _State.prefix.rstrip("/")
        if path == f"{prefix}/ping":
            self._send(200, b"pong")
        elif path in (prefix, f"{prefix}/"):
            page = LANDING_PAGE.format(prefix=_State.prefix, address=_State.address)
            self._send(200, page.encode(), content_type="text/html")
        else:
            self._send(404, b"not found\n")

    do_GET = do_POST = do_HEAD = _handle


def main() -> int:
    gateway_url = os.environ.get("GATEWAY_URL", "")
    token = os.environ.get("SESSION_TOKEN", "")
    prefix = os.environ.get("PATH_PREFIX", "/")
    port = int(os.environ.get("PORT", "0"))
    if not gateway_url or not token:
        print("GATEWAY_URL and SESSION_TOKEN are required", file=sys.stderr)
        return 2

    _State.token = token
    _State.prefix = prefix if prefix.startswith("/") else "/" + prefix

    httpd = ThreadingHTTPServer(("0.0.0.0", port), Handler)
    httpd.daemon_threads = True
    actual_port = httpd.server_address[1]

    port_file = os.environ.get("SERVER_PORT_FILE")
    if port_file:
        with open(port_file, "w", encoding="ascii") as fh:
            fh.write(str(actual_port))

    report_host = os.environ.get("HOSTNAME") or "127.0.0.1"
    _State.address = f"{report_host}:{actual_port}"

    def _terminate(signum, frame):
        raise SystemExit(0)

    signal.signal(signal.SIGTERM, _terminate)

    _register_with_gateway(gateway_url, token, _State.address)

    try:
        httpd.serve_forever()
    except (KeyboardInterrupt, SystemExit):
        pass
    finally:
        httpd.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
