"""Authentication and session tokens.

Browser traffic is authenticated by a trusted-header handshake: the fronting
web server (integrated with the institutional SSO) injects an identity
header, and the hub accepts it only from whitelisted proxy peers. Per-session
bearer tokens secure the hub <-> user-server exchange; they are opaque
128-bit random strings with an introspection call and explicit revocation.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Optional

from .model import normalize_username


def redact(token: str) -> str:
    """Loggable form of a token; never log token values in full."""
    return token[:6] + "…" if len(token) > 6 else "…"


class AuthMethod(str, Enum):
    TRUSTED_HEADER = "trusted_header"
    TOKEN = "token"


@dataclass(frozen=True)
class AuthContext:
    username: str
    method: AuthMethod


class UntrustedPeer(Exception):
    """Request reached the hub without passing through a trusted proxy."""


class AuthRequired(Exception):
    """No identity header present; the caller must be sent to the SSO."""

    def __init__(self, sso_url: str) -> None:
        super().__init__(f"authentication required; redirect to {sso_url}")
        self.sso_url = sso_url


@dataclass
class SessionToken:
    token: str
    username: str
    issued_at: float
    expires_at: float


class TokenStore:
    """Issue, introspect, and revoke opaque session tokens."""

    def __init__(self) -> None:
        self._tokens: dict[str, SessionToken] = {}
        self._lock = threading.Lock()

    def issue(self, username: str, ttl: float = 86400.0) -> SessionToken:
        now = time.time()
        token = SessionToken(
            token=secrets.token_hex(16),  # 128 bits
            username=username,
            issued_at=now,
            expires_at=now + ttl,
        )
        with self._lock:
            self._tokens[token.token] = token
        return token

    def introspect(self, token_string: str) -> tuple[Optional[str], bool]:
        """(username, valid); unknown, expired, and revoked tokens are invalid."""
        with self._lock:
            record = self._tokens.get(token_string)
        if record is None or time.time() >= record.expires_at:
            return None, False
        return record.username, True

    def revoke(self, token_string: str) -> None:
        with self._lock:
            self._tokens.pop(token_string, None)

    def revoke_for_user(self, username: str) -> None:
        with self._lock:
            for value in [t for t, rec in self._tokens.items() if rec.username == username]:
                self._tokens.pop(value, None)

    def to_dict(self) -> dict[str, Any]:
        with self._lock:
            return {
                t: {"username": r.username, "issued_at": r.issued_at, "expires_at": r.expires_at}
                for t, r in self._tokens.items()
            }

    def load_dict(self, data: dict[str, Any]) -> None:
        with self._lock:
            self._tokens = {
                t: SessionToken(t, d["username"], float(d["issued_at"]), float(d["expires_at"]))
                for t, d in data.items()
            }


def _header_get(headers: Mapping[str, str], name: str) -> Optional[str]:
    getter = getattr(headers, "get", None)
    if getter is not None:
        value = headers.get(name)
        if value is not None:
            return value
    lowered = name.lower()
    for key in headers:
        if key.lower() == lowered:
            return headers[key]
    return None


def authenticate_request(
    headers: Mapping[str, str],
    peer_address: str,
    *,
    trusted_proxies: list[str],
    header_name: str = "X-Remote-User",
    sso_url: str = "/sso/login",
    tokens: Optional[TokenStore] = None,
) -> AuthContext:
    """Resolve a request to an AuthContext.

    Peers outside ``trusted_proxies`` get UntrustedPeer (403) no matter what
    headers they present. A trusted peer with the identity header yields a
    trusted_header context; with a valid bearer token, a token context; with
    neither, AuthRequired carrying the SSO redirect target. A malformed
    username propagates InvalidUsername (400).
    """
    if peer_address not in trusted_proxies:
        raise UntrustedPeer(f"peer {peer_address} is not a trusted proxy")
    raw = _header_get(headers, header_name)
    if raw is not None:
        return AuthContext(normalize_username(raw), AuthMethod.TRUSTED_HEADER)
    if tokens is not None:
        authz = _header_get(headers, "Authorization") or ""
        if authz.startswith("Bearer "):
            username, valid = tokens.introspect(authz[len("Bearer "):].strip())
            if valid and username:
                return AuthContext(username, AuthMethod.TOKEN)
    raise AuthRequired(sso_url)
