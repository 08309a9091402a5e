"""Dynamic routing table for the reverse proxy.

The table maps normalized path prefixes to backend ``host:port`` targets.
Lookups are longest-prefix-wins with path-segment boundaries respected, so a
route for ``/user/alice`` never captures ``/user/alicex``. Mutations swap an
immutable snapshot under a lock and bump a table-wide monotonic epoch;
readers never observe a partially applied change.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional


class MalformedPrefix(ValueError):
    """Prefix is not a normalized absolute path."""


def normalize_prefix(prefix: str) -> str:
    if not isinstance(prefix, str) or not prefix.startswith("/"):
        raise MalformedPrefix(f"prefix must start with '/': {prefix!r}")
    if "//" in prefix or "\\" in prefix or any(c in prefix for c in ("\r", "\n", "\0")):
        raise MalformedPrefix(f"malformed prefix: {prefix!r}")
    parts = prefix.split("/")
    if any(p in (".", "..") for p in parts):
        raise MalformedPrefix(f"dot segments not allowed: {prefix!r}")
    if prefix != "/" and prefix.endswith("/"):
        prefix = prefix.rstrip("/")
        if not prefix:
            prefix = "/"
    return prefix


@dataclass(frozen=True)
class RouteEntry:
    path_prefix: str
    target: str
    epoch: int


class RouteTable:
    """Prefix -> RouteEntry map with a hub default target.

    ``default_target`` stands for the hub itself and is always present; it is
    returned whenever no registered prefix matches.
    """

    def __init__(self, default_target: str = "hub") -> None:
        self.default_target = default_target
        self._routes: dict[str, RouteEntry] = {}
        self._epoch = 0
        self._lock = threading.Lock()

    @property
    def epoch(self) -> int:
        return self._epoch

    def add_route(self, prefix: str, target: str) -> int:
        """Add or replace a route. Returns the new table epoch."""
        prefix = normalize_prefix(prefix)
        with self._lock:
            self._epoch += 1
            routes = dict(self._routes)
            routes[prefix] = RouteEntry(prefix, target, self._epoch)
            self._routes = routes
            return self._epoch

    def remove_route(self, prefix: str) -> int:
        """Remove a route; removing an absent prefix is a no-op."""
        prefix = normalize_prefix(prefix)
        with self._lock:
            if prefix not in self._routes:
                return self._epoch
            self._epoch += 1
            routes = dict(self._routes)
            del routes[prefix]
            self._routes = routes
            return self._epoch

    def get(self, prefix: str) -> Optional[RouteEntry]:
        return self._routes.get(normalize_prefix(prefix))

    def routes(self) -> dict[str, RouteEntry]:
        return dict(self._routes)

    def lookup(self, path: str) -> str:
        """Target of the longest registered segment-prefix of ``path``."""
        entry = self.lookup_entry(path)
        return entry.target if entry is not None else self.default_target

    def lookup_entry(self, path: str) -> Optional[RouteEntry]:
        routes = self._routes  # snapshot; mutations replace the dict wholesale
        best: Optional[RouteEntry] = None
        for prefix, entry in routes.items():
            if path == prefix or path.startswith(prefix if prefix == "/" else prefix + "/"):
                if best is None or len(prefix) > len(best.path_prefix):
                    best = entry
        return best
