"""The pluggable spawner contract.

A spawner starts, stops, and polls exactly one user's backend server and can
render everything it needs to survive a hub restart into a flat string map.
Each instance is owned by a single session supervisor; start/stop/load_state
are never called concurrently on one instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..model import ExecutionStatus

REQUIRED_ENV_KEYS = ("GATEWAY_URL", "SESSION_TOKEN", "PATH_PREFIX")


class SpawnerError(Exception):
    """Base class for spawner failures."""


class StartFailed(SpawnerError):
    pass


class AlreadyRunning(SpawnerError):
    pass


class NotRunning(SpawnerError):
    pass


class MalformedState(SpawnerError):
    pass


@dataclass
class SpawnRequest:
    """Everything a spawner needs to launch a server for one user.

    ``environment`` must carry GATEWAY_URL, SESSION_TOKEN, and PATH_PREFIX;
    the spawned server uses them to call back and to serve under its prefix.
    """

    username: str
    environment: dict[str, str] = field(default_factory=dict)
    resource_hints: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        missing = [k for k in REQUIRED_ENV_KEYS if k not in self.environment]
        if missing:
            raise ValueError(f"spawn request missing environment keys: {missing}")


@dataclass
class SpawnerDescriptor:
    """Late-bound choice of spawner kind plus its fixed configuration."""

    kind: str
    config: dict[str, Any] = field(default_factory=dict)


class Spawner:
    """Base spawner API: start / stop / poll / get_state / load_state."""

    kind = "abstract"

    def __init__(self, config: dict[str, Any] | None = None) -> None:
        self.config: dict[str, Any] = dict(config or {})

    def start(self, request: SpawnRequest) -> None:
        """Record enough state (pid or job id) that poll/stop survive a restart.

        Raises AlreadyRunning if this instance already manages a live server,
        StartFailed if the launch or submission fails.
        """
        raise NotImplementedError

    def stop(self) -> None:
        """Request termination of the managed server.

        Raises NotRunning when no state is held.
        """
        raise NotImplementedError

    def poll(self) -> ExecutionStatus:
        """Idempotent snapshot of the current execution state.

        Absence of knowledge is ExecutionStatus.unknown(), not an error.
        """
        raise NotImplementedError

    def get_state(self) -> dict[str, str]:
        """Render process state into a flat string map."""
        raise NotImplementedError

    def load_state(self, state: dict[str, str]) -> None:
        """Reconstruct a fresh instance from a get_state() map.

        Raises MalformedState if required keys are missing.
        """
        raise NotImplementedError


_REGISTRY: dict[str, type[Spawner]] = {}


def register_spawner(kind: str, cls: type[Spawner]) -> None:
    _REGISTRY[kind] = cls


def spawner_kinds() -> list[str]:
    return sorted(_REGISTRY)


def create_spawner(kind: str, config: dict[str, Any] | None = None) -> Spawner:
    """Instantiate a registered spawner kind."""
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise KeyError(f"unknown spawner kind {kind!r}; registered: {spawner_kinds()}") from None
    return cls(config)
