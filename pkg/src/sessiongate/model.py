"""Domain types shared by the hub, proxy, and spawners.

The session lifecycle state machine lives here: phases, events, and the
transition table. Everything in this module is a pure value type or a pure
function; mutation of records happens only inside the hub registry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

USERNAME_RE = re.compile(r"^[a-z0-9][a-z0-9._-]{0,63}$")


class InvalidUsername(ValueError):
    """The raw username cannot be normalized into a legal identifier."""


class IllegalTransition(Exception):
    """A (phase, event) pair outside the lifecycle transition table."""

    def __init__(self, phase: "LifecyclePhase", event: "LifecycleEvent") -> None:
        super().__init__(f"illegal transition: {phase.value} + {event.value}")
        self.phase = phase
        self.event = event


def normalize_username(raw: str) -> str:
    """Lowercase and validate a raw username (e.g. an SSO header value).

    Only ``[a-z0-9][a-z0-9._-]{0,63}`` survives; anything else (control
    characters, header-injection attempts, overlong names) raises
    InvalidUsername.
    """
    if not isinstance(raw, str):
        raise InvalidUsername("username must be a string")
    name = raw.lower()
    if not USERNAME_RE.fullmatch(name):
        raise InvalidUsername(f"invalid username: {raw!r}")
    return name


class LifecyclePhase(str, Enum):
    IDLE = "idle"
    SUBMITTING = "submitting"
    PENDING = "pending"
    STARTING = "starting"
    RUNNING = "running"
    STOPPING = "stopping"
    STOPPED = "stopped"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_PHASES


class LifecycleEvent(str, Enum):
    SPAWN_REQUESTED = "spawn_requested"
    SUBMITTED = "submitted"
    SCHEDULER_RUNNING = "scheduler_running"
    CALLBACK_RECEIVED = "callback_received"
    STOP_REQUESTED = "stop_requested"
    EXIT_OBSERVED = "exit_observed"
    TIMEOUT = "timeout"
    ERROR = "error"


TERMINAL_PHASES = frozenset({LifecyclePhase.STOPPED, LifecyclePhase.FAILED})
NON_TERMINAL_PHASES = tuple(p for p in LifecyclePhase if p not in TERMINAL_PHASES)


def _build_transition_table() -> dict[tuple[LifecyclePhase, LifecycleEvent], LifecyclePhase]:
    P, E = LifecyclePhase, LifecycleEvent
    table = {
        (P.IDLE, E.SPAWN_REQUESTED): P.SUBMITTING,
        (P.SUBMITTING, E.SUBMITTED): P.PENDING,
        (P.PENDING, E.SCHEDULER_RUNNING): P.STARTING,
        (P.STARTING, E.CALLBACK_RECEIVED): P.RUNNING,
        (P.STOPPING, E.EXIT_OBSERVED): P.STOPPED,
        # An exit observed while Running is a crash, not a user stop.
        (P.RUNNING, E.EXIT_OBSERVED): P.FAILED,
        (P.PENDING, E.TIMEOUT): P.FAILED,
        (P.STARTING, E.TIMEOUT): P.FAILED,
    }
    for phase in NON_TERMINAL_PHASES:
        table[(phase, E.STOP_REQUESTED)] = P.STOPPING
        table[(phase, E.ERROR)] = P.FAILED
    return table


TRANSITIONS = _build_transition_table()


def session_transition(phase: LifecyclePhase, event: LifecycleEvent) -> LifecyclePhase:
    """Return the successor phase, or raise IllegalTransition.

    Terminal phases (Stopped, Failed) accept no events; a terminal record is
    replaced wholesale on the next spawn request rather than transitioned.
    """
    try:
        return TRANSITIONS[(phase, event)]
    except KeyError:
        raise IllegalTransition(phase, event) from None


class ExecutionState(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    EXITED = "exited"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class ExecutionStatus:
    """Poll result vocabulary: Pending | Running(address?) | Exited(code?) | Unknown.

    ``address`` is ``host`` or ``host:port``. Running with no address is only
    legal for batch jobs whose node is known but whose port callback has not
    arrived yet.
    """

    state: ExecutionState
    address: Optional[str] = None
    exit_code: Optional[int] = None

    def __post_init__(self) -> None:
        if self.address is not None and self.state is not ExecutionState.RUNNING:
            raise ValueError("address is only meaningful for Running")
        if self.exit_code is not None and self.state is not ExecutionState.EXITED:
            raise ValueError("exit_code is only meaningful for Exited")

    @classmethod
    def pending(cls) -> "ExecutionStatus":
        return cls(ExecutionState.PENDING)

    @classmethod
    def running(cls, address: Optional[str] = None) -> "ExecutionStatus":
        return cls(ExecutionState.RUNNING, address=address)

    @classmethod
    def exited(cls, exit_code: Optional[int] = None) -> "ExecutionStatus":
        return cls(ExecutionState.EXITED, exit_code=exit_code)

    @classmethod
    def unknown(cls) -> "ExecutionStatus":
        return cls(ExecutionState.UNKNOWN)


@dataclass
class UserRecord:
    username: str
    created_at: float
    admin: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"username": self.username, "created_at": self.created_at, "admin": self.admin}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "UserRecord":
        return cls(
            username=data["username"],
            created_at=float(data["created_at"]),
            admin=bool(data.get("admin", False)),
        )


@dataclass
class Profile:
    """Administrator-defined pairing of spawner kind and fixed configuration."""

    id: str
    display_name: str
    spawner_kind: str
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "display_name": self.display_name,
            "spawner_kind": self.spawner_kind,
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Profile":
        return cls(
            id=str(data["id"]),
            display_name=str(data.get("display_name", data["id"])),
            spawner_kind=str(data["spawner_kind"]),
            config=dict(data.get("config", {})),
        )


@dataclass
class SessionRecord:
    """Persistent per-user server record.

    ``spawner_state`` is an opaque string map owned by the spawner; the hub
    only stores and replays it. ``address`` is the full user-facing URL and is
    present exactly when the phase is Running.
    """

    username: str
    phase: LifecyclePhase = LifecyclePhase.IDLE
    spawner_kind: str = ""
    profile_id: str = ""
    spawner_state: dict[str, str] = field(default_factory=dict)
    address: Optional[str] = None
    token_id: str = ""
    requested_at: Optional[float] = None
    started_at: Optional[float] = None
    stopped_at: Optional[float] = None
    failure_reason: Optional[str] = None

    def transition(self, event: LifecycleEvent) -> LifecyclePhase:
        self.phase = session_transition(self.phase, event)
        return self.phase

    def validate(self) -> None:
        has_addr = self.address is not None
        if has_addr != (self.phase is LifecyclePhase.RUNNING):
            raise ValueError(
                f"address {'present' if has_addr else 'absent'} in phase {self.phase.value}"
            )
        for key, value in self.spawner_state.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise ValueError("spawner_state must map strings to strings")

    def to_dict(self) -> dict[str, Any]:
        return {
            "username": self.username,
            "phase": self.phase.value,
            "spawner_kind": self.spawner_kind,
            "profile_id": self.profile_id,
            "spawner_state": dict(self.spawner_state),
            "address": self.address,
            "token_id": self.token_id,
            "requested_at": self.requested_at,
            "started_at": self.started_at,
            "stopped_at": self.stopped_at,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SessionRecord":
        return cls(
            username=data["username"],
            phase=LifecyclePhase(data["phase"]),
            spawner_kind=data.get("spawner_kind", ""),
            profile_id=data.get("profile_id", ""),
            spawner_state={str(k): str(v) for k, v in data.get("spawner_state", {}).items()},
            address=data.get("address"),
            token_id=data.get("token_id", ""),
            requested_at=data.get("requested_at"),
            started_at=data.get("started_at"),
            stopped_at=data.get("stopped_at"),
            failure_reason=data.get("failure_reason"),
        )
