"""The hub: authentication, tokens, session orchestration, persistence.

A single registry lock serializes all session mutations. Each session is
driven by one supervisor thread that starts the spawner, polls it, and feeds
lifecycle events back into the registry; HTTP handlers and the callback
endpoint feed events in from their own threads under the same lock. The full
registry is persisted as one JSON document, atomically replaced at every
phase change, and recovery reconstructs spawners from their state maps.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Any, Optional
from urllib.parse import urlsplit

from .auth import AuthContext, TokenStore, redact
from .config import HubConfig, reload_profiles
from .model import (
    ExecutionState,
    LifecycleEvent,
    LifecyclePhase,
    SessionRecord,
    UserRecord,
)
from .proxy import RouteTable
from .spawners.base import NotRunning, SpawnRequest
from .spawners.batch import QueryFailed
from .spawners.wrap import (
    OptionsSelection,
    ProfileCatalog,
    UnknownProfile,
    WrapperSpawner,
    apply_selection,
    build_options_form,
)

log = logging.getLogger(__name__)


class ApiError(Exception):
    """Domain error carrying its HTTP mapping."""

    def __init__(self, status: int, code: str, detail: str = "", payload: Optional[dict] = None) -> None:
        super().__init__(detail or code)
        self.status = status
        self.code = code
        self.detail = detail
        self.payload = payload or {}


class CorruptStateDb(Exception):
    """The state database cannot be parsed; refuse to start."""


class Hub:
    def __init__(self, config: HubConfig, routes: Optional[RouteTable] = None) -> None:
        self.config = config
        self.routes = routes if routes is not None else RouteTable()
        self.tokens = TokenStore()
        self._catalog = config.profiles
        self._sessions: dict[str, SessionRecord] = {}
        self._spawners: dict[str, WrapperSpawner] = {}
        self._supervisors: dict[str, _Supervisor] = {}
        self._users: dict[str, UserRecord] = {}
        self._phase_history: dict[str, list[str]] = {}
        self._lock = threading.RLock()
        self._closed = threading.Event()
        os.makedirs(config.spool_dir, exist_ok=True)

    # -- users ---------------------------------------------------------------

    def ensure_user(self, username: str) -> UserRecord:
        with self._lock:
            user = self._users.get(username)
            if user is None:
                user = UserRecord(
                    username=username,
                    created_at=time.time(),
                    admin=username in self.config.admin_users,
                )
                self._users[username] = user
                self._persist_locked()
            return user

    # -- catalog ---------------------------------------------------------------

    @property
    def catalog(self) -> ProfileCatalog:
        return self._catalog

    def options_form(self) -> dict[str, Any]:
        with self._lock:
            return build_options_form(self._catalog).to_dict()

    def reload_catalog(self) -> ProfileCatalog:
        """Swap in the profiles block re-read from the config file."""
        catalog = reload_profiles(self.config)
        with self._lock:
            self._catalog = catalog
        log.info("profile catalog reloaded: %d profiles", len(catalog.profiles))
        return catalog

    # -- spawn / stop / status ---------------------------------------------------

    def _prefix(self, username: str) -> str:
        return f"/user/{username}"

    def _base_spawner_config(self) -> dict[str, Any]:
        return {
            "spool_dir": self.config.spool_dir,
            "command_timeout": self.config.timeouts.command,
        }

    def request_spawn(self, auth: AuthContext, selection: Optional[OptionsSelection]) -> dict[str, Any]:
        username = auth.username
        self.ensure_user(username)
        with self._lock:
            existing = self._sessions.get(username)
            if existing is not None and not existing.phase.terminal:
                raise ApiError(
                    409, "session_exists", f"session for {username} already in {existing.phase.value}",
                    payload={"session": self._status_doc_locked(username)},
                )
            if selection is None:
                selection = OptionsSelection(self._catalog.default_profile_id)
            try:
                descriptor = apply_selection(self._catalog, selection)
            except UnknownProfile as exc:
                raise ApiError(400, "unknown_profile", str(exc)) from exc

            merged = self._base_spawner_config()
            merged.update(descriptor.config)
            descriptor.config = merged
            spawner = WrapperSpawner(descriptor=descriptor)

            token = self.tokens.issue(username, self.config.token_ttl)
            record = SessionRecord(
                username=username,
                spawner_kind=descriptor.kind,
                profile_id=selection.profile_id,
                token_id=token.token,
                requested_at=time.time(),
            )
            record.transition(LifecycleEvent.SPAWN_REQUESTED)
            self._phase_history[username] = [record.phase.value]
            self._sessions[username] = record
            self._spawners[username] = spawner
            request = SpawnRequest(
                username=username,
                environment={
                    "GATEWAY_URL": self.config.effective_public_url(),
                    "SESSION_TOKEN": token.token,
                    "PATH_PREFIX": self._prefix(username),
                },
            )
            self._persist_locked()
            supervisor = _Supervisor(self, username, spawner, request=request,
                                     fresh=True, record=record)
            self._supervisors[username] = supervisor
            supervisor.start()
            log.info("spawn requested: user=%s profile=%s token=%s",
                     username, selection.profile_id, redact(token.token))
            return self._status_doc_locked(username)

    def request_stop(self, auth: AuthContext) -> dict[str, Any]:
        username = auth.username
        with self._lock:
            record = self._sessions.get(username)
            if record is None or record.phase.terminal:
                raise ApiError(404, "no_session", f"no active session for {username}")
            # Remove the route before the spawner is told to stop, so no
            # request is ever proxied to a half-dead backend.
            self.routes.remove_route(self._prefix(username))
            self.tokens.revoke(record.token_id)
            if record.phase is not LifecyclePhase.STOPPING:
                self._apply_event_locked(record, LifecycleEvent.STOP_REQUESTED)
            self._persist_locked()
            doc = self._status_doc_locked(username)
            supervisor = self._supervisors.get(username)
        if supervisor is not None:
            supervisor.wake.set()
        log.info("stop requested: user=%s", username)
        return doc

    def get_session_status(self, auth: AuthContext) -> dict[str, Any]:
        self.ensure_user(auth.username)
        with self._lock:
            return self._status_doc_locked(auth.username)

    def _status_doc_locked(self, username: str) -> dict[str, Any]:
        record = self._sessions.get(username)
        if record is None:
            return {
                "username": username,
                "phase": LifecyclePhase.IDLE.value,
                "profile_id": None,
                "address": None,
                "url": None,
                "failure_reason": None,
                "since": None,
            }
        if record.phase is LifecyclePhase.RUNNING:
            since = record.started_at
        elif record.phase.terminal:
            since = record.stopped_at
        else:
            since = record.requested_at
        return {
            "username": username,
            "phase": record.phase.value,
            "profile_id": record.profile_id or None,
            "address": record.address,
            "url": self._prefix(username) + "/" if record.phase is LifecyclePhase.RUNNING else None,
            "failure_reason": record.failure_reason,
            "since": since,
        }

    # -- callback / tokens -------------------------------------------------------

    def introspect(self, token_string: str) -> dict[str, Any]:
        username, valid = self.tokens.introspect(token_string)
        return {"username": username if valid else None, "valid": valid}

    def server_callback(self, token_string: str, address: str) -> dict[str, Any]:
        username, valid = self.tokens.introspect(token_string)
        if not valid or not username:
            raise ApiError(401, "invalid_token", "callback token is not valid")
        host, _, port = str(address).rpartition(":")
        if not host or not port.isdigit():
            raise ApiError(400, "bad_address", f"address must be host:port, got {address!r}")
        with self._lock:
            record = self._sessions.get(username)
            if record is None or record.token_id != token_string:
                raise ApiError(401, "invalid_token", "token does not match an active session")
            target = f"{self.config.resolve_host(host)}:{port}"
            if (
                record.phase is LifecyclePhase.RUNNING
                and record.address == f"http://{target}{self._prefix(username)}"
            ):
                # retransmitted callback (the server's first POST timed out
                # client-side); acknowledge idempotently
                return self._status_doc_locked(username)
            chain = {
                LifecyclePhase.SUBMITTING: [
                    LifecycleEvent.SUBMITTED,
                    LifecycleEvent.SCHEDULER_RUNNING,
                    LifecycleEvent.CALLBACK_RECEIVED,
                ],
                LifecyclePhase.PENDING: [
                    LifecycleEvent.SCHEDULER_RUNNING,
                    LifecycleEvent.CALLBACK_RECEIVED,
                ],
                LifecyclePhase.STARTING: [LifecycleEvent.CALLBACK_RECEIVED],
            }.get(record.phase)
            if chain is None:
                raise ApiError(
                    409, "wrong_phase", f"callback not expected in phase {record.phase.value}"
                )
            for event in chain[:-1]:
                self._apply_event_locked(record, event, persist=False)
            self._apply_event_locked(
                record, chain[-1],
                address=f"http://{target}{self._prefix(username)}",
                persist=False,
            )
            self.routes.add_route(self._prefix(username), target)
            self._refresh_spawner_state_locked(username)
            self._persist_locked()
            log.info("callback accepted: user=%s target=%s", username, target)
            return self._status_doc_locked(username)

    # -- event plumbing ------------------------------------------------------------

    def _apply_event_locked(
        self,
        record: SessionRecord,
        event: LifecycleEvent,
        reason: Optional[str] = None,
        address: Optional[str] = None,
        persist: bool = True,
    ) -> None:
        record.transition(event)
        self._phase_history.setdefault(record.username, []).append(record.phase.value)
        now = time.time()
        if record.phase is LifecyclePhase.RUNNING:
            record.started_at = now
            if address is not None:
                record.address = address
        else:
            record.address = None
        if record.phase.terminal:
            record.stopped_at = now
            if record.phase is LifecyclePhase.FAILED and reason:
                record.failure_reason = reason
            self.routes.remove_route(self._prefix(record.username))
            self.tokens.revoke(record.token_id)
        if persist:
            self._persist_locked()

    def _supervisor_event(
        self,
        username: str,
        event: LifecycleEvent,
        reason: Optional[str] = None,
        expected: Optional[SessionRecord] = None,
    ) -> None:
        with self._lock:
            record = self._sessions.get(username)
            if record is None or record.phase.terminal:
                return
            if expected is not None and record is not expected:
                return  # the session was replaced under this supervisor
            self._apply_event_locked(record, event, reason=reason)
            if reason:
                log.warning("session %s -> %s: %s", username, record.phase.value, reason)

    def _refresh_spawner_state_locked(self, username: str) -> bool:
        spawner = self._spawners.get(username)
        record = self._sessions.get(username)
        if spawner is None or record is None:
            return False
        try:
            state = spawner.get_state()
        except Exception:
            return False
        if state != record.spawner_state:
            record.spawner_state = state
            return True
        return False

    def _reconcile(self, username: str, status, expected: Optional[SessionRecord] = None) -> None:
        """Map one poll result onto lifecycle events. Called by supervisors."""
        with self._lock:
            record = self._sessions.get(username)
            if record is None or record.phase.terminal:
                return
            if expected is not None and record is not expected:
                return
            dirty = self._refresh_spawner_state_locked(username)
            phase, state = record.phase, status.state
            if phase is LifecyclePhase.PENDING:
                if state is ExecutionState.RUNNING:
                    self._apply_event_locked(record, LifecycleEvent.SCHEDULER_RUNNING)
                    return
                if state is ExecutionState.EXITED:
                    self._apply_event_locked(
                        record, LifecycleEvent.ERROR,
                        reason=f"server exited before starting (code {status.exit_code})")
                    return
                if state is ExecutionState.UNKNOWN:
                    self._apply_event_locked(record, LifecycleEvent.ERROR,
                                             reason="job vanished before starting")
                    return
            elif phase is LifecyclePhase.STARTING:
                if state is ExecutionState.EXITED:
                    self._apply_event_locked(
                        record, LifecycleEvent.ERROR,
                        reason=f"server exited before callback (code {status.exit_code})")
                    return
                if state is ExecutionState.UNKNOWN:
                    self._apply_event_locked(record, LifecycleEvent.ERROR,
                                             reason="job vanished before callback")
                    return
            elif phase is LifecyclePhase.RUNNING:
                if state is ExecutionState.EXITED:
                    self._apply_event_locked(
                        record, LifecycleEvent.EXIT_OBSERVED,
                        reason=f"server exited unexpectedly (code {status.exit_code})")
                    return
                if state is ExecutionState.UNKNOWN:
                    self._apply_event_locked(record, LifecycleEvent.EXIT_OBSERVED,
                                             reason="server vanished")
                    return
            elif phase is LifecyclePhase.STOPPING:
                if state in (ExecutionState.EXITED, ExecutionState.UNKNOWN):
                    self._apply_event_locked(record, LifecycleEvent.EXIT_OBSERVED)
                    return
            if dirty:
                self._persist_locked()

    # -- persistence ---------------------------------------------------------------

    def persist_state(self) -> None:
        with self._lock:
            self._persist_locked()

    def _persist_locked(self) -> None:
        doc = {
            "version": 1,
            "sessions": {u: r.to_dict() for u, r in self._sessions.items()},
            "users": {u: rec.to_dict() for u, rec in self._users.items()},
            "tokens": self.tokens.to_dict(),
        }
        path = self.config.state_db_path
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, indent=1, sort_keys=True))
        os.chmod(tmp, 0o600)
        os.replace(tmp, path)

    def recover_state(self) -> None:
        """Reload the registry, reconstruct spawners, and resume supervision.

        Running sessions that still answer a poll get their route back; any
        session whose state cannot be reattached is marked Failed.
        """
        path = self.config.state_db_path
        if not os.path.exists(path) or os.path.getsize(path) == 0:
            return
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
            sessions = {u: SessionRecord.from_dict(d) for u, d in doc.get("sessions", {}).items()}
            users = {u: UserRecord.from_dict(d) for u, d in doc.get("users", {}).items()}
            tokens = doc.get("tokens", {})
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptStateDb(f"state db {path!r} is unreadable: {exc}") from exc

        with self._lock:
            self._users = users
            self.tokens.load_dict(tokens)
            self._sessions = sessions
            for username, record in sessions.items():
                if record.phase.terminal:
                    continue
                self._recover_session_locked(username, record)
            self._persist_locked()

    def _recover_session_locked(self, username: str, record: SessionRecord) -> None:
        spawner = WrapperSpawner()
        try:
            spawner.load_state(dict(record.spawner_state))
        except Exception as exc:
            log.warning("cannot reattach session for %s: %s", username, exc)
            self._apply_event_locked(record, LifecycleEvent.ERROR,
                                     reason=f"unrecoverable spawner state: {exc}", persist=False)
            return
        self._spawners[username] = spawner
        try:
            status = spawner.poll()
        except Exception as exc:
            self._apply_event_locked(record, LifecycleEvent.ERROR,
                                     reason=f"unreachable after restart: {exc}", persist=False)
            return
        if record.phase is LifecyclePhase.RUNNING:
            if status.state is ExecutionState.RUNNING and record.address:
                target = urlsplit(record.address).netloc
                self.routes.add_route(self._prefix(username), target)
            else:
                self._apply_event_locked(record, LifecycleEvent.EXIT_OBSERVED,
                                         reason="server gone after hub restart", persist=False)
                return
        supervisor = _Supervisor(self, username, spawner, request=None,
                                 fresh=False, record=record)
        self._supervisors[username] = supervisor
        supervisor.start()

    # -- auditing ------------------------------------------------------------------

    def audit_coherence(self) -> list[str]:
        """Route table vs registry: at quiescence, routes == Running sessions."""
        problems: list[str] = []
        with self._lock:
            expected: dict[str, str] = {}
            for username, record in self._sessions.items():
                if record.phase is LifecyclePhase.RUNNING:
                    if not record.address:
                        problems.append(f"running session {username} has no address")
                        continue
                    expected[self._prefix(username)] = urlsplit(record.address).netloc
            actual = {prefix: entry.target for prefix, entry in self.routes.routes().items()}
        for prefix, target in expected.items():
            if prefix not in actual:
                problems.append(f"missing route {prefix} -> {target}")
            elif actual[prefix] != target:
                problems.append(f"route {prefix} points at {actual[prefix]}, expected {target}")
        for prefix in actual:
            if prefix not in expected:
                problems.append(f"stale route {prefix} -> {actual[prefix]}")
        return problems

    # -- hub process lifecycle -------------------------------------------------------

    def shutdown(self, join_timeout: float = 5.0) -> None:
        """Stop supervision without touching the spawned servers."""
        self._closed.set()
        with self._lock:
            supervisors = list(self._supervisors.values())
        for sup in supervisors:
            sup.wake.set()
        for sup in supervisors:
            sup.join(timeout=join_timeout)

    # test hooks: registry snapshots for assertions
    def session_record(self, username: str) -> Optional[SessionRecord]:
        with self._lock:
            record = self._sessions.get(username)
            return SessionRecord.from_dict(record.to_dict()) if record else None

    def phase_history(self, username: str) -> list[str]:
        with self._lock:
            return list(self._phase_history.get(username, []))


class _Supervisor(threading.Thread):
    """Drives one session: start, poll loop, stop, timeout."""

    def __init__(self, hub: Hub, username: str, spawner: WrapperSpawner,
                 request: Optional[SpawnRequest], fresh: bool,
                 record: Optional[SessionRecord] = None) -> None:
        super().__init__(name=f"supervisor-{username}", daemon=True)
        self.hub = hub
        self.username = username
        self.spawner = spawner
        self.request = request
        self.fresh = fresh
        self.record = record
        self.wake = threading.Event()
        self._stop_issued = False

    def run(self) -> None:
        hub, username, record = self.hub, self.username, self.record
        if self.fresh and self.request is not None:
            try:
                self.spawner.start(self.request)
            except Exception as exc:
                detail = str(exc) or exc.__class__.__name__
                hub._supervisor_event(username, LifecycleEvent.ERROR,
                                      f"start failed: {detail}", expected=record)
                return
            with hub._lock:
                if hub._sessions.get(username) is not record or record is None:
                    return
                hub._refresh_spawner_state_locked(username)
                if record.phase is LifecyclePhase.SUBMITTING:
                    hub._apply_event_locked(record, LifecycleEvent.SUBMITTED, persist=False)
                hub._persist_locked()

        while not hub._closed.is_set():
            with hub._lock:
                current = hub._sessions.get(username)
                if current is None or current is not record or current.phase.terminal:
                    return
                phase = current.phase
                requested_at = current.requested_at or time.time()

            if phase is LifecyclePhase.STOPPING and not self._stop_issued:
                self._stop_issued = True
                try:
                    self.spawner.stop()
                except NotRunning:
                    pass
                except Exception as exc:
                    hub._supervisor_event(username, LifecycleEvent.ERROR,
                                          f"stop failed: {exc}", expected=record)
                    return

            startup_timeout = hub.config.timeouts.startup
            if (
                phase in (LifecyclePhase.PENDING, LifecyclePhase.STARTING)
                and time.time() - requested_at > startup_timeout
            ):
                hub._supervisor_event(username, LifecycleEvent.TIMEOUT,
                                      "startup timeout", expected=record)
                try:
                    self.spawner.stop()
                except Exception:
                    pass
                return

            try:
                status = self.spawner.poll()
            except QueryFailed as exc:
                hub._supervisor_event(username, LifecycleEvent.ERROR,
                                      f"scheduler status unavailable: {exc}", expected=record)
                return
            except Exception as exc:
                hub._supervisor_event(username, LifecycleEvent.ERROR,
                                      f"poll failed: {exc}", expected=record)
                return

            hub._reconcile(username, status, expected=record)

            self.wake.wait(hub.config.timeouts.poll_interval)
            self.wake.clear()
