"""Spawner that runs the user server as a local subprocess.

The server binds port 0 and reports the kernel-assigned port both to the hub
(callback) and into a port file in this spawner's scratch directory, so poll
can report a concrete address and so state survives a hub restart.
"""

from __future__ import annotations

import logging
import os
import shlex
import signal
import subprocess
import sys
import tempfile
import time
from typing import Any, Optional

import psutil

from ..model import ExecutionStatus
from .base import (
    AlreadyRunning,
    MalformedState,
    NotRunning,
    Spawner,
    SpawnRequest,
    StartFailed,
)

log = logging.getLogger(__name__)

DEFAULT_CMD = f"{sys.executable} -m sessiongate.userserver"


class LocalProcessSpawner(Spawner):
    """Launch, poll, and terminate a per-user server on this host.

    Config keys: ``cmd`` (launch command line, default runs the bundled user
    server), ``spool_dir`` (scratch parent), ``stop_grace`` (seconds between
    SIGTERM and SIGKILL, default 5).
    """

    kind = "local"

    def __init__(self, config: dict[str, Any] | None = None) -> None:
        super().__init__(config)
        self._proc: Optional[subprocess.Popen] = None
        self._pid: Optional[int] = None
        self._create_time: Optional[float] = None
        self._scratch: Optional[str] = None
        self._port: Optional[int] = None
        self._stop_issued = False
        self._last_exit: Optional[int] = None

    # -- lifecycle ---------------------------------------------------------

    def start(self, request: SpawnRequest) -> None:
        if self._pid is not None and self.poll().state.value in ("pending", "running"):
            raise AlreadyRunning(f"server for {request.username!r} is still alive (pid {self._pid})")
        request.validate()

        spool = self.config.get("spool_dir") or tempfile.gettempdir()
        os.makedirs(spool, exist_ok=True)
        scratch = tempfile.mkdtemp(prefix=f"local-{request.username}-", dir=spool)
        port_file = os.path.join(scratch, "port")

        env = dict(os.environ)
        env.update(request.environment)
        env.setdefault("PORT", "0")
        env["SERVER_PORT_FILE"] = port_file
        # The server reports HOSTNAME in its callback address; a local process
        # is always reachable via loopback.
        env["HOSTNAME"] = "127.0.0.1"

        cmd = shlex.split(str(self.config.get("cmd", DEFAULT_CMD)))
        logfile = open(os.path.join(scratch, "server.log"), "ab")
        try:
            proc = subprocess.Popen(
                cmd,
                env=env,
                stdout=logfile,
                stderr=subprocess.STDOUT,
                start_new_session=True,
                cwd=scratch,
            )
        except OSError as exc:
            raise StartFailed(f"launch failed: {exc}") from exc
        finally:
            logfile.close()

        self._proc = proc
        self._pid = proc.pid
        self._scratch = scratch
        self._port = None
        self._stop_issued = False
        self._last_exit = None
        try:
            self._create_time = psutil.Process(proc.pid).create_time()
        except psutil.Error:
            # Process died between launch and inspection; poll reports Exited.
            self._create_time = None
        log.info("started local server for %s: pid=%d scratch=%s", request.username, proc.pid, scratch)

    def stop(self) -> None:
        if self._pid is None or self._stop_issued:
            raise NotRunning("no live server under management")
        self._stop_issued = True
        grace = float(self.config.get("stop_grace", 5.0))
        if not self._alive():
            return
        try:
            os.kill(self._pid, signal.SIGTERM)
        except ProcessLookupError:
            return
        deadline = time.monotonic() + grace
        while time.monotonic() < deadline:
            if not self._alive():
                return
            time.sleep(0.02)
        try:
            os.kill(self._pid, signal.SIGKILL)
        except ProcessLookupError:
            pass

    def poll(self) -> ExecutionStatus:
        if self._pid is None:
            return ExecutionStatus.unknown()
        if self._alive():
            port = self._read_port()
            if port is not None:
                return ExecutionStatus.running(f"127.0.0.1:{port}")
            return ExecutionStatus.pending()
        return ExecutionStatus.exited(self._exit_code())

    # -- persistence -------------------------------------------------------

    def get_state(self) -> dict[str, str]:
        state: dict[str, str] = {}
        if self._pid is not None:
            state["pid"] = str(self._pid)
        if self._create_time is not None:
            state["create_time"] = repr(self._create_time)
        if self._scratch is not None:
            state["scratch_dir"] = self._scratch
        port = self._read_port()
        if port is not None:
            state["port"] = str(port)
        return state

    def load_state(self, state: dict[str, str]) -> None:
        if "pid" not in state:
            raise MalformedState("local spawner state requires 'pid'")
        try:
            self._pid = int(state["pid"])
        except ValueError as exc:
            raise MalformedState(f"bad pid: {state['pid']!r}") from exc
        self._proc = None
        self._create_time = float(state["create_time"]) if "create_time" in state else None
        self._scratch = state.get("scratch_dir")
        self._port = int(state["port"]) if "port" in state else None
        self._stop_issued = False
        self._last_exit = None

    # -- helpers -----------------------------------------------------------

    def _alive(self) -> bool:
        if self._proc is not None:
            if self._proc.poll() is None:
                return True
            self._last_exit = self._proc.returncode
            return False
        if self._pid is None:
            return False
        try:
            proc = psutil.Process(self._pid)
            if self._create_time is not None and abs(proc.create_time() - self._create_time) > 1.0:
                return False  # pid reused by an unrelated process
            return proc.is_running() and proc.status() != psutil.STATUS_ZOMBIE
        except psutil.Error:
            return False

    def _exit_code(self) -> Optional[int]:
        # Only known while we still own the Popen handle; after a reload the
        # child was reparented and its status is unavailable.
        if self._last_exit is not None:
            return self._last_exit
        if self._proc is not None:
            return self._proc.poll()
        return None

    def _read_port(self) -> Optional[int]:
        if self._port is not None:
            return self._port
        if not self._scratch:
            return None
        try:
            with open(os.path.join(self._scratch, "port"), "r", encoding="ascii") as fh:
                self._port = int(fh.read().strip())
                return self._port
        except (OSError, ValueError):
            return None
