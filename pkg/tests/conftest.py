"""Shared fixtures: mock scheduler registry, dialect tool shims, gateways."""

from __future__ import annotations

import json
import os
import shutil
import signal
import sys
import time
from typing import Any, Callable, Optional

import pytest
import requests

from sessiongate.config import load_config
from sessiongate.gateway import GatewayServer
from sessiongate.hub import Hub
from sessiongate.mocksched import MockScheduler
from sessiongate.mocksched.cli import MockSchedulerDaemon

USER_SERVER_CMD = f"{sys.executable} -m sessiongate.userserver"

# tool names the builtin adapters invoke, mapped to the installed mock CLIs
SHIM_MAP = {
    "qsub": "msub",
    "sbatch": "msub",
    "condor_submit": "msub",
    "qstat": "mstat",
    "squeue": "mstat",
    "condor_q": "mstat",
    "qdel": "mdel",
    "scancel": "mdel",
    "condor_rm": "mdel",
}


def wait_until(predicate: Callable[[], bool], timeout: float = 10.0, interval: float = 0.02,
               message: str = "condition") -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return
        time.sleep(interval)
    raise AssertionError(f"timed out waiting for {message}")


@pytest.fixture
def sched_root(tmp_path):
    return str(tmp_path / "mocksched")


@pytest.fixture
def sched(sched_root):
    return MockScheduler(sched_root)


@pytest.fixture
def shim_bin(tmp_path):
    shim_dir = tmp_path / "shims"
    shim_dir.mkdir()
    for shim, real in SHIM_MAP.items():
        target = shutil.which(real)
        assert target, f"console script {real} is not installed"
        os.symlink(target, shim_dir / shim)
    return str(shim_dir)


@pytest.fixture
def mock_env(monkeypatch, sched_root, shim_bin, sched):
    """PATH shims + MOCK_SCHED_DIR so scheduler commands hit the mock."""
    monkeypatch.setenv("MOCK_SCHED_DIR", sched_root)
    monkeypatch.setenv("PATH", shim_bin + os.pathsep + os.environ.get("PATH", ""))
    return sched


@pytest.fixture
def daemon(mock_env, sched_root):
    d = MockSchedulerDaemon(sched_root, interval=0.02)
    d.start()
    yield d
    d.stop()
    _kill_mock_jobs(MockScheduler(sched_root))


def _kill_mock_jobs(sched: MockScheduler) -> None:
    for job in sched.jobs().values():
        pid = job.get("pid")
        if pid:
            try:
                os.killpg(int(pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError, OSError):
                pass


def default_profiles() -> dict[str, Any]:
    return {
        "default_profile_id": "batch-default",
        "profiles": [
            {
                "id": "batch-default",
                "display_name": "Batch job (default)",
                "spawner_kind": "batch",
                "config": {"adapter": "torque", "cmd": USER_SERVER_CMD},
            },
            {
                "id": "batch-highmem",
                "display_name": "Batch job (high memory)",
                "spawner_kind": "batch",
                "config": {"adapter": "slurm", "mem": "16gb", "cmd": USER_SERVER_CMD},
            },
            {
                "id": "batch-manycore",
                "display_name": "Batch job (many cores)",
                "spawner_kind": "batch",
                "config": {"adapter": "gridengine", "nprocs": 8, "cmd": USER_SERVER_CMD},
            },
            {
                "id": "local",
                "display_name": "Local process",
                "spawner_kind": "local",
                "config": {"cmd": USER_SERVER_CMD},
            },
        ],
    }


def free_port() -> int:
    import socket

    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class Gate:
    """One gateway under test: config file, hub, HTTP server, helpers.

    A bare Gate (no overrides) over an existing config file reuses it, so a
    restarted gateway keeps its public port and pending servers can still
    reach the callback endpoint.
    """

    def __init__(self, tmp_path, overrides: Optional[dict[str, Any]] = None,
                 reuse: bool = False) -> None:
        self.tmp_path = tmp_path
        self.config_path = str(tmp_path / "hub-config.json")
        if reuse and os.path.exists(self.config_path):
            pass  # restart case: keep the previous config, port included
        else:
            doc = {
                "listen_host": "127.0.0.1",
                "listen_port": free_port(),
                "trusted_proxy_addresses": ["127.0.0.1"],
                "admin_users": ["root"],
                "profiles": default_profiles(),
                "timeouts": {"startup": 15.0, "poll_interval": 0.05, "command": 10.0},
                "state_db_path": str(tmp_path / "state.json"),
                "spool_dir": str(tmp_path / "spool"),
                "host_map": {"mocknode*": "127.0.0.1"},
            }
            if overrides:
                doc.update(overrides)
            with open(self.config_path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh, indent=1)
        self.hub: Optional[Hub] = None
        self.gateway: Optional[GatewayServer] = None
        self.http = requests.Session()
        self.http.trust_env = False
        adapter = requests.adapters.HTTPAdapter(pool_connections=8, pool_maxsize=80)
        self.http.mount("http://", adapter)

    def start(self, recover: bool = True) -> "Gate":
        config = load_config(self.config_path)
        self.hub = Hub(config)
        if recover:
            self.hub.recover_state()
        self.gateway = GatewayServer(self.hub)
        self.gateway.start()
        return self

    @property
    def url(self) -> str:
        assert self.gateway is not None
        return self.gateway.url

    def headers(self, user: str = "alice") -> dict[str, str]:
        return {"X-Remote-User": user}

    def get(self, path: str, user: str = "alice", **kw) -> requests.Response:
        kw.setdefault("headers", self.headers(user))
        kw.setdefault("timeout", 10)
        return self.http.get(self.url + path, **kw)

    def post(self, path: str, user: str = "alice", json_body: Optional[dict] = None, **kw) -> requests.Response:
        kw.setdefault("headers", self.headers(user))
        kw.setdefault("timeout", 10)
        return self.http.post(self.url + path, json=json_body or {}, **kw)

    def status(self, user: str = "alice") -> dict:
        resp = self.get("/hub/api/status", user=user)
        assert resp.status_code == 200, resp.text
        return resp.json()

    def spawn(self, user: str = "alice", profile_id: Optional[str] = None) -> requests.Response:
        body = {"profile_id": profile_id} if profile_id else {}
        return self.post("/hub/api/spawn", user=user, json_body=body)

    def wait_phase(self, user: str, phase: str, timeout: float = 10.0) -> dict:
        last: dict = {}

        def reached() -> bool:
            nonlocal last
            last = self.status(user)
            if last["phase"] in ("failed", "stopped") and phase not in ("failed", "stopped"):
                raise AssertionError(f"session for {user} died: {last}")
            return last["phase"] == phase

        wait_until(reached, timeout, message=f"{user} to reach {phase} (last: {last})")
        return last

    def crash(self) -> None:
        """Simulate a hub kill: stop serving, abandon all supervision."""
        if self.gateway is not None:
            self.gateway.stop()
            self.gateway = None
        if self.hub is not None:
            self.hub.shutdown()
            self.hub = None

    def close(self) -> None:
        if self.hub is not None:
            for username in list(self.hub._sessions):
                self._kill_session(username)
        self.crash()

    def _kill_session(self, username: str) -> None:
        assert self.hub is not None
        record = self.hub.session_record(username)
        if record is None:
            return
        pid = record.spawner_state.get("pid")
        if pid:
            try:
                os.killpg(int(pid), signal.SIGKILL)
            except (ProcessLookupError, PermissionError, OSError):
                try:
                    os.kill(int(pid), signal.SIGKILL)
                except OSError:
                    pass


@pytest.fixture
def gate_factory(tmp_path, daemon):
    gates: list[Gate] = []

    def factory(overrides: Optional[dict[str, Any]] = None, start: bool = True,
                reuse: bool = False) -> Gate:
        gate = Gate(tmp_path, overrides, reuse=reuse)
        gates.append(gate)
        if start:
            gate.start()
        return gate

    yield factory
    for gate in gates:
        gate.close()


@pytest.fixture
def gate(gate_factory):
    return gate_factory()
