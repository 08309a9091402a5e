"""The shared lifecycle suite, run identically against all four dialects.

Twelve scenarios (submit, pending, running-host discovery, callback, stop,
cancel-while-pending, timeout, vanish, restart-recover, double-spawn,
poll-idempotence, state-round-trip) exercised with zero adapter-specific
code: the parametrized adapter name selects a profile whose config differs
only in template strings and patterns.
"""

from __future__ import annotations

import shlex

import pytest

from sessiongate.model import ExecutionState
from sessiongate.spawners.batch import BatchSpawner, get_adapter
from sessiongate.spawners.base import SpawnRequest

from conftest import USER_SERVER_CMD, wait_until

ADAPTERS = ["torque", "slurm", "condor", "gridengine"]


def profiles_for(adapter: str) -> dict:
    return {
        "default_profile_id": "job",
        "profiles": [
            {"id": "job", "display_name": "Batch job", "spawner_kind": "batch",
             "config": {"adapter": adapter, "cmd": USER_SERVER_CMD}},
            {"id": "hold", "display_name": "Batch job that never calls back",
             "spawner_kind": "batch",
             "config": {"adapter": adapter, "cmd": "sleep 600"}},
        ],
    }


@pytest.fixture(params=ADAPTERS)
def adapter(request):
    return request.param


@pytest.fixture
def dialect_gate(adapter, gate_factory):
    def build(**overrides):
        doc = {"profiles": profiles_for(adapter)}
        doc.update(overrides)
        return gate_factory(doc)

    return build


class TestDialectLifecycle:
    def test_01_submit_registers_job(self, adapter, dialect_gate, mock_env):
        mock_env.set_pending_delay(30)
        gate = dialect_gate()
        gate.spawn("u1", "job")
        wait_until(lambda: gate.status("u1")["phase"] in ("pending", "starting"),
                   timeout=10, message="submission")
        record = gate.hub.session_record("u1")
        assert record.spawner_state.get("job_id")
        jobs = mock_env.jobs()
        assert len(jobs) == 1
        assert next(iter(jobs.values()))["dialect"] == adapter

    def test_02_pending_while_queued(self, adapter, dialect_gate, mock_env):
        mock_env.set_pending_delay(30)
        gate = dialect_gate()
        gate.spawn("u2", "job")
        wait_until(lambda: gate.status("u2")["phase"] == "pending", timeout=10,
                   message="pending")
        assert next(iter(mock_env.jobs().values()))["state"] == "Q"
        assert gate.status("u2")["address"] is None

    def test_03_running_host_discovered_before_callback(self, adapter, dialect_gate, mock_env):
        gate = dialect_gate()
        gate.spawn("u3", "hold")  # the job never phones home
        wait_until(lambda: gate.status("u3")["phase"] == "starting", timeout=10,
                   message="host discovery")
        # host came from the dialect's status line; no callback, no address
        assert gate.status("u3")["address"] is None
        job = next(iter(mock_env.jobs().values()))
        assert job["assigned_host"].startswith("mocknode")

    def test_04_callback_completes_startup(self, adapter, dialect_gate):
        gate = dialect_gate()
        gate.spawn("u4", "job")
        doc = gate.wait_phase("u4", "running")
        record = gate.hub.session_record("u4")
        assert record.address and "127.0.0.1" in record.address
        token = record.token_id
        ping = gate.http.get(gate.url + "/user/u4/ping",
                             headers={"Authorization": f"Bearer {token}"}, timeout=10)
        assert ping.status_code == 200 and ping.text == "pong"
        assert doc["url"] == "/user/u4/"

    def test_05_stop_cancels_and_reaches_stopped(self, adapter, dialect_gate, mock_env):
        gate = dialect_gate()
        gate.spawn("u5", "job")
        gate.wait_phase("u5", "running")
        gate.post("/hub/api/stop", "u5")
        gate.wait_phase("u5", "stopped")
        job = next(iter(mock_env.jobs().values()))
        assert job["state"] in ("C", "E")
        assert gate.hub.audit_coherence() == []

    def test_06_cancel_while_pending(self, adapter, dialect_gate, mock_env):
        mock_env.set_pending_delay(60)
        gate = dialect_gate()
        gate.spawn("u6", "job")
        wait_until(lambda: gate.status("u6")["phase"] == "pending", timeout=10,
                   message="pending")
        gate.post("/hub/api/stop", "u6")
        gate.wait_phase("u6", "stopped")
        assert next(iter(mock_env.jobs().values()))["state"] == "C"
        # the dialect's own cancel tool was invoked
        cancel_tool = shlex.split(get_adapter(adapter).cancel_command)[0]
        assert any(argv[0] == cancel_tool for argv in mock_env.read_trace())

    def test_07_timeout_fails_and_cancels(self, adapter, dialect_gate, mock_env):
        mock_env.set_pending_delay(60)
        gate = dialect_gate(timeouts={"startup": 0.6, "poll_interval": 0.05, "command": 10})
        gate.spawn("u7", "job")
        wait_until(lambda: gate.status("u7")["phase"] == "failed", timeout=10,
                   message="timeout")
        assert gate.status("u7")["failure_reason"] == "startup timeout"
        # the cancel command is issued right after the phase flips
        wait_until(lambda: next(iter(mock_env.jobs().values()))["state"] == "C",
                   timeout=10, message="job cancel after timeout")

    def test_08_vanish_while_running(self, adapter, dialect_gate, mock_env):
        gate = dialect_gate()
        gate.spawn("u8", "job")
        gate.wait_phase("u8", "running")
        mock_env.cancel(gate.hub.session_record("u8").spawner_state["job_id"])
        wait_until(lambda: gate.status("u8")["phase"] == "failed", timeout=10,
                   message="vanish detection")
        assert gate.hub.audit_coherence() == []

    def test_09_restart_recover(self, adapter, dialect_gate):
        gate = dialect_gate()
        gate.spawn("u9", "job")
        gate.wait_phase("u9", "running")
        token = gate.hub.session_record("u9").token_id
        gate.crash()
        revived = dialect_gate()
        assert revived.status("u9")["phase"] == "running"
        ping = revived.http.get(revived.url + "/user/u9/ping",
                                headers={"Authorization": f"Bearer {token}"}, timeout=10)
        assert ping.status_code == 200
        assert revived.hub.audit_coherence() == []
        revived.post("/hub/api/stop", "u9")
        revived.wait_phase("u9", "stopped")

    def test_10_double_spawn_conflict(self, adapter, dialect_gate, mock_env):
        mock_env.set_pending_delay(30)
        gate = dialect_gate()
        assert gate.spawn("u10", "job").status_code == 202
        assert gate.spawn("u10", "job").status_code == 409
        wait_until(lambda: gate.status("u10")["phase"] == "pending", timeout=10,
                   message="single submission")
        assert len(mock_env.jobs()) == 1

    def test_11_poll_idempotence_under_frozen_clock(self, adapter, daemon, mock_env, tmp_path):
        mock_env.set_clock_mode("frozen")
        mock_env.set_pending_delay(50)
        spawner = BatchSpawner({"adapter": adapter, "cmd": "sleep 600",
                                "spool_dir": str(tmp_path / "spool")})
        spawner.start(_request())
        assert spawner.poll() == spawner.poll()
        assert spawner.poll().state is ExecutionState.PENDING
        mock_env.advance(60)
        wait_until(lambda: spawner.poll().state is ExecutionState.RUNNING, timeout=10,
                   message="running after advance")
        assert spawner.poll() == spawner.poll()
        spawner.stop()

    def test_12_state_round_trip(self, adapter, daemon, mock_env, tmp_path):
        mock_env.set_clock_mode("frozen")
        mock_env.set_pending_delay(50)
        spawner = BatchSpawner({"adapter": adapter, "cmd": "sleep 600",
                                "spool_dir": str(tmp_path / "spool")})
        spawner.start(_request())
        state = spawner.get_state()
        fresh = BatchSpawner()
        fresh.load_state(dict(state))
        assert fresh.poll() == spawner.poll()
        assert fresh.get_state()["job_id"] == state["job_id"]
        fresh.stop()
        assert fresh.poll().state is ExecutionState.UNKNOWN


def _request() -> SpawnRequest:
    return SpawnRequest(
        username="u11",
        environment={"GATEWAY_URL": "http://127.0.0.1:1", "SESSION_TOKEN": "t",
                     "PATH_PREFIX": "/user/u11"},
    )


def test_phase_trace_identical_across_dialects(gate_factory, mock_env):
    """Same scenario, same observable phase sequence, for every dialect."""
    mock_env.set_pending_delay(0.4)
    traces = {}
    for adapter in ADAPTERS:
        user = f"eq-{adapter}"
        gate = gate_factory({"profiles": profiles_for(adapter)})
        gate.spawn(user, "job")
        gate.wait_phase(user, "running")
        gate.post("/hub/api/stop", user)
        gate.wait_phase(user, "stopped")
        traces[adapter] = gate.hub.phase_history(user)
        gate.crash()
    reference = traces[ADAPTERS[0]]
    assert reference[0] == "submitting" and reference[-1] == "stopped"
    for adapter, trace in traces.items():
        assert trace == reference, f"{adapter} diverged: {trace} != {reference}"
