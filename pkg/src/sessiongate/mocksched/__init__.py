"""Deterministic stand-in batch scheduler.

Jobs live in an on-disk registry (a directory) shared by the daemon, the CLI
tools, and library-mode tests, with file locking around every mutation. A job
is queued (Q) until its pending delay elapses, then the runner executes its
script as a local process with HOSTNAME set to a fictitious round-robin node
name; the job is running (R) until the script exits (E) or is canceled (C).
Completed and canceled jobs are reported as not-found, like real schedulers
that forget finished jobs.

Time can be frozen: in frozen mode the pending delay elapses only via
explicit advances, which makes poll-idempotence tests deterministic.
"""

from __future__ import annotations

import fcntl
import json
import os
import signal
import subprocess
import time
from typing import Any, Optional

import psutil

FIRST_JOB_ID = 1000

QUEUED = "Q"
RUNNING = "R"
CANCELED = "C"
EXITED = "E"

DIALECTS = ("torque", "slurm", "condor", "gridengine")


class AdvanceInRealtime(Exception):
    """advance() only applies to a frozen clock."""


class DaemonUnreachable(Exception):
    """No live daemon is registered for this registry."""


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


class MockScheduler:
    """Library interface over one scheduler registry directory."""

    def __init__(self, root: str) -> None:
        self.root = os.path.abspath(root)
        self.jobs_dir = os.path.join(self.root, "jobs")
        os.makedirs(self.jobs_dir, exist_ok=True)
        self._config_path = os.path.join(self.root, "config.json")
        self._jobs_path = os.path.join(self.root, "jobs.json")
        self._lock_path = os.path.join(self.root, "lock")
        self._procs: dict[str, subprocess.Popen] = {}
        if not os.path.exists(self._config_path):
            self._write_config(
                {
                    "pending_delay": 0.0,
                    "clock_mode": "realtime",
                    "virtual_now": 0.0,
                    "host_count": 4,
                    "next_id": FIRST_JOB_ID,
                    "rr_index": 0,
                }
            )

    # -- locking / registry IO ----------------------------------------------

    def _locked(self):
        fh = open(self._lock_path, "a+")
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        return fh

    def _read_config(self) -> dict[str, Any]:
        with open(self._config_path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def _write_config(self, cfg: dict[str, Any]) -> None:
        _atomic_write(self._config_path, json.dumps(cfg, indent=1))

    def _read_jobs(self) -> dict[str, dict[str, Any]]:
        if not os.path.exists(self._jobs_path):
            return {}
        with open(self._jobs_path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def _write_jobs(self, jobs: dict[str, dict[str, Any]]) -> None:
        _atomic_write(self._jobs_path, json.dumps(jobs, indent=1))

    # -- clock ---------------------------------------------------------------

    def now(self) -> float:
        cfg = self._read_config()
        if cfg["clock_mode"] == "frozen":
            return float(cfg["virtual_now"])
        return time.time()

    def set_clock_mode(self, mode: str) -> None:
        if mode not in ("realtime", "frozen"):
            raise ValueError(f"unknown clock mode {mode!r}")
        with self._locked():
            cfg = self._read_config()
            cfg["clock_mode"] = mode
            if mode == "frozen" and not cfg.get("virtual_now"):
                cfg["virtual_now"] = time.time()
            self._write_config(cfg)

    def advance(self, seconds: float) -> float:
        with self._locked():
            cfg = self._read_config()
            if cfg["clock_mode"] != "frozen":
                raise AdvanceInRealtime("clock is in realtime mode")
            cfg["virtual_now"] = float(cfg["virtual_now"]) + float(seconds)
            self._write_config(cfg)
            return cfg["virtual_now"]

    def set_pending_delay(self, seconds: float) -> None:
        with self._locked():
            cfg = self._read_config()
            cfg["pending_delay"] = float(seconds)
            self._write_config(cfg)

    def set_host_count(self, count: int) -> None:
        with self._locked():
            cfg = self._read_config()
            cfg["host_count"] = max(1, int(count))
            self._write_config(cfg)

    # -- daemon liveness ------------------------------------------------------

    @property
    def daemon_pid_path(self) -> str:
        return os.path.join(self.root, "daemon.pid")

    def register_daemon(self, pid: Optional[int] = None) -> None:
        _atomic_write(self.daemon_pid_path, str(pid or os.getpid()))

    def unregister_daemon(self) -> None:
        try:
            os.unlink(self.daemon_pid_path)
        except FileNotFoundError:
            pass

    def daemon_alive(self) -> bool:
        try:
            with open(self.daemon_pid_path, "r", encoding="ascii") as fh:
                pid = int(fh.read().strip())
        except (OSError, ValueError):
            return False
        return psutil.pid_exists(pid)

    # -- job operations --------------------------------------------------------

    def submit(self, script_body: str, dialect: str, options: dict[str, str] | None = None) -> dict[str, Any]:
        """Register a queued job and return its record."""
        if dialect not in DIALECTS:
            raise ValueError(f"unknown dialect {dialect!r}")
        with self._locked():
            cfg = self._read_config()
            jobs = self._read_jobs()
            job_id = str(cfg["next_id"])
            cfg["next_id"] += 1
            host = f"mocknode{1 + cfg['rr_index'] % int(cfg['host_count'])}"
            cfg["rr_index"] += 1
            script_path = os.path.join(self.jobs_dir, f"{job_id}.script")
            with open(script_path, "w", encoding="utf-8") as fh:
                fh.write(script_body)
            os.chmod(script_path, 0o700)
            job = {
                "job_id": job_id,
                "dialect": dialect,
                "state": QUEUED,
                "script_path": script_path,
                "assigned_host": host,
                "pending_delay": float(cfg["pending_delay"]),
                "submitted_at": self._now_locked(cfg),
                "pid": None,
                "exit_code": None,
                "options": dict(options or {}),
            }
            jobs[job_id] = job
            self._write_jobs(jobs)
            self._write_config(cfg)
            return dict(job)

    def _now_locked(self, cfg: dict[str, Any]) -> float:
        if cfg["clock_mode"] == "frozen":
            return float(cfg["virtual_now"])
        return time.time()

    def get_job(self, job_id: str) -> Optional[dict[str, Any]]:
        job = self._read_jobs().get(self._canonical_id(job_id))
        return dict(job) if job else None

    def _canonical_id(self, job_id: str) -> str:
        # torque-style ids carry a ".mockhost" suffix
        return job_id.split(".", 1)[0].strip()

    def cancel(self, job_id: str) -> bool:
        """Cancel a job, killing its process group if running. Idempotent."""
        canonical = self._canonical_id(job_id)
        with self._locked():
            jobs = self._read_jobs()
            job = jobs.get(canonical)
            if job is None:
                return False
            if job["state"] in (CANCELED, EXITED):
                return True
            pid = job.get("pid")
            job["state"] = CANCELED
            self._write_jobs(jobs)
        if pid:
            self._kill_group(int(pid))
            handle = self._procs.pop(canonical, None)
            if handle is not None:
                try:
                    handle.wait(timeout=2)
                except subprocess.TimeoutExpired:
                    pass
        return True

    @staticmethod
    def _pid_gone(pid: int) -> bool:
        try:
            return psutil.Process(pid).status() == psutil.STATUS_ZOMBIE
        except psutil.Error:
            return True

    def _kill_group(self, pid: int, grace: float = 0.4) -> None:
        for sig in (signal.SIGTERM, signal.SIGKILL):
            try:
                os.killpg(pid, sig)
            except (ProcessLookupError, PermissionError):
                return
            deadline = time.monotonic() + grace
            while time.monotonic() < deadline:
                if self._pid_gone(pid):
                    return
                time.sleep(0.02)

    def tick(self) -> None:
        """Advance job states: launch due queued jobs, reap exited runners."""
        to_launch: list[dict[str, Any]] = []
        with self._locked():
            cfg = self._read_config()
            now = self._now_locked(cfg)
            jobs = self._read_jobs()
            dirty = False
            for job in jobs.values():
                if job["state"] == QUEUED and now - job["submitted_at"] >= job["pending_delay"]:
                    job["state"] = RUNNING
                    dirty = True
                    to_launch.append(job)
                elif job["state"] == RUNNING and job.get("pid"):
                    code = self._reap(job["job_id"], int(job["pid"]))
                    if code is not NOT_EXITED:
                        job["state"] = EXITED
                        job["exit_code"] = code
                        dirty = True
            if dirty:
                self._write_jobs(jobs)

        for job in to_launch:
            self._launch(job)

    def _launch(self, job: dict[str, Any]) -> None:
        env = dict(os.environ)
        env["HOSTNAME"] = job["assigned_host"]
        env["MOCK_JOB_ID"] = job["job_id"]
        out = open(os.path.join(self.jobs_dir, f"{job['job_id']}.out"), "ab")
        err = open(os.path.join(self.jobs_dir, f"{job['job_id']}.err"), "ab")
        try:
            proc = subprocess.Popen(
                ["/bin/sh", job["script_path"]],
                env=env,
                stdout=out,
                stderr=err,
                start_new_session=True,
            )
        except OSError as exc:
            with self._locked():
                jobs = self._read_jobs()
                stored = jobs.get(job["job_id"])
                if stored is not None:
                    stored["state"] = EXITED
                    stored["exit_code"] = 127
                    self._write_jobs(jobs)
            err.write(f"launch failed: {exc}\n".encode())
            return
        finally:
            out.close()
            err.close()
        self._procs[job["job_id"]] = proc
        with self._locked():
            jobs = self._read_jobs()
            stored = jobs.get(job["job_id"])
            if stored is not None and stored["state"] == RUNNING:
                stored["pid"] = proc.pid
                self._write_jobs(jobs)
            elif stored is not None and stored["state"] == CANCELED:
                # canceled while we were launching; tear it down again
                self._kill_group(proc.pid)

    def _reap(self, job_id: str, pid: int):
        proc = self._procs.get(job_id)
        if proc is not None:
            code = proc.poll()
            if code is None:
                return NOT_EXITED
            self._procs.pop(job_id, None)
            return code
        # Not our child (daemon restarted): only liveness is observable.
        try:
            p = psutil.Process(pid)
            if p.is_running() and p.status() != psutil.STATUS_ZOMBIE:
                return NOT_EXITED
        except psutil.Error:
            pass
        return None

    def jobs(self) -> dict[str, dict[str, Any]]:
        return self._read_jobs()

    # -- trace (for command-equality tests) -----------------------------------

    @property
    def trace_path(self) -> str:
        return os.path.join(self.root, "trace.log")

    def record_trace(self, argv: list[str]) -> None:
        with self._locked():
            with open(self.trace_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(argv) + "\n")

    def read_trace(self) -> list[list[str]]:
        try:
            with open(self.trace_path, "r", encoding="utf-8") as fh:
                return [json.loads(line) for line in fh if line.strip()]
        except FileNotFoundError:
            return []


class _NotExited:
    __slots__ = ()


NOT_EXITED = _NotExited()


# -- dialect wire formats ------------------------------------------------------


def format_submit_output(job: dict[str, Any]) -> str:
    d = job["dialect"]
    if d == "torque":
        return f"{job['job_id']}.mockhost"
    if d == "slurm":
        return f"Submitted batch job {job['job_id']}"
    if d == "condor":
        return f"1 job(s) submitted to cluster {job['job_id']}."
    if d == "gridengine":
        return job["job_id"]
    raise ValueError(d)


def format_status_output(job: dict[str, Any]) -> str:
    """Status line for a live (Q or R) job, in the job's dialect."""
    d, state = job["dialect"], job["state"]
    host = job["assigned_host"]
    if d == "torque":
        if state == QUEUED:
            return f"Job Id: {job['job_id']}.mockhost\n    job_state = Q"
        return f"Job Id: {job['job_id']}.mockhost\n    job_state = R\n    exec_host = {host}/0"
    if d == "slurm":
        if state == QUEUED:
            return f"{job['job_id']} mock PD (Priority)"
        return f"{job['job_id']} mock R {host}"
    if d == "condor":
        if state == QUEUED:
            return f"{job['job_id']}.0 IDLE"
        return f"{job['job_id']}.0 RUNNING slot1@{host}"
    if d == "gridengine":
        if state == QUEUED:
            return f"{job['job_id']} 0.5 mock user qw"
        return f"{job['job_id']} 0.5 mock user r all.q@{host}"
    raise ValueError(d)


def notfound_exit_code(dialect: str) -> int:
    # torque's qstat famously exits 153 for unknown job ids
    return 153 if dialect == "torque" else 1
