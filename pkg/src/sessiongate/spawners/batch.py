"""Scheduler-agnostic batch spawner.

A SchedulerAdapter is pure data: templated submit/status/cancel commands, a
templated job script, and the regular expressions that parse the dialect's
output. The four builtin adapters differ only in those strings; new dialects
can be added from the hub config file without code. Rendered commands are
tokenized and executed as argument vectors, never through a shell, so the
template whitelist is a second line of defense rather than the only one.
"""

from __future__ import annotations

import logging
import os
import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from ..model import ExecutionStatus
from ..templates import placeholders, render_template
from .base import (
    AlreadyRunning,
    MalformedState,
    NotRunning,
    Spawner,
    SpawnRequest,
    StartFailed,
)

log = logging.getLogger(__name__)

# placeholders supplied by the spawner itself, never by configuration
FRAMEWORK_PARAMETERS = {"job_id", "script_path", "env_block"}

DEFAULT_COMMAND_TIMEOUT = 10.0


class BatchError(Exception):
    pass


class SubmitFailed(BatchError):
    def __init__(self, message: str, stderr: str = "") -> None:
        super().__init__(message)
        self.stderr = stderr


class JobIdParseError(BatchError):
    pass


class QueryFailed(BatchError):
    pass


class CancelFailed(BatchError):
    pass


@dataclass(frozen=True)
class JobDescriptor:
    job_id: str
    adapter_name: str
    submitted_at: float


@dataclass
class SchedulerAdapter:
    """Template set and parse patterns for one scheduler dialect.

    ``parameters`` maps parameter name to a raw flag; raw parameters bypass
    the render whitelist and may only be populated from the config file.
    ``submit_via`` is "stdin" or "file" per the dialect's convention.
    """

    name: str
    submit_command: str
    status_command: str
    cancel_command: str
    job_script: str
    job_id_pattern: str
    pending_pattern: str
    running_pattern: str
    submit_via: str = "stdin"
    parameters: dict[str, bool] = field(default_factory=dict)

    def validate(self) -> None:
        if self.submit_via not in ("stdin", "file"):
            raise ValueError(f"{self.name}: submit_via must be stdin or file")
        job_id_re = re.compile(self.job_id_pattern)
        if job_id_re.groups < 1:
            raise ValueError(f"{self.name}: job_id_pattern needs one capture group")
        running_re = re.compile(self.running_pattern)
        if "host" not in (running_re.groupindex or {}):
            raise ValueError(f"{self.name}: running_pattern needs a named 'host' group")
        re.compile(self.pending_pattern)
        declared = set(self.parameters) | FRAMEWORK_PARAMETERS
        for tpl_name, tpl in (
            ("submit_command", self.submit_command),
            ("status_command", self.status_command),
            ("cancel_command", self.cancel_command),
            ("job_script", self.job_script),
        ):
            undeclared = placeholders(tpl) - declared
            if undeclared:
                raise ValueError(
                    f"{self.name}: {tpl_name} uses undeclared placeholders {sorted(undeclared)}"
                )

    def raw_names(self) -> set[str]:
        return {n for n, raw in self.parameters.items() if raw} | FRAMEWORK_PARAMETERS

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "submit_command": self.submit_command,
            "status_command": self.status_command,
            "cancel_command": self.cancel_command,
            "job_script": self.job_script,
            "job_id_pattern": self.job_id_pattern,
            "pending_pattern": self.pending_pattern,
            "running_pattern": self.running_pattern,
            "submit_via": self.submit_via,
            "parameters": dict(self.parameters),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SchedulerAdapter":
        adapter = cls(
            name=str(data["name"]),
            submit_command=data["submit_command"],
            status_command=data["status_command"],
            cancel_command=data["cancel_command"],
            job_script=data["job_script"],
            job_id_pattern=data["job_id_pattern"],
            pending_pattern=data["pending_pattern"],
            running_pattern=data["running_pattern"],
            submit_via=data.get("submit_via", "stdin"),
            parameters={str(k): bool(v) for k, v in data.get("parameters", {}).items()},
        )
        adapter.validate()
        return adapter


# default parameter schema shared by the builtin dialects: the non-raw names
# are user-server sizing knobs, cmd is the admin-configured launch command
_BUILTIN_PARAMETERS = {
    "jobname": False,
    "mem": False,
    "nprocs": False,
    "runtime": False,
    "queue": False,
    "cmd": True,
}


def builtin_adapters() -> dict[str, SchedulerAdapter]:
    """The four builtin dialect template sets, keyed by adapter name."""
    adapters = [
        SchedulerAdapter(
            name="torque",
            submit_command="qsub -N {jobname} -l mem={mem},nodes=1:ppn={nprocs},walltime={runtime} -q {queue}",
            status_command="qstat {job_id}",
            cancel_command="qdel {job_id}",
            job_script=(
                "#!/bin/sh\n"
                "#PBS -N {jobname}\n"
                "#PBS -l mem={mem}\n"
                "#PBS -l walltime={runtime}\n"
                "{env_block}\n"
                "exec {cmd}\n"
            ),
            job_id_pattern=r"^(\d+\.\S+)\s*$",
            pending_pattern=r"job_state = Q",
            running_pattern=r"exec_host = (?P<host>[A-Za-z0-9._-]+)",
            submit_via="stdin",
            parameters=dict(_BUILTIN_PARAMETERS),
        ),
        SchedulerAdapter(
            name="slurm",
            submit_command=(
                "sbatch --job-name={jobname} --mem={mem} --ntasks={nprocs} "
                "--time={runtime} --partition={queue} {script_path}"
            ),
            status_command="squeue -j {job_id}",
            cancel_command="scancel {job_id}",
            job_script=(
                "#!/bin/sh\n"
                "#SBATCH --job-name={jobname}\n"
                "#SBATCH --mem={mem}\n"
                "#SBATCH --time={runtime}\n"
                "{env_block}\n"
                "exec {cmd}\n"
            ),
            job_id_pattern=r"Submitted batch job (\d+)",
            pending_pattern=r"\bPD\b",
            running_pattern=r"\bR\s+(?P<host>[A-Za-z0-9._-]+)\s*$",
            submit_via="file",
            parameters=dict(_BUILTIN_PARAMETERS),
        ),
        SchedulerAdapter(
            name="condor",
            submit_command="condor_submit {script_path}",
            status_command="condor_q {job_id}",
            cancel_command="condor_rm {job_id}",
            job_script=(
                "#!/bin/sh\n"
                "# condor-style job wrapper: request_memory={mem} request_cpus={nprocs}\n"
                "{env_block}\n"
                "exec {cmd}\n"
            ),
            job_id_pattern=r"submitted to cluster (\d+)",
            pending_pattern=r"\bIDLE\b",
            running_pattern=r"RUNNING\s+\S*@(?P<host>[A-Za-z0-9._-]+)",
            submit_via="file",
            parameters=dict(_BUILTIN_PARAMETERS),
        ),
        SchedulerAdapter(
            name="gridengine",
            submit_command="qsub -terse -N {jobname} -l h_vmem={mem} -pe smp {nprocs} -q {queue}",
            status_command="qstat -j {job_id}",
            cancel_command="qdel {job_id}",
            job_script=(
                "#!/bin/sh\n"
                "#$ -N {jobname}\n"
                "#$ -l h_vmem={mem}\n"
                "#$ -q {queue}\n"
                "{env_block}\n"
                "exec {cmd}\n"
            ),
            job_id_pattern=r"^(\d+)\s*$",
            pending_pattern=r"\bqw\b",
            running_pattern=r"\br\s+\S*@(?P<host>[A-Za-z0-9._-]+)",
            submit_via="stdin",
            parameters=dict(_BUILTIN_PARAMETERS),
        ),
    ]
    for adapter in adapters:
        adapter.validate()
    return {a.name: a for a in adapters}


_ADAPTERS: dict[str, SchedulerAdapter] = {}


def register_adapter(adapter: SchedulerAdapter) -> None:
    adapter.validate()
    _ADAPTERS[adapter.name] = adapter


def get_adapter(name: str) -> SchedulerAdapter:
    try:
        return _ADAPTERS[name]
    except KeyError:
        raise KeyError(f"unknown scheduler adapter {name!r}; known: {sorted(_ADAPTERS)}") from None


def adapter_names() -> list[str]:
    return sorted(_ADAPTERS)


for _a in builtin_adapters().values():
    register_adapter(_a)


# -- command execution -----------------------------------------------------


def _run(argv: list[str], *, stdin_text: Optional[str] = None, timeout: float) -> subprocess.CompletedProcess:
    return subprocess.run(
        argv,
        input=stdin_text,
        capture_output=True,
        text=True,
        timeout=timeout,
    )


def submit(
    adapter: SchedulerAdapter,
    variables: dict[str, Any],
    script_body: str,
    *,
    spool_dir: Optional[str] = None,
    timeout: float = DEFAULT_COMMAND_TIMEOUT,
) -> JobDescriptor:
    """Render and execute the submit command; parse out the job id.

    The rendered script is always written (mode 0600) into the spool
    directory; stdin-convention dialects additionally receive it on stdin.
    """
    spool = spool_dir or tempfile.gettempdir()
    os.makedirs(spool, exist_ok=True)
    fd, script_path = tempfile.mkstemp(prefix="job-", suffix=".sh", dir=spool)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(script_body)
    os.chmod(script_path, 0o600)

    cmd_vars = dict(variables)
    cmd_vars["script_path"] = script_path
    rendered = render_template(adapter.submit_command, cmd_vars, adapter.raw_names())
    argv = shlex.split(rendered)
    stdin_text = script_body if adapter.submit_via == "stdin" else None
    try:
        proc = _run(argv, stdin_text=stdin_text, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise SubmitFailed(f"submit tool failed to run: {exc}") from exc
    if proc.returncode != 0:
        raise SubmitFailed(
            f"submit tool exited {proc.returncode}", stderr=proc.stderr.strip()
        )
    match = re.search(adapter.job_id_pattern, proc.stdout, re.MULTILINE)
    if not match or not match.group(1):
        raise JobIdParseError(
            f"job id pattern {adapter.job_id_pattern!r} did not match submit output {proc.stdout!r}"
        )
    return JobDescriptor(job_id=match.group(1), adapter_name=adapter.name, submitted_at=time.time())


def query(
    adapter: SchedulerAdapter,
    job_id: str,
    *,
    timeout: float = DEFAULT_COMMAND_TIMEOUT,
) -> ExecutionStatus:
    """Poll one job: Pending, Running(host), or Unknown.

    QueryFailed (tool missing, timed out, or complaining on stderr) is
    distinct from Unknown, which means the scheduler no longer knows the id.
    """
    rendered = render_template(adapter.status_command, {"job_id": job_id}, adapter.raw_names())
    try:
        proc = _run(shlex.split(rendered), timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise QueryFailed(f"status tool failed to run: {exc}") from exc
    if proc.returncode != 0:
        if proc.stderr.strip():
            raise QueryFailed(f"status tool exited {proc.returncode}: {proc.stderr.strip()}")
        return ExecutionStatus.unknown()
    running = re.search(adapter.running_pattern, proc.stdout, re.MULTILINE)
    if running:
        return ExecutionStatus.running(running.group("host"))
    if re.search(adapter.pending_pattern, proc.stdout, re.MULTILINE):
        return ExecutionStatus.pending()
    return ExecutionStatus.unknown()


def cancel(
    adapter: SchedulerAdapter,
    job_id: str,
    *,
    timeout: float = DEFAULT_COMMAND_TIMEOUT,
) -> None:
    """Cancel a job; idempotent for already-finished jobs."""
    rendered = render_template(adapter.cancel_command, {"job_id": job_id}, adapter.raw_names())
    try:
        proc = _run(shlex.split(rendered), timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise CancelFailed(f"cancel tool failed to run: {exc}") from exc
    if proc.returncode == 0:
        return
    # The tool complained: only forgive it if the scheduler has in fact
    # already forgotten the job.
    try:
        status = query(adapter, job_id, timeout=timeout)
    except QueryFailed as exc:
        raise CancelFailed(f"cancel tool exited {proc.returncode}; {exc}") from exc
    if status.state.value in ("pending", "running"):
        raise CancelFailed(f"cancel tool exited {proc.returncode} on a still-known job")


# -- the spawner -----------------------------------------------------------


def compose_env_block(environment: dict[str, str]) -> str:
    lines = [f"export {key}={shlex.quote(value)}" for key, value in sorted(environment.items())]
    return "\n".join(lines)


class BatchSpawner(Spawner):
    """Run the user server as a batch job through a SchedulerAdapter.

    Config keys: ``adapter`` (dialect name), ``cmd`` (raw launch command),
    sizing parameters per the adapter schema (mem, nprocs, runtime, queue,
    jobname), ``spool_dir``, ``command_timeout``.
    """

    kind = "batch"

    QUERY_FAILURE_LIMIT = 3

    def __init__(self, config: dict[str, Any] | None = None) -> None:
        super().__init__(config)
        self._job: Optional[JobDescriptor] = None
        self._stop_issued = False
        self._last_status = ExecutionStatus.unknown()
        self._query_failures = 0

    @property
    def adapter(self) -> SchedulerAdapter:
        return get_adapter(str(self.config.get("adapter", "torque")))

    @property
    def command_timeout(self) -> float:
        return float(self.config.get("command_timeout", DEFAULT_COMMAND_TIMEOUT))

    def job_id(self) -> Optional[str]:
        return self._job.job_id if self._job else None

    def _variables(self, username: str) -> dict[str, Any]:
        adapter = self.adapter
        variables: dict[str, Any] = {
            "jobname": f"session-{username}",
            "mem": "1gb",
            "nprocs": 1,
            "runtime": "01:00:00",
            "queue": "mock",
        }
        for name in adapter.parameters:
            if name in self.config:
                variables[name] = self.config[name]
        if "cmd" not in variables:
            from .local import DEFAULT_CMD

            variables["cmd"] = DEFAULT_CMD
        return variables

    def start(self, request: SpawnRequest) -> None:
        if self._job is not None and not self._stop_issued:
            raise AlreadyRunning(f"job {self._job.job_id} already submitted")
        request.validate()
        adapter = self.adapter
        variables = self._variables(request.username)
        env = dict(request.environment)
        env.setdefault("PORT", "0")
        variables["env_block"] = compose_env_block(env)
        script = render_template(adapter.job_script, variables, adapter.raw_names())
        try:
            self._job = submit(
                adapter,
                variables,
                script,
                spool_dir=self.config.get("spool_dir"),
                timeout=self.command_timeout,
            )
        except (SubmitFailed, JobIdParseError) as exc:
            detail = getattr(exc, "stderr", "") or str(exc)
            raise StartFailed(detail) from exc
        self._stop_issued = False
        self._last_status = ExecutionStatus.pending()
        self._query_failures = 0
        log.info("submitted %s job %s for %s", adapter.name, self._job.job_id, request.username)

    def stop(self) -> None:
        if self._job is None or self._stop_issued:
            raise NotRunning("no submitted job under management")
        self._stop_issued = True
        cancel(self.adapter, self._job.job_id, timeout=self.command_timeout)

    def poll(self) -> ExecutionStatus:
        if self._job is None:
            return ExecutionStatus.unknown()
        try:
            status = query(self.adapter, self._job.job_id, timeout=self.command_timeout)
        except QueryFailed:
            # Transient tool failures do not move the session; repeated
            # failures escalate to the supervisor.
            self._query_failures += 1
            if self._query_failures >= self.QUERY_FAILURE_LIMIT:
                raise
            return self._last_status
        self._query_failures = 0
        self._last_status = status
        return status

    def get_state(self) -> dict[str, str]:
        state: dict[str, str] = {}
        if self._job is not None:
            state["job_id"] = self._job.job_id
            state["adapter"] = self._job.adapter_name
            state["submitted_at"] = repr(self._job.submitted_at)
        return state

    def load_state(self, state: dict[str, str]) -> None:
        if "job_id" not in state:
            raise MalformedState("batch spawner state requires 'job_id'")
        adapter_name = state.get("adapter") or str(self.config.get("adapter", ""))
        if not adapter_name:
            raise MalformedState("batch spawner state requires 'adapter'")
        try:
            submitted_at = float(state.get("submitted_at", time.time()))
        except ValueError as exc:
            raise MalformedState(f"bad submitted_at: {state.get('submitted_at')!r}") from exc
        self._job = JobDescriptor(state["job_id"], adapter_name, submitted_at)
        self.config["adapter"] = adapter_name
        self._stop_issued = False
        self._last_status = ExecutionStatus.pending()
        self._query_failures = 0
