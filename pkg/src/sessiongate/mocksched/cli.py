"""Command-line tools for the mock scheduler.

``msub``/``mstat``/``mdel`` speak the four supported dialects; the dialect is
chosen by ``--dialect``, by the invoking symlink name (``sbatch``,
``condor_q``, ...), or for status/cancel by the job's stored dialect. The
registry directory comes from ``--dir`` or the MOCK_SCHED_DIR environment
variable. Every invocation is appended to the registry's trace log so tests
can compare the exact command sequences different spawner paths produce.
"""

from __future__ import annotations

import os
import signal
import sys
import threading
import time
from typing import Optional

from . import (
    CANCELED,
    EXITED,
    AdvanceInRealtime,
    MockScheduler,
    format_status_output,
    format_submit_output,
    notfound_exit_code,
)

# argv[0] names that imply a dialect
SUBMIT_NAMES = {"sbatch": "slurm", "condor_submit": "condor", "qsub": "torque"}
STATUS_NAMES = {"squeue": "slurm", "condor_q": "condor"}

# flags that consume the following token as their value
VALUE_FLAGS = {
    "-l", "-N", "-q", "-o", "-e", "-A", "-pe", "-n", "-p", "-t", "-J",
    "--mem", "--time", "--partition", "--job-name", "--ntasks", "--nodes",
    "--output", "--dialect", "--dir", "--pending-delay", "--interval", "--hosts",
}
ID_FLAGS = {"-j"}


class _Args:
    def __init__(self) -> None:
        self.dialect: Optional[str] = None
        self.root: Optional[str] = None
        self.terse = False
        self.operands: list[str] = []
        self.options: dict[str, str] = {}


def _parse(argv: list[str]) -> _Args:
    args = _Args()
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "-terse":
            args.terse = True
        elif tok.startswith("--") and "=" in tok:
            key, value = tok.split("=", 1)
            args.options[key] = value
            if key == "--dialect":
                args.dialect = value
            elif key == "--dir":
                args.root = value
        elif tok in ID_FLAGS and i + 1 < len(argv):
            args.operands.append(argv[i + 1])
            i += 1
        elif tok in VALUE_FLAGS and i + 1 < len(argv):
            args.options[tok] = argv[i + 1]
            if tok == "--dialect":
                args.dialect = argv[i + 1]
            elif tok == "--dir":
                args.root = argv[i + 1]
            i += 1
        elif tok.startswith("-"):
            args.options[tok] = ""
        else:
            args.operands.append(tok)
        i += 1
    return args


def _registry(args: _Args) -> MockScheduler:
    root = args.root or os.environ.get("MOCK_SCHED_DIR")
    if not root:
        print("mock scheduler: no registry (--dir or MOCK_SCHED_DIR)", file=sys.stderr)
        raise SystemExit(1)
    return MockScheduler(root)


def _prog(argv0: str) -> str:
    return os.path.basename(argv0)


def msub_main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv if argv is None else argv)
    prog, rest = _prog(argv[0]), argv[1:]
    args = _parse(rest)
    sched = _registry(args)
    sched.record_trace([prog] + rest)
    if not sched.daemon_alive():
        print(f"{prog}: cannot reach scheduler daemon", file=sys.stderr)
        return 1
    dialect = args.dialect or SUBMIT_NAMES.get(prog, "torque")
    if dialect == "torque" and args.terse:
        dialect = "gridengine"  # -terse is the Grid Engine machine-parsing convention

    script_operand = next((op for op in args.operands if os.path.isfile(op)), None)
    if script_operand is not None:
        with open(script_operand, "r", encoding="utf-8") as fh:
            script_body = fh.read()
    else:
        script_body = sys.stdin.read()
    if not script_body.strip():
        print(f"{prog}: empty job script", file=sys.stderr)
        return 1

    job = sched.submit(script_body, dialect, options=args.options)
    print(format_submit_output(job))
    return 0


def mstat_main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv if argv is None else argv)
    prog, rest = _prog(argv[0]), argv[1:]
    args = _parse(rest)
    sched = _registry(args)
    sched.record_trace([prog] + rest)
    if not args.operands:
        print(f"{prog}: missing job id", file=sys.stderr)
        return 2
    job = sched.get_job(args.operands[0])
    dialect = args.dialect or STATUS_NAMES.get(prog) or (job["dialect"] if job else "torque")
    if job is None or job["state"] in (CANCELED, EXITED):
        # finished jobs are forgotten, like the real schedulers
        return notfound_exit_code(dialect)
    print(format_status_output(job))
    return 0


def mdel_main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv if argv is None else argv)
    prog, rest = _prog(argv[0]), argv[1:]
    args = _parse(rest)
    sched = _registry(args)
    sched.record_trace([prog] + rest)
    if not sched.daemon_alive():
        print(f"{prog}: cannot reach scheduler daemon", file=sys.stderr)
        return 1
    if not args.operands:
        print(f"{prog}: missing job id", file=sys.stderr)
        return 2
    if not sched.cancel(args.operands[0]):
        print(f"{prog}: unknown job {args.operands[0]}", file=sys.stderr)
        return 1
    return 0


class MockSchedulerDaemon:
    """Runner loop; usable as an in-process thread or a foreground process."""

    def __init__(self, root: str, interval: float = 0.05) -> None:
        self.sched = MockScheduler(root)
        self.interval = interval
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self.sched.register_daemon()
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="mock-sched", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
        self.sched.unregister_daemon()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                self.sched.tick()
            except Exception:  # registry contention is survivable
                pass
            self._stop.wait(self.interval)

    def run_foreground(self) -> int:
        self.sched.register_daemon()
        stop = {"flag": False}

        def _on_signal(signum, frame):
            stop["flag"] = True

        signal.signal(signal.SIGTERM, _on_signal)
        signal.signal(signal.SIGINT, _on_signal)
        try:
            while not stop["flag"]:
                self.sched.tick()
                time.sleep(self.interval)
        finally:
            self.sched.unregister_daemon()
        return 0


def mock_sched_main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv if argv is None else argv)
    rest = argv[1:]
    if not rest:
        print("usage: mock-sched {daemon|init|ctl} ...", file=sys.stderr)
        return 2
    cmd, rest = rest[0], rest[1:]
    args = _parse(rest)
    sched = _registry(args)

    if cmd == "daemon":
        interval = float(args.options.get("--interval", "0.05"))
        return MockSchedulerDaemon(sched.root, interval=interval).run_foreground()

    if cmd == "init":
        if "--pending-delay" in args.options:
            sched.set_pending_delay(float(args.options["--pending-delay"]))
        if "--hosts" in args.options:
            sched.set_host_count(int(args.options["--hosts"]))
        if "--frozen" in args.options:
            sched.set_clock_mode("frozen")
        return 0

    if cmd == "ctl":
        if not args.operands:
            print("usage: mock-sched ctl {advance N|set-delay N|mode M}", file=sys.stderr)
            return 2
        sub = args.operands[0]
        if sub == "advance":
            try:
                sched.advance(float(args.operands[1]))
            except AdvanceInRealtime as exc:
                print(f"mock-sched ctl: {exc}", file=sys.stderr)
                return 1
            return 0
        if sub == "set-delay":
            sched.set_pending_delay(float(args.operands[1]))
            return 0
        if sub == "mode":
            sched.set_clock_mode(args.operands[1])
            return 0
        print(f"mock-sched ctl: unknown subcommand {sub!r}", file=sys.stderr)
        return 2

    print(f"mock-sched: unknown command {cmd!r}", file=sys.stderr)
    return 2
