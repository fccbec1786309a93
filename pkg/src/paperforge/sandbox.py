"""Isolated execution of generated (untrusted) repositories.

Each run gets a throwaway scratch directory holding a copy of the repository,
a whitelisted environment, POSIX resource limits, and a Python audit-hook
guard that blocks file writes outside the scratch root. The guard rides in via
PYTHONPATH/sitecustomize, so it covers Python entry commands; non-Python
commands still get the scratch cwd, env whitelist, and rlimits.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InfrastructureError

log = logging.getLogger(__name__)

SYNTAX, IMPORT, RUNTIME, ASSERTION, TIMEOUT = "syntax", "import", "runtime", "assertion", "timeout"

_GUARD_SOURCE = '''\
"""Write guard for sandboxed execution: injected via PYTHONPATH."""
import os
import sys

_ROOT = os.environ.get("SANDBOX_ROOT")
if _ROOT:
    _root = os.path.realpath(_ROOT)
    _WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_APPEND | os.O_CREAT | os.O_TRUNC

    def _blocked(path):
        real = os.path.realpath(path)
        return real != _root and not real.startswith(_root + os.sep) and real != os.devnull

    def _hook(event, args):
        if event != "open":
            return
        path, mode, flags = args
        if isinstance(path, int) or path is None:
            return
        writing = False
        if mode is not None:
            writing = any(c in mode for c in "wax+")
        else:
            writing = bool(flags & _WRITE_FLAGS)
        if writing and _blocked(os.fspath(path)):
            raise PermissionError(f"sandbox: write outside workspace blocked: {path}")

    sys.addaudithook(_hook)
'''


@dataclass(frozen=True)
class ExecutionLimits:
    wall_seconds: float = 900.0
    memory_mb: int | None = None
    env_overrides: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ExecutionResult:
    ok: bool
    exit_status: int | None
    stdout: str
    stderr: str
    duration: float
    timed_out: bool

    @property
    def output(self) -> str:
        return self.stdout + ("\n" + self.stderr if self.stderr else "")


@dataclass(frozen=True)
class ExecutionError:
    kind: str  # syntax | import | runtime | assertion | timeout
    excerpt: str
    raw_output: str
    exit_status: int | None


def classify_output(stderr: str, stdout: str, timed_out: bool) -> str:
    """Fixed classifier rules; precedence: timeout > syntax > import > assertion > runtime."""
    if timed_out:
        return TIMEOUT
    text = stderr + "\n" + stdout
    if "SyntaxError" in text or "IndentationError" in text or "TabError" in text:
        return SYNTAX
    if "ModuleNotFoundError" in text or "ImportError" in text:
        return IMPORT
    if "AssertionError" in text:
        return ASSERTION
    return RUNTIME


def error_excerpt(stderr: str, stdout: str, max_lines: int = 30) -> str:
    text = (stderr.strip() or stdout.strip()).splitlines()
    return "\n".join(text[-max_lines:])


def to_execution_error(result: ExecutionResult) -> ExecutionError:
    return ExecutionError(
        kind=classify_output(result.stderr, result.stdout, result.timed_out),
        excerpt=error_excerpt(result.stderr, result.stdout) or "(no output)",
        raw_output=result.output,
        exit_status=result.exit_status,
    )


def _whitelisted_env(scratch: Path, overrides: dict[str, str], guard_dir: Path) -> dict[str, str]:
    env = {
        "HOME": str(scratch / "home"),
        "TMPDIR": str(scratch / "tmp"),
        "TEMP": str(scratch / "tmp"),
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONPATH": str(guard_dir),
        "SANDBOX_ROOT": str(scratch),
    }
    for key in ("PATH", "LANG", "LC_ALL", "VIRTUAL_ENV"):
        value = os.environ.get(key)
        if value:
            env[key] = value
    env.update(overrides)
    return env


def run_sandboxed(
    repo_dir: Path,
    command: str,
    limits: ExecutionLimits,
    scratch_root: Path | None = None,
) -> ExecutionResult:
    """Copy the repo into a scratch dir and run the entry command there.

    Success iff exit status 0 within the wall-clock limit. Scratch setup
    problems raise InfrastructureError; anything the command itself does wrong
    is reported in the result.
    """
    repo_dir = Path(repo_dir)
    if not repo_dir.is_dir():
        raise InfrastructureError(f"repository directory missing: {repo_dir}")
    argv = shlex.split(command)
    if not argv:
        raise InfrastructureError("empty entry command")

    try:
        if scratch_root is not None:
            scratch_root.mkdir(parents=True, exist_ok=True)
        scratch = Path(tempfile.mkdtemp(prefix="exec_", dir=scratch_root))
        workdir = scratch / "repo"
        shutil.copytree(repo_dir, workdir)
        (scratch / "home").mkdir()
        (scratch / "tmp").mkdir()
        guard_dir = scratch / "guard"
        guard_dir.mkdir()
        (guard_dir / "sitecustomize.py").write_text(_GUARD_SOURCE, encoding="utf-8")
    except OSError as exc:
        raise InfrastructureError(f"sandbox setup failed: {exc}") from exc

    env = _whitelisted_env(scratch, limits.env_overrides, guard_dir)
    memory_mb = limits.memory_mb

    def _prepare() -> None:  # pragma: no cover - runs in the child
        os.setsid()
        if memory_mb:
            import resource

            limit = memory_mb * 1024 * 1024
            resource.setrlimit(resource.RLIMIT_AS, (limit, limit))

    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            argv,
            cwd=workdir,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            preexec_fn=_prepare,
        )
    except FileNotFoundError as exc:
        shutil.rmtree(scratch, ignore_errors=True)
        raise InfrastructureError(f"entry command executable not found: {argv[0]!r}") from exc
    except OSError as exc:
        shutil.rmtree(scratch, ignore_errors=True)
        raise InfrastructureError(f"could not launch entry command: {exc}") from exc

    timed_out = False
    try:
        stdout, stderr = proc.communicate(timeout=limits.wall_seconds)
        exit_status: int | None = proc.returncode
    except subprocess.TimeoutExpired:
        timed_out = True
        _kill_tree(proc)
        stdout, stderr = proc.communicate()
        exit_status = None
    duration = time.monotonic() - started
    shutil.rmtree(scratch, ignore_errors=True)
    return ExecutionResult(
        ok=(exit_status == 0 and not timed_out),
        exit_status=exit_status,
        stdout=stdout or "",
        stderr=stderr or "",
        duration=duration,
        timed_out=timed_out,
    )


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        try:
            proc.kill()
        except ProcessLookupError:
            pass
