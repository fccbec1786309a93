"""Workspace layout, atomic file IO, and the per-run lock."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

from .errors import ConfigError


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a sibling temp file + rename so readers never see a torn file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_json(path: Path, payload: Any) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def sanitize_relpath(rel: str) -> str:
    """Flatten a plan file path into a single safe filename component."""
    return rel.replace("\\", "/").strip("/").replace("/", "__")


class WorkspaceLock:
    """Exclusive ownership of a workspace; one live run per workspace."""

    def __init__(self, root: Path):
        self.path = root / ".lock"
        self._held = False

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            try:
                pid = int(self.path.read_text().strip())
            except ValueError:
                pid = -1
            if pid > 0 and _pid_alive(pid):
                raise ConfigError(f"workspace is locked by running process {pid}: {self.path}")
            self.path.unlink()  # stale lock
        fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as handle:
            handle.write(str(os.getpid()))
        self._held = True

    def release(self) -> None:
        if self._held and self.path.exists():
            self.path.unlink()
        self._held = False

    def __enter__(self) -> "WorkspaceLock":
        self.acquire()
        return self

    def __exit__(self, *exc: object) -> None:
        self.release()


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class Workspace:
    """Path helpers for one run's directory tree.

    Tracked artifact trees (raw/, parsed/, plan/, repo/, runs/, top-level
    outputs) are registered in the manifest; dot-prefixed entries, the gateway
    cache, and the call log are infrastructure and exempt from the
    manifest-completeness check.
    """

    UNTRACKED = {".lock", ".scratch", "cache", "calls.jsonl", "manifest.json"}

    def __init__(self, root: Path):
        self.root = Path(root)

    def ensure(self) -> "Workspace":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    @property
    def call_log_path(self) -> Path:
        return self.root / "calls.jsonl"

    @property
    def raw_dir(self) -> Path:
        return self.root / "raw"

    @property
    def parsed_dir(self) -> Path:
        return self.root / "parsed"

    @property
    def plan_dir(self) -> Path:
        return self.root / "plan"

    @property
    def repo_dir(self) -> Path:
        return self.root / "repo"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def scratch_dir(self) -> Path:
        return self.root / ".scratch"

    def iter_dir(self, iteration: int) -> Path:
        return self.runs_dir / f"iter_{iteration}"

    def rel(self, path: Path) -> str:
        return str(path.relative_to(self.root))

    def tracked_files(self) -> list[str]:
        """Every artifact file under the workspace that the manifest must reference."""
        out: list[str] = []
        for path in sorted(self.root.rglob("*")):
            if not path.is_file():
                continue
            rel = path.relative_to(self.root)
            top = rel.parts[0]
            if top in self.UNTRACKED or top.startswith("."):
                continue
            out.append(str(rel))
        return out
