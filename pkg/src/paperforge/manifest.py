"""Append-only run manifest: per-stage status, wall time, token usage, artifacts.

The manifest is an event log; derived views (stage status, totals) are computed
from it, so history is never rewritten. Every artifact a stage writes is
registered with its content hash, which is what resume integrity checks verify.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import IntegrityError
from .gateway import TokenUsage
from .workspace import Workspace, atomic_write_json, read_json, sha256_file

RUN_STAGES = ("blueprint", "parsing", "decomposition", "implementation")


@dataclass
class RunManifest:
    run_id: str
    config: dict[str, Any]
    events: list[dict[str, Any]] = field(default_factory=list)
    path: Path | None = None

    @classmethod
    def create(cls, path: Path, config: dict[str, Any]) -> "RunManifest":
        manifest = cls(run_id=uuid.uuid4().hex[:12], config=config, path=path)
        manifest.append({"event": "run_started"})
        return manifest

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        payload = read_json(path)
        return cls(run_id=payload["run_id"], config=payload["config"],
                   events=payload["events"], path=path)

    def append(self, event: dict[str, Any]) -> None:
        event = dict(event)
        event.setdefault("at", time.time())
        self.events.append(event)
        if self.path is not None:
            atomic_write_json(self.path, {
                "run_id": self.run_id, "config": self.config, "events": self.events,
            })

    # -- stage lifecycle -------------------------------------------------------

    def stage_started(self, stage: str) -> None:
        self.append({"event": "stage_started", "stage": stage})

    def stage_completed(self, stage: str, usage: TokenUsage, wall_seconds: float,
                        note: str = "") -> None:
        self.append({
            "event": "stage_completed", "stage": stage, "wall_seconds": wall_seconds,
            "input_tokens": usage.input_tokens, "output_tokens": usage.output_tokens,
            "note": note,
        })

    def stage_failed(self, stage: str, error: str) -> None:
        self.append({"event": "stage_failed", "stage": stage, "error": error})

    def artifact(self, stage: str, workspace_root: Path, path: Path) -> None:
        rel = str(Path(path).relative_to(workspace_root))
        self.append({"event": "artifact", "stage": stage, "path": rel,
                     "sha256": sha256_file(Path(path))})

    def run_completed(self, final_status: str, usage: TokenUsage) -> None:
        self.append({
            "event": "run_completed", "final_status": final_status,
            "input_tokens": usage.input_tokens, "output_tokens": usage.output_tokens,
        })

    # -- derived views -----------------------------------------------------------

    def stage_status(self) -> dict[str, str]:
        status = {stage: "pending" for stage in RUN_STAGES}
        for event in self.events:
            stage = event.get("stage")
            if stage not in status:
                continue
            if event["event"] == "stage_started":
                status[stage] = "running"
            elif event["event"] == "stage_completed":
                status[stage] = "completed"
            elif event["event"] == "stage_failed":
                status[stage] = "failed"
        return status

    def first_incomplete_stage(self) -> str | None:
        status = self.stage_status()
        for stage in RUN_STAGES:
            if status[stage] != "completed":
                return stage
        return None

    def final_status(self) -> str | None:
        for event in reversed(self.events):
            if event["event"] == "run_completed":
                return event["final_status"]
        return None

    def totals(self) -> TokenUsage:
        usage = TokenUsage()
        for event in self.events:
            if event["event"] == "stage_completed":
                usage = usage + TokenUsage(event["input_tokens"], event["output_tokens"])
        return usage

    def artifacts(self, stages: set[str] | None = None) -> dict[str, str]:
        """rel path -> latest recorded sha256 (later events win)."""
        out: dict[str, str] = {}
        for event in self.events:
            if event["event"] == "artifact":
                if stages is not None and event.get("stage") not in stages:
                    continue
                out[event["path"]] = event["sha256"]
        return out


def register_tree(manifest: RunManifest, stage: str, workspace_root: Path, root: Path) -> None:
    """Register every file under `root` as a stage artifact."""
    if root.is_file():
        manifest.artifact(stage, workspace_root, root)
        return
    for path in sorted(root.rglob("*")):
        if path.is_file():
            manifest.artifact(stage, workspace_root, path)


def check_integrity(manifest: RunManifest, workspace: Workspace) -> None:
    """Artifacts on disk and in the manifest must agree (paths and hashes).

    Only completed stages count: a failed stage's partial artifacts are wiped
    before resume, so its registrations are stale by design.
    """
    completed = {s for s, st in manifest.stage_status().items() if st == "completed"}
    recorded = manifest.artifacts(stages=completed)
    on_disk = set(workspace.tracked_files())
    for rel, digest in recorded.items():
        path = workspace.root / rel
        if not path.exists():
            raise IntegrityError(f"manifest references missing artifact: {rel}")
        if sha256_file(path) != digest:
            raise IntegrityError(f"artifact changed since it was recorded: {rel}")
    unknown = on_disk - set(recorded)
    if unknown and completed:
        raise IntegrityError(f"workspace contains artifacts the manifest never recorded: {sorted(unknown)[:5]}")
