"""Shared fixtures: the mini-paper corpus, scripted mock playbooks, and helpers.

The mock playbook drives every model-facing operation deterministically; the
block/section id constants below are frozen against the mini-paper fixture and
verified by an explicit test in test_ingest.py.
"""

from __future__ import annotations

import json
import struct
import sys
import zlib
from pathlib import Path

import pytest

from paperforge.gateway import LlmGateway, MockBackend, ModelProfile, StageBinding


def png_bytes(width: int = 4, height: int = 4, rgb: tuple[int, int, int] = (40, 90, 200)) -> bytes:
    """A tiny valid PNG for image-payload fixtures."""

    def chunk(tag: bytes, data: bytes) -> bytes:
        return (struct.pack(">I", len(data)) + tag + data
                + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF))

    raw = b""
    for _ in range(height):
        raw += b"\x00" + bytes(rgb) * width
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw))
            + chunk(b"IEND", b""))


MINI_PAPER_MD = """\
# TinyNet: A Minimal Classifier

## Introduction

We present TinyNet, a small neural classifier trained on a synthetic dataset of paired values.

## Related Work

Prior systems explored many variants of linear models; this section reviews them for context.

## Method

TinyNet consists of an encoder and a decoder connected in sequence.

![TinyNet architecture with encoder and decoder](images/architecture.png)

The training loss is the mean squared error over the batch:

$$ L = (1/N) \\sum_i (y_i - t_i)^2 $$

Weights are updated by plain gradient descent:

$$ w' = w - \\eta * g $$

Table 1 lists the training hyperparameters.

| parameter | value |
| --- | --- |
| lr | 0.001 |
| batch | 64 |

## Results

TinyNet reaches an accuracy of 0.9 on the held-out synthetic split.
"""

# frozen block order of the mini paper (verified in test_ingest.py)
MINI_BLOCK_ORDER = [
    "head_0001", "head_0002", "para_0001", "head_0003", "para_0002", "head_0004",
    "para_0003", "img_0001", "para_0004", "eq_0001", "para_0005", "eq_0002",
    "para_0006", "tbl_0001", "head_0005", "para_0007",
]
MINI_TEXT_BLOCKS = [b for b in MINI_BLOCK_ORDER if b.startswith(("para", "head"))]

# section ids after identity restoration + integration (positional)
SEC = {block: f"sec_{i + 1:04d}" for i, block in enumerate(MINI_BLOCK_ORDER)}
# section ids when the multimodal switch is off (text blocks only)
SEC_TEXT_ONLY = {block: f"sec_{i + 1:04d}" for i, block in enumerate(MINI_TEXT_BLOCKS)}


DATA_LOADER_PY = """\
def load_data(n=8):
    xs = list(range(n))
    ys = [2 * x for x in xs]
    return xs, ys
"""

MODEL_PY = """\
class TinyModel:
    def __init__(self):
        self.weight = 2.0

    def forward(self, x):
        return self.weight * x
"""

TRAIN_PY = """\
from data_loader import load_data
from model import TinyModel


def main():
    xs, ys = load_data()
    net = TinyModel()
    correct = sum(1 for x, y in zip(xs, ys) if net.forward(x) == y)
    print(f"final accuracy: {correct / len(xs):.1f}")


if __name__ == "__main__":
    main()
"""

TRAIN_PY_NAME_ERROR = """\
from data_loader import load_data
from model import TinyModel


def main():
    xs, ys = load_data()
    net = TinyModel()
    print(f"final accuracy: {acuracy}")


if __name__ == "__main__":
    main()
"""

TRAIN_PY_ASSERT_ERROR = """\
from data_loader import load_data
from model import TinyModel


def main():
    xs, ys = load_data()
    net = TinyModel()
    assert len(xs) == 0, "planted failure"
    print("final accuracy: 0.0")


if __name__ == "__main__":
    main()
"""

ENTRY_COMMAND = f"{sys.executable} train.py"

USAGE_IN, USAGE_OUT = 1000, 100  # uniform scripted usage per mock response


@pytest.fixture()
def mini_paper_dir(tmp_path: Path) -> Path:
    directory = tmp_path / "mini_paper"
    (directory / "images").mkdir(parents=True)
    (directory / "paper.md").write_text(MINI_PAPER_MD, encoding="utf-8")
    (directory / "images" / "architecture.png").write_bytes(png_bytes())
    return directory


def identity_restore_blocks() -> list[dict]:
    """The restoration decision that reproduces the mini paper unchanged."""
    headings = {
        "head_0001": ("TinyNet: A Minimal Classifier", 1),
        "head_0002": ("Introduction", 2),
        "head_0003": ("Related Work", 2),
        "head_0004": ("Method", 2),
        "head_0005": ("Results", 2),
    }
    paragraphs = {
        "para_0001": "We present TinyNet, a small neural classifier trained on a synthetic dataset of paired values.",
        "para_0002": "Prior systems explored many variants of linear models; this section reviews them for context.",
        "para_0003": "TinyNet consists of an encoder and a decoder connected in sequence.",
        "para_0004": "The training loss is the mean squared error over the batch:",
        "para_0005": "Weights are updated by plain gradient descent:",
        "para_0006": "Table 1 lists the training hyperparameters.",
        "para_0007": "TinyNet reaches an accuracy of 0.9 on the held-out synthetic split.",
    }
    blocks = []
    for block_id in MINI_BLOCK_ORDER:
        if block_id in headings:
            text, level = headings[block_id]
            blocks.append({"kind": "heading", "text": text, "level": level, "sources": [block_id]})
        elif block_id in paragraphs:
            blocks.append({"kind": "paragraph", "text": paragraphs[block_id], "sources": [block_id]})
        else:
            blocks.append({"kind": "ref", "ref": block_id})
    return blocks


def _resp(payload, usage=(USAGE_IN, USAGE_OUT)) -> dict:
    text = payload if isinstance(payload, str) else json.dumps(payload)
    return {"text": text, "input_tokens": usage[0], "output_tokens": usage[1]}


def parsing_rules() -> list[dict]:
    sec = SEC
    return [
        {"stage": "parsing", "schema": "restored_text.v1",
         "responses": [_resp({"blocks": identity_restore_blocks()})]},
        {"stage": "parsing", "schema": None, "contains": "Describe the figure",
         "responses": [_resp("Encoder feeds decoder (encoder -> decoder); hidden dim 16.")]},
        {"stage": "parsing", "schema": "parsed_equation.v1",
         "responses": [
             _resp({"computational_form": "L := sum((y_i - t_i) ** 2) / N",
                    "symbols": ["L", "y", "t", "N"]}),
             _resp({"computational_form": "w := w - eta * g",
                    "symbols": ["w", "eta", "g"]}),
         ]},
        {"stage": "parsing", "schema": "table_summary.v1",
         "responses": [_resp({"summary": "Training hyperparameters: lr 0.001, batch 64."})]},
        {"stage": "parsing", "schema": "integration.v1",
         "responses": [_resp({"drop": []})]},
        {"stage": "parsing", "schema": "distill.v1",
         "responses": [_resp({"drop": [
             {"id": sec["head_0003"], "category": "related_work"},
             {"id": sec["para_0002"], "category": "related_work"},
         ]})]},
    ]


def planning_rules(sec: dict[str, str]) -> list[dict]:
    return [
        {"stage": "decomposition", "schema": "architecture_plan.v1",
         "responses": [_resp({"entries": [
             {"path": "data_loader.py", "functionality": "synthetic dataset loading",
              "anchors": [sec["para_0001"]]},
             {"path": "model.py", "functionality": "TinyNet encoder-decoder model",
              "anchors": [sec["para_0003"]]},
             {"path": "train.py", "functionality": "training entry point",
              "anchors": [sec["para_0004"], sec["para_0005"]]},
         ]})]},
        {"stage": "decomposition", "schema": "component_spec.v1", "contains": "File: data_loader.py",
         "responses": [_resp({"units": [
             {"name": "load_data", "kind": "function", "attributes": ["n"],
              "methods": ["returns paired input/target lists"], "anchors": [sec["para_0001"]]},
         ]})]},
        {"stage": "decomposition", "schema": "component_spec.v1", "contains": "File: model.py",
         "responses": [_resp({"units": [
             {"name": "TinyModel", "kind": "class", "attributes": ["weight"],
              "methods": ["forward"], "anchors": [sec["para_0003"]]},
         ]})]},
        {"stage": "decomposition", "schema": "component_spec.v1", "contains": "File: train.py",
         "responses": [_resp({"units": [
             {"name": "main", "kind": "function", "attributes": [],
              "methods": ["runs the training loop and prints accuracy"],
              "anchors": [sec["para_0004"]]},
         ]})]},
        {"stage": "decomposition", "schema": "dependency_map.v1",
         "responses": [_resp({"edges": [
             {"src": "train.py", "dst": "model.py", "components": ["TinyModel"]},
             {"src": "train.py", "dst": "data_loader.py", "components": ["load_data"]},
         ], "external": []})]},
        {"stage": "decomposition", "schema": "task_description.v1", "contains": "File: data_loader.py",
         "responses": [_resp({"steps": [
             {"text": "Implement load_data returning deterministic paired lists",
              "anchors": [sec["para_0001"]]}],
             "exports": ["load_data"], "consumes": []})]},
        {"stage": "decomposition", "schema": "task_description.v1", "contains": "File: model.py",
         "responses": [_resp({"steps": [
             {"text": "Implement TinyModel with a forward method doubling its input",
              # cite the architecture figure's section when the image channel exists
              "anchors": [sec.get("img_0001", sec["para_0003"])]}],
             "exports": ["TinyModel"], "consumes": []})]},
        {"stage": "decomposition", "schema": "task_description.v1", "contains": "File: train.py",
         "responses": [_resp({"steps": [
             {"text": "Train and report final accuracy on the synthetic data",
              "anchors": [sec["para_0004"], sec["para_0005"]]}],
             "exports": ["main"],
             "consumes": [{"file": "model.py", "unit": "TinyModel"},
                          {"file": "data_loader.py", "unit": "load_data"}]})]},
    ]


def implement_rules(train_versions: list[str] | None = None) -> list[dict]:
    train_first = (train_versions or [TRAIN_PY])[0]
    return [
        {"stage": "implement", "contains": "Task for data_loader.py",
         "responses": [_resp(f"```python\n{DATA_LOADER_PY}```")]},
        {"stage": "implement", "contains": "Task for model.py",
         "responses": [_resp(f"```python\n{MODEL_PY}```")]},
        {"stage": "implement", "contains": "Task for train.py",
         "responses": [_resp(f"```python\n{train_first}```")]},
    ]


def validate_rules(sec: dict[str, str]) -> list[dict]:
    return [
        {"stage": "validate", "schema": "validation_report.v1",
         "responses": [_resp({"aspects": [
             {"aspect": "architecture", "status": "pass", "anchor": sec["para_0003"],
              "explanation": "encoder-decoder wiring matches"},
             {"aspect": "loss", "status": "pass", "anchor": sec["para_0004"],
              "explanation": "mean squared error present"},
             {"aspect": "optimization", "status": "pass", "anchor": sec["para_0005"],
              "explanation": "gradient descent update present"},
         ]})]},
    ]


def debug_rules(corrections: list[str]) -> list[dict]:
    localizations = [
        _resp({"findings": [{"file": "train.py", "component": "main",
                             "excerpt": f"scripted localization {i + 1}"}]})
        for i in range(len(corrections))
    ]
    fixes = [_resp({"revisions": [{"path": "train.py", "content": content}]})
             for content in corrections]
    return [
        {"stage": "debug", "schema": "error_localization.v1", "responses": localizations},
        {"stage": "debug", "schema": "corrections.v1", "responses": fixes},
    ]


def e2e_playbook() -> dict:
    """Playbook for the clean four-stage run (19 non-cached calls; see test math)."""
    return {"rules": parsing_rules() + planning_rules(SEC) + implement_rules()
            + validate_rules(SEC)}


def debug_playbook() -> dict:
    """Two scripted fixes: generation emits a NameError, fix 1 leaves an assert, fix 2 is clean."""
    rules = (parsing_rules() + planning_rules(SEC)
             + implement_rules([TRAIN_PY_NAME_ERROR])
             + validate_rules(SEC)
             + debug_rules([TRAIN_PY_ASSERT_ERROR, TRAIN_PY]))
    return {"rules": rules}


def write_playbook(tmp_path: Path, playbook: dict, name: str = "playbook.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(playbook), encoding="utf-8")
    return path


def mock_gateway(tmp_path: Path, playbook: dict, *, log: bool = True) -> LlmGateway:
    backend = MockBackend(playbook)
    return LlmGateway(
        backend,
        tmp_path / "cache",
        tmp_path / "calls.jsonl" if log else None,
        retries=3,
        backoff=0.0,
    )


def make_binding(stage: str, *, vision: bool = True) -> StageBinding:
    profile = ModelProfile(name="mock-model", supports_vision=vision)
    return StageBinding(stage, profile)


def cli_run_argv(workspace: Path, paper: Path, playbook_path: Path,
                 blueprint_meta: Path | None = None,
                 extra_sets: dict[str, str] | None = None) -> list[str]:
    argv = [
        "run",
        "--paper", str(paper),
        "--workspace", str(workspace),
        "--backend", f"mock:{playbook_path}",
        "--set", f"run.entry_command={ENTRY_COMMAND}",
        "--set", "budgets.execution_timeout=60",
        "--set", "gateway.backoff=0.0",
    ]
    if blueprint_meta is not None:
        argv += ["--blueprint", str(blueprint_meta)]
    for key, value in (extra_sets or {}).items():
        argv += ["--set", f"{key}={value}"]
    return argv


def write_blueprint_meta(tmp_path: Path) -> Path:
    """A minimal pre-built organization template, as cmd_blueprint would emit."""
    meta = tmp_path / "blueprint.meta"
    meta.write_text(json.dumps({
        "provenance": ["fixture_repo"],
        "corpus_size": 1,
        "sections": {
            "repository architecture": "Folder patterns by corpus frequency:\n- data/ appears in 1/1 repositories (category: data)",
            "file interdependencies": "Entry scripts import model and data modules.",
            "function designs": "Small pure functions.",
            "class structures": "Model classes expose forward().",
        },
        "folder_frequencies": [{"folder": "data", "count": 1, "category": "data"}],
    }), encoding="utf-8")
    return meta


def base_config_overrides(workspace: Path, paper: Path, playbook_path: Path,
                          blueprint_meta: Path | None = None) -> dict[str, str]:
    overrides = {
        "run.workspace": str(workspace),
        "run.paper": str(paper),
        "run.entry_command": ENTRY_COMMAND,
        "gateway.backend": f"mock:{playbook_path}",
        "gateway.backoff": "0.0",
        "budgets.execution_timeout": "60",
        "model.default.supports_vision": "true",
    }
    if blueprint_meta is not None:
        overrides["run.blueprint"] = str(blueprint_meta)
    return overrides
