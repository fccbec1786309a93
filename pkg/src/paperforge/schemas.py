"""JSON Schemas for structured model outputs, keyed by identifier.

Every structured request names one of these ids; the gateway embeds the schema
in the prompt and validates replies against it during the repair loop.
"""

from __future__ import annotations

from typing import Any

from .errors import ConfigError


def _obj(properties: dict[str, Any], required: list[str] | None = None) -> dict[str, Any]:
    return {
        "type": "object",
        "properties": properties,
        "required": required if required is not None else sorted(properties),
        "additionalProperties": True,
    }


def _arr(items: dict[str, Any]) -> dict[str, Any]:
    return {"type": "array", "items": items}


_STR = {"type": "string"}
_STR_LIST = _arr(_STR)

SCHEMAS: dict[str, dict[str, Any]] = {
    # parsing stage
    "restored_text.v1": _obj(
        {
            "blocks": _arr(
                {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["paragraph", "heading", "ref"]},
                        "text": _STR,
                        "level": {"type": "integer"},
                        "ref": _STR,
                        "sources": _STR_LIST,
                    },
                    "required": ["kind"],
                }
            )
        },
        ["blocks"],
    ),
    "parsed_equation.v1": _obj(
        {"computational_form": _STR, "symbols": _STR_LIST},
        ["computational_form", "symbols"],
    ),
    "table_summary.v1": _obj({"summary": _STR}, ["summary"]),
    "integration.v1": _obj(
        {
            "drop": _arr(
                _obj({"id": _STR, "duplicate_of": _STR, "reason": _STR}, ["id", "duplicate_of"])
            )
        },
        ["drop"],
    ),
    "distill.v1": _obj(
        {"drop": _arr(_obj({"id": _STR, "category": _STR}, ["id", "category"]))},
        ["drop"],
    ),
    # blueprint stage
    "folder_categories.v1": _obj(
        {"categories": _arr(_obj({"folder": _STR, "category": _STR}, ["folder", "category"]))},
        ["categories"],
    ),
    "blueprint_sections.v1": _obj(
        {
            "architecture": _STR,
            "interdependencies": _STR,
            "function_designs": _STR,
            "class_structures": _STR,
        }
    ),
    # decomposition stage
    "architecture_plan.v1": _obj(
        {
            "entries": _arr(
                _obj(
                    {"path": _STR, "functionality": _STR, "anchors": _STR_LIST},
                    ["path", "functionality", "anchors"],
                )
            )
        },
        ["entries"],
    ),
    "component_spec.v1": _obj(
        {
            "units": _arr(
                _obj(
                    {
                        "name": _STR,
                        "kind": {"enum": ["class", "function"]},
                        "attributes": _STR_LIST,
                        "methods": _STR_LIST,
                        "anchors": _STR_LIST,
                    },
                    ["name", "kind", "attributes", "methods", "anchors"],
                )
            )
        },
        ["units"],
    ),
    "dependency_map.v1": _obj(
        {
            "edges": _arr(
                _obj({"src": _STR, "dst": _STR, "components": _STR_LIST}, ["src", "dst", "components"])
            ),
            "external": _arr(_obj({"file": _STR, "libraries": _STR_LIST}, ["file", "libraries"])),
        },
        ["edges"],
    ),
    "task_description.v1": _obj(
        {
            "steps": _arr(_obj({"text": _STR, "anchors": _STR_LIST}, ["text", "anchors"])),
            "exports": _STR_LIST,
            "consumes": _arr(_obj({"file": _STR, "unit": _STR}, ["file", "unit"])),
        },
        ["steps", "exports", "consumes"],
    ),
    # implementation / feedback stage
    "repo_files.v1": _obj(
        {
            "files": _arr(_obj({"path": _STR, "content": _STR}, ["path", "content"])),
            "entry": _STR,
        },
        ["files", "entry"],
    ),
    "validation_report.v1": _obj(
        {
            "aspects": _arr(
                _obj(
                    {
                        "aspect": {"enum": ["architecture", "loss", "optimization"]},
                        "status": {"enum": ["pass", "fail", "not_applicable"]},
                        "anchor": _STR,
                        "explanation": _STR,
                    },
                    ["aspect", "status", "explanation"],
                )
            )
        },
        ["aspects"],
    ),
    "error_localization.v1": _obj(
        {
            "findings": _arr(
                _obj({"file": _STR, "component": _STR, "excerpt": _STR}, ["file", "component", "excerpt"])
            )
        },
        ["findings"],
    ),
    "corrections.v1": _obj(
        {"revisions": _arr(_obj({"path": _STR, "content": _STR}, ["path", "content"]))},
        ["revisions"],
    ),
    # evaluation stage
    "unit_matching.v1": _obj(
        {"matches": _arr(_obj({"reference": _STR, "candidate": _STR}, ["reference", "candidate"]))},
        ["matches"],
    ),
    "unit_score.v1": _obj(
        {"score": {"type": "number"}, "enhancement": {"type": "boolean"}, "rationale": _STR},
        ["score", "enhancement", "rationale"],
    ),
}


def resolve_schema(schema_id: str) -> dict[str, Any]:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise ConfigError(f"unknown response schema: {schema_id!r}") from None
