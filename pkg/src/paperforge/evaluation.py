"""Structural-completeness scoring of a generated repository against a reference.

Function and class-method completeness are line-weighted means of rubric scores
on a six-value scale, with a +0.2 enhancement bonus capped at 1.0. Matching is
deterministic where possible (exact qualified name; byte-equal bodies score 1.0
outright) and model-assisted for the remainder; unmatched reference units score
0 without a model call.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .codescan import scan_python_file
from .errors import EvaluationError
from .gateway import ChatRequest, LlmGateway, StageBinding, TextPart
from . import prompts
from .workspace import atomic_write_json, atomic_write_text

log = logging.getLogger(__name__)

SCORE_SCALE = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
ENHANCEMENT_BONUS = 0.2


@dataclass(frozen=True)
class UnitRef:
    """One scoreable unit: a module function or a method within a class."""

    unit_id: str  # "<name>" or "<Class>.<method>"
    kind: str  # function | method
    owner: str = ""  # class name for methods
    file: str = ""
    weight: int = 1  # non-blank, non-comment lines of the reference unit
    source: str = ""

    def __post_init__(self) -> None:
        if self.weight < 1:
            raise ValueError("unit weight must be >= 1")


@dataclass
class UnitInventory:
    functions: list[UnitRef] = field(default_factory=list)
    methods: list[UnitRef] = field(default_factory=list)  # grouped by owner via UnitRef.owner
    skipped_files: list[str] = field(default_factory=list)

    def all_units(self) -> list[UnitRef]:
        return self.functions + self.methods

    def classes(self) -> dict[str, list[UnitRef]]:
        grouped: dict[str, list[UnitRef]] = {}
        for method in self.methods:
            grouped.setdefault(method.owner, []).append(method)
        return grouped


@dataclass(frozen=True)
class UnitScore:
    unit_id: str
    weight: int
    score: float
    bonus_applied: bool
    rationale: str
    matched: str | None  # candidate unit id or None

    def __post_init__(self) -> None:
        if self.score < 0.0 or self.score > 1.0:
            raise ValueError("unit score must stay within [0, 1]")


@dataclass
class CompletenessReport:
    comp_func: float | None
    comp_class: float | None
    function_scores: list[UnitScore]
    method_scores: list[UnitScore]
    skipped_files: list[str] = field(default_factory=list)  # unparseable, excluded

    def matching_table(self) -> list[dict[str, Any]]:
        return [
            {"reference": s.unit_id, "candidate": s.matched, "score": s.score,
             "weight": s.weight, "bonus": s.bonus_applied}
            for s in self.function_scores + self.method_scores
        ]


@dataclass(frozen=True)
class PerformanceReport:
    absolute: float
    original: float
    relative: float


def extract_units(tree: Path) -> UnitInventory:
    """Inventory functions and class methods with effective-line weights."""
    inventory = UnitInventory()
    tree = Path(tree)
    for path in sorted(tree.rglob("*.py")):
        if any(part.startswith(".") or part == "__pycache__" for part in path.parts):
            continue
        rel = path.relative_to(tree).as_posix()
        scan = scan_python_file(path)
        if not scan.parsed:
            log.warning("skipping unparseable file %s (%s)", rel, scan.parse_error)
            inventory.skipped_files.append(rel)
            continue
        for fn in scan.functions:
            inventory.functions.append(UnitRef(
                unit_id=fn.name, kind="function", file=rel,
                weight=max(1, fn.effective_lines), source=fn.source,
            ))
        for cls in scan.classes:
            for method in cls.methods:
                inventory.methods.append(UnitRef(
                    unit_id=f"{cls.name}.{method.name}", kind="method", owner=cls.name,
                    file=rel, weight=max(1, method.effective_lines), source=method.source,
                ))
    return inventory


def snap_to_scale(value: float) -> float:
    """Nearest legal rubric score; ties resolve upward."""
    best = min(SCORE_SCALE, key=lambda s: (abs(s - value), -s))
    return best


def _normalize_source(source: str) -> str:
    return "\n".join(line.rstrip() for line in source.strip().splitlines())


def judge_unit(
    reference: UnitRef,
    candidate: UnitRef | None,
    gateway: LlmGateway | None,
    binding: StageBinding | None,
    max_repairs: int = 2,
) -> UnitScore:
    """Rubric score for one reference unit against its matched candidate (or none)."""
    if candidate is None:
        return UnitScore(reference.unit_id, reference.weight, 0.0, False,
                         "no corresponding unit in generated code", None)
    if _normalize_source(reference.source) == _normalize_source(candidate.source):
        return UnitScore(reference.unit_id, reference.weight, 1.0, False,
                         "identical implementation", candidate.unit_id)
    if gateway is None or binding is None:
        raise EvaluationError("non-identical units require a judge binding")

    request = ChatRequest(
        system_prompt=prompts.JUDGE_SYSTEM,
        user_parts=(TextPart(prompts.JUDGE_USER.format(
            reference=reference.source, candidate=candidate.source)),),
        response_schema="unit_score.v1",
    )
    result = gateway.complete_structured(request, binding, max_repairs)
    raw_score = float(result.value["score"])
    score = snap_to_scale(min(1.0, max(0.0, raw_score)))
    if score != raw_score:
        log.warning("judge returned off-scale score %s for %s; snapped to %s",
                    raw_score, reference.unit_id, score)
    bonus = False
    if result.value.get("enhancement") and score < 1.0:
        score = min(1.0, score + ENHANCEMENT_BONUS)
        bonus = True
    elif result.value.get("enhancement"):
        bonus = True  # already at the cap
    return UnitScore(reference.unit_id, reference.weight, score, bonus,
                     result.value.get("rationale", ""), candidate.unit_id)


def match_units(
    reference: list[UnitRef],
    generated: list[UnitRef],
    gateway: LlmGateway | None,
    binding: StageBinding | None,
    max_repairs: int = 2,
) -> dict[str, UnitRef]:
    """reference unit id -> candidate, exact names first, model for the remainder."""
    by_id = {unit.unit_id: unit for unit in generated}
    matches: dict[str, UnitRef] = {}
    leftovers: list[UnitRef] = []
    for ref in reference:
        if ref.unit_id in by_id:
            matches[ref.unit_id] = by_id[ref.unit_id]
        else:
            leftovers.append(ref)
    unused = [u for u in generated if u.unit_id not in {m.unit_id for m in matches.values()}]
    if not leftovers or not unused or gateway is None or binding is None:
        return matches

    request = ChatRequest(
        system_prompt=prompts.MATCH_SYSTEM,
        user_parts=(TextPart(prompts.MATCH_USER.format(
            reference="\n".join(f"- {u.unit_id} ({u.kind})" for u in leftovers),
            generated="\n".join(f"- {u.unit_id} ({u.kind})" for u in unused))),),
        response_schema="unit_matching.v1",
    )
    result = gateway.complete_structured(request, binding, max_repairs)
    unused_by_id = {u.unit_id: u for u in unused}
    leftover_ids = {u.unit_id for u in leftovers}
    claimed: set[str] = set()
    for entry in result.value["matches"]:
        ref_id, cand_id = entry["reference"], entry["candidate"]
        if ref_id in leftover_ids and cand_id in unused_by_id and cand_id not in claimed:
            matches[ref_id] = unused_by_id[cand_id]
            claimed.add(cand_id)
    return matches


def comp_func(scores: list[UnitScore]) -> float | None:
    """Weighted mean over function scores; None when there is nothing to weigh."""
    total_weight = sum(s.weight for s in scores)
    if total_weight == 0 or not scores:
        return None
    return math.fsum(s.weight * s.score for s in scores) / total_weight


def comp_class(method_scores: list[UnitScore]) -> float | None:
    """Double-sum weighted mean over classes and their methods.

    Algebraically the class/method double sum collapses to a single weighted
    mean over all methods, since both numerator and denominator sum over the
    same (class, method) pairs.
    """
    total_weight = sum(s.weight for s in method_scores)
    if total_weight == 0 or not method_scores:
        return None
    return math.fsum(s.weight * s.score for s in method_scores) / total_weight


def score_repositories(
    reference_tree: Path,
    generated_tree: Path,
    gateway: LlmGateway | None,
    binding: StageBinding | None,
    max_repairs: int = 2,
) -> CompletenessReport:
    reference = extract_units(reference_tree)
    generated = extract_units(generated_tree)

    fn_matches = match_units(reference.functions, generated.functions, gateway, binding, max_repairs)
    method_matches = match_units(reference.methods, generated.methods, gateway, binding, max_repairs)

    function_scores = [
        judge_unit(ref, fn_matches.get(ref.unit_id), gateway, binding, max_repairs)
        for ref in reference.functions
    ]
    method_scores = [
        judge_unit(ref, method_matches.get(ref.unit_id), gateway, binding, max_repairs)
        for ref in reference.methods
    ]
    skipped = [f"reference:{f}" for f in reference.skipped_files]
    skipped += [f"generated:{f}" for f in generated.skipped_files]
    return CompletenessReport(
        comp_func=comp_func(function_scores),
        comp_class=comp_class(method_scores),
        function_scores=function_scores,
        method_scores=method_scores,
        skipped_files=skipped,
    )


def measure_performance(run_output: str, pattern: str, original: float) -> PerformanceReport:
    """Absolute metric from the final matching line; relative = absolute / original."""
    if original <= 0:
        raise EvaluationError("original performance value must be positive")
    try:
        regex = re.compile(pattern)
    except re.error as exc:
        raise EvaluationError(f"invalid metric pattern: {exc}") from exc
    last_match = None
    for line in run_output.splitlines():
        found = regex.search(line)
        if found:
            last_match = found
    if last_match is None:
        raise EvaluationError(f"metric pattern {pattern!r} never matched the run output")
    try:
        absolute = float(last_match.group(1) if last_match.groups() else last_match.group(0))
    except ValueError as exc:
        raise EvaluationError(f"matched metric text is not numeric: {last_match.group(0)!r}") from exc
    return PerformanceReport(absolute=absolute, original=original, relative=absolute / original)


def render_report(
    completeness: CompletenessReport, performance: PerformanceReport | None
) -> str:
    def fmt(value: float | None) -> str:
        return "not applicable" if value is None else f"{100 * value:.1f}%"

    lines = ["# Evaluation report", ""]
    lines.append(f"- function completeness: {fmt(completeness.comp_func)}")
    lines.append(f"- class completeness: {fmt(completeness.comp_class)}")
    if performance is not None:
        lines.append(f"- absolute performance: {100 * performance.absolute:.1f}%")
        lines.append(f"- relative performance: {100 * performance.relative:.1f}%")
    lines.append("")
    lines.append("## Unit matching")
    lines.append("")
    lines.append("| reference | candidate | weight | score | bonus |")
    lines.append("|---|---|---|---|---|")
    for row in completeness.matching_table():
        lines.append(
            f"| {row['reference']} | {row['candidate'] or '(unmatched)'} | "
            f"{row['weight']} | {row['score']:.1f} | {'yes' if row['bonus'] else 'no'} |"
        )
    if completeness.skipped_files:
        lines.append("")
        lines.append("## Skipped files (unparseable)")
        lines.append("")
        for skipped in completeness.skipped_files:
            lines.append(f"- {skipped}")
    return "\n".join(lines) + "\n"


def persist_evaluation(
    out_dir: Path,
    completeness: CompletenessReport,
    performance: PerformanceReport | None,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload: dict[str, Any] = {
        "comp_func": completeness.comp_func,
        "comp_class": completeness.comp_class,
        "units": completeness.matching_table(),
        "skipped_files": completeness.skipped_files,
    }
    if performance is not None:
        payload["performance"] = {
            "absolute": performance.absolute,
            "original": performance.original,
            "relative": performance.relative,
        }
    atomic_write_json(out_dir / "evaluation.json", payload)
    atomic_write_text(out_dir / "evaluation.md", render_report(completeness, performance))
