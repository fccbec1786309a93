"""Multimodal content parsing: OCR restoration, per-element parsing, integration, distillation.

Model calls follow one pattern throughout: the model returns a structured
*decision* (restructured blocks, duplicate ids, drop ids) and local code
applies it, enforcing the conservation invariants mechanically. Parsing never
drops an element; only integrate/distill may, and always with a record.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import StageError
from .gateway import ChatRequest, ImagePart, LlmGateway, StageBinding, TextPart
from . import prompts
from .ingest import EQUATION, HEADING, IMAGE, PARAGRAPH, TABLE, RawBlock, RawPaper
from .workspace import atomic_write_json, atomic_write_text, read_json

log = logging.getLogger(__name__)

# words dropped by restoration beyond this fraction mean the model rewrote the paper
MAX_WORD_DROP_FRACTION = 0.20

# context accompanying each image/equation/table: caption plus this many
# preceding paragraphs (tunable; see design notes)
CONTEXT_PARAGRAPHS = 1

# long papers are processed per top-level section, one model call per chunk,
# with a one-paragraph overlap carried as context
RESTORE_CHUNK_BLOCKS = 80
INTEGRATE_CHUNK_SECTIONS = 80

_WORD_RE = re.compile(r"[A-Za-z0-9']+")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

# pseudocode function words that never count as equation symbols
_FUNCTION_WORDS = {
    "sum", "exp", "log", "sqrt", "abs", "max", "min", "mean", "prod", "norm",
    "softmax", "argmax", "argmin", "len", "sigmoid", "relu", "tanh", "for",
    "in", "if", "else", "return",
}


@dataclass(frozen=True)
class StructuredBlock:
    kind: str  # paragraph | heading | ref
    text: str = ""
    sources: tuple[str, ...] = ()
    ref: str = ""
    level: int = 0


@dataclass
class StructuredText:
    blocks: list[StructuredBlock]

    def refs(self) -> list[str]:
        return [b.ref for b in self.blocks if b.kind == "ref"]


@dataclass(frozen=True)
class ParsedImage:
    source_id: str
    description: str
    caption_link: str


@dataclass(frozen=True)
class TableRecord:
    key: str
    value: str
    kind: str  # hyperparameter | metric | config
    row: int
    col: int
    label: str = ""


@dataclass(frozen=True)
class ParsedTable:
    source_id: str
    records: tuple[TableRecord, ...]
    summary: str
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ParsedEquation:
    source_id: str
    typeset: str
    computational_form: str
    symbols: tuple[str, ...]
    passthrough: bool = False


@dataclass(frozen=True)
class Section:
    id: str
    origin: str  # text | image | equation | table
    text: str
    anchors: tuple[str, ...]


@dataclass
class IntegratedPaper:
    sections: list[Section]
    dropped: list[dict[str, str]] = field(default_factory=list)

    def by_id(self, section_id: str) -> Section:
        for section in self.sections:
            if section.id == section_id:
                return section
        raise KeyError(section_id)


@dataclass
class DistilledPaper:
    sections: list[Section]
    dropped: list[dict[str, str]] = field(default_factory=list)

    def by_id(self, section_id: str) -> Section:
        for section in self.sections:
            if section.id == section_id:
                return section
        raise KeyError(section_id)

    def section_ids(self) -> set[str]:
        return {s.id for s in self.sections}

    def render_markdown(self) -> str:
        lines = []
        for section in self.sections:
            lines.append(f"### {section.id} ({section.origin}; anchors: {', '.join(section.anchors)})")
            lines.append("")
            lines.append(section.text)
            lines.append("")
        if self.dropped:
            lines.append("### dropped")
            for entry in self.dropped:
                lines.append(f"- {entry['id']}: {entry.get('category', entry.get('reason', ''))}")
        return "\n".join(lines) + "\n"


def word_multiset(text: str) -> Counter:
    return Counter(w.lower() for w in _WORD_RE.findall(text))


def element_context(raw: RawPaper, element: RawBlock) -> str:
    """Caption plus the nearest preceding paragraphs, for grounding element parses."""
    idx = raw.blocks.index(element)
    paragraphs = [b.text for b in raw.blocks[:idx] if b.kind == PARAGRAPH]
    return " ".join(paragraphs[-CONTEXT_PARAGRAPHS:]) if paragraphs else ""


# -- restoration ---------------------------------------------------------------

def _render_blocks_for_prompt(blocks: list[RawBlock]) -> str:
    rendered = []
    for block in blocks:
        if block.kind in (PARAGRAPH, HEADING):
            rendered.append(f"[{block.id}] ({block.kind}) {block.text}")
        else:
            note = block.caption or block.text.splitlines()[0]
            rendered.append(f"[{block.id}] ({block.kind} element) {note}")
    return "\n".join(rendered)


def chunk_by_sections(blocks: list[RawBlock], max_blocks: int) -> list[list[RawBlock]]:
    """Split at top-level headings, then pack whole sections up to `max_blocks`."""
    sections: list[list[RawBlock]] = []
    for block in blocks:
        if block.kind == HEADING and block.level <= 2 and sections and sections[-1]:
            sections.append([block])
        else:
            if not sections:
                sections.append([])
            sections[-1].append(block)
    chunks: list[list[RawBlock]] = []
    for section in sections:
        if chunks and len(chunks[-1]) + len(section) <= max_blocks:
            chunks[-1].extend(section)
        else:
            chunks.append(list(section))
    return chunks


def _restore_chunk(
    chunk: list[RawBlock],
    overlap: RawBlock | None,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int,
    retry_tag: str,
) -> list[dict]:
    chunk_text_ids = {b.id for b in chunk if b.kind in (PARAGRAPH, HEADING)}
    chunk_element_ids = {b.id for b in chunk if b.kind not in (PARAGRAPH, HEADING)}

    def validate(value: Any) -> list[str]:
        problems = []
        for i, block in enumerate(value["blocks"]):
            kind = block.get("kind")
            if kind == "ref":
                if block.get("ref") not in chunk_element_ids:
                    problems.append(f"block {i}: ref {block.get('ref')!r} is not an element id of this part")
            else:
                if not block.get("text", "").strip():
                    problems.append(f"block {i}: empty {kind}")
                sources = [s for s in block.get("sources", []) if s in chunk_text_ids]
                if not sources:
                    problems.append(f"block {i}: needs at least one valid source id from this part")
        return problems

    prompt = prompts.RESTORE_USER.format(blocks=_render_blocks_for_prompt(chunk))
    if overlap is not None:
        prompt = (f"(context from the previous part, already restored, do not re-emit)\n"
                  f"{overlap.text}\n\n{prompt}")
    request = ChatRequest(
        system_prompt=prompts.RESTORE_SYSTEM,
        user_parts=(TextPart(prompt + retry_tag),),
        response_schema="restored_text.v1",
    )
    result = gateway.complete_validated(request, binding, validate, max_repairs)
    return result.value["blocks"]


def restore_structure(
    raw: RawPaper,
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
    chunk_blocks: int = RESTORE_CHUNK_BLOCKS,
) -> StructuredText:
    """LLM-guided cleanup of OCR artifacts, with conservation enforced locally.

    Long papers are restored one top-level section at a time; the last
    paragraph of the previous chunk rides along as context only.
    """
    text_ids = {b.id for b in raw.text_blocks}
    element_ids = [b.id for b in raw.blocks if b.kind not in (PARAGRAPH, HEADING)]
    chunks = chunk_by_sections(raw.blocks, chunk_blocks)

    raw_words = Counter()
    for block in raw.text_blocks:
        raw_words += word_multiset(block.text)

    for attempt in range(2):  # word-drop failures get one full retry
        retry_tag = f"\n(retry {attempt})" if attempt else ""
        collected: list[dict] = []
        for index, chunk in enumerate(chunks):
            overlap = None
            if index > 0:
                previous_paragraphs = [b for b in chunks[index - 1] if b.kind == PARAGRAPH]
                overlap = previous_paragraphs[-1] if previous_paragraphs else None
            collected.extend(
                _restore_chunk(chunk, overlap, gateway, binding, max_repairs, retry_tag)
            )
        structured = _normalize_restored({"blocks": collected}, raw, element_ids, text_ids)
        restored_words = Counter()
        for block in structured.blocks:
            if block.kind != "ref":
                restored_words += word_multiset(block.text)
        missing = sum((raw_words - restored_words).values())
        total = sum(raw_words.values())
        if total == 0 or missing / total <= MAX_WORD_DROP_FRACTION:
            return structured
        log.warning("restoration dropped %.0f%% of source words; retrying", 100 * missing / total)
    raise StageError("parsing", "restoration dropped more than 20% of source words twice")


def _normalize_restored(
    value: Any, raw: RawPaper, element_ids: list[str], text_ids: set[str]
) -> StructuredText:
    """Enforce that every element id appears exactly once, reinserting/deduping as needed."""
    blocks: list[StructuredBlock] = []
    seen_refs: set[str] = set()
    for entry in value["blocks"]:
        if entry["kind"] == "ref":
            ref = entry["ref"]
            if ref in seen_refs:
                log.warning("restoration duplicated element %s; keeping first", ref)
                continue
            seen_refs.add(ref)
            blocks.append(StructuredBlock(kind="ref", ref=ref))
        else:
            blocks.append(
                StructuredBlock(
                    kind=entry["kind"],
                    text=entry.get("text", ""),
                    sources=tuple(s for s in entry.get("sources", []) if s in text_ids),
                    level=int(entry.get("level", 0)),
                )
            )

    raw_order = [b.id for b in raw.blocks]
    for element_id in element_ids:
        if element_id in seen_refs:
            continue
        log.warning("restoration omitted element %s; reinserting at original anchor", element_id)
        preceding_text = {bid for bid in raw_order[: raw_order.index(element_id)] if bid in text_ids}
        insert_at = 0
        for i, block in enumerate(blocks):
            if block.kind != "ref" and set(block.sources) & preceding_text:
                insert_at = i + 1
        blocks.insert(insert_at, StructuredBlock(kind="ref", ref=element_id))
        seen_refs.add(element_id)
    return StructuredText(blocks)


# -- per-element parsing ---------------------------------------------------------

def parse_image(
    image: RawBlock, raw: RawPaper, gateway: LlmGateway, binding: StageBinding
) -> ParsedImage:
    payload = raw.payload_path(image).read_bytes()
    media_type = "image/png" if image.asset.lower().endswith(".png") else "image/jpeg"
    request = ChatRequest(
        system_prompt=prompts.IMAGE_SYSTEM,
        user_parts=(
            TextPart(prompts.IMAGE_USER.format(caption=image.caption or "(none)",
                                               context=element_context(raw, image) or "(none)")),
            ImagePart(media_type, payload),
        ),
    )
    response = gateway.complete(request, binding)
    description = response.text.strip()
    if not description:
        description = "No implementation-relevant content."
    return ParsedImage(source_id=image.id, description=description, caption_link=image.caption)


def parse_equation(
    equation: RawBlock, raw: RawPaper, gateway: LlmGateway, binding: StageBinding,
    max_repairs: int = 2,
) -> ParsedEquation:
    request = ChatRequest(
        system_prompt=prompts.EQUATION_SYSTEM,
        user_parts=(TextPart(prompts.EQUATION_USER.format(
            equation=equation.text, context=element_context(raw, equation) or "(none)")),),
        response_schema="parsed_equation.v1",
    )
    try:
        result = gateway.complete_structured(request, binding, max_repairs)
    except StageError:
        log.warning("equation %s could not be parsed; passing through", equation.id)
        return ParsedEquation(equation.id, equation.text, equation.text, (), passthrough=True)
    form = result.value["computational_form"]
    symbols = list(dict.fromkeys(result.value["symbols"]))
    for extra in _undeclared_symbols(form, symbols):
        log.warning("equation %s: form references undeclared symbol %r; adding", equation.id, extra)
        symbols.append(extra)
    return ParsedEquation(equation.id, equation.text, form, tuple(symbols))


def _undeclared_symbols(form: str, symbols: list[str]) -> list[str]:
    declared = {s.lower() for s in symbols}
    extras = []
    for ident in _IDENT_RE.findall(form):
        base = ident.split("_")[0].lower()
        if ident.lower() in _FUNCTION_WORDS or base in _FUNCTION_WORDS:
            continue
        if ident.lower() in declared or base in declared:
            continue
        if ident not in extras:
            extras.append(ident)
    return extras


_HYPER_WORDS = {
    "lr", "learning", "rate", "batch", "epoch", "epochs", "decay", "dropout",
    "hidden", "dim", "layers", "heads", "optimizer", "momentum", "seed",
    "temperature", "alpha", "beta", "gamma", "lambda", "warmup", "steps",
}
_METRIC_WORDS = {
    "accuracy", "acc", "f1", "precision", "recall", "auc", "loss", "bleu",
    "rouge", "perplexity", "error", "mse", "rmse", "mae", "map", "score",
}


def _record_kind(*texts: str) -> str:
    tokens: set[str] = set()
    for text in texts:
        tokens.update(t.lower() for t in re.split(r"[^A-Za-z0-9]+", text) if t)
    if tokens & _METRIC_WORDS:
        return "metric"
    if tokens & _HYPER_WORDS:
        return "hyperparameter"
    return "config"


_SEPARATOR_CELL = re.compile(r"^:?-{2,}:?$")


def extract_table_records(table: RawBlock) -> tuple[list[TableRecord], list[str]]:
    """Deterministic grid extraction; every record carries its source cell coordinates."""
    rows: list[list[str]] = []
    for line in table.text.splitlines():
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        rows.append(cells)

    header: list[str] | None = None
    data_rows: list[tuple[int, list[str]]] = []
    warnings: list[str] = []
    if len(rows) >= 2 and all(_SEPARATOR_CELL.match(c) for c in rows[1] if c):
        header = rows[0]
        data_rows = [(i, row) for i, row in enumerate(rows) if i >= 2]
    else:
        data_rows = list(enumerate(rows))
        warnings.append("headerless table; using positional keys")

    records: list[TableRecord] = []
    for row_idx, cells in data_rows:
        if not any(cells):
            continue
        if len(cells) <= 2:
            key = cells[0] if cells else ""
            value = cells[1] if len(cells) > 1 else cells[0]
            col = 1 if len(cells) > 1 else 0
            if header and len(cells) == 1:
                key = header[0]
            if not header and len(cells) == 1:
                key = "col_1"
            records.append(TableRecord(key, value, _record_kind(key, *(header or [])), row_idx, col))
        else:
            label = cells[0]
            for col_idx, cell in enumerate(cells[1:], start=1):
                if not cell:
                    continue
                if header and col_idx < len(header):
                    key = header[col_idx]
                else:
                    key = f"col_{col_idx + 1}"
                records.append(
                    TableRecord(key, cell, _record_kind(key, label), row_idx, col_idx, label=label)
                )
    return records, warnings


def parse_table(
    table: RawBlock, gateway: LlmGateway, binding: StageBinding, max_repairs: int = 2
) -> ParsedTable:
    records, warnings = extract_table_records(table)
    for warning in warnings:
        log.warning("table %s: %s", table.id, warning)
    record_lines = "\n".join(f"- {r.key} = {r.value}" for r in records)
    request = ChatRequest(
        system_prompt=prompts.TABLE_SYSTEM,
        user_parts=(TextPart(prompts.TABLE_USER.format(
            caption=table.caption or "(none)", table=table.text, records=record_lines)),),
        response_schema="table_summary.v1",
    )
    result = gateway.complete_structured(request, binding, max_repairs)
    return ParsedTable(table.id, tuple(records), result.value["summary"], tuple(warnings))


# -- integration and distillation -------------------------------------------------

def build_sections(
    structured: StructuredText,
    images: dict[str, ParsedImage],
    equations: dict[str, ParsedEquation],
    tables: dict[str, ParsedTable],
    raw: RawPaper,
) -> list[Section]:
    sections: list[Section] = []
    counter = 0

    def add(origin: str, text: str, anchors: tuple[str, ...]) -> None:
        nonlocal counter
        counter += 1
        sections.append(Section(f"sec_{counter:04d}", origin, text, anchors))

    for block in structured.blocks:
        if block.kind in ("paragraph", "heading"):
            add("text", block.text, block.sources)
            continue
        ref = block.ref
        if ref in images:
            parsed = images[ref]
            caption = f" Caption: {parsed.caption_link}" if parsed.caption_link else ""
            add("image", f"Figure description:{caption} {parsed.description}", (ref,))
        elif ref in equations:
            parsed = equations[ref]
            text = f"Equation: {parsed.computational_form}"
            if parsed.symbols:
                text += f" (symbols: {', '.join(parsed.symbols)})"
            add("equation", text, (ref,))
        elif ref in tables:
            parsed = tables[ref]
            lines = [f"{r.key} = {r.value} [{r.kind}]" for r in parsed.records]
            caption = f"{parsed.summary}" if parsed.summary else "Table records."
            add("table", caption + "\n" + "\n".join(lines), (ref,))
        else:
            # element skipped by an ablation (e.g. multimodal off never reaches here)
            block_obj = raw.by_id(ref)
            add("text", block_obj.caption or block_obj.text, (ref,))
    return sections


def integrate(
    sections: list[Section],
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
    chunk_sections: int = INTEGRATE_CHUNK_SECTIONS,
) -> IntegratedPaper:
    by_id = {s.id: s for s in sections}
    drop_entries: list[dict[str, str]] = []
    chunks = [sections[i:i + chunk_sections] for i in range(0, len(sections), chunk_sections)]
    for index, chunk in enumerate(chunks):
        listing = "\n".join(f"[{s.id}] ({s.origin}) {s.text}" for s in chunk)
        if index > 0:
            previous = chunks[index - 1][-1]
            listing = (f"(context from the previous part, not droppable)\n"
                       f"[{previous.id}] {previous.text}\n\n{listing}")
        request = ChatRequest(
            system_prompt=prompts.INTEGRATE_SYSTEM,
            user_parts=(TextPart(prompts.INTEGRATE_USER.format(sections=listing)),),
            response_schema="integration.v1",
        )
        result = gateway.complete_structured(request, binding, max_repairs)
        chunk_ids = {s.id for s in chunk}
        for entry in result.value["drop"]:
            if entry["id"] in chunk_ids:
                drop_entries.append(entry)
            else:
                log.warning("integration drop decision outside its part ignored: %s", entry)

    dropped: list[dict[str, str]] = []
    drop_ids: set[str] = set()
    for entry in drop_entries:
        section = by_id.get(entry["id"])
        duplicate_of = by_id.get(entry["duplicate_of"])
        if section is None or duplicate_of is None or entry["id"] == entry["duplicate_of"]:
            log.warning("integration drop decision references unknown section: %s", entry)
            continue
        if section.origin == "table" and duplicate_of.origin == "text":
            # tables are authoritative for numeric values; never yield to prose
            log.warning("refusing to drop table section %s in favor of prose", section.id)
            continue
        drop_ids.add(section.id)
        dropped.append({"id": entry["id"], "duplicate_of": entry["duplicate_of"],
                        "reason": entry.get("reason", "duplicate")})
    kept = [s for s in sections if s.id not in drop_ids]
    return IntegratedPaper(sections=kept, dropped=dropped)


def distill(
    integrated: IntegratedPaper, gateway: LlmGateway, binding: StageBinding, max_repairs: int = 2
) -> DistilledPaper:
    listing = "\n".join(f"[{s.id}] ({s.origin}) {s.text}" for s in integrated.sections)
    request = ChatRequest(
        system_prompt=prompts.DISTILL_SYSTEM,
        user_parts=(TextPart(prompts.DISTILL_USER.format(sections=listing)),),
        response_schema="distill.v1",
    )
    result = gateway.complete_structured(request, binding, max_repairs)
    known = {s.id for s in integrated.sections}
    dropped = [e for e in result.value["drop"] if e["id"] in known]
    drop_ids = {e["id"] for e in dropped}
    retained = [s for s in integrated.sections if s.id not in drop_ids]
    if not retained:
        raise StageError("parsing", "distillation retained no sections; paper has no implementable content")
    return DistilledPaper(sections=retained, dropped=[dict(e) for e in dropped])


def distill_text_only(raw: RawPaper) -> DistilledPaper:
    """Multimodal-ablation substitute: raw text channel only, no model calls."""
    sections = []
    for i, block in enumerate(raw.text_blocks, start=1):
        sections.append(Section(f"sec_{i:04d}", "text", block.text, (block.id,)))
    if not sections:
        raise StageError("parsing", "paper has no textual content")
    return DistilledPaper(sections=sections)


def check_anchors(distilled: DistilledPaper, raw: RawPaper) -> list[str]:
    """Every section must carry >= 1 anchor and all anchors must dereference."""
    known = {b.id for b in raw.blocks}
    problems = []
    for section in distilled.sections:
        if not section.anchors:
            problems.append(f"{section.id}: no anchors")
        for anchor in section.anchors:
            if anchor not in known:
                problems.append(f"{section.id}: anchor {anchor!r} does not dereference")
    return problems


# -- persistence ------------------------------------------------------------------

def _section_payload(section: Section) -> dict:
    return {"id": section.id, "origin": section.origin, "text": section.text,
            "anchors": list(section.anchors)}


def _section_from_payload(payload: dict) -> Section:
    return Section(payload["id"], payload["origin"], payload["text"], tuple(payload["anchors"]))


def persist_parsed(
    parsed_dir: Path,
    structured: StructuredText | None,
    images: dict[str, ParsedImage],
    equations: dict[str, ParsedEquation],
    tables: dict[str, ParsedTable],
    integrated: IntegratedPaper | None,
) -> None:
    parsed_dir.mkdir(parents=True, exist_ok=True)
    if structured is not None:
        atomic_write_json(parsed_dir / "structured.json", {
            "blocks": [
                {"kind": b.kind, "text": b.text, "sources": list(b.sources),
                 "ref": b.ref, "level": b.level}
                for b in structured.blocks
            ]
        })
    atomic_write_json(parsed_dir / "images.json", {
        "images": [
            {"source_id": p.source_id, "description": p.description, "caption_link": p.caption_link}
            for p in images.values()
        ]
    })
    atomic_write_json(parsed_dir / "equations.json", {
        "equations": [
            {"source_id": p.source_id, "typeset": p.typeset,
             "computational_form": p.computational_form, "symbols": list(p.symbols),
             "passthrough": p.passthrough}
            for p in equations.values()
        ]
    })
    atomic_write_json(parsed_dir / "tables.json", {
        "tables": [
            {"source_id": p.source_id, "summary": p.summary, "warnings": list(p.warnings),
             "records": [
                 {"key": r.key, "value": r.value, "kind": r.kind, "row": r.row,
                  "col": r.col, "label": r.label}
                 for r in p.records
             ]}
            for p in tables.values()
        ]
    })
    if integrated is not None:
        atomic_write_json(parsed_dir / "integrated.json", {
            "sections": [_section_payload(s) for s in integrated.sections],
            "dropped": integrated.dropped,
        })


def persist_distilled(root: Path, distilled: DistilledPaper) -> None:
    atomic_write_json(root / "distilled.json", {
        "sections": [_section_payload(s) for s in distilled.sections],
        "dropped": distilled.dropped,
    })
    atomic_write_text(root / "distilled.md", distilled.render_markdown())


def load_distilled(root: Path) -> DistilledPaper:
    payload = read_json(root / "distilled.json")
    return DistilledPaper(
        sections=[_section_from_payload(s) for s in payload["sections"]],
        dropped=payload.get("dropped", []),
    )


def load_parsed_tables(parsed_dir: Path) -> dict[str, ParsedTable]:
    path = parsed_dir / "tables.json"
    if not path.exists():
        return {}
    payload = read_json(path)
    out = {}
    for entry in payload["tables"]:
        records = tuple(
            TableRecord(r["key"], r["value"], r["kind"], r["row"], r["col"], r.get("label", ""))
            for r in entry["records"]
        )
        out[entry["source_id"]] = ParsedTable(
            entry["source_id"], records, entry["summary"], tuple(entry.get("warnings", ()))
        )
    return out
