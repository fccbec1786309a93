"""Repository-organization template mining from exemplar codebases.

Static structure (file trees, imports, signatures, class members) comes from
local parsing; the model contributes folder categorization and template prose
only. Run once as preprocessing; the result is reused across paper runs.
"""

from __future__ import annotations

import logging
import shutil
import tarfile
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from .codescan import ModuleScan, resolve_import, scan_python_source
from .errors import ConfigError
from .gateway import ChatRequest, LlmGateway, StageBinding, TextPart
from . import prompts
from .workspace import atomic_write_json, atomic_write_text, read_json

log = logging.getLogger(__name__)

CATEGORY_VOCABULARY = ("models", "data", "utils", "training", "evaluation", "config", "other")

STARS_THRESHOLD = 1000  # popularity bar for corpus admission

DEFAULT_CORPUS_SIZE = 8


@dataclass(frozen=True)
class SampleMetadata:
    stars: int | None = None
    has_docs: bool | None = None
    domain: str | None = None


@dataclass
class RepoSample:
    id: str
    file_tree: list[tuple[str, int, str]]  # (relative path, line count, language tag)
    source_texts: dict[str, str]
    metadata: SampleMetadata = field(default_factory=SampleMetadata)


@dataclass
class ArchAnalysis:
    entries: list[tuple[str, int, list[str], str]]  # (folder, |files|, files, category)


@dataclass
class RelationshipAnalysis:
    entries: list[tuple[str, list[str], str]]  # (file, dependencies, operational summary)


@dataclass
class FunctionDesign:
    entries: list[tuple[str, str, str]]  # (name, signature, flow summary)


@dataclass
class ClassDesign:
    entries: list[tuple[str, list[str], list[str]]]  # (name, attributes, methods)


@dataclass
class Blueprint:
    sections: dict[str, str]  # exactly the four dimension names
    provenance: list[str]
    corpus_size: int

    SECTION_NAMES = ("repository architecture", "file interdependencies",
                     "function designs", "class structures")

    def validate(self) -> None:
        if tuple(self.sections) != self.SECTION_NAMES:
            raise ConfigError(f"blueprint must have exactly the four sections, got {tuple(self.sections)}")
        for name, body in self.sections.items():
            if not body.strip():
                raise ConfigError(f"blueprint section {name!r} is empty")
        if len(self.provenance) != self.corpus_size:
            raise ConfigError("blueprint provenance length must equal corpus size")

    def render_markdown(self) -> str:
        lines = ["# Repository organization template", ""]
        for name in self.SECTION_NAMES:
            lines.append(f"## {name.title()}")
            lines.append("")
            lines.append(self.sections[name].rstrip())
            lines.append("")
        return "\n".join(lines) + "\n"

    @classmethod
    def empty(cls) -> "Blueprint":
        sections = {name: "(no template; ablated)" for name in cls.SECTION_NAMES}
        return cls(sections=sections, provenance=[], corpus_size=0)


def load_sample(path: Path, sample_id: str | None = None) -> RepoSample:
    """Load a repository from a directory or archive; non-source files count only in the tree."""
    directory, cleanup = _materialize(path)
    try:
        file_tree: list[tuple[str, int, str]] = []
        source_texts: dict[str, str] = {}
        for file in sorted(directory.rglob("*")):
            if not file.is_file():
                continue
            rel = file.relative_to(directory).as_posix()
            if any(part.startswith(".") or part == "__pycache__" for part in Path(rel).parts):
                continue
            language = "python" if rel.endswith(".py") else "other"
            try:
                text = file.read_text(encoding="utf-8")
            except (UnicodeDecodeError, OSError):
                file_tree.append((rel, 0, "binary"))
                continue
            file_tree.append((rel, len(text.splitlines()), language))
            if language == "python":
                source_texts[rel] = text
        metadata = _load_metadata(directory)
        return RepoSample(sample_id or path.name, file_tree, source_texts, metadata)
    finally:
        if cleanup:
            shutil.rmtree(directory, ignore_errors=True)


def _materialize(path: Path) -> tuple[Path, bool]:
    if path.is_dir():
        return path, False
    if not path.exists():
        raise ConfigError(f"corpus sample not found: {path}")
    tmp = Path(tempfile.mkdtemp(prefix="corpus_"))
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as archive:
            archive.extractall(tmp)
    elif tarfile.is_tarfile(path):
        with tarfile.open(path) as archive:
            archive.extractall(tmp)
    else:
        raise ConfigError(f"corpus sample is neither a directory nor an archive: {path}")
    entries = [p for p in tmp.iterdir() if p.is_dir()]
    return (entries[0] if len(entries) == 1 else tmp), True


def _load_metadata(directory: Path) -> SampleMetadata:
    sidecar = directory / ".sample_meta.json"
    if not sidecar.exists():
        return SampleMetadata()
    payload = read_json(sidecar)
    return SampleMetadata(
        stars=payload.get("stars"),
        has_docs=payload.get("has_docs"),
        domain=payload.get("domain"),
    )


def check_corpus_criteria(
    metadata: SampleMetadata,
    covered_domains: set[str],
    required_domains: set[str],
) -> tuple[bool, str]:
    """Admission test: popularity, documentation, and domain coverage.

    Until the required domain set is covered, only samples adding a missing
    tag are admitted; afterwards any sufficiently popular, documented sample
    passes.
    """
    if metadata.stars is None or metadata.has_docs is None:
        return False, "metadata unavailable"
    if metadata.stars <= STARS_THRESHOLD:
        return False, "popularity"
    if not metadata.has_docs:
        return False, "documentation"
    missing = required_domains - covered_domains
    if missing and metadata.domain not in missing:
        return False, "domain-coverage"
    return True, "accepted"


def analyze_repository(
    sample: RepoSample, gateway: LlmGateway, binding: StageBinding, max_repairs: int = 2
) -> tuple[ArchAnalysis, RelationshipAnalysis, FunctionDesign, ClassDesign]:
    if not sample.file_tree:
        raise ConfigError(f"sample {sample.id!r} is empty")

    scans: dict[str, ModuleScan] = {}
    for rel, text in sample.source_texts.items():
        scan = scan_python_source(text, rel)
        if scan.parsed:
            scans[rel] = scan
        else:
            log.warning("sample %s: %s unparseable (%s); counted in tree only", sample.id, rel, scan.parse_error)

    arch = _analyze_architecture(sample, scans, gateway, binding, max_repairs)
    relationships = _analyze_relationships(sample, scans)
    functions = _analyze_functions(scans)
    classes = _analyze_classes(scans)
    return arch, relationships, functions, classes


def _top_folder(rel: str) -> str:
    parts = rel.split("/")
    return parts[0] if len(parts) > 1 else "(root)"


def _analyze_architecture(
    sample: RepoSample,
    scans: dict[str, ModuleScan],
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int,
) -> ArchAnalysis:
    folders: dict[str, list[str]] = {}
    for rel, _count, _lang in sample.file_tree:
        folders.setdefault(_top_folder(rel), []).append(rel)

    categories = _categorize_folders(sample, folders, gateway, binding, max_repairs)
    entries = [
        (folder, len(files), sorted(files), categories.get(folder, "other"))
        for folder, files in sorted(folders.items())
    ]
    return ArchAnalysis(entries)


def _categorize_folders(
    sample: RepoSample,
    folders: dict[str, list[str]],
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int,
) -> dict[str, str]:
    listing = "\n".join(
        f"- {folder}: {', '.join(sorted(files)[:8])}" for folder, files in sorted(folders.items())
    )
    request = ChatRequest(
        system_prompt=prompts.FOLDER_CATEGORY_SYSTEM,
        user_parts=(TextPart(prompts.FOLDER_CATEGORY_USER.format(folders=listing)),),
        response_schema="folder_categories.v1",
    )
    try:
        result = gateway.complete_structured(request, binding, max_repairs)
    except Exception as exc:  # classification failure is non-fatal: category "other"
        log.warning("folder categorization failed for %s (%s); defaulting to 'other'", sample.id, exc)
        return {}
    out = {}
    for entry in result.value["categories"]:
        category = entry["category"] if entry["category"] in CATEGORY_VOCABULARY else "other"
        out[entry["folder"]] = category
    return out


def _analyze_relationships(sample: RepoSample, scans: dict[str, ModuleScan]) -> RelationshipAnalysis:
    known = set(scans)
    entries = []
    for rel in sorted(scans):
        scan = scans[rel]
        deps: list[str] = []
        for ref in scan.imports:
            target = resolve_import(ref, rel, known)
            if target and target != rel:
                deps.append(target)
            elif not target:
                name = ref.module or ",".join(ref.names)
                deps.append(f"external:{name}")
        deps = list(dict.fromkeys(deps))
        summary = _operational_summary(scan)
        entries.append((rel, deps, summary))
    return RelationshipAnalysis(entries)


def _operational_summary(scan: ModuleScan) -> str:
    bits = []
    if scan.classes:
        bits.append(f"defines {', '.join(c.name for c in scan.classes[:4])}")
    if scan.functions:
        bits.append(f"functions {', '.join(f.name for f in scan.functions[:4])}")
    return "; ".join(bits) or "script"


def _analyze_functions(scans: dict[str, ModuleScan]) -> FunctionDesign:
    entries = []
    for rel in sorted(scans):
        for fn in scans[rel].functions:
            params = ", ".join(
                p.name + (f": {p.annotation}" if p.annotation else "") + (f"={p.default}" if p.default else "")
                for p in fn.params
            )
            signature = f"{fn.name}({params})" + (f" -> {fn.returns}" if fn.returns else "")
            entries.append((fn.name, signature, "->".join(fn.flow) or "linear"))
    return FunctionDesign(entries)


def _analyze_classes(scans: dict[str, ModuleScan]) -> ClassDesign:
    entries = []
    for rel in sorted(scans):
        for cls in scans[rel].classes:
            entries.append((cls.name, list(cls.attributes), [m.name for m in cls.methods]))
    return ClassDesign(entries)


def folder_frequency_table(analyses: list[ArchAnalysis]) -> list[tuple[str, int, str]]:
    """(folder, occurrence count, majority category), most frequent first, ties alphabetical."""
    counts: dict[str, int] = {}
    category_votes: dict[str, dict[str, int]] = {}
    for analysis in analyses:
        seen = set()
        for folder, _count, _files, category in analysis.entries:
            if folder in seen:
                continue
            seen.add(folder)
            counts[folder] = counts.get(folder, 0) + 1
            votes = category_votes.setdefault(folder, {})
            votes[category] = votes.get(category, 0) + 1
    table = []
    for folder in sorted(counts, key=lambda f: (-counts[f], f)):
        votes = category_votes[folder]
        majority = sorted(votes, key=lambda c: (-votes[c], c))[0]
        table.append((folder, counts[folder], majority))
    return table


def synthesize_blueprint(
    analyses: list[tuple[ArchAnalysis, RelationshipAnalysis, FunctionDesign, ClassDesign]],
    sample_ids: list[str],
    gateway: LlmGateway,
    binding: StageBinding,
    max_repairs: int = 2,
) -> tuple[Blueprint, list[tuple[str, int, str]]]:
    if not analyses:
        raise ConfigError("cannot synthesize a blueprint from zero analyses")

    arch_list = [a[0] for a in analyses]
    freq_table = folder_frequency_table(arch_list)
    m = len(analyses)
    freq_lines = [f"- {folder}/ appears in {count}/{m} repositories (category: {cat})"
                  for folder, count, cat in freq_table]

    rel_lines = []
    for _arch, rel, _fn, _cls in analyses:
        for file, deps, summary in rel.entries[:20]:
            internal = [d for d in deps if not d.startswith("external:")]
            if internal:
                rel_lines.append(f"- {file} -> {', '.join(internal)} ({summary})")
    fn_lines = [f"- {sig} [{flow}]" for _a, _r, fn, _c in analyses for _n, sig, flow in fn.entries[:20]]
    cls_lines = [
        f"- {name}(attrs: {', '.join(attrs) or 'none'}; methods: {', '.join(methods) or 'none'})"
        for _a, _r, _f, cls in analyses
        for name, attrs, methods in cls.entries[:20]
    ]

    request = ChatRequest(
        system_prompt=prompts.BLUEPRINT_SYSTEM,
        user_parts=(TextPart(prompts.BLUEPRINT_USER.format(
            count=m,
            frequencies="\n".join(freq_lines) or "(none)",
            relationships="\n".join(rel_lines) or "(none)",
            functions="\n".join(fn_lines) or "(none)",
            classes="\n".join(cls_lines) or "(none)",
        )),),
        response_schema="blueprint_sections.v1",
    )
    result = gateway.complete_structured(request, binding, max_repairs)
    value = result.value

    # the architecture section always leads with the deterministic frequency table
    architecture = "Folder patterns by corpus frequency:\n" + "\n".join(freq_lines)
    if value["architecture"].strip():
        architecture += "\n\n" + value["architecture"].strip()

    blueprint = Blueprint(
        sections={
            "repository architecture": architecture,
            "file interdependencies": value["interdependencies"].strip() or "(none observed)",
            "function designs": value["function_designs"].strip() or "(none observed)",
            "class structures": value["class_structures"].strip() or "(none observed)",
        },
        provenance=list(sample_ids),
        corpus_size=m,
    )
    blueprint.validate()
    return blueprint, freq_table


def persist_blueprint(
    out_dir: Path, blueprint: Blueprint, freq_table: list[tuple[str, int, str]]
) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    md_path = out_dir / "blueprint.md"
    meta_path = out_dir / "blueprint.meta"
    atomic_write_text(md_path, blueprint.render_markdown())
    atomic_write_json(meta_path, {
        "provenance": blueprint.provenance,
        "corpus_size": blueprint.corpus_size,
        "sections": blueprint.sections,
        "folder_frequencies": [
            {"folder": folder, "count": count, "category": category}
            for folder, count, category in freq_table
        ],
    })
    return md_path, meta_path


def load_blueprint(meta_path: Path) -> Blueprint:
    payload = read_json(meta_path)
    stored = payload["sections"]
    missing = [name for name in Blueprint.SECTION_NAMES if name not in stored]
    if missing:
        raise ConfigError(f"blueprint metadata is missing sections: {missing}")
    blueprint = Blueprint(
        sections={name: stored[name] for name in Blueprint.SECTION_NAMES},
        provenance=list(payload["provenance"]),
        corpus_size=int(payload["corpus_size"]),
    )
    blueprint.validate()
    return blueprint
