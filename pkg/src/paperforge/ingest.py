"""PDF/markdown ingestion into the raw multimodal representation.

A paper arrives either as a PDF (converted by a user-configured external OCR
command with the contract: PDF in, directory of markdown + image assets out)
or as a pre-converted bypass directory containing `paper.md` and `images/`.
Both roads end at the same block-level representation, so downstream stages
never know which was used.
"""

from __future__ import annotations

import logging
import re
import shlex
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InfrastructureError, StageError
from .workspace import atomic_write_json, read_json

log = logging.getLogger(__name__)

PARAGRAPH = "paragraph"
HEADING = "heading"
IMAGE = "image"
TABLE = "table"
EQUATION = "equation"


@dataclass(frozen=True)
class RawBlock:
    id: str
    kind: str
    text: str  # markdown source of the block
    caption: str = ""
    asset: str = ""  # image payload path relative to the assets dir
    level: int = 0  # heading level


@dataclass
class RawPaper:
    blocks: list[RawBlock] = field(default_factory=list)
    assets_dir: Path | None = None

    def by_id(self, block_id: str) -> RawBlock:
        for block in self.blocks:
            if block.id == block_id:
                return block
        raise KeyError(block_id)

    def of_kind(self, kind: str) -> list[RawBlock]:
        return [b for b in self.blocks if b.kind == kind]

    @property
    def text_blocks(self) -> list[RawBlock]:
        return [b for b in self.blocks if b.kind in (PARAGRAPH, HEADING)]

    @property
    def images(self) -> list[RawBlock]:
        return self.of_kind(IMAGE)

    @property
    def tables(self) -> list[RawBlock]:
        return self.of_kind(TABLE)

    @property
    def equations(self) -> list[RawBlock]:
        return self.of_kind(EQUATION)

    def payload_path(self, block: RawBlock) -> Path:
        assert self.assets_dir is not None
        return self.assets_dir / block.asset

    def to_payload(self) -> dict:
        return {
            "blocks": [
                {
                    "id": b.id,
                    "kind": b.kind,
                    "text": b.text,
                    "caption": b.caption,
                    "asset": b.asset,
                    "level": b.level,
                }
                for b in self.blocks
            ]
        }

    @classmethod
    def from_payload(cls, payload: dict, assets_dir: Path | None) -> "RawPaper":
        return cls(
            blocks=[RawBlock(**entry) for entry in payload["blocks"]],
            assets_dir=assets_dir,
        )


_IMAGE_RE = re.compile(r"^!\[(?P<caption>.*?)\]\((?P<path>[^)]+)\)\s*$")
_HEADING_RE = re.compile(r"^(?P<hashes>#{1,6})\s+(?P<text>.+)$")
_TABLE_ROW_RE = re.compile(r"^\s*\|.*\|\s*$")
_EQ_OPEN = re.compile(r"^\s*(\$\$|\\\[|\\begin\{equation\*?\})")
_EQ_CLOSE = {"$$": re.compile(r"\$\$\s*$"), "\\[": re.compile(r"\\\]\s*$"),
             "begin": re.compile(r"\\end\{equation\*?\}\s*$")}


def parse_markdown(text: str) -> list[RawBlock]:
    """Split markdown into ordered paragraph/heading/image/table/equation blocks."""
    lines = text.splitlines()
    blocks: list[RawBlock] = []
    counters = {PARAGRAPH: 0, HEADING: 0, IMAGE: 0, TABLE: 0, EQUATION: 0}
    prefixes = {PARAGRAPH: "para", HEADING: "head", IMAGE: "img", TABLE: "tbl", EQUATION: "eq"}

    def new_block(kind: str, text: str, **extra) -> None:
        counters[kind] += 1
        blocks.append(RawBlock(id=f"{prefixes[kind]}_{counters[kind]:04d}", kind=kind, text=text, **extra))

    i = 0
    paragraph: list[str] = []

    def flush_paragraph() -> None:
        nonlocal paragraph
        if paragraph:
            new_block(PARAGRAPH, " ".join(paragraph))
            paragraph = []

    while i < len(lines):
        line = lines[i]
        stripped = line.strip()
        if not stripped:
            flush_paragraph()
            i += 1
            continue

        heading = _HEADING_RE.match(stripped)
        if heading:
            flush_paragraph()
            new_block(HEADING, heading.group("text").strip(), level=len(heading.group("hashes")))
            i += 1
            continue

        image = _IMAGE_RE.match(stripped)
        if image:
            flush_paragraph()
            new_block(IMAGE, stripped, caption=image.group("caption").strip(),
                      asset=image.group("path").strip())
            i += 1
            continue

        if _TABLE_ROW_RE.match(line):
            flush_paragraph()
            rows = []
            while i < len(lines) and _TABLE_ROW_RE.match(lines[i]):
                rows.append(lines[i].rstrip())
                i += 1
            caption = _nearest_table_caption(blocks)
            new_block(TABLE, "\n".join(rows), caption=caption)
            continue

        eq_open = _EQ_OPEN.match(stripped)
        if eq_open:
            flush_paragraph()
            token = eq_open.group(1)
            closer = _EQ_CLOSE["begin" if token.startswith("\\begin") else token]
            body = [line]
            if not (closer.search(stripped) and len(stripped) > len(token)):
                i += 1
                while i < len(lines):
                    body.append(lines[i])
                    if closer.search(lines[i]):
                        break
                    i += 1
            new_block(EQUATION, "\n".join(body).strip())
            i += 1
            continue

        paragraph.append(stripped)
        i += 1

    flush_paragraph()
    _fill_image_captions(blocks)
    return blocks


def _nearest_table_caption(blocks: list[RawBlock]) -> str:
    for block in reversed(blocks[-3:]):
        if block.kind == PARAGRAPH and block.text.lower().startswith(("table", "tab.")):
            return block.text
    return ""


def _fill_image_captions(blocks: list[RawBlock]) -> None:
    """Images with empty alt text borrow the adjacent Figure-style paragraph."""
    for i, block in enumerate(blocks):
        if block.kind != IMAGE or block.caption:
            continue
        candidates = blocks[i + 1 : i + 2] + blocks[max(0, i - 1) : i]
        for neighbor in candidates:
            if neighbor.kind == PARAGRAPH and neighbor.text.lower().startswith(("figure", "fig.")):
                blocks[i] = RawBlock(id=block.id, kind=IMAGE, text=block.text,
                                     caption=neighbor.text, asset=block.asset)
                break


def load_bypass_dir(directory: Path) -> RawPaper:
    """Read a pre-converted paper: `paper.md` plus an `images/` asset directory."""
    md = directory / "paper.md"
    if not md.exists():
        raise StageError("parsing", f"bypass directory has no paper.md: {directory}")
    blocks = parse_markdown(md.read_text(encoding="utf-8"))
    paper = RawPaper(blocks=blocks, assets_dir=directory)
    _check_payloads(paper)
    if not paper.text_blocks:
        raise StageError("parsing", "paper has no textual content")
    return paper


def _check_payloads(paper: RawPaper) -> None:
    missing = [b.asset for b in paper.images if not paper.payload_path(b).exists()]
    if missing:
        raise StageError("parsing", f"image references without payload files: {missing}")


def run_ocr_backend(pdf: Path, command_template: str, out_dir: Path) -> Path:
    """Run the external converter; its output directory must be bypass-shaped."""
    out_dir.mkdir(parents=True, exist_ok=True)
    command = [
        part.format(input=str(pdf), output=str(out_dir))
        for part in shlex.split(command_template)
    ]
    try:
        proc = subprocess.run(command, capture_output=True, text=True, timeout=1800)
    except FileNotFoundError as exc:
        raise InfrastructureError(f"OCR backend executable not found: {command[0]!r}") from exc
    except subprocess.TimeoutExpired as exc:
        raise StageError("parsing", f"OCR backend timed out: {exc}") from exc
    if proc.returncode != 0:
        raise StageError(
            "parsing",
            f"OCR backend failed with status {proc.returncode}",
            detail=(proc.stderr or proc.stdout)[-2000:],
        )
    return out_dir


def ingest(paper_input: Path, ocr_command: str, raw_dir: Path) -> RawPaper:
    """Produce the raw representation and persist it under `raw_dir`.

    A directory input is treated as a markdown bypass; a file input is run
    through the OCR backend first.
    """
    paper_input = Path(paper_input)
    if not paper_input.exists():
        raise StageError("parsing", f"input not found: {paper_input}")
    if paper_input.is_dir():
        source_dir = paper_input
    else:
        source_dir = run_ocr_backend(paper_input, ocr_command, raw_dir / "ocr_out")

    paper = load_bypass_dir(source_dir)
    persist_raw(paper, raw_dir, source_dir)
    return RawPaper(paper.blocks, assets_dir=raw_dir)


def persist_raw(paper: RawPaper, raw_dir: Path, source_dir: Path) -> None:
    raw_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(source_dir / "paper.md", raw_dir / "paper.md")
    for block in paper.images:
        src = source_dir / block.asset
        dst = raw_dir / block.asset
        dst.parent.mkdir(parents=True, exist_ok=True)
        if src.resolve() != dst.resolve():
            shutil.copyfile(src, dst)
    atomic_write_json(raw_dir / "blocks.json", paper.to_payload())


def load_raw(raw_dir: Path) -> RawPaper:
    payload = read_json(raw_dir / "blocks.json")
    return RawPaper.from_payload(payload, assets_dir=raw_dir)
