"""Multimodal parsing: restoration fixtures, element parsing, integration, distillation."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from paperforge.errors import ConfigError, StageError
from paperforge.ingest import RawBlock, RawPaper, load_bypass_dir
from paperforge.parsing import (
    DistilledPaper,
    ParsedEquation,
    ParsedImage,
    ParsedTable,
    Section,
    build_sections,
    check_anchors,
    distill,
    distill_text_only,
    extract_table_records,
    integrate,
    parse_equation,
    parse_image,
    parse_table,
    restore_structure,
    word_multiset,
)

from conftest import make_binding, mock_gateway, png_bytes, _resp


def paper_from_markdown(tmp_path: Path, markdown: str, images: dict[str, bytes] | None = None) -> RawPaper:
    directory = tmp_path / "paper_src"
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "paper.md").write_text(markdown, encoding="utf-8")
    for name, payload in (images or {}).items():
        (directory / "images" / name).write_bytes(payload)
    return load_bypass_dir(directory)


def restore_playbook(blocks: list[dict], repeats: int = 1) -> dict:
    return {"rules": [{"stage": "parsing", "schema": "restored_text.v1",
                       "responses": [_resp({"blocks": blocks})] * repeats}]}


# -- restoration ------------------------------------------------------------------

def test_split_paragraph_merged_into_one(tmp_path):
    paper = paper_from_markdown(tmp_path, "Alpha beta\n\ngamma delta.\n")
    merged = [{"kind": "paragraph", "text": "Alpha beta gamma delta.",
               "sources": ["para_0001", "para_0002"]}]
    gateway = mock_gateway(tmp_path, restore_playbook(merged))
    structured = restore_structure(paper, gateway, make_binding("parsing"))
    assert len(structured.blocks) == 1
    assert structured.blocks[0].sources == ("para_0001", "para_0002")
    # content preserving: word multiset unchanged
    assert word_multiset(structured.blocks[0].text) == (
        word_multiset("Alpha beta") + word_multiset("gamma delta.")
    )


def test_misplaced_image_ref_moved_beside_caption(tmp_path):
    markdown = "![cap](images/x.png)\n\nFirst paragraph here.\n\nFigure 1: the real caption text.\n"
    paper = paper_from_markdown(tmp_path, markdown, {"x.png": png_bytes()})
    moved = [
        {"kind": "paragraph", "text": "First paragraph here.", "sources": ["para_0001"]},
        {"kind": "paragraph", "text": "Figure 1: the real caption text.", "sources": ["para_0002"]},
        {"kind": "ref", "ref": "img_0001"},
    ]
    gateway = mock_gateway(tmp_path, restore_playbook(moved))
    structured = restore_structure(paper, gateway, make_binding("parsing"))
    assert [b.kind for b in structured.blocks] == ["paragraph", "paragraph", "ref"]
    assert structured.blocks[2].ref == "img_0001"


def test_clean_input_identity(tmp_path):
    paper = paper_from_markdown(tmp_path, "Only paragraph.\n")
    identity = [{"kind": "paragraph", "text": "Only paragraph.", "sources": ["para_0001"]}]
    gateway = mock_gateway(tmp_path, restore_playbook(identity))
    structured = restore_structure(paper, gateway, make_binding("parsing"))
    assert [b.text for b in structured.blocks] == ["Only paragraph."]


def test_omitted_element_ref_is_reinserted_at_anchor(tmp_path):
    markdown = "Before text.\n\n![cap](images/x.png)\n\nAfter text.\n"
    paper = paper_from_markdown(tmp_path, markdown, {"x.png": png_bytes()})
    forgetful = [
        {"kind": "paragraph", "text": "Before text.", "sources": ["para_0001"]},
        {"kind": "paragraph", "text": "After text.", "sources": ["para_0002"]},
    ]
    gateway = mock_gateway(tmp_path, restore_playbook(forgetful))
    structured = restore_structure(paper, gateway, make_binding("parsing"))
    kinds = [(b.kind, b.ref or b.text) for b in structured.blocks]
    assert kinds == [("paragraph", "Before text."), ("ref", "img_0001"), ("paragraph", "After text.")]


def test_duplicated_ref_keeps_first(tmp_path):
    markdown = "Text one.\n\n$$ a = b $$\n"
    paper = paper_from_markdown(tmp_path, markdown)
    doubled = [
        {"kind": "paragraph", "text": "Text one.", "sources": ["para_0001"]},
        {"kind": "ref", "ref": "eq_0001"},
        {"kind": "ref", "ref": "eq_0001"},
    ]
    gateway = mock_gateway(tmp_path, restore_playbook(doubled))
    structured = restore_structure(paper, gateway, make_binding("parsing"))
    assert structured.refs() == ["eq_0001"]


def test_long_paper_restored_in_per_section_chunks(tmp_path):
    sections_md = []
    for name in ("Alpha", "Beta"):
        sections_md.append(f"## {name}\n")
        for i in range(3):
            sections_md.append(f"{name} paragraph number {i} with words.\n")
    paper = paper_from_markdown(tmp_path, "\n".join(sections_md))
    assert len(paper.blocks) == 8  # 2 headings + 6 paragraphs

    def identity_for(ids: list[str]) -> dict:
        blocks = []
        for block_id in ids:
            block = paper.by_id(block_id)
            kind = "heading" if block.kind == "heading" else "paragraph"
            blocks.append({"kind": kind, "text": block.text, "level": block.level,
                           "sources": [block_id]})
        return _resp({"blocks": blocks})

    first_ids = [b.id for b in paper.blocks[:4]]
    second_ids = [b.id for b in paper.blocks[4:]]
    playbook = {"rules": [{"stage": "parsing", "schema": "restored_text.v1",
                           "responses": [identity_for(first_ids), identity_for(second_ids)]}]}
    gateway = mock_gateway(tmp_path, playbook)
    structured = restore_structure(paper, gateway, make_binding("parsing"), chunk_blocks=4)
    assert len(structured.blocks) == 8
    assert len(gateway.backend.sent_payloads) == 2  # one call per section chunk
    # the second call carried the previous chunk's last paragraph as overlap context
    assert "Alpha paragraph number 2" in gateway.backend.sent_payloads[1]["_text"]


def test_chunk_by_sections_packs_whole_sections():
    from paperforge.ingest import RawBlock
    from paperforge.parsing import chunk_by_sections

    blocks = []
    for s in range(3):
        blocks.append(RawBlock(id=f"head_{s:04d}", kind="heading", text=f"S{s}", level=2))
        blocks.extend(
            RawBlock(id=f"para_{s}{i:03d}", kind="paragraph", text="t") for i in range(3)
        )
    chunks = chunk_by_sections(blocks, max_blocks=8)
    assert [len(c) for c in chunks] == [8, 4]  # two whole sections, then one
    assert chunks[1][0].kind == "heading"


def test_integrate_chunks_large_section_lists(tmp_path):
    sections = [Section(f"sec_{i:04d}", "text", f"text {i}", (f"para_{i:04d}",))
                for i in range(1, 7)]
    playbook = {"rules": [{"schema": "integration.v1", "responses": [
        _resp({"drop": []}),
        _resp({"drop": [{"id": "sec_0005", "duplicate_of": "sec_0004", "reason": "dup"}]}),
    ]}]}
    gateway = mock_gateway(tmp_path, playbook)
    integrated = integrate(sections, gateway, make_binding("parsing"), chunk_sections=4)
    assert len(gateway.backend.sent_payloads) == 2
    assert [s.id for s in integrated.sections] == [
        "sec_0001", "sec_0002", "sec_0003", "sec_0004", "sec_0006"]
    # overlap context from the first chunk rode along, flagged not droppable
    assert "not droppable" in gateway.backend.sent_payloads[1]["_text"]


def test_word_dropping_restoration_fails_stage_after_retry(tmp_path):
    paper = paper_from_markdown(
        tmp_path, "One two three four five six seven eight nine ten.\n"
    )
    lossy = [{"kind": "paragraph", "text": "One two.", "sources": ["para_0001"]}]
    gateway = mock_gateway(tmp_path, restore_playbook(lossy, repeats=2))
    with pytest.raises(StageError) as excinfo:
        restore_structure(paper, gateway, make_binding("parsing"))
    assert "20%" in str(excinfo.value)


# -- image / equation / table ----------------------------------------------------------

def test_parse_image_sends_caption_and_returns_description(tmp_path):
    markdown = "Nearby paragraph.\n\n![encoder and decoder diagram](images/arch.png)\n"
    paper = paper_from_markdown(tmp_path, markdown, {"arch.png": png_bytes()})
    playbook = {"rules": [{"stage": "parsing", "responses": [
        _resp("Components: encoder -> decoder. Hidden dim 256.")]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_image(paper.images[0], paper, gateway, make_binding("parsing"))
    assert "encoder" in parsed.description and "decoder" in parsed.description
    assert "256" in parsed.description
    assert parsed.caption_link == "encoder and decoder diagram"
    sent = gateway.backend.sent_payloads[0]
    assert "encoder and decoder diagram" in sent["_text"]  # caption used verbatim
    assert "Nearby paragraph." in sent["_text"]  # nearest-paragraph context


def test_parse_image_decorative_figure_reports_no_content(tmp_path):
    markdown = "Intro text.\n\n![decorative banner](images/banner.png)\n"
    paper = paper_from_markdown(tmp_path, markdown, {"banner.png": png_bytes()})
    playbook = {"rules": [{"stage": "parsing", "responses": [
        _resp("No implementation-relevant content.")]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_image(paper.images[0], paper, gateway, make_binding("parsing"))
    assert parsed.description == "No implementation-relevant content."


def test_parse_image_requires_vision_profile(tmp_path):
    markdown = "![cap](images/x.png)\n\ntext\n"
    paper = paper_from_markdown(tmp_path, markdown, {"x.png": png_bytes()})
    gateway = mock_gateway(tmp_path, {"default": {"text": "x"}})
    with pytest.raises(ConfigError):
        parse_image(paper.images[0], paper, gateway, make_binding("parsing", vision=False))


def test_parse_equation_weighted_mean_form(tmp_path):
    block = RawBlock(id="eq_0001", kind="equation",
                     text="$$ C = \\frac{\\sum_i w_i s_i}{\\sum_i w_i} $$")
    paper = RawPaper(blocks=[block])
    playbook = {"rules": [{"schema": "parsed_equation.v1", "responses": [
        _resp({"computational_form": "sum(w_i * score_i) / sum(w_i)",
               "symbols": ["w", "score"]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_equation(block, paper, gateway, make_binding("parsing"))
    assert parsed.computational_form == "sum(w_i * score_i) / sum(w_i)"
    assert parsed.symbols == ("w", "score")  # declared symbols suffice; none added
    assert not parsed.passthrough


def test_parse_equation_identity(tmp_path):
    block = RawBlock(id="eq_0001", kind="equation", text="$$ y = x $$")
    paper = RawPaper(blocks=[block])
    playbook = {"rules": [{"schema": "parsed_equation.v1", "responses": [
        _resp({"computational_form": "y := x", "symbols": ["x", "y"]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_equation(block, paper, gateway, make_binding("parsing"))
    assert parsed.computational_form == "y := x"


def test_parse_equation_softmax_steps(tmp_path):
    block = RawBlock(id="eq_0001", kind="equation",
                     text="$$ p_i = e^{z_i} / \\sum_j e^{z_j} $$")
    paper = RawPaper(blocks=[block])
    playbook = {"rules": [{"schema": "parsed_equation.v1", "responses": [
        _resp({"computational_form": "p_i := exp(z_i) / sum(exp(z_j) for j in range(n))",
               "symbols": ["p", "z", "n", "i", "j"]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_equation(block, paper, gateway, make_binding("parsing"))
    assert "exp" in parsed.computational_form
    assert set(parsed.symbols) >= {"p", "z"}


def test_parse_equation_unions_undeclared_symbols(tmp_path):
    block = RawBlock(id="eq_0001", kind="equation", text="$$ a + b $$")
    paper = RawPaper(blocks=[block])
    playbook = {"rules": [{"schema": "parsed_equation.v1", "responses": [
        _resp({"computational_form": "alpha + beta", "symbols": []})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_equation(block, paper, gateway, make_binding("parsing"))
    assert set(parsed.symbols) == {"alpha", "beta"}


def test_parse_equation_passthrough_on_persistent_garbage(tmp_path):
    block = RawBlock(id="eq_0001", kind="equation", text="$$ mystery $$")
    paper = RawPaper(blocks=[block])
    gateway = mock_gateway(tmp_path, {"default": {"text": "not json"}})
    parsed = parse_equation(block, paper, gateway, make_binding("parsing"), max_repairs=1)
    assert parsed.passthrough
    assert parsed.computational_form == block.text


def _table_block(text: str, caption: str = "") -> RawBlock:
    return RawBlock(id="tbl_0001", kind="table", text=text, caption=caption)


def test_table_records_key_value_pairs():
    table = _table_block("| parameter | value |\n| --- | --- |\n| lr | 0.001 |\n| batch | 64 |")
    records, warnings = extract_table_records(table)
    assert {(r.key, r.value) for r in records} == {("lr", "0.001"), ("batch", "64")}
    assert all(r.kind == "hyperparameter" for r in records)
    assert warnings == []
    # source cell coordinates: data rows sit below header + separator
    by_key = {r.key: r for r in records}
    assert (by_key["lr"].row, by_key["lr"].col) == (2, 1)
    assert (by_key["batch"].row, by_key["batch"].col) == (3, 1)


def test_single_cell_table_yields_one_positional_record():
    records, warnings = extract_table_records(_table_block("| 42 |"))
    assert len(records) == 1
    assert records[0].key == "col_1" and records[0].value == "42"
    assert warnings  # headerless


def test_metric_columns_tagged_as_evaluation_metrics():
    table = _table_block("| model | accuracy | f1 |\n| --- | --- | --- |\n| tiny | 0.9 | 0.8 |")
    records, _ = extract_table_records(table)
    assert {r.kind for r in records} == {"metric"}
    assert {r.label for r in records} == {"tiny"}


def test_headerless_multicolumn_uses_positional_keys():
    records, warnings = extract_table_records(_table_block("| a | 1 | 2 |\n| b | 3 | 4 |"))
    assert {r.key for r in records} == {"col_2", "col_3"}
    assert warnings


def test_parse_table_attaches_model_summary(tmp_path):
    table = _table_block("| parameter | value |\n| --- | --- |\n| lr | 0.001 |")
    playbook = {"rules": [{"schema": "table_summary.v1", "responses": [
        _resp({"summary": "One learning-rate hyperparameter."})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    parsed = parse_table(table, gateway, make_binding("parsing"))
    assert parsed.summary.startswith("One learning-rate")
    assert len(parsed.records) == 1


# -- integration -----------------------------------------------------------------------

def _sections_fixture() -> list[Section]:
    return [
        Section("sec_0001", "text", "The encoder feeds the decoder.", ("para_0001",)),
        Section("sec_0002", "image", "Figure description: encoder feeds decoder.", ("img_0001",)),
        Section("sec_0003", "table", "lr = 0.001 [hyperparameter]", ("tbl_0001",)),
        Section("sec_0004", "text", "The learning rate is 0.001.", ("para_0002",)),
    ]


def test_integrate_drops_duplicate_image_description(tmp_path):
    playbook = {"rules": [{"schema": "integration.v1", "responses": [
        _resp({"drop": [{"id": "sec_0002", "duplicate_of": "sec_0001",
                         "reason": "repeats the prose"}]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    integrated = integrate(_sections_fixture(), gateway, make_binding("parsing"))
    assert [s.id for s in integrated.sections] == ["sec_0001", "sec_0003", "sec_0004"]
    assert integrated.dropped == [{"id": "sec_0002", "duplicate_of": "sec_0001",
                                   "reason": "repeats the prose"}]


def test_integrate_disjoint_sections_drop_nothing(tmp_path):
    playbook = {"rules": [{"schema": "integration.v1", "responses": [_resp({"drop": []})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    integrated = integrate(_sections_fixture(), gateway, make_binding("parsing"))
    assert len(integrated.sections) == 4
    assert integrated.dropped == []


def test_integrate_refuses_to_drop_table_in_favor_of_prose(tmp_path):
    playbook = {"rules": [{"schema": "integration.v1", "responses": [
        _resp({"drop": [{"id": "sec_0003", "duplicate_of": "sec_0004",
                         "reason": "prose says the same"}]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    integrated = integrate(_sections_fixture(), gateway, make_binding("parsing"))
    # table kept as authoritative, prose retained, nothing recorded as dropped
    assert [s.id for s in integrated.sections] == ["sec_0001", "sec_0002", "sec_0003", "sec_0004"]
    assert integrated.dropped == []


# -- distillation -----------------------------------------------------------------------

def _integrated_fixture():
    from paperforge.parsing import IntegratedPaper

    return IntegratedPaper(sections=[
        Section("sec_0001", "text", "Related work reviews prior systems.", ("para_0001",)),
        Section("sec_0002", "text", "The model has two layers.", ("para_0002",)),
        Section("sec_0003", "table", "lr = 0.001 [hyperparameter]", ("tbl_0001",)),
        Section("sec_0004", "image", "Figure description: the method's data flow.", ("img_0001",)),
    ])


def test_distill_drops_related_work_keeps_tables_and_figures(tmp_path):
    playbook = {"rules": [{"schema": "distill.v1", "responses": [
        _resp({"drop": [{"id": "sec_0001", "category": "related_work"}]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    distilled = distill(_integrated_fixture(), gateway, make_binding("parsing"))
    assert [s.id for s in distilled.sections] == ["sec_0002", "sec_0003", "sec_0004"]
    assert distilled.dropped == [{"id": "sec_0001", "category": "related_work"}]
    # method detail that exists only in a figure description stays, image anchor intact
    assert distilled.by_id("sec_0004").anchors == ("img_0001",)


def test_distill_everything_dropped_is_stage_fatal(tmp_path):
    playbook = {"rules": [{"schema": "distill.v1", "responses": [
        _resp({"drop": [{"id": f"sec_{i:04d}", "category": "other"} for i in range(1, 5)]})]}]}
    gateway = mock_gateway(tmp_path, playbook)
    with pytest.raises(StageError):
        distill(_integrated_fixture(), gateway, make_binding("parsing"))


def test_distill_text_only_uses_text_anchors_only(tmp_path, mini_paper_dir):
    paper = load_bypass_dir(mini_paper_dir)
    distilled = distill_text_only(paper)
    assert len(distilled.sections) == len(paper.text_blocks)
    for section in distilled.sections:
        assert all(a.startswith(("para_", "head_")) for a in section.anchors)
    assert check_anchors(distilled, paper) == []


def test_check_anchors_flags_unresolvable():
    paper = RawPaper(blocks=[RawBlock(id="para_0001", kind="paragraph", text="t")])
    bad = DistilledPaper(sections=[Section("sec_0001", "text", "t", ("ghost_0001",))])
    missing = DistilledPaper(sections=[Section("sec_0001", "text", "t", ())])
    assert check_anchors(bad, paper)
    assert check_anchors(missing, paper)


def test_build_sections_attaches_elements_at_refs(tmp_path, mini_paper_dir):
    from paperforge.parsing import StructuredBlock, StructuredText

    paper = load_bypass_dir(mini_paper_dir)
    structured = StructuredText(blocks=[
        StructuredBlock(kind="paragraph", text="Lead.", sources=("para_0001",)),
        StructuredBlock(kind="ref", ref="img_0001"),
        StructuredBlock(kind="ref", ref="eq_0001"),
        StructuredBlock(kind="ref", ref="tbl_0001"),
    ])
    images = {"img_0001": ParsedImage("img_0001", "desc", "cap")}
    equations = {"eq_0001": ParsedEquation("eq_0001", "$$x$$", "x := 1", ("x",))}
    tables = {"tbl_0001": ParsedTable("tbl_0001", (), "summary")}
    sections = build_sections(structured, images, equations, tables, paper)
    assert [s.origin for s in sections] == ["text", "image", "equation", "table"]
    assert sections[1].anchors == ("img_0001",)
