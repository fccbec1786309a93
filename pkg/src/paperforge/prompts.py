"""Prompt text for every model-facing operation.

Kept in one place so wording changes never touch pipeline logic. Templates are
plain ``str.format`` strings; callers fill the named slots.
"""

from __future__ import annotations

RESTORE_SYSTEM = (
    "You repair markdown produced by OCR conversion of a research paper. "
    "Merge fragmented paragraphs, normalize headings, and move misplaced "
    "image/table/equation references next to their captions. Preserve every "
    "word of the source text; never summarize or drop content."
)

RESTORE_USER = (
    "The document is given as numbered blocks. Text blocks carry their id and "
    "content; element blocks (images, tables, equations) are placeholders you "
    "may only reorder. Return the restored block sequence: paragraphs/headings "
    "with the ids of the source blocks they merge, and a ref entry for every "
    "element id exactly once.\n\n{blocks}"
)

# Three-part guidance for figures: code-relevant content only, every numeral,
# caption-grounded.
IMAGE_SYSTEM = (
    "You describe a figure from a research paper for an engineer implementing "
    "the work. (1) Report only implementation-relevant information and ignore "
    "purely visual styling such as colors. (2) Be comprehensive and include "
    "every numerical element visible in the figure so nothing is omitted. "
    "(3) Use the caption to tie the figure to the paper's text and keep the "
    "description aligned with it. If the figure carries no "
    "implementation-relevant content, say exactly that."
)

IMAGE_USER = "Caption: {caption}\n\nNearby text: {context}\n\nDescribe the figure."

EQUATION_SYSTEM = (
    "You translate typeset mathematics into a computational form: a short "
    "pseudocode-level statement of the computation plus the complete list of "
    "symbols it uses."
)

EQUATION_USER = "Equation (typeset): {equation}\n\nNearby text: {context}"

TABLE_SYSTEM = (
    "You summarize a table from a research paper for an engineer, calling out "
    "hyperparameters, experimental configuration, and evaluation metrics."
)

TABLE_USER = "Caption: {caption}\n\nTable:\n{table}\n\nExtracted records:\n{records}"

INTEGRATE_SYSTEM = (
    "You merge a paper's text with parsed figure/equation/table descriptions "
    "into one document. Identify sections that duplicate another section's "
    "content; they will be dropped with a record. Keep everything else."
)

INTEGRATE_USER = (
    "Candidate sections, in order. For each redundant section, give its id, "
    "the id it duplicates, and a short reason. Report an empty list if nothing "
    "is redundant.\n\n{sections}"
)

DISTILL_SYSTEM = (
    "You filter an integrated paper down to implementation-relevant content: "
    "keep algorithmic descriptions, architecture specifications, "
    "hyperparameters, and evaluation methodology; drop literature review, "
    "pure theory, acknowledgements, and references."
)

DISTILL_USER = (
    "Sections, in order. List the ids to drop, each with a category "
    "(related_work, references, theory, boilerplate, other).\n\n{sections}"
)

FOLDER_CATEGORY_SYSTEM = (
    "You classify top-level folders of ML repositories by functional purpose. "
    "Allowed categories: models, data, utils, training, evaluation, config, other."
)

FOLDER_CATEGORY_USER = "Folders with sample contents:\n{folders}"

BLUEPRINT_SYSTEM = (
    "You distill organization conventions from several ML repositories into a "
    "reusable template. Abstract away concrete project names; describe the "
    "recurring patterns."
)

BLUEPRINT_USER = (
    "Aggregated analyses of {count} repositories.\n\n"
    "Folder frequency table (most common first):\n{frequencies}\n\n"
    "File dependency motifs:\n{relationships}\n\n"
    "Function designs:\n{functions}\n\n"
    "Class designs:\n{classes}\n\n"
    "Write the four template sections."
)

ARCHITECTURE_SYSTEM = (
    "You plan the file layout of a code repository implementing a research "
    "paper. Follow the organization template where it applies. Every file "
    "needs a functionality description and the ids of the paper sections it "
    "implements."
)

ARCHITECTURE_USER = (
    "Organization template:\n{blueprint}\n\nPaper (distilled, sections carry "
    "ids):\n{distilled}\n\nPropose the repository files (at least data "
    "handling, model, and a training entry point; at most {cap} files)."
)

COMPONENTS_SYSTEM = (
    "You specify the classes and functions one repository file must contain. "
    "Anchor every unit to the paper section ids that describe it."
)

COMPONENTS_USER = (
    "File: {path}\nFunctionality: {functionality}\n\nPaper sections:\n{distilled}"
)

DEPENDENCIES_SYSTEM = (
    "You map which repository files depend on which others, naming the "
    "specific components used. Internal dependencies only; list external "
    "libraries separately per file."
)

DEPENDENCIES_USER = "Files and their planned components:\n{specs}"

TASK_SYSTEM = (
    "You write a step-by-step implementation task for one file: ordered steps "
    "citing paper section ids, the exported unit names, and the units consumed "
    "from dependency files."
)

TASK_USER = (
    "File: {path}\nComponents:\n{spec}\nDependencies:\n{deps}\n\n"
    "Paper sections:\n{distilled}"
)

IMPLEMENT_SYSTEM = (
    "You write one complete source file for a repository implementing a "
    "research paper. Output only the file content (a single code block is "
    "acceptable). The file must define every unit in its interface contract "
    "and import internal units only from the files listed as dependencies."
)

IMPLEMENT_USER = (
    "Task for {path}:\n{task}\n\nInterface contract (must be defined): "
    "{contract}\n\nAlready-implemented files:\n{prior}\n\nRelevant paper "
    "sections:\n{distilled}"
)

WHOLE_REPO_SYSTEM = (
    "You write a complete small code repository implementing a research paper "
    "in a single response: every file's path and content, plus the entry "
    "command's file."
)

WHOLE_REPO_USER = "Paper (distilled):\n{distilled}\n\nOrganization template:\n{blueprint}"

VALIDATE_SYSTEM = (
    "You check generated code against the paper on three aspects: model "
    "architecture, loss formulation, and optimization strategy. For each "
    "aspect report pass, fail (with the paper section id contradicted), or "
    "not_applicable with a note."
)

VALIDATE_USER = "Paper sections:\n{distilled}\n\nRepository files:\n{files}"

LOCALIZE_SYSTEM = (
    "You localize an execution error to the repository files and components "
    "responsible, root cause first. Only name files that exist in the plan."
)

LOCALIZE_USER = "Error output:\n{error}\n\nRepository files:\n{files}"

CORRECT_SYSTEM = (
    "You fix localized errors with the smallest change set. You may only "
    "modify the files named in the localization; return each modified file's "
    "full new content."
)

CORRECT_USER = (
    "Localization:\n{localization}\n\nFiles you may modify:\n{files}\n\n"
    "Paper sections (stay faithful to them):\n{distilled}"
)

MATCH_SYSTEM = (
    "You match reference code units to generated code units by purpose. Each "
    "reference matches at most one candidate; leave a reference out if nothing "
    "corresponds."
)

MATCH_USER = "Reference units:\n{reference}\n\nGenerated units:\n{generated}"

JUDGE_SYSTEM = (
    "You grade how completely a generated code unit implements a reference "
    "unit. Score scale: 0 unimplemented; 0.2 correct purpose but flawed "
    "logic; 0.4 correct logic with major omissions; 0.6 correct logic with "
    "partial omissions; 0.8 minor omissions; 1.0 fully implemented. Set "
    "enhancement=true only when the candidate goes beyond the reference while "
    "staying aligned with its core behavior."
)

JUDGE_USER = "Reference unit:\n{reference}\n\nGenerated unit:\n{candidate}"


def numbered(items: list[str]) -> str:
    return "\n".join(f"{i + 1}. {item}" for i, item in enumerate(items))
