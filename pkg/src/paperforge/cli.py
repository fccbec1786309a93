"""Command-line surface: blueprint, run, resume, evaluate, graph.

Exit codes are stable: 0 success, 1 usage/configuration error, 2 pipeline
failure (including debug-budget exhaustion), 3 infrastructure failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .blueprint import (
    analyze_repository,
    check_corpus_criteria,
    load_sample,
    persist_blueprint,
    synthesize_blueprint,
)
from .config import RunConfig, load_config
from .errors import ConfigError, EvaluationError, InfrastructureError, IntegrityError, PaperforgeError
from .evaluation import measure_performance, persist_evaluation, score_repositories
from .gateway import LlmGateway, make_backend
from .graphs import graph_from_payload, to_dot
from .manifest import RunManifest
from .pipeline import run_pipeline
from .sandbox import ExecutionLimits, run_sandboxed
from .workspace import Workspace, read_json

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_PIPELINE, EXIT_INFRA = 0, 1, 2, 3


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="INI config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    parser.add_argument("--backend", help="gateway backend: http or mock:<playbook.json>")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "backend", None):
        overrides["gateway.backend"] = args.backend
    if getattr(args, "paper", None):
        overrides["run.paper"] = str(args.paper)
    if getattr(args, "workspace", None):
        overrides["run.workspace"] = str(args.workspace)
    if getattr(args, "blueprint", None):
        overrides["run.blueprint"] = str(args.blueprint)
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paperforge",
        description="Turn a research paper into an executable code repository, "
                    "and score generated repositories against references.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_blueprint = sub.add_parser("blueprint", help="mine an organization template from exemplar repos")
    p_blueprint.add_argument("corpus", nargs="+", type=Path, help="repository directories or archives")
    p_blueprint.add_argument("--out", type=Path, required=True, help="output directory")
    p_blueprint.add_argument("--enforce-criteria", action="store_true",
                             help="reject samples failing the popularity/docs/domain criteria")
    p_blueprint.add_argument("--domains", default="", help="comma-separated required domain tags")
    _add_config_options(p_blueprint)

    p_run = sub.add_parser("run", help="run the full paper-to-repository pipeline")
    p_run.add_argument("--paper", type=Path, help="paper PDF or pre-converted markdown directory")
    p_run.add_argument("--workspace", type=Path, help="run workspace directory")
    p_run.add_argument("--blueprint", type=Path, help="blueprint.meta from the blueprint command")
    _add_config_options(p_run)

    p_resume = sub.add_parser("resume", help="resume an interrupted run")
    p_resume.add_argument("workspace", type=Path)
    _add_config_options(p_resume)

    p_eval = sub.add_parser("evaluate", help="score a generated tree against a reference tree")
    p_eval.add_argument("reference", type=Path)
    p_eval.add_argument("generated", type=Path)
    p_eval.add_argument("--out", type=Path, required=True, help="output directory for the reports")
    p_eval.add_argument("--metric-pattern", help="regex with one capture group for the metric value")
    p_eval.add_argument("--original", type=float, help="reference implementation's metric value")
    p_eval.add_argument("--run-output", type=Path, help="file holding the generated repo's run output")
    p_eval.add_argument("--entry-command", help="execute the generated tree to obtain run output")
    p_eval.add_argument("--timeout", type=float, default=900.0)
    _add_config_options(p_eval)

    p_graph = sub.add_parser("graph", help="re-emit the dependency diagram of a run")
    p_graph.add_argument("workspace", type=Path)
    p_graph.add_argument("--out", type=Path, help="write the diagram here instead of stdout")

    return parser


def cmd_blueprint(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    required_domains = {d.strip() for d in args.domains.split(",") if d.strip()}
    out_dir = Path(args.out)
    gateway = LlmGateway(
        make_backend(config.backend), out_dir / "cache", None,
        retries=config.retries, backoff=config.backoff,
    )
    binding = config.binding("blueprint")

    samples = []
    rejections = []
    covered: set[str] = set()
    for path in args.corpus:
        sample = load_sample(Path(path))
        if not sample.file_tree:
            log.warning("sample %s is empty; skipping", sample.id)
            rejections.append(f"{sample.id}: empty repository")
            continue
        if args.enforce_criteria:
            accepted, reason = check_corpus_criteria(sample.metadata, covered, required_domains)
            if not accepted:
                rejections.append(f"{sample.id}: {reason}")
                continue
            if sample.metadata.domain:
                covered.add(sample.metadata.domain)
        samples.append(sample)
    if not samples:
        raise ConfigError("all corpus samples were rejected: " + "; ".join(rejections))
    for rejection in rejections:
        print(f"rejected {rejection}")

    analyses = [
        analyze_repository(sample, gateway, binding, config.budgets.max_repairs)
        for sample in samples
    ]
    blueprint, freq = synthesize_blueprint(
        analyses, [s.id for s in samples], gateway, binding, config.budgets.max_repairs
    )
    md, meta = persist_blueprint(out_dir, blueprint, freq)
    print(f"blueprint written: {md} (+ {meta}); corpus size {blueprint.corpus_size}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    manifest = run_pipeline(config)
    totals = manifest.totals()
    print(f"run {manifest.run_id} finished: status={manifest.final_status()} "
          f"tokens_in={totals.input_tokens} tokens_out={totals.output_tokens}")
    return EXIT_OK


def cmd_resume(args: argparse.Namespace) -> int:
    workspace = Workspace(Path(args.workspace))
    if not workspace.manifest_path.exists():
        raise ConfigError(f"no manifest in workspace {workspace.root}")
    manifest = RunManifest.load(workspace.manifest_path)
    if manifest.first_incomplete_stage() is None:
        print("run already completed; nothing to do")
        return EXIT_OK
    overrides = dict(item.split("=", 1) for item in args.overrides if "=" in item)
    if getattr(args, "backend", None):
        overrides["gateway.backend"] = args.backend
    config = _rehydrate_config(manifest, workspace, overrides, args.config)
    manifest = run_pipeline(config, resume=True)
    print(f"resumed run {manifest.run_id}: status={manifest.final_status()}")
    return EXIT_OK


def _rehydrate_config(manifest: RunManifest, workspace: Workspace,
                      overrides: dict[str, str], config_path: Path | None) -> RunConfig:
    snapshot = manifest.config
    merged = {
        "run.workspace": str(workspace.root),
    }
    if snapshot.get("paper"):
        merged["run.paper"] = snapshot["paper"]
    if snapshot.get("blueprint_meta"):
        merged["run.blueprint"] = snapshot["blueprint_meta"]
    merged["gateway.backend"] = snapshot.get("backend", "http")
    if snapshot.get("retries"):
        merged["gateway.retries"] = str(snapshot["retries"])
    if snapshot.get("backoff") is not None:
        merged["gateway.backoff"] = str(snapshot["backoff"])
    merged["run.entry_command"] = snapshot.get("entry_command", "python train.py")
    merged["run.generated_language"] = snapshot.get("generated_language", "python")
    for switch, value in snapshot.get("ablation", {}).items():
        merged[f"ablation.{switch}"] = "on" if value else "off"
    budgets = snapshot.get("budgets", {})
    for key, value in budgets.items():
        merged[f"budgets.{key}"] = str(value)
    if snapshot.get("ocr_command"):
        merged["ocr.command"] = snapshot["ocr_command"]
    hpo = snapshot.get("hpo", {})
    merged["hpo.enabled"] = "on" if hpo.get("enabled") else "off"
    merged["hpo.budget"] = str(hpo.get("budget", 10))
    merged["hpo.objective"] = hpo.get("objective", "accuracy")
    for key, value in snapshot.get("env", {}).items():
        merged[f"env.{key}"] = value
    for name, profile in snapshot.get("profiles", {}).items():
        merged[f"model.{name}.endpoint"] = profile["endpoint"]
        merged[f"model.{name}.api_key_env"] = profile["api_key_ref"]
        merged[f"model.{name}.supports_vision"] = "on" if profile["supports_vision"] else "off"
        merged[f"model.{name}.temperature"] = str(profile["temperature"])
        merged[f"model.{name}.max_output_tokens"] = str(profile["max_output_tokens"])
    for stage, profile in snapshot.get("stages", {}).items():
        merged[f"stages.{stage}"] = profile
    merged.update(overrides)
    return load_config(config_path, merged)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    reference, generated = Path(args.reference), Path(args.generated)
    if not reference.exists() or not generated.exists():
        raise ConfigError("both source trees must exist")
    out_dir = Path(args.out)
    gateway = LlmGateway(
        make_backend(config.backend), out_dir / "cache", None,
        retries=config.retries, backoff=config.backoff,
    )
    completeness = score_repositories(
        reference, generated, gateway, config.binding("judge"), config.budgets.max_repairs
    )

    performance = None
    if args.metric_pattern and args.original is not None:
        if args.run_output:
            run_output = Path(args.run_output).read_text(encoding="utf-8")
        elif args.entry_command:
            result = run_sandboxed(generated, args.entry_command,
                                   ExecutionLimits(wall_seconds=args.timeout))
            run_output = result.output
        else:
            raise ConfigError("performance measurement needs --run-output or --entry-command")
        performance = measure_performance(run_output, args.metric_pattern, args.original)

    persist_evaluation(out_dir, completeness, performance)

    def fmt(value):
        return "n/a" if value is None else f"{100 * value:.1f}%"

    print(f"comp_func={fmt(completeness.comp_func)} comp_class={fmt(completeness.comp_class)}")
    if performance:
        print(f"absolute={100 * performance.absolute:.1f}% relative={100 * performance.relative:.1f}%")
    return EXIT_OK


def cmd_graph(args: argparse.Namespace) -> int:
    workspace = Workspace(Path(args.workspace))
    graph_path = workspace.plan_dir / "graph.json"
    if not graph_path.exists():
        raise ConfigError(f"no dependency graph in workspace: {graph_path}")
    graph = graph_from_payload(read_json(graph_path))
    dot = to_dot(graph)
    if args.out:
        Path(args.out).write_text(dot, encoding="utf-8")
        print(f"diagram written: {args.out}")
    else:
        print(dot, end="")
    return EXIT_OK


_COMMANDS = {
    "blueprint": cmd_blueprint,
    "run": cmd_run,
    "resume": cmd_resume,
    "evaluate": cmd_evaluate,
    "graph": cmd_graph,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfrastructureError as exc:
        print(f"infrastructure failure: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except (IntegrityError, EvaluationError, PaperforgeError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
