"""Declarative run configuration: INI file plus flag overrides.

Precedence is flags > file > defaults. Model names live here, never in code;
each pipeline stage is bound to exactly one profile.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .gateway import PIPELINE_STAGES, ModelProfile, StageBinding

ABLATION_SWITCHES = ("blueprint", "multimodal", "decomposition", "feedback")

DEFAULT_OCR_COMMAND = "mineru -p {input} -o {output}"


@dataclass(frozen=True)
class Budgets:
    max_debug_iterations: int = 10
    execution_timeout: float = 900.0
    plan_cap: int = 30
    max_repairs: int = 2
    memory_mb: int | None = None

    def validate(self) -> None:
        if self.max_debug_iterations <= 0 or self.execution_timeout <= 0 or self.plan_cap <= 0:
            raise ConfigError("budgets must be positive")
        if self.max_repairs < 0:
            raise ConfigError("max_repairs must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    paper: Path | None = None
    workspace: Path | None = None
    backend: str = "http"
    profiles: dict[str, ModelProfile] = field(default_factory=dict)
    stage_profiles: dict[str, str] = field(default_factory=dict)
    ocr_command: str = DEFAULT_OCR_COMMAND
    ablation: dict[str, bool] = field(
        default_factory=lambda: {name: True for name in ABLATION_SWITCHES}
    )
    budgets: Budgets = field(default_factory=Budgets)
    entry_command: str = "python train.py"
    generated_language: str = "python"
    blueprint_meta: Path | None = None
    hpo_enabled: bool = False
    hpo_budget: int = 10
    hpo_objective: str = "accuracy"
    retries: int = 3
    backoff: float = 0.5
    env_overrides: dict[str, str] = field(default_factory=dict)

    def binding(self, stage: str) -> StageBinding:
        profile_name = self.stage_profiles.get(stage, "default")
        profile = self.profiles.get(profile_name)
        if profile is None:
            raise ConfigError(f"stage {stage!r} is bound to unknown profile {profile_name!r}")
        return StageBinding(stage, profile)

    def snapshot(self) -> dict:
        return {
            "paper": str(self.paper) if self.paper else None,
            "workspace": str(self.workspace) if self.workspace else None,
            "backend": self.backend,
            "profiles": {
                name: {
                    "endpoint": p.endpoint, "api_key_ref": p.api_key_ref,
                    "supports_vision": p.supports_vision, "temperature": p.temperature,
                    "max_output_tokens": p.max_output_tokens,
                }
                for name, p in sorted(self.profiles.items())
            },
            "stages": dict(sorted(self.stage_profiles.items())),
            "ocr_command": self.ocr_command,
            "ablation": dict(self.ablation),
            "budgets": {
                "max_debug_iterations": self.budgets.max_debug_iterations,
                "execution_timeout": self.budgets.execution_timeout,
                "plan_cap": self.budgets.plan_cap,
                "max_repairs": self.budgets.max_repairs,
            },
            "entry_command": self.entry_command,
            "generated_language": self.generated_language,
            "blueprint_meta": str(self.blueprint_meta) if self.blueprint_meta else None,
            "hpo": {"enabled": self.hpo_enabled, "budget": self.hpo_budget,
                    "objective": self.hpo_objective},
            "env": dict(self.env_overrides),
            "retries": self.retries,
            "backoff": self.backoff,
        }


def _parse_bool(text: str, context: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{context}: expected a boolean, got {text!r}")


def default_profiles() -> dict[str, ModelProfile]:
    return {"default": ModelProfile(name="default", supports_vision=True)}


def load_config(path: Path | None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an INI file and `section.key=value` overrides."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep case for env var names
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        parser.read(path, encoding="utf-8")
    for key, value in (overrides or {}).items():
        if "." not in key:
            raise ConfigError(f"override {key!r} must look like section.key")
        section, option = key.rsplit(".", 1)  # sections may be dotted (model.default)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option, value)

    profiles = default_profiles()
    for section in parser.sections():
        if not section.startswith("model."):
            continue
        name = section[len("model."):]
        raw = parser[section]
        profiles[name] = ModelProfile(
            name=raw.get("model", name),
            endpoint=raw.get("endpoint", ModelProfile.endpoint),
            api_key_ref=raw.get("api_key_env", ModelProfile.api_key_ref),
            supports_vision=_parse_bool(raw.get("supports_vision", "false"), section),
            temperature=float(raw.get("temperature", "0")),
            max_output_tokens=int(raw.get("max_output_tokens", "4096")),
        )

    stage_profiles = {}
    if parser.has_section("stages"):
        for stage, profile in parser["stages"].items():
            if stage not in PIPELINE_STAGES:
                raise ConfigError(f"[stages] names unknown stage {stage!r}")
            stage_profiles[stage] = profile

    ablation = {name: True for name in ABLATION_SWITCHES}
    if parser.has_section("ablation"):
        for switch, value in parser["ablation"].items():
            if switch not in ABLATION_SWITCHES:
                raise ConfigError(f"[ablation] names unknown switch {switch!r}")
            ablation[switch] = _parse_bool(value, f"ablation.{switch}")

    budgets = Budgets()
    if parser.has_section("budgets"):
        raw = parser["budgets"]
        budgets = Budgets(
            max_debug_iterations=int(raw.get("max_debug_iterations", "10")),
            execution_timeout=float(raw.get("execution_timeout", "900")),
            plan_cap=int(raw.get("plan_cap", "30")),
            max_repairs=int(raw.get("max_repairs", "2")),
            memory_mb=int(raw["memory_mb"]) if raw.get("memory_mb") else None,
        )
    budgets.validate()

    run = parser["run"] if parser.has_section("run") else {}
    gateway_section = parser["gateway"] if parser.has_section("gateway") else {}
    hpo = parser["hpo"] if parser.has_section("hpo") else {}

    env_overrides = dict(parser["env"]) if parser.has_section("env") else {}

    config = RunConfig(
        paper=Path(run["paper"]) if run.get("paper") else None,
        workspace=Path(run["workspace"]) if run.get("workspace") else None,
        backend=gateway_section.get("backend", "http"),
        profiles=profiles,
        stage_profiles=stage_profiles,
        ocr_command=parser.get("ocr", "command", fallback=DEFAULT_OCR_COMMAND),
        ablation=ablation,
        budgets=budgets,
        entry_command=run.get("entry_command", "python train.py"),
        generated_language=run.get("generated_language", "python"),
        blueprint_meta=Path(run["blueprint"]) if run.get("blueprint") else None,
        hpo_enabled=_parse_bool(hpo.get("enabled", "off"), "hpo.enabled"),
        hpo_budget=int(hpo.get("budget", "10")),
        hpo_objective=hpo.get("objective", "accuracy"),
        retries=int(gateway_section.get("retries", "3")),
        backoff=float(gateway_section.get("backoff", "0.5")),
        env_overrides=env_overrides,
    )
    if config.hpo_budget <= 0:
        raise ConfigError("hpo budget must be positive")
    return config
