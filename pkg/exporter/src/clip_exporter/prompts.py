"""Prompt sets and template rendering for the three prompting strategies."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import BadPromptSet, BadTemplate

STRATEGIES = ("single", "multi", "complex")

# Default template lists. The single template mirrors the canonical
# "a photo of a {}." wording; the multi list is a small, documented ensemble.
SINGLE_TEMPLATES = ["a photo of a {}."]

MULTI_TEMPLATES = [
    "a photo of a {}.",
    "a blurry photo of a {}.",
    "a low resolution photo of a {}.",
    "a bright photo of a {}.",
    "a photo of the {}.",
    "an image of a {}.",
]


def _slot_count(template: str) -> int:
    # count verbatim "{}" slots; other braces are not supported
    return template.count("{}")


def validate_template(template: str) -> None:
    if _slot_count(template) != 1:
        raise BadTemplate(
            f"template must contain exactly one {{}} slot: {template!r}")


@dataclass
class PromptSet:
    strategy: str
    templates: list[str]
    synonyms: dict[str, list[str]] = field(default_factory=dict)

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise BadPromptSet(f"unknown strategy {self.strategy!r}")
        for t in self.templates:
            validate_template(t)
        if self.strategy == "single" and len(self.templates) != 1:
            raise BadPromptSet("single strategy needs exactly 1 template")
        if self.strategy in ("multi", "complex") and len(self.templates) < 2:
            raise BadPromptSet(f"{self.strategy} strategy needs >= 2 templates")
        if self.strategy == "complex":
            if not any(v for v in self.synonyms.values()):
                raise BadPromptSet(
                    "complex strategy needs >= 1 synonym for >= 1 class")
        elif self.synonyms:
            raise BadPromptSet("synonyms are only valid for the complex strategy")

    @property
    def prompt_count(self) -> int:
        """M: one prompt slot per template (synonym variants are folded into
        their template's embedding, not extra slots)."""
        return len(self.templates)


def default_prompt_set(strategy: str,
                       synonyms: dict[str, list[str]] | None = None) -> PromptSet:
    if strategy == "single":
        ps = PromptSet("single", list(SINGLE_TEMPLATES))
    elif strategy == "multi":
        ps = PromptSet("multi", list(MULTI_TEMPLATES))
    elif strategy == "complex":
        ps = PromptSet("complex", list(MULTI_TEMPLATES), dict(synonyms or {}))
    else:
        raise BadPromptSet(f"unknown strategy {strategy!r}")
    if strategy != "complex":
        ps.validate()
    return ps


def load_templates(path) -> list[str]:
    """One template per non-empty, non-comment line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    templates = [ln.strip() for ln in lines
                 if ln.strip() and not ln.strip().startswith("#")]
    for t in templates:
        validate_template(t)
    return templates


def name_variants(ps: PromptSet, class_name: str) -> list[str]:
    """The class name plus, under the complex strategy, its synonyms."""
    if ps.strategy == "complex":
        return [class_name] + list(ps.synonyms.get(class_name, []))
    return [class_name]


def render_prompts(ps: PromptSet, class_name: str) -> list[str]:
    """One rendered string per (template x name-variant), template-major."""
    ps.validate()
    return [t.format(v) for t in ps.templates
            for v in name_variants(ps, class_name)]
