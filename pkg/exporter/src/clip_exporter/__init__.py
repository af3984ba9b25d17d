"""clip-exporter: prompt-ensemble zero-shot logit/feature exporter writing
RKDC cache bundles consumable by the kdfuse engine."""

from .encoder import ClipModelRef, StubEncoder, load_model
from .errors import (
    BadPromptSet,
    BadTemplate,
    ExporterError,
    IOFailure,
    ModelLoadError,
)
from .export import (
    average_logits,
    class_text_embeddings,
    encode_images,
    export_bundle,
    prompt_logits,
)
from .prompts import (
    MULTI_TEMPLATES,
    SINGLE_TEMPLATES,
    STRATEGIES,
    PromptSet,
    default_prompt_set,
    load_templates,
    render_prompts,
    validate_template,
)

__all__ = [
    "BadPromptSet",
    "BadTemplate",
    "ClipModelRef",
    "ExporterError",
    "IOFailure",
    "ModelLoadError",
    "MULTI_TEMPLATES",
    "PromptSet",
    "SINGLE_TEMPLATES",
    "STRATEGIES",
    "StubEncoder",
    "average_logits",
    "class_text_embeddings",
    "default_prompt_set",
    "encode_images",
    "export_bundle",
    "load_model",
    "load_templates",
    "prompt_logits",
    "render_prompts",
    "validate_template",
]

__version__ = "0.1.0"
