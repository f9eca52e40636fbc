from .align import AlignmentReport, EventAlignment, align, align_sets, alignment_score, build_report
from .backends import (
    BackendError,
    HttpBackend,
    HttpConfig,
    NarrativeRequest,
    NarrativeResult,
    TemplateBackend,
    generate_all,
)
from .lexicon import DEFAULT_LEXICON, Lexicon, LexiconError, default_lexicon
from .prompts import (
    EventPrompt,
    GatedMass,
    GatingConfig,
    PromptError,
    augment_with_probs,
    build_prompt,
    gate,
    parse_prediction,
    serialize_event,
)

__all__ = [
    "AlignmentReport",
    "BackendError",
    "DEFAULT_LEXICON",
    "EventAlignment",
    "EventPrompt",
    "GatedMass",
    "GatingConfig",
    "HttpBackend",
    "HttpConfig",
    "Lexicon",
    "LexiconError",
    "NarrativeRequest",
    "NarrativeResult",
    "PromptError",
    "TemplateBackend",
    "align",
    "align_sets",
    "alignment_score",
    "augment_with_probs",
    "build_prompt",
    "build_report",
    "default_lexicon",
    "gate",
    "generate_all",
    "parse_prediction",
    "serialize_event",
]
