"""autotrig: trigger-aware named entity recognition.

Two-stage pipeline: (1) automatically extract "entity triggers" (cue
phrases explaining an entity label) by scoring constituency-parse phrase
candidates with a sampling-and-occlusion saliency measure; (2) train a
trigger interpolation tagger that blends entity-masked and trigger-masked
sentence encodings, then tags new text with a plain unmasked pass.
"""

from autotrig.corpus import (
    EntitySpan,
    EvalReport,
    ParseTree,
    TaggedSentence,
    Tagset,
    Trigger,
    TriggerLabeledExample,
    bio_from_spans,
    entity_f1,
    parse_bracketed_tree,
    parse_conll,
    read_conll,
    read_triggers,
    spans_from_bio,
    write_conll,
    write_triggers,
)

__version__ = "0.1.0"

__all__ = [
    "EntitySpan",
    "EvalReport",
    "ParseTree",
    "TaggedSentence",
    "Tagset",
    "Trigger",
    "TriggerLabeledExample",
    "bio_from_spans",
    "entity_f1",
    "parse_bracketed_tree",
    "parse_conll",
    "read_conll",
    "read_triggers",
    "spans_from_bio",
    "write_conll",
    "write_triggers",
    "__version__",
]
