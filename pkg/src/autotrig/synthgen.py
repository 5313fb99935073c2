"""Deterministic planted-trigger corpus generator.

Every sentence contains exactly one entity mention and exactly one cue
phrase near it. Entity surface forms are shared across ALL types, so the
type is recoverable only from the cue phrase: the planted cue is the
unique correct trigger, which makes extraction quality measurable against
ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from autotrig.corpus import (
    EntitySpan,
    ParseTree,
    TaggedSentence,
    Trigger,
    TriggerLabeledExample,
)


class SynthConfigError(ValueError):
    pass


def _default_entity_vocab(size: int) -> tuple[str, ...]:
    # alternate one- and two-token surface forms so both B- and I- tags occur
    forms = []
    for i in range(size):
        if i % 2 == 0:
            forms.append(f"ent{i}")
        else:
            forms.append(f"ent{i}a ent{i}b")
    return tuple(forms)


@dataclass(frozen=True)
class SynthConfig:
    entity_types: tuple[str, ...] = ("T1", "T2", "T3")
    cues_per_type: int = 2
    cue_length: int = 3
    shared_entity_vocab: tuple[str, ...] | None = None  # None -> 50 generated forms
    filler_vocab_size: int = 200
    sentence_length_range: tuple[int, int] = (8, 16)
    n_sentences: int = 200
    seed: int = 0
    # wrap filler runs / the entity in decoy constituents so the parse
    # offers competing phrase candidates (off: cue is the only constituent)
    decoy_phrases: bool = False

    def entity_forms(self) -> tuple[tuple[str, ...], ...]:
        vocab = self.shared_entity_vocab
        if vocab is None:
            vocab = _default_entity_vocab(50)
        return tuple(tuple(form.split()) for form in vocab)

    def cue_phrases(self) -> dict[str, tuple[tuple[str, ...], ...]]:
        return {
            t: tuple(
                tuple(f"cue_{t}_{j}_{p}" for p in range(self.cue_length))
                for j in range(self.cues_per_type)
            )
            for t in self.entity_types
        }

    def filler_vocab(self) -> tuple[str, ...]:
        return tuple(f"fill{i}" for i in range(self.filler_vocab_size))

    def validate(self) -> None:
        if len(self.entity_types) < 1:
            raise SynthConfigError("need at least one entity type")
        if len(set(self.entity_types)) != len(self.entity_types):
            raise SynthConfigError("duplicate entity types")
        if self.cues_per_type < 1 or self.cue_length < 1:
            raise SynthConfigError("cues_per_type and cue_length must be >= 1")
        if self.filler_vocab_size < 1:
            raise SynthConfigError("filler vocabulary is empty")
        if self.n_sentences < 0:
            raise SynthConfigError("n_sentences must be >= 0")
        forms = self.entity_forms()
        if not forms:
            raise SynthConfigError("entity vocabulary is empty")
        cue_tokens = set()
        for cues in self.cue_phrases().values():
            for cue in cues:
                for tok in cue:
                    if tok in cue_tokens:
                        raise SynthConfigError(f"cue token {tok!r} reused across cues")
                    cue_tokens.add(tok)
        entity_tokens = {tok for form in forms for tok in form}
        filler_tokens = set(self.filler_vocab())
        if cue_tokens & entity_tokens or cue_tokens & filler_tokens:
            raise SynthConfigError("cue tokens collide with entity/filler vocabulary")
        if entity_tokens & filler_tokens:
            raise SynthConfigError("entity tokens collide with filler vocabulary")
        lo, hi = self.sentence_length_range
        max_entity = max(len(f) for f in forms)
        if lo > hi:
            raise SynthConfigError("sentence_length_range is inverted")
        if lo < self.cue_length + max_entity:
            raise SynthConfigError(
                f"minimum sentence length {lo} cannot fit a {self.cue_length}-token "
                f"cue plus a {max_entity}-token entity"
            )


@dataclass
class SynthCorpus:
    sentences: list[TaggedSentence]
    gold: list[TriggerLabeledExample]
    trees: list[ParseTree]
    dep_heads: list[list[int]]

    def tree_lines(self) -> list[str]:
        from autotrig.corpus import format_tree

        return [format_tree(t) for t in self.trees]


def _build_tree(
    tokens: list[str],
    cue_span: tuple[int, int],
    entity_span: tuple[int, int],
    decoys: bool,
) -> ParseTree:
    """Cue phrase is always a single constituent; with ``decoys`` the entity
    and filler runs become constituents too, otherwise the tree is flat."""
    protected = [(cue_span, "CUE")]
    if decoys:
        protected.append((entity_span, "ENT"))
    protected.sort()
    children: list[ParseTree] = []
    i = 0
    n = len(tokens)

    def flush_run(lo: int, hi: int) -> None:
        # plain token run [lo, hi); with decoys, chunk into FIL nodes
        j = lo
        while j < hi:
            if decoys and hi - j >= 2:
                w = min(3, hi - j)
                leaves = tuple(ParseTree(tokens[p], p, p + 1) for p in range(j, j + w))
                children.append(ParseTree("FIL", j, j + w, leaves))
                j += w
            else:
                children.append(ParseTree(tokens[j], j, j + 1))
                j += 1

    for (lo, hi), label in protected:
        flush_run(i, lo)
        leaves = tuple(ParseTree(tokens[p], p, p + 1) for p in range(lo, hi))
        children.append(ParseTree(label, lo, hi, leaves))
        i = hi
    flush_run(i, n)
    return ParseTree("S", 0, n, tuple(children))


def _build_heads(
    n: int, cue_span: tuple[int, int], entity_span: tuple[int, int]
) -> list[int]:
    """Dependency heads: entity head is the root, cue tokens attach to it,
    remaining tokens form a left-to-right chain off the root."""
    heads = [0] * n
    root = entity_span[0]
    heads[root] = -1
    for i in range(entity_span[0] + 1, entity_span[1]):
        heads[i] = i - 1
    for i in range(*cue_span):
        heads[i] = root
    prev = root
    for i in range(n):
        if cue_span[0] <= i < cue_span[1] or entity_span[0] <= i < entity_span[1]:
            continue
        heads[i] = prev
        prev = i
    return heads


def generate(config: SynthConfig) -> SynthCorpus:
    """Generate a corpus as a pure function of ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    forms = config.entity_forms()
    cues = config.cue_phrases()
    fillers = config.filler_vocab()
    types = config.entity_types
    lo, hi = config.sentence_length_range

    sentences: list[TaggedSentence] = []
    gold: list[TriggerLabeledExample] = []
    trees: list[ParseTree] = []
    dep_heads: list[list[int]] = []

    for i in range(config.n_sentences):
        etype = types[int(rng.integers(len(types)))]
        cue = list(cues[etype][int(rng.integers(config.cues_per_type))])
        form = list(forms[int(rng.integers(len(forms)))])
        length = int(rng.integers(lo, hi + 1))
        core = len(cue) + len(form)
        gap = int(rng.integers(0, min(3, length - core) + 1))
        cue_first = bool(rng.integers(2))
        n_free = length - core - gap
        before = int(rng.integers(0, n_free + 1))
        after = n_free - before

        def draw_fillers(k: int) -> list[str]:
            return [fillers[int(rng.integers(len(fillers)))] for _ in range(k)]

        tokens: list[str] = draw_fillers(before)
        if cue_first:
            cue_start = len(tokens)
            tokens += cue
            tokens += draw_fillers(gap)
            ent_start = len(tokens)
            tokens += form
        else:
            ent_start = len(tokens)
            tokens += form
            tokens += draw_fillers(gap)
            cue_start = len(tokens)
            tokens += cue
        tokens += draw_fillers(after)

        cue_span = (cue_start, cue_start + len(cue))
        ent_span = (ent_start, ent_start + len(form))
        tags = ["O"] * length
        tags[ent_start] = f"B-{etype}"
        for p in range(ent_start + 1, ent_span[1]):
            tags[p] = f"I-{etype}"

        sent = TaggedSentence(str(i), tuple(tokens), tuple(tags))
        entity = EntitySpan(ent_span[0], ent_span[1], etype)
        # planted cues play the role of trusted reference triggers
        trig = Trigger(entity, tuple(range(*cue_span)), None, "human")
        sentences.append(sent)
        gold.append(TriggerLabeledExample(sent, (trig,)))
        trees.append(_build_tree(tokens, cue_span, ent_span, config.decoy_phrases))
        dep_heads.append(_build_heads(length, cue_span, ent_span))

    return SynthCorpus(sentences, gold, trees, dep_heads)
