"""Core data model for tagged corpora: sentences, BIO tags, entity spans,
triggers, constituency trees, and entity-level evaluation.

File formats handled here:
  * CoNLL columns  — "token<WS>...<WS>tag" lines, blank line between sentences
  * bracketed constituency trees — one tree per line, aligned with sentences
  * trigger JSONL  — one trigger-labeled sentence per line
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CorpusError(ValueError):
    """Base class for corpus ingestion/validation failures."""


class ParseError(CorpusError):
    """Malformed input file (bad columns, unbalanced brackets, bad JSON)."""


class ValidationError(CorpusError):
    """Structurally parsed but semantically invalid data (BIO violations,
    span bounds, trigger/entity overlap)."""


class SchemaError(CorpusError):
    """Trigger JSONL record violating the schema."""


# ---------------------------------------------------------------------------
# BIO tags


def split_bio(tag: str) -> tuple[str, str | None]:
    """Split 'B-PER' -> ('B', 'PER'); 'O' -> ('O', None)."""
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise ValidationError(f"malformed BIO tag {tag!r}")


def validate_bio(tags: Sequence[str], where: str = "") -> None:
    """Raise ValidationError unless ``tags`` is a valid BIO sequence."""
    prev_type: str | None = None
    for i, tag in enumerate(tags):
        prefix, etype = split_bio(tag)
        if prefix == "I" and etype != prev_type:
            loc = f" in {where}" if where else ""
            raise ValidationError(
                f"invalid BIO transition at position {i}{loc}: "
                f"{tags[i - 1] if i else '<start>'} -> {tag}"
            )
        prev_type = etype if prefix in ("B", "I") else None


def repair_bio(tags: Sequence[str]) -> list[str]:
    """Coerce illegal I-T tags to B-T (standard CoNLL repair)."""
    out: list[str] = []
    prev_type: str | None = None
    for tag in tags:
        prefix, etype = split_bio(tag)
        if prefix == "I" and etype != prev_type:
            tag = f"B-{etype}"
        out.append(tag)
        prev_type = etype if prefix in ("B", "I") else None
    return out


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Half-open token span [start, end) carrying an entity type."""

    start: int
    end: int
    etype: str

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValidationError(f"bad entity span ({self.start},{self.end})")

    def overlaps(self, start: int, end: int) -> bool:
        return self.start < end and start < self.end


@dataclass(frozen=True)
class TaggedSentence:
    """A tokenized sentence with one BIO tag per token."""

    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) == 0:
            raise ValidationError(f"sentence {self.id!r} is empty")
        if len(self.tokens) != len(self.tags):
            raise ValidationError(
                f"sentence {self.id!r}: {len(self.tokens)} tokens vs "
                f"{len(self.tags)} tags"
            )
        for i, tok in enumerate(self.tokens):
            if not tok or any(c.isspace() for c in tok):
                raise ValidationError(
                    f"sentence {self.id!r}: token {i} is empty or has whitespace"
                )
        validate_bio(self.tags, where=f"sentence {self.id!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def spans(self) -> list[EntitySpan]:
        return spans_from_bio(self.tags)


@dataclass(frozen=True)
class Trigger:
    """A set of non-entity token indices explaining one entity span.

    Auto-extracted triggers are contiguous phrase spans; human triggers may
    be non-contiguous. Nothing downstream assumes contiguity.
    """

    entity: EntitySpan
    indices: tuple[int, ...]
    score: float | None = None
    source: str = "auto"

    SOURCES = ("auto", "human", "refined")

    def __post_init__(self) -> None:
        if not self.indices:
            raise ValidationError("trigger has no indices")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValidationError(f"trigger indices not strictly increasing: {self.indices}")
        if self.indices[0] < 0:
            raise ValidationError(f"negative trigger index: {self.indices}")
        if any(self.entity.start <= i < self.entity.end for i in self.indices):
            raise ValidationError(
                f"trigger indices {self.indices} overlap entity "
                f"({self.entity.start},{self.entity.end})"
            )
        if self.source not in self.SOURCES:
            raise ValidationError(f"unknown trigger source {self.source!r}")


@dataclass(frozen=True)
class TriggerLabeledExample:
    """A tagged sentence plus the triggers attached to its entities."""

    sentence: TaggedSentence
    triggers: tuple[Trigger, ...]

    def __post_init__(self) -> None:
        n = len(self.sentence)
        gold = set(self.sentence.spans)
        for t in self.triggers:
            if t.indices[-1] >= n:
                raise ValidationError(
                    f"sentence {self.sentence.id!r}: trigger index "
                    f"{t.indices[-1]} out of bounds (length {n})"
                )
            if t.entity.end > n:
                raise ValidationError(
                    f"sentence {self.sentence.id!r}: trigger entity "
                    f"({t.entity.start},{t.entity.end}) out of bounds"
                )
            if t.entity not in gold:
                raise ValidationError(
                    f"sentence {self.sentence.id!r}: trigger entity "
                    f"({t.entity.start},{t.entity.end},{t.entity.etype}) "
                    f"does not match any gold span"
                )

    def triggers_for(self, entity: EntitySpan) -> list[Trigger]:
        return [t for t in self.triggers if t.entity == entity]


# ---------------------------------------------------------------------------
# Tagset


class Tagset:
    """Deterministically ordered BIO label set: O first, then B-T/I-T per
    sorted entity type. Index order is the tie-break order for decoding."""

    def __init__(self, types: Iterable[str]):
        self.types: tuple[str, ...] = tuple(sorted(set(types)))
        labels = ["O"]
        for t in self.types:
            labels.append(f"B-{t}")
            labels.append(f"I-{t}")
        self.labels: tuple[str, ...] = tuple(labels)
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def from_data(cls, sentences: Iterable[TaggedSentence]) -> "Tagset":
        types = set()
        for s in sentences:
            for tag in s.tags:
                _, etype = split_bio(tag)
                if etype is not None:
                    types.add(etype)
        return cls(types)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValidationError(f"label {label!r} not in tagset {self.labels}")

    def label(self, i: int) -> str:
        return self.labels[i]

    def encode(self, tags: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tags]

    def allowed(self, prev: str | None, nxt: str | None) -> bool:
        """BIO transition validity. ``None`` means virtual START (as prev)
        or STOP (as nxt)."""
        if nxt is None:  # into STOP: anything but START
            return prev is not None
        nprefix, ntype = split_bio(nxt)
        if nprefix != "I":
            return True
        if prev is None:
            return False
        pprefix, ptype = split_bio(prev)
        return pprefix in ("B", "I") and ptype == ntype


# ---------------------------------------------------------------------------
# BIO <-> spans


def spans_from_bio(tags: Sequence[str]) -> list[EntitySpan]:
    """Decode a valid BIO sequence into sorted, disjoint entity spans."""
    validate_bio(tags)
    spans: list[EntitySpan] = []
    start: int | None = None
    cur: str | None = None
    for i, tag in enumerate(tags):
        prefix, etype = split_bio(tag)
        if prefix == "B":
            if start is not None:
                spans.append(EntitySpan(start, i, cur))
            start, cur = i, etype
        elif prefix == "O":
            if start is not None:
                spans.append(EntitySpan(start, i, cur))
            start, cur = None, None
        # I continues the open span (validity guaranteed by validate_bio)
    if start is not None:
        spans.append(EntitySpan(start, len(tags), cur))
    return spans


def bio_from_spans(spans: Sequence[EntitySpan], length: int) -> list[str]:
    """Inverse of spans_from_bio. Spans must be non-overlapping and in bounds."""
    tags = ["O"] * length
    taken: list[EntitySpan] = []
    for span in sorted(spans):
        if span.end > length:
            raise ValidationError(f"span {span} exceeds sentence length {length}")
        for prior in taken:
            if prior.overlaps(span.start, span.end):
                raise ValidationError(f"overlapping spans: {prior} and {span}")
        taken.append(span)
        tags[span.start] = f"B-{span.etype}"
        for i in range(span.start + 1, span.end):
            tags[i] = f"I-{span.etype}"
    return tags


# ---------------------------------------------------------------------------
# CoNLL ingestion


def parse_conll(text: str, repair: bool = False) -> list[TaggedSentence]:
    """Parse two-or-more-column CoNLL text: first column is the token, last
    column is the BIO tag, middle columns are ignored.

    With ``repair=True`` illegal I-T tags are coerced to B-T instead of
    raising.
    """
    sentences: list[TaggedSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush() -> None:
        nonlocal tokens, tags
        if tokens:
            fixed = repair_bio(tags) if repair else tags
            sentences.append(
                TaggedSentence(str(len(sentences)), tuple(tokens), tuple(fixed))
            )
            tokens, tags = [], []

    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            flush()
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ParseError(f"line {lineno}: expected 'token ... tag', got {line!r}")
        tokens.append(parts[0])
        tags.append(parts[-1])
    flush()
    return sentences


def read_conll(path: str | Path, repair: bool = False) -> list[TaggedSentence]:
    return parse_conll(Path(path).read_text(encoding="utf-8"), repair=repair)


def write_conll(path: str | Path, sentences: Iterable[TaggedSentence]) -> None:
    lines: list[str] = []
    for s in sentences:
        for tok, tag in zip(s.tokens, s.tags):
            lines.append(f"{tok}\t{tag}")
        lines.append("")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# Entity-level evaluation


@dataclass
class EvalReport:
    """Micro-averaged exact-match entity metrics plus per-type breakdown."""

    precision: float
    recall: float
    f1: float
    per_type: dict[str, tuple[float, float, float]]
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_type": {k: list(v) for k, v in sorted(self.per_type.items())},
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def entity_f1(
    gold: Sequence[TaggedSentence], pred: Sequence[Sequence[str]]
) -> EvalReport:
    """Entity-level exact-match P/R/F1: a predicted span counts as correct
    only if both its boundary and its type match a gold span."""
    if len(gold) != len(pred):
        raise ValidationError(
            f"gold has {len(gold)} sentences, predictions have {len(pred)}"
        )
    tp = fp = fn = 0
    by_type: dict[str, list[int]] = {}
    for sent, ptags in zip(gold, pred):
        if len(sent) != len(ptags):
            raise ValidationError(
                f"sentence {sent.id!r}: {len(sent)} tokens but "
                f"{len(ptags)} predicted tags"
            )
        gold_spans = set(sent.spans)
        pred_spans = set(spans_from_bio(list(ptags)))
        for sp in pred_spans:
            counts = by_type.setdefault(sp.etype, [0, 0, 0])
            if sp in gold_spans:
                tp += 1
                counts[0] += 1
            else:
                fp += 1
                counts[1] += 1
        for sp in gold_spans - pred_spans:
            fn += 1
            by_type.setdefault(sp.etype, [0, 0, 0])[2] += 1
    per_type = {t: _prf(*c) for t, c in by_type.items()}
    p, r, f = _prf(tp, fp, fn)
    return EvalReport(p, r, f, per_type, tp, fp, fn)


# ---------------------------------------------------------------------------
# Bracketed constituency trees


@dataclass(frozen=True)
class ParseTree:
    """Constituency node over a half-open token span. Leaves carry the token
    text as their label and have no children."""

    label: str
    start: int
    end: int
    children: tuple["ParseTree", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def walk(self) -> Iterator["ParseTree"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list[str]:
        return [n.label for n in self.walk() if n.is_leaf]


_TREE_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_bracketed_tree(line: str, sentence: TaggedSentence) -> ParseTree:
    """Parse a single-line bracketed tree and align its leaves with
    ``sentence.tokens``. Spans are assigned by leaf counting."""
    toks = _TREE_TOKEN.findall(line)
    if not toks:
        raise ParseError("empty tree line")
    pos = 0
    leaf_count = 0

    def parse_node() -> ParseTree:
        nonlocal pos, leaf_count
        if toks[pos] != "(":
            # bare leaf
            node = ParseTree(toks[pos], leaf_count, leaf_count + 1)
            pos += 1
            leaf_count += 1
            return node
        pos += 1  # consume '('
        if pos >= len(toks) or toks[pos] in ("(", ")"):
            raise ParseError("expected node label after '('")
        label = toks[pos]
        pos += 1
        children: list[ParseTree] = []
        while pos < len(toks) and toks[pos] != ")":
            children.append(parse_node())
        if pos >= len(toks):
            raise ParseError(f"unbalanced brackets in tree: {line!r}")
        pos += 1  # consume ')'
        if not children:
            raise ParseError(f"constituent {label!r} has no children")
        return ParseTree(label, children[0].start, children[-1].end, tuple(children))

    root = parse_node()
    if pos != len(toks):
        raise ParseError(f"trailing content after tree: {line!r}")
    leaves = root.leaves()
    if len(leaves) != len(sentence):
        raise ValidationError(
            f"sentence {sentence.id!r}: tree has {len(leaves)} leaves but "
            f"sentence has {len(sentence)} tokens"
        )
    for i, (leaf, tok) in enumerate(zip(leaves, sentence.tokens)):
        if leaf != tok:
            raise ValidationError(
                f"sentence {sentence.id!r}: tree leaf {i} is {leaf!r} but "
                f"token is {tok!r}"
            )
    return root


def format_tree(tree: ParseTree) -> str:
    if tree.is_leaf:
        return tree.label
    return "(" + tree.label + " " + " ".join(format_tree(c) for c in tree.children) + ")"


def read_trees(path: str | Path, sentences: Sequence[TaggedSentence]) -> list[ParseTree]:
    """Read one bracketed tree per line, aligned 1:1 with ``sentences``."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != len(sentences):
        raise ValidationError(
            f"{path}: {len(lines)} trees but {len(sentences)} sentences"
        )
    return [parse_bracketed_tree(ln, s) for ln, s in zip(lines, sentences)]


def write_trees(path: str | Path, trees: Iterable[ParseTree]) -> None:
    Path(path).write_text(
        "".join(format_tree(t) + "\n" for t in trees), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Dependency head files (one line per sentence, space-separated head indices,
# root marked -1)


def read_deps(path: str | Path, sentences: Sequence[TaggedSentence]) -> list[list[int]]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != len(sentences):
        raise ValidationError(f"{path}: {len(lines)} head rows but {len(sentences)} sentences")
    out: list[list[int]] = []
    for ln, sent in zip(lines, sentences):
        try:
            heads = [int(x) for x in ln.split()]
        except ValueError as exc:
            raise ParseError(f"{path}: bad head row {ln!r}") from exc
        if len(heads) != len(sent):
            raise ValidationError(
                f"sentence {sent.id!r}: {len(heads)} heads but {len(sent)} tokens"
            )
        out.append(heads)
    return out


def write_deps(path: str | Path, heads: Iterable[Sequence[int]]) -> None:
    Path(path).write_text(
        "".join(" ".join(str(h) for h in row) + "\n" for row in heads),
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# Trigger JSONL


def _trigger_to_obj(t: Trigger) -> dict:
    return {
        "entity": {"start": t.entity.start, "end": t.entity.end, "type": t.entity.etype},
        "indices": list(t.indices),
        "score": t.score,
        "source": t.source,
    }


def example_to_obj(ex: TriggerLabeledExample) -> dict:
    return {
        "id": ex.sentence.id,
        "tokens": list(ex.sentence.tokens),
        "tags": list(ex.sentence.tags),
        "triggers": [_trigger_to_obj(t) for t in ex.triggers],
    }


def _require(obj: dict, key: str, types, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = obj[key]
    if not isinstance(val, types):
        raise SchemaError(f"{where}: field {key!r} has wrong type {type(val).__name__}")
    return val


def example_from_obj(obj: dict, where: str = "record") -> TriggerLabeledExample:
    sid = _require(obj, "id", str, where)
    tokens = _require(obj, "tokens", list, where)
    tags = _require(obj, "tags", list, where)
    raw_triggers = _require(obj, "triggers", list, where)
    if not all(isinstance(t, str) for t in tokens):
        raise SchemaError(f"{where}: tokens must be strings")
    if not all(isinstance(t, str) for t in tags):
        raise SchemaError(f"{where}: tags must be strings")
    try:
        sent = TaggedSentence(sid, tuple(tokens), tuple(tags))
    except CorpusError as exc:
        raise SchemaError(f"{where}: {exc}") from exc
    triggers: list[Trigger] = []
    for j, tobj in enumerate(raw_triggers):
        twhere = f"{where}.triggers[{j}]"
        if not isinstance(tobj, dict):
            raise SchemaError(f"{twhere}: not an object")
        eobj = _require(tobj, "entity", dict, twhere)
        start = _require(eobj, "start", int, f"{twhere}.entity")
        end = _require(eobj, "end", int, f"{twhere}.entity")
        etype = _require(eobj, "type", str, f"{twhere}.entity")
        indices = _require(tobj, "indices", list, twhere)
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in indices):
            raise SchemaError(f"{twhere}: indices must be integers")
        score = tobj.get("score")
        if score is not None and not isinstance(score, (int, float)):
            raise SchemaError(f"{twhere}: score must be a number or null")
        source = _require(tobj, "source", str, twhere)
        try:
            triggers.append(
                Trigger(
                    EntitySpan(start, end, etype),
                    tuple(indices),
                    None if score is None else float(score),
                    source,
                )
            )
        except CorpusError as exc:
            raise SchemaError(f"{twhere}: {exc}") from exc
    try:
        return TriggerLabeledExample(sent, tuple(triggers))
    except CorpusError as exc:
        raise SchemaError(f"{where}: {exc}") from exc


def write_triggers(path: str | Path, data: Iterable[TriggerLabeledExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in data:
            fh.write(json.dumps(example_to_obj(ex), sort_keys=True) + "\n")


def read_triggers(path: str | Path) -> list[TriggerLabeledExample]:
    out: list[TriggerLabeledExample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for recno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"record {recno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise SchemaError(f"record {recno}: not an object")
            out.append(example_from_obj(obj, where=f"record {recno}"))
    return out
