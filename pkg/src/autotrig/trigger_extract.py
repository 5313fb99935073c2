"""Automatic trigger extraction.

For every (sentence, entity) pair: build phrase candidates (constituency
nodes, random spans, or dependency-hop runs), score each candidate by the
drop in the classifier's entity score when the phrase is padded out —
averaged over language-model resamplings of the surrounding context — and
keep the top-k non-overlapping phrases as that entity's triggers.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from autotrig.classifier import TokenClassifier, entity_score
from autotrig.corpus import (
    EntitySpan,
    ParseTree,
    TaggedSentence,
    Trigger,
    TriggerLabeledExample,
)
from autotrig.lm import LangModel, sample_replacements
from autotrig.neural import PAD


class ExtractError(ValueError):
    pass


CANDIDATE_SOURCES = ("CP", "RS", "DP")


@dataclass(frozen=True)
class PhraseCandidate:
    start: int
    end: int
    origin: str = "CP"

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ExtractError(f"bad candidate span ({self.start},{self.end})")
        if self.origin not in CANDIDATE_SOURCES:
            raise ExtractError(f"unknown candidate origin {self.origin!r}")

    def overlaps(self, span: EntitySpan) -> bool:
        return self.start < span.end and span.start < self.end

    def indices(self) -> tuple[int, ...]:
        return tuple(range(self.start, self.end))


@dataclass(frozen=True)
class SocConfig:
    n_samples: int = 20
    context_radius: int = 4
    k: int = 2
    max_phrase_len: int = 10
    candidate_source: str = "CP"
    rs_num_spans: int = 10
    rs_span_len: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ExtractError("n_samples must be >= 1")
        if self.k < 1:
            raise ExtractError("k must be >= 1")
        if self.context_radius < 0:
            raise ExtractError("context_radius must be >= 0")
        if self.max_phrase_len < 1:
            raise ExtractError("max_phrase_len must be >= 1")
        if self.candidate_source not in CANDIDATE_SOURCES:
            raise ExtractError(f"candidate_source must be one of {CANDIDATE_SOURCES}")


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: PhraseCandidate
    phi: float


def pair_seed(base_seed: int, sentence_id: str, entity_index: int, salt: int = 0) -> np.random.SeedSequence:
    """Stable per-(sentence, entity) RNG seed so parallel scoring is
    independent of scheduling."""
    return np.random.SeedSequence(
        [base_seed, zlib.crc32(sentence_id.encode("utf-8")), entity_index, salt]
    )


# ---------------------------------------------------------------------------
# Candidate construction


def _finish(
    spans: set[tuple[int, int]], entity: EntitySpan, cfg: SocConfig, origin: str
) -> list[PhraseCandidate]:
    out = []
    for start, end in sorted(spans):
        if end - start > cfg.max_phrase_len:
            continue
        cand = PhraseCandidate(start, end, origin)
        if not cand.overlaps(entity):
            out.append(cand)
    return out


def candidates_cp(
    tree: ParseTree,
    entity: EntitySpan,
    cfg: SocConfig,
    sentence_len: int | None = None,
) -> list[PhraseCandidate]:
    """Internal (non-leaf, non-root) constituent spans, deduplicated and
    filtered for entity overlap and length."""
    if sentence_len is not None and (tree.start, tree.end) != (0, sentence_len):
        raise ExtractError(
            f"tree covers ({tree.start},{tree.end}) but sentence has "
            f"{sentence_len} tokens"
        )
    spans = {
        (node.start, node.end)
        for node in tree.walk()
        if node is not tree and not node.is_leaf
    }
    return _finish(spans, entity, cfg, "CP")


def candidates_rs(
    sentence_len: int,
    entity: EntitySpan,
    cfg: SocConfig,
    rng: np.random.Generator | None = None,
) -> list[PhraseCandidate]:
    """``rs_num_spans`` random contiguous spans of ``rs_span_len`` tokens
    (clipped at sentence bounds), entity-overlap filtered."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    length = min(cfg.rs_span_len, sentence_len)
    spans = set()
    for _ in range(cfg.rs_num_spans):
        start = int(rng.integers(0, sentence_len - length + 1))
        spans.add((start, start + length))
    return _finish(spans, entity, cfg, "RS")


def _validate_heads(heads: Sequence[int]) -> None:
    n = len(heads)
    roots = [i for i, h in enumerate(heads) if h == -1]
    if len(roots) != 1:
        raise ExtractError(f"dependency heads must have exactly one root, got {len(roots)}")
    for i, h in enumerate(heads):
        if h != -1 and not (0 <= h < n):
            raise ExtractError(f"head index {h} of token {i} out of range")
    for i in range(n):
        seen = set()
        j = i
        while heads[j] != -1:
            if j in seen:
                raise ExtractError("dependency heads contain a cycle")
            seen.add(j)
            j = heads[j]


def candidates_dp(
    dep_heads: Sequence[int], entity: EntitySpan, cfg: SocConfig
) -> list[PhraseCandidate]:
    """Tokens within 1 and 2 undirected dependency hops of the entity,
    minus the entity itself, merged into maximal contiguous runs (one
    candidate set per hop level, deduplicated)."""
    _validate_heads(dep_heads)
    n = len(dep_heads)
    adj: list[set[int]] = [set() for _ in range(n)]
    for i, h in enumerate(dep_heads):
        if h != -1:
            adj[i].add(h)
            adj[h].add(i)
    entity_toks = set(range(entity.start, entity.end))
    spans: set[tuple[int, int]] = set()
    frontier = set(entity_toks)
    reached = set(entity_toks)
    for _hop in (1, 2):
        frontier = {j for i in frontier for j in adj[i]} - reached
        reached |= frontier
        keep = sorted(reached - entity_toks)
        run_start = None
        prev = None
        for idx in keep + [None]:  # sentinel flush
            if run_start is None:
                run_start = idx
            elif idx is None or idx != prev + 1:
                spans.add((run_start, prev + 1))
                run_start = idx
            prev = idx
    return _finish(spans, entity, cfg, "DP")


# ---------------------------------------------------------------------------
# Scoring


def _require_disjoint(entity: EntitySpan, candidate: PhraseCandidate) -> None:
    if candidate.overlaps(entity):
        raise ExtractError(
            f"candidate ({candidate.start},{candidate.end}) overlaps entity "
            f"({entity.start},{entity.end})"
        )


def occlusion_phi(
    model: TokenClassifier,
    token_ids: Sequence[int],
    entity: EntitySpan,
    candidate: PhraseCandidate,
) -> float:
    """Entity-score drop caused by replacing the candidate with padding."""
    _require_disjoint(entity, candidate)
    ids = list(token_ids)
    occluded = list(ids)
    for p in range(candidate.start, candidate.end):
        occluded[p] = PAD
    return entity_score(model, ids, entity) - entity_score(model, occluded, entity)


def soc_phi(
    model: TokenClassifier,
    lmodel: LangModel,
    token_ids: Sequence[int],
    entity: EntitySpan,
    candidate: PhraseCandidate,
    cfg: SocConfig,
    seed: int | np.random.SeedSequence | None = None,
) -> float:
    """Context-independent importance: the occlusion score drop averaged
    over language-model resamplings of the positions within
    ``context_radius`` of the candidate (entity and candidate excluded)."""
    _require_disjoint(entity, candidate)
    ids = list(token_ids)
    n = len(ids)
    lo = max(0, candidate.start - cfg.context_radius)
    hi = min(n, candidate.end + cfg.context_radius)
    delta = [
        p
        for p in range(lo, hi)
        if not (candidate.start <= p < candidate.end)
        and not (entity.start <= p < entity.end)
    ]
    if seed is None:
        seed = cfg.seed
    replacements = sample_replacements(lmodel, ids, delta, cfg.n_samples, seed)
    total = 0.0
    for rep in replacements:
        sampled = list(ids)
        for p, tok in rep.items():
            sampled[p] = tok
        occluded = list(sampled)
        for p in range(candidate.start, candidate.end):
            occluded[p] = PAD
        total += entity_score(model, sampled, entity) - entity_score(model, occluded, entity)
    return total / cfg.n_samples


def select_top_k(
    scored: Sequence[ScoredCandidate], k: int, entity: EntitySpan
) -> list[Trigger]:
    """Keep the k highest-scoring pairwise non-overlapping candidates.
    Ties break toward shorter spans, then leftmost start."""
    ordered = sorted(
        scored,
        key=lambda sc: (-sc.phi, sc.candidate.end - sc.candidate.start, sc.candidate.start),
    )
    kept: list[ScoredCandidate] = []
    for sc in ordered:
        if len(kept) == k:
            break
        if any(
            sc.candidate.start < other.candidate.end
            and other.candidate.start < sc.candidate.end
            for other in kept
        ):
            continue
        kept.append(sc)
    return [
        Trigger(entity, sc.candidate.indices(), sc.phi, "auto") for sc in kept
    ]


# ---------------------------------------------------------------------------
# Dataset extraction


def _candidates_for(
    sent: TaggedSentence,
    entity: EntitySpan,
    cfg: SocConfig,
    tree: ParseTree | None,
    heads: Sequence[int] | None,
    rng: np.random.Generator,
) -> list[PhraseCandidate]:
    if cfg.candidate_source == "CP":
        if tree is None:
            raise ExtractError(
                f"sentence {sent.id!r}: constituency candidates need a parse tree"
            )
        return candidates_cp(tree, entity, cfg, sentence_len=len(sent))
    if cfg.candidate_source == "RS":
        return candidates_rs(len(sent), entity, cfg, rng=rng)
    if heads is None:
        raise ExtractError(
            f"sentence {sent.id!r}: dependency candidates need head indices"
        )
    return candidates_dp(heads, entity, cfg)


def extract_dataset(
    data: Sequence[TaggedSentence],
    model: TokenClassifier,
    lmodel: LangModel,
    cfg: SocConfig = SocConfig(),
    trees: Sequence[ParseTree] | None = None,
    dep_heads: Sequence[Sequence[int]] | None = None,
    workers: int = 1,
) -> tuple[list[TriggerLabeledExample], list[dict]]:
    """Run candidates -> SOC scoring -> top-k selection for every gold
    entity. Returns the trigger-labeled dataset plus a per-entity score
    sidecar (every candidate with its phi) for audit and refinement.

    Per-entity RNG streams are derived from (seed, sentence id, entity
    index); results are identical for any ``workers`` count.
    """
    if trees is not None and len(trees) != len(data):
        raise ExtractError(f"{len(trees)} trees for {len(data)} sentences")
    if dep_heads is not None and len(dep_heads) != len(data):
        raise ExtractError(f"{len(dep_heads)} head rows for {len(data)} sentences")

    jobs: list[tuple[int, int, EntitySpan]] = []
    for si, sent in enumerate(data):
        for ei, span in enumerate(sent.spans):
            jobs.append((si, ei, span))

    def run_job(job: tuple[int, int, EntitySpan]):
        si, ei, span = job
        sent = data[si]
        ids = model.vocab.encode(sent.tokens)
        cand_rng = np.random.default_rng(pair_seed(cfg.seed, sent.id, ei, salt=0))
        cands = _candidates_for(
            sent,
            span,
            cfg,
            trees[si] if trees is not None else None,
            dep_heads[si] if dep_heads is not None else None,
            cand_rng,
        )
        soc_seed = pair_seed(cfg.seed, sent.id, ei, salt=1)
        scored = [
            ScoredCandidate(c, soc_phi(model, lmodel, ids, span, c, cfg, seed=soc_seed.spawn(1)[0]))
            for c in cands
        ]
        triggers = select_top_k(scored, cfg.k, span)
        sidecar = {
            "id": sent.id,
            "entity_index": ei,
            "candidates": [
                {"start": sc.candidate.start, "end": sc.candidate.end, "phi": sc.phi}
                for sc in scored
            ],
        }
        return si, triggers, sidecar

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(j) for j in jobs]

    per_sentence: dict[int, list[Trigger]] = {si: [] for si in range(len(data))}
    sidecars: list[dict] = []
    for si, triggers, sidecar in results:
        per_sentence[si].extend(triggers)
        sidecars.append(sidecar)
    examples = [
        TriggerLabeledExample(sent, tuple(per_sentence[si]))
        for si, sent in enumerate(data)
    ]
    return examples, sidecars


def write_scores(path: str | Path, sidecars: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in sidecars:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_scores(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
