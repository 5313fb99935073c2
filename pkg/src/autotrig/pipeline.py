"""End-to-end pipeline runners shared by the CLI and the benchmark sweeps.

Also defines the benchmark synthetic-corpus family used for comparative
runs: training corpora draw entity surface forms from the first half of a
surface-form pool, evaluation corpora from the whole pool, so evaluation
always contains a slice of unseen mentions (the realistic low-resource
regime: at small training sizes nearly every test mention is novel).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from autotrig.classifier import ClassifierConfig, TokenClassifier, train_classifier
from autotrig.corpus import TaggedSentence, TriggerLabeledExample
from autotrig.lm import LangModel, LmConfig, train_lm
from autotrig.synthgen import SynthConfig, SynthCorpus, generate
from autotrig.tin import TinConfig, TinModel, TrainConfig, evaluate, train_baseline, train_tin
from autotrig.trigger_extract import (
    ScoredCandidate,
    PhraseCandidate,
    SocConfig,
    extract_dataset,
    select_top_k,
)

BENCH_POOL = tuple(
    f"ent{i}" if i % 2 == 0 else f"ent{i}a ent{i}b" for i in range(160)
)


def bench_train_config(size: int, seed: int) -> SynthConfig:
    return SynthConfig(
        shared_entity_vocab=BENCH_POOL[: len(BENCH_POOL) // 2],
        filler_vocab_size=15,
        sentence_length_range=(8, 12),
        n_sentences=size,
        seed=seed,
    )


def bench_test_config(size: int, seed: int) -> SynthConfig:
    return SynthConfig(
        shared_entity_vocab=BENCH_POOL,
        filler_vocab_size=15,
        sentence_length_range=(8, 12),
        n_sentences=size,
        seed=seed,
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale settings that actually converge on the synthetic corpora
    (the paper-default hyperparameters assume pretrained embeddings)."""

    embed_dim: int = 24
    hidden_dim: int = 24
    clf_epochs: int = 12
    clf_lr: float = 0.5
    lm_epochs: int = 4
    lm_lr: float = 0.5
    tagger_epochs: int = 16
    tagger_lr: float = 0.4
    tagger_lr_decay: float = 0.95
    batch_size: int = 1
    lam: float = 0.5
    soc: SocConfig = field(default_factory=lambda: SocConfig(n_samples=8, context_radius=2))
    workers: int = 1

    def classifier_config(self, seed: int) -> ClassifierConfig:
        return ClassifierConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            epochs=self.clf_epochs,
            batch_size=self.batch_size,
            lr=self.clf_lr,
            seed=seed,
        )

    def lm_config(self, seed: int) -> LmConfig:
        return LmConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            epochs=self.lm_epochs,
            batch_size=self.batch_size,
            lr=self.lm_lr,
            seed=seed,
        )

    def tin_config(self, seed: int, lam: float | None = None) -> TinConfig:
        return TinConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            epochs=self.tagger_epochs,
            batch_size=self.batch_size,
            lr=self.tagger_lr,
            lr_decay=self.tagger_lr_decay,
            seed=seed,
            lam=self.lam if lam is None else lam,
        )

    def baseline_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            epochs=self.tagger_epochs,
            batch_size=self.batch_size,
            lr=self.tagger_lr,
            lr_decay=self.tagger_lr_decay,
            seed=seed,
        )


@dataclass
class ExtractionRun:
    classifier: TokenClassifier
    lm: LangModel
    examples: list[TriggerLabeledExample]
    sidecars: list[dict]


def run_extraction(
    train: list[TaggedSentence],
    corpus: SynthCorpus | None,
    cfg: PipelineConfig,
    seed: int,
    soc: SocConfig | None = None,
) -> ExtractionRun:
    """Train the scoring models and extract a trigger dataset from
    ``train``. ``corpus`` supplies parses/dependencies when available."""
    soc = soc if soc is not None else replace(cfg.soc, seed=seed)
    clf = train_classifier(train, cfg.classifier_config(seed))
    lmodel = train_lm(train, cfg.lm_config(seed))
    trees = corpus.trees[: len(train)] if corpus is not None else None
    deps = corpus.dep_heads[: len(train)] if corpus is not None else None
    examples, sidecars = extract_dataset(
        train,
        clf,
        lmodel,
        soc,
        trees=trees if soc.candidate_source == "CP" else None,
        dep_heads=deps if soc.candidate_source == "DP" else None,
        workers=cfg.workers,
    )
    return ExtractionRun(clf, lmodel, examples, sidecars)


def reselect_top_k(
    examples: list[TriggerLabeledExample],
    sidecars: list[dict],
    k: int,
) -> list[TriggerLabeledExample]:
    """Rebuild the trigger dataset for a different k from the scored
    candidates, without re-running saliency scoring."""
    by_id: dict[str, list[dict]] = {}
    for rec in sidecars:
        by_id.setdefault(rec["id"], []).append(rec)
    out = []
    for ex in examples:
        spans = ex.sentence.spans
        triggers = []
        for rec in sorted(by_id.get(ex.sentence.id, []), key=lambda r: r["entity_index"]):
            span = spans[rec["entity_index"]]
            scored = [
                ScoredCandidate(PhraseCandidate(c["start"], c["end"], "CP"), c["phi"])
                for c in rec["candidates"]
            ]
            triggers.extend(select_top_k(scored, k, span))
        out.append(TriggerLabeledExample(ex.sentence, tuple(triggers)))
    return out


def trigger_recovery(
    extracted: list[TriggerLabeledExample],
    gold: list[TriggerLabeledExample],
    threshold: float = 0.5,
) -> float:
    """Fraction of entities whose top-scoring extracted trigger overlaps the
    planted cue with Jaccard >= threshold."""
    hits = 0
    total = 0
    for ex, gold_ex in zip(extracted, gold):
        for trig in gold_ex.triggers:
            total += 1
            mine = [t for t in ex.triggers if t.entity == trig.entity]
            if not mine:
                continue
            top = max(mine, key=lambda t: (t.score if t.score is not None else float("-inf")))
            got, want = set(top.indices), set(trig.indices)
            if len(got & want) / len(got | want) >= threshold:
                hits += 1
    return hits / total if total else 0.0


def run_tin_vs_baseline(
    train_corpus: SynthCorpus,
    test: list[TaggedSentence],
    cfg: PipelineConfig,
    seed: int,
    lam: float | None = None,
) -> tuple[float, float]:
    """Full two-arm comparison on one seed: auto-extract triggers, train the
    interpolation tagger on them, train the plain tagger, evaluate both."""
    run = run_extraction(train_corpus.sentences, train_corpus, cfg, seed)
    model = train_tin(run.examples, cfg.tin_config(seed, lam))
    base = train_baseline(train_corpus.sentences, cfg.baseline_config(seed))
    return evaluate(model, test).f1, evaluate(base, test).f1
