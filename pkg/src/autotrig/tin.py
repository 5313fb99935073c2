"""Trigger interpolation tagger and its plain unmasked control.

Training encodes two views of each sentence with ONE shared encoder — an
entity-masked view and a trigger-masked view — and feeds the per-token
linear interpolation of the two hidden sequences to a CRF. Inference is a
single unmasked pass: no trigger information is consumed at tag time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from autotrig.corpus import (
    EvalReport,
    TaggedSentence,
    Tagset,
    TriggerLabeledExample,
    entity_f1,
)
from autotrig.crf import CrfParams, nll_tensor, viterbi
from autotrig.neural import (
    MASK_ENT,
    MASK_TRG,
    UNK,
    EncoderConfig,
    ParamStore,
    Tensor,
    Vocab,
    add,
    encode,
    encode_tensor,
    init_encoder,
    load_checkpoint,
    matmul,
    mul,
    save_checkpoint,
    sgd_step,
)


class TinError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Shared trainer settings for the tagger (no interpolation weight:
    the baseline rejects one). ``lr_decay`` multiplies the learning rate
    after each epoch."""

    embed_dim: int = 50
    hidden_dim: int = 200
    epochs: int = 10
    batch_size: int = 10
    lr: float = 0.01
    lr_decay: float = 1.0
    clip: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class TinConfig(TrainConfig):
    """Interpolation trainer settings.

    Masking is stochastic per epoch (seeded). Each masked group (one
    entity span, or one trigger's index set) draws a single corruption:
    kept intact with the group's keep probability, replaced by UNK with
    its unk probability, replaced by the view's MASK token otherwise.
    ``decoy_masks`` positions outside entities/triggers get mask tokens in
    both views (same position).

    Why not deterministic full masking: a from-scratch encoder then never
    runs on a mask-free sentence and learns to key on the mask tokens as
    label markers, so the unmasked tagging pass collapses. The UNK leg and
    the occasional kept trigger anchor the encoder to real inputs; decoys
    decouple mask tokens from entity positions. Triggers keep a higher
    keep rate: masking every trigger would delete all contextual evidence
    wholesale, which real trigger sets never do."""

    lam: float = 0.5
    ent_keep_prob: float = 0.0
    ent_unk_prob: float = 0.15
    trig_keep_prob: float = 0.6
    trig_unk_prob: float = 0.15
    decoy_masks: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.lam <= 1.0):
            raise TinError(f"interpolation weight must be in [0,1], got {self.lam}")
        for keep, unk in ((self.ent_keep_prob, self.ent_unk_prob),
                          (self.trig_keep_prob, self.trig_unk_prob)):
            if keep < 0 or unk < 0 or keep + unk > 1.0:
                raise TinError("keep/unk probabilities must be >= 0 and sum to <= 1")
        if self.decoy_masks < 0:
            raise TinError("decoy_masks must be >= 0")


@dataclass(frozen=True)
class MaskedPair:
    ids_entity_masked: tuple[int, ...]
    ids_trigger_masked: tuple[int, ...]


def build_masked_pair(example: TriggerLabeledExample, vocab: Vocab) -> MaskedPair:
    """Entity view masks the union of ALL gold entity spans; trigger view
    masks the union of ALL trigger index sets. The two mask sets are
    disjoint by the trigger/entity-disjointness invariant."""
    base = vocab.encode(example.sentence.tokens)
    ent_positions = {
        p for span in example.sentence.spans for p in range(span.start, span.end)
    }
    trg_positions = {p for t in example.triggers for p in t.indices}
    ids_e = tuple(MASK_ENT if p in ent_positions else tok for p, tok in enumerate(base))
    ids_t = tuple(MASK_TRG if p in trg_positions else tok for p, tok in enumerate(base))
    return MaskedPair(ids_e, ids_t)


def interpolate(h: Tensor, h_prime: Tensor, lam: float) -> Tensor:
    """Per-token, per-dimension blend lam*h + (1-lam)*h'. Endpoints are
    exact: lam=1 returns h's values bit-for-bit, lam=0 returns h's."""
    if h.data.shape != h_prime.data.shape:
        raise TinError(f"shape mismatch {h.data.shape} vs {h_prime.data.shape}")
    if not (0.0 <= lam <= 1.0):
        raise TinError(f"interpolation weight must be in [0,1], got {lam}")
    return add(mul(h, lam), mul(h_prime, 1.0 - lam))


def interpolate_np(h: np.ndarray, h_prime: np.ndarray, lam: float) -> np.ndarray:
    if h.shape != h_prime.shape:
        raise TinError(f"shape mismatch {h.shape} vs {h_prime.shape}")
    return lam * h + (1.0 - lam) * h_prime


class TinModel:
    """Encoder + CRF tagger. ``kind`` is "tin" (interpolation-trained) or
    "baseline" (unmasked-trained); prediction is identical for both."""

    def __init__(
        self,
        store: ParamStore,
        enc_cfg: EncoderConfig,
        vocab: Vocab,
        tagset: Tagset,
        crf: CrfParams,
        kind: str,
        lam: float | None,
        history: list[float] | None = None,
    ):
        self.store = store
        self.enc_cfg = enc_cfg
        self.vocab = vocab
        self.tagset = tagset
        self.crf = crf
        self.kind = kind
        self.lam = lam
        self.history = history or []

    def emissions(self, token_ids: Sequence[int]) -> np.ndarray:
        h = encode(self.store, self.enc_cfg, token_ids)
        return h @ self.store["head.W"].data + self.store["head.b"].data

    def save(self, path: str | Path) -> None:
        meta = {
            "embed_dim": self.enc_cfg.embed_dim,
            "hidden_dim": self.enc_cfg.hidden_dim,
            "vocab": self.vocab.to_list(),
            "types": list(self.tagset.types),
            "lam": self.lam,
            "history": self.history,
        }
        save_checkpoint(path, self.kind, self.store, meta)

    @classmethod
    def load(cls, path: str | Path) -> "TinModel":
        kind, store, meta = load_checkpoint(path)
        if kind not in ("tin", "baseline"):
            raise TinError(f"{path}: checkpoint kind {kind!r} is not a tagger")
        vocab = Vocab.from_list(meta["vocab"])
        tagset = Tagset(meta["types"])
        enc_cfg = EncoderConfig(
            vocab_size=len(vocab),
            embed_dim=meta["embed_dim"],
            hidden_dim=meta["hidden_dim"],
            tagset_size=len(tagset),
        )
        crf = CrfParams.for_tagset(tagset, store)
        return cls(store, enc_cfg, vocab, tagset, crf, kind, meta.get("lam"),
                   list(meta.get("history", [])))


def _init_tagger(
    vocab: Vocab, tagset: Tagset, cfg: TrainConfig
) -> tuple[ParamStore, EncoderConfig, CrfParams]:
    enc_cfg = EncoderConfig(
        vocab_size=len(vocab),
        embed_dim=cfg.embed_dim,
        hidden_dim=cfg.hidden_dim,
        tagset_size=len(tagset),
    )
    store = ParamStore(cfg.seed)
    init_encoder(store, enc_cfg)
    store.add("head.W", (2 * cfg.hidden_dim, len(tagset)))
    store.add("head.b", (1, len(tagset)), init="zeros")
    crf = CrfParams.for_tagset(tagset, store)
    return store, enc_cfg, crf


def _head(store: ParamStore, h: Tensor) -> Tensor:
    return add(matmul(h, store["head.W"]), store["head.b"])


def tin_sentence_loss(
    store: ParamStore,
    enc_cfg: EncoderConfig,
    crf: CrfParams,
    pair: MaskedPair,
    tag_ids: Sequence[int],
    lam: float,
) -> Tensor:
    """CRF NLL on the interpolated encodings; gradients reach the shared
    encoder through both masked passes."""
    h = encode_tensor(store, enc_cfg, pair.ids_entity_masked)
    h_prime = encode_tensor(store, enc_cfg, pair.ids_trigger_masked)
    blended = interpolate(h, h_prime, lam)
    return nll_tensor(_head(store, blended), tag_ids, crf)


def _run_training(model: TinModel, make_loss_fns: list, cfg: TrainConfig) -> None:
    """Shuffled mini-batch SGD; each entry of ``make_loss_fns`` maps an rng
    to that example's scalar loss tensor."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    n = len(make_loss_fns)
    lr = cfg.lr
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [make_loss_fns[i] for i in order[lo : lo + cfg.batch_size]]
            terms = [make_loss(rng) for make_loss in batch]
            total = terms[0]
            for piece in terms[1:]:
                total = add(total, piece)
            loss = total * (1.0 / len(batch))
            model.store.zero_grad()
            loss.backward()
            sgd_step(model.store, model.store.grads(), lr, cfg.clip)
            epoch_loss += float(loss.data) * len(batch)
        lr *= cfg.lr_decay
        model.history.append(epoch_loss / n)


def _corrupt_group(
    ids: list[int],
    positions: Sequence[int],
    mask_id: int,
    keep_prob: float,
    unk_prob: float,
    rng: np.random.Generator,
) -> None:
    # one draw per group so multi-token spans corrupt coherently
    r = rng.random()
    if r < keep_prob:
        return
    rep = UNK if r < keep_prob + unk_prob else mask_id
    for p in positions:
        ids[p] = rep


def _masked_views(
    base: list[int],
    entity_spans: Sequence[tuple[int, int]],
    trigger_groups: Sequence[tuple[int, ...]],
    cfg: TinConfig,
    rng: np.random.Generator,
) -> tuple[list[int], list[int]]:
    ids_e = list(base)
    ids_t = list(base)
    for s, e in entity_spans:
        _corrupt_group(ids_e, range(s, e), MASK_ENT, cfg.ent_keep_prob, cfg.ent_unk_prob, rng)
    for grp in trigger_groups:
        _corrupt_group(ids_t, grp, MASK_TRG, cfg.trig_keep_prob, cfg.trig_unk_prob, rng)
    if cfg.decoy_masks:
        used = {p for s, e in entity_spans for p in range(s, e)}
        used |= {p for grp in trigger_groups for p in grp}
        free = [p for p in range(len(base)) if p not in used]
        for _ in range(cfg.decoy_masks):
            if free:
                pos = free[int(rng.integers(len(free)))]
                ids_e[pos] = MASK_ENT
                ids_t[pos] = MASK_TRG
    return ids_e, ids_t


def train_tin(
    data: Sequence[TriggerLabeledExample], cfg: TinConfig = TinConfig()
) -> TinModel:
    """Train on entity-masked/trigger-masked interpolations; deterministic
    given ``cfg.seed``. Examples with no triggers are kept (their trigger
    view is the original sentence)."""
    if not data:
        raise TinError("training data is empty")
    sentences = [ex.sentence for ex in data]
    vocab = Vocab.from_sentences(sentences)
    tagset = Tagset.from_data(sentences)
    store, enc_cfg, crf = _init_tagger(vocab, tagset, cfg)
    model = TinModel(store, enc_cfg, vocab, tagset, crf, "tin", cfg.lam)

    prepped = []
    for ex in data:
        base = vocab.encode(ex.sentence.tokens)
        spans = [(sp.start, sp.end) for sp in ex.sentence.spans]
        groups = [tuple(t.indices) for t in ex.triggers]
        prepped.append((base, spans, groups, tagset.encode(ex.sentence.tags)))

    def make_loss(item):
        base, spans, groups, tag_ids = item

        def build(rng: np.random.Generator) -> Tensor:
            ids_e, ids_t = _masked_views(base, spans, groups, cfg, rng)
            pair = MaskedPair(tuple(ids_e), tuple(ids_t))
            return tin_sentence_loss(store, enc_cfg, crf, pair, tag_ids, cfg.lam)

        return build

    _run_training(model, [make_loss(item) for item in prepped], cfg)
    return model


def train_baseline(
    data: Sequence[TaggedSentence], cfg: TrainConfig = TrainConfig()
) -> TinModel:
    """Control arm: identical encoder + CRF trained on unmasked inputs."""
    if not data:
        raise TinError("training data is empty")
    if not isinstance(cfg, TrainConfig) or isinstance(cfg, TinConfig):
        raise TinError("baseline training takes a TrainConfig without an interpolation weight")
    vocab = Vocab.from_sentences(data)
    tagset = Tagset.from_data(data)
    store, enc_cfg, crf = _init_tagger(vocab, tagset, cfg)
    model = TinModel(store, enc_cfg, vocab, tagset, crf, "baseline", None)

    closures = []
    for sent in data:
        ids = vocab.encode(sent.tokens)
        tag_ids = tagset.encode(sent.tags)
        closures.append(
            lambda rng, i=ids, t=tag_ids: nll_tensor(
                _head(store, encode_tensor(store, enc_cfg, i)), t, crf
            )
        )
    _run_training(model, closures, cfg)
    return model


def predict(model: TinModel, token_ids: Sequence[int]) -> list[str]:
    """Tag a sentence from its raw token ids: one unmasked encoder pass,
    then Viterbi. Triggers are not an input."""
    return viterbi(model.emissions(token_ids), model.crf)


def predict_sentence(model: TinModel, tokens: Sequence[str]) -> list[str]:
    return predict(model, model.vocab.encode(tokens))


def evaluate(model: TinModel, data: Sequence[TaggedSentence]) -> EvalReport:
    if not data:
        raise TinError("evaluation data is empty")
    preds = [predict_sentence(model, s.tokens) for s in data]
    return entity_f1(data, preds)
