"""Entity token classifier: encoder + per-token softmax over BIO tags.

This is the stage-1 scoring model. Its entity score — the average
probability the classifier assigns to an entity's own gold tags — is the
quantity that saliency scoring perturbs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from autotrig.corpus import EntitySpan, TaggedSentence, Tagset
from autotrig.neural import (
    EncoderConfig,
    ParamStore,
    Tensor,
    Vocab,
    add,
    cross_entropy,
    encode,
    encode_tensor,
    init_encoder,
    load_checkpoint,
    matmul,
    save_checkpoint,
    sgd_step,
)


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class ClassifierConfig:
    embed_dim: int = 50
    hidden_dim: int = 200
    epochs: int = 10
    batch_size: int = 10
    lr: float = 0.01
    clip: float = 5.0
    seed: int = 0


class TokenClassifier:
    def __init__(
        self,
        store: ParamStore,
        enc_cfg: EncoderConfig,
        vocab: Vocab,
        tagset: Tagset,
        history: list[float] | None = None,
    ):
        self.store = store
        self.enc_cfg = enc_cfg
        self.vocab = vocab
        self.tagset = tagset
        self.history = history or []

    def logits(self, token_ids: Sequence[int]) -> np.ndarray:
        h = encode(self.store, self.enc_cfg, token_ids)
        return h @ self.store["head.W"].data + self.store["head.b"].data

    def token_probs(self, token_ids: Sequence[int]) -> np.ndarray:
        """Per-token probability distribution over tags, rows sum to 1."""
        logits = self.logits(token_ids)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def predict_tags(self, token_ids: Sequence[int]) -> list[str]:
        """Per-token argmax labels (not BIO-constrained; for accuracy only)."""
        idx = np.argmax(self.logits(token_ids), axis=1)
        return [self.tagset.label(i) for i in idx]

    def save(self, path: str | Path) -> None:
        meta = {
            "embed_dim": self.enc_cfg.embed_dim,
            "hidden_dim": self.enc_cfg.hidden_dim,
            "vocab": self.vocab.to_list(),
            "types": list(self.tagset.types),
            "history": self.history,
        }
        save_checkpoint(path, "classifier", self.store, meta)

    @classmethod
    def load(cls, path: str | Path) -> "TokenClassifier":
        kind, store, meta = load_checkpoint(path)
        if kind != "classifier":
            raise ClassifierError(f"{path}: checkpoint kind {kind!r} is not a classifier")
        vocab = Vocab.from_list(meta["vocab"])
        tagset = Tagset(meta["types"])
        enc_cfg = EncoderConfig(
            vocab_size=len(vocab),
            embed_dim=meta["embed_dim"],
            hidden_dim=meta["hidden_dim"],
            tagset_size=len(tagset),
        )
        return cls(store, enc_cfg, vocab, tagset, list(meta.get("history", [])))


def _logits_tensor(store: ParamStore, enc_cfg: EncoderConfig, ids: Sequence[int]) -> Tensor:
    h = encode_tensor(store, enc_cfg, ids)
    return add(matmul(h, store["head.W"]), store["head.b"])


def train_classifier(
    data: Sequence[TaggedSentence], cfg: ClassifierConfig = ClassifierConfig()
) -> TokenClassifier:
    """Cross-entropy training of the token classifier; deterministic given
    ``cfg.seed``. ``epochs=0`` returns the initialized, untrained model."""
    if not data:
        raise ClassifierError("training data is empty")
    vocab = Vocab.from_sentences(data)
    tagset = Tagset.from_data(data)
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

    encoded = [
        (vocab.encode(s.tokens), tagset.encode(s.tags)) for s in data
    ]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    model = TokenClassifier(store, enc_cfg, vocab, tagset)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(encoded))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [encoded[i] for i in order[lo : lo + cfg.batch_size]]
            losses = [cross_entropy(_logits_tensor(store, enc_cfg, ids), targets)
                      for ids, targets in batch]
            total = losses[0]
            for piece in losses[1:]:
                total = add(total, piece)
            loss = total * (1.0 / len(batch))
            store.zero_grad()
            loss.backward()
            sgd_step(store, store.grads(), cfg.lr, cfg.clip)
            epoch_loss += float(loss.data) * len(batch)
        model.history.append(epoch_loss / len(encoded))
    return model


def entity_score(
    model: TokenClassifier, token_ids: Sequence[int], entity: EntitySpan
) -> float:
    """Average probability the classifier assigns to the entity's own gold
    BIO tags (B-T at the first token, I-T after)."""
    n = len(token_ids)
    if not (0 <= entity.start < entity.end <= n):
        raise ClassifierError(
            f"entity ({entity.start},{entity.end}) out of bounds for length {n}"
        )
    probs = model.token_probs(token_ids)
    total = 0.0
    for j in range(entity.start, entity.end):
        label = f"B-{entity.etype}" if j == entity.start else f"I-{entity.etype}"
        total += probs[j, model.tagset.index(label)]
    return total / (entity.end - entity.start)


def token_accuracy(model: TokenClassifier, data: Sequence[TaggedSentence]) -> float:
    correct = total = 0
    for s in data:
        pred = model.predict_tags(model.vocab.encode(s.tokens))
        correct += sum(p == g for p, g in zip(pred, s.tags))
        total += len(s)
    return correct / total if total else 0.0
