"""Autoregressive LSTM language model trained on the working corpus.

Used to resample the neighborhood of a phrase so its importance score is
averaged over plausible contexts instead of being tied to the one observed
context. Sampling is forward-only: each resampled position conditions on
the original left context with earlier resampled positions substituted.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from autotrig.corpus import TaggedSentence
from autotrig.neural import (
    MASK_TRG,
    PAD,
    ParamStore,
    Tensor,
    Vocab,
    add,
    concat,
    cross_entropy,
    init_lstm,
    load_checkpoint,
    lstm_states_t,
    matmul,
    rows,
    save_checkpoint,
    sgd_step,
    _sigmoid_np,
)


class LmError(ValueError):
    pass


N_SPECIALS = MASK_TRG + 1  # ids below this are excluded from sampling


@dataclass(frozen=True)
class LmConfig:
    embed_dim: int = 50
    hidden_dim: int = 200
    epochs: int = 10
    batch_size: int = 10
    lr: float = 0.01
    clip: float = 5.0
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise LmError("temperature must be >= 0")


class LangModel:
    def __init__(
        self,
        store: ParamStore,
        cfg: LmConfig,
        vocab: Vocab,
        history: list[float] | None = None,
    ):
        self.store = store
        self.cfg = cfg
        self.vocab = vocab
        self.history = history or []

    @property
    def temperature(self) -> float:
        return self.cfg.temperature

    # --- numpy forward path -------------------------------------------------

    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        h = np.zeros((1, self.cfg.hidden_dim))
        return h, h.copy()

    def step(
        self, state: tuple[np.ndarray, np.ndarray], token_id: int
    ) -> tuple[np.ndarray, np.ndarray]:
        """Consume one token, returning the next (h, c)."""
        h, c = state
        hid = self.cfg.hidden_dim
        x = self.store["embed"].data[token_id : token_id + 1]
        gates = x @ self.store["lm.Wx"].data + h @ self.store["lm.Wh"].data + self.store["lm.b"].data
        i = _sigmoid_np(gates[:, :hid])
        f = _sigmoid_np(gates[:, hid : 2 * hid])
        u = np.tanh(gates[:, 2 * hid : 3 * hid])
        o = _sigmoid_np(gates[:, 3 * hid : 4 * hid])
        c = f * c + i * u
        h = o * np.tanh(c)
        return h, c

    def logits(self, state: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
        h, _ = state
        return (h @ self.store["proj.W"].data + self.store["proj.b"].data)[0]

    def next_distribution(self, prefix_ids: Sequence[int]) -> np.ndarray:
        """Predictive distribution over the full vocabulary after consuming
        a BOS marker plus ``prefix_ids``."""
        state = self.initial_state()
        state = self.step(state, PAD)  # PAD doubles as BOS
        for t in prefix_ids:
            state = self.step(state, int(t))
        logits = self.logits(state)
        logits = logits - logits.max()
        e = np.exp(logits)
        return e / e.sum()

    def save(self, path: str | Path) -> None:
        meta = {
            "embed_dim": self.cfg.embed_dim,
            "hidden_dim": self.cfg.hidden_dim,
            "temperature": self.cfg.temperature,
            "vocab": self.vocab.to_list(),
            "history": self.history,
        }
        save_checkpoint(path, "lm", self.store, meta)

    @classmethod
    def load(cls, path: str | Path) -> "LangModel":
        kind, store, meta = load_checkpoint(path)
        if kind != "lm":
            raise LmError(f"{path}: checkpoint kind {kind!r} is not a language model")
        cfg = LmConfig(
            embed_dim=meta["embed_dim"],
            hidden_dim=meta["hidden_dim"],
            temperature=meta.get("temperature", 1.0),
        )
        return cls(store, cfg, Vocab.from_list(meta["vocab"]), list(meta.get("history", [])))


def _sentence_loss(model_store: ParamStore, ids: list[int]) -> Tensor:
    """Mean next-token cross-entropy for one sentence (inputs shifted by a
    BOS PAD)."""
    inputs = [PAD] + ids[:-1]
    x = rows(model_store["embed"], inputs)
    states = lstm_states_t(model_store, "lm", x, reverse=False)
    h = concat(states, axis=0)
    logits = add(matmul(h, model_store["proj.W"]), model_store["proj.b"])
    return cross_entropy(logits, ids)


def train_lm(data: Sequence[TaggedSentence], cfg: LmConfig = LmConfig()) -> LangModel:
    """Next-token training; deterministic given ``cfg.seed``. The history
    records per-epoch mean token NLL."""
    if not data:
        raise LmError("training data is empty")
    vocab = Vocab.from_sentences(data)
    store = ParamStore(cfg.seed)
    store.add("embed", (len(vocab), cfg.embed_dim), init="embedding")
    init_lstm(store, "lm", cfg.embed_dim, cfg.hidden_dim)
    store.add("proj.W", (cfg.hidden_dim, len(vocab)))
    store.add("proj.b", (1, len(vocab)), init="zeros")

    encoded = [vocab.encode(s.tokens) for s in data]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    model = LangModel(store, cfg, vocab)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(encoded))
        epoch_loss = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = [encoded[i] for i in order[lo : lo + cfg.batch_size]]
            losses = [_sentence_loss(store, ids) for ids in batch]
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


def perplexity(model: LangModel, data: Sequence[TaggedSentence]) -> float:
    """exp(mean per-token NLL) over ``data``."""
    if not data:
        raise LmError("perplexity needs at least one sentence")
    total_nll = 0.0
    total_tokens = 0
    for s in data:
        ids = model.vocab.encode(s.tokens)
        state = model.initial_state()
        state = model.step(state, PAD)
        for t in ids:
            logits = model.logits(state)
            logits = logits - logits.max()
            logz = np.log(np.exp(logits).sum())
            total_nll += logz - logits[t]
            state = model.step(state, int(t))
        total_tokens += len(ids)
    return float(np.exp(total_nll / total_tokens))


def _sample_token(
    logits: np.ndarray, temperature: float, rng: np.random.Generator
) -> int:
    allowed = logits.copy()
    allowed[:N_SPECIALS] = -np.inf  # never sample PAD/UNK/mask tokens
    if temperature == 0.0:
        return int(np.argmax(allowed))
    scaled = allowed / temperature
    scaled = scaled - scaled[np.isfinite(scaled)].max()
    probs = np.exp(scaled)
    probs[:N_SPECIALS] = 0.0
    probs = probs / probs.sum()
    return int(rng.choice(len(probs), p=probs))


def sample_replacements(
    model: LangModel,
    sentence_ids: Sequence[int],
    delta: Sequence[int],
    n_samples: int,
    seed: int | np.random.SeedSequence = 0,
) -> list[dict[int, int]]:
    """Draw ``n_samples`` independent replacement maps for the positions in
    ``delta``. Each draw resamples delta positions left-to-right from the
    language model, conditioning on the original left context with earlier
    resampled positions substituted. Fully determined by ``seed``."""
    ids = [int(t) for t in sentence_ids]
    delta = sorted(set(int(d) for d in delta))
    if any(d < 0 or d >= len(ids) for d in delta):
        raise LmError(f"delta indices {delta} out of bounds for length {len(ids)}")
    if not delta:
        return [{} for _ in range(n_samples)]
    rng = np.random.default_rng(seed)
    delta_set = set(delta)

    # shared prefix state: BOS plus everything left of the first delta position
    base = model.initial_state()
    base = model.step(base, PAD)
    for p in range(delta[0]):
        base = model.step(base, ids[p])

    out: list[dict[int, int]] = []
    for _ in range(n_samples):
        state = base
        replace: dict[int, int] = {}
        for p in range(delta[0], delta[-1] + 1):
            if p in delta_set:
                tok = _sample_token(model.logits(state), model.temperature, rng)
                replace[p] = tok
            else:
                tok = ids[p]
            state = model.step(state, tok)
        out.append(replace)
    return out
