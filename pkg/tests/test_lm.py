import numpy as np
import pytest

from autotrig import neural as nn
from autotrig.corpus import TaggedSentence
from autotrig.lm import (
    LangModel,
    LmConfig,
    LmError,
    perplexity,
    sample_replacements,
    train_lm,
    _sentence_loss,
)
from autotrig.neural import MASK_TRG, PAD
from autotrig.synthgen import SynthConfig, generate

FAST = LmConfig(embed_dim=16, hidden_dim=16, epochs=4, batch_size=1, lr=0.5, seed=4)


def repeat_sentence(n):
    toks = tuple(["a", "b"] * 6)
    return [TaggedSentence(str(i), toks, ("O",) * len(toks)) for i in range(n)]


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthConfig(n_sentences=120, seed=11))


@pytest.fixture(scope="module")
def lmodel(corpus):
    return train_lm(corpus.sentences, FAST)


def test_empty_data_rejected():
    with pytest.raises(LmError):
        train_lm([])


def test_degenerate_corpus_low_perplexity():
    data = repeat_sentence(20)
    model = train_lm(data, LmConfig(embed_dim=8, hidden_dim=8, epochs=15, batch_size=1, lr=0.5, seed=0))
    # after the first token, "a b a b ..." is fully predictable
    assert perplexity(model, data) <= 1.1


def test_untrained_perplexity_near_vocab_size(corpus):
    model = train_lm(corpus.sentences, LmConfig(embed_dim=8, hidden_dim=8, epochs=0, seed=0))
    ppl = perplexity(model, corpus.sentences[:30])
    vocab = len(model.vocab)
    assert 0.5 * vocab <= ppl <= 1.5 * vocab


def test_training_reduces_perplexity(corpus, lmodel):
    trained = perplexity(lmodel, corpus.sentences)
    assert trained < 0.6 * len(lmodel.vocab)


def test_deterministic_training(corpus):
    cfg = LmConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=1, lr=0.3, seed=9)
    a = train_lm(corpus.sentences[:30], cfg)
    b = train_lm(corpus.sentences[:30], cfg)
    for name in a.store.names():
        assert np.array_equal(a.store[name].data, b.store[name].data)


def test_next_distribution_sums_to_one(lmodel):
    dist = lmodel.next_distribution([5, 6, 7])
    assert dist.shape == (len(lmodel.vocab),)
    assert dist.sum() == pytest.approx(1.0, abs=1e-9)


def test_sentence_loss_gradients(corpus):
    model = train_lm(corpus.sentences[:10], LmConfig(embed_dim=6, hidden_dim=5, epochs=0, seed=2))
    ids = model.vocab.encode(corpus.sentences[0].tokens)

    def loss():
        return _sentence_loss(model.store, ids)

    assert nn.grad_check(loss, model.store, eps=1e-5, max_coords=150, seed=0) < 1e-6


# --- sampling ----------------------------------------------------------------


def test_empty_delta_noop(lmodel):
    out = sample_replacements(lmodel, [5, 6, 7], [], n_samples=4, seed=0)
    assert out == [{}, {}, {}, {}]


def test_delta_out_of_bounds(lmodel):
    with pytest.raises(LmError):
        sample_replacements(lmodel, [5, 6, 7], [3], n_samples=1, seed=0)


def test_samples_replace_only_delta(lmodel):
    ids = [5, 6, 7, 8, 9]
    out = sample_replacements(lmodel, ids, [1, 3], n_samples=6, seed=1)
    assert len(out) == 6
    for rep in out:
        assert set(rep) == {1, 3}


def test_samples_never_special_tokens(lmodel):
    ids = [5, 6, 7, 8, 9]
    for rep in sample_replacements(lmodel, ids, [0, 2, 4], n_samples=30, seed=2):
        assert all(tok >= 4 for tok in rep.values())


def test_sampling_deterministic(lmodel):
    ids = [5, 6, 7, 8, 9, 10]
    a = sample_replacements(lmodel, ids, [2, 3], n_samples=8, seed=42)
    b = sample_replacements(lmodel, ids, [2, 3], n_samples=8, seed=42)
    assert a == b
    c = sample_replacements(lmodel, ids, [2, 3], n_samples=8, seed=43)
    assert a != c


def test_temperature_zero_is_greedy(corpus):
    cfg = LmConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=1, lr=0.3, seed=9, temperature=0.0)
    model = train_lm(corpus.sentences[:30], cfg)
    ids = model.vocab.encode(corpus.sentences[0].tokens)
    draws = sample_replacements(model, ids, [2, 4], n_samples=5, seed=0)
    assert all(d == draws[0] for d in draws)
    # greedy choice equals the argmax of the masked predictive distribution
    dist = model.next_distribution(ids[:2])
    dist[:4] = 0.0
    assert draws[0][2] == int(np.argmax(dist))


def test_forward_conditioning_uses_resampled_prefix(lmodel):
    # two delta positions: the draw at the second position must condition on
    # the first draw, so fixing different seeds changes the joint sample
    ids = [5, 6, 7, 8, 9, 10]
    reps = sample_replacements(lmodel, ids, [1, 2], n_samples=50, seed=3)
    pairs = {(r[1], r[2]) for r in reps}
    assert len(pairs) > 1  # non-degenerate joint distribution


def test_sampled_unigram_matches_predictive_distribution(lmodel):
    # chi-square sanity at one position with fixed context
    ids = lmodel.vocab.encode(["fill1", "fill2", "fill3", "fill4"])
    n = 4000
    reps = sample_replacements(lmodel, ids, [3], n_samples=n, seed=7)
    counts = np.zeros(len(lmodel.vocab))
    for rep in reps:
        counts[rep[3]] += 1
    dist = lmodel.next_distribution(ids[:3])
    dist[:4] = 0.0
    dist = dist / dist.sum()
    keep = dist > 20.0 / n  # only well-populated cells
    chi2 = float((((counts[keep] / n) - dist[keep]) ** 2 / dist[keep]).sum()) * n
    dof = int(keep.sum()) - 1
    # generous bound: mean + 6*sd of chi-square
    assert chi2 < dof + 6 * np.sqrt(2 * dof)


def test_checkpoint_roundtrip(tmp_path, lmodel):
    path = tmp_path / "lm.json"
    lmodel.save(path)
    loaded = LangModel.load(path)
    ids = [5, 6, 7]
    assert np.array_equal(loaded.next_distribution(ids), lmodel.next_distribution(ids))
