import numpy as np
import pytest

from autotrig import neural as nn
from autotrig.corpus import EntitySpan, TaggedSentence, Trigger, TriggerLabeledExample
from autotrig.neural import MASK_ENT, MASK_TRG
from autotrig.synthgen import SynthConfig, generate
from autotrig.tin import (
    TinConfig,
    TinError,
    TinModel,
    TrainConfig,
    build_masked_pair,
    evaluate,
    interpolate,
    predict,
    predict_sentence,
    tin_sentence_loss,
    train_baseline,
    train_tin,
)

FAST_TIN = TinConfig(embed_dim=16, hidden_dim=16, epochs=10, batch_size=1,
                     lr=0.4, lr_decay=0.95, seed=6, lam=0.5)
FAST_BASE = TrainConfig(embed_dim=16, hidden_dim=16, epochs=10, batch_size=1,
                        lr=0.4, lr_decay=0.95, seed=6)


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthConfig(n_sentences=60, seed=11))


@pytest.fixture(scope="module")
def model(corpus):
    return train_tin(corpus.gold, FAST_TIN)


# --- masked pair --------------------------------------------------------------


def test_build_masked_pair_basic():
    sent = TaggedSentence("0", tuple(f"w{i}" for i in range(9)),
                          ("B-X", "I-X") + ("O",) * 7)
    trig = Trigger(EntitySpan(0, 2, "X"), (5, 6, 7))
    ex = TriggerLabeledExample(sent, (trig,))
    vocab = nn.Vocab(sent.tokens)
    pair = build_masked_pair(ex, vocab)
    base = vocab.encode(sent.tokens)
    assert pair.ids_entity_masked[0] == MASK_ENT
    assert pair.ids_entity_masked[1] == MASK_ENT
    assert pair.ids_entity_masked[2:] == tuple(base[2:])
    for p in (5, 6, 7):
        assert pair.ids_trigger_masked[p] == MASK_TRG
    for p in (0, 1, 2, 3, 4, 8):
        assert pair.ids_trigger_masked[p] == base[p]
    # positions outside both masks agree across views and with the original
    for p in (2, 3, 4, 8):
        assert pair.ids_entity_masked[p] == pair.ids_trigger_masked[p] == base[p]


def test_build_masked_pair_no_triggers():
    sent = TaggedSentence("0", ("a", "b", "c"), ("B-X", "O", "O"))
    ex = TriggerLabeledExample(sent, ())
    vocab = nn.Vocab(sent.tokens)
    pair = build_masked_pair(ex, vocab)
    assert pair.ids_trigger_masked == tuple(vocab.encode(sent.tokens))


def test_masked_sets_disjoint(corpus):
    vocab = nn.Vocab.from_sentences(corpus.sentences)
    for ex in corpus.gold[:20]:
        pair = build_masked_pair(ex, vocab)
        e_masked = {i for i, t in enumerate(pair.ids_entity_masked) if t == MASK_ENT}
        t_masked = {i for i, t in enumerate(pair.ids_trigger_masked) if t == MASK_TRG}
        assert not e_masked & t_masked


# --- interpolation --------------------------------------------------------------


def test_interpolate_arithmetic():
    h = nn.constant(np.array([[1.0, 0.0]]))
    hp = nn.constant(np.array([[0.0, 1.0]]))
    out = interpolate(h, hp, 0.5)
    assert np.allclose(out.data, [[0.5, 0.5]])


def test_interpolate_endpoints_exact():
    rng = np.random.default_rng(0)
    h = nn.constant(rng.normal(size=(4, 6)))
    hp = nn.constant(rng.normal(size=(4, 6)))
    assert np.array_equal(interpolate(h, hp, 1.0).data, h.data)
    assert np.array_equal(interpolate(h, hp, 0.0).data, hp.data)


def test_interpolate_shape_mismatch():
    with pytest.raises(TinError):
        interpolate(nn.constant(np.zeros((2, 3))), nn.constant(np.zeros((3, 2))), 0.5)


def test_interpolate_lambda_range():
    h = nn.constant(np.zeros((1, 1)))
    with pytest.raises(TinError):
        interpolate(h, h, 1.5)


# --- training -------------------------------------------------------------------


def test_empty_data_rejected():
    with pytest.raises(TinError):
        train_tin([])
    with pytest.raises(TinError):
        train_baseline([])


def test_baseline_rejects_tin_config(corpus):
    with pytest.raises(TinError):
        train_baseline(corpus.sentences, FAST_TIN)


def test_weight_sharing_single_parameter_set(corpus):
    # both masked passes must read the same tensors: the loss gradient of
    # the shared encoder accumulates contributions from both views
    ex = corpus.gold[0]
    vocab = nn.Vocab.from_sentences([ex.sentence])
    from autotrig.corpus import Tagset
    from autotrig.crf import CrfParams

    tagset = Tagset.from_data([ex.sentence])
    cfg = nn.EncoderConfig(len(vocab), 8, 8, len(tagset))
    store = nn.ParamStore(0)
    nn.init_encoder(store, cfg)
    store.add("head.W", (16, len(tagset)))
    store.add("head.b", (1, len(tagset)), init="zeros")
    crf = CrfParams.for_tagset(tagset, store)
    pair = build_masked_pair(ex, vocab)
    tag_ids = tagset.encode(ex.sentence.tags)

    loss = tin_sentence_loss(store, cfg, crf, pair, tag_ids, 0.5)
    store.zero_grad()
    loss.backward()
    # single embedding tensor receives gradient from both views: the mask
    # rows of BOTH mask tokens are touched
    g = store["embed"].grad
    assert g is not None
    assert np.abs(g[MASK_ENT]).sum() > 0
    assert np.abs(g[MASK_TRG]).sum() > 0


def test_tin_loss_gradients_full_path(corpus):
    ex = corpus.gold[0]
    vocab = nn.Vocab.from_sentences([ex.sentence])
    from autotrig.corpus import Tagset
    from autotrig.crf import CrfParams

    tagset = Tagset.from_data([ex.sentence])
    cfg = nn.EncoderConfig(len(vocab), 6, 5, len(tagset))
    store = nn.ParamStore(1)
    nn.init_encoder(store, cfg)
    store.add("head.W", (10, len(tagset)))
    store.add("head.b", (1, len(tagset)), init="zeros")
    crf = CrfParams.for_tagset(tagset, store)
    pair = build_masked_pair(ex, vocab)
    tag_ids = tagset.encode(ex.sentence.tags)

    def loss():
        return tin_sentence_loss(store, cfg, crf, pair, tag_ids, 0.5)

    assert nn.grad_check(loss, store, eps=1e-5, max_coords=200, seed=2) < 1e-6


def test_training_deterministic(corpus):
    cfg = TinConfig(embed_dim=8, hidden_dim=8, epochs=2, batch_size=1, lr=0.3, seed=5)
    a = train_tin(corpus.gold[:15], cfg)
    b = train_tin(corpus.gold[:15], cfg)
    for name in a.store.names():
        assert np.array_equal(a.store[name].data, b.store[name].data)


def test_overfit_small_corpus_unmasked_inference(corpus):
    small = generate(SynthConfig(n_sentences=10, seed=7,
                                 filler_vocab_size=15, sentence_length_range=(8, 12)))
    cfg = TinConfig(embed_dim=16, hidden_dim=16, epochs=60, batch_size=1,
                    lr=0.4, lr_decay=0.95, seed=0, lam=0.5)
    m = train_tin(small.gold, cfg)
    assert evaluate(m, small.sentences).f1 == 1.0


def test_predict_trigger_independent(model, corpus):
    # identical output whether or not trigger annotations accompany a sentence
    sent = corpus.sentences[0]
    pred1 = predict_sentence(model, sent.tokens)
    pred2 = predict_sentence(model, sent.tokens)  # triggers are not an input at all
    assert pred1 == pred2
    from autotrig.corpus import validate_bio

    validate_bio(pred1)


def test_predict_valid_bio_always(model):
    rng = np.random.default_rng(0)
    words = [f"fill{i}" for i in range(20)]
    from autotrig.corpus import validate_bio

    for _ in range(20):
        toks = [words[int(rng.integers(20))] for _ in range(int(rng.integers(3, 12)))]
        validate_bio(predict_sentence(model, toks))


def test_lambda_one_gives_no_gradient_to_trigger_view(corpus):
    ex = corpus.gold[0]
    vocab = nn.Vocab.from_sentences([ex.sentence])
    from autotrig.corpus import Tagset
    from autotrig.crf import CrfParams

    tagset = Tagset.from_data([ex.sentence])
    cfg = nn.EncoderConfig(len(vocab), 6, 5, len(tagset))
    store = nn.ParamStore(1)
    nn.init_encoder(store, cfg)
    store.add("head.W", (10, len(tagset)))
    store.add("head.b", (1, len(tagset)), init="zeros")
    crf = CrfParams.for_tagset(tagset, store)
    pair = build_masked_pair(ex, vocab)
    tag_ids = tagset.encode(ex.sentence.tags)

    loss = tin_sentence_loss(store, cfg, crf, pair, tag_ids, 1.0)
    store.zero_grad()
    loss.backward()
    # MASK_TRG row appears only in the zero-weighted view
    assert np.abs(store["embed"].grad[MASK_TRG]).sum() == 0.0


def test_evaluate_empty_rejected(model):
    with pytest.raises(TinError):
        evaluate(model, [])


def test_evaluate_f1_in_unit_interval(model, corpus):
    rep = evaluate(model, corpus.sentences[:20])
    assert 0.0 <= rep.f1 <= 1.0


def test_baseline_trains_without_nan(corpus):
    base = train_baseline(corpus.sentences, FAST_BASE)
    assert base.store.all_finite()
    assert base.kind == "baseline"
    assert base.lam is None


def test_checkpoint_roundtrip(tmp_path, model, corpus):
    path = tmp_path / "tin.json"
    model.save(path)
    loaded = TinModel.load(path)
    assert loaded.kind == "tin"
    assert loaded.lam == 0.5
    sent = corpus.sentences[0]
    assert predict_sentence(loaded, sent.tokens) == predict_sentence(model, sent.tokens)


def test_training_loss_non_increasing_default_lr():
    small = generate(SynthConfig(n_sentences=10, seed=3))
    cfg = TrainConfig(embed_dim=8, hidden_dim=8, epochs=6, batch_size=10, lr=0.01, seed=0)
    base = train_baseline(small.sentences, cfg)
    for a, b in zip(base.history, base.history[1:]):
        assert b <= a + 1e-3
