import itertools

import numpy as np
import pytest

from autotrig import crf as C
from autotrig import neural as nn
from autotrig.corpus import Tagset, validate_bio


def brute_force_log_partition(emissions: np.ndarray, crf: C.CrfParams) -> float:
    eff = crf.effective()
    k = crf.n_tags
    scores = []
    for path in itertools.product(range(k), repeat=emissions.shape[0]):
        s = eff[crf.start_idx, path[0]] + emissions[0, path[0]]
        for t in range(1, len(path)):
            s += eff[path[t - 1], path[t]] + emissions[t, path[t]]
        s += eff[path[-1], crf.stop_idx]
        scores.append(s)
    m = max(scores)
    if m == float("-inf"):
        return m
    return float(m + np.log(sum(np.exp(s - m) for s in scores)))


def brute_force_viterbi(emissions: np.ndarray, crf: C.CrfParams) -> list[str]:
    """Exhaustive argmax; ties resolve like per-step lowest-index
    backpointers, i.e. smallest path under right-to-left comparison."""
    eff = crf.effective()
    k = crf.n_tags
    best, best_path = float("-inf"), None
    for path in itertools.product(range(k), repeat=emissions.shape[0]):
        s = eff[crf.start_idx, path[0]] + emissions[0, path[0]]
        for t in range(1, len(path)):
            s += eff[path[t - 1], path[t]] + emissions[t, path[t]]
        s += eff[path[-1], crf.stop_idx]
        if s > best or (s == best and tuple(reversed(path)) < tuple(reversed(best_path))):
            best, best_path = s, path
    return [crf.labels[i] for i in best_path]


def random_bio_tags(tagset: Tagset, n: int, rng) -> list[str]:
    tags = []
    prev = None
    for _ in range(n):
        options = [lab for lab in tagset.labels if tagset.allowed(prev, lab)]
        tags.append(options[int(rng.integers(len(options)))])
        prev = tags[-1]
    return tags


def test_toy_log_partition_is_log_k():
    crf = C.CrfParams.unmasked(["A", "B", "C"])
    assert C.log_partition(np.zeros((1, 3)), crf) == pytest.approx(np.log(3), abs=1e-12)


def test_log_partition_shift_identity():
    rng = np.random.default_rng(0)
    crf = C.CrfParams.unmasked(["A", "B", "C"], rng.normal(size=(5, 5)))
    em = rng.normal(size=(4, 3))
    base = C.log_partition(em, crf)
    shifted = C.log_partition(em + 0.37, crf)
    assert shifted - base == pytest.approx(4 * 0.37, abs=1e-9)


def test_matches_brute_force_unmasked():
    rng = np.random.default_rng(1)
    for _ in range(40):
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 7))
        crf = C.CrfParams.unmasked([f"Y{i}" for i in range(k)], rng.normal(size=(k + 2, k + 2)))
        em = rng.normal(size=(n, k))
        assert C.log_partition(em, crf) == pytest.approx(
            brute_force_log_partition(em, crf), abs=1e-9
        )
        assert C.viterbi(em, crf) == brute_force_viterbi(em, crf)


@pytest.fixture
def bio_crf():
    ts = Tagset(["PER", "LOC"])
    store = nn.ParamStore(5)
    crf = C.CrfParams.for_tagset(ts, store)
    rng = np.random.default_rng(9)
    crf.trans.data += rng.normal(size=crf.trans.data.shape) * 0.7
    return ts, crf


def test_bio_mask_structure(bio_crf):
    ts, crf = bio_crf
    eff = crf.effective()
    assert eff[ts.index("O"), ts.index("I-PER")] == -np.inf
    assert eff[ts.index("B-PER"), ts.index("I-LOC")] == -np.inf
    assert np.isfinite(eff[ts.index("B-PER"), ts.index("I-PER")])
    assert (eff[:, crf.start_idx] == -np.inf).all()
    assert (eff[crf.stop_idx, :] == -np.inf).all()
    assert eff[crf.start_idx, ts.index("I-LOC")] == -np.inf


def test_masked_matches_brute_force(bio_crf):
    ts, crf = bio_crf
    rng = np.random.default_rng(2)
    for _ in range(25):
        n = int(rng.integers(1, 6))
        em = rng.normal(size=(n, len(ts)))
        assert C.log_partition(em, crf) == pytest.approx(
            brute_force_log_partition(em, crf), abs=1e-9
        )
        decoded = C.viterbi(em, crf)
        assert decoded == brute_force_viterbi(em, crf)
        validate_bio(decoded)  # masks guarantee valid BIO


def test_path_probabilities_normalize(bio_crf):
    ts, crf = bio_crf
    rng = np.random.default_rng(3)
    em = rng.normal(size=(4, len(ts)))
    logz = C.log_partition(em, crf)
    total = 0.0
    for path in itertools.product(ts.labels, repeat=4):
        try:
            validate_bio(list(path))
        except Exception:
            continue
        total += np.exp(C.path_score(em, list(path), crf) - logz)
    assert total == pytest.approx(1.0, abs=1e-9)


def test_nll_nonnegative_and_exp_bounded(bio_crf):
    ts, crf = bio_crf
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(1, 6))
        em = rng.normal(size=(n, len(ts)))
        gold = random_bio_tags(ts, n, rng)
        val = C.nll(em, gold, crf)
        assert val >= -1e-12
        assert 0.0 < np.exp(-val) <= 1.0 + 1e-12


def test_nll_zero_when_gold_is_only_path():
    # single token, one tag strongly favored, others are not masked but the
    # toy here has exactly one label so the gold path is the only path
    crf = C.CrfParams.unmasked(["X"])
    em = np.zeros((3, 1))
    assert C.nll(em, ["X", "X", "X"], crf) == pytest.approx(0.0, abs=1e-12)


def test_nll_rejects_invalid_gold(bio_crf):
    ts, crf = bio_crf
    with pytest.raises(C.CrfError):
        C.nll(np.zeros((2, len(ts))), ["O", "I-PER"], crf)


def test_viterbi_score_at_least_gold(bio_crf):
    ts, crf = bio_crf
    rng = np.random.default_rng(6)
    for _ in range(15):
        n = int(rng.integers(1, 6))
        em = rng.normal(size=(n, len(ts)))
        gold = random_bio_tags(ts, n, rng)
        best = C.viterbi(em, crf)
        assert C.path_score(em, best, crf) >= C.path_score(em, gold, crf) - 1e-12


def test_viterbi_tie_break_lowest_index():
    crf = C.CrfParams.unmasked(["A", "B", "C"])
    assert C.viterbi(np.zeros((4, 3)), crf) == ["A", "A", "A", "A"]


def test_viterbi_all_o_when_o_dominates(bio_crf):
    ts, crf = bio_crf
    em = np.full((5, len(ts)), -4.0)
    em[:, ts.index("O")] = 4.0
    assert C.viterbi(em, crf) == ["O"] * 5


def test_crf_gradients_match_finite_differences(bio_crf):
    ts, crf = bio_crf
    store = nn.ParamStore(7)
    em = store.add("em", (5, len(ts)))
    rng = np.random.default_rng(8)
    gold = random_bio_tags(ts, 5, rng)
    gold_ids = [crf.tag_index(t) for t in gold]

    def loss():
        return C.nll_tensor(store["em"], gold_ids, crf)

    assert nn.grad_check(loss, store, eps=1e-5, max_coords=100) < 1e-7


def test_nll_emission_gradient_is_marginals_minus_onehot(bio_crf):
    # classic CRF identity: d nll / d emissions = marginals - onehot(gold)
    ts, crf = bio_crf
    rng = np.random.default_rng(10)
    n = 4
    em_data = rng.normal(size=(n, len(ts)))
    gold = random_bio_tags(ts, n, rng)
    gold_ids = [crf.tag_index(t) for t in gold]

    em = nn.Tensor(em_data, requires_grad=True)
    loss = C.nll_tensor(em, gold_ids, crf)
    loss.backward()

    # brute-force marginals
    logz = brute_force_log_partition(em_data, crf)
    marg = np.zeros((n, len(ts)))
    import itertools as it

    for path in it.product(range(len(ts)), repeat=n):
        eff = crf.effective()
        s = eff[crf.start_idx, path[0]] + em_data[0, path[0]]
        for t in range(1, n):
            s += eff[path[t - 1], path[t]] + em_data[t, path[t]]
        s += eff[path[-1], crf.stop_idx]
        w = np.exp(s - logz)
        for t, y in enumerate(path):
            marg[t, y] += w
    onehot = np.zeros_like(marg)
    for t, y in enumerate(gold_ids):
        onehot[t, y] = 1.0
    assert np.allclose(em.grad, marg - onehot, atol=1e-9)


def test_empty_emissions_rejected(bio_crf):
    ts, crf = bio_crf
    with pytest.raises(C.CrfError):
        C.log_partition(np.zeros((0, len(ts))), crf)
