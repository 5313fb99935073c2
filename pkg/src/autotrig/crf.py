"""Linear-chain CRF: transition parameters with virtual START/STOP states,
exact log-likelihood via the log-space forward recursion, and Viterbi
decoding.

BIO-invalid transitions are masked to -inf at construction, so decoded
sequences are valid by construction rather than by post-hoc repair.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from autotrig.corpus import Tagset, ValidationError, validate_bio
from autotrig.neural import (
    ParamStore,
    Tensor,
    add,
    constant,
    logsumexp,
    mul,
    reshape,
    take_pairs,
    tsum,
)

NEG_INF = float("-inf")


class CrfError(ValueError):
    pass


class CrfParams:
    """Transition matrix over ``labels`` plus virtual START/STOP rows.

    ``trans`` is the learnable [K+2, K+2] tensor; ``mask`` is a constant
    matrix of 0 / -inf added on top of it. Entries into START and out of
    STOP are always masked.
    """

    def __init__(self, labels: Sequence[str], trans: Tensor, mask: np.ndarray):
        self.labels = tuple(labels)
        k = len(self.labels)
        if trans.data.shape != (k + 2, k + 2) or mask.shape != (k + 2, k + 2):
            raise CrfError(
                f"transition shape must be ({k + 2}, {k + 2}) for {k} labels"
            )
        self.trans = trans
        self.mask = mask
        self.start_idx = k
        self.stop_idx = k + 1
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def n_tags(self) -> int:
        return len(self.labels)

    def effective(self) -> np.ndarray:
        """Transition scores with masking applied (-inf on invalid moves)."""
        return self.trans.data + self.mask

    def tag_index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise CrfError(f"label {label!r} not in CRF tagset {self.labels}")

    @classmethod
    def base_mask(cls, k: int) -> np.ndarray:
        mask = np.zeros((k + 2, k + 2))
        mask[:, k] = NEG_INF  # nothing enters START
        mask[k + 1, :] = NEG_INF  # nothing leaves STOP
        mask[k, k + 1] = NEG_INF  # empty path START->STOP
        return mask

    @classmethod
    def for_tagset(
        cls, tagset: Tagset, store: ParamStore, name: str = "crf.trans"
    ) -> "CrfParams":
        """BIO-masked CRF whose transition tensor lives in ``store``."""
        k = len(tagset)
        mask = cls.base_mask(k)
        for i, prev in enumerate(tagset.labels):
            for j, nxt in enumerate(tagset.labels):
                if not tagset.allowed(prev, nxt):
                    mask[i, j] = NEG_INF
        for j, nxt in enumerate(tagset.labels):
            if not tagset.allowed(None, nxt):  # from START
                mask[k, j] = NEG_INF
        trans = store[name] if name in store else store.add(name, (k + 2, k + 2), init="zeros")
        return cls(tagset.labels, trans, mask)

    @classmethod
    def unmasked(
        cls, labels: Sequence[str], trans_data: np.ndarray | None = None
    ) -> "CrfParams":
        """Toy CRF with every label-to-label move allowed (START/STOP
        structure still enforced). Used by enumeration oracles."""
        k = len(labels)
        if trans_data is None:
            trans_data = np.zeros((k + 2, k + 2))
        return cls(labels, Tensor(np.asarray(trans_data, dtype=np.float64), requires_grad=True), cls.base_mask(k))


def _check_emissions(emissions: np.ndarray, crf: CrfParams) -> np.ndarray:
    emissions = np.asarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise CrfError("emissions must be a non-empty [n, K] matrix")
    if emissions.shape[1] != crf.n_tags:
        raise CrfError(
            f"emissions have {emissions.shape[1]} columns but CRF has "
            f"{crf.n_tags} tags"
        )
    if not np.isfinite(emissions).all():
        raise CrfError("emissions contain non-finite values")
    return emissions


def log_partition_tensor(emissions: Tensor, crf: CrfParams) -> Tensor:
    """log sum over all tag paths of exp(path score), on the tape."""
    n, k = emissions.data.shape
    eff = add(crf.trans, constant(crf.mask))
    inner = eff[:k, :k]
    start = eff[crf.start_idx : crf.start_idx + 1, :k]  # [1, K]
    stop = reshape(eff[:k, crf.stop_idx : crf.stop_idx + 1], (1, k))
    alpha = add(start, emissions[0:1])
    for t in range(1, n):
        scores = add(reshape(alpha, (k, 1)), inner)  # [K, K]: prev x next
        alpha = add(logsumexp(scores, axis=0, keepdims=True), emissions[t : t + 1])
    return tsum(logsumexp(add(alpha, stop), axis=1))


def path_score_tensor(emissions: Tensor, tag_ids: Sequence[int], crf: CrfParams) -> Tensor:
    n = emissions.data.shape[0]
    if len(tag_ids) != n:
        raise CrfError(f"gold path length {len(tag_ids)} != {n} tokens")
    eff = add(crf.trans, constant(crf.mask))
    rr = [crf.start_idx] + list(tag_ids)
    cc = list(tag_ids) + [crf.stop_idx]
    if not np.isfinite(crf.mask[rr, cc]).all():
        raise CrfError("gold path crosses a masked transition")
    trans_part = tsum(take_pairs(eff, rr, cc))
    emit_part = tsum(take_pairs(emissions, np.arange(n), list(tag_ids)))
    return add(trans_part, emit_part)


def nll_tensor(emissions: Tensor, tag_ids: Sequence[int], crf: CrfParams) -> Tensor:
    """Negative log-likelihood of the gold path; differentiable wrt
    emissions and transitions."""
    return add(
        log_partition_tensor(emissions, crf),
        mul(path_score_tensor(emissions, tag_ids, crf), -1.0),
    )


# --- forward-only conveniences ---------------------------------------------


def log_partition(emissions: np.ndarray, crf: CrfParams) -> float:
    emissions = _check_emissions(emissions, crf)
    return float(log_partition_tensor(constant(emissions), crf).data)


def path_score(emissions: np.ndarray, tags: Sequence[str], crf: CrfParams) -> float:
    emissions = _check_emissions(emissions, crf)
    ids = [crf.tag_index(t) for t in tags]
    return float(path_score_tensor(constant(emissions), ids, crf).data)


def nll(emissions: np.ndarray, gold: Sequence[str], crf: CrfParams) -> float:
    """NLL of a gold label sequence (>= 0 up to rounding)."""
    emissions = _check_emissions(emissions, crf)
    validate_bio_if_bio(gold, crf)
    ids = [crf.tag_index(t) for t in gold]
    return float(nll_tensor(constant(emissions), ids, crf).data)


def validate_bio_if_bio(tags: Sequence[str], crf: CrfParams) -> None:
    # toy CRFs use arbitrary labels; only BIO-shaped tagsets get validated
    if all(t == "O" or (len(t) > 2 and t[1] == "-") for t in crf.labels):
        try:
            validate_bio(tags)
        except ValidationError as exc:
            raise CrfError(f"gold tags are not valid BIO: {exc}") from exc


def viterbi(emissions: np.ndarray, crf: CrfParams) -> list[str]:
    """Argmax-scoring valid path. Ties break toward the lowest tag index at
    every backpointer (and at the final state)."""
    emissions = _check_emissions(emissions, crf)
    n, k = emissions.shape
    eff = crf.effective()
    inner = eff[:k, :k]
    start = eff[crf.start_idx, :k]
    stop = eff[:k, crf.stop_idx]

    delta = start + emissions[0]
    bps = np.zeros((n, k), dtype=np.int64)
    for t in range(1, n):
        scores = delta[:, None] + inner  # [prev, next]
        bps[t] = np.argmax(scores, axis=0)  # first max = lowest index
        delta = np.max(scores, axis=0) + emissions[t]
    last = int(np.argmax(delta + stop))
    path = [last]
    for t in range(n - 1, 0, -1):
        last = int(bps[t, last])
        path.append(last)
    path.reverse()
    return [crf.labels[i] for i in path]
