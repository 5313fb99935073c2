"""Minimal float64 numeric core: reverse-mode autodiff over numpy arrays,
a bidirectional LSTM encoder, SGD with norm clipping, a finite-difference
gradient checker, and JSON checkpoints.

The tape (Tensor) path is used for training; a mirrored pure-numpy forward
path (`encode`, `lstm_forward`) serves the many forward-only evaluations in
saliency scoring. Both read the same ParamStore tensors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

# special token ids, fixed across every vocabulary
PAD, UNK, MASK_ENT, MASK_TRG = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<ent-mask>", "<trg-mask>")


class NeuralError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Autodiff tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array node on a dynamically built tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        # tuple of (parent_tensor, vjp) where vjp maps this node's gradient
        # to the parent's gradient contribution
        self._parents = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def backward(self) -> None:
        if self.data.size != 1:
            raise NeuralError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += contrib

    # operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])


def constant(data) -> Tensor:
    return Tensor(data)


def _binary(a: Tensor | float, b: Tensor | float) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = Tensor(a)
    if not isinstance(b, Tensor):
        b = Tensor(b)
    return a, b


def _child(data: np.ndarray, parents: list[tuple[Tensor, Callable]]) -> Tensor:
    live = tuple((p, f) for p, f in parents if p.requires_grad or p._parents)
    return Tensor(data, requires_grad=any(p.requires_grad or p._parents for p, _ in parents), parents=live)


def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _child(
        a.data + b.data,
        [
            (a, lambda g, sh=a.data.shape: _unbroadcast(g, sh)),
            (b, lambda g, sh=b.data.shape: _unbroadcast(g, sh)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    return _child(
        a.data * b.data,
        [
            (a, lambda g, od=b.data, sh=a.data.shape: _unbroadcast(g * od, sh)),
            (b, lambda g, od=a.data, sh=b.data.shape: _unbroadcast(g * od, sh)),
        ],
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _child(
        a.data @ b.data,
        [
            (a, lambda g, bd=b.data: g @ bd.T),
            (b, lambda g, ad=a.data: ad.T @ g),
        ],
    )


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    return _child(out, [(x, lambda g, o=out: g * o * (1.0 - o))])


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _child(out, [(x, lambda g, o=out: g * (1.0 - o * o))])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        width = t.data.shape[axis]
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(offset, offset + width)
        parents.append((t, lambda g, key=tuple(sl): g[key]))
        offset += width
    return _child(data, parents)


def tslice(x: Tensor, key) -> Tensor:
    def vjp(g, key=key, shape=x.data.shape):
        full = np.zeros(shape)
        full[key] = g
        return full

    return _child(x.data[key], [(x, vjp)])


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _child(x.data.reshape(shape), [(x, lambda g, sh=x.data.shape: g.reshape(sh))])


def rows(x: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather rows (embedding lookup); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g, idx=idx, shape=x.data.shape):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return full

    return _child(x.data[idx], [(x, vjp)])


def take_pairs(x: Tensor, rr: Sequence[int], cc: Sequence[int]) -> Tensor:
    """x[rr[i], cc[i]] as a 1-D tensor."""
    rr = np.asarray(rr, dtype=np.int64)
    cc = np.asarray(cc, dtype=np.int64)

    def vjp(g, rr=rr, cc=cc, shape=x.data.shape):
        full = np.zeros(shape)
        np.add.at(full, (rr, cc), g)
        return full

    return _child(x.data[rr, cc], [(x, vjp)])


def logsumexp(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Numerically stable log-sum-exp; tolerates -inf entries (they get
    zero weight) and all--inf slices (result -inf, zero gradient)."""
    m = np.max(x.data, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x.data - m_safe)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = m_safe + np.log(s)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g, e=e, s=s, axis=axis, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axis=axis)
        w = e / np.where(s > 0.0, s, 1.0)
        return g * w

    return _child(out, [(x, vjp)])


def tsum(x: Tensor) -> Tensor:
    return _child(np.asarray(x.data.sum()), [(x, lambda g, sh=x.data.shape: np.broadcast_to(g, sh).copy())])


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    return mul(tsum(x), 1.0 / n)


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    return add(x, mul(logsumexp(x, axis=1, keepdims=True), -1.0))


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood over rows of ``logits``."""
    n = logits.data.shape[0]
    logp = log_softmax(logits)
    picked = take_pairs(logp, np.arange(n), targets)
    return mul(tsum(picked), -1.0 / n)


# ---------------------------------------------------------------------------
# Parameter store


class ParamStore:
    """Named float64 parameter tensors with a seeded initializer."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.tensors: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], init: str = "xavier") -> Tensor:
        if name in self.tensors:
            raise NeuralError(f"parameter {name!r} already exists")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "xavier":
            fan_in = shape[0] if len(shape) > 1 else shape[-1]
            fan_out = shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            data = self._rng.uniform(-limit, limit, size=shape)
        elif init == "embedding":
            # unit-variance rows; rows are looked up, not summed, so
            # fan-in scaling would shrink the signal with vocabulary size
            data = self._rng.normal(0.0, 1.0, size=shape)
        else:
            raise NeuralError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.tensors.items()
        }

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, data in state.items():
            if name not in self.tensors:
                raise NeuralError(f"unknown parameter {name!r} in state dict")
            if self.tensors[name].data.shape != data.shape:
                raise NeuralError(f"shape mismatch loading {name!r}")
            self.tensors[name].data = np.asarray(data, dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# Vocabulary


class Vocab:
    """Token <-> id map with the four reserved special ids up front."""

    def __init__(self, words: Iterable[str]):
        uniq = sorted(set(words) - set(SPECIALS))
        self.itos: tuple[str, ...] = SPECIALS + tuple(uniq)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_sentences(cls, sentences) -> "Vocab":
        return cls(tok for s in sentences for tok in s.tokens)

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def to_list(self) -> list[str]:
        return list(self.itos[len(SPECIALS):])

    @classmethod
    def from_list(cls, words: list[str]) -> "Vocab":
        return cls(words)


# ---------------------------------------------------------------------------
# Encoder


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    embed_dim: int = 50
    hidden_dim: int = 200  # per direction
    tagset_size: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size <= MASK_TRG:
            raise NeuralError("vocab_size must exceed the special token ids")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise NeuralError("embed_dim and hidden_dim must be >= 1")


def init_lstm(store: ParamStore, prefix: str, in_dim: int, hidden: int) -> None:
    store.add(f"{prefix}.Wx", (in_dim, 4 * hidden))
    store.add(f"{prefix}.Wh", (hidden, 4 * hidden))
    store.add(f"{prefix}.b", (1, 4 * hidden), init="zeros")


def init_encoder(store: ParamStore, config: EncoderConfig) -> None:
    store.add("embed", (config.vocab_size, config.embed_dim), init="embedding")
    init_lstm(store, "enc.fwd", config.embed_dim, config.hidden_dim)
    init_lstm(store, "enc.bwd", config.embed_dim, config.hidden_dim)


def _check_ids(ids: Sequence[int], vocab_size: int) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise NeuralError("token id sequence must be non-empty and 1-D")
    if arr.min() < 0 or arr.max() >= vocab_size:
        raise NeuralError(f"token id out of range [0, {vocab_size})")
    return arr


def lstm_states_t(
    store: ParamStore, prefix: str, x: Tensor, reverse: bool = False
) -> list[Tensor]:
    """Run one LSTM direction on the tape; returns per-position [1,H] states."""
    Wx, Wh, b = store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"]
    n = x.data.shape[0]
    hidden = Wh.data.shape[0]
    xw = matmul(x, Wx)  # [n, 4H]
    h = constant(np.zeros((1, hidden)))
    c = constant(np.zeros((1, hidden)))
    outs: list[Tensor] = [None] * n  # type: ignore[list-item]
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        gates = add(add(xw[t : t + 1], matmul(h, Wh)), b)
        i = sigmoid(gates[:, :hidden])
        f = sigmoid(gates[:, hidden : 2 * hidden])
        u = tanh(gates[:, 2 * hidden : 3 * hidden])
        o = sigmoid(gates[:, 3 * hidden : 4 * hidden])
        c = add(mul(f, c), mul(i, u))
        h = mul(o, tanh(c))
        outs[t] = h
    return outs


def encode_tensor(store: ParamStore, config: EncoderConfig, ids: Sequence[int]) -> Tensor:
    """Tape version of the bidirectional encoder: [n, 2*hidden]."""
    arr = _check_ids(ids, config.vocab_size)
    x = rows(store["embed"], arr)
    fwd = lstm_states_t(store, "enc.fwd", x, reverse=False)
    bwd = lstm_states_t(store, "enc.bwd", x, reverse=True)
    return concat([concat([fwd[t], bwd[t]], axis=1) for t in range(len(arr))], axis=0)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(
    store: ParamStore, prefix: str, x: np.ndarray, reverse: bool = False
) -> np.ndarray:
    """Pure-numpy forward pass of one LSTM direction: [n, H]."""
    Wx = store[f"{prefix}.Wx"].data
    Wh = store[f"{prefix}.Wh"].data
    b = store[f"{prefix}.b"].data
    n = x.shape[0]
    hidden = Wh.shape[0]
    xw = x @ Wx
    h = np.zeros((1, hidden))
    c = np.zeros((1, hidden))
    out = np.empty((n, hidden))
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        gates = xw[t : t + 1] + h @ Wh + b
        i = _sigmoid_np(gates[:, :hidden])
        f = _sigmoid_np(gates[:, hidden : 2 * hidden])
        u = np.tanh(gates[:, 2 * hidden : 3 * hidden])
        o = _sigmoid_np(gates[:, 3 * hidden : 4 * hidden])
        c = f * c + i * u
        h = o * np.tanh(c)
        out[t] = h[0]
    return out


def encode(store: ParamStore, config: EncoderConfig, ids: Sequence[int]) -> np.ndarray:
    """Bidirectional encoder, forward only: per-token vectors [n, 2*hidden]."""
    arr = _check_ids(ids, config.vocab_size)
    x = store["embed"].data[arr]
    fwd = lstm_forward(store, "enc.fwd", x, reverse=False)
    bwd = lstm_forward(store, "enc.bwd", x, reverse=True)
    return np.concatenate([fwd, bwd], axis=1)


# ---------------------------------------------------------------------------
# Optimizer


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}


def sgd_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    clip: float = 5.0,
) -> None:
    """In-place update theta <- theta - lr * g after global norm clipping."""
    for name, g in grads.items():
        if name not in store.tensors:
            raise NeuralError(f"gradient for unknown parameter {name!r}")
        if g.shape != store[name].data.shape:
            raise NeuralError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {store[name].data.shape}"
            )
    clipped = clip_gradients(grads, clip) if clip is not None else grads
    for name, g in clipped.items():
        store[name].data = store[name].data - lr * g
    if not store.all_finite():
        raise NeuralError("non-finite parameter after update step")


# ---------------------------------------------------------------------------
# Gradient check


def grad_check(
    loss_fn: Callable[[], Tensor],
    store: ParamStore,
    eps: float = 1e-4,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Compare the tape gradient of ``loss_fn`` against central finite
    differences on every coordinate (or a seeded subsample of at least
    ``max_coords``). Returns the maximum relative error."""
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NeuralError("loss is not finite")
    store.zero_grad()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.tensors.items()}

    coords: list[tuple[str, int]] = []
    for name in store.names():
        coords.extend((name, i) for i in range(store[name].data.size))
    if len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst = 0.0
    for name, i in coords:
        flat = store[name].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn().data)
        flat[i] = orig - eps
        down = float(loss_fn().data)
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NeuralError(f"non-finite loss while perturbing {name}[{i}]")
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[name].reshape(-1)[i])
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_FORMAT = "autotrig-ckpt-v1"


def save_checkpoint(path: str | Path, kind: str, store: ParamStore, meta: dict) -> None:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "seed": store.seed,
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in store.tensors.items()
        },
        "meta": meta,
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[str, ParamStore, dict]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise NeuralError(f"{path}: unsupported checkpoint format {obj.get('format')!r}")
    store = ParamStore(obj["seed"])
    for name in sorted(obj["params"]):
        spec = obj["params"][name]
        data = np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        t = Tensor(data, requires_grad=True)
        store.tensors[name] = t
    return obj["kind"], store, obj["meta"]
