"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    with Tape() as tape:
        loss = total(tanh(x @ W))
    tape.backward(loss)      # W.grad now holds d loss / d W

Operations executed while a tape is active are recorded when at least one
input requires a gradient.  Outside a tape everything runs eagerly with no
bookkeeping, which is what evaluation uses.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "Tape", "ShapeError", "NonFiniteError", "TapeError",
    "backward", "grad_check", "save_checkpoint", "load_checkpoint",
    "matmul", "add", "sub", "mul", "neg", "concat", "stack", "getitem", "reshape",
    "sigmoid", "tanh", "exp", "log", "softmax", "segment_softmax", "index_sum",
    "take_rows", "take_history", "unstack", "lstm_cell", "total", "affine", "dropout", "square_norm",
]

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """A float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Parameter(Tensor):
    """A learnable leaf tensor.  ``grad`` always matches ``data`` in shape."""

    __slots__ = ()

    def __init__(self, data, name: str = "", requires_grad: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)


class _Record:
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out, inputs, backward_fn, op):
        self.out = out  # a Tensor, or a tuple of Tensors for multi-output ops
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


_active: list["Tape"] = []


class Tape:
    """Ordered record of executed operations.

    Only one tape records at a time (the innermost ``with`` block).  A tape
    can be consumed by exactly one :meth:`backward` call.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self):
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            if isinstance(rec.out, tuple):
                gs = [grads.pop(id(o), None) for o in rec.out]
                if all(g is None for g in gs):
                    continue
                in_grads = rec.backward_fn(*[np.zeros_like(o.data) if g is None else g
                                             for o, g in zip(rec.out, gs)])
            else:
                g = grads.pop(id(rec.out), None)
                if g is None:
                    continue
                in_grads = rec.backward_fn(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._tape is None:
                    # leaf: parameter or tracked constant
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += gi
                else:
                    key = id(t)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self.records.clear()


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every parameter that ``loss`` depends on."""
    if loss._tape is None:
        raise TapeError("backward called on a tensor that was not recorded on a tape")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor(data)
    if _active and any(t.requires_grad for t in inputs):
        tape = _active[-1]
        out.requires_grad = True
        out._tape = tape
        tape.records.append(_Record(out, tuple(inputs), backward_fn, op))
    return out


def _finish_many(op: str, datas: Sequence[np.ndarray], inputs: Sequence[Tensor],
                 backward_fn: Callable) -> list[Tensor]:
    for d in datas:
        if not np.all(np.isfinite(d)):
            raise NonFiniteError(f"{op} produced non-finite values")
    outs = [Tensor(d) for d in datas]
    if _active and any(t.requires_grad for t in inputs):
        tape = _active[-1]
        for o in outs:
            o.requires_grad = True
            o._tape = tape
        tape.records.append(_Record(tuple(outs), tuple(inputs), backward_fn, op))
    return outs


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _finish("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _finish("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _finish("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _finish("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _finish("matmul", ad @ bd, (a, b), bw)


def affine(W, x, b) -> Tensor:
    """``x @ W + b`` for a batch of row vectors (or ``W @ x + b`` when W is a matrix and x a vector)."""
    W, x, b = _as_tensor(W), _as_tensor(x), _as_tensor(b)
    if x.ndim == 1 and W.ndim == 2 and W.shape[1] == x.shape[0] and W.shape[0] != x.shape[0]:
        return add(matmul(W, x), b)
    return add(matmul(x, W), b)


def total(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _finish("sum", np.asarray(a.data.sum(axis=axis)), (a,), bw)


def square_norm(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _finish("square_norm", np.asarray(np.sum(ad * ad)), (a,), lambda g: (2.0 * g * ad,))


# -- structure -------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            i != ax and p != q for i, (p, q) in enumerate(zip(t.shape, tensors[0].shape))
        ):
            raise ShapeError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _finish("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: incompatible shapes {tensors[0].shape} and {t.shape}")
    n = len(tensors)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _finish("stack", np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def unstack(a, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into a list of tensors with that axis removed."""
    a = _as_tensor(a)
    datas = [np.take(a.data, i, axis=axis) for i in range(a.shape[axis])]
    return _finish_many("unstack", datas, (a,), lambda *gs: (np.stack(gs, axis=axis),))


def getitem(a, index) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, index, g) if _fancy(index) else full.__setitem__(index, g)
        return (full,)

    return _finish("getitem", np.array(a.data[index]), (a,), bw)


def _fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _finish("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def take_rows(a, idx) -> Tensor:
    """Rows ``a[idx]`` of a matrix; repeated indices accumulate in backward."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _finish("take_rows", a.data[idx], (a,), bw)


def take_history(history: Sequence[Tensor], steps, mask=None) -> Tensor:
    """Row b of the result is ``history[steps[b]][b]`` (zero where ``mask`` is 0).

    ``history`` is a list of (B, H) states indexed by time step.
    """
    steps = np.asarray(steps, dtype=np.int64)
    rows = np.arange(len(steps))
    keep = np.ones(len(steps), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    width = next(h.shape[1] for h in history if h is not None)
    out = np.zeros((len(steps), width))
    used = sorted(set(steps[keep].tolist()))
    for s in used:
        sel = keep & (steps == s)
        out[sel] = history[s].data[rows[sel]]
    inputs = [history[s] for s in used]

    def bw(g):
        grads = []
        for s in used:
            gs = np.zeros((len(steps), width))
            sel = keep & (steps == s)
            gs[sel] = g[sel]
            grads.append(gs)
        return grads

    return _finish("take_history", out, inputs, bw)


def index_sum(a, groups, num_groups: int) -> Tensor:
    """Sum entries (or rows) of ``a`` that share a group id."""
    a = _as_tensor(a)
    groups = np.asarray(groups, dtype=np.int64)
    if len(groups) != a.shape[0]:
        raise ShapeError(f"index_sum: {a.shape} values vs {groups.shape} group ids")
    out = np.zeros((num_groups,) + a.shape[1:])
    np.add.at(out, groups, a.data)
    return _finish("index_sum", out, (a,), lambda g: (g[groups],))


# -- nonlinearities --------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    y = _sigmoid(a.data)
    return _finish("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    return _finish("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _finish("exp", y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(ad)
    return _finish("log", y, (a,), lambda g: (g / ad,))


def softmax(a) -> Tensor:
    """Softmax over a vector, shifted by its max."""
    a = _as_tensor(a)
    if a.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {a.shape}")
    z = np.exp(a.data - a.data.max())
    p = z / z.sum()
    return _finish("softmax", p, (a,), lambda g: (p * (g - np.dot(g, p)),))


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Independent softmax within each segment of a vector."""
    a = _as_tensor(a)
    segments = np.asarray(segments, dtype=np.int64)
    if a.ndim != 1 or len(segments) != len(a.data):
        raise ShapeError(f"segment_softmax: scores {a.shape} vs segments {segments.shape}")
    x = a.data
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, segments, x)
    z = np.exp(x - peak[segments])
    norm = np.bincount(segments, weights=z, minlength=num_segments)
    p = z / norm[segments]

    def bw(g):
        dot = np.bincount(segments, weights=g * p, minlength=num_segments)
        return (p * (g - dot[segments]),)

    return _finish("segment_softmax", p, (a,), bw)


def lstm_cell(z, c_prev, candidate: str = "tanh", mask=None) -> tuple[Tensor, Tensor]:
    """Fused LSTM update from gate pre-activations.

    ``z`` holds the pre-activations of gates (input, output, forget, candidate)
    side by side, shape (B, 4H).  Returns ``(h, c)`` with
    ``c = f*c_prev + i*u`` and ``h = o*tanh(c)``; ``u`` uses ``candidate``
    ("tanh" or "sigmoid").  A (B, 1) ``mask`` zeroes rows of both outputs.
    """
    z, c_prev = _as_tensor(z), _as_tensor(c_prev)
    H = c_prev.shape[-1]
    if z.shape[-1] != 4 * H or z.shape[:-1] != c_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: gate shape {z.shape} vs cell shape {c_prev.shape}")
    zd = z.data
    i = _sigmoid(zd[..., :H])
    o = _sigmoid(zd[..., H:2 * H])
    f = _sigmoid(zd[..., 2 * H:3 * H])
    if candidate == "tanh":
        u = np.tanh(zd[..., 3 * H:])
        du = 1.0 - u * u
    elif candidate == "sigmoid":
        u = _sigmoid(zd[..., 3 * H:])
        du = u * (1.0 - u)
    else:
        raise ValueError(f"unknown candidate activation {candidate!r}")
    cp = c_prev.data
    c = f * cp + i * u
    tc = np.tanh(c)
    h = o * tc
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        c = c * mask
        h = h * mask

    def bw(gh, gc):
        if mask is not None:
            gh = gh * mask
            gc = gc * mask
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([gc * u * i * (1.0 - i), gh * tc * o * (1.0 - o),
                             gc * cp * f * (1.0 - f), gc * i * du], axis=-1)
        return dz, gc * f

    h_t, c_t = _finish_many("lstm_cell", (h, c), (z, c_prev), bw)
    return h_t, c_t


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout.  ``rng=None`` or ``rate=0`` is the identity."""
    a = _as_tensor(a)
    if rate <= 0.0 or rng is None:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _finish("dropout", a.data * mask, (a,), lambda g: (g * mask,))


# -- gradient checking -----------------------------------------------------

def grad_check(fn: Callable[[], Tensor], params: Iterable[Parameter], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               points: int = 3) -> float:
    """Max relative error between tape gradients and central differences.

    The error of one coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``points`` selects the 3-point or 5-point central stencil; the 5-point one
    allows a larger ``eps`` (less roundoff) for deep compositions whose
    gradients include entries far below 1.  ``fn`` is re-evaluated for every
    perturbed coordinate and must be deterministic.  ``max_coords`` limits
    the coordinates checked per parameter (sampled with ``rng``).
    """
    if points not in (3, 5):
        raise ValueError(f"points must be 3 or 5, got {points}")
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    base = float(loss.data)
    tape.backward(loss)
    again = float(fn().data)
    if again != base:
        raise ValueError(f"function is not deterministic: {base!r} then {again!r}")

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            old = flat[i]

            def at(delta):
                flat[i] = old + delta
                return float(fn().data)

            if points == 3:
                numeric = (at(eps) - at(-eps)) / (2 * eps)
            else:
                numeric = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps)
            flat[i] = old
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params: dict[str, Parameter], meta: dict | None = None) -> None:
    """Write named tensors as an ``.npz`` container with a versioned JSON header."""
    header = {"format": "mhqa-checkpoint", "version": CHECKPOINT_VERSION,
              "tensors": {k: list(p.shape) for k, p in params.items()}, "meta": meta or {}}
    arrays = {f"t/{k}": np.array(p.data) for k, p in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format") != "mhqa-checkpoint":
            raise ValueError(f"{path}: not a checkpoint file")
        if header["version"] > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {header['version']} is newer than supported")
        tensors = {k: z[f"t/{k}"] for k in header["tensors"]}
    for k, shape in header["tensors"].items():
        if list(tensors[k].shape) != shape:
            raise ValueError(f"{path}: tensor {k} has shape {tensors[k].shape}, header says {shape}")
    return tensors, header["meta"]
