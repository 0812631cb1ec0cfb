"""Word embeddings, bidirectional chain LSTM and bidirectional DAG-LSTM.

All encoders run on a padded batch ``(B, L, d)`` with a ``(B, L)`` 0/1 mask;
padding must sit at the end of each row.  Single sequences ``(L, d)`` are
accepted and returned without the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import Instance

PAD, UNK = "<pad>", "<unk>"
GATES = ("i", "o", "f", "u")


class EmbeddingTable:
    """Token -> row lookup with a zero ``<pad>`` row 0 and an ``<unk>`` row 1."""

    def __init__(self, vocabulary: dict[str, int], matrix, trainable: bool = False):
        self.vocabulary = dict(vocabulary)
        self.matrix = Parameter(matrix, name="embeddings", requires_grad=trainable)
        if self.vocabulary.get(PAD) != 0 or self.vocabulary.get(UNK) != 1:
            raise ValueError("vocabulary must map <pad> to 0 and <unk> to 1")
        if len(self.vocabulary) != self.matrix.shape[0]:
            raise ValueError(f"{len(self.vocabulary)} vocabulary entries for {self.matrix.shape[0]} rows")

    @property
    def trainable(self) -> bool:
        return self.matrix.requires_grad

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def random(cls, tokens, dim: int = 300, rng=None, trainable: bool = False, scale: float = 0.1):
        """Seeded U(-scale, scale) rows for every distinct token, in first-seen order."""
        rng = rng if rng is not None else np.random.default_rng(0)
        vocab = {PAD: 0, UNK: 1}
        for tok in tokens:
            vocab.setdefault(tok, len(vocab))
        matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
        matrix[0] = 0.0
        return cls(vocab, matrix, trainable)

    @classmethod
    def load(cls, path, tokens=None, rng=None, trainable: bool = False):
        """Read ``token v1 ... vd`` lines (GloVe layout).

        Tokens in ``tokens`` missing from the file get random rows.
        """
        vectors: dict[str, np.ndarray] = {}
        with open(Path(path), encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip().split(" ")
                if len(parts) < 2:
                    continue
                try:
                    vectors[parts[0]] = np.array(parts[1:], dtype=np.float64)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad vector") from None
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"{path}: inconsistent vector sizes {sorted(dims)}")
        dim = dims.pop()
        table = cls.random(list(vectors) + list(tokens or ()), dim, rng, trainable)
        for tok, vec in vectors.items():
            table.matrix.data[table.vocabulary[tok]] = vec
        return table

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        unk = self.vocabulary[UNK]
        return np.array([self.vocabulary.get(t, unk) for t in tokens], dtype=np.int64)

    def lookup(self, ids) -> Tensor:
        """Rows for an integer array of any shape; result has a trailing ``dim`` axis."""
        ids = np.asarray(ids, dtype=np.int64)
        if not self.trainable:
            return Tensor(self.matrix.data[ids])
        flat = ad.take_rows(self.matrix, ids.reshape(-1))
        return ad.reshape(flat, ids.shape + (self.dim,))


def embed(tokens: Sequence[str], table: EmbeddingTable) -> Tensor:
    return table.lookup(table.ids(tokens))


@dataclass
class LstmParams:
    """Stacked gate weights, columns ordered (i, o, f, u).

    ``W`` is (d_in, 4H), ``U`` is (H, 4H), ``b`` is (4H,).
    """

    W: Parameter
    U: Parameter
    b: Parameter

    @classmethod
    def init(cls, d_in: int, hidden: int, rng, name: str = "lstm", scale: float | None = None):
        s_in = scale if scale is not None else 1.0 / np.sqrt(d_in)
        s_h = scale if scale is not None else 1.0 / np.sqrt(hidden)
        return cls(
            Parameter(rng.uniform(-s_in, s_in, (d_in, 4 * hidden)), f"{name}.W"),
            Parameter(rng.uniform(-s_h, s_h, (hidden, 4 * hidden)), f"{name}.U"),
            Parameter(np.zeros(4 * hidden), f"{name}.b"),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W_x, U_x, b_x)`` for gate ``x`` in {i, o, f, u}."""
        H = self.hidden
        k = GATES.index(name)
        cols = slice(k * H, (k + 1) * H)
        return self.W.data[:, cols], self.U.data[:, cols], self.b.data[cols]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.U, self.b]


@dataclass
class EncodedSequence:
    forward_states: Tensor
    backward_states: Tensor

    def __len__(self):
        return self.forward_states.shape[-2]


def _batched(x: Tensor, mask):
    single = x.ndim == 2
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    B, L, _ = x.shape
    if L == 0:
        raise ValueError("cannot encode an empty sequence")
    mask = np.ones((B, L)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(B, L)
    return x, mask, single


def _project(x: Tensor, params: LstmParams) -> list[Tensor]:
    B, L, d = x.shape
    if d != params.W.shape[0]:
        raise ad.ShapeError(f"LSTM input width {d} does not match weights {params.W.shape}")
    z = ad.reshape(ad.reshape(x, (B * L, d)) @ params.W + params.b, (B, L, params.W.shape[1]))
    return ad.unstack(z, axis=1)


def lstm_direction(x: Tensor, params: LstmParams, mask, reverse: bool = False,
                   candidate: str = "tanh") -> list[Tensor]:
    """Hidden states per position for one direction, zero initial state."""
    B, L, _ = x.shape
    H = params.hidden
    zx = _project(x, params)
    h = c = Tensor(np.zeros((B, H)))
    out: list[Tensor | None] = [None] * L
    for t in (range(L - 1, -1, -1) if reverse else range(L)):
        h, c = ad.lstm_cell(zx[t] + h @ params.U, c, candidate, mask[:, t:t + 1])
        out[t] = h
    return out


def bilstm_encode(embeddings: Tensor, fw: LstmParams, bw: LstmParams, mask=None,
                  candidate: str = "tanh") -> EncodedSequence:
    x, mask, single = _batched(embeddings, mask)
    f = ad.stack(lstm_direction(x, fw, mask, False, candidate), axis=1)
    b = ad.stack(lstm_direction(x, bw, mask, True, candidate), axis=1)
    if single:
        f, b = f[0], b[0]
    return EncodedSequence(f, b)


# -- DAG-LSTM ----------------------------------------------------------------

def coref_dag(inst: Instance) -> list[list[int]]:
    """Forward predecessor lists per token: the previous token, plus, for every
    mention, the end token of the previous mention on its chain."""
    n = len(inst.passages)
    preds = [[j - 1] if j else [] for j in range(n)]
    chains: dict[str, list] = {}
    for m in inst.mentions:
        chains.setdefault(m.chain_id, []).append(m)
    for ms in chains.values():
        ms = sorted(ms, key=lambda m: (m.span_start, m.span_end))
        for prev, cur in zip(ms, ms[1:]):
            if prev.span_end < cur.span_start and prev.span_end not in preds[cur.span_start]:
                preds[cur.span_start].append(prev.span_end)
    return preds


def reverse_dag(preds: Sequence[Sequence[int]]) -> list[list[int]]:
    """Predecessor lists of the edge-reversed DAG (used for the backward pass)."""
    succ: list[list[int]] = [[] for _ in preds]
    for j, ps in enumerate(preds):
        for i in ps:
            succ[i].append(j)
    return [sorted(s, reverse=True) for s in succ]


def check_dag(preds: Sequence[Sequence[int]], reverse: bool = False) -> None:
    for j, ps in enumerate(preds):
        for i in ps:
            if (i >= j) if not reverse else (i <= j):
                raise ValueError(f"DAG edge {i}->{j} violates token order"
                                 + (" (cycle)" if i == j else ""))


def dag_direction(x: Tensor, preds_batch: Sequence[Sequence[Sequence[int]]], params: LstmParams,
                  mask, reverse: bool = False, candidate: str = "sigmoid") -> list[Tensor]:
    """One DAG-LSTM direction.

    Gates i, o, u read the sum of predecessor states; each predecessor gets its
    own forget gate on its cell.
    """
    B, L, _ = x.shape
    H = params.hidden
    for preds in preds_batch:
        check_dag(preds, reverse)
    zx = _project(x, params)
    U_f = params.U[:, 2 * H:3 * H]
    act = ad.tanh if candidate == "tanh" else ad.sigmoid
    hs: list[Tensor | None] = [None] * L
    cs: list[Tensor | None] = [None] * L
    zeros = Tensor(np.zeros((B, H)))
    for j in (range(L - 1, -1, -1) if reverse else range(L)):
        slots = max((len(p[j]) for p in preds_batch if j < len(p)), default=0)
        h_pred, c_pred = [], []
        for k in range(slots):
            steps = np.zeros(B, dtype=np.int64)
            keep = np.zeros(B, dtype=bool)
            for b, p in enumerate(preds_batch):
                if j < len(p) and k < len(p[j]):
                    steps[b], keep[b] = p[j][k], True
            h_pred.append(ad.take_history(hs, steps, keep))
            c_pred.append(ad.take_history(cs, steps, keep))
        if h_pred:
            hsum = h_pred[0]
            for h in h_pred[1:]:
                hsum = hsum + h
            z = zx[j] + hsum @ params.U
        else:
            z = zx[j]
        i = ad.sigmoid(z[:, :H])
        o = ad.sigmoid(z[:, H:2 * H])
        u = act(z[:, 3 * H:])
        c = i * u
        zf = zx[j][:, 2 * H:3 * H]
        for h, cp in zip(h_pred, c_pred):
            c = c + ad.sigmoid(zf + h @ U_f) * cp
        h = o * ad.tanh(c)
        m = mask[:, j:j + 1]
        if not np.all(m == 1.0):
            c, h = c * m, h * m
        hs[j], cs[j] = h, c
    return [h if h is not None else zeros for h in hs]


def dag_lstm_encode(embeddings: Tensor, preds, fw: LstmParams, bw: LstmParams, mask=None,
                    candidate: str = "sigmoid") -> EncodedSequence:
    """Bidirectional DAG-LSTM; ``preds`` holds forward predecessor lists (one
    list per sequence when batched).  The backward pass reverses every edge."""
    x, mask, single = _batched(embeddings, mask)
    preds_batch = [preds] if single else list(preds)
    f = ad.stack(dag_direction(x, preds_batch, fw, mask, False, candidate), axis=1)
    rev = [reverse_dag(p) for p in preds_batch]
    b = ad.stack(dag_direction(x, rev, bw, mask, True, candidate), axis=1)
    if single:
        f, b = f[0], b[0]
    return EncodedSequence(f, b)
