"""Cross-entropy training with Adam, dropout and L2; accuracy evaluation."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape
from .data import Dataset, Instance
from .encoders import EmbeddingTable
from .model import ModelConfig, Prepared, Reader

log = logging.getLogger(__name__)

MODEL_ALIASES = {"local": "local", "coreflstm": "coref-lstm", "coref-lstm": "coref-lstm",
                 "corefgrn": "coref-grn", "coref-grn": "coref-grn", "mhqa-gcn": "mhqa-gcn",
                 "mhqa-grn": "mhqa-grn"}


class Adam:
    """Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def adam_step(params: list[Parameter], state: Adam | None = None, lr: float = 0.001) -> Adam:
    """Apply one Adam update from the gradients stored on ``params``."""
    state = state or Adam(params, lr)
    state.step()
    return state


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    dropout_rate: float = 0.1
    l2_weight: float = 1e-8
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    model: str = "mhqa-grn"
    steps: int = 3
    patience: int = 5
    emb_dim: int = 300
    hidden: int = 300
    edges: str = "all"
    candidate: str = "sigmoid"
    self_loop: bool = False
    shared_steps: bool = True
    trainable_embeddings: bool = False
    embeddings_path: str | None = None
    checkpoint_dir: str | None = None
    tau_long: int = 200
    tau_window: int = 20
    neighbor_cap: int = 200

    def __post_init__(self):
        self.model = MODEL_ALIASES.get(self.model.lower(), self.model.lower())
        for name in ("learning_rate", "dropout_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch size must be positive")

    def model_config(self) -> ModelConfig:
        from .graph import EdgeType, GraphConfig
        return ModelConfig(
            kind=self.model, emb_dim=self.emb_dim, hidden=self.hidden, steps=self.steps,
            dropout=self.dropout_rate, edge_types=EdgeType.parse(self.edges),
            graph=GraphConfig(self.tau_long, self.tau_window, self.neighbor_cap),
            candidate=self.candidate, self_loop=self.self_loop, shared_steps=self.shared_steps,
            trainable_embeddings=self.trainable_embeddings,
        )


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    dev_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_accuracy: float = float("nan")
    best_checkpoint: str | None = None
    skipped: int = 0
    used: int = 0
    wall_clock: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class NonFiniteLoss(FloatingPointError):
    pass


def build_embeddings(datasets: Iterable[Dataset], config: TrainConfig, rng) -> EmbeddingTable:
    """Vocabulary over every token of the given datasets (fixed vectors, so
    covering dev/test tokens is the same as a pretrained table covering them)."""
    tokens = (t for ds in datasets for inst in ds for t in (*inst.question.tokens, *inst.passages.tokens))
    if config.embeddings_path:
        return EmbeddingTable.load(config.embeddings_path, tokens, rng, config.trainable_embeddings)
    return EmbeddingTable.random(tokens, config.emb_dim, rng, config.trainable_embeddings)


def make_reader(config: TrainConfig, datasets: Iterable[Dataset]) -> Reader:
    rng = np.random.default_rng(config.seed)
    table = build_embeddings(datasets, config, rng)
    return Reader(config.model_config(), table, rng)


def batches(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def instance_loss(reader: Reader, inst: Instance | Prepared, l2_weight: float = 0.0, rng=None):
    """Scalar loss of one instance (no dropout unless ``rng`` is given)."""
    p = inst if isinstance(inst, Prepared) else reader.prepare(inst)
    return reader.loss([p], rng, l2_weight)


def evaluate(reader: Reader, data: Dataset | list[Prepared], batch_size: int = 64) -> float:
    """Fraction of instances whose top candidate (lowest index on ties) is the answer."""
    prepared = data if isinstance(data, list) else [reader.prepare(i) for i in data]
    if not prepared:
        return float("nan")
    correct = 0
    for batch in batches(prepared, batch_size):
        for p, dist in zip(batch, reader.predict(batch)):
            if dist is not None and dist.argmax() == p.instance.answer_index:
                correct += 1
    return correct / len(prepared)


def predictions(reader: Reader, data: Dataset, batch_size: int = 64) -> list[dict]:
    """One record per instance: candidate probabilities and the argmax."""
    prepared = [reader.prepare(i) for i in data]
    out = []
    for batch in batches(prepared, batch_size):
        for p, dist in zip(batch, reader.predict(batch)):
            rec = {"id": p.instance.id, "candidates": list(p.instance.candidates)}
            if dist is None:
                rec.update(probs=None, argmax=None)
            else:
                rec.update(probs=[float(x) for x in dist.probs], argmax=dist.argmax())
            out.append(rec)
    return out


def train(train_set: Dataset, dev_set: Dataset | None, config: TrainConfig,
          reader: Reader | None = None) -> tuple[Reader, TrainReport]:
    """Train for ``config.epochs`` with early stopping on dev accuracy.

    Deterministic for a fixed seed: the seed drives initialization, epoch
    shuffles and dropout masks.  The returned reader holds the best-dev
    parameters.
    """
    start = time.perf_counter()
    datasets = [train_set] + ([dev_set] if dev_set is not None else [])
    reader = reader or make_reader(config, datasets)
    rng = np.random.default_rng([config.seed, 1])
    params = reader.parameters()
    opt = Adam(params.values(), config.learning_rate)
    report = TrainReport()

    prepared = [reader.prepare(i) for i in train_set]
    usable = [p for p in prepared if p.links and p.answer_linked]
    report.used, report.skipped = len(usable), len(prepared) - len(usable)
    if report.skipped:
        log.warning("skipping %d training instances whose answer has no linked mention", report.skipped)
    if not usable:
        raise ValueError("no trainable instances")
    dev = [reader.prepare(i) for i in dev_set] if dev_set is not None else None

    best = None
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        total, count = 0.0, 0
        for idx in batches(order.tolist(), config.batch_size):
            batch = [usable[i] for i in idx]
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss = reader.loss(batch, rng if config.dropout_rate > 0 else None, config.l2_weight)
            except ad.NonFiniteError as exc:
                ids = [p.instance.id for p in batch]
                raise NonFiniteLoss(f"non-finite value in epoch {epoch} on instances {ids}: {exc}") from None
            tape.backward(loss)
            opt.step()
            total += float(loss.data) * len(batch)
            count += len(batch)
        epoch_loss = total / count
        if not math.isfinite(epoch_loss):
            raise NonFiniteLoss(f"epoch {epoch} loss is {epoch_loss}")
        report.losses.append(epoch_loss)
        acc = evaluate(reader, dev) if dev else float("nan")
        report.dev_accuracy.append(acc)
        log.info(json.dumps({"epoch": epoch, "loss": epoch_loss, "dev_accuracy": acc}))

        improved = not dev or best is None or acc > report.best_dev_accuracy  # no dev: keep the last epoch
        if improved:
            report.best_epoch, report.best_dev_accuracy = epoch, acc
            best = {k: p.data.copy() for k, p in params.items()}
            stale = 0
            if config.checkpoint_dir:
                path = Path(config.checkpoint_dir) / "best.npz"
                path.parent.mkdir(parents=True, exist_ok=True)
                save_model(path, reader, config, {"epoch": epoch, "dev_accuracy": acc})
                report.best_checkpoint = str(path)
        else:
            stale += 1
            if dev and stale >= config.patience:
                break
    if dev and best is not None:
        reader.load_state(best)
    report.wall_clock = time.perf_counter() - start
    return reader, report


def save_model(path, reader: Reader, config: TrainConfig, meta: dict | None = None) -> None:
    """Checkpoint holding parameters, the embedding table and the training config."""
    tensors = dict(reader.parameters())
    tensors["embeddings"] = reader.embeddings.matrix
    vocab = sorted(reader.embeddings.vocabulary, key=reader.embeddings.vocabulary.get)
    ad.save_checkpoint(path, tensors, {**(meta or {}), "config": asdict(config), "vocabulary": vocab})


def load_model(path) -> tuple[Reader, TrainConfig, dict]:
    """Inverse of :func:`save_model`; returns ``(reader, config, meta)``."""
    tensors, meta = ad.load_checkpoint(path)
    try:
        config = TrainConfig(**meta["config"])
        vocab = {tok: i for i, tok in enumerate(meta["vocabulary"])}
        matrix = tensors["embeddings"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: not a model checkpoint ({exc})") from None
    table = EmbeddingTable(vocab, matrix, config.trainable_embeddings)
    reader = Reader(config.model_config(), table, np.random.default_rng(config.seed))
    reader.load_state(tensors)
    return reader, config, meta
