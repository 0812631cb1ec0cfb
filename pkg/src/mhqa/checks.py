"""Finite-difference gradient suite over the primitives and every reader variant."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import Dataset
from .synth import toy_instance

TOLERANCE = 1e-4
VARIANTS = ("local", "coref-lstm", "coref-grn", "mhqa-gcn", "mhqa-grn")

_PRIMITIVES: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "matmul": lambda a, b: a @ ad.reshape(b, (4, 3)),
    "sigmoid": lambda a, b: ad.sigmoid(a) * b,
    "tanh": lambda a, b: ad.tanh(a) * b,
    "log-exp": lambda a, b: ad.log(ad.exp(a) + 1.0) * b,
    "softmax": lambda a, b: ad.softmax(ad.reshape(a, (12,))) * ad.reshape(b, (12,)),
    "segment_softmax": lambda a, b: ad.segment_softmax(ad.reshape(a, (12,)), [0, 1, 1] * 4, 2)
    * ad.reshape(b, (12,)),
    "index_sum": lambda a, b: ad.index_sum(a, [1, 0, 1], 2) * b[:2],
    "concat": lambda a, b: ad.concat([a, b], axis=1),
    "lstm_cell": lambda a, b: ad.lstm_cell(ad.concat([a, b], axis=1)[:, :8], a[:, :2])[0],
}


def primitive_checks(seed: int = 0) -> Iterator[tuple[str, float]]:
    rng = np.random.default_rng(seed)
    for name, f in _PRIMITIVES.items():
        a = Parameter(rng.normal(size=(3, 4)), "a")
        b = Parameter(rng.normal(size=(3, 4)), "b")
        yield f"primitive {name}", ad.grad_check(lambda: ad.total(ad.tanh(f(a, b))), [a, b])


def toy_dataset(n: int = 5, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(tuple(toy_instance(rng) for _ in range(n)))


def variant_checks(seed: int = 0, instances: int = 5, variants=VARIANTS,
                   steps: int = 3) -> Iterator[tuple[str, float]]:
    """Check ``-log Pr(answer)`` of each variant over every parameter coordinate.

    Parameters are drawn from N(0, 0.5^2) rather than the small training
    initialization so that the check exercises non-trivial gates.  The 5-point
    stencil with step 1e-3 keeps roundoff below the tolerance for gradient
    entries near the 1e-8 floor.
    """
    from .training import TrainConfig, make_reader

    data = toy_dataset(instances, seed)
    for kind in variants:
        cfg = TrainConfig(model=kind, emb_dim=3, hidden=2, steps=steps, seed=seed, tau_long=4,
                          tau_window=3, dropout_rate=0.0)
        reader = make_reader(cfg, [data])
        rng = np.random.default_rng([seed, 2])
        params = list(reader.parameters().values())
        for p in params:
            p.data[...] = rng.normal(0.0, 0.5, p.shape)
        worst = 0.0
        for inst in data:
            prepared = [reader.prepare(inst)]
            err = ad.grad_check(lambda: reader.loss(prepared), params, eps=1e-3, points=5)
            worst = max(worst, err)
        yield f"model {kind}", worst


def gradient_suite(seed: int = 0, instances: int = 5) -> Iterator[tuple[str, float]]:
    yield from primitive_checks(seed)
    yield from variant_checks(seed, instances)
