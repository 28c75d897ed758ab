#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_layers import BiLstmEncoder, Conv1dEncoder, DenseLayer, DropoutSpec, EmbeddingLayer, LstmCell, \
    LstmEncoder, Params
from mmrisk.mm_models import Batch, ModelGraph, ScenarioTag, backward_batch, build_model, forward_batch
from mmrisk.mm_numeric import SeededRng, bce_loss_from_logits, grad_check

GRADCHECK_TOLERANCE = 1e-4
MICRO_VOCAB = 10
MICRO_CLINICAL = 2
MICRO_BATCH = 2
MICRO_STEPS = 5


@dataclass
class GradCheckResult:
    name: str
    errors: Dict[str, float] = field(default_factory=OrderedDict)

    def __repr__(self):
        return f"GradCheckResult(name={self.name}, max_error={self.max_error:.3e})"

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tolerance: float = GRADCHECK_TOLERANCE) -> bool:
        return self.max_error <= tolerance


def _check_block(objective: Callable[[], float], target: np.ndarray, analytic: np.ndarray, h: float) -> float:
    """
    Finite differences over the entries of `target`, which is modified in place and restored
    """
    saved = target.copy()

    def f(theta: np.ndarray) -> float:
        target[...] = theta.reshape(target.shape)
        value = objective()
        target[...] = saved
        return value

    return grad_check(f, analytic, saved.ravel(), h)


def check_blocks(name: str, objective: Callable[[], float], blocks: Params, analytic: Params,
                 h: float = 1e-5) -> GradCheckResult:
    result = GradCheckResult(name=name)
    for block, target in blocks.items():
        result.errors[block] = _check_block(objective, target, analytic[block], h)
        logging.info(f"grad check {name} / {block}: max relative error {result.errors[block]:.3e}")
    return result


def check_model(model: ModelGraph, batch: Batch, labels: np.ndarray, seed: int = 0,
                h: float = 1e-5) -> GradCheckResult:
    """
    Gradient check of the mean BCE of a full graph; dropout masks are fixed by re-seeding every evaluation.
    The PAD embedding row is frozen and therefore excluded.
    """
    labels = np.asarray(labels, dtype=np.float64)

    def objective() -> float:
        _, cache = forward_batch(model, batch, training=True, rng=SeededRng(seed))
        return bce_loss_from_logits(cache.logits, labels)

    probabilities, cache = forward_batch(model, batch, training=True, rng=SeededRng(seed))
    grads = backward_batch(model, cache, labels)
    blocks, analytic = OrderedDict(), OrderedDict()
    for block, value in model.parameters().items():
        if block == 'embedding.E':
            blocks[block], analytic[block] = value[1:], grads[block][1:]
        else:
            blocks[block], analytic[block] = value, grads[block]
    return check_blocks(model.scenario.value, objective, blocks, analytic, h)


def micro_batch(rng: SeededRng, n_clinical: int = MICRO_CLINICAL) -> Batch:
    ids = np.zeros((MICRO_BATCH, MICRO_STEPS), dtype=np.int64)
    lengths = np.array([MICRO_STEPS, 3], dtype=np.int64)
    for row, length in enumerate(lengths):
        ids[row, :length] = rng.generator.integers(1, MICRO_VOCAB, size=length)
    return Batch(ids=ids, lengths=lengths, clinical=rng.normal(0.0, 1.0, (MICRO_BATCH, n_clinical)))


def check_scenario(tag: ScenarioTag, seed: int = 0, h: float = 1e-5,
                   config: Optional[TrainingConfig] = None) -> GradCheckResult:
    config = TrainingConfig.micro() if config is None else config
    rng = SeededRng(seed)
    n_clinical = MICRO_CLINICAL if tag.uses_clinical else 0
    model = build_model(tag, MICRO_VOCAB, n_clinical, config, rng)
    batch = micro_batch(rng, n_clinical)
    labels = np.array([1.0, 0.0])
    return check_model(model, batch, labels, seed=seed + 1, h=h)


def _sequence_objective(forward: Callable[[], np.ndarray], upstream: np.ndarray) -> Callable[[], float]:
    return lambda: float(np.sum(forward() * upstream))


def check_layers(seed: int = 0, h: float = 1e-5) -> List[GradCheckResult]:
    """
    Every layer kind on a micro instance, objective sum(output * R) for a fixed random R;
    parameters and the layer input are both checked
    """
    rng = SeededRng(seed)
    d, H, F, w = 4, 3, 2, 2
    lengths = np.array([MICRO_STEPS, 1])
    dropout = DropoutSpec(0.2, 0.2)
    results = []

    embedding = EmbeddingLayer.create(MICRO_VOCAB, d, rng)
    ids = np.array([[3, 4, 3, 7, 9], [2, 0, 0, 0, 0]])
    R = rng.normal(0.0, 1.0, (MICRO_BATCH, MICRO_STEPS, d))
    _, cache = embedding.forward(ids, lengths)
    grads, _ = embedding.backward(cache, R)
    results.append(check_blocks('embedding', _sequence_objective(lambda: embedding.forward(ids, lengths)[0], R),
                                OrderedDict(E=embedding.E[1:]), OrderedDict(E=grads['E'][1:]), h))

    X = rng.normal(0.0, 1.0, (MICRO_BATCH, MICRO_STEPS, d))
    cell = LstmCell.create(d, H, rng)
    R_seq = rng.normal(0.0, 1.0, (MICRO_BATCH, MICRO_STEPS, H))
    R_last = rng.normal(0.0, 1.0, (MICRO_BATCH, H))

    def lstm_objective() -> float:
        hs, h_last, _ = cell.forward(X, lengths, dropout, SeededRng(seed + 1), True)
        return float(np.sum(hs * R_seq) + np.sum(h_last * R_last))

    _, _, cache = cell.forward(X, lengths, dropout, SeededRng(seed + 1), True)
    grads, dX = cell.backward(cache, R_seq, R_last)
    results.append(check_blocks('lstm', lstm_objective, OrderedDict(list(cell.parameters().items()) + [('X', X)]),
                                OrderedDict(list(grads.items()) + [('X', dX)]), h))

    encoders = [('bilstm', BiLstmEncoder.create(d, H, rng)), ('lstm_encoder', LstmEncoder.create(d, H, rng)),
                ('conv1d', Conv1dEncoder.create(d, w, F, rng))]
    for name, encoder in encoders:
        R_out = rng.normal(0.0, 1.0, (MICRO_BATCH, encoder.output_size))

        def encoder_forward(enc=encoder):
            return enc.forward(X, lengths, dropout, SeededRng(seed + 2), True)[0]

        _, cache = encoder.forward(X, lengths, dropout, SeededRng(seed + 2), True)
        grads, dX = encoder.backward(cache, R_out)
        results.append(check_blocks(name, _sequence_objective(encoder_forward, R_out),
                                    OrderedDict(list(encoder.parameters().items()) + [('X', X)]),
                                    OrderedDict(list(grads.items()) + [('X', dX)]), h))

    x = rng.normal(0.0, 1.0, (MICRO_BATCH, 5))
    for activation in DenseLayer.ACTIVATIONS:
        dense = DenseLayer.create(5, 3, activation, rng)
        R_out = rng.normal(0.0, 1.0, (MICRO_BATCH, 3))
        _, cache = dense.forward(x)
        grads, dx = dense.backward(cache, R_out)
        results.append(check_blocks(f"dense_{activation}",
                                    _sequence_objective(lambda layer=dense: layer.forward(x)[0], R_out),
                                    OrderedDict(list(dense.parameters().items()) + [('x', x)]),
                                    OrderedDict(list(grads.items()) + [('x', dx)]), h))
    return results


def run_gradchecks(tags: Sequence[ScenarioTag], seed: int = 0, h: float = 1e-5,
                   include_layers: bool = True) -> List[GradCheckResult]:
    results = check_layers(seed, h) if include_layers else []
    results += [check_scenario(tag, seed, h) for tag in tags]
    for result in results:
        logging.info(f"{result}")
    return results
