#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging

from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Optional, Tuple

import numpy as np

from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_exceptions import ConfigurationError, ContractViolation, ShapeError
from mmrisk.mm_layers import BiLstmEncoder, Cache, Conv1dEncoder, DenseLayer, DropoutSpec, EmbeddingLayer, \
    LstmEncoder, Params, concat_backward, concat_fuse, substitute_empty_reports
from mmrisk.mm_numeric import SeededRng, bce_logit_gradient


class ScenarioTag(Enum):
    V_NN = 'v-nn'
    T_BILSTM = 't-bilstm'
    MI_CNN = 'mi-cnn'
    MI_LSTM = 'mi-lstm'
    MI_BILSTM = 'mi-bilstm'

    @property
    def index(self) -> int:
        return list(ScenarioTag).index(self)

    @property
    def uses_text(self) -> bool:
        return self is not ScenarioTag.V_NN

    @property
    def uses_clinical(self) -> bool:
        return self is not ScenarioTag.T_BILSTM

    @property
    def recurrent(self) -> bool:
        return self in (ScenarioTag.T_BILSTM, ScenarioTag.MI_LSTM, ScenarioTag.MI_BILSTM)

    @staticmethod
    def from_name(name: str) -> 'ScenarioTag':
        normalized = name.strip().lower().replace('_', '-')
        for tag in ScenarioTag:
            if tag.value == normalized:
                return tag
        raise ConfigurationError(f"Unknown scenario `{name}`, choose one of: {[t.value for t in ScenarioTag]}")

    @staticmethod
    def from_index(index: int) -> 'ScenarioTag':
        tags = list(ScenarioTag)
        if not 0 <= index < len(tags):
            raise ConfigurationError(f"Scenario index {index} out of range")
        return tags[index]


@dataclass
class Batch:
    """
    Encoded reports (B, T) with lengths (B,) and clinical vectors (B, c); either part may be unused
    """
    ids: np.ndarray
    lengths: np.ndarray
    clinical: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        self.clinical = np.asarray(self.clinical, dtype=np.float64)
        if self.clinical.ndim == 1:
            self.clinical = self.clinical.reshape(-1, 0) if self.clinical.size == 0 else self.clinical[None]

    def __len__(self):
        return self.clinical.shape[0] if self.clinical.shape[0] else self.ids.shape[0]

    def __repr__(self):
        return f"Batch(size={len(self)}, max_len={self.ids.shape[1] if self.ids.ndim == 2 else 0}, " \
               f"n_clinical={self.clinical.shape[1]})"

    def take(self, rows: np.ndarray) -> 'Batch':
        return Batch(ids=self.ids[rows], lengths=self.lengths[rows], clinical=self.clinical[rows])


@dataclass
class ForwardCache:
    model: Any
    step: int
    probabilities: np.ndarray
    logits: Optional[np.ndarray] = None
    embedding: Optional[Cache] = None
    encoder: Optional[Cache] = None
    text_width: int = 0
    head: List[Cache] = field(default_factory=list)


class ModelGraph:
    """
    Optional text path (embedding + encoder), parameter-free concatenation with the clinical vector,
    then a stack of dense layers ending in one sigmoid unit
    """

    def __init__(self, scenario: ScenarioTag, head: List[DenseLayer], n_clinical: int,
                 embedding: Optional[EmbeddingLayer] = None, encoder=None,
                 dropout: DropoutSpec = DropoutSpec()):
        self.scenario = scenario
        self.embedding = embedding
        self.encoder = encoder
        self.head = head
        self.n_clinical = n_clinical
        self.dropout = dropout
        # bumped after every parameter update; caches from earlier steps are stale
        self.step = 0

    def __repr__(self):
        return f"ModelGraph(scenario={self.scenario.value}, parameters={self.parameter_count()}, " \
               f"uses_text={self.uses_text}, n_clinical={self.n_clinical})"

    @property
    def uses_text(self) -> bool:
        return self.encoder is not None

    @property
    def uses_clinical(self) -> bool:
        return self.n_clinical > 0

    def named_layers(self) -> List[Tuple[str, Any]]:
        layers = []
        if self.uses_text:
            layers += [('embedding', self.embedding), ('encoder', self.encoder)]
        layers += [(f"dense{idx}", layer) for idx, layer in enumerate(self.head)]
        return layers

    def parameters(self) -> Params:
        params = OrderedDict()
        for prefix, layer in self.named_layers():
            for name, value in layer.parameters().items():
                params[f"{prefix}.{name}"] = value
        return params

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def mark_updated(self):
        if self.embedding is not None:
            self.embedding.zero_pad_row()
        self.step += 1


def expected_parameter_count(tag: ScenarioTag, vocab_size: int, n_clinical: int, config: TrainingConfig) -> int:
    """
    Closed-form parameter counts, see README.md
    """
    d, H, u = config.embedding_dim, config.lstm_hidden, config.dense_units
    head_tail = u * (u + 1) + (u + 1)
    if tag is ScenarioTag.V_NN:
        return u * (n_clinical + 1) + head_tail
    if tag is ScenarioTag.T_BILSTM:
        return vocab_size * d + 8 * H * (d + H + 1) + (2 * H + 1)
    if tag is ScenarioTag.MI_BILSTM:
        return vocab_size * d + 8 * H * (d + H + 1) + u * (2 * H + n_clinical + 1) + head_tail
    if tag is ScenarioTag.MI_LSTM:
        return vocab_size * d + 4 * H * (d + H + 1) + u * (H + n_clinical + 1) + head_tail
    F, w = config.cnn_filters, config.cnn_width
    return vocab_size * d + F * (w * d + 1) + u * (F + n_clinical + 1) + head_tail


def build_model(tag: ScenarioTag, vocab_size: int, n_clinical: int, config: TrainingConfig,
                rng: SeededRng) -> ModelGraph:
    if tag.uses_text and vocab_size < 2:
        raise ConfigurationError(f"Vocabulary must hold at least PAD and UNK, got size {vocab_size}")
    if n_clinical < 0:
        raise ConfigurationError(f"n_clinical must be >= 0, got {n_clinical}")
    if tag.uses_clinical and n_clinical == 0:
        raise ConfigurationError(f"Scenario {tag.value} needs clinical inputs, got n_clinical=0")
    if not tag.uses_clinical:
        n_clinical = 0

    d, H, u = config.embedding_dim, config.lstm_hidden, config.dense_units
    embedding, encoder = None, None
    dropout = DropoutSpec()
    if tag.uses_text:
        embedding = EmbeddingLayer.create(vocab_size, d, rng)
        if tag in (ScenarioTag.T_BILSTM, ScenarioTag.MI_BILSTM):
            encoder = BiLstmEncoder.create(d, H, rng)
        elif tag is ScenarioTag.MI_LSTM:
            encoder = LstmEncoder.create(d, H, rng)
        else:
            if config.cnn_width > config.max_len:
                raise ConfigurationError(f"cnn_width {config.cnn_width} exceeds max_len {config.max_len}")
            encoder = Conv1dEncoder.create(d, config.cnn_width, config.cnn_filters, rng)
        if tag.recurrent:
            dropout = DropoutSpec(config.dropout, config.recurrent_dropout)
            logging.info(f"{tag.value}: recurrent encoder uses the gated four-gate LSTM cell "
                         f"(input, forget, output, candidate), not the plain sigmoid recurrence")

    fused_width = (encoder.output_size if encoder is not None else 0) + n_clinical
    if tag is ScenarioTag.T_BILSTM:
        head = [DenseLayer.create(fused_width, 1, 'sigmoid', rng)]
    else:
        head = [DenseLayer.create(fused_width, u, 'relu', rng),
                DenseLayer.create(u, u, 'relu', rng),
                DenseLayer.create(u, 1, 'sigmoid', rng)]
    model = ModelGraph(tag, head, n_clinical, embedding=embedding, encoder=encoder, dropout=dropout)
    logging.info(f"built {model}")
    return model


def _text_steps(batch: Batch, lengths: np.ndarray) -> int:
    steps = int(max(lengths.max(), 1))
    return min(steps, batch.ids.shape[1])


def forward_batch(model: ModelGraph, batch: Batch, training: bool,
                  rng: SeededRng) -> Tuple[np.ndarray, Optional[ForwardCache]]:
    """
    :return: probability per example (B,), and the forward cache when `training`
    """
    n = len(batch)
    if model.uses_clinical and batch.clinical.shape != (n, model.n_clinical):
        raise ShapeError(f"Model {model.scenario.value} expects clinical inputs ({n}, {model.n_clinical}), "
                         f"got {batch.clinical.shape}")
    cache = ForwardCache(model=model, step=model.step, probabilities=np.zeros(n))
    parts = []
    if model.uses_text:
        if batch.ids.ndim != 2 or batch.ids.shape[0] != n or batch.lengths.shape != (n,):
            raise ShapeError(f"Model {model.scenario.value} expects ids ({n}, T) and lengths ({n},), "
                             f"got {batch.ids.shape} and {batch.lengths.shape}")
        ids, lengths, _ = substitute_empty_reports(batch.ids, batch.lengths)
        ids = ids[:, :_text_steps(batch, lengths)]
        X, cache.embedding = model.embedding.forward(ids, lengths)
        text, cache.encoder = model.encoder.forward(X, lengths, model.dropout, rng, training)
        cache.text_width = text.shape[1]
        parts.append(text)
    if model.uses_clinical:
        parts.append(batch.clinical)
    a = concat_fuse(parts[0], parts[1]) if len(parts) == 2 else parts[0]
    for layer in model.head:
        a, layer_cache = layer.forward(a)
        cache.head.append(layer_cache)
    probabilities = a[:, 0]
    cache.probabilities = probabilities
    cache.logits = cache.head[-1]['z'][:, 0]
    return probabilities, (cache if training else None)


def backward_batch(model: ModelGraph, cache: Optional[ForwardCache], labels: np.ndarray) -> Params:
    """
    Gradients of the mean BCE loss w.r.t. every parameter, keyed like `model.parameters()`
    """
    if cache is None:
        raise ContractViolation("backward_batch needs the cache of a training-mode forward_batch!")
    if cache.model is not model:
        raise ContractViolation("Forward cache belongs to a different model!")
    if cache.step != model.step:
        raise ContractViolation(f"Stale forward cache: produced at step {cache.step}, model is at step {model.step}")
    labels = np.asarray(labels, dtype=np.float64).ravel()
    grads = OrderedDict()
    upstream = bce_logit_gradient(cache.probabilities, labels)[:, None]
    head_grads = []
    for idx in reversed(range(len(model.head))):
        layer_grads, upstream = model.head[idx].backward(cache.head[idx], upstream,
                                                         wrt_logits=(idx == len(model.head) - 1))
        head_grads.append((idx, layer_grads))
    if model.uses_text:
        if model.uses_clinical:
            d_text, _ = concat_backward(upstream, cache.text_width)
        else:
            d_text = upstream
        enc_grads, dX = model.encoder.backward(cache.encoder, d_text)
        emb_grads, _ = model.embedding.backward(cache.embedding, dX)
        for name, value in emb_grads.items():
            grads[f"embedding.{name}"] = value
        for name, value in enc_grads.items():
            grads[f"encoder.{name}"] = value
    for idx, layer_grads in sorted(head_grads, key=lambda x: x[0]):
        for name, value in layer_grads.items():
            grads[f"dense{idx}.{name}"] = value
    return grads


def predict(model: ModelGraph, batch: Batch, batch_size: int = 256) -> np.ndarray:
    """
    Inference-mode probabilities, evaluated in chunks
    """
    rng = SeededRng(0)
    n = len(batch)
    scores = np.zeros(n)
    for start in range(0, n, batch_size):
        rows = np.arange(start, min(start + batch_size, n))
        scores[rows], _ = forward_batch(model, batch.take(rows), training=False, rng=rng)
    return scores

