#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging
import time

from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_data import CLINICAL_FEATURES, Dataset, FeaturePipeline
from mmrisk.mm_exceptions import ConfigurationError, NonFiniteError, ShapeError, UndefinedMetricError
from mmrisk.mm_metrics import MetricsReport, evaluate, summarize
from mmrisk.mm_models import Batch, ModelGraph, ScenarioTag, backward_batch, build_model, forward_batch, predict
from mmrisk.mm_numeric import SeededRng, bce_loss_from_logits
from mmrisk.mm_layers import Params


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __repr__(self):
        return f"AdamState(t={self.t}, blocks={len(self.m)}, beta1={self.beta1}, beta2={self.beta2})"


def adam_step(params: Params, grads: Params, state: AdamState, lr: float) -> Tuple[Params, AdamState]:
    """
    Bias-corrected Adam update, applied in place to the parameter arrays
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"Gradient for unknown parameter block `{name}`")
        if params[name].shape != g.shape:
            raise ShapeError(f"Gradient of shape {g.shape} does not match parameter `{name}` {params[name].shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass(frozen=True)
class FoldPlan:
    folds: Tuple[np.ndarray, ...]
    seed: int
    stratified: bool = False

    def __repr__(self):
        return f"FoldPlan(k={self.k}, sizes={[len(f) for f in self.folds]}, seed={self.seed}, " \
               f"stratified={self.stratified})"

    @property
    def k(self) -> int:
        return len(self.folds)

    @property
    def n(self) -> int:
        return int(sum(len(f) for f in self.folds))

    def test_indices(self, fold: int) -> np.ndarray:
        return np.sort(self.folds[fold])

    def train_indices(self, fold: int) -> np.ndarray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))


def kfold_split(n: int, k: int = 5, seed: int = 0, labels: Optional[Sequence[int]] = None,
                stratified: bool = False) -> FoldPlan:
    """
    Seeded shuffle, then contiguous chunks whose sizes differ by at most one.
    The stratified variant orders the shuffled positives before the shuffled negatives and deals
    them round-robin, so every fold gets the same class counts up to one.
    """
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if n < k:
        raise ConfigurationError(f"Cannot split {n} examples into {k} folds")
    rng = SeededRng(seed)
    if stratified:
        if labels is None or len(labels) != n:
            raise ConfigurationError("Stratified split needs one label per example")
        labels = np.asarray(labels)
        positives = np.flatnonzero(labels == 1)
        negatives = np.flatnonzero(labels != 1)
        order = np.concatenate([positives[rng.permutation(positives.size)],
                                negatives[rng.permutation(negatives.size)]])
        folds = tuple(order[i::k] for i in range(k))
    else:
        order = rng.permutation(n)
        folds = tuple(np.array_split(order, k))
    return FoldPlan(folds=tuple(np.asarray(f, dtype=np.int64) for f in folds), seed=seed, stratified=stratified)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid: Optional[MetricsReport] = None
    wall_time: float = 0.0

    def __repr__(self):
        valid_str = '' if self.valid is None else f", valid_auc={self.valid.auc}"
        return f"EpochLog(epoch={self.epoch}, train_loss={self.train_loss:.6f}{valid_str})"


def _non_finite_block(arrays: Params) -> Optional[str]:
    return next((name for name, value in arrays.items() if not np.all(np.isfinite(value))), None)


def train(model: ModelGraph, train_batch: Batch, train_labels: Sequence[int], config: TrainingConfig,
          rng: SeededRng, valid: Optional[Tuple[Batch, Sequence[int]]] = None) -> Tuple[ModelGraph, List[EpochLog]]:
    """
    Minibatch Adam on mean BCE, evaluated from the output logits. Each epoch visits a fresh permutation of the training rows,
    the final partial batch is kept.
    """
    labels = np.asarray(train_labels, dtype=np.float64)
    n = len(train_batch)
    if n == 0:
        raise ConfigurationError("Training set is empty!")
    if labels.shape != (n,):
        raise ShapeError(f"Expected {n} training labels, got shape {labels.shape}")
    params = model.parameters()
    state = AdamState()
    logs = []
    for epoch in range(config.epochs):
        start_time = time.monotonic()
        order = rng.permutation(n)
        loss_sum = 0.0
        for batch_idx, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start:start + config.batch_size]
            _, cache = forward_batch(model, train_batch.take(rows), training=True, rng=rng)
            loss = bce_loss_from_logits(cache.logits, labels[rows])
            if not np.isfinite(loss):
                block = _non_finite_block(params) or 'output'
                raise NonFiniteError(f"Non-finite loss at epoch {epoch}, batch {batch_idx}, block `{block}`")
            grads = backward_batch(model, cache, labels[rows])
            block = _non_finite_block(grads)
            if block is not None:
                raise NonFiniteError(f"Non-finite gradient at epoch {epoch}, batch {batch_idx}, block `{block}`")
            adam_step(params, grads, state, config.learning_rate)
            model.mark_updated()
            loss_sum += loss * len(rows)
        valid_report = None
        if valid is not None:
            valid_report = evaluate(predict(model, valid[0]), valid[1], config.threshold)
        log = EpochLog(epoch=epoch, train_loss=loss_sum / n, valid=valid_report,
                       wall_time=time.monotonic() - start_time)
        logging.info(f"{model.scenario.value}: {log}")
        logs.append(log)
    return model, logs


@dataclass
class FoldResult:
    scenario: ScenarioTag
    fold: int
    report: MetricsReport
    epoch_losses: List[float]
    patient_ids: List[str]
    labels: np.ndarray
    scores: np.ndarray

    def __repr__(self):
        return f"FoldResult(scenario={self.scenario.value}, fold={self.fold}, report={self.report})"


@dataclass
class ScenarioResult:
    scenario: ScenarioTag
    folds: List[FoldResult]

    def __repr__(self):
        return f"ScenarioResult(scenario={self.scenario.value}, folds={len(self.folds)})"

    @property
    def reports(self) -> List[MetricsReport]:
        return [f.report for f in self.folds]

    def summary(self) -> Dict[str, Dict[str, float]]:
        return summarize(self.reports)

    def pooled(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.concatenate([f.scores for f in self.folds]), np.concatenate([f.labels for f in self.folds])

    def to_dict(self) -> Dict[str, Any]:
        return {'folds': [f.report.to_dict() for f in self.folds],
                'summary': self.summary(),
                'epoch_losses': [f.epoch_losses for f in self.folds]}


def fold_seed(seed: int, fold: int) -> int:
    return int(seed) + int(fold)


def fit_scenario(tag: ScenarioTag, train_ds: Dataset, config: TrainingConfig,
                 seed: int) -> Tuple[ModelGraph, FeaturePipeline, List[EpochLog]]:
    """
    Fit the fold pipeline and a fresh model on training rows only
    """
    rng = SeededRng(seed)
    pipeline = FeaturePipeline.fit(train_ds, min_count=config.min_count, max_len=config.max_len)
    model = build_model(tag, pipeline.vocabulary.size, len(CLINICAL_FEATURES), config, rng)
    model, logs = train(model, pipeline.batch(train_ds), train_ds.labels, config, rng)
    return model, pipeline, logs


def run_fold(task: Tuple[ScenarioTag, int, Dataset, FoldPlan, TrainingConfig]) -> FoldResult:
    tag, fold, dataset, plan, config = task
    train_ds = dataset.subset(plan.train_indices(fold))
    test_ds = dataset.subset(plan.test_indices(fold))
    model, pipeline, logs = fit_scenario(tag, train_ds, config, fold_seed(config.seed, fold))
    scores = predict(model, pipeline.batch(test_ds))
    report = evaluate(scores, test_ds.labels, config.threshold)
    if not report.auc_defined:
        logging.warning(f"{tag.value} fold {fold}: AUC undefined, held-out fold has a single class")
    logging.info(f"{tag.value} fold {fold}: {report}")
    return FoldResult(scenario=tag, fold=fold, report=report, epoch_losses=[log.train_loss for log in logs],
                      patient_ids=list(test_ds.patient_ids), labels=test_ds.labels, scores=scores)


def cross_validate(tags: Sequence[ScenarioTag], dataset: Dataset, config: TrainingConfig,
                   jobs: int = 1) -> Dict[ScenarioTag, ScenarioResult]:
    """
    k-fold cross-validation of every scenario over one shared fold plan, so fold results are paired.
    Rows are put in patient-id order first; folds run in a worker pool when jobs > 1.
    """
    dataset = dataset.canonical()
    n_pos = dataset.positives
    if n_pos == 0 or n_pos == len(dataset):
        raise UndefinedMetricError(f"Cross-validation needs both classes, got {n_pos} positive of {len(dataset)}")
    plan = kfold_split(len(dataset), config.folds, config.seed, labels=dataset.labels, stratified=config.stratified)
    logging.info(f"{plan}")
    tasks = [(tag, fold, dataset, plan, config) for tag in tags for fold in range(plan.k)]
    if jobs > 1:
        with Pool(processes=jobs) as pool:
            fold_results = pool.map(run_fold, tasks)
    else:
        fold_results = [run_fold(task) for task in tasks]
    results = {}
    for tag in tags:
        folds = sorted((r for r in fold_results if r.scenario is tag), key=lambda r: r.fold)
        results[tag] = ScenarioResult(scenario=tag, folds=folds)
    return results
