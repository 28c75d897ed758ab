#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging
import os.path
import sys

from mmrisk.mm_checkpoint import load_checkpoint, save_checkpoint
from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_data import build_dataset, synthesize_cohort
from mmrisk.mm_metrics import evaluate
from mmrisk.mm_models import ScenarioTag, predict
from mmrisk.mm_text import load_stopwords, make_stemmer
from mmrisk.mm_training import fit_scenario, kfold_split


if __name__ == '__main__':
    logging.basicConfig(
        level=logging.INFO,
        format='[%(asctime)s.%(msecs)03d]: %(message)s',
        datefmt='%H:%M:%S',
        handlers=[
            logging.FileHandler(f'{os.path.basename(__file__)}.log', mode='w'),
            logging.StreamHandler(sys.stdout),
        ])
    config = TrainingConfig(embedding_dim=16, lstm_hidden=8, dense_units=16, max_len=64, epochs=3)
    cohort = synthesize_cohort(n=300, seed=1)
    dataset = build_dataset(cohort.records, cohort.reports, load_stopwords(),
                            make_stemmer(config.stemmer)).canonical()
    plan = kfold_split(len(dataset), config.folds, config.seed)
    train_ds, test_ds = dataset.subset(plan.train_indices(0)), dataset.subset(plan.test_indices(0))
    model, pipeline, _ = fit_scenario(ScenarioTag.MI_BILSTM, train_ds, config, config.seed)

    checkpoint_file = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'mi-bilstm.ckpt')
    save_checkpoint(checkpoint_file, model, pipeline, config, config.seed)
    checkpoint = load_checkpoint(checkpoint_file)
    scores = predict(checkpoint.model, checkpoint.pipeline.batch(test_ds))
    print(f"held-out fold 0: {evaluate(scores, test_ds.labels, config.threshold)}")
