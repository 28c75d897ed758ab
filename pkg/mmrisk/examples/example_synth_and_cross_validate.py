#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import logging
import os.path
import sys

from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_data import build_dataset, synthesize_cohort
from mmrisk.mm_models import ScenarioTag
from mmrisk.mm_text import load_stopwords, make_stemmer
from mmrisk.mm_training import cross_validate


if __name__ == '__main__':
    logging.basicConfig(
        level=logging.WARNING,
        format='[%(asctime)s.%(msecs)03d]: %(message)s',
        datefmt='%H:%M:%S',
        handlers=[
            logging.FileHandler(f'{os.path.basename(__file__)}.log', mode='w'),
            logging.StreamHandler(sys.stdout),
        ])
    cohort = synthesize_cohort(n=400, seed=0)
    config = TrainingConfig(embedding_dim=16, lstm_hidden=8, cnn_filters=8, dense_units=16, max_len=64,
                            epochs=3, stratified=True)  # <-- small dimensions, the defaults take hours on 5603 patients
    dataset = build_dataset(cohort.records, cohort.reports, load_stopwords(), make_stemmer(config.stemmer))
    results = cross_validate(list(ScenarioTag), dataset, config)
    for tag, result in results.items():
        summary = result.summary()
        print(f"{tag.value:10s}: AUC {summary['auc']['mean']:.3f} ± {summary['auc']['sd']:.3f}, "
              f"misclassification {summary['misclassification_rate']['mean']:.3f}")
