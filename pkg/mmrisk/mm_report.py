#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026

import json
import logging
import os
import os.path

from typing import Any, Dict, Mapping

import pandas as pd
from jinja2 import Environment, FileSystemLoader

from mmrisk.mm_config import TrainingConfig, provenance
from mmrisk.mm_exceptions import UndefinedMetricError
from mmrisk.mm_metrics import SUMMARY_METRICS, roc_points
from mmrisk.mm_models import ScenarioTag
from mmrisk.mm_training import ScenarioResult

TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), 'templates')
CV_SUMMARY_TEMPLATE = 'cv_summary.jinja2'


def dump_json(payload: Dict[str, Any], path: str):
    with open(path, 'w') as fd:
        json.dump(payload, fd, indent=2, sort_keys=True)
        fd.write('\n')


def cv_report(results: Mapping[ScenarioTag, ScenarioResult], config: TrainingConfig) -> Dict[str, Any]:
    report = provenance(config.seed, config)
    report['scenarios'] = {tag.value: result.to_dict() for tag, result in results.items()}
    return report


def roc_frame(result: ScenarioResult) -> pd.DataFrame:
    scores, labels = result.pooled()
    fpr, tpr, thresholds = roc_points(scores, labels)
    return pd.DataFrame({'fpr': fpr, 'tpr': tpr, 'threshold': thresholds})


def predictions_frame(results: Mapping[ScenarioTag, ScenarioResult]) -> pd.DataFrame:
    rows = []
    for tag, result in results.items():
        for fold in result.folds:
            for patient_id, label, score in zip(fold.patient_ids, fold.labels, fold.scores):
                rows.append({'scenario': tag.value, 'fold': fold.fold, 'patient_id': patient_id,
                             'label': int(label), 'score': float(score)})
    return pd.DataFrame(rows, columns=['scenario', 'fold', 'patient_id', 'label', 'score'])


def _mean_sd(summary: Dict[str, Any], folds: int) -> str:
    if summary['mean'] is None:
        return 'undefined'
    cell = f"{summary['mean']:.3f} ± {summary['sd']:.3f}"
    if summary['n_defined'] < folds:
        cell += f" ({summary['n_defined']}/{folds} folds)"
    return cell


def render_summary(results: Mapping[ScenarioTag, ScenarioResult], config: TrainingConfig,
                   n: int, positives: int) -> str:
    rows, undefined = [], []
    for tag, result in results.items():
        summary = result.summary()
        row = {'scenario': tag.value}
        row.update({metric: _mean_sd(summary[metric], len(result.folds)) for metric in SUMMARY_METRICS})
        rows.append(row)
        undefined += [f"{tag.value}/{fold.fold} ({', '.join(fold.report.undefined)})"
                      for fold in result.folds if fold.report.undefined]
    params = provenance(config.seed, config)
    params.update({'folds': config.folds, 'stratified': config.stratified, 'n': n, 'positives': positives,
                   'rows': rows, 'metrics': SUMMARY_METRICS, 'undefined': undefined})
    environment = Environment(loader=FileSystemLoader(TEMPLATE_DIR), keep_trailing_newline=True)
    return environment.get_template(CV_SUMMARY_TEMPLATE).render(params)


def write_cv_outputs(results: Mapping[ScenarioTag, ScenarioResult], config: TrainingConfig, out_path: str,
                     n: int, positives: int) -> Dict[str, str]:
    """
    report.json at `out_path`; ROC points, held-out predictions and the markdown summary next to it
    """
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    written = {'report': out_path}
    dump_json(cv_report(results, config), out_path)
    for tag, result in results.items():
        roc_path = os.path.join(out_dir, f"roc_{tag.value}.csv")
        try:
            roc_frame(result).to_csv(roc_path, index=False)
            written[f"roc_{tag.value}"] = roc_path
        except UndefinedMetricError as err:
            logging.warning(f"no ROC points for {tag.value}: {err}")
    written['predictions'] = os.path.join(out_dir, 'predictions.csv')
    predictions_frame(results).to_csv(written['predictions'], index=False)
    written['summary'] = os.path.join(out_dir, 'summary.md')
    with open(written['summary'], 'w', encoding='utf-8') as fd:
        fd.write(render_summary(results, config, n, positives))
    logging.info(f"cross-validation outputs written: {sorted(written.values())}")
    return written
